//! Forward-mode derivatives of scalar functions of real vectors.
//!
//! Everything is built on one mechanism: truncated Taylor jets of order up to
//! four, seeded along directions of interest. Gradients are assembled from n
//! first-order passes, dense Hessians from pairwise second-order passes,
//! Hessian-vector products from a polarisation identity, and the fourth-order
//! directional coefficients feed the Student-t tail estimator. No reverse
//! mode, no hand-derived derivatives.

mod jet;
pub mod polygamma;

pub use jet::{AdScalar, Jet};

use crate::error::{Error, Result};
use rayon::prelude::*;

/// A pure scalar function of a real vector, written once generically over the
/// scalar type. Implementors must be deterministic and side-effect free.
pub trait ScalarFn: Send + Sync {
    fn dim(&self) -> usize;
    fn call<S: AdScalar>(&self, x: &[S]) -> S;
}

/// Object-safe view of a [`ScalarFn`]: one entry point per supported Taylor
/// order, so the engine can hold models behind `dyn`.
pub trait DiffFunction: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> f64;
    fn eval_jet1(&self, x: &[Jet<2>]) -> Jet<2>;
    fn eval_jet2(&self, x: &[Jet<3>]) -> Jet<3>;
    fn eval_jet3(&self, x: &[Jet<4>]) -> Jet<4>;
    fn eval_jet4(&self, x: &[Jet<5>]) -> Jet<5>;
}

impl<T: ScalarFn> DiffFunction for T {
    fn dim(&self) -> usize {
        ScalarFn::dim(self)
    }
    fn eval(&self, x: &[f64]) -> f64 {
        self.call(x)
    }
    fn eval_jet1(&self, x: &[Jet<2>]) -> Jet<2> {
        self.call(x)
    }
    fn eval_jet2(&self, x: &[Jet<3>]) -> Jet<3> {
        self.call(x)
    }
    fn eval_jet3(&self, x: &[Jet<4>]) -> Jet<4> {
        self.call(x)
    }
    fn eval_jet4(&self, x: &[Jet<5>]) -> Jet<5> {
        self.call(x)
    }
}

/// Taylor coefficients of `f(x + t v)` for one seeded direction, up to the
/// jet order chosen by the caller.
fn pass2(f: &dyn DiffFunction, x: &[f64], dir: impl Fn(usize) -> f64) -> Jet<3> {
    let seeded: Vec<Jet<3>> = x
        .iter()
        .enumerate()
        .map(|(j, &xj)| Jet::variable(xj, dir(j)))
        .collect();
    f.eval_jet2(&seeded)
}

/// Gradient of `f` at `x`, one first-order pass per coordinate.
pub fn gradient(f: &dyn DiffFunction, x: &[f64]) -> Result<Vec<f64>> {
    debug_assert_eq!(x.len(), f.dim());
    let mut seeded: Vec<Jet<2>> = x.iter().map(|&xj| Jet::constant(xj)).collect();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        seeded[i].c[1] = 1.0;
        let y = f.eval_jet1(&seeded);
        seeded[i].c[1] = 0.0;
        if !y.is_finite() {
            return Err(Error::NonFiniteDerivative { index: i });
        }
        g[i] = y.c[1];
    }
    Ok(g)
}

/// Hessian-vector product `(∇²f(x))·v` from second-order jets via the
/// polarisation identity `(Hv)_i = [c2(v + e_i) - c2(v - e_i)] / 2`.
pub fn hvp(f: &dyn DiffFunction, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    debug_assert_eq!(x.len(), f.dim());
    debug_assert_eq!(x.len(), v.len());
    let mut out = vec![0.0; x.len()];
    for i in 0..x.len() {
        let plus = pass2(f, x, |j| v[j] + if j == i { 1.0 } else { 0.0 });
        let minus = pass2(f, x, |j| v[j] - if j == i { 1.0 } else { 0.0 });
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFiniteDerivative { index: i });
        }
        out[i] = (plus.c[2] - minus.c[2]) / 2.0;
    }
    Ok(out)
}

/// Dense Hessian of `f` at `x` from n(n+1)/2 pairwise second-order passes.
/// The pairwise extraction is symmetric by construction, so the returned
/// matrix equals its own (H + H^T)/2 symmetrisation exactly.
pub fn hessian_dense(f: &dyn DiffFunction, x: &[f64]) -> Result<nalgebra::DMatrix<f64>> {
    let n = x.len();
    debug_assert_eq!(n, f.dim());
    let mut h = nalgebra::DMatrix::zeros(n, n);
    let mut diag = vec![0.0; n];
    for i in 0..n {
        let y = pass2(f, x, |j| if j == i { 1.0 } else { 0.0 });
        if !y.is_finite() {
            return Err(Error::NonFiniteDerivative { index: i });
        }
        diag[i] = 2.0 * y.c[2];
        h[(i, i)] = diag[i];
    }
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let off: Vec<Result<f64>> = if n >= 48 {
        pairs
            .par_iter()
            .map(|&(i, j)| off_entry(f, x, &diag, i, j))
            .collect()
    } else {
        pairs.iter().map(|&(i, j)| off_entry(f, x, &diag, i, j)).collect()
    };
    for (&(i, j), val) in pairs.iter().zip(off) {
        let v = val?;
        h[(i, j)] = v;
        h[(j, i)] = v;
    }
    Ok(h)
}

fn off_entry(f: &dyn DiffFunction, x: &[f64], diag: &[f64], i: usize, j: usize) -> Result<f64> {
    let y = pass2(f, x, |k| if k == i || k == j { 1.0 } else { 0.0 });
    if !y.is_finite() {
        return Err(Error::NonFiniteDerivative { index: i });
    }
    // c2 along e_i + e_j is (H_ii + 2 H_ij + H_jj) / 2
    Ok(y.c[2] - 0.5 * diag[i] - 0.5 * diag[j])
}

/// Taylor coefficients `c_0..c_order` of `t -> f(x + t v)` for a unit
/// direction `v`, so `d^r f / dt^r = r! c_r`.
pub fn directional_taylor(
    f: &dyn DiffFunction,
    x: &[f64],
    v: &[f64],
    order: usize,
) -> Result<Vec<f64>> {
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidDirection { norm });
    }
    taylor_along(f, x, v, order)
}

/// Same coefficients without the unit-norm requirement; used internally where
/// the direction scale is accounted for by the caller.
pub(crate) fn taylor_along(
    f: &dyn DiffFunction,
    x: &[f64],
    v: &[f64],
    order: usize,
) -> Result<Vec<f64>> {
    debug_assert_eq!(x.len(), f.dim());
    macro_rules! run {
        ($n:literal, $method:ident) => {{
            let seeded: Vec<Jet<$n>> = x
                .iter()
                .zip(v)
                .map(|(&xj, &vj)| Jet::variable(xj, vj))
                .collect();
            let y = f.$method(&seeded);
            if !y.is_finite() {
                return Err(Error::NonFiniteDerivative { index: 0 });
            }
            Ok(y.c.to_vec())
        }};
    }
    match order {
        1 => run!(2, eval_jet1),
        2 => run!(3, eval_jet2),
        3 => run!(4, eval_jet3),
        4 => run!(5, eval_jet4),
        _ => Err(Error::InvalidOrder { order }),
    }
}

/// Central finite-difference gradient; the independent oracle used by the
/// test suites, deliberately sharing no code with the jet path.
pub fn fd_gradient(f: &dyn DiffFunction, x: &[f64], step: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = step * (1.0 + x[i].abs());
        xp[i] = x[i] + h;
        let fp = f.eval(&xp);
        xp[i] = x[i] - h;
        let fm = f.eval(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Central finite differences of the jet gradient: the Hessian oracle.
pub fn fd_hessian(f: &dyn DiffFunction, x: &[f64], step: f64) -> Result<nalgebra::DMatrix<f64>> {
    let n = x.len();
    let mut h = nalgebra::DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let hj = step * (1.0 + x[j].abs());
        xp[j] = x[j] + hj;
        let gp = gradient(f, &xp)?;
        xp[j] = x[j] - hj;
        let gm = gradient(f, &xp)?;
        xp[j] = x[j];
        for i in 0..n {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * hj);
        }
    }
    let ht = h.transpose();
    Ok((h + ht) * 0.5)
}
