//! Whitening transforms for latent optimisation.
//!
//! Given a reference precision H0 (typically the prior precision of z given
//! θ, or a cached Hessian) with Cholesky H0 = L L^T, the transform maps
//! `w = L^T (z - z0)` so the reference density is unit Gaussian in w. The
//! factor is stored in the structure of H0, so the map stays O(d_z) for
//! banded chains and per-block for factorised models.

use crate::ad::{AdScalar, DiffFunction, Jet};
use crate::error::Result;
use crate::linalg::{StructuredCholesky, StructuredMatrix};

#[derive(Clone, Debug)]
pub struct WhiteningTransform {
    z0: Vec<f64>,
    factor: Option<StructuredCholesky>,
}

impl WhiteningTransform {
    pub fn identity(dim: usize) -> Self {
        WhiteningTransform { z0: vec![0.0; dim], factor: None }
    }

    /// Build from a reference point and a positive-definite precision.
    pub fn from_precision(z0: Vec<f64>, precision: &StructuredMatrix) -> Result<Self> {
        debug_assert_eq!(z0.len(), precision.dim());
        let factor = precision.cholesky()?;
        Ok(WhiteningTransform { z0, factor: Some(factor) })
    }

    pub fn dim(&self) -> usize {
        self.z0.len()
    }

    /// `w = L^T (z - z0)`.
    pub fn whiten(&self, z: &[f64]) -> Vec<f64> {
        let centred: Vec<f64> = z.iter().zip(&self.z0).map(|(a, b)| a - b).collect();
        match &self.factor {
            None => centred,
            Some(l) => l.mult_lt(&centred),
        }
    }

    /// `z = z0 + L^{-T} w`.
    pub fn unwhiten(&self, w: &[f64]) -> Vec<f64> {
        match &self.factor {
            None => w.iter().zip(&self.z0).map(|(a, b)| a + b).collect(),
            Some(l) => {
                let mut z = l.solve_lt(w);
                for (zi, z0i) in z.iter_mut().zip(&self.z0) {
                    *zi += z0i;
                }
                z
            }
        }
    }

    /// Jet-typed unwhitening, used to compose whitened objectives.
    pub fn unwhiten_generic<S: AdScalar>(&self, w: &[S]) -> Vec<S> {
        match &self.factor {
            None => w.iter().zip(&self.z0).map(|(a, &b)| *a + b).collect(),
            Some(l) => {
                let mut z = l.solve_lt_generic(w);
                for (zi, &z0i) in z.iter_mut().zip(&self.z0) {
                    *zi = *zi + z0i;
                }
                z
            }
        }
    }

    /// Sub-transform for one block of a block-diagonal factor.
    pub fn block(&self, sizes: &[usize], index: usize) -> Option<WhiteningTransform> {
        let lo: usize = sizes[..index].iter().sum();
        let s = sizes[index];
        let z0 = self.z0[lo..lo + s].to_vec();
        match &self.factor {
            None => Some(WhiteningTransform { z0, factor: None }),
            Some(chol) => chol.block(index).map(|f| WhiteningTransform { z0, factor: Some(f) }),
        }
    }
}

/// Outcome of preparing an optimisation start from an optional warm cache.
pub struct WarmStart {
    pub x0: Vec<f64>,
    pub whitening: WhiteningTransform,
    /// Set when a cached Hessian turned out indefinite and the prior
    /// precision was used instead.
    pub prior_fallback: bool,
}

/// Build the initial point and whitening from a cached `(zhat, H)` pair when
/// available, falling back to the conditional prior mean and prior precision.
/// The warm start only shapes the optimisation path: the reported Hessian is
/// always recomputed at the new MAP.
pub fn warm_start(
    cache: Option<(&[f64], &StructuredMatrix)>,
    prior_mean: &[f64],
    prior_precision: &StructuredMatrix,
) -> Result<WarmStart> {
    match cache {
        Some((zhat, hess)) if zhat.len() == prior_mean.len() => {
            match WhiteningTransform::from_precision(zhat.to_vec(), hess) {
                Ok(w) => Ok(WarmStart { x0: zhat.to_vec(), whitening: w, prior_fallback: false }),
                Err(_) => {
                    let w =
                        WhiteningTransform::from_precision(prior_mean.to_vec(), prior_precision)?;
                    Ok(WarmStart { x0: zhat.to_vec(), whitening: w, prior_fallback: true })
                }
            }
        }
        _ => {
            let w = WhiteningTransform::from_precision(prior_mean.to_vec(), prior_precision)?;
            Ok(WarmStart { x0: prior_mean.to_vec(), whitening: w, prior_fallback: false })
        }
    }
}

/// A `DiffFunction` viewed through a whitening transform, with an optional
/// sign flip so maximisation problems become minimisations.
pub struct WhitenedObjective<'a> {
    pub inner: &'a dyn DiffFunction,
    pub transform: &'a WhiteningTransform,
    pub negate: bool,
}

impl<'a> WhitenedObjective<'a> {
    fn apply<S: AdScalar>(&self, w: &[S], eval: impl Fn(&[S]) -> S) -> S {
        let z = self.transform.unwhiten_generic(w);
        let y = eval(&z);
        if self.negate {
            -y
        } else {
            y
        }
    }
}

impl<'a> DiffFunction for WhitenedObjective<'a> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval(&self, x: &[f64]) -> f64 {
        self.apply(x, |z| self.inner.eval(z))
    }
    fn eval_jet1(&self, x: &[Jet<2>]) -> Jet<2> {
        self.apply(x, |z| self.inner.eval_jet1(z))
    }
    fn eval_jet2(&self, x: &[Jet<3>]) -> Jet<3> {
        self.apply(x, |z| self.inner.eval_jet2(z))
    }
    fn eval_jet3(&self, x: &[Jet<4>]) -> Jet<4> {
        self.apply(x, |z| self.inner.eval_jet3(z))
    }
    fn eval_jet4(&self, x: &[Jet<5>]) -> Jet<5> {
        self.apply(x, |z| self.inner.eval_jet4(z))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identity_whitening_is_identity() {
        let w = WhiteningTransform::identity(3);
        let z = vec![0.4, -1.0, 2.5];
        assert_eq!(w.whiten(&z), z);
        assert_eq!(w.unwhiten(&z), z);
    }

    #[test]
    fn one_dimensional_scaling() {
        // H0 = 4, z0 = 1, z = 2 -> w = 2 (2 - 1) = 2
        let h0 = StructuredMatrix::Dense(DMatrix::from_element(1, 1, 4.0));
        let w = WhiteningTransform::from_precision(vec![1.0], &h0).unwrap();
        assert_relative_eq!(w.whiten(&[2.0])[0], 2.0, epsilon = 1e-14);
        assert_relative_eq!(w.unwhiten(&[2.0])[0], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn roundtrip_on_random_spd() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        let a = DMatrix::from_fn(5, 5, |_, _| rng.gen_range(-1.0..1.0));
        let h0 = StructuredMatrix::Dense(&a * a.transpose() + DMatrix::identity(5, 5));
        let z0: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let w = WhiteningTransform::from_precision(z0, &h0).unwrap();
        let z: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let back = w.unwhiten(&w.whiten(&z));
        for (a, b) in back.iter().zip(&z) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn whitened_reference_density_is_unit() {
        // quadratic form (z-z0)^T H0 (z-z0) becomes |w|^2
        let h0 = StructuredMatrix::Tridiagonal { diag: vec![2.0, 2.0, 2.0], off: vec![-0.5, -0.5] };
        let z0 = vec![0.3, -0.2, 0.9];
        let w = WhiteningTransform::from_precision(z0.clone(), &h0).unwrap();
        let z = vec![1.0, 0.5, -0.4];
        let ww = w.whiten(&z);
        let dense = h0.to_dense();
        let d = nalgebra::DVector::from_iterator(3, z.iter().zip(&z0).map(|(a, b)| a - b));
        let quad = (d.transpose() * &dense * &d)[(0, 0)];
        let norm2: f64 = ww.iter().map(|v| v * v).sum();
        assert_relative_eq!(quad, norm2, epsilon = 1e-12);
    }

    #[test]
    fn warm_start_with_indefinite_cache_falls_back() {
        let indefinite =
            StructuredMatrix::Dense(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]));
        let prior = StructuredMatrix::identity(&crate::linalg::LatentStructure::Dense(2));
        let zhat = vec![0.5, 0.5];
        let ws = warm_start(Some((&zhat, &indefinite)), &[0.0, 0.0], &prior).unwrap();
        assert!(ws.prior_fallback);
        assert_eq!(ws.x0, zhat);
    }

    #[test]
    fn cold_start_uses_prior_mean() {
        let prior = StructuredMatrix::identity(&crate::linalg::LatentStructure::Dense(2));
        let ws = warm_start(None, &[1.0, -1.0], &prior).unwrap();
        assert!(!ws.prior_fallback);
        assert_eq!(ws.x0, vec![1.0, -1.0]);
    }
}
