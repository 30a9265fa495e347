//! Structured precision matrices and their Cholesky factorisations.
//!
//! The latent Hessian of a hierarchical model is stored in the cheapest form
//! its declared structure allows: dense, per-block dense, or a (diagonal,
//! off-diagonal) band pair for tridiagonal chains. The log-determinant then
//! decomposes accordingly: a full O(n^3) Cholesky, a sum over blocks, or the
//! O(n) tridiagonal recurrence
//! `L_ii = sqrt(H_ii - L_{i,i-1}^2)`, `L_{i,i-1} = H_{i,i-1} / L_{i-1,i-1}`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ad::AdScalar;
use crate::error::{Error, Result};

/// Declared sparsity of a model's latent Hessian.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LatentStructure {
    Dense(usize),
    /// Block sizes, in latent order; sizes must sum to the latent dimension.
    BlockDiagonal(Vec<usize>),
    /// Bandwidth-1 chain; requires dimension >= 2.
    Tridiagonal(usize),
}

impl LatentStructure {
    pub fn dim(&self) -> usize {
        match self {
            LatentStructure::Dense(n) => *n,
            LatentStructure::BlockDiagonal(sizes) => sizes.iter().sum(),
            LatentStructure::Tridiagonal(n) => *n,
        }
    }

    /// True when `(i, j)` lies inside the declared sparsity pattern.
    pub fn in_pattern(&self, i: usize, j: usize) -> bool {
        match self {
            LatentStructure::Dense(_) => true,
            LatentStructure::BlockDiagonal(sizes) => {
                let mut lo = 0;
                for &s in sizes {
                    let hi = lo + s;
                    if i >= lo && i < hi {
                        return j >= lo && j < hi;
                    }
                    lo = hi;
                }
                false
            }
            LatentStructure::Tridiagonal(_) => i.abs_diff(j) <= 1,
        }
    }
}

/// A symmetric positive (semi)definite matrix stored according to structure.
#[derive(Clone, Debug)]
pub enum StructuredMatrix {
    Dense(DMatrix<f64>),
    BlockDiagonal(Vec<DMatrix<f64>>),
    Tridiagonal { diag: Vec<f64>, off: Vec<f64> },
}

impl StructuredMatrix {
    pub fn dim(&self) -> usize {
        match self {
            StructuredMatrix::Dense(m) => m.nrows(),
            StructuredMatrix::BlockDiagonal(blocks) => blocks.iter().map(|b| b.nrows()).sum(),
            StructuredMatrix::Tridiagonal { diag, .. } => diag.len(),
        }
    }

    pub fn structure(&self) -> LatentStructure {
        match self {
            StructuredMatrix::Dense(m) => LatentStructure::Dense(m.nrows()),
            StructuredMatrix::BlockDiagonal(blocks) => {
                LatentStructure::BlockDiagonal(blocks.iter().map(|b| b.nrows()).collect())
            }
            StructuredMatrix::Tridiagonal { diag, .. } => LatentStructure::Tridiagonal(diag.len()),
        }
    }

    pub fn identity(structure: &LatentStructure) -> Self {
        match structure {
            LatentStructure::Dense(n) => StructuredMatrix::Dense(DMatrix::identity(*n, *n)),
            LatentStructure::BlockDiagonal(sizes) => StructuredMatrix::BlockDiagonal(
                sizes.iter().map(|&s| DMatrix::identity(s, s)).collect(),
            ),
            LatentStructure::Tridiagonal(n) => StructuredMatrix::Tridiagonal {
                diag: vec![1.0; *n],
                off: vec![0.0; n.saturating_sub(1)],
            },
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            StructuredMatrix::Dense(m) => m.clone(),
            StructuredMatrix::BlockDiagonal(blocks) => {
                let n = self.dim();
                let mut out = DMatrix::zeros(n, n);
                let mut lo = 0;
                for b in blocks {
                    let s = b.nrows();
                    out.view_mut((lo, lo), (s, s)).copy_from(b);
                    lo += s;
                }
                out
            }
            StructuredMatrix::Tridiagonal { diag, off } => {
                let n = diag.len();
                let mut out = DMatrix::zeros(n, n);
                for i in 0..n {
                    out[(i, i)] = diag[i];
                }
                for i in 0..n - 1 {
                    out[(i, i + 1)] = off[i];
                    out[(i + 1, i)] = off[i];
                }
                out
            }
        }
    }

    /// Lower Cholesky factor in matching structure. A non-positive pivot is
    /// reported with its index rather than silently regularised.
    pub fn cholesky(&self) -> Result<StructuredCholesky> {
        match self {
            StructuredMatrix::Dense(m) => Ok(StructuredCholesky::Dense(dense_cholesky(m, 0)?)),
            StructuredMatrix::BlockDiagonal(blocks) => {
                let mut out = Vec::with_capacity(blocks.len());
                let mut offset = 0;
                for b in blocks {
                    out.push(dense_cholesky(b, offset)?);
                    offset += b.nrows();
                }
                Ok(StructuredCholesky::BlockDiagonal(out))
            }
            StructuredMatrix::Tridiagonal { diag, off } => {
                let n = diag.len();
                let mut l = vec![0.0; n];
                let mut e = vec![0.0; n.saturating_sub(1)];
                for i in 0..n {
                    let sub = if i == 0 { 0.0 } else { e[i - 1] * e[i - 1] };
                    let pivot = diag[i] - sub;
                    if !(pivot > 0.0) || !pivot.is_finite() {
                        return Err(Error::IndefiniteHessian { index: i, pivot });
                    }
                    l[i] = pivot.sqrt();
                    if i + 1 < n {
                        e[i] = off[i] / l[i];
                    }
                }
                Ok(StructuredCholesky::Tridiagonal { diag: l, off: e })
            }
        }
    }
}

fn dense_cholesky(a: &DMatrix<f64>, index_offset: usize) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut s = a[(j, j)];
        for k in 0..j {
            s -= l[(j, k)] * l[(j, k)];
        }
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::IndefiniteHessian { index: index_offset + j, pivot: s });
        }
        l[(j, j)] = s.sqrt();
        for i in j + 1..n {
            let mut v = a[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / l[(j, j)];
        }
    }
    Ok(l)
}

/// Lower Cholesky factor stored in the same structure as its matrix.
#[derive(Clone, Debug)]
pub enum StructuredCholesky {
    Dense(DMatrix<f64>),
    BlockDiagonal(Vec<DMatrix<f64>>),
    Tridiagonal { diag: Vec<f64>, off: Vec<f64> },
}

impl StructuredCholesky {
    pub fn dim(&self) -> usize {
        match self {
            StructuredCholesky::Dense(l) => l.nrows(),
            StructuredCholesky::BlockDiagonal(blocks) => blocks.iter().map(|b| b.nrows()).sum(),
            StructuredCholesky::Tridiagonal { diag, .. } => diag.len(),
        }
    }

    pub fn identity(structure: &LatentStructure) -> Self {
        StructuredMatrix::identity(structure)
            .cholesky()
            .expect("identity is positive definite")
    }

    /// 1/2 log det of the factored matrix: the sum of log pivots.
    pub fn half_logdet(&self) -> f64 {
        self.for_each_pivot_sum(|p| p.ln())
    }

    fn for_each_pivot_sum(&self, f: impl Fn(f64) -> f64) -> f64 {
        match self {
            StructuredCholesky::Dense(l) => (0..l.nrows()).map(|i| f(l[(i, i)])).sum(),
            StructuredCholesky::BlockDiagonal(blocks) => blocks
                .iter()
                .map(|b| (0..b.nrows()).map(|i| f(b[(i, i)])).sum::<f64>())
                .sum(),
            StructuredCholesky::Tridiagonal { diag, .. } => diag.iter().map(|&p| f(p)).sum(),
        }
    }

    fn pivot_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0_f64;
        let mut visit = |p: f64| {
            lo = lo.min(p);
            hi = hi.max(p);
        };
        match self {
            StructuredCholesky::Dense(l) => (0..l.nrows()).for_each(|i| visit(l[(i, i)])),
            StructuredCholesky::BlockDiagonal(blocks) => blocks
                .iter()
                .for_each(|b| (0..b.nrows()).for_each(|i| visit(b[(i, i)]))),
            StructuredCholesky::Tridiagonal { diag, .. } => diag.iter().for_each(|&p| visit(p)),
        }
        (lo, hi)
    }

    /// Condition estimate of the factored matrix from extreme pivots:
    /// (max L_ii / min L_ii)^2.
    pub fn condition_estimate(&self) -> f64 {
        let (lo, hi) = self.pivot_range();
        (hi / lo) * (hi / lo)
    }

    /// Solve `L L^T x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let y = self.solve_l(b);
        self.solve_lt(&y)
    }

    /// Solve `L y = b` (forward substitution).
    pub fn solve_l(&self, b: &[f64]) -> Vec<f64> {
        match self {
            StructuredCholesky::Dense(l) => {
                let n = l.nrows();
                let mut y = b.to_vec();
                for i in 0..n {
                    for k in 0..i {
                        y[i] -= l[(i, k)] * y[k];
                    }
                    y[i] /= l[(i, i)];
                }
                y
            }
            StructuredCholesky::BlockDiagonal(blocks) => {
                let mut y = Vec::with_capacity(b.len());
                let mut lo = 0;
                for blk in blocks {
                    let s = blk.nrows();
                    let mut sub = b[lo..lo + s].to_vec();
                    for i in 0..s {
                        for k in 0..i {
                            sub[i] -= blk[(i, k)] * sub[k];
                        }
                        sub[i] /= blk[(i, i)];
                    }
                    y.extend_from_slice(&sub);
                    lo += s;
                }
                y
            }
            StructuredCholesky::Tridiagonal { diag, off } => {
                let n = diag.len();
                let mut y = vec![0.0; n];
                y[0] = b[0] / diag[0];
                for i in 1..n {
                    y[i] = (b[i] - off[i - 1] * y[i - 1]) / diag[i];
                }
                y
            }
        }
    }

    /// Solve `L^T x = b` (backward substitution), generic over the scalar so
    /// whitened objectives can run it on Taylor jets.
    pub fn solve_lt_generic<S: AdScalar>(&self, b: &[S]) -> Vec<S> {
        match self {
            StructuredCholesky::Dense(l) => {
                let n = l.nrows();
                let mut x = b.to_vec();
                for i in (0..n).rev() {
                    for k in i + 1..n {
                        let lk = l[(k, i)];
                        if lk != 0.0 {
                            x[i] = x[i] - x[k] * lk;
                        }
                    }
                    x[i] = x[i] / l[(i, i)];
                }
                x
            }
            StructuredCholesky::BlockDiagonal(blocks) => {
                let mut x = Vec::with_capacity(b.len());
                let mut lo = 0;
                for blk in blocks {
                    let s = blk.nrows();
                    let mut sub = b[lo..lo + s].to_vec();
                    for i in (0..s).rev() {
                        for k in i + 1..s {
                            let lk = blk[(k, i)];
                            if lk != 0.0 {
                                sub[i] = sub[i] - sub[k] * lk;
                            }
                        }
                        sub[i] = sub[i] / blk[(i, i)];
                    }
                    x.extend_from_slice(&sub);
                    lo += s;
                }
                x
            }
            StructuredCholesky::Tridiagonal { diag, off } => {
                let n = diag.len();
                let mut x = vec![S::constant(0.0); n];
                x[n - 1] = b[n - 1] / diag[n - 1];
                for i in (0..n - 1).rev() {
                    x[i] = (b[i] - x[i + 1] * off[i]) / diag[i];
                }
                x
            }
        }
    }

    pub fn solve_lt(&self, b: &[f64]) -> Vec<f64> {
        self.solve_lt_generic(b)
    }

    /// `L^T v`: the whitening forward map applied to a centred vector.
    pub fn mult_lt(&self, v: &[f64]) -> Vec<f64> {
        match self {
            StructuredCholesky::Dense(l) => {
                let n = l.nrows();
                let mut out = vec![0.0; n];
                for i in 0..n {
                    let mut acc = 0.0;
                    for k in i..n {
                        acc += l[(k, i)] * v[k];
                    }
                    out[i] = acc;
                }
                out
            }
            StructuredCholesky::BlockDiagonal(blocks) => {
                let mut out = Vec::with_capacity(v.len());
                let mut lo = 0;
                for blk in blocks {
                    let s = blk.nrows();
                    for i in 0..s {
                        let mut acc = 0.0;
                        for k in i..s {
                            acc += blk[(k, i)] * v[lo + k];
                        }
                        out.push(acc);
                    }
                    lo += s;
                }
                out
            }
            StructuredCholesky::Tridiagonal { diag, off } => {
                let n = diag.len();
                let mut out = vec![0.0; n];
                for i in 0..n {
                    out[i] = diag[i] * v[i];
                    if i + 1 < n {
                        out[i] += off[i] * v[i + 1];
                    }
                }
                out
            }
        }
    }

    /// Extract the sub-factor for one block of a block-diagonal factor.
    pub fn block(&self, index: usize) -> Option<StructuredCholesky> {
        match self {
            StructuredCholesky::BlockDiagonal(blocks) => {
                blocks.get(index).map(|b| StructuredCholesky::Dense(b.clone()))
            }
            _ => None,
        }
    }
}

/// Largest-magnitude entry of `dense` outside the declared pattern, with its
/// location; used by structure verification probes.
pub fn off_structure_max(
    dense: &DMatrix<f64>,
    structure: &LatentStructure,
) -> (f64, usize, usize) {
    let n = dense.nrows();
    let mut worst = (0.0_f64, 0, 0);
    for i in 0..n {
        for j in 0..n {
            if !structure.in_pattern(i, j) && dense[(i, j)].abs() > worst.0 {
                worst = (dense[(i, j)].abs(), i, j);
            }
        }
    }
    worst
}
