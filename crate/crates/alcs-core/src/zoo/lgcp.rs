//! Log-Gaussian Cox process on a square grid.
//!
//! θ = (log a, log ℓ) with normal priors N(-1, 0.5²) and N(-1, 1²); the
//! log-intensity field carries a Matérn-3/2 GP prior on the unit square and
//! cell counts are Poisson with rate exp(φ_m + ȳ), ȳ the mean-log-count
//! offset. The GP couples every cell, so the latent Hessian is dense; the
//! θ-dependent kernel Cholesky is computed once per conditional and captured
//! by the evaluator.
//!
//! ȳ is defined as log(mean count + 1e-9), which stays finite for all-zero
//! grids.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    norm_quantile, Conditional, HierarchicalModel, SyntheticDataset, DATASET_SCHEMA_VERSION,
    LN_2PI,
};
use crate::ad::{AdScalar, ScalarFn};
use crate::error::{Error, Result};
use crate::linalg::{LatentStructure, StructuredMatrix};
use statrs::function::gamma::ln_gamma;

const PRIOR_LOG_A: (f64, f64) = (-1.0, 0.5);
const PRIOR_LOG_ELL: (f64, f64) = (-1.0, 1.0);
const TRUE_THETA: (f64, f64) = (-1.0, -1.0);
const BASE_LOG_RATE: f64 = 4.605_170_185_988_092; // ln 100: about 100 events per cell
const JITTER: f64 = 1e-8;

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LgcpParams {
    /// Grid side length; the latent dimension is grid².
    pub grid: usize,
    pub seed: u64,
    pub dataset: Option<SyntheticDataset>,
}

impl Default for LgcpParams {
    fn default() -> Self {
        LgcpParams { grid: 10, seed: 42, dataset: None }
    }
}

#[derive(Clone, Serialize, Deserialize)]
struct LgcpData {
    counts: Vec<u64>,
}

pub struct Lgcp {
    grid: usize,
    coords: Vec<(f64, f64)>,
    data: LgcpData,
    offset: f64,
    lfact: f64, // Σ ln(c_m!)
    seed: u64,
}

impl Lgcp {
    pub fn from_params(p: LgcpParams) -> Result<Self> {
        if p.grid < 2 {
            return Err(Error::Model("lgcp needs grid >= 2".into()));
        }
        let coords = grid_coords(p.grid);
        let data = match p.dataset {
            Some(ds) => serde_json::from_value(ds.observations)
                .map_err(|e| Error::Model(format!("lgcp dataset: {e}")))?,
            None => generate(&coords, p.seed),
        };
        if data.counts.len() != coords.len() {
            return Err(Error::Model("lgcp dataset size mismatch".into()));
        }
        let mean_count =
            data.counts.iter().map(|&c| c as f64).sum::<f64>() / data.counts.len() as f64;
        let offset = (mean_count + 1e-9).ln();
        let lfact = data.counts.iter().map(|&c| ln_gamma(c as f64 + 1.0)).sum();
        Ok(Lgcp { grid: p.grid, coords, data, offset, lfact, seed: p.seed })
    }

    pub fn new(grid: usize, seed: u64) -> Self {
        Self::from_params(LgcpParams { grid, seed, ..Default::default() }).unwrap()
    }

    pub fn grid_side(&self) -> usize {
        self.grid
    }

    /// Matérn-3/2 kernel matrix at (log a, log ℓ).
    pub fn kernel(&self, theta: &[f64]) -> DMatrix<f64> {
        let (a2, ell) = ((2.0 * theta[0]).exp(), theta[1].exp());
        let n = self.coords.len();
        let mut k = DMatrix::zeros(n, n);
        let s3 = 3.0_f64.sqrt();
        for i in 0..n {
            for j in i..n {
                let dx = self.coords[i].0 - self.coords[j].0;
                let dy = self.coords[i].1 - self.coords[j].1;
                let r = (dx * dx + dy * dy).sqrt() * s3 / ell;
                let v = a2 * (1.0 + r) * (-r).exp();
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    fn kernel_factor(&self, theta: &[f64]) -> Result<(DMatrix<f64>, bool)> {
        let mut k = self.kernel(theta);
        match nalgebra::Cholesky::new(k.clone()) {
            Some(c) => Ok((c.unpack(), false)),
            None => {
                let a2 = (2.0 * theta[0]).exp();
                for i in 0..k.nrows() {
                    k[(i, i)] += JITTER * a2;
                }
                let c = nalgebra::Cholesky::new(k).ok_or_else(|| {
                    Error::Model("lgcp kernel not positive definite even with jitter".into())
                })?;
                Ok((c.unpack(), true))
            }
        }
    }
}

fn grid_coords(n: usize) -> Vec<(f64, f64)> {
    let step = 1.0 / (n - 1) as f64;
    let mut c = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            c.push((i as f64 * step, j as f64 * step));
        }
    }
    c
}

fn generate(coords: &[(f64, f64)], seed: u64) -> LgcpData {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = coords.len();
    // draw the field at the true hyperparameters
    let probe = Lgcp {
        grid: (n as f64).sqrt() as usize,
        coords: coords.to_vec(),
        data: LgcpData { counts: vec![0; n] },
        offset: 0.0,
        lfact: 0.0,
        seed,
    };
    let k = probe.kernel(&[TRUE_THETA.0, TRUE_THETA.1]);
    let l = nalgebra::Cholesky::new(k + DMatrix::identity(n, n) * 1e-10)
        .expect("true kernel is positive definite")
        .unpack();
    let eps: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let phi = &l * nalgebra::DVector::from_vec(eps);
    let counts = phi
        .iter()
        .map(|&p| {
            let rate: f64 = (p + BASE_LOG_RATE).exp();
            Poisson::new(rate.max(1e-12)).unwrap().sample(&mut rng) as u64
        })
        .collect();
    LgcpData { counts }
}

struct LgcpFn {
    l_kernel: DMatrix<f64>, // lower Cholesky of K(θ)
    counts: Vec<u64>,
    offset: f64,
    constant: f64, // -Σ ln L_ii - (n/2) ln 2π - Σ ln c!
}

impl ScalarFn for LgcpFn {
    fn dim(&self) -> usize {
        self.counts.len()
    }
    fn call<S: AdScalar>(&self, phi: &[S]) -> S {
        let n = phi.len();
        let mut acc = S::constant(self.constant);
        // Poisson counts
        for (p, &c) in phi.iter().zip(&self.counts) {
            let eta = *p + self.offset;
            acc = acc + eta * (c as f64) - eta.exp();
        }
        // GP prior quadratic form via forward substitution v = L^{-1} φ
        let mut v: Vec<S> = phi.to_vec();
        for i in 0..n {
            for k in 0..i {
                let lik = self.l_kernel[(i, k)];
                if lik != 0.0 {
                    v[i] = v[i] - v[k] * lik;
                }
            }
            v[i] = v[i] / self.l_kernel[(i, i)];
            acc = acc - v[i] * v[i] * 0.5;
        }
        acc
    }
}

impl HierarchicalModel for Lgcp {
    fn name(&self) -> &'static str {
        "lgcp"
    }
    fn theta_dim(&self) -> usize {
        2
    }
    fn latent_dim(&self) -> usize {
        self.coords.len()
    }
    fn theta_names(&self) -> Vec<String> {
        vec!["log_amplitude".into(), "log_lengthscale".into()]
    }
    fn prior_transform(&self, u: &[f64]) -> Vec<f64> {
        vec![
            PRIOR_LOG_A.0 + PRIOR_LOG_A.1 * norm_quantile(u[0]),
            PRIOR_LOG_ELL.0 + PRIOR_LOG_ELL.1 * norm_quantile(u[1]),
        ]
    }
    fn structure(&self) -> LatentStructure {
        LatentStructure::Dense(self.latent_dim())
    }

    fn conditional(&self, theta: &[f64]) -> Result<Conditional> {
        let (l, jittered) = self.kernel_factor(theta)?;
        let n = self.latent_dim();
        let half_logdet_k: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
        let constant = -half_logdet_k - 0.5 * n as f64 * LN_2PI - self.lfact;
        // prior precision K^{-1} for whitening, from the factor already built
        let inv = nalgebra::Cholesky::new(self.kernel(theta) + jitter_eye(n, jittered, theta))
            .ok_or_else(|| Error::Model("lgcp kernel factorisation lost definiteness".into()))?
            .inverse();
        Ok(Conditional {
            log_joint: Arc::new(LgcpFn {
                l_kernel: l,
                counts: self.data.counts.clone(),
                offset: self.offset,
                constant,
            }),
            blocks: None,
            constant: 0.0,
            prior_precision: StructuredMatrix::Dense(inv),
            prior_mean: vec![0.0; n],
            jittered,
        })
    }

    fn latent_prior_logpdf(&self, theta: &[f64], z: &[f64]) -> f64 {
        let (l, _) = self.kernel_factor(theta).expect("kernel factorisation");
        let n = z.len();
        let mut v = z.to_vec();
        let mut quad = 0.0;
        for i in 0..n {
            for k in 0..i {
                v[i] -= l[(i, k)] * v[k];
            }
            v[i] /= l[(i, i)];
            quad += v[i] * v[i];
        }
        let half_logdet: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
        -0.5 * quad - half_logdet - 0.5 * n as f64 * LN_2PI
    }

    fn latent_prior_transform(&self, theta: &[f64], uz: &[f64]) -> Vec<f64> {
        let (l, _) = self.kernel_factor(theta).expect("kernel factorisation");
        let eps = nalgebra::DVector::from_iterator(uz.len(), uz.iter().map(|&u| norm_quantile(u)));
        (&l * eps).iter().copied().collect()
    }

    fn dataset(&self) -> SyntheticDataset {
        SyntheticDataset {
            schema_version: DATASET_SCHEMA_VERSION,
            model: self.name().to_string(),
            seed: self.seed,
            truth: serde_json::json!({
                "log_amplitude": TRUE_THETA.0,
                "log_lengthscale": TRUE_THETA.1,
                "base_log_rate": BASE_LOG_RATE,
            }),
            observations: serde_json::to_value(&self.data).unwrap(),
        }
    }
}

fn jitter_eye(n: usize, jittered: bool, theta: &[f64]) -> DMatrix<f64> {
    if jittered {
        DMatrix::identity(n, n) * (JITTER * (2.0 * theta[0]).exp())
    } else {
        DMatrix::zeros(n, n)
    }
}
