//! Random-walk state-space model with a Kalman-filter reference.
//!
//! θ = log σ with a uniform prior on (log 0.01, log 10); the latent path
//! follows x_0 ~ N(0, σ²), x_t ~ N(x_{t-1}, σ²), observed through
//! y_t ~ N(x_t, 1). The latent Hessian is symmetric tridiagonal, and the
//! standard predict/update recursion gives the exact marginal likelihood.

use std::sync::Arc;

use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    ln_normal, norm_quantile, uniform_quantile, Conditional, HierarchicalModel, SyntheticDataset,
    DATASET_SCHEMA_VERSION, LN_2PI,
};
use crate::ad::{AdScalar, ScalarFn};
use crate::error::{Error, Result};
use crate::linalg::{LatentStructure, StructuredMatrix};

const SIGMA_TRUE: f64 = 0.5;
const LOG_SIGMA_RANGE: (f64, f64) = (-4.605_170_185_988_091, 2.302_585_092_994_046); // ln 0.01 .. ln 10

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BrownianParams {
    pub t_steps: usize,
    pub seed: u64,
    pub dataset: Option<SyntheticDataset>,
}

impl Default for BrownianParams {
    fn default() -> Self {
        BrownianParams { t_steps: 50, seed: 42, dataset: None }
    }
}

#[derive(Clone, Serialize, Deserialize)]
struct BrownianData {
    y: Vec<f64>,
}

pub struct Brownian {
    data: BrownianData,
    seed: u64,
}

impl Brownian {
    pub fn from_params(p: BrownianParams) -> Result<Self> {
        if p.t_steps < 2 {
            return Err(Error::Model("brownian needs t_steps >= 2".into()));
        }
        let data = match p.dataset {
            Some(ds) => serde_json::from_value(ds.observations)
                .map_err(|e| Error::Model(format!("brownian dataset: {e}")))?,
            None => generate(p.t_steps, p.seed),
        };
        Ok(Brownian { data, seed: p.seed })
    }

    pub fn new(t_steps: usize, seed: u64) -> Self {
        Self::from_params(BrownianParams { t_steps, seed, ..Default::default() }).unwrap()
    }

    pub fn observations(&self) -> &[f64] {
        &self.data.y
    }
}

fn generate(t: usize, seed: u64) -> BrownianData {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut x = 0.0;
    let mut y = Vec::with_capacity(t);
    for step in 0..t {
        let e: f64 = rng.sample(StandardNormal);
        x = if step == 0 { SIGMA_TRUE * e } else { x + SIGMA_TRUE * e };
        let noise: f64 = rng.sample(StandardNormal);
        y.push(x + noise);
    }
    BrownianData { y }
}

/// Exact log marginal likelihood of the observations given log σ via the
/// Kalman predict/update recursion with unit observation noise.
pub fn kalman_marginal(model: &Brownian, log_sigma: f64) -> f64 {
    let q = (2.0 * log_sigma).exp();
    let mut logml = 0.0;
    let mut mean = 0.0;
    let mut var = q; // x_0 prior is the first predictive
    for &y in &model.data.y {
        let s = var + 1.0;
        logml += ln_normal(y, mean, s.sqrt());
        let gain = var / s;
        mean += gain * (y - mean);
        var *= 1.0 - gain;
        var += q; // random-walk predict; unused after the final update
    }
    logml
}

struct ChainFn {
    y: Vec<f64>,
    sigma: f64,
}

impl ScalarFn for ChainFn {
    fn dim(&self) -> usize {
        self.y.len()
    }
    fn call<S: AdScalar>(&self, x: &[S]) -> S {
        let ln_sig = self.sigma.ln();
        let mut acc = S::constant(0.0);
        for (t, &yt) in self.y.iter().enumerate() {
            let obs = x[t] - yt;
            acc = acc - obs * obs * 0.5 - 0.5 * LN_2PI;
            let step = if t == 0 { x[0] / self.sigma } else { (x[t] - x[t - 1]) / self.sigma };
            acc = acc - step * step * 0.5 - (ln_sig + 0.5 * LN_2PI);
        }
        acc
    }
}

impl HierarchicalModel for Brownian {
    fn name(&self) -> &'static str {
        "brownian"
    }
    fn theta_dim(&self) -> usize {
        1
    }
    fn latent_dim(&self) -> usize {
        self.data.y.len()
    }
    fn theta_names(&self) -> Vec<String> {
        vec!["log_sigma".into()]
    }
    fn prior_transform(&self, u: &[f64]) -> Vec<f64> {
        vec![uniform_quantile(LOG_SIGMA_RANGE.0, LOG_SIGMA_RANGE.1, u[0])]
    }
    fn structure(&self) -> LatentStructure {
        LatentStructure::Tridiagonal(self.latent_dim())
    }

    fn conditional(&self, theta: &[f64]) -> Result<Conditional> {
        let sigma = theta[0].exp();
        let t = self.latent_dim();
        let prec = 1.0 / (sigma * sigma);
        let mut diag = vec![2.0 * prec; t];
        diag[t - 1] = prec;
        Ok(Conditional {
            log_joint: Arc::new(ChainFn { y: self.data.y.clone(), sigma }),
            blocks: None,
            constant: 0.0,
            prior_precision: StructuredMatrix::Tridiagonal { diag, off: vec![-prec; t - 1] },
            prior_mean: vec![0.0; t],
            jittered: false,
        })
    }

    fn has_exact_marginal(&self) -> bool {
        true
    }
    fn exact_marginal(&self, theta: &[f64]) -> Result<f64> {
        Ok(kalman_marginal(self, theta[0]))
    }

    fn latent_prior_logpdf(&self, theta: &[f64], z: &[f64]) -> f64 {
        let sigma = theta[0].exp();
        let mut acc = ln_normal(z[0], 0.0, sigma);
        for t in 1..z.len() {
            acc += ln_normal(z[t], z[t - 1], sigma);
        }
        acc
    }

    fn latent_prior_transform(&self, theta: &[f64], uz: &[f64]) -> Vec<f64> {
        let sigma = theta[0].exp();
        let mut z = Vec::with_capacity(uz.len());
        let mut x = 0.0;
        for &u in uz {
            x += sigma * norm_quantile(u);
            z.push(x);
        }
        z
    }

    fn dataset(&self) -> SyntheticDataset {
        SyntheticDataset {
            schema_version: DATASET_SCHEMA_VERSION,
            model: self.name().to_string(),
            seed: self.seed,
            truth: serde_json::json!({ "sigma": SIGMA_TRUE }),
            observations: serde_json::to_value(&self.data).unwrap(),
        }
    }
}
