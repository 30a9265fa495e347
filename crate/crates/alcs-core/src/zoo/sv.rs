//! Stochastic volatility with an AR(1) log-volatility path.
//!
//! Priors: β ~ 2 Beta(20, 1.5) - 1, μ ~ Cauchy(0, 5), σ ~ HalfCauchy(0, 2);
//! the sampler works with the unconstrained θ = (atanh β, μ, log σ).
//! Latents x_0 ~ N(μ, σ²/(1-β²)), x_t ~ N(μ + β(x_{t-1} - μ), σ²), and
//! returns y_t ~ N(0, exp(x_t)). Each x_t couples only to its neighbours, so
//! the Hessian is tridiagonal. Synthetic returns are generated at
//! (β, μ, σ) = (0.96, -1, 0.3).

use std::sync::Arc;

use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use super::{
    ln_normal, norm_quantile, Conditional, HierarchicalModel, SyntheticDataset,
    DATASET_SCHEMA_VERSION, LN_2PI,
};
use crate::ad::{AdScalar, ScalarFn};
use crate::error::{Error, Result};
use crate::linalg::{LatentStructure, StructuredMatrix};

const TRUE_PARAMS: (f64, f64, f64) = (0.96, -1.0, 0.3);

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvParams {
    pub t_steps: usize,
    pub seed: u64,
    pub dataset: Option<SyntheticDataset>,
}

impl Default for SvParams {
    fn default() -> Self {
        SvParams { t_steps: 20, seed: 42, dataset: None }
    }
}

#[derive(Clone, Serialize, Deserialize)]
struct SvData {
    y: Vec<f64>,
}

pub struct StochasticVolatility {
    data: SvData,
    seed: u64,
}

impl StochasticVolatility {
    pub fn from_params(p: SvParams) -> Result<Self> {
        if p.t_steps < 2 {
            return Err(Error::Model("sv needs t_steps >= 2".into()));
        }
        let data = match p.dataset {
            Some(ds) => serde_json::from_value(ds.observations)
                .map_err(|e| Error::Model(format!("sv dataset: {e}")))?,
            None => generate(p.t_steps, p.seed),
        };
        Ok(StochasticVolatility { data, seed: p.seed })
    }

    pub fn new(t_steps: usize, seed: u64) -> Self {
        Self::from_params(SvParams { t_steps, seed, ..Default::default() }).unwrap()
    }
}

fn generate(t: usize, seed: u64) -> SvData {
    let (beta, mu, sigma) = TRUE_PARAMS;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut x = mu + sigma / (1.0 - beta * beta).sqrt() * rng.sample::<f64, _>(StandardNormal);
    let mut y = Vec::with_capacity(t);
    for step in 0..t {
        if step > 0 {
            x = mu + beta * (x - mu) + sigma * rng.sample::<f64, _>(StandardNormal);
        }
        y.push((0.5 * x).exp() * rng.sample::<f64, _>(StandardNormal));
    }
    SvData { y }
}

fn unpack(theta: &[f64]) -> (f64, f64, f64) {
    (theta[0].tanh(), theta[1], theta[2].exp())
}

struct SvFn {
    y: Vec<f64>,
    beta: f64,
    mu: f64,
    sigma: f64,
}

impl ScalarFn for SvFn {
    fn dim(&self) -> usize {
        self.y.len()
    }
    fn call<S: AdScalar>(&self, x: &[S]) -> S {
        let ln_sig = self.sigma.ln();
        let stat_sd = self.sigma / (1.0 - self.beta * self.beta).sqrt();
        let mut acc = S::constant(0.0);
        for (t, &yt) in self.y.iter().enumerate() {
            // y_t ~ N(0, exp(x_t))
            acc = acc - x[t] * 0.5 - (-x[t]).exp() * (0.5 * yt * yt) - 0.5 * LN_2PI;
            let step = if t == 0 {
                (x[0] - self.mu) / stat_sd
            } else {
                (x[t] - self.mu - (x[t - 1] - self.mu) * self.beta) / self.sigma
            };
            let ln_sd = if t == 0 { stat_sd.ln() } else { ln_sig };
            acc = acc - step * step * 0.5 - (ln_sd + 0.5 * LN_2PI);
        }
        acc
    }
}

impl HierarchicalModel for StochasticVolatility {
    fn name(&self) -> &'static str {
        "sv"
    }
    fn theta_dim(&self) -> usize {
        3
    }
    fn latent_dim(&self) -> usize {
        self.data.y.len()
    }
    fn theta_names(&self) -> Vec<String> {
        vec!["atanh_beta".into(), "mu".into(), "log_sigma".into()]
    }
    fn prior_transform(&self, u: &[f64]) -> Vec<f64> {
        let beta_dist = Beta::new(20.0, 1.5).expect("valid shape");
        let b = 2.0 * beta_dist.inverse_cdf(u[0].clamp(1e-12, 1.0 - 1e-12)) - 1.0;
        let mu = 5.0 * (std::f64::consts::PI * (u[1].clamp(1e-12, 1.0 - 1e-12) - 0.5)).tan();
        let sigma =
            2.0 * (std::f64::consts::FRAC_PI_2 * u[2].clamp(1e-12, 1.0 - 1e-12)).tan();
        vec![b.clamp(-1.0 + 1e-12, 1.0 - 1e-12).atanh(), mu, sigma.max(1e-300).ln()]
    }
    fn structure(&self) -> LatentStructure {
        LatentStructure::Tridiagonal(self.latent_dim())
    }

    fn conditional(&self, theta: &[f64]) -> Result<Conditional> {
        let (beta, mu, sigma) = unpack(theta);
        let t = self.latent_dim();
        let prec = 1.0 / (sigma * sigma);
        let mut diag = vec![(1.0 + beta * beta) * prec; t];
        diag[0] = (1.0 - beta * beta) * prec + beta * beta * prec;
        diag[t - 1] = prec;
        Ok(Conditional {
            log_joint: Arc::new(SvFn { y: self.data.y.clone(), beta, mu, sigma }),
            blocks: None,
            constant: 0.0,
            prior_precision: StructuredMatrix::Tridiagonal {
                diag,
                off: vec![-beta * prec; t - 1],
            },
            prior_mean: vec![mu; t],
            jittered: false,
        })
    }

    fn latent_prior_logpdf(&self, theta: &[f64], z: &[f64]) -> f64 {
        let (beta, mu, sigma) = unpack(theta);
        let stat_sd = sigma / (1.0 - beta * beta).sqrt();
        let mut acc = ln_normal(z[0], mu, stat_sd);
        for t in 1..z.len() {
            acc += ln_normal(z[t], mu + beta * (z[t - 1] - mu), sigma);
        }
        acc
    }

    fn latent_prior_transform(&self, theta: &[f64], uz: &[f64]) -> Vec<f64> {
        let (beta, mu, sigma) = unpack(theta);
        let stat_sd = sigma / (1.0 - beta * beta).sqrt();
        let mut z = Vec::with_capacity(uz.len());
        let mut x = mu + stat_sd * norm_quantile(uz[0]);
        z.push(x);
        for &u in &uz[1..] {
            x = mu + beta * (x - mu) + sigma * norm_quantile(u);
            z.push(x);
        }
        z
    }

    fn dataset(&self) -> SyntheticDataset {
        SyntheticDataset {
            schema_version: DATASET_SCHEMA_VERSION,
            model: self.name().to_string(),
            seed: self.seed,
            truth: serde_json::json!({
                "beta": TRUE_PARAMS.0, "mu": TRUE_PARAMS.1, "sigma": TRUE_PARAMS.2,
            }),
            observations: serde_json::to_value(&self.data).unwrap(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad;

    #[test]
    fn zero_persistence_decouples_timesteps() {
        // β = 0: the latent Hessian is diagonal
        let m = StochasticVolatility::new(8, 42);
        let theta = [0.0, -1.0, TRUE_PARAMS.2.ln()];
        let cond = m.conditional(&theta).unwrap();
        let h = ad::hessian_dense(cond.log_joint.as_ref(), &cond.prior_mean).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                if i != j {
                    assert!(h[(i, j)].abs() < 1e-12, "H[{i},{j}] = {}", h[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn prior_transform_hits_stated_families() {
        let m = StochasticVolatility::new(4, 42);
        // median of 2 Beta(20,1.5) - 1 transformed by atanh; median of Cauchy is 0
        let theta = m.prior_transform(&[0.5, 0.5, 0.5]);
        assert!(theta[0].tanh() > 0.8, "median β should be high persistence");
        assert!(theta[1].abs() < 1e-10);
        assert!((theta[2].exp() - 2.0).abs() < 1e-10, "median of HalfCauchy(2) is 2");
    }

    #[test]
    fn prior_precision_matches_autodiff_of_prior() {
        let m = StochasticVolatility::new(6, 42);
        let theta = [0.9_f64.atanh(), -0.5, (0.4_f64).ln()];
        let cond = m.conditional(&theta).unwrap();
        // autodiff the pure prior: log π(z | θ) through latent_prior_logpdf
        struct PriorFn<'a> {
            m: &'a StochasticVolatility,
            theta: Vec<f64>,
        }
        impl ScalarFn for PriorFn<'_> {
            fn dim(&self) -> usize {
                self.m.latent_dim()
            }
            fn call<S: AdScalar>(&self, x: &[S]) -> S {
                let (beta, mu, sigma) = unpack(&self.theta);
                let stat_sd = sigma / (1.0 - beta * beta).sqrt();
                let mut acc = {
                    let r = (x[0] - mu) / stat_sd;
                    -r * r * 0.5 - stat_sd.ln() - 0.5 * LN_2PI
                };
                for t in 1..x.len() {
                    let r = (x[t] - mu - (x[t - 1] - mu) * beta) / sigma;
                    acc = acc - r * r * 0.5 - (sigma.ln() + 0.5 * LN_2PI);
                }
                acc
            }
        }
        let f = PriorFn { m: &m, theta: theta.to_vec() };
        let h = ad::hessian_dense(&f, &vec![0.0; 6]).unwrap();
        let want = cond.prior_precision.to_dense();
        for i in 0..6 {
            for j in 0..6 {
                assert!(
                    (h[(i, j)] + want[(i, j)]).abs() < 1e-10,
                    "prior precision mismatch at ({i},{j})"
                );
            }
        }
    }
}
