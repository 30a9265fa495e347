//! Hierarchical regression on a synthetic radon-style dataset.
//!
//! J counties with random intercepts α_j ~ N(μ_α, σ_α²) and a shared floor
//! slope: y_ij ~ N(α_j + β x_ij, σ_y²), x_ij ∈ {0, 1}. County effects
//! decouple given θ, so the Hessian is diagonal and the marginal over each
//! α_j is a one-factor Gaussian with closed form.
//!
//! The generator fixes 5 observations per county with Bernoulli(0.5) floor
//! indicators; true parameters (μ_α, β, σ_α, σ_y) = (1.5, -0.7, 0.3, 0.8).

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    ln_normal, norm_quantile, uniform_quantile, Conditional, HierarchicalModel, SumOfBlocks,
    SyntheticDataset, DATASET_SCHEMA_VERSION, LN_2PI,
};
use crate::ad::{AdScalar, DiffFunction, ScalarFn};
use crate::error::{Error, Result};
use crate::linalg::{LatentStructure, StructuredMatrix};
use nalgebra::DMatrix;

const TRUE_PARAMS: (f64, f64, f64, f64) = (1.5, -0.7, 0.3, 0.8);

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadonParams {
    pub counties: usize,
    pub obs_per_county: usize,
    pub seed: u64,
    pub dataset: Option<SyntheticDataset>,
}

impl Default for RadonParams {
    fn default() -> Self {
        RadonParams { counties: 85, obs_per_county: 5, seed: 42, dataset: None }
    }
}

#[derive(Clone, Serialize, Deserialize)]
struct RadonData {
    /// Per county: (floor indicators, responses).
    floors: Vec<Vec<u8>>,
    y: Vec<Vec<f64>>,
}

pub struct Radon {
    data: RadonData,
    seed: u64,
}

impl Radon {
    pub fn from_params(p: RadonParams) -> Result<Self> {
        if p.counties == 0 || p.obs_per_county == 0 {
            return Err(Error::Model("radon needs counties >= 1 and obs >= 1".into()));
        }
        let data = match p.dataset {
            Some(ds) => serde_json::from_value(ds.observations)
                .map_err(|e| Error::Model(format!("radon dataset: {e}")))?,
            None => generate(p.counties, p.obs_per_county, p.seed),
        };
        Ok(Radon { data, seed: p.seed })
    }

    pub fn new(counties: usize, seed: u64) -> Self {
        Self::from_params(RadonParams { counties, seed, ..Default::default() }).unwrap()
    }
}

fn generate(j: usize, n_obs: usize, seed: u64) -> RadonData {
    let (mu_a, beta, sig_a, sig_y) = TRUE_PARAMS;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut floors = Vec::with_capacity(j);
    let mut y = Vec::with_capacity(j);
    for _ in 0..j {
        let alpha = mu_a + sig_a * rng.sample::<f64, _>(StandardNormal);
        let fl: Vec<u8> = (0..n_obs).map(|_| u8::from(rng.gen::<f64>() < 0.5)).collect();
        let obs: Vec<f64> = fl
            .iter()
            .map(|&x| alpha + beta * x as f64 + sig_y * rng.sample::<f64, _>(StandardNormal))
            .collect();
        floors.push(fl);
        y.push(obs);
    }
    RadonData { floors, y }
}

struct CountyBlock {
    resid: Vec<f64>, // y_ij - beta * x_ij
    mu_a: f64,
    sig_a: f64,
    sig_y: f64,
}

impl ScalarFn for CountyBlock {
    fn dim(&self) -> usize {
        1
    }
    fn call<S: AdScalar>(&self, a: &[S]) -> S {
        let mut acc = {
            let r = (a[0] - self.mu_a) / self.sig_a;
            -(r * r) * 0.5 - self.sig_a.ln() - 0.5 * LN_2PI
        };
        for &r in &self.resid {
            let t = (a[0] - r) / self.sig_y;
            acc = acc - t * t * 0.5 - (self.sig_y.ln() + 0.5 * LN_2PI);
        }
        acc
    }
}

impl HierarchicalModel for Radon {
    fn name(&self) -> &'static str {
        "radon"
    }
    fn theta_dim(&self) -> usize {
        4
    }
    fn latent_dim(&self) -> usize {
        self.data.y.len()
    }
    fn theta_names(&self) -> Vec<String> {
        vec!["mu_alpha".into(), "beta".into(), "log_sigma_alpha".into(), "log_sigma_y".into()]
    }
    fn prior_transform(&self, u: &[f64]) -> Vec<f64> {
        vec![
            uniform_quantile(-5.0, 5.0, u[0]),
            uniform_quantile(-3.0, 1.0, u[1]),
            uniform_quantile(-5.0, 2.0, u[2]),
            uniform_quantile(-5.0, 2.0, u[3]),
        ]
    }
    fn structure(&self) -> LatentStructure {
        LatentStructure::BlockDiagonal(vec![1; self.latent_dim()])
    }

    fn conditional(&self, theta: &[f64]) -> Result<Conditional> {
        let (mu_a, beta, sig_a, sig_y) = unpack(theta);
        let mk = |j: usize| CountyBlock {
            resid: self.data.y[j]
                .iter()
                .zip(&self.data.floors[j])
                .map(|(&yv, &x)| yv - beta * x as f64)
                .collect(),
            mu_a,
            sig_a,
            sig_y,
        };
        let n = self.latent_dim();
        let blocks: Vec<Arc<dyn DiffFunction>> =
            (0..n).map(|j| Arc::new(mk(j)) as Arc<dyn DiffFunction>).collect();
        let full = SumOfBlocks { blocks: (0..n).map(mk).collect(), sizes: vec![1; n], constant: 0.0 };
        Ok(Conditional {
            log_joint: Arc::new(full),
            blocks: Some(blocks),
            constant: 0.0,
            prior_precision: StructuredMatrix::BlockDiagonal(
                (0..n).map(|_| DMatrix::from_element(1, 1, 1.0 / (sig_a * sig_a))).collect(),
            ),
            prior_mean: vec![mu_a; n],
            jittered: false,
        })
    }

    fn has_exact_marginal(&self) -> bool {
        true
    }
    fn exact_marginal(&self, theta: &[f64]) -> Result<f64> {
        // one-factor Gaussian marginal per county: cov = σ_y² I + σ_α² 11^T
        let (mu_a, beta, sig_a, sig_y) = unpack(theta);
        let (va, vy) = (sig_a * sig_a, sig_y * sig_y);
        let mut total = 0.0;
        for (obs, fl) in self.data.y.iter().zip(&self.data.floors) {
            let m = obs.len() as f64;
            let (mut s1, mut s2) = (0.0, 0.0);
            for (&yv, &x) in obs.iter().zip(fl) {
                let r = yv - beta * x as f64 - mu_a;
                s1 += r;
                s2 += r * r;
            }
            let logdet = m * vy.ln() + (1.0 + m * va / vy).ln();
            let quad = (s2 - va * s1 * s1 / (vy + m * va)) / vy;
            total += -0.5 * (m * LN_2PI + logdet + quad);
        }
        Ok(total)
    }

    fn latent_prior_logpdf(&self, theta: &[f64], z: &[f64]) -> f64 {
        let (mu_a, _, sig_a, _) = unpack(theta);
        z.iter().map(|&a| ln_normal(a, mu_a, sig_a)).sum()
    }

    fn latent_prior_transform(&self, theta: &[f64], uz: &[f64]) -> Vec<f64> {
        let (mu_a, _, sig_a, _) = unpack(theta);
        uz.iter().map(|&u| mu_a + sig_a * norm_quantile(u)).collect()
    }

    fn dataset(&self) -> SyntheticDataset {
        SyntheticDataset {
            schema_version: DATASET_SCHEMA_VERSION,
            model: self.name().to_string(),
            seed: self.seed,
            truth: serde_json::json!({
                "mu_alpha": TRUE_PARAMS.0, "beta": TRUE_PARAMS.1,
                "sigma_alpha": TRUE_PARAMS.2, "sigma_y": TRUE_PARAMS.3,
            }),
            observations: serde_json::to_value(&self.data).unwrap(),
        }
    }
}

fn unpack(theta: &[f64]) -> (f64, f64, f64, f64) {
    (theta[0], theta[1], theta[2].exp(), theta[3].exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad;

    #[test]
    fn wide_prior_limit_removes_shrinkage() {
        // σ_α -> large: the conditional MAP of α_j tends to the county OLS mean
        let m = Radon::new(6, 42);
        let theta = [0.0, -0.7, 6.0, TRUE_PARAMS.3.ln()];
        let cond = m.conditional(&theta).unwrap();
        for j in 0..6 {
            let block = &cond.blocks.as_ref().unwrap()[j];
            // 1-d Newton from 0 on the block gives the mode
            let mut a = 0.0;
            for _ in 0..50 {
                let g = ad::gradient(block.as_ref(), &[a]).unwrap()[0];
                let h = ad::hessian_dense(block.as_ref(), &[a]).unwrap()[(0, 0)];
                a -= g / h;
            }
            let ols: f64 = m.data.y[j]
                .iter()
                .zip(&m.data.floors[j])
                .map(|(&y, &x)| y + 0.7 * x as f64)
                .sum::<f64>()
                / m.data.y[j].len() as f64;
            assert!((a - ols).abs() < 1e-3, "county {j}: map {a} vs ols {ols}");
        }
    }

    #[test]
    fn dataset_roundtrips_through_json() {
        let m = Radon::new(5, 42);
        let ds = m.dataset();
        let rebuilt = Radon::from_params(RadonParams {
            counties: 5,
            dataset: Some(ds.clone()),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(
            serde_json::to_string(&rebuilt.dataset().observations).unwrap(),
            serde_json::to_string(&ds.observations).unwrap()
        );
    }
}
