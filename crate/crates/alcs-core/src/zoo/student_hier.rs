//! Heavy-tailed hierarchical model with Student-t latent priors.
//!
//! θ = (μ, log σ) with uniform priors on (-3, 3) and (log 0.1, log 5);
//! latents z_i ~ Student-t(ν = 5, μ, σ) and observations y_i ~ N(z_i, 1).
//! The heavy-tailed prior makes the latent conditionals non-Gaussian, while
//! conditional independence across objects keeps the reference marginal a
//! product of 1-D integrals evaluated by adaptive quadrature.

use std::sync::Arc;

use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::gamma::ln_gamma;

use super::quadrature::log_integral_widening;
use super::{
    uniform_quantile, Conditional, HierarchicalModel, SumOfBlocks, SyntheticDataset,
    DATASET_SCHEMA_VERSION, LN_2PI,
};
use crate::ad::{AdScalar, DiffFunction, ScalarFn};
use crate::error::{Error, Result};
use crate::linalg::{LatentStructure, StructuredMatrix};
use nalgebra::DMatrix;

const MU_RANGE: (f64, f64) = (-3.0, 3.0);
const LOG_SIGMA_RANGE: (f64, f64) = (-2.302_585_092_994_046, 1.609_437_912_434_100_4);
const SIGMA_OBS: f64 = 1.0;
const QUAD_TOL: f64 = 1e-10;

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudentHierParams {
    pub n_obj: usize,
    pub nu_true: f64,
    pub seed: u64,
    pub dataset: Option<SyntheticDataset>,
}

impl Default for StudentHierParams {
    fn default() -> Self {
        StudentHierParams { n_obj: 50, nu_true: 5.0, seed: 42, dataset: None }
    }
}

#[derive(Clone, Serialize, Deserialize)]
struct StudentHierData {
    y: Vec<f64>,
}

pub struct StudentHier {
    data: StudentHierData,
    nu: f64,
    seed: u64,
}

impl StudentHier {
    pub fn from_params(p: StudentHierParams) -> Result<Self> {
        if p.n_obj == 0 {
            return Err(Error::Model("student-hier needs n_obj >= 1".into()));
        }
        if !(p.nu_true > 2.0) {
            return Err(Error::Model("student-hier needs nu_true > 2".into()));
        }
        let data = match p.dataset {
            Some(ds) => serde_json::from_value(ds.observations)
                .map_err(|e| Error::Model(format!("student-hier dataset: {e}")))?,
            None => generate(p.n_obj, p.nu_true, p.seed),
        };
        Ok(StudentHier { data, nu: p.nu_true, seed: p.seed })
    }

    pub fn new(n_obj: usize, seed: u64) -> Self {
        Self::from_params(StudentHierParams { n_obj, seed, ..Default::default() }).unwrap()
    }

    pub fn observations(&self) -> &[f64] {
        &self.data.y
    }

    /// Reference marginal by per-object adaptive quadrature:
    /// Σ_i log ∫ N(y_i; z, 1) t_ν(z; μ, σ) dz.
    pub fn quadrature_marginal(&self, theta: &[f64]) -> Result<f64> {
        let (mu, sigma) = (theta[0], theta[1].exp());
        let nu = self.nu;
        let lt_norm = ln_gamma((nu + 1.0) / 2.0)
            - ln_gamma(nu / 2.0)
            - 0.5 * (nu * std::f64::consts::PI).ln()
            - sigma.ln();
        let mut total = 0.0;
        for &y in &self.data.y {
            let g = move |z: f64| {
                let t = (z - mu) / sigma;
                let lt = lt_norm - 0.5 * (nu + 1.0) * (t * t / nu).ln_1p();
                let r = (y - z) / SIGMA_OBS;
                lt - 0.5 * r * r - SIGMA_OBS.ln() - 0.5 * LN_2PI
            };
            let centre = 0.5 * (mu + y);
            let half = 0.5 * (mu - y).abs() + 12.0 * sigma.max(SIGMA_OBS);
            total += log_integral_widening(&g, centre, half, QUAD_TOL)?;
        }
        Ok(total)
    }
}

fn generate(n: usize, nu: f64, seed: u64) -> StudentHierData {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let t = StudentT::new(nu).expect("valid dof");
    let y = (0..n)
        .map(|_| {
            let z: f64 = rng.sample(t); // μ_true = 0, σ_true = 1
            z + SIGMA_OBS * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    StudentHierData { y }
}

struct ObjectBlock {
    y: f64,
    mu: f64,
    sigma: f64,
    nu: f64,
    lt_norm: f64,
}

impl ScalarFn for ObjectBlock {
    fn dim(&self) -> usize {
        1
    }
    fn call<S: AdScalar>(&self, z: &[S]) -> S {
        let r = (z[0] - self.y) / SIGMA_OBS;
        let t = (z[0] - self.mu) / self.sigma;
        let lt = (t * t / self.nu).ln_1p() * (-0.5 * (self.nu + 1.0)) + self.lt_norm;
        lt - r * r * 0.5 - (SIGMA_OBS.ln() + 0.5 * LN_2PI)
    }
}

impl HierarchicalModel for StudentHier {
    fn name(&self) -> &'static str {
        "student-hier"
    }
    fn theta_dim(&self) -> usize {
        2
    }
    fn latent_dim(&self) -> usize {
        self.data.y.len()
    }
    fn theta_names(&self) -> Vec<String> {
        vec!["mu".into(), "log_sigma".into()]
    }
    fn prior_transform(&self, u: &[f64]) -> Vec<f64> {
        vec![
            uniform_quantile(MU_RANGE.0, MU_RANGE.1, u[0]),
            uniform_quantile(LOG_SIGMA_RANGE.0, LOG_SIGMA_RANGE.1, u[1]),
        ]
    }
    fn structure(&self) -> LatentStructure {
        LatentStructure::BlockDiagonal(vec![1; self.latent_dim()])
    }

    fn conditional(&self, theta: &[f64]) -> Result<Conditional> {
        let (mu, sigma) = (theta[0], theta[1].exp());
        let nu = self.nu;
        let lt_norm = ln_gamma((nu + 1.0) / 2.0)
            - ln_gamma(nu / 2.0)
            - 0.5 * (nu * std::f64::consts::PI).ln()
            - sigma.ln();
        let n = self.latent_dim();
        let mk = |i: usize| ObjectBlock { y: self.data.y[i], mu, sigma, nu, lt_norm };
        let blocks: Vec<Arc<dyn DiffFunction>> =
            (0..n).map(|i| Arc::new(mk(i)) as Arc<dyn DiffFunction>).collect();
        let full = SumOfBlocks { blocks: (0..n).map(mk).collect(), sizes: vec![1; n], constant: 0.0 };
        // prior curvature at the t mode: (ν+1)/(ν σ²)
        let curv = (nu + 1.0) / (nu * sigma * sigma);
        Ok(Conditional {
            log_joint: Arc::new(full),
            blocks: Some(blocks),
            constant: 0.0,
            prior_precision: StructuredMatrix::BlockDiagonal(
                (0..n).map(|_| DMatrix::from_element(1, 1, curv)).collect(),
            ),
            prior_mean: vec![mu; n],
            jittered: false,
        })
    }

    fn has_exact_marginal(&self) -> bool {
        true
    }
    fn exact_marginal(&self, theta: &[f64]) -> Result<f64> {
        self.quadrature_marginal(theta)
    }

    fn latent_prior_logpdf(&self, theta: &[f64], z: &[f64]) -> f64 {
        let (mu, sigma) = (theta[0], theta[1].exp());
        let nu = self.nu;
        let lt_norm = ln_gamma((nu + 1.0) / 2.0)
            - ln_gamma(nu / 2.0)
            - 0.5 * (nu * std::f64::consts::PI).ln()
            - sigma.ln();
        z.iter()
            .map(|&zi| {
                let t = (zi - mu) / sigma;
                lt_norm - 0.5 * (nu + 1.0) * (t * t / nu).ln_1p()
            })
            .sum()
    }

    fn latent_prior_transform(&self, theta: &[f64], uz: &[f64]) -> Vec<f64> {
        let (mu, sigma) = (theta[0], theta[1].exp());
        let t = StudentsT::new(0.0, 1.0, self.nu).expect("valid dof");
        uz.iter().map(|&u| mu + sigma * t.inverse_cdf(u.clamp(1e-14, 1.0 - 1e-14))).collect()
    }

    fn dataset(&self) -> SyntheticDataset {
        SyntheticDataset {
            schema_version: DATASET_SCHEMA_VERSION,
            model: self.name().to_string(),
            seed: self.seed,
            truth: serde_json::json!({ "mu": 0.0, "sigma": 1.0, "nu": self.nu }),
            observations: serde_json::to_value(&self.data).unwrap(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wide_sigma_flattens_the_prior() {
        // σ large: the marginal of each object approaches a very flat prior
        // times the Gaussian likelihood, so it scales like 1/σ.
        let m = StudentHier::new(5, 42);
        let a = m.quadrature_marginal(&[0.0, 3.0]).unwrap();
        let b = m.quadrature_marginal(&[0.0, 3.3]).unwrap();
        let expected_drop = 5.0 * (3.3 - 3.0);
        assert!(((a - b) - expected_drop).abs() < 0.05, "drop {} vs {}", a - b, expected_drop);
    }

    #[test]
    fn generated_data_mean_is_near_truth() {
        // empirical mean within 3 sd(y)/sqrt(10) of μ_true = 0 at N = 10
        let m = StudentHier::new(10, 42);
        let mean = m.data.y.iter().sum::<f64>() / 10.0;
        let sd_y = (5.0 / 3.0_f64 + 1.0).sqrt(); // t_5 variance + obs noise
        assert!(mean.abs() <= 3.0 * sd_y / 10.0_f64.sqrt(), "mean {mean}");
    }

    #[test]
    fn quadrature_matches_monte_carlo() {
        // brute-force oracle: millions of prior draws per object, 3 MC-σ agreement
        let m = StudentHier::new(3, 42);
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let t = StudentT::new(m.nu).unwrap();
        for theta in [[0.3, 0.1], [-0.5, -0.4], [1.2, 0.6], [0.0, -0.9], [-1.4, 0.3]] {
            let (mu, sigma) = (theta[0], theta[1].exp());
            let quad = m.quadrature_marginal(&theta).unwrap();
            let mut mc_total = 0.0;
            let mut mc_var_log = 0.0;
            let k = 2_000_000usize;
            for &y in &m.data.y {
                let mut sum = 0.0;
                let mut sumsq = 0.0;
                for _ in 0..k {
                    let z = mu + sigma * rng.sample::<f64, _>(t);
                    let w = (-0.5 * (y - z) * (y - z)).exp();
                    sum += w;
                    sumsq += w * w;
                }
                let mean = sum / k as f64;
                let var = (sumsq / k as f64 - mean * mean) / k as f64;
                mc_total += (mean / (2.0 * std::f64::consts::PI).sqrt()).ln();
                mc_var_log += var / (mean * mean);
            }
            let tol = 3.0 * mc_var_log.sqrt();
            assert!(
                (quad - mc_total).abs() <= tol,
                "theta {theta:?}: quad {quad} vs mc {mc_total} (tol {tol})"
            );
        }
    }
}
