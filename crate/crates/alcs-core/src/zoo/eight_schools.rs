//! The classic eight-schools hierarchical model.
//!
//! Hyperparameters θ = (μ, log τ) with uniform priors on (-10, 10) and
//! (-5, 5); school effects z_j ~ N(μ, τ²); observations y_j ~ N(z_j, σ_j²)
//! with the published standard errors. The conditional posterior of each z_j
//! is Gaussian by conjugacy, so the marginal likelihood is available in
//! closed form per school.

use std::sync::Arc;

use super::{
    ln_normal, norm_quantile, uniform_quantile, Conditional, HierarchicalModel, SumOfBlocks,
    SyntheticDataset, DATASET_SCHEMA_VERSION, LN_2PI,
};
use crate::ad::{AdScalar, ScalarFn};
use crate::error::Result;
use crate::linalg::{LatentStructure, StructuredMatrix};
use nalgebra::DMatrix;

const Y: [f64; 8] = [28.0, 8.0, -3.0, 7.0, -1.0, 1.0, 18.0, 12.0];
const SIGMA: [f64; 8] = [15.0, 10.0, 16.0, 11.0, 9.0, 11.0, 10.0, 18.0];

const MU_RANGE: (f64, f64) = (-10.0, 10.0);
const LOG_TAU_RANGE: (f64, f64) = (-5.0, 5.0);

pub struct EightSchools;

impl EightSchools {
    pub fn new() -> Self {
        EightSchools
    }

    /// Closed-form conjugate posterior mean of school j's effect.
    pub fn conjugate_mean(&self, theta: &[f64], j: usize) -> f64 {
        let (mu, tau) = (theta[0], theta[1].exp());
        let wy = 1.0 / (SIGMA[j] * SIGMA[j]);
        let wp = 1.0 / (tau * tau);
        (wy * Y[j] + wp * mu) / (wy + wp)
    }
}

impl Default for EightSchools {
    fn default() -> Self {
        Self::new()
    }
}

struct SchoolBlock {
    y: f64,
    sigma: f64,
    mu: f64,
    tau: f64,
}

impl ScalarFn for SchoolBlock {
    fn dim(&self) -> usize {
        1
    }
    fn call<S: AdScalar>(&self, z: &[S]) -> S {
        let robs = (z[0] - self.y) / self.sigma;
        let rpr = (z[0] - self.mu) / self.tau;
        -(robs * robs + rpr * rpr) * 0.5
            - (self.sigma.ln() + self.tau.ln() + LN_2PI)
    }
}

impl HierarchicalModel for EightSchools {
    fn name(&self) -> &'static str {
        "eight-schools"
    }
    fn theta_dim(&self) -> usize {
        2
    }
    fn latent_dim(&self) -> usize {
        8
    }
    fn theta_names(&self) -> Vec<String> {
        vec!["mu".into(), "log_tau".into()]
    }
    fn prior_transform(&self, u: &[f64]) -> Vec<f64> {
        vec![
            uniform_quantile(MU_RANGE.0, MU_RANGE.1, u[0]),
            uniform_quantile(LOG_TAU_RANGE.0, LOG_TAU_RANGE.1, u[1]),
        ]
    }
    fn structure(&self) -> LatentStructure {
        LatentStructure::BlockDiagonal(vec![1; 8])
    }

    fn conditional(&self, theta: &[f64]) -> Result<Conditional> {
        let (mu, tau) = (theta[0], theta[1].exp());
        let mk = |j: usize| SchoolBlock { y: Y[j], sigma: SIGMA[j], mu, tau };
        let blocks: Vec<Arc<dyn crate::ad::DiffFunction>> =
            (0..8).map(|j| Arc::new(mk(j)) as Arc<dyn crate::ad::DiffFunction>).collect();
        let full = SumOfBlocks { blocks: (0..8).map(mk).collect(), sizes: vec![1; 8], constant: 0.0 };
        Ok(Conditional {
            log_joint: Arc::new(full),
            blocks: Some(blocks),
            constant: 0.0,
            prior_precision: StructuredMatrix::BlockDiagonal(
                (0..8).map(|_| DMatrix::from_element(1, 1, 1.0 / (tau * tau))).collect(),
            ),
            prior_mean: vec![mu; 8],
            jittered: false,
        })
    }

    fn has_exact_marginal(&self) -> bool {
        true
    }
    fn exact_marginal(&self, theta: &[f64]) -> Result<f64> {
        let (mu, tau) = (theta[0], theta[1].exp());
        Ok((0..8)
            .map(|j| ln_normal(Y[j], mu, (tau * tau + SIGMA[j] * SIGMA[j]).sqrt()))
            .sum())
    }

    fn latent_prior_logpdf(&self, theta: &[f64], z: &[f64]) -> f64 {
        let (mu, tau) = (theta[0], theta[1].exp());
        z.iter().map(|&zj| ln_normal(zj, mu, tau)).sum()
    }

    fn latent_prior_transform(&self, theta: &[f64], uz: &[f64]) -> Vec<f64> {
        let (mu, tau) = (theta[0], theta[1].exp());
        uz.iter().map(|&u| mu + tau * norm_quantile(u)).collect()
    }

    fn dataset(&self) -> SyntheticDataset {
        SyntheticDataset {
            schema_version: DATASET_SCHEMA_VERSION,
            model: self.name().to_string(),
            seed: 0, // published data, nothing generated
            truth: serde_json::json!(null),
            observations: serde_json::json!({ "y": Y, "sigma": SIGMA }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn small_tau_limit_of_exact_marginal() {
        // τ -> 0: marginal tends to Σ log N(y_j; μ, σ_j²)
        let m = EightSchools::new();
        let theta = [3.0, -20.0_f64];
        let got = m.exact_marginal(&theta).unwrap();
        let want: f64 = (0..8).map(|j| ln_normal(Y[j], 3.0, SIGMA[j])).sum();
        assert_relative_eq!(got, want, epsilon = 1e-10);
    }

    #[test]
    fn conjugate_mean_interpolates_data_and_prior() {
        let m = EightSchools::new();
        // huge tau: mean ~ y_j; tiny tau: mean ~ mu
        let wide = [0.0, 5.0];
        let narrow = [0.0, -4.0];
        for j in 0..8 {
            assert_relative_eq!(m.conjugate_mean(&wide, j), Y[j], epsilon = 0.05 * Y[j].abs().max(1.0));
            assert!(m.conjugate_mean(&narrow, j).abs() < 0.05);
        }
    }

    #[test]
    fn prior_transform_covers_stated_bounds() {
        let m = EightSchools::new();
        assert_eq!(m.prior_transform(&[0.0, 0.0]), vec![-10.0, -5.0]);
        assert_eq!(m.prior_transform(&[1.0, 1.0]), vec![10.0, 5.0]);
    }
}
