//! Latent-free 2-D Gaussian benchmark with closed-form evidence.
//!
//! Flat prior on [-5, 5]², likelihood N(θ; 0, σ² I). With no latents the
//! collapse is the identity, which makes this the calibration target for the
//! sampler's evidence and bootstrap uncertainty.

use serde::Deserialize;
use statrs::function::erf::erf;

use super::{
    uniform_quantile, Conditional, HierarchicalModel, SyntheticDataset, DATASET_SCHEMA_VERSION,
    LN_2PI,
};
use crate::ad::{AdScalar, ScalarFn};
use crate::error::{Error, Result};
use crate::linalg::{LatentStructure, StructuredMatrix};
use std::sync::Arc;

const HALF_WIDTH: f64 = 5.0;

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Gauss2dParams {
    pub sigma: f64,
}

impl Default for Gauss2dParams {
    fn default() -> Self {
        Gauss2dParams { sigma: 1.0 }
    }
}

pub struct Gauss2d {
    sigma: f64,
}

impl Gauss2d {
    pub fn from_params(p: Gauss2dParams) -> Result<Self> {
        if !(p.sigma > 0.0) {
            return Err(Error::Model("gauss2d needs sigma > 0".into()));
        }
        Ok(Gauss2d { sigma: p.sigma })
    }

    pub fn new(sigma: f64) -> Self {
        Gauss2d { sigma }
    }

    /// Closed-form log evidence: the Gaussian mass inside the square over the
    /// prior volume.
    pub fn closed_form_log_evidence(&self) -> f64 {
        let m = erf(HALF_WIDTH / (self.sigma * std::f64::consts::SQRT_2));
        2.0 * m.ln() - (2.0 * HALF_WIDTH).powi(2).ln()
    }

    fn loglik(&self, theta: &[f64]) -> f64 {
        let s2 = self.sigma * self.sigma;
        -0.5 * (theta[0] * theta[0] + theta[1] * theta[1]) / s2 - LN_2PI - s2.ln()
    }
}

struct Empty {
    value: f64,
}

impl ScalarFn for Empty {
    fn dim(&self) -> usize {
        0
    }
    fn call<S: AdScalar>(&self, _x: &[S]) -> S {
        S::constant(self.value)
    }
}

impl HierarchicalModel for Gauss2d {
    fn name(&self) -> &'static str {
        "gauss2d"
    }
    fn theta_dim(&self) -> usize {
        2
    }
    fn latent_dim(&self) -> usize {
        0
    }
    fn theta_names(&self) -> Vec<String> {
        vec!["theta_0".into(), "theta_1".into()]
    }
    fn prior_transform(&self, u: &[f64]) -> Vec<f64> {
        vec![
            uniform_quantile(-HALF_WIDTH, HALF_WIDTH, u[0]),
            uniform_quantile(-HALF_WIDTH, HALF_WIDTH, u[1]),
        ]
    }
    fn structure(&self) -> LatentStructure {
        LatentStructure::Dense(0)
    }

    fn conditional(&self, theta: &[f64]) -> Result<Conditional> {
        let v = self.loglik(theta);
        Ok(Conditional {
            log_joint: Arc::new(Empty { value: v }),
            blocks: None,
            constant: v,
            prior_precision: StructuredMatrix::Dense(nalgebra::DMatrix::zeros(0, 0)),
            prior_mean: vec![],
            jittered: false,
        })
    }

    fn has_exact_marginal(&self) -> bool {
        true
    }
    fn exact_marginal(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.loglik(theta))
    }

    fn latent_prior_logpdf(&self, _theta: &[f64], _z: &[f64]) -> f64 {
        0.0
    }

    fn latent_prior_transform(&self, _theta: &[f64], _uz: &[f64]) -> Vec<f64> {
        vec![]
    }

    fn dataset(&self) -> SyntheticDataset {
        SyntheticDataset {
            schema_version: DATASET_SCHEMA_VERSION,
            model: self.name().to_string(),
            seed: 0,
            truth: serde_json::json!({ "sigma": self.sigma }),
            observations: serde_json::json!(null),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn closed_form_is_near_minus_ln_100_for_unit_sigma() {
        let m = Gauss2d::new(1.0);
        assert_relative_eq!(m.closed_form_log_evidence(), -(100.0_f64).ln(), epsilon = 1e-5);
    }

    #[test]
    fn likelihood_is_a_proper_density() {
        // numerically integrate exp(loglik) over the square / 100
        let m = Gauss2d::new(1.0);
        let n = 400;
        let h = 10.0 / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let t = [-5.0 + (i as f64 + 0.5) * h, -5.0 + (j as f64 + 0.5) * h];
                total += m.exact_marginal(&t).unwrap().exp() * h * h;
            }
        }
        assert_relative_eq!(total.ln(), 0.0, epsilon = 1e-4);
    }
}
