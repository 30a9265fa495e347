//! Benchmark model registry.
//!
//! Every model exposes the same surface: a prior transform from the unit
//! hypercube to θ, a differentiable conditional log-joint over the latents at
//! fixed θ (with per-block evaluators when the likelihood factorises), the
//! declared latent Hessian structure, the conditional prior precision used
//! for whitening, and, where one exists, an exact reference marginal that is
//! entirely independent of the collapse machinery.

mod brownian;
mod chain_bench;
mod eight_schools;
mod gauss2d;
mod irt;
mod lgcp;
pub mod quadrature;
mod radon;
mod sne;
mod student_hier;
mod sv;
mod tanh_funnel;

pub use brownian::{kalman_marginal, Brownian};
pub use chain_bench::ChainBench;
pub use eight_schools::EightSchools;
pub use gauss2d::Gauss2d;
pub use irt::Irt;
pub use lgcp::Lgcp;
pub use radon::Radon;
pub use sne::{Cosmology, Sne};
pub use student_hier::StudentHier;
pub use sv::StochasticVolatility;
pub use tanh_funnel::TanhFunnel;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::ad::{AdScalar, DiffFunction, ScalarFn};
use crate::error::{Error, Result};
use crate::linalg::{LatentStructure, StructuredMatrix};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// The conditional latent problem at one fixed θ. Anything expensive that
/// depends on θ alone (kernel factorisations, distance tables) is computed
/// here once and captured by the evaluators.
pub struct Conditional {
    /// Complete log p*(z | θ, D) = log L(D | θ, z) + log π(z | θ).
    pub log_joint: Arc<dyn DiffFunction>,
    /// Per-block evaluators when the joint separates across latent blocks;
    /// `log_joint(z) = constant + Σ_b blocks[b](z_b)`.
    pub blocks: Option<Vec<Arc<dyn DiffFunction>>>,
    /// θ-only additive term not attributable to any block.
    pub constant: f64,
    /// Conditional prior precision H0(θ), the default whitening reference.
    pub prior_precision: StructuredMatrix,
    /// Conditional prior mean of z given θ, the cold-start point.
    pub prior_mean: Vec<f64>,
    /// Set when a kernel needed diagonal jitter to factorise.
    pub jittered: bool,
}

/// A hierarchical model: differentiable log-joint over (θ, z), prior
/// transform, latent structure, and optional exact-reference oracle.
pub trait HierarchicalModel: Send + Sync {
    fn name(&self) -> &'static str;
    fn theta_dim(&self) -> usize;
    fn latent_dim(&self) -> usize;
    fn theta_names(&self) -> Vec<String>;
    /// Map a unit-cube point to θ through the prior quantiles.
    fn prior_transform(&self, u: &[f64]) -> Vec<f64>;
    fn structure(&self) -> LatentStructure;
    fn conditional(&self, theta: &[f64]) -> Result<Conditional>;

    fn has_exact_marginal(&self) -> bool {
        false
    }
    /// Exact (or quadrature-grade) reference marginal likelihood of θ.
    fn exact_marginal(&self, _theta: &[f64]) -> Result<f64> {
        Err(Error::NoExactReference { model: self.name().to_string() })
    }

    fn latent_prior_logpdf(&self, theta: &[f64], z: &[f64]) -> f64;
    /// Conditional prior quantile map for joint-space nested sampling.
    fn latent_prior_transform(&self, theta: &[f64], uz: &[f64]) -> Vec<f64>;

    /// Plain data log-likelihood, for joint-space sampling.
    fn log_likelihood(&self, theta: &[f64], z: &[f64]) -> Result<f64> {
        Ok(self.conditional(theta)?.log_joint.eval(z) - self.latent_prior_logpdf(theta, z))
    }

    fn dataset(&self) -> SyntheticDataset;
}

/// Synthetic dataset record: regeneration from the same seed is bit-identical,
/// and the JSON form round-trips for export/import.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub schema_version: u32,
    pub model: String,
    pub seed: u64,
    pub truth: serde_json::Value,
    pub observations: serde_json::Value,
}

pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// Sum of independent per-block terms plus a θ-only constant.
pub struct SumOfBlocks<B> {
    pub blocks: Vec<B>,
    pub sizes: Vec<usize>,
    pub constant: f64,
}

impl<B: ScalarFn> ScalarFn for SumOfBlocks<B> {
    fn dim(&self) -> usize {
        self.sizes.iter().sum()
    }
    fn call<S: AdScalar>(&self, x: &[S]) -> S {
        let mut acc = S::constant(self.constant);
        let mut lo = 0;
        for (b, &s) in self.blocks.iter().zip(&self.sizes) {
            acc = acc + b.call(&x[lo..lo + s]);
            lo += s;
        }
        acc
    }
}

pub(crate) fn norm_quantile(u: f64) -> f64 {
    let u = u.clamp(1e-15, 1.0 - 1e-15);
    Normal::standard().inverse_cdf(u)
}

pub(crate) fn uniform_quantile(lo: f64, hi: f64, u: f64) -> f64 {
    lo + (hi - lo) * u
}

/// log N(x; mean, sd^2) on plain floats.
pub(crate) fn ln_normal(x: f64, mean: f64, sd: f64) -> f64 {
    let r = (x - mean) / sd;
    -0.5 * r * r - sd.ln() - 0.5 * LN_2PI
}

/// Numerically stable log(1 + exp(x)) on any scalar.
pub(crate) fn softplus<S: AdScalar>(x: S) -> S {
    if x.value() > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Registered model names, as addressable from the CLI.
pub fn model_names() -> Vec<&'static str> {
    vec![
        "eight-schools",
        "radon",
        "brownian",
        "lgcp",
        "sv",
        "irt",
        "sne",
        "student-hier",
        "tanh-funnel",
        "gauss2d",
    ]
}

/// Build a model from its registry name and a JSON parameter object.
/// Unknown parameter keys are rejected.
pub fn build_model(name: &str, params: &serde_json::Value) -> Result<Arc<dyn HierarchicalModel>> {
    fn parse<T: for<'de> Deserialize<'de>>(params: &serde_json::Value) -> Result<T> {
        serde_json::from_value(params.clone()).map_err(|e| Error::Model(e.to_string()))
    }
    match name {
        "eight-schools" => Ok(Arc::new(EightSchools::new())),
        "radon" => Ok(Arc::new(Radon::from_params(parse(params)?)?)),
        "brownian" => Ok(Arc::new(Brownian::from_params(parse(params)?)?)),
        "lgcp" => Ok(Arc::new(Lgcp::from_params(parse(params)?)?)),
        "sv" => Ok(Arc::new(StochasticVolatility::from_params(parse(params)?)?)),
        "irt" => Ok(Arc::new(Irt::from_params(parse(params)?)?)),
        "sne" => Ok(Arc::new(Sne::from_params(parse(params)?)?)),
        "student-hier" => Ok(Arc::new(StudentHier::from_params(parse(params)?)?)),
        "tanh-funnel" => Ok(Arc::new(TanhFunnel::from_params(parse(params)?)?)),
        "gauss2d" => Ok(Arc::new(Gauss2d::from_params(parse(params)?)?)),
        other => Err(Error::Model(format!(
            "unknown model '{other}'; known models: {}",
            model_names().join(", ")
        ))),
    }
}

/// Every registered model at its desk-scale default size.
pub fn default_models() -> Vec<Arc<dyn HierarchicalModel>> {
    model_names()
        .into_iter()
        .map(|n| build_model(n, &serde_json::json!({})).expect("defaults are valid"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_builds_every_default_model() {
        for name in model_names() {
            let m = build_model(name, &serde_json::json!({})).unwrap();
            assert_eq!(m.name(), name);
            assert_eq!(m.structure().dim(), m.latent_dim());
        }
    }

    #[test]
    fn unknown_model_is_rejected() {
        assert!(build_model("nope", &serde_json::json!({})).is_err());
    }

    #[test]
    fn unknown_params_are_rejected() {
        let r = build_model("brownian", &serde_json::json!({"bogus_key": 3}));
        assert!(r.is_err());
    }

    #[test]
    fn log_joint_finite_at_prior_means() {
        for m in default_models() {
            let theta = m.prior_transform(&vec![0.5; m.theta_dim()]);
            let cond = m.conditional(&theta).unwrap();
            let v = cond.log_joint.eval(&cond.prior_mean);
            assert!(v.is_finite(), "{} log-joint not finite at prior mean", m.name());
        }
    }

    #[test]
    fn blocks_sum_to_full_log_joint() {
        for m in default_models() {
            let theta = m.prior_transform(&vec![0.45; m.theta_dim()]);
            let cond = m.conditional(&theta).unwrap();
            let Some(blocks) = &cond.blocks else { continue };
            let sizes = match m.structure() {
                LatentStructure::BlockDiagonal(s) => s,
                _ => panic!("blocks imply block-diagonal structure"),
            };
            let z: Vec<f64> =
                (0..m.latent_dim()).map(|i| cond.prior_mean[i] + 0.1 * (i as f64 + 1.0)).collect();
            let mut total = cond.constant;
            let mut lo = 0;
            for (b, &s) in blocks.iter().zip(&sizes) {
                total += b.eval(&z[lo..lo + s]);
                lo += s;
            }
            let full = cond.log_joint.eval(&z);
            assert!(
                (total - full).abs() <= 1e-9 * (1.0 + full.abs()),
                "{}: blocks {total} vs full {full}",
                m.name()
            );
        }
    }

    #[test]
    fn dataset_regeneration_is_bit_identical() {
        for name in model_names() {
            let a = build_model(name, &serde_json::json!({})).unwrap().dataset();
            let b = build_model(name, &serde_json::json!({})).unwrap().dataset();
            assert_eq!(
                serde_json::to_string(&a).unwrap(),
                serde_json::to_string(&b).unwrap(),
                "{name} dataset not reproducible"
            );
        }
    }

    #[test]
    fn different_seed_changes_data() {
        let a = build_model("brownian", &serde_json::json!({"seed": 42})).unwrap().dataset();
        let b = build_model("brownian", &serde_json::json!({"seed": 43})).unwrap().dataset();
        assert_ne!(
            serde_json::to_string(&a.observations).unwrap(),
            serde_json::to_string(&b.observations).unwrap()
        );
    }

    #[test]
    fn latent_prior_transform_consistent_with_logpdf() {
        // transformed draws should score finite under the conditional prior
        for m in default_models() {
            if m.latent_dim() == 0 {
                continue;
            }
            let theta = m.prior_transform(&vec![0.55; m.theta_dim()]);
            let u: Vec<f64> = (0..m.latent_dim()).map(|i| 0.3 + 0.4 * (i % 2) as f64).collect();
            let z = m.latent_prior_transform(&theta, &u);
            assert_eq!(z.len(), m.latent_dim());
            assert!(m.latent_prior_logpdf(&theta, &z).is_finite(), "{}", m.name());
        }
    }
}
