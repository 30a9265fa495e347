//! Funnel with a tanh-compressed observation model: the controlled failure
//! case for a local Gaussian collapse.
//!
//! θ ~ N(0, 9); z_j | θ ~ N(0, e^θ); x_j | z_j ~ N(tanh z_j, 1), J latents,
//! data generated at θ_true = 0. For θ < 0 the prior pins z near zero where
//! tanh is linear, so the latent conditional is near-Gaussian; for θ > 0 the
//! saturation of tanh grows flat shoulders no mode-centred Gaussian can
//! represent. The reference marginal is a product of 1-D quadratures.

use std::sync::Arc;

use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::quadrature::log_integral_widening;
use super::{
    ln_normal, norm_quantile, Conditional, HierarchicalModel, SumOfBlocks, SyntheticDataset,
    DATASET_SCHEMA_VERSION, LN_2PI,
};
use crate::ad::{AdScalar, DiffFunction, ScalarFn};
use crate::error::{Error, Result};
use crate::linalg::{LatentStructure, StructuredMatrix};
use nalgebra::DMatrix;

const THETA_SD: f64 = 3.0;
const QUAD_TOL: f64 = 1e-10;

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TanhFunnelParams {
    pub n_latent: usize,
    pub seed: u64,
    pub dataset: Option<SyntheticDataset>,
}

impl Default for TanhFunnelParams {
    fn default() -> Self {
        TanhFunnelParams { n_latent: 10, seed: 42, dataset: None }
    }
}

#[derive(Clone, Serialize, Deserialize)]
struct FunnelData {
    x: Vec<f64>,
}

pub struct TanhFunnel {
    data: FunnelData,
    seed: u64,
}

impl TanhFunnel {
    pub fn from_params(p: TanhFunnelParams) -> Result<Self> {
        if p.n_latent == 0 {
            return Err(Error::Model("tanh-funnel needs n_latent >= 1".into()));
        }
        let data = match p.dataset {
            Some(ds) => serde_json::from_value(ds.observations)
                .map_err(|e| Error::Model(format!("tanh-funnel dataset: {e}")))?,
            None => generate(p.n_latent, p.seed),
        };
        Ok(TanhFunnel { data, seed: p.seed })
    }

    pub fn new(n_latent: usize, seed: u64) -> Self {
        Self::from_params(TanhFunnelParams { n_latent, seed, ..Default::default() }).unwrap()
    }

    /// Reference marginal: Σ_j log ∫ N(x_j; tanh z, 1) N(z; 0, e^θ) dz.
    pub fn funnel_quadrature(&self, theta: f64) -> Result<f64> {
        let prior_sd = (0.5 * theta).exp();
        let mut total = 0.0;
        for &x in &self.data.x {
            let g = move |z: f64| {
                let r = x - z.tanh();
                -0.5 * r * r - 0.5 * LN_2PI + ln_normal(z, 0.0, prior_sd)
            };
            // the likelihood saturates beyond |z| ~ 5; cover both that feature
            // and 12 prior scales
            let half = 12.0 * prior_sd.max(1.0);
            total += log_integral_widening(&g, 0.0, half, QUAD_TOL)?;
        }
        Ok(total)
    }
}

fn generate(j: usize, seed: u64) -> FunnelData {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    // θ_true = 0, so z ~ N(0, 1)
    let x = (0..j)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            z.tanh() + rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    FunnelData { x }
}

struct FunnelBlock {
    x: f64,
    prior_sd: f64,
}

impl ScalarFn for FunnelBlock {
    fn dim(&self) -> usize {
        1
    }
    fn call<S: AdScalar>(&self, z: &[S]) -> S {
        let r = z[0].tanh() - self.x;
        let p = z[0] / self.prior_sd;
        -r * r * 0.5 - p * p * 0.5 - (self.prior_sd.ln() + LN_2PI)
    }
}

impl HierarchicalModel for TanhFunnel {
    fn name(&self) -> &'static str {
        "tanh-funnel"
    }
    fn theta_dim(&self) -> usize {
        1
    }
    fn latent_dim(&self) -> usize {
        self.data.x.len()
    }
    fn theta_names(&self) -> Vec<String> {
        vec!["theta".into()]
    }
    fn prior_transform(&self, u: &[f64]) -> Vec<f64> {
        vec![THETA_SD * norm_quantile(u[0])]
    }
    fn structure(&self) -> LatentStructure {
        LatentStructure::BlockDiagonal(vec![1; self.latent_dim()])
    }

    fn conditional(&self, theta: &[f64]) -> Result<Conditional> {
        let prior_sd = (0.5 * theta[0]).exp();
        let n = self.latent_dim();
        let mk = |j: usize| FunnelBlock { x: self.data.x[j], prior_sd };
        let blocks: Vec<Arc<dyn DiffFunction>> =
            (0..n).map(|j| Arc::new(mk(j)) as Arc<dyn DiffFunction>).collect();
        let full = SumOfBlocks { blocks: (0..n).map(mk).collect(), sizes: vec![1; n], constant: 0.0 };
        Ok(Conditional {
            log_joint: Arc::new(full),
            blocks: Some(blocks),
            constant: 0.0,
            prior_precision: StructuredMatrix::BlockDiagonal(
                (0..n).map(|_| DMatrix::from_element(1, 1, (-theta[0]).exp())).collect(),
            ),
            prior_mean: vec![0.0; n],
            jittered: false,
        })
    }

    fn has_exact_marginal(&self) -> bool {
        true
    }
    fn exact_marginal(&self, theta: &[f64]) -> Result<f64> {
        self.funnel_quadrature(theta[0])
    }

    fn latent_prior_logpdf(&self, theta: &[f64], z: &[f64]) -> f64 {
        let prior_sd = (0.5 * theta[0]).exp();
        z.iter().map(|&zj| ln_normal(zj, 0.0, prior_sd)).sum()
    }

    fn latent_prior_transform(&self, theta: &[f64], uz: &[f64]) -> Vec<f64> {
        let prior_sd = (0.5 * theta[0]).exp();
        uz.iter().map(|&u| prior_sd * norm_quantile(u)).collect()
    }

    fn dataset(&self) -> SyntheticDataset {
        SyntheticDataset {
            schema_version: DATASET_SCHEMA_VERSION,
            model: self.name().to_string(),
            seed: self.seed,
            truth: serde_json::json!({ "theta": 0.0 }),
            observations: serde_json::to_value(&self.data).unwrap(),
        }
    }
}
