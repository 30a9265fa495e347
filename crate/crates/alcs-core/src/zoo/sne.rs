//! Hierarchical type Ia supernova standardisation.
//!
//! Each object carries latent stretch/colour pairs per synthetic band,
//! z_i = (x_1, c, ...) ~ N(0, diag(σ_x², σ_c², ...)), entering the observed
//! band magnitude through m = μ(z_obs; θ) + M - α x_1 + β c plus Gaussian
//! noise. Both factors are Gaussian, so the per-object marginal is analytic
//! and serves as the exact reference. The likelihood factorises over objects:
//! the Hessian is block-diagonal with one d_block × d_block block per object.
//!
//! Cosmologies: flat ΛCDM with θ = (Ω_m, M), or wCDM adding a constant
//! dark-energy equation of state w0. Distances use c/H0 with H0 = 70 (any
//! rescaling is absorbed by M).

use std::sync::Arc;

use rand::SeedableRng;
use rand::Rng;
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

const HUBBLE_DISTANCE: f64 = 299_792.458 / 70.0; // Mpc
const SIGMA_X1: f64 = 1.0;
const SIGMA_C: f64 = 0.1;
const SIGMA_OBS: f64 = 0.15;
const M_TRUE: f64 = -19.3;
const OMEGA_M_TRUE: f64 = 0.3;

const OMEGA_M_RANGE: (f64, f64) = (0.05, 0.6);
const M_RANGE: (f64, f64) = (-20.0, -18.6);
const W0_RANGE: (f64, f64) = (-1.6, -0.4);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cosmology {
    Lcdm,
    Wcdm,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SneParams {
    pub n_sne: usize,
    pub d_block: usize,
    pub cosmology: Cosmology,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub dataset: Option<SyntheticDataset>,
}

impl Default for SneParams {
    fn default() -> Self {
        SneParams {
            n_sne: 64,
            d_block: 2,
            cosmology: Cosmology::Lcdm,
            alpha: 0.14,
            beta: 3.1,
            seed: 42,
            dataset: None,
        }
    }
}

#[derive(Clone, Serialize, Deserialize)]
struct SneData {
    redshifts: Vec<f64>,
    /// Observed magnitudes per object, one per band (d_block / 2 bands).
    mags: Vec<Vec<f64>>,
}

pub struct Sne {
    data: SneData,
    cosmology: Cosmology,
    d_block: usize,
    alpha: f64,
    beta: f64,
    seed: u64,
}

impl Sne {
    pub fn from_params(p: SneParams) -> Result<Self> {
        if p.n_sne == 0 {
            return Err(Error::Model("sne needs n_sne >= 1".into()));
        }
        if p.d_block == 0 || p.d_block % 2 != 0 {
            return Err(Error::Model("sne d_block must be a positive even number".into()));
        }
        let data = match p.dataset {
            Some(ds) => serde_json::from_value(ds.observations)
                .map_err(|e| Error::Model(format!("sne dataset: {e}")))?,
            None => generate(p.n_sne, p.d_block / 2, p.alpha, p.beta, p.seed),
        };
        Ok(Sne {
            data,
            cosmology: p.cosmology,
            d_block: p.d_block,
            alpha: p.alpha,
            beta: p.beta,
            seed: p.seed,
        })
    }

    pub fn new(n_sne: usize, cosmology: Cosmology, seed: u64) -> Self {
        Self::from_params(SneParams { n_sne, cosmology, seed, ..Default::default() }).unwrap()
    }

    fn bands(&self) -> usize {
        self.d_block / 2
    }

    /// Distance moduli for all objects at θ, one cumulative pass over the
    /// sorted redshift grid (5-point Gauss-Legendre per segment).
    pub fn distance_moduli(&self, theta: &[f64]) -> Vec<f64> {
        let omega_m = theta[0];
        let w0 = if self.cosmology == Cosmology::Wcdm { theta[2] } else { -1.0 };
        let e_inv = |z: f64| {
            let a = 1.0 + z;
            1.0 / (omega_m * a.powi(3) + (1.0 - omega_m) * a.powf(3.0 * (1.0 + w0))).sqrt()
        };
        // 5-point Gauss-Legendre nodes on [-1, 1]
        const X: [f64; 5] = [
            -0.906_179_845_938_664,
            -0.538_469_310_105_683,
            0.0,
            0.538_469_310_105_683,
            0.906_179_845_938_664,
        ];
        const W: [f64; 5] = [
            0.236_926_885_056_189,
            0.478_628_670_499_366,
            0.568_888_888_888_889,
            0.478_628_670_499_366,
            0.236_926_885_056_189,
        ];
        let mut acc = 0.0;
        let mut prev = 0.0;
        self.data
            .redshifts
            .iter()
            .map(|&z| {
                let (half, mid) = (0.5 * (z - prev), 0.5 * (z + prev));
                let seg: f64 =
                    X.iter().zip(W).map(|(&x, w)| w * e_inv(mid + half * x)).sum::<f64>() * half;
                acc += seg;
                prev = z;
                let d_l = (1.0 + z) * HUBBLE_DISTANCE * acc;
                5.0 * d_l.log10() + 25.0
            })
            .collect()
    }
}

fn generate(n: usize, bands: usize, alpha: f64, beta: f64, seed: u64) -> SneData {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let redshifts: Vec<f64> =
        (0..n).map(|i| 0.1 + 0.9 * i as f64 / (n.max(2) - 1) as f64).collect();
    let probe = Sne {
        data: SneData { redshifts: redshifts.clone(), mags: vec![vec![]; n] },
        cosmology: Cosmology::Lcdm,
        d_block: 2 * bands,
        alpha,
        beta,
        seed,
    };
    let mu = probe.distance_moduli(&[OMEGA_M_TRUE, M_TRUE]);
    let mags = (0..n)
        .map(|i| {
            (0..bands)
                .map(|_| {
                    let x1 = SIGMA_X1 * rng.sample::<f64, _>(StandardNormal);
                    let c = SIGMA_C * rng.sample::<f64, _>(StandardNormal);
                    mu[i] + M_TRUE - alpha * x1
                        + beta * c
                        + SIGMA_OBS * rng.sample::<f64, _>(StandardNormal)
                })
                .collect()
        })
        .collect();
    SneData { redshifts, mags }
}

struct SneBlock {
    mags: Vec<f64>,
    mu_plus_m: f64,
    alpha: f64,
    beta: f64,
}

impl ScalarFn for SneBlock {
    fn dim(&self) -> usize {
        2 * self.mags.len()
    }
    fn call<S: AdScalar>(&self, z: &[S]) -> S {
        let mut acc = S::constant(0.0);
        for (b, &m_obs) in self.mags.iter().enumerate() {
            let x1 = z[2 * b];
            let c = z[2 * b + 1];
            let pred = x1 * (-self.alpha) + c * self.beta + self.mu_plus_m;
            let r = (pred - m_obs) / SIGMA_OBS;
            acc = acc - r * r * 0.5 - (SIGMA_OBS.ln() + 0.5 * LN_2PI);
            let rx = x1 / SIGMA_X1;
            let rc = c / SIGMA_C;
            acc = acc
                - rx * rx * 0.5
                - rc * rc * 0.5
                - (SIGMA_X1.ln() + SIGMA_C.ln() + LN_2PI);
        }
        acc
    }
}

impl HierarchicalModel for Sne {
    fn name(&self) -> &'static str {
        "sne"
    }
    fn theta_dim(&self) -> usize {
        match self.cosmology {
            Cosmology::Lcdm => 2,
            Cosmology::Wcdm => 3,
        }
    }
    fn latent_dim(&self) -> usize {
        self.data.redshifts.len() * self.d_block
    }
    fn theta_names(&self) -> Vec<String> {
        let mut names = vec!["omega_m".to_string(), "abs_mag".to_string()];
        if self.cosmology == Cosmology::Wcdm {
            names.push("w0".to_string());
        }
        names
    }
    fn prior_transform(&self, u: &[f64]) -> Vec<f64> {
        let mut theta = vec![
            uniform_quantile(OMEGA_M_RANGE.0, OMEGA_M_RANGE.1, u[0]),
            uniform_quantile(M_RANGE.0, M_RANGE.1, u[1]),
        ];
        if self.cosmology == Cosmology::Wcdm {
            theta.push(uniform_quantile(W0_RANGE.0, W0_RANGE.1, u[2]));
        }
        theta
    }
    fn structure(&self) -> LatentStructure {
        LatentStructure::BlockDiagonal(vec![self.d_block; self.data.redshifts.len()])
    }

    fn conditional(&self, theta: &[f64]) -> Result<Conditional> {
        let mu = self.distance_moduli(theta);
        let m_abs = theta[1];
        let n = self.data.redshifts.len();
        let mk = |i: usize| SneBlock {
            mags: self.data.mags[i].clone(),
            mu_plus_m: mu[i] + m_abs,
            alpha: self.alpha,
            beta: self.beta,
        };
        let blocks: Vec<Arc<dyn DiffFunction>> =
            (0..n).map(|i| Arc::new(mk(i)) as Arc<dyn DiffFunction>).collect();
        let full = SumOfBlocks {
            blocks: (0..n).map(mk).collect(),
            sizes: vec![self.d_block; n],
            constant: 0.0,
        };
        let mut prior_block = DMatrix::zeros(self.d_block, self.d_block);
        for b in 0..self.bands() {
            prior_block[(2 * b, 2 * b)] = 1.0 / (SIGMA_X1 * SIGMA_X1);
            prior_block[(2 * b + 1, 2 * b + 1)] = 1.0 / (SIGMA_C * SIGMA_C);
        }
        Ok(Conditional {
            log_joint: Arc::new(full),
            blocks: Some(blocks),
            constant: 0.0,
            prior_precision: StructuredMatrix::BlockDiagonal(vec![prior_block; n]),
            prior_mean: vec![0.0; self.latent_dim()],
            jittered: false,
        })
    }

    fn has_exact_marginal(&self) -> bool {
        true
    }
    fn exact_marginal(&self, theta: &[f64]) -> Result<f64> {
        // per band: m ~ N(μ + M, σ_obs² + α² σ_x² + β² σ_c²)
        let mu = self.distance_moduli(theta);
        let sd = (SIGMA_OBS * SIGMA_OBS
            + self.alpha * self.alpha * SIGMA_X1 * SIGMA_X1
            + self.beta * self.beta * SIGMA_C * SIGMA_C)
            .sqrt();
        Ok(self
            .data
            .mags
            .iter()
            .zip(&mu)
            .map(|(mags, &mui)| {
                mags.iter().map(|&m| ln_normal(m, mui + theta[1], sd)).sum::<f64>()
            })
            .sum())
    }

    fn latent_prior_logpdf(&self, _theta: &[f64], z: &[f64]) -> f64 {
        z.chunks(2)
            .map(|pair| ln_normal(pair[0], 0.0, SIGMA_X1) + ln_normal(pair[1], 0.0, SIGMA_C))
            .sum()
    }

    fn latent_prior_transform(&self, _theta: &[f64], uz: &[f64]) -> Vec<f64> {
        uz.iter()
            .enumerate()
            .map(|(k, &u)| {
                let sd = if k % 2 == 0 { SIGMA_X1 } else { SIGMA_C };
                sd * norm_quantile(u)
            })
            .collect()
    }

    fn dataset(&self) -> SyntheticDataset {
        SyntheticDataset {
            schema_version: DATASET_SCHEMA_VERSION,
            model: self.name().to_string(),
            seed: self.seed,
            truth: serde_json::json!({
                "omega_m": OMEGA_M_TRUE, "abs_mag": M_TRUE,
                "alpha": self.alpha, "beta": self.beta,
            }),
            observations: serde_json::to_value(&self.data).unwrap(),
        }
    }
}
