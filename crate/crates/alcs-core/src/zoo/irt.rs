//! One-parameter logistic item response theory.
//!
//! θ = μ_ability ~ N(0.75, 1); abilities a_i and difficulties b_j carry unit
//! normal priors and responses are Bernoulli with success probability
//! logistic(μ + a_i - b_j) on a partially observed response grid. Abilities
//! and difficulties couple through the shared responses, so the latent
//! Hessian is treated as dense at desk scale.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    ln_normal, norm_quantile, softplus, Conditional, HierarchicalModel, SyntheticDataset,
    DATASET_SCHEMA_VERSION, LN_2PI,
};
use crate::ad::{AdScalar, ScalarFn};
use crate::error::{Error, Result};
use crate::linalg::{LatentStructure, StructuredMatrix};
use nalgebra::DMatrix;

const PRIOR_MU: (f64, f64) = (0.75, 1.0);
const TRUE_MU: f64 = 0.75;

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IrtParams {
    pub students: usize,
    pub questions: usize,
    pub fill: f64,
    pub seed: u64,
    pub dataset: Option<SyntheticDataset>,
}

impl Default for IrtParams {
    fn default() -> Self {
        IrtParams { students: 40, questions: 10, fill: 0.75, seed: 42, dataset: None }
    }
}

#[derive(Clone, Serialize, Deserialize)]
struct IrtData {
    /// Observed triples (student, question, correct).
    responses: Vec<(u32, u32, u8)>,
}

pub struct Irt {
    students: usize,
    questions: usize,
    data: IrtData,
    seed: u64,
}

impl Irt {
    pub fn from_params(p: IrtParams) -> Result<Self> {
        if p.students == 0 || p.questions == 0 {
            return Err(Error::Model("irt needs students >= 1 and questions >= 1".into()));
        }
        if !(0.0..=1.0).contains(&p.fill) {
            return Err(Error::Model("irt fill must be in [0, 1]".into()));
        }
        let data = match p.dataset {
            Some(ds) => serde_json::from_value(ds.observations)
                .map_err(|e| Error::Model(format!("irt dataset: {e}")))?,
            None => generate(p.students, p.questions, p.fill, p.seed),
        };
        Ok(Irt { students: p.students, questions: p.questions, data, seed: p.seed })
    }

    pub fn new(students: usize, questions: usize, seed: u64) -> Self {
        Self::from_params(IrtParams { students, questions, seed, ..Default::default() }).unwrap()
    }

    /// All-correct variant for sign checks.
    pub fn all_correct(students: usize, questions: usize) -> Self {
        let responses = (0..students as u32)
            .flat_map(|i| (0..questions as u32).map(move |j| (i, j, 1u8)))
            .collect();
        Irt { students, questions, data: IrtData { responses }, seed: 0 }
    }
}

fn generate(n_s: usize, n_q: usize, fill: f64, seed: u64) -> IrtData {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let a: Vec<f64> = (0..n_s).map(|_| rng.sample(StandardNormal)).collect();
    let b: Vec<f64> = (0..n_q).map(|_| rng.sample(StandardNormal)).collect();
    let mut responses = Vec::new();
    for i in 0..n_s {
        for j in 0..n_q {
            if rng.gen::<f64>() < fill {
                let p = 1.0 / (1.0 + (-(TRUE_MU + a[i] - b[j])).exp());
                responses.push((i as u32, j as u32, u8::from(rng.gen::<f64>() < p)));
            }
        }
    }
    IrtData { responses }
}

struct IrtFn {
    students: usize,
    questions: usize,
    responses: Vec<(u32, u32, u8)>,
    mu: f64,
}

impl ScalarFn for IrtFn {
    fn dim(&self) -> usize {
        self.students + self.questions
    }
    fn call<S: AdScalar>(&self, z: &[S]) -> S {
        let mut acc = S::constant(0.0);
        for &zi in z {
            acc = acc - zi * zi * 0.5 - 0.5 * LN_2PI;
        }
        for &(i, j, y) in &self.responses {
            let eta = z[i as usize] + self.mu - z[self.students + j as usize];
            // log Bernoulli(y; logistic(eta)) without loss of precision
            acc = acc
                - if y == 1 {
                    softplus(-eta)
                } else {
                    softplus(eta)
                };
        }
        acc
    }
}

impl HierarchicalModel for Irt {
    fn name(&self) -> &'static str {
        "irt"
    }
    fn theta_dim(&self) -> usize {
        1
    }
    fn latent_dim(&self) -> usize {
        self.students + self.questions
    }
    fn theta_names(&self) -> Vec<String> {
        vec!["mu_ability".into()]
    }
    fn prior_transform(&self, u: &[f64]) -> Vec<f64> {
        vec![PRIOR_MU.0 + PRIOR_MU.1 * norm_quantile(u[0])]
    }
    fn structure(&self) -> LatentStructure {
        LatentStructure::Dense(self.latent_dim())
    }

    fn conditional(&self, theta: &[f64]) -> Result<Conditional> {
        let n = self.latent_dim();
        let f = IrtFn {
            students: self.students,
            questions: self.questions,
            responses: self.data.responses.clone(),
            mu: theta[0],
        };
        Ok(Conditional {
            log_joint: Arc::new(f),
            blocks: None,
            constant: 0.0,
            prior_precision: StructuredMatrix::Dense(DMatrix::identity(n, n)),
            prior_mean: vec![0.0; n],
            jittered: false,
        })
    }

    fn latent_prior_logpdf(&self, _theta: &[f64], z: &[f64]) -> f64 {
        z.iter().map(|&v| ln_normal(v, 0.0, 1.0)).sum()
    }

    fn latent_prior_transform(&self, _theta: &[f64], uz: &[f64]) -> Vec<f64> {
        uz.iter().map(|&u| norm_quantile(u)).collect()
    }

    fn dataset(&self) -> SyntheticDataset {
        SyntheticDataset {
            schema_version: DATASET_SCHEMA_VERSION,
            model: self.name().to_string(),
            seed: self.seed,
            truth: serde_json::json!({ "mu_ability": TRUE_MU }),
            observations: serde_json::to_value(&self.data).unwrap(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad;

    #[test]
    fn irt_fn_dim_matches_model() {
        let m = Irt::new(7, 5, 42);
        let cond = m.conditional(&[0.75]).unwrap();
        assert_eq!(cond.log_joint.dim(), 12);
    }

    #[test]
    fn all_correct_pushes_abilities_positive() {
        let m = Irt::all_correct(5, 4);
        let cond = m.conditional(&[0.0]).unwrap();
        // ascend the gradient a few steps from zero; abilities must go up
        let mut z = vec![0.0; m.latent_dim()];
        for _ in 0..200 {
            let g = ad::gradient(cond.log_joint.as_ref(), &z).unwrap();
            for (zi, gi) in z.iter_mut().zip(&g) {
                *zi += 0.1 * gi;
            }
        }
        for ability in &z[..5] {
            assert!(*ability > 0.0, "ability at MAP should be positive, got {ability}");
        }
    }
}
