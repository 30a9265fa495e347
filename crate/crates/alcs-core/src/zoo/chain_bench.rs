//! Synthetic nonlinear chain used by the Hessian benchmarks.
//!
//! An AR(1) backbone with a tanh observation term: genuinely nonquadratic so
//! the Hessian depends on the evaluation point, with exact bandwidth 1.

use crate::ad::{AdScalar, ScalarFn};

pub struct ChainBench {
    y: Vec<f64>,
    persistence: f64,
}

impl ChainBench {
    pub fn new(d_z: usize) -> Self {
        assert!(d_z >= 2);
        // fixed pseudo-data; the benchmark needs determinism, not realism
        let y = (0..d_z).map(|t| (0.37 * t as f64).sin() * 0.8).collect();
        ChainBench { y, persistence: 0.9 }
    }

    /// A representative evaluation point away from zero.
    pub fn probe_point(&self) -> Vec<f64> {
        (0..self.y.len()).map(|t| 0.3 * (0.11 * t as f64).cos()).collect()
    }
}

impl ScalarFn for ChainBench {
    fn dim(&self) -> usize {
        self.y.len()
    }
    fn call<S: AdScalar>(&self, z: &[S]) -> S {
        let mut acc = S::constant(0.0);
        for (t, &yt) in self.y.iter().enumerate() {
            let r = z[t].tanh() - yt;
            acc = acc - r * r * 0.5;
            let step = if t == 0 { z[0] } else { z[t] - z[t - 1] * self.persistence };
            acc = acc - step * step * 0.5;
        }
        acc
    }
}
