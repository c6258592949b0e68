//! SGD and Adam over flat parameter vectors.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Optimizer configuration, serializable into run records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerSpec {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerSpec {
    pub fn sgd(lr: f64) -> Self {
        OptimizerSpec::Sgd { lr }
    }

    /// Adam with the standard moment defaults.
    pub fn adam(lr: f64) -> Self {
        OptimizerSpec::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn lr(&self) -> f64 {
        match self {
            OptimizerSpec::Sgd { lr } => *lr,
            OptimizerSpec::Adam { lr, .. } => *lr,
        }
    }
}

/// Stateful optimizer. Gradient-descent convention; callers maximizing an
/// objective pass the negated gradient.
#[derive(Debug, Clone)]
pub struct Optimizer {
    spec: OptimizerSpec,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(spec: OptimizerSpec) -> Result<Self> {
        let lr = spec.lr();
        if !lr.is_finite() || lr < 0.0 {
            return Err(Error::bad_param("lr", "must be finite and non-negative"));
        }
        if let OptimizerSpec::Adam { beta1, beta2, eps, .. } = spec {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                return Err(Error::bad_param("adam", "betas in [0,1), eps > 0"));
            }
        }
        Ok(Optimizer {
            spec,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        })
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        Optimizer::new(OptimizerSpec::sgd(lr))
    }

    pub fn adam(lr: f64) -> Result<Self> {
        Optimizer::new(OptimizerSpec::adam(lr))
    }

    pub fn spec(&self) -> OptimizerSpec {
        self.spec
    }

    /// Apply one descent step in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len(), "param/grad length mismatch");
        match self.spec {
            OptimizerSpec::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            OptimizerSpec::Adam { lr, beta1, beta2, eps } => {
                if self.m.is_empty() {
                    self.m = vec![0.0; params.len()];
                    self.v = vec![0.0; params.len()];
                }
                assert_eq!(self.m.len(), params.len(), "Adam state size mismatch");
                self.t += 1;
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let mut params = vec![1.0, -2.0, 3.0];
        let grads = vec![10.0, 10.0, 10.0];
        let mut sgd = Optimizer::sgd(0.0).unwrap();
        sgd.step(&mut params, &grads);
        assert_eq!(params, vec![1.0, -2.0, 3.0]);
        let mut adam = Optimizer::adam(0.0).unwrap();
        adam.step(&mut params, &grads);
        assert_eq!(params, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn sgd_step_is_lr_times_grad() {
        let mut params = vec![0.0, 0.0];
        let grads = vec![1.0, 2.0];
        let mut sgd = Optimizer::sgd(1.0).unwrap();
        sgd.step(&mut params, &grads);
        assert_eq!(params, vec![-1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_matches_hand_formula() {
        // First bias-corrected step: lr * g / (|g| + eps).
        let lr = 0.01;
        let eps = 1e-8;
        let grads = vec![0.3, -2.0, 0.0001];
        let mut params = vec![0.0; 3];
        let mut adam = Optimizer::adam(lr).unwrap();
        adam.step(&mut params, &grads);
        for (p, g) in params.iter().zip(&grads) {
            let expect = -lr * g / (g.abs() + eps);
            assert!((p - expect).abs() < 1e-15, "{p} vs {expect}");
        }
        // Magnitude is about lr for non-tiny gradients.
        assert!((params[0].abs() - lr).abs() < 1e-6);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        // min (p - 3)^2
        let mut params = vec![0.0];
        let mut adam = Optimizer::adam(0.1).unwrap();
        for _ in 0..2_000 {
            let g = 2.0 * (params[0] - 3.0);
            adam.step(&mut params, &[g]);
        }
        assert!((params[0] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(Optimizer::sgd(f64::NAN).is_err());
        assert!(Optimizer::sgd(-0.1).is_err());
        assert!(Optimizer::new(OptimizerSpec::Adam {
            lr: 0.1,
            beta1: 1.0,
            beta2: 0.999,
            eps: 1e-8
        })
        .is_err());
    }
}
