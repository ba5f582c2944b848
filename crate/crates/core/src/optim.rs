//! First-order optimizers over flat parameter buffers.

use std::fmt;
use std::str::FromStr;

use crate::error::PauError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    /// Adaptive moments with bias correction.
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
    /// Plain gradient descent, mostly for debugging.
    Sgd,
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimizerKind::Adam { .. } => f.write_str("adam"),
            OptimizerKind::Sgd => f.write_str("sgd"),
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = PauError;

    fn from_str(s: &str) -> Result<Self, PauError> {
        match s {
            "adam" => Ok(OptimizerKind::default()),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(PauError::InvalidConfig(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// Optimizer state for one parameter buffer.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, n_params: usize) -> Self {
        let moments = match kind {
            OptimizerKind::Adam { .. } => n_params,
            OptimizerKind::Sgd => 0,
        };
        Optimizer {
            kind,
            lr,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                self.t += 1;
                let bc1 = 1.0 - beta1.powi(self.t);
                let bc2 = 1.0 - beta2.powi(self.t);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    params[i] -= self.lr * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
        }
    }
}
