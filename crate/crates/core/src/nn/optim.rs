//! SGD and Adam.

use serde::{Deserialize, Serialize};

use super::{Gradients, Network};
use crate::error::{EqcError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    config: OptimizerConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, param_count: usize) -> Self {
        let buf = match config {
            OptimizerConfig::Sgd { .. } => 0,
            OptimizerConfig::Adam { .. } => param_count,
        };
        OptimizerState {
            config,
            m: vec![0.0; buf],
            v: vec![0.0; buf],
            t: 0,
        }
    }

    pub fn config(&self) -> OptimizerConfig {
        self.config
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        if grads.0.len() != net.param_count() {
            return Err(EqcError::WidthMismatch {
                context: "gradient",
                expected: net.param_count(),
                got: grads.0.len(),
            });
        }
        if grads.0.iter().any(|g| !g.is_finite()) {
            return Err(EqcError::NonFinite("gradient"));
        }
        self.t += 1;
        let params = net.params_mut();
        match self.config {
            OptimizerConfig::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(&grads.0) {
                    *p -= lr * g;
                }
            }
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                if self.m.len() != params.len() {
                    return Err(EqcError::WidthMismatch {
                        context: "optimizer buffers",
                        expected: params.len(),
                        got: self.m.len(),
                    });
                }
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                for (((p, &g), m), v) in params.iter_mut().zip(&grads.0).zip(&mut self.m).zip(&mut self.v) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}
