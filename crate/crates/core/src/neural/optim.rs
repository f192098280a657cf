use serde::{Deserialize, Serialize};

use super::{GradientBatch, QNetwork};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd { learning_rate: f64 },
    Adam {
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::adam(1e-4)
    }
}

impl OptimizerKind {
    pub fn adam(learning_rate: f64) -> Self {
        OptimizerKind::Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First-order optimiser with its running state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, parameter_count: usize) -> Self {
        let len = if matches!(kind, OptimizerKind::Adam { .. }) { parameter_count } else { 0 };
        Optimizer {
            kind,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one descent step. Rejects non-finite gradients without
    /// touching the network.
    pub fn apply(&mut self, net: &mut QNetwork, grads: &GradientBatch) -> Result<()> {
        if grads.grads.len() != net.parameter_count() {
            return Err(Error::Domain(format!(
                "gradient of length {} for {} parameters",
                grads.grads.len(),
                net.parameter_count()
            )));
        }
        if let Some(i) = grads.grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient at parameter {i}")));
        }
        self.steps += 1;
        net.step += 1;
        match self.kind {
            OptimizerKind::Sgd { learning_rate } => {
                for (p, g) in net.params_mut().iter_mut().zip(&grads.grads) {
                    *p -= learning_rate * g;
                }
            }
            OptimizerKind::Adam {
                learning_rate,
                beta1,
                beta2,
                epsilon,
            } => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let params = net.params_mut();
                let moments = self.first_moment.iter_mut().zip(self.second_moment.iter_mut());
                for ((p, &g), (m, v)) in params.iter_mut().zip(&grads.grads).zip(moments) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= learning_rate * (*m / c1) / ((*v / c2).sqrt() + epsilon);
                }
            }
        }
        Ok(())
    }
}
