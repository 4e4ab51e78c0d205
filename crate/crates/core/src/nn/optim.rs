use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
        weight_decay: f64,
        #[serde(default)]
        momentum: f64,
    },
    Adam {
        lr: f64,
        weight_decay: f64,
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
    pub fn sgd(lr: f64, weight_decay: f64, momentum: f64) -> Self {
        Self::Sgd {
            lr,
            weight_decay,
            momentum,
        }
    }

    pub fn adam(lr: f64, weight_decay: f64) -> Self {
        Self::Adam {
            lr,
            weight_decay,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            Self::Sgd { lr, .. } | Self::Adam { lr, .. } => lr,
        }
    }
}

/// Optimizer with per-parameter accumulators, created lazily on the first step.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    config: OptimizerConfig,
    lr: f64,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Self {
        assert!(config.lr() > 0.0, "learning rate must be positive");
        Self {
            config,
            lr: config.lr(),
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Overrides the learning rate for subsequent steps (schedules).
    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            if matches!(self.config, OptimizerConfig::Adam { .. }) {
                self.second = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            }
        }
        self.step += 1;
        let lr = T::from_f64(self.lr);
        match self.config {
            OptimizerConfig::Sgd {
                weight_decay,
                momentum,
                ..
            } => {
                let wd = T::from_f64(weight_decay);
                let mu = T::from_f64(momentum);
                for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                        let d = gv + wd * *pv;
                        if momentum == 0.0 {
                            *pv -= lr * d;
                        } else {
                            *vv = mu * *vv + d;
                            *pv -= lr * *vv;
                        }
                    }
                }
            }
            OptimizerConfig::Adam {
                weight_decay,
                beta1,
                beta2,
                eps,
                ..
            } => {
                let wd = T::from_f64(weight_decay);
                let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
                let c1 = T::from_f64(1.0 / (1.0 - beta1.powi(self.step as i32)));
                let c2 = T::from_f64(1.0 / (1.0 - beta2.powi(self.step as i32)));
                let eps = T::from_f64(eps);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut());
                    for (((pv, &gv), mv), vv) in it {
                        let d = gv + wd * *pv;
                        *mv = b1 * *mv + (T::ONE - b1) * d;
                        *vv = b2 * *vv + (T::ONE - b2) * d * d;
                        let mhat = *mv * c1;
                        let vhat = *vv * c2;
                        *pv -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
    }
}
