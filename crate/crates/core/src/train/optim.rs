use crate::autodiff::{Scalar, Tensor};
use crate::model::ModelParams;

use super::{OptimizerKind, TrainConfig};

/// First-order optimizer state. Moments are kept in f64 regardless of the
/// parameter precision.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        step: i32,
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
    },
}

impl Optimizer {
    pub fn new<T: Scalar>(config: &TrainConfig, params: &ModelParams<T>) -> Self {
        match config.optimizer {
            OptimizerKind::Sgd => Optimizer::Sgd { lr: config.learning_rate },
            OptimizerKind::Adam => {
                let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
                Optimizer::Adam {
                    lr: config.learning_rate,
                    beta1: config.beta1,
                    beta2: config.beta2,
                    eps: config.adam_eps,
                    step: 0,
                    m: zeros.clone(),
                    v: zeros,
                }
            }
        }
    }

    /// Applies one update; `grads` follow the parameter registration order.
    pub fn step<T: Scalar>(&mut self, params: &mut ModelParams<T>, grads: &[Tensor<T>]) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        match self {
            Optimizer::Sgd { lr } => {
                for (i, g) in grads.iter().enumerate() {
                    let p = params.tensor_mut(i);
                    for (x, &dx) in p.data_mut().iter_mut().zip(g.data()) {
                        *x = T::of(x.as_f64() - *lr * dx.as_f64());
                    }
                }
            }
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                step,
                m,
                v,
            } => {
                *step += 1;
                let c1 = 1.0 - beta1.powi(*step);
                let c2 = 1.0 - beta2.powi(*step);
                for (i, g) in grads.iter().enumerate() {
                    let p = params.tensor_mut(i);
                    let (m, v) = (&mut m[i], &mut v[i]);
                    for (j, (x, &dx)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        let g = dx.as_f64();
                        m[j] = *beta1 * m[j] + (1.0 - *beta1) * g;
                        v[j] = *beta2 * v[j] + (1.0 - *beta2) * g * g;
                        let m_hat = m[j] / c1;
                        let v_hat = v[j] / c2;
                        *x = T::of(x.as_f64() - *lr * m_hat / (v_hat.sqrt() + *eps));
                    }
                }
            }
        }
    }
}
