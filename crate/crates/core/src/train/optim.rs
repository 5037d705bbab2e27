use crate::nn::{Gradients, Model, Scalar, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerConfig {
    Adam {
        #[serde(default = "default_lr")]
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    Sgd {
        #[serde(default = "default_lr")]
        lr: f64,
        #[serde(default)]
        momentum: f64,
    },
}

fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-7
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
        }
    }
}

impl OptimizerConfig {
    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Adam { lr, .. } | OptimizerConfig::Sgd { lr, .. } => lr,
        }
    }

    pub fn with_lr(self, new_lr: f64) -> Self {
        match self {
            OptimizerConfig::Adam {
                beta1,
                beta2,
                epsilon,
                ..
            } => OptimizerConfig::Adam {
                lr: new_lr,
                beta1,
                beta2,
                epsilon,
            },
            OptimizerConfig::Sgd { momentum, .. } => OptimizerConfig::Sgd {
                lr: new_lr,
                momentum,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.lr();
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::argument(format!(
                "learning rate must be non-negative, got {lr}"
            )));
        }
        match *self {
            OptimizerConfig::Adam {
                beta1,
                beta2,
                epsilon,
                ..
            } => {
                if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && epsilon > 0.0) {
                    return Err(Error::argument(
                        "Adam needs betas in [0, 1) and epsilon > 0",
                    ));
                }
            }
            OptimizerConfig::Sgd { momentum, .. } => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(Error::argument("SGD momentum must lie in [0, 1)"));
                }
            }
        }
        Ok(())
    }
}

/// Moment estimates carried between optimizer steps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState<T = f32> {
    pub step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new() -> Self {
        Self {
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }
}

/// Applies one update to `params` in place.
pub fn optimizer_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut OptimizerState<T>,
    config: &OptimizerConfig,
) -> Result<()> {
    if params.len() != grads.len()
        || params
            .iter()
            .zip(grads)
            .any(|(p, g)| p.shape() != g.shape())
    {
        return Err(Error::shape("parameter and gradient shapes differ"));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Training(format!(
            "non-finite gradient in parameter tensor {i}"
        )));
    }
    if state.first.is_empty() {
        state.first = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        if matches!(config, OptimizerConfig::Adam { .. }) {
            state.second = state.first.clone();
        }
    }
    state.step += 1;

    match *config {
        OptimizerConfig::Adam {
            lr,
            beta1,
            beta2,
            epsilon,
        } => {
            let t = state.step as i32;
            let correction1 = T::of(1.0 - beta1.powi(t));
            let correction2 = T::of(1.0 - beta2.powi(t));
            let (lr, b1, b2, eps) = (T::of(lr), T::of(beta1), T::of(beta2), T::of(epsilon));
            let one = T::one();
            for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                let (m, v) = (&mut state.first[k], &mut state.second[k]);
                for (((theta, &gv), mv), vv) in p
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(m.iter_mut())
                    .zip(v.iter_mut())
                {
                    *mv = b1 * *mv + (one - b1) * gv;
                    *vv = b2 * *vv + (one - b2) * gv * gv;
                    let m_hat = *mv / correction1;
                    let v_hat = *vv / correction2;
                    *theta -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        OptimizerConfig::Sgd { lr, momentum } => {
            let (lr, mu) = (T::of(lr), T::of(momentum));
            for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                for ((theta, &gv), vel) in p
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(state.first[k].iter_mut())
                {
                    *vel = mu * *vel + gv;
                    *theta -= lr * *vel;
                }
            }
        }
    }
    Ok(())
}

/// [`optimizer_step`] over a model's parameters, naming the offending layer
/// when a gradient is not finite.
pub fn step_model<T: Scalar>(
    model: &mut Model<T>,
    grads: &Gradients<T>,
    state: &mut OptimizerState<T>,
    config: &OptimizerConfig,
) -> Result<()> {
    if let Some(i) = grads.tensors.iter().position(|g| !g.is_finite()) {
        return Err(Error::Training(format!(
            "non-finite gradient in {}",
            model.param_owner(i)
        )));
    }
    let mut params = model.params_mut();
    optimizer_step(&mut params, &grads.tensors, state, config)
}
