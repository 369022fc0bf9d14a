use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Scalar, Tensor};

/// Optimizer hyperparameters. The learning rate comes from the schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerSpec {
    Sgd {
        #[serde(default)]
        momentum: f64,
    },
    Adam {
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

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

impl OptimizerSpec {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..1.0).contains(&x);
        match *self {
            OptimizerSpec::Sgd { momentum } if !unit(momentum) => {
                Err(Error::invalid("optimizer", "momentum must be in [0, 1)"))
            }
            OptimizerSpec::Adam { beta1, beta2, eps } if !(unit(beta1) && unit(beta2)) || eps <= 0.0 => {
                Err(Error::invalid(
                    "optimizer",
                    "betas must be in [0, 1) and eps positive",
                ))
            }
            _ => Ok(()),
        }
    }
}

fn check_len(params: usize, grads: usize) -> Result<()> {
    if params != grads {
        return Err(Error::shape("optimizer", &[params], &[grads]));
    }
    Ok(())
}

/// One bias-corrected Adam update. `step` is the 1-based count including this update.
#[allow(clippy::too_many_arguments)]
pub fn adam_step<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    first: &mut [T],
    second: &mut [T],
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    check_len(params.len(), grads.len())?;
    check_len(params.len(), first.len())?;
    check_len(params.len(), second.len())?;
    if step == 0 {
        return Err(Error::invalid("adam_step", "step counts from 1"));
    }
    let (b1, b2) = (T::of(beta1), T::of(beta2));
    let (c1, c2) = (T::one() - b1, T::one() - b2);
    let corr1 = T::of(1.0 - beta1.powi(step as i32));
    let corr2 = T::of(1.0 - beta2.powi(step as i32));
    let (lr, eps) = (T::of(lr), T::of(eps));
    for i in 0..params.len() {
        let g = grads[i];
        first[i] = b1 * first[i] + c1 * g;
        second[i] = b2 * second[i] + c2 * g * g;
        let m_hat = first[i] / corr1;
        let v_hat = second[i] / corr2;
        params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// `v' = momentum·v − lr·g`, `p' = p + v'`.
pub fn sgd_step<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    velocity: &mut [T],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    check_len(params.len(), grads.len())?;
    check_len(params.len(), velocity.len())?;
    let (lr, mu) = (T::of(lr), T::of(momentum));
    for i in 0..params.len() {
        velocity[i] = mu * velocity[i] - lr * grads[i];
        params[i] = params[i] + velocity[i];
    }
    Ok(())
}

#[derive(Clone, Debug)]
struct Slot<T> {
    first: Vec<T>,
    second: Vec<T>,
}

/// Per-parameter accumulators plus the global step counter.
#[derive(Clone, Debug)]
pub struct Optimizer<T: Scalar = f32> {
    spec: OptimizerSpec,
    slots: BTreeMap<String, Slot<T>>,
    step: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(spec: OptimizerSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            slots: BTreeMap::new(),
            step: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Updates every named parameter that has a gradient.
    pub fn apply<'a, I>(&mut self, lr: f64, params: I, grads: &Gradients<T>) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a mut Tensor<T>)>,
    {
        self.step += 1;
        for (name, param) in params {
            let Some(grad) = grads.get(name) else { continue };
            if grad.shape() != param.shape() {
                return Err(Error::shape("optimizer", param.shape(), grad.shape()));
            }
            let slot = self.slots.entry(name.to_string()).or_insert_with(|| Slot {
                first: vec![T::zero(); param.len()],
                second: match self.spec {
                    OptimizerSpec::Adam { .. } => vec![T::zero(); param.len()],
                    OptimizerSpec::Sgd { .. } => Vec::new(),
                },
            });
            check_len(param.len(), slot.first.len())?;
            match self.spec {
                OptimizerSpec::Sgd { momentum } => {
                    sgd_step(param.data_mut(), grad.data(), &mut slot.first, lr, momentum)?
                }
                OptimizerSpec::Adam { beta1, beta2, eps } => adam_step(
                    param.data_mut(),
                    grad.data(),
                    &mut slot.first,
                    &mut slot.second,
                    self.step,
                    lr,
                    beta1,
                    beta2,
                    eps,
                )?,
            }
        }
        Ok(())
    }
}
