use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::params::Params;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators, keyed by parameter name.
#[derive(Clone, Debug)]
pub struct AdamState<T: Scalar = f32> {
    pub config: AdamConfig,
    pub t: u64,
    m: IndexMap<String, Tensor<T>>,
    v: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &Params<T>) -> Self {
        let zeros = || {
            params
                .trainable()
                .map(|(k, t)| (k.to_string(), Tensor::zeros(t.shape())))
                .collect()
        };
        Self {
            config,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One Adam step with bias correction. Every trainable parameter must have a
/// gradient of matching shape.
pub fn adam_step<T: Scalar>(
    params: &mut Params<T>,
    grads: &Params<T>,
    state: &mut AdamState<T>,
) -> Result<()> {
    for (name, g) in grads.iter() {
        let p = params.get(name).ok_or_else(|| {
            Error::ParamMismatch(format!("gradient for unknown parameter {name}"))
        })?;
        if p.shape() != g.shape() {
            return Err(Error::ParamMismatch(format!(
                "gradient for {name} has shape {:?}, parameter has {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }
    if let Some((missing, _)) = state.m.iter().find(|(k, _)| grads.get(k).is_none()) {
        return Err(Error::ParamMismatch(format!("no gradient for {missing}")));
    }

    state.t += 1;
    let c = state.config;
    let t = state.t as i32;
    let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
    let bc1 = T::of(1.0 - c.beta1.powi(t));
    let bc2 = T::of(1.0 - c.beta2.powi(t));
    let (lr, eps) = (T::of(c.lr), T::of(c.eps));
    let one = T::one();

    for (name, m) in state.m.iter_mut() {
        let v = state.v.get_mut(name).expect("moments share keys");
        let g = grads.get(name).expect("checked above");
        let p = params.get_mut(name).expect("checked above");
        for (((pi, mi), vi), &gi) in p
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data())
        {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *pi = *pi - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
