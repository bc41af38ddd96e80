//! Differentiable-network substrate: tensors, a reverse-mode tape with
//! double backpropagation, a declarative layer set, Adam, and the `CSIP`
//! parameter format.

mod adam;
mod graph;
pub mod kernels;
mod layers;
mod params;
mod rng;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use graph::{Graph, Var};
pub use layers::{BoundParams, ForwardCtx, LayerSpec, Mode, NetworkSpec, BN_EPS, BN_MOMENTUM};
pub use params::{
    count_params, deserialize_params, header_overhead, is_trainable, serialize_params,
    ParameterSet, Params, PARAM_MAGIC, PARAM_VERSION,
};
pub use rng::{RandomState, Stream};
pub use tensor::{Scalar, Tensor};

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Runs `net` on `input` (shape `[N, input_shape..]`) and returns the output.
///
/// Train mode draws dropout masks from `dropout_rng` and uses batch
/// statistics; running statistics are not updated here.
pub fn forward<T: Scalar>(
    net: &NetworkSpec,
    params: &Params<T>,
    input: &Tensor<T>,
    mode: Mode,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<Tensor<T>> {
    let g = Graph::no_grad();
    let bound = BoundParams::constants(&g, params);
    let x = g.constant(input.clone());
    let mut ctx = ForwardCtx {
        mode,
        dropout_rng,
        bn_updates: Vec::new(),
    };
    let y = net.forward_graph(&g, params, &bound, x, &mut ctx)?;
    Ok((*g.value(y)).clone())
}

/// Gradient of a scalar loss of the network output with respect to every
/// trainable parameter. Returns the loss value and the gradients.
pub fn param_gradients<T: Scalar>(
    net: &NetworkSpec,
    params: &Params<T>,
    input: &Tensor<T>,
    mode: Mode,
    dropout_rng: Option<&mut ChaCha8Rng>,
    loss_fn: impl FnOnce(&Graph<T>, Var) -> Var,
) -> Result<(f64, Params<T>)> {
    let g = Graph::new();
    let bound = BoundParams::variables(&g, params);
    let x = g.constant(input.clone());
    let mut ctx = ForwardCtx {
        mode,
        dropout_rng,
        bn_updates: Vec::new(),
    };
    let y = net.forward_graph(&g, params, &bound, x, &mut ctx)?;
    let loss = loss_fn(&g, y);
    let value = g.item(loss).as_f64();
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss { value });
    }
    let vars = bound.vars();
    let grads = g.grad(loss, &vars, false);
    Ok((value, bound.collect(&g, &grads)))
}

/// Gradient of each sample's scalar output with respect to that sample's
/// input, as a differentiable node (`create_graph`).
///
/// Samples must not interact inside the network (no batch statistics), so
/// the gradient of the summed output separates per sample.
pub fn input_gradient_graph<T: Scalar>(
    g: &Graph<T>,
    net: &NetworkSpec,
    params: &Params<T>,
    bound: &BoundParams,
    x: Var,
) -> Result<Var> {
    if net.output_shape().iter().product::<usize>() != 1 {
        return Err(Error::InvalidNetwork(format!(
            "input gradient needs a scalar output per sample, network produces {:?}",
            net.output_shape()
        )));
    }
    let mut ctx = ForwardCtx::eval();
    let y = net.forward_graph(g, params, bound, x, &mut ctx)?;
    let total = g.sum_all(y);
    Ok(g.grad(total, &[x], true)[0])
}

/// Eval-mode input gradient of a discriminator-shaped network.
pub fn input_gradient<T: Scalar>(
    net: &NetworkSpec,
    params: &Params<T>,
    input: &Tensor<T>,
) -> Result<Tensor<T>> {
    let g = Graph::new();
    let bound = BoundParams::constants(&g, params);
    let x = g.variable(input.clone());
    let gx = input_gradient_graph(&g, net, params, &bound, x)?;
    Ok((*g.value(gx)).clone())
}
