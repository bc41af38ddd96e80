//! Declarative layer stacks: shape validation, initialization, and the
//! forward pass on a [`Graph`].

use std::rc::Rc;

use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::kernels::ConvGeom;
use super::params::{is_trainable, Params};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    },
    Dense {
        in_features: usize,
        out_features: usize,
        bias: bool,
    },
    BatchNorm {
        channels: usize,
    },
    LeakyRelu {
        slope: f64,
    },
    Tanh,
    Dropout {
        p: f64,
    },
    UpsampleNearest2x,
    /// Mean over the last two axes.
    MeanReduce,
    /// Per-sample target shape.
    Reshape {
        shape: Vec<usize>,
    },
    Flatten,
    /// `x + body(x)`; the body must preserve shape.
    Residual {
        body: Vec<LayerSpec>,
    },
}

impl LayerSpec {
    /// 3x3, stride 1, same padding, with bias.
    pub fn conv3x3(in_ch: usize, out_ch: usize) -> Self {
        LayerSpec::Conv2d {
            in_ch,
            out_ch,
            kernel: 3,
            stride: 1,
            padding: 1,
            bias: true,
        }
    }

    pub fn conv3x3_stride2(in_ch: usize, out_ch: usize) -> Self {
        LayerSpec::Conv2d {
            in_ch,
            out_ch,
            kernel: 3,
            stride: 2,
            padding: 1,
            bias: true,
        }
    }

    pub fn dense(in_features: usize, out_features: usize) -> Self {
        LayerSpec::Dense {
            in_features,
            out_features,
            bias: true,
        }
    }

    pub fn batch_norm(channels: usize) -> Self {
        LayerSpec::BatchNorm { channels }
    }

    pub fn leaky_relu(slope: f64) -> Self {
        LayerSpec::LeakyRelu { slope }
    }

    pub fn dropout(p: f64) -> Self {
        LayerSpec::Dropout { p }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::LeakyRelu { .. } => "leaky_relu",
            LayerSpec::Tanh => "tanh",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::UpsampleNearest2x => "upsample_nearest_2x",
            LayerSpec::MeanReduce => "mean_reduce",
            LayerSpec::Reshape { .. } => "reshape",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Residual { .. } => "residual",
        }
    }

    fn validate_attrs(&self) -> std::result::Result<(), String> {
        match self {
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
                ..
            } => {
                if *in_ch == 0 || *out_ch == 0 {
                    return Err("channel counts must be positive".into());
                }
                if *kernel == 0 || *stride == 0 {
                    return Err("kernel and stride must be positive".into());
                }
            }
            LayerSpec::Dense {
                in_features,
                out_features,
                ..
            } => {
                if *in_features == 0 || *out_features == 0 {
                    return Err("dense sizes must be positive".into());
                }
            }
            LayerSpec::BatchNorm { channels } if *channels == 0 => {
                return Err("batchnorm needs at least one channel".into());
            }
            LayerSpec::LeakyRelu { slope } if !(*slope > 0.0 && *slope < 1.0) => {
                return Err(format!("leaky_relu slope {slope} outside (0, 1)"));
            }
            LayerSpec::Dropout { p } if !(0.0..1.0).contains(p) => {
                return Err(format!("dropout probability {p} outside [0, 1)"));
            }
            _ => {}
        }
        Ok(())
    }

    /// Per-sample output shape for a per-sample input shape.
    fn out_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, (Vec<usize>, String)> {
        let any = |why: &str| Err((input.to_vec(), why.to_string()));
        match self {
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
                padding,
                ..
            } => {
                if input.len() != 3 || input[0] != *in_ch {
                    return Err((vec![*in_ch, 0, 0], "expects [C, H, W]".into()));
                }
                match ConvGeom::new(
                    *in_ch, *out_ch, *kernel, *stride, *padding, input[1], input[2],
                ) {
                    Some(g) => Ok(vec![*out_ch, g.out_h, g.out_w]),
                    None => any("spatial size smaller than kernel"),
                }
            }
            LayerSpec::Dense {
                in_features,
                out_features,
                ..
            } => {
                if input != [*in_features] {
                    return Err((vec![*in_features], "expects a flat vector".into()));
                }
                Ok(vec![*out_features])
            }
            LayerSpec::BatchNorm { channels } => {
                if input.first() != Some(channels) {
                    return Err((vec![*channels], "channel axis mismatch".into()));
                }
                Ok(input.to_vec())
            }
            LayerSpec::LeakyRelu { .. } | LayerSpec::Tanh | LayerSpec::Dropout { .. } => {
                Ok(input.to_vec())
            }
            LayerSpec::UpsampleNearest2x => {
                if input.len() < 2 {
                    return any("needs at least two spatial axes");
                }
                let mut s = input.to_vec();
                let r = s.len();
                s[r - 2] *= 2;
                s[r - 1] *= 2;
                Ok(s)
            }
            LayerSpec::MeanReduce => {
                if input.len() < 2 {
                    return any("needs at least two trailing axes");
                }
                Ok(input[..input.len() - 2].to_vec())
            }
            LayerSpec::Reshape { shape } => {
                if shape.iter().product::<usize>() != input.iter().product::<usize>() {
                    return Err((shape.clone(), "element count differs".into()));
                }
                Ok(shape.clone())
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Residual { body } => {
                let mut s = input.to_vec();
                for l in body {
                    s = l.out_shape(&s)?;
                }
                if s != input {
                    return Err((input.to_vec(), format!("residual body maps to {s:?}")));
                }
                Ok(s)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A validated layer stack with declared per-sample input and output shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    layers: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
}

impl NetworkSpec {
    /// Validates attributes and shape propagation against the declared output.
    pub fn new(
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
        output_shape: Vec<usize>,
    ) -> Result<Self> {
        let mut shape = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            check_attrs(layer, i)?;
            shape = layer.out_shape(&shape).map_err(|(expected, why)| {
                let _ = why;
                Error::Shape {
                    layer: i,
                    kind: layer.kind(),
                    expected,
                    got: shape.clone(),
                }
            })?;
        }
        if shape != output_shape {
            return Err(Error::InvalidNetwork(format!(
                "declared output {output_shape:?} but layers produce {shape:?}"
            )));
        }
        Ok(Self {
            layers,
            input_shape,
            output_shape,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    /// Per-sample shapes after each top-level layer, starting with the input.
    pub fn shape_trace(&self) -> Vec<Vec<usize>> {
        let mut out = vec![self.input_shape.clone()];
        let mut s = self.input_shape.clone();
        for l in &self.layers {
            s = l.out_shape(&s).expect("validated at construction");
            out.push(s.clone());
        }
        out
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, zero biases; batch-norm scale 1, shift 0.
    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> Params<f32> {
        let mut p = Params::new();
        init_layers(&self.layers, "", &mut p, rng);
        p
    }

    /// Parameter count implied by the architecture alone.
    pub fn count_params(&self) -> usize {
        fn count(layers: &[LayerSpec]) -> usize {
            layers
                .iter()
                .map(|l| match l {
                    LayerSpec::Conv2d {
                        in_ch,
                        out_ch,
                        kernel,
                        bias,
                        ..
                    } => in_ch * out_ch * kernel * kernel + if *bias { *out_ch } else { 0 },
                    LayerSpec::Dense {
                        in_features,
                        out_features,
                        bias,
                    } => in_features * out_features + if *bias { *out_features } else { 0 },
                    LayerSpec::BatchNorm { channels } => 2 * channels,
                    LayerSpec::Residual { body } => count(body),
                    _ => 0,
                })
                .sum()
        }
        count(&self.layers)
    }

    /// Forward pass on `g`. `x` has shape `[N, input_shape..]`.
    pub fn forward_graph<T: Scalar>(
        &self,
        g: &Graph<T>,
        params: &Params<T>,
        bound: &BoundParams,
        x: Var,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Var> {
        let shape = g.shape(x);
        if shape.len() != self.input_shape.len() + 1 || shape[1..] != self.input_shape[..] {
            return Err(Error::Shape {
                layer: 0,
                kind: self.layers.first().map_or("input", LayerSpec::kind),
                expected: self.input_shape.clone(),
                got: shape.get(1..).unwrap_or(&[]).to_vec(),
            });
        }
        run_layers(&self.layers, "", g, params, bound, x, ctx)
    }
}

fn check_attrs(layer: &LayerSpec, i: usize) -> Result<()> {
    layer
        .validate_attrs()
        .map_err(|why| Error::InvalidNetwork(format!("layer {i} ({}): {why}", layer.kind())))?;
    if let LayerSpec::Residual { body } = layer {
        for l in body {
            check_attrs(l, i)?;
        }
    }
    Ok(())
}

fn init_layers(layers: &[LayerSpec], prefix: &str, p: &mut Params<f32>, rng: &mut ChaCha8Rng) {
    let uniform = |shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng| {
        let bound = (1.0 / fan_in as f64).sqrt() as f32;
        Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
    };
    for (i, layer) in layers.iter().enumerate() {
        let name = format!("{prefix}{i}");
        // Insertion cannot collide: names are unique by construction.
        match layer {
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                bias,
                ..
            } => {
                let w = uniform(
                    &[*out_ch, *in_ch, *kernel, *kernel],
                    in_ch * kernel * kernel,
                    rng,
                );
                p.insert(format!("{name}.weight"), w).unwrap();
                if *bias {
                    p.insert(format!("{name}.bias"), Tensor::zeros(&[*out_ch]))
                        .unwrap();
                }
            }
            LayerSpec::Dense {
                in_features,
                out_features,
                bias,
            } => {
                let w = uniform(&[*out_features, *in_features], *in_features, rng);
                p.insert(format!("{name}.weight"), w).unwrap();
                if *bias {
                    p.insert(format!("{name}.bias"), Tensor::zeros(&[*out_features]))
                        .unwrap();
                }
            }
            LayerSpec::BatchNorm { channels } => {
                p.insert(format!("{name}.gamma"), Tensor::ones(&[*channels]))
                    .unwrap();
                p.insert(format!("{name}.beta"), Tensor::zeros(&[*channels]))
                    .unwrap();
                p.insert(format!("{name}.running_mean"), Tensor::zeros(&[*channels]))
                    .unwrap();
                p.insert(format!("{name}.running_var"), Tensor::ones(&[*channels]))
                    .unwrap();
            }
            LayerSpec::Residual { body } => init_layers(body, &format!("{name}."), p, rng),
            _ => {}
        }
    }
}

/// Graph handles for the trainable entries of a parameter set.
#[derive(Clone, Debug, Default)]
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    /// Trainable entries become differentiable leaves.
    pub fn variables<T: Scalar>(g: &Graph<T>, params: &Params<T>) -> Self {
        Self {
            vars: params
                .trainable()
                .map(|(k, t)| (k.to_string(), g.variable(t.clone())))
                .collect(),
        }
    }

    /// Trainable entries become constants (a frozen network).
    pub fn constants<T: Scalar>(g: &Graph<T>, params: &Params<T>) -> Self {
        Self {
            vars: params
                .trainable()
                .map(|(k, t)| (k.to_string(), g.constant(t.clone())))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::ParamMismatch(format!("missing parameter {name}")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().copied().collect()
    }

    /// Collects gradient values into a parameter set keyed like the bound set.
    pub fn collect<T: Scalar>(&self, g: &Graph<T>, grads: &[Var]) -> Params<T> {
        let mut out = Params::new();
        for (name, gv) in self.vars.keys().zip(grads) {
            out.insert(name.clone(), (*g.value(*gv)).clone()).unwrap();
        }
        out
    }
}

/// Per-call forward settings and side outputs.
pub struct ForwardCtx<'a> {
    pub mode: Mode,
    pub dropout_rng: Option<&'a mut ChaCha8Rng>,
    /// Batch-norm running-statistic updates produced in train mode.
    pub bn_updates: Vec<(String, Tensor<f64>)>,
}

impl<'a> ForwardCtx<'a> {
    pub fn eval() -> Self {
        Self {
            mode: Mode::Eval,
            dropout_rng: None,
            bn_updates: Vec::new(),
        }
    }

    pub fn train(dropout_rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            mode: Mode::Train,
            dropout_rng: Some(dropout_rng),
            bn_updates: Vec::new(),
        }
    }

    /// Train mode for networks without dropout.
    pub fn train_no_dropout() -> Self {
        Self {
            mode: Mode::Train,
            dropout_rng: None,
            bn_updates: Vec::new(),
        }
    }

    /// Writes the collected running statistics into `params`.
    pub fn apply_bn_updates<T: Scalar>(&mut self, params: &mut Params<T>) {
        for (name, t) in self.bn_updates.drain(..) {
            if let Some(slot) = params.get_mut(&name) {
                *slot = t.cast();
            }
        }
    }
}

fn run_layers<T: Scalar>(
    layers: &[LayerSpec],
    prefix: &str,
    g: &Graph<T>,
    params: &Params<T>,
    bound: &BoundParams,
    mut x: Var,
    ctx: &mut ForwardCtx<'_>,
) -> Result<Var> {
    for (i, layer) in layers.iter().enumerate() {
        let name = format!("{prefix}{i}");
        x = match layer {
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
                padding,
                bias,
            } => {
                let s = g.shape(x);
                let geom = ConvGeom::new(*in_ch, *out_ch, *kernel, *stride, *padding, s[2], s[3])
                    .ok_or_else(|| {
                    Error::InvalidNetwork(format!("layer {name}: bad conv geometry"))
                })?;
                let y = g.conv2d(x, bound.get(&format!("{name}.weight"))?, geom);
                if *bias {
                    g.add_chan(y, bound.get(&format!("{name}.bias"))?)
                } else {
                    y
                }
            }
            LayerSpec::Dense { bias, .. } => {
                let y = g.matmul(x, bound.get(&format!("{name}.weight"))?, false, true);
                if *bias {
                    g.add_chan(y, bound.get(&format!("{name}.bias"))?)
                } else {
                    y
                }
            }
            LayerSpec::BatchNorm { .. } => batch_norm(&name, g, params, bound, x, ctx)?,
            LayerSpec::LeakyRelu { slope } => g.leaky_relu(x, T::of(*slope)),
            LayerSpec::Tanh => g.tanh(x),
            LayerSpec::Dropout { p } => {
                if ctx.mode == Mode::Eval || *p == 0.0 {
                    x
                } else {
                    let rng = ctx.dropout_rng.as_deref_mut().ok_or_else(|| {
                        Error::InvalidNetwork(format!(
                            "layer {name}: train-mode dropout needs a dropout stream"
                        ))
                    })?;
                    let keep = 1.0 - p;
                    let scale = T::of(1.0 / keep);
                    let shape = g.shape(x);
                    let mask = Tensor::from_fn(&shape, |_| {
                        if rng.random::<f64>() < keep {
                            scale
                        } else {
                            T::zero()
                        }
                    });
                    g.mul_const(x, Rc::new(mask))
                }
            }
            LayerSpec::UpsampleNearest2x => g.upsample2x(x),
            LayerSpec::MeanReduce => {
                let s = g.shape(x);
                let r = s.len();
                let area = s[r - 1] * s[r - 2];
                let summed = g.sum_last(x, 2);
                g.scale(summed, T::one() / T::of(area as f64))
            }
            LayerSpec::Reshape { shape } => {
                let mut full = vec![g.shape(x)[0]];
                full.extend_from_slice(shape);
                g.reshape(x, &full)
            }
            LayerSpec::Flatten => {
                let s = g.shape(x);
                g.reshape(x, &[s[0], s[1..].iter().product()])
            }
            LayerSpec::Residual { body } => {
                let y = run_layers(body, &format!("{name}."), g, params, bound, x, ctx)?;
                g.add(x, y)
            }
        };
    }
    Ok(x)
}

fn batch_norm<T: Scalar>(
    name: &str,
    g: &Graph<T>,
    params: &Params<T>,
    bound: &BoundParams,
    x: Var,
    ctx: &mut ForwardCtx<'_>,
) -> Result<Var> {
    let shape = g.shape(x);
    let gamma = bound.get(&format!("{name}.gamma"))?;
    let beta = bound.get(&format!("{name}.beta"))?;
    let eps = T::of(BN_EPS);
    let xhat = match ctx.mode {
        Mode::Train => {
            let count = shape[0] * shape[2..].iter().product::<usize>();
            if count < 2 {
                return Err(Error::InvalidNetwork(format!(
                    "layer {name}: batchnorm in train mode needs more than one value per channel"
                )));
            }
            let inv_n = T::one() / T::of(count as f64);
            let mean = g.scale(g.sum_chan(x), inv_n);
            let centered = g.sub(x, g.broadcast_chan(mean, &shape));
            let var = g.scale(g.sum_chan(g.square(centered)), inv_n);
            let inv_std = g.pow(g.add_scalar(var, eps), T::of(-0.5));
            record_running(name, g, params, mean, var, count, ctx)?;
            g.mul(centered, g.broadcast_chan(inv_std, &shape))
        }
        Mode::Eval => {
            let rm = params.require(&format!("{name}.running_mean"))?;
            let rv = params.require(&format!("{name}.running_var"))?;
            let shift = g.constant(rm.map(|m| -m));
            let inv = Tensor::from_fn(&shape, {
                let inv_std: Vec<T> = rv
                    .data()
                    .iter()
                    .map(|&v| T::one() / (v + eps).sqrt())
                    .collect();
                let rest: usize = shape[2..].iter().product();
                let c = shape[1];
                move |i| inv_std[(i / rest) % c]
            });
            g.mul_const(g.add_chan(x, shift), Rc::new(inv))
        }
    };
    let scaled = g.mul(xhat, g.broadcast_chan(gamma, &shape));
    Ok(g.add_chan(scaled, beta))
}

fn record_running<T: Scalar>(
    name: &str,
    g: &Graph<T>,
    params: &Params<T>,
    mean: Var,
    var: Var,
    count: usize,
    ctx: &mut ForwardCtx<'_>,
) -> Result<()> {
    let rm = params.require(&format!("{name}.running_mean"))?;
    let rv = params.require(&format!("{name}.running_var"))?;
    let m = BN_MOMENTUM;
    let unbias = count as f64 / (count as f64 - 1.0);
    let new_mean = Tensor::from_fn(rm.shape(), |i| {
        (1.0 - m) * rm.data()[i].as_f64() + m * g.value(mean).data()[i].as_f64()
    });
    let new_var = Tensor::from_fn(rv.shape(), |i| {
        (1.0 - m) * rv.data()[i].as_f64() + m * unbias * g.value(var).data()[i].as_f64()
    });
    debug_assert!(!is_trainable(&format!("{name}.running_mean")));
    ctx.bn_updates
        .push((format!("{name}.running_mean"), new_mean));
    ctx.bn_updates
        .push((format!("{name}.running_var"), new_var));
    Ok(())
}
