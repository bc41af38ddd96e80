//! Finite-difference gradient checks shared by the integration tests.
#![allow(dead_code)]

use csilab::ctgan::{gradient_penalty_with, Bound, DiscriminatorSpec, GeneratorSpec};
use csilab::netcore::{
    BoundParams, ForwardCtx, Graph, LayerSpec, Mode, NetworkSpec, Params, RandomState, Stream,
    Tensor, Var,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
// Relative error is measured against max(|analytic|, |numeric|, FLOOR).
// Central differences of a loss of magnitude ~10 carry ~2e-10 absolute
// round-off, which would otherwise dominate exactly-zero gradients such as a
// conv bias feeding batch norm.
pub const FD_FLOOR: f64 = 1e-5;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR)
}

fn normal_tensor(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| scale * (rng.random::<f64>() * 2.0 - 1.0))
}

/// Worst elementwise relative error over every trainable parameter and every
/// input element of `loss = sum(w * net(x))` with random fixed `w`.
pub struct GradReport {
    pub params: f64,
    pub inputs: f64,
    pub checked: usize,
    /// Parameter entry with the largest error, with analytic and numeric values.
    pub worst: (String, f64, f64),
}

fn weighted_loss(
    g: &Graph<f64>,
    net: &NetworkSpec,
    params: &Params<f64>,
    bound: &BoundParams,
    x: Var,
    w: &Tensor<f64>,
    mode: Mode,
    seed: u64,
) -> Var {
    let mut rng = RandomState::new(seed).stream(Stream::Dropout);
    let mut ctx = match mode {
        Mode::Train => ForwardCtx::train(&mut rng),
        Mode::Eval => ForwardCtx::eval(),
    };
    let y = net.forward_graph(g, params, bound, x, &mut ctx).unwrap();
    let wv = g.constant(w.clone());
    g.sum_all(g.mul(y, wv))
}

fn loss_value(
    net: &NetworkSpec,
    params: &Params<f64>,
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    mode: Mode,
    seed: u64,
) -> f64 {
    let g = Graph::no_grad();
    let bound = BoundParams::constants(&g, params);
    let xv = g.constant(x.clone());
    let l = weighted_loss(&g, net, params, &bound, xv, w, mode, seed);
    g.item(l)
}

pub fn check_network(net: &NetworkSpec, mode: Mode, batch: usize, seed: u64) -> GradReport {
    let mut rng = RandomState::new(seed).stream(Stream::Data);
    let params: Params<f64> = net
        .init_params(&mut RandomState::new(seed).stream(Stream::Init))
        .cast();
    // non-trivial scale/shift so batch-norm gradients are generic
    let mut params = params;
    for (name, t) in params.iter_mut() {
        if name.ends_with("gamma")
            || name.ends_with("beta")
            || name.ends_with(".bias")
            || name.ends_with("b")
        {
            for v in t.data_mut() {
                *v += 0.3 * (rng.random::<f64>() - 0.5);
            }
        }
    }
    let mut in_shape = vec![batch];
    in_shape.extend_from_slice(net.input_shape());
    let mut out_shape = vec![batch];
    out_shape.extend_from_slice(net.output_shape());
    let x = normal_tensor(&in_shape, 1.0, &mut rng);
    let w = normal_tensor(&out_shape, 1.0, &mut rng);

    let g = Graph::new();
    let bound = BoundParams::variables(&g, &params);
    let xv = g.variable(x.clone());
    let loss = weighted_loss(&g, net, &params, &bound, xv, &w, mode, seed);
    let mut wrt = bound.vars();
    wrt.push(xv);
    let grads = g.grad(loss, &wrt, false);
    let gx = (*g.value(*grads.last().unwrap())).clone();
    let gp = bound.collect(&g, &grads[..grads.len() - 1]);

    let mut report = GradReport {
        params: 0.0,
        inputs: 0.0,
        checked: 0,
        worst: (String::new(), 0.0, 0.0),
    };
    let names: Vec<String> = gp.iter().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let analytic = gp.get(&name).unwrap().clone();
        for i in 0..analytic.len() {
            let mut p = params.clone();
            p.get_mut(&name).unwrap().data_mut()[i] += FD_STEP;
            let up = loss_value(net, &p, &x, &w, mode, seed);
            p.get_mut(&name).unwrap().data_mut()[i] -= 2.0 * FD_STEP;
            let down = loss_value(net, &p, &x, &w, mode, seed);
            let numeric = (up - down) / (2.0 * FD_STEP);
            let e = rel_err(analytic.data()[i], numeric);
            if e > report.params {
                report.params = e;
                report.worst = (format!("{name}[{i}]"), analytic.data()[i], numeric);
            }
            report.checked += 1;
        }
    }
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += FD_STEP;
        let up = loss_value(net, &params, &xp, &w, mode, seed);
        xp.data_mut()[i] -= 2.0 * FD_STEP;
        let down = loss_value(net, &params, &xp, &w, mode, seed);
        let numeric = (up - down) / (2.0 * FD_STEP);
        report.inputs = report.inputs.max(rel_err(gx.data()[i], numeric));
        report.checked += 1;
    }
    report
}

/// One small network per layer kind, with the mode it is checked in.
pub fn layer_cases() -> Vec<(&'static str, NetworkSpec, Mode)> {
    let net = |i: Vec<usize>, l: Vec<LayerSpec>, o: Vec<usize>| NetworkSpec::new(i, l, o).unwrap();
    vec![
        (
            "dense",
            net(vec![6], vec![LayerSpec::dense(6, 4)], vec![4]),
            Mode::Eval,
        ),
        (
            "dense_no_bias",
            net(
                vec![5],
                vec![LayerSpec::Dense {
                    in_features: 5,
                    out_features: 3,
                    bias: false,
                }],
                vec![3],
            ),
            Mode::Eval,
        ),
        (
            "conv3x3",
            net(vec![2, 4, 4], vec![LayerSpec::conv3x3(2, 3)], vec![3, 4, 4]),
            Mode::Eval,
        ),
        (
            "conv3x3_stride2",
            net(
                vec![2, 6, 6],
                vec![LayerSpec::conv3x3_stride2(2, 3)],
                vec![3, 3, 3],
            ),
            Mode::Eval,
        ),
        (
            "conv2x2_valid_no_bias",
            net(
                vec![2, 4, 5],
                vec![LayerSpec::Conv2d {
                    in_ch: 2,
                    out_ch: 2,
                    kernel: 2,
                    stride: 1,
                    padding: 0,
                    bias: false,
                }],
                vec![2, 3, 4],
            ),
            Mode::Eval,
        ),
        (
            "batch_norm_train",
            net(vec![3, 3, 3], vec![LayerSpec::batch_norm(3)], vec![3, 3, 3]),
            Mode::Train,
        ),
        (
            "batch_norm_eval",
            net(vec![3, 3, 3], vec![LayerSpec::batch_norm(3)], vec![3, 3, 3]),
            Mode::Eval,
        ),
        (
            "leaky_relu",
            net(
                vec![2, 3, 3],
                vec![LayerSpec::leaky_relu(0.3)],
                vec![2, 3, 3],
            ),
            Mode::Eval,
        ),
        (
            "tanh",
            net(vec![2, 3, 3], vec![LayerSpec::Tanh], vec![2, 3, 3]),
            Mode::Eval,
        ),
        (
            "dropout_train",
            net(vec![2, 3, 3], vec![LayerSpec::dropout(0.5)], vec![2, 3, 3]),
            Mode::Train,
        ),
        (
            "upsample_nearest",
            net(
                vec![2, 2, 3],
                vec![LayerSpec::UpsampleNearest2x],
                vec![2, 4, 6],
            ),
            Mode::Eval,
        ),
        (
            "mean_reduce",
            net(vec![2, 3, 3], vec![LayerSpec::MeanReduce], vec![2]),
            Mode::Eval,
        ),
        (
            "reshape",
            net(
                vec![12],
                vec![
                    LayerSpec::Reshape {
                        shape: vec![3, 2, 2],
                    },
                    LayerSpec::conv3x3(3, 1),
                ],
                vec![1, 2, 2],
            ),
            Mode::Eval,
        ),
        (
            "flatten",
            net(
                vec![2, 2, 2],
                vec![LayerSpec::Flatten, LayerSpec::dense(8, 2)],
                vec![2],
            ),
            Mode::Eval,
        ),
        (
            "residual",
            net(
                vec![2, 3, 3],
                vec![LayerSpec::Residual {
                    body: vec![
                        LayerSpec::conv3x3(2, 2),
                        LayerSpec::batch_norm(2),
                        LayerSpec::leaky_relu(0.3),
                    ],
                }],
                vec![2, 3, 3],
            ),
            Mode::Train,
        ),
    ]
}

pub fn small_generator() -> NetworkSpec {
    GeneratorSpec::new(4, 8, 8, 2).network().unwrap()
}

pub fn small_critic() -> NetworkSpec {
    DiscriminatorSpec::new(8, 8, [2, 3, 4]).network().unwrap()
}

/// Relative error of the gradient-penalty parameter gradient (double backprop)
/// against central differences of the penalty value.
pub fn check_gradient_penalty(seed: u64) -> f64 {
    let net = small_critic();
    let params: Params<f64> = net
        .init_params(&mut RandomState::new(seed).stream(Stream::Init))
        .cast();
    let mut rng = RandomState::new(seed).stream(Stream::Data);
    let points = normal_tensor(&[3, 2, 8, 8], 1.0, &mut rng);

    let gp_value = |p: &Params<f64>| {
        let g = Graph::new();
        let bound = BoundParams::constants(&g, p);
        let d = Bound {
            net: &net,
            params: p,
            vars: &bound,
        };
        let v = gradient_penalty_with(&g, d, &points).unwrap();
        g.item(v)
    };

    let g = Graph::new();
    let bound = BoundParams::variables(&g, &params);
    let d = Bound {
        net: &net,
        params: &params,
        vars: &bound,
    };
    let gp = gradient_penalty_with(&g, d, &points).unwrap();
    let grads = bound.collect(&g, &g.grad(gp, &bound.vars(), false));

    let mut worst: f64 = 0.0;
    for (name, analytic) in grads.iter() {
        for i in 0..analytic.len() {
            let mut p = params.clone();
            p.get_mut(name).unwrap().data_mut()[i] += FD_STEP;
            let up = gp_value(&p);
            p.get_mut(name).unwrap().data_mut()[i] -= 2.0 * FD_STEP;
            let down = gp_value(&p);
            worst = worst.max(rel_err(analytic.data()[i], (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}
