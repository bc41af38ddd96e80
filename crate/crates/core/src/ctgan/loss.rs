use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::train::GanTrainConfig;
use crate::error::{Error, Result};
use crate::netcore::{
    self, BoundParams, ForwardCtx, Graph, NetworkSpec, Params, Scalar, Tensor, Var,
};

// Keeps the per-sample gradient norm differentiable at zero.
const NORM_EPS: f64 = 1e-12;

/// A network bound into a graph.
#[derive(Clone, Copy)]
pub struct Bound<'a, T: Scalar> {
    pub net: &'a NetworkSpec,
    pub params: &'a Params<T>,
    pub vars: &'a BoundParams,
}

/// Scalar parts of a critic loss evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DiscLossTerms {
    /// `mean D(G(z))`
    pub fake_mean: f64,
    /// `mean D(H)`
    pub real_mean: f64,
    pub gp: f64,
    pub ct: f64,
    pub total: f64,
}

/// `c_i * real_i + (1 - c_i) * fake_i` per sample.
pub fn interpolate<T: Scalar>(real: &Tensor<T>, fake: &Tensor<T>, coeffs: &[T]) -> Tensor<T> {
    assert_eq!(
        real.shape(),
        fake.shape(),
        "interpolation batch shapes differ"
    );
    assert_eq!(coeffs.len(), real.batch(), "one coefficient per sample");
    let n = real.sample_len();
    let mut out = Tensor::zeros(real.shape());
    for (i, &c) in coeffs.iter().enumerate() {
        let dst = &mut out.data_mut()[i * n..(i + 1) * n];
        for ((d, &r), &f) in dst.iter_mut().zip(real.sample(i)).zip(fake.sample(i)) {
            *d = c * r + (T::one() - c) * f;
        }
    }
    out
}

/// Mean over samples of `(||grad_x D(x)||_2 - 1)^2` at the given points,
/// with the critic in eval mode. Differentiable in the critic parameters.
pub fn gradient_penalty_with<T: Scalar>(
    g: &Graph<T>,
    d: Bound<'_, T>,
    points: &Tensor<T>,
) -> Result<Var> {
    let x = g.variable(points.clone());
    let gx = netcore::input_gradient_graph(g, d.net, d.params, d.vars, x)?;
    let per_sample = g.sum_last(g.square(gx), points.rank() - 1);
    let norm = g.pow(g.add_scalar(per_sample, T::of(NORM_EPS)), T::of(0.5));
    let dev = g.add_scalar(norm, -T::one());
    Ok(g.mean_all(g.square(dev)))
}

/// Gradient penalty at per-sample random interpolates; one `U[0,1)`
/// coefficient per sample is drawn from `interp`.
pub fn gradient_penalty<T: Scalar>(
    g: &Graph<T>,
    d: Bound<'_, T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    interp: &mut ChaCha8Rng,
) -> Result<Var> {
    let coeffs: Vec<T> = (0..real.batch())
        .map(|_| T::of(interp.random::<f64>()))
        .collect();
    gradient_penalty_with(g, d, &interpolate(real, fake, &coeffs))
}

/// Mean over samples of `max(0, |D1(x) - D2(x)| - m_prime)` for two
/// train-mode passes with independent dropout masks.
pub fn consistency_term<T: Scalar>(
    g: &Graph<T>,
    d: Bound<'_, T>,
    real: Var,
    m_prime: f64,
    dropout: &mut ChaCha8Rng,
) -> Result<Var> {
    let d1 = d
        .net
        .forward_graph(g, d.params, d.vars, real, &mut ForwardCtx::train(dropout))?;
    let d2 = d
        .net
        .forward_graph(g, d.params, d.vars, real, &mut ForwardCtx::train(dropout))?;
    let gap = g.abs(g.sub(d1, d2));
    Ok(g.mean_all(g.relu(g.add_scalar(gap, T::of(-m_prime)))))
}

fn finite(term: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteTerm { term, value })
    }
}

/// `mean D(fake) - mean D(real) + lambda_gp * GP + lambda_ct * CT`.
///
/// `fake` is a detached generator batch. The expectation terms and the
/// consistency passes draw dropout masks from `dropout`; interpolation
/// coefficients come from `interp`.
pub fn discriminator_loss<T: Scalar>(
    g: &Graph<T>,
    d: Bound<'_, T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    cfg: &GanTrainConfig,
    dropout: &mut ChaCha8Rng,
    interp: &mut ChaCha8Rng,
) -> Result<(Var, DiscLossTerms)> {
    let xr = g.constant(real.clone());
    let xf = g.constant(fake.clone());
    let df = d
        .net
        .forward_graph(g, d.params, d.vars, xf, &mut ForwardCtx::train(dropout))?;
    let dr = d
        .net
        .forward_graph(g, d.params, d.vars, xr, &mut ForwardCtx::train(dropout))?;
    let fake_mean = g.mean_all(df);
    let real_mean = g.mean_all(dr);
    let gp = gradient_penalty(g, d, real, fake, interp)?;
    let ct = consistency_term(g, d, xr, cfg.m_prime, dropout)?;

    let em = g.sub(fake_mean, real_mean);
    let total = g.add(
        g.add(em, g.scale(gp, T::of(cfg.lambda_gp))),
        g.scale(ct, T::of(cfg.lambda_ct)),
    );
    let terms = DiscLossTerms {
        fake_mean: finite("fake expectation", g.item(fake_mean).as_f64())?,
        real_mean: finite("real expectation", g.item(real_mean).as_f64())?,
        gp: finite("gradient penalty", g.item(gp).as_f64())?,
        ct: finite("consistency term", g.item(ct).as_f64())?,
        total: finite("discriminator loss", g.item(total).as_f64())?,
    };
    Ok((total, terms))
}

/// `-mean D(G(z))` with both networks in train mode. Batch-norm statistics
/// of the generator pass land in `gen_ctx`.
pub fn generator_loss<T: Scalar>(
    g: &Graph<T>,
    gen: Bound<'_, T>,
    d: Bound<'_, T>,
    z: Var,
    gen_ctx: &mut ForwardCtx<'_>,
    dropout: &mut ChaCha8Rng,
) -> Result<Var> {
    let fake = gen.net.forward_graph(g, gen.params, gen.vars, z, gen_ctx)?;
    let score = d
        .net
        .forward_graph(g, d.params, d.vars, fake, &mut ForwardCtx::train(dropout))?;
    let loss = g.scale(g.mean_all(score), -T::one());
    finite("generator loss", g.item(loss).as_f64())?;
    Ok(loss)
}
