use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{discriminator_loss, generator_loss, Bound};
use super::{sample_latent, DiscriminatorSpec, GeneratorSpec};
use crate::channelgen::Samples;
use crate::error::{Error, Result};
use crate::netcore::{
    self, adam_step, AdamConfig, AdamState, BoundParams, ForwardCtx, Graph, Mode, NetworkSpec,
    ParameterSet, RandomState, Stream,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanTrainConfig {
    pub lambda_gp: f64,
    pub lambda_ct: f64,
    pub m_prime: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    /// Passes of the critic over the data.
    pub epochs: usize,
    /// Critic steps per generator step.
    pub n_critic: usize,
    pub seed: u64,
    /// Weight of a hidden-layer consistency term; reserved, must be 0.
    pub ct_hidden_weight: f64,
    pub divergence_limit: f64,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            lambda_gp: 10.0,
            lambda_ct: 2.0,
            m_prime: 0.2,
            lr: 1e-3,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
            batch_size: 100,
            epochs: 300,
            n_critic: 5,
            seed: 0,
            ct_hidden_weight: 0.0,
            divergence_limit: 1e6,
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_gp >= 0.0 && self.lambda_ct >= 0.0 && self.m_prime >= 0.0) {
            return Err(Error::Config(
                "lambda_gp, lambda_ct and m_prime must be >= 0".into(),
            ));
        }
        if self.n_critic == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "n_critic, batch size and epochs must be >= 1".into(),
            ));
        }
        if !(self.lr >= 0.0) || !(self.eps > 0.0) || !(self.divergence_limit > 0.0) {
            return Err(Error::Config(
                "GAN lr must be >= 0, eps and divergence limit > 0".into(),
            ));
        }
        if self.ct_hidden_weight != 0.0 {
            return Err(Error::Config(
                "hidden-layer consistency (ct_hidden_weight) is reserved and must be 0".into(),
            ));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// One generator iteration of the loss curves.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    pub iteration: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub gp_term: f64,
    pub ct_term: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanTrained {
    pub gen_spec: GeneratorSpec,
    pub gen_net: NetworkSpec,
    pub gen_params: ParameterSet,
    pub disc_net: NetworkSpec,
    pub disc_params: ParameterSet,
    pub curve: Vec<LossRow>,
}

fn guard(term: &'static str, value: f64, limit: f64) -> Result<()> {
    if value.abs() > limit {
        return Err(Error::Divergence { term, value, limit });
    }
    Ok(())
}

/// Alternating training: every `n_critic` critic steps (each on the next
/// real minibatch of a per-epoch shuffle) are followed by one generator step.
pub fn train_gan(
    data: &Samples,
    gen_spec: &GeneratorSpec,
    disc_spec: &DiscriminatorSpec,
    cfg: &GanTrainConfig,
) -> Result<GanTrained> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("GAN training data"));
    }
    let gen_net = gen_spec.network()?;
    let disc_net = disc_spec.network()?;
    if gen_net.output_shape() != data.sample_shape()
        || disc_net.input_shape() != data.sample_shape()
    {
        return Err(Error::Dimension {
            what: "GAN sample size",
            found: data.sample_len(),
            expected: gen_net.output_shape().iter().product(),
        });
    }
    let rs = RandomState::new(cfg.seed);
    let mut gen_params = gen_net.init_params(&mut rs.substream(Stream::Init, 0));
    let mut disc_params = disc_net.init_params(&mut rs.substream(Stream::Init, 1));
    let mut latent = rs.stream(Stream::Latent);
    let mut dropout = rs.stream(Stream::Dropout);
    let mut interp = rs.stream(Stream::Interpolation);
    let mut shuffle = rs.stream(Stream::Shuffle);
    let mut g_state = AdamState::new(cfg.adam(), &gen_params);
    let mut d_state = AdamState::new(cfg.adam(), &disc_params);

    let batch = cfg.batch_size.min(data.len());
    let z_dim = gen_spec.z_dim;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::new();
    let mut d_steps = 0usize;
    let mut last;

    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        for chunk in order.chunks(batch) {
            let real = data.batch(chunk);
            let z = sample_latent(chunk.len(), z_dim, &mut latent);
            let fake = netcore::forward(&gen_net, &gen_params, &z, Mode::Train, None)?;

            let g = Graph::new();
            let vars = BoundParams::variables(&g, &disc_params);
            let d = Bound {
                net: &disc_net,
                params: &disc_params,
                vars: &vars,
            };
            let (loss, terms) =
                discriminator_loss(&g, d, &real, &fake, cfg, &mut dropout, &mut interp)?;
            guard("discriminator loss", terms.total, cfg.divergence_limit)?;
            let grads = vars.collect(&g, &g.grad(loss, &vars.vars(), false));
            drop(g);
            adam_step(&mut disc_params, &grads, &mut d_state)?;
            last = terms;
            d_steps += 1;

            if d_steps.is_multiple_of(cfg.n_critic) {
                let g_loss = generator_step(
                    &gen_net,
                    &mut gen_params,
                    &disc_net,
                    &disc_params,
                    &mut g_state,
                    batch,
                    &mut latent,
                    &mut dropout,
                )?;
                guard("generator loss", g_loss, cfg.divergence_limit)?;
                curve.push(LossRow {
                    iteration: curve.len(),
                    d_loss: last.total,
                    g_loss,
                    gp_term: last.gp,
                    ct_term: last.ct,
                });
            }
        }
    }
    Ok(GanTrained {
        gen_spec: gen_spec.clone(),
        gen_net,
        gen_params,
        disc_net,
        disc_params,
        curve,
    })
}

#[allow(clippy::too_many_arguments)]
fn generator_step(
    gen_net: &NetworkSpec,
    gen_params: &mut ParameterSet,
    disc_net: &NetworkSpec,
    disc_params: &ParameterSet,
    state: &mut AdamState<f32>,
    batch: usize,
    latent: &mut rand_chacha::ChaCha8Rng,
    dropout: &mut rand_chacha::ChaCha8Rng,
) -> Result<f64> {
    let z = sample_latent(batch, gen_net.input_shape()[0], latent);
    let g = Graph::new();
    let gv = BoundParams::variables(&g, gen_params);
    let dv = BoundParams::constants(&g, disc_params);
    let mut ctx = ForwardCtx::train_no_dropout();
    let loss = generator_loss(
        &g,
        Bound {
            net: gen_net,
            params: gen_params,
            vars: &gv,
        },
        Bound {
            net: disc_net,
            params: disc_params,
            vars: &dv,
        },
        g.constant(z),
        &mut ctx,
        dropout,
    )?;
    let value = g.item(loss) as f64;
    let grads = gv.collect(&g, &g.grad(loss, &gv.vars(), false));
    drop(g);
    adam_step(gen_params, &grads, state)?;
    ctx.apply_bn_updates(gen_params);
    Ok(value)
}

/// `iteration,d_loss,g_loss,gp_term,ct_term` with full-precision floats.
pub fn write_loss_csv(curve: &[LossRow], path: &Path) -> Result<()> {
    let mut s = String::from("iteration,d_loss,g_loss,gp_term,ct_term\n");
    for r in curve {
        writeln!(
            s,
            "{},{},{},{},{}",
            r.iteration, r.d_loss, r.g_loss, r.gp_term, r.ct_term
        )
        .expect("writing to a String");
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn gaussian_toy(n: usize, mean: f32) -> Samples {
        let mut r = RandomState::new(42).stream(Stream::Data);
        let data = (0..n * 2 * 8 * 8)
            .map(|_| (mean + 0.1 * r.sample::<f32, _>(rand_distr::StandardNormal)).clamp(-1.0, 1.0))
            .collect();
        Samples::new(8, 8, data).unwrap()
    }

    fn small_cfg(epochs: usize) -> GanTrainConfig {
        GanTrainConfig {
            batch_size: 20,
            epochs,
            seed: 3,
            ..GanTrainConfig::default()
        }
    }

    #[test]
    fn rejects_reserved_hidden_term_and_bad_config() {
        let hidden = GanTrainConfig {
            ct_hidden_weight: 0.5,
            ..GanTrainConfig::default()
        };
        assert!(hidden.validate().is_err());
        let no_critic = GanTrainConfig {
            n_critic: 0,
            ..GanTrainConfig::default()
        };
        assert!(no_critic.validate().is_err());
    }

    #[test]
    fn deterministic_and_finite() {
        let data = gaussian_toy(60, 0.3);
        let gs = GeneratorSpec::new(8, 8, 8, 4);
        let ds = DiscriminatorSpec::new(8, 8, [4, 8, 8]);
        let a = train_gan(&data, &gs, &ds, &small_cfg(5)).unwrap();
        let b = train_gan(&data, &gs, &ds, &small_cfg(5)).unwrap();
        assert_eq!(a, b);
        // 3 critic steps per epoch, 15 total, one generator step per 5
        assert_eq!(a.curve.len(), 3);
        assert!(a
            .curve
            .iter()
            .all(|r| r.d_loss.is_finite() && r.g_loss.is_finite()));
    }

    #[test]
    fn generated_mean_moves_toward_data() {
        let target = 0.5f32;
        let data = gaussian_toy(100, target);
        let gs = GeneratorSpec::new(8, 8, 8, 4);
        let ds = DiscriminatorSpec::new(8, 8, [4, 8, 8]);
        let cfg = small_cfg(40);
        let net = gs.network().unwrap();
        let init = net.init_params(&mut RandomState::new(cfg.seed).substream(Stream::Init, 0));
        let trained = train_gan(&data, &gs, &ds, &cfg).unwrap();
        let z = sample_latent(200, 8, &mut RandomState::new(9).stream(Stream::Latent));
        let gap = |p: &ParameterSet| {
            let y = super::super::generate(&net, p, &z).unwrap();
            (y.mean() - data.data().iter().sum::<f32>() / data.data().len() as f32).abs()
        };
        let (before, after) = (gap(&init), gap(&trained.gen_params));
        assert!(after < before, "gap {before} -> {after}");
    }

    #[test]
    fn loss_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loss.csv");
        let mut r = RandomState::new(1).stream(Stream::Data);
        let rows: Vec<LossRow> = (0..3)
            .map(|i| LossRow {
                iteration: i,
                d_loss: r.random(),
                g_loss: -1.5,
                gp_term: 0.25,
                ct_term: 0.0,
            })
            .collect();
        write_loss_csv(&rows, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iteration,d_loss,g_loss,gp_term,ct_term");
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("1,"));
        assert!(lines[2].ends_with(",-1.5,0.25,0"));
    }
}
