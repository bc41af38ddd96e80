//! Autoencoder CSI feedback model: convolutional encoder to a real codeword
//! of length `V`, dense-plus-residual decoder back to the sample shape.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channelgen::Samples;
use crate::error::{Error, Result};
use crate::netcore::{
    adam_step, deserialize_params, serialize_params, AdamConfig, AdamState, BoundParams,
    ForwardCtx, Graph, LayerSpec, NetworkSpec, ParameterSet, RandomState, Scalar, Stream, Tensor,
    Var,
};

pub const LEAKY_SLOPE: f64 = 0.3;
pub const NMSE_FLOOR_DB: f64 = -300.0;
const EVAL_BATCH: usize = 250;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    CsinetLike,
}

/// Codeword length for a compression ratio: `round(gamma * 2 * n_t * n_c)`.
pub fn codeword_len(gamma: f64, n_t: usize, n_c: usize) -> Result<usize> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Config(format!(
            "compression ratio {gamma} outside (0, 1]"
        )));
    }
    let v = (gamma * (2 * n_t * n_c) as f64).round() as usize;
    if v < 1 {
        return Err(Error::Config(format!(
            "compression ratio {gamma} leaves no codeword entries at {n_t}x{n_c}"
        )));
    }
    Ok(v)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackModel {
    pub arch: Arch,
    pub gamma: f64,
    pub v: usize,
    pub n_t: usize,
    pub n_c: usize,
    pub encoder: NetworkSpec,
    pub decoder: NetworkSpec,
    pub enc_params: ParameterSet,
    pub dec_params: ParameterSet,
}

fn residual_block() -> LayerSpec {
    LayerSpec::Residual {
        body: vec![
            LayerSpec::conv3x3(2, 8),
            LayerSpec::batch_norm(8),
            LayerSpec::leaky_relu(LEAKY_SLOPE),
            LayerSpec::conv3x3(8, 16),
            LayerSpec::batch_norm(16),
            LayerSpec::leaky_relu(LEAKY_SLOPE),
            LayerSpec::conv3x3(16, 2),
            LayerSpec::batch_norm(2),
        ],
    }
}

/// Encoder and decoder specs for the given geometry.
pub fn feedback_specs(
    arch: Arch,
    v: usize,
    n_t: usize,
    n_c: usize,
) -> Result<(NetworkSpec, NetworkSpec)> {
    let Arch::CsinetLike = arch;
    let n = 2 * n_t * n_c;
    let sample = vec![2, n_t, n_c];
    let encoder = NetworkSpec::new(
        sample.clone(),
        vec![
            LayerSpec::conv3x3(2, 2),
            LayerSpec::batch_norm(2),
            LayerSpec::leaky_relu(LEAKY_SLOPE),
            LayerSpec::Flatten,
            LayerSpec::dense(n, v),
        ],
        vec![v],
    )?;
    let decoder = NetworkSpec::new(
        vec![v],
        vec![
            LayerSpec::dense(v, n),
            LayerSpec::Reshape {
                shape: sample.clone(),
            },
            residual_block(),
            LayerSpec::leaky_relu(LEAKY_SLOPE),
            residual_block(),
            LayerSpec::leaky_relu(LEAKY_SLOPE),
            LayerSpec::conv3x3(2, 2),
            LayerSpec::Tanh,
        ],
        sample,
    )?;
    Ok((encoder, decoder))
}

pub fn build_feedback_model(
    gamma: f64,
    n_t: usize,
    n_c: usize,
    arch: Arch,
    init: &mut ChaCha8Rng,
) -> Result<FeedbackModel> {
    let v = codeword_len(gamma, n_t, n_c)?;
    let (encoder, decoder) = feedback_specs(arch, v, n_t, n_c)?;
    let enc_params = encoder.init_params(init);
    let dec_params = decoder.init_params(init);
    Ok(FeedbackModel {
        arch,
        gamma,
        v,
        n_t,
        n_c,
        encoder,
        decoder,
        enc_params,
        dec_params,
    })
}

impl FeedbackModel {
    pub fn sample_shape(&self) -> [usize; 3] {
        [2, self.n_t, self.n_c]
    }

    /// Trainable parameters of encoder plus decoder.
    pub fn count_params(&self) -> usize {
        self.encoder.count_params() + self.decoder.count_params()
    }

    /// Verifies that the decoder only sees the `V`-entry codeword: the
    /// encoder ends in exactly `V` values and the decoder consumes exactly
    /// those, with no wider path between them.
    pub fn check_bottleneck(&self) -> Result<()> {
        let enc_out: usize = self.encoder.output_shape().iter().product();
        let dec_in: usize = self.decoder.input_shape().iter().product();
        let narrowest = self
            .encoder
            .shape_trace()
            .into_iter()
            .chain(self.decoder.shape_trace())
            .map(|s| s.iter().product::<usize>())
            .min()
            .unwrap_or(0);
        if enc_out != self.v || dec_in != self.v || narrowest != self.v {
            return Err(Error::InvalidNetwork(format!(
                "bottleneck broken: encoder emits {enc_out}, decoder takes {dec_in}, narrowest {narrowest}, V {}",
                self.v
            )));
        }
        Ok(())
    }

    fn check_batch(&self, x: &Tensor<f32>) -> Result<()> {
        if x.rank() != 4 || x.shape()[1..] != self.sample_shape() {
            return Err(Error::Shape {
                layer: 0,
                kind: "feedback input",
                expected: self.sample_shape().to_vec(),
                got: x.shape().get(1..).unwrap_or(&[]).to_vec(),
            });
        }
        Ok(())
    }
}

/// Eval-mode codewords `[B, V]` for a batch `[B, 2, n_t, n_c]`.
pub fn encode(model: &FeedbackModel, x: &Tensor<f32>) -> Result<Tensor<f32>> {
    model.check_batch(x)?;
    crate::netcore::forward(
        &model.encoder,
        &model.enc_params,
        x,
        crate::netcore::Mode::Eval,
        None,
    )
}

/// Eval-mode reconstructions for codewords `[B, V]`.
pub fn decode(model: &FeedbackModel, s: &Tensor<f32>) -> Result<Tensor<f32>> {
    if s.rank() != 2 || s.shape()[1] != model.v {
        return Err(Error::Dimension {
            what: "codeword length",
            found: s.shape().get(1).copied().unwrap_or(0),
            expected: model.v,
        });
    }
    crate::netcore::forward(
        &model.decoder,
        &model.dec_params,
        s,
        crate::netcore::Mode::Eval,
        None,
    )
}

pub fn reconstruct(model: &FeedbackModel, x: &Tensor<f32>) -> Result<Tensor<f32>> {
    decode(model, &encode(model, x)?)
}

/// `(1/N) sum_i ||h_i - h_hat_i||^2` over a batch.
pub fn mse_loss(h: &Tensor<f32>, h_hat: &Tensor<f32>) -> f64 {
    assert_eq!(h.shape(), h_hat.shape(), "mse_loss shape mismatch");
    let total: f64 = h
        .data()
        .iter()
        .zip(h_hat.data())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum();
    total / h.batch().max(1) as f64
}

fn mse_graph(g: &Graph<f32>, h: Var, h_hat: Var) -> Var {
    let n = g.shape(h)[0].max(1);
    let d = g.sub(h_hat, h);
    let s = g.sum_all(g.square(d));
    g.scale(s, 1.0 / n as f32)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 100,
            epochs: 300,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || self.batch_size == 0 || self.epochs == 0 || !(self.eps > 0.0) {
            return Err(Error::Config(
                "feedback training needs lr >= 0, batch size >= 1, epochs >= 1, eps > 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Per-epoch mean training loss.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossHistory {
    pub epoch_loss: Vec<f64>,
}

/// One Adam step on a batch; returns the batch loss.
pub fn train_step(
    model: &mut FeedbackModel,
    batch: &Tensor<f32>,
    enc_state: &mut AdamState<f32>,
    dec_state: &mut AdamState<f32>,
) -> Result<f64> {
    model.check_batch(batch)?;
    let g = Graph::new();
    let be = BoundParams::variables(&g, &model.enc_params);
    let bd = BoundParams::variables(&g, &model.dec_params);
    let x = g.constant(batch.clone());
    let mut ctx_e = ForwardCtx::train_no_dropout();
    let mut ctx_d = ForwardCtx::train_no_dropout();
    let s = model
        .encoder
        .forward_graph(&g, &model.enc_params, &be, x, &mut ctx_e)?;
    let y = model
        .decoder
        .forward_graph(&g, &model.dec_params, &bd, s, &mut ctx_d)?;
    let loss = mse_graph(&g, x, y);
    let value = g.item(loss) as f64;
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss { value });
    }
    let ve = be.vars();
    let mut wrt = ve.clone();
    wrt.extend(bd.vars());
    let grads = g.grad(loss, &wrt, false);
    let ge = be.collect(&g, &grads[..ve.len()]);
    let gd = bd.collect(&g, &grads[ve.len()..]);
    adam_step(&mut model.enc_params, &ge, enc_state)?;
    adam_step(&mut model.dec_params, &gd, dec_state)?;
    ctx_e.apply_bn_updates(&mut model.enc_params);
    ctx_d.apply_bn_updates(&mut model.dec_params);
    Ok(value)
}

/// Minibatch Adam on the union of `sets`, globally reshuffled every epoch.
/// Starts from the model's current weights with fresh optimizer moments.
pub fn train_feedback(
    model: &mut FeedbackModel,
    sets: &[&Samples],
    cfg: &TrainConfig,
) -> Result<LossHistory> {
    cfg.validate()?;
    let union = Samples::concat(sets.iter().copied(), model.n_t, model.n_c);
    if union.is_empty() {
        return Err(Error::Empty("feedback training data"));
    }
    if union.sample_shape() != model.sample_shape() {
        return Err(Error::Dimension {
            what: "training sample size",
            found: union.sample_len(),
            expected: 2 * model.n_t * model.n_c,
        });
    }
    let batch = cfg.batch_size.min(union.len());
    let mut enc_state = AdamState::new(cfg.adam(), &model.enc_params);
    let mut dec_state = AdamState::new(cfg.adam(), &model.dec_params);
    let mut shuffle = RandomState::new(cfg.seed).stream(Stream::Shuffle);
    let mut order: Vec<usize> = (0..union.len()).collect();
    let mut history = LossHistory::default();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let x = union.batch(chunk);
            total += train_step(model, &x, &mut enc_state, &mut dec_state)? * chunk.len() as f64;
        }
        history.epoch_loss.push(total / union.len() as f64);
    }
    Ok(history)
}

/// `10 log10(mean_i ||h_hat_i - h_i||^2 / ||h_i||^2)`, floored at -300 dB.
pub fn nmse_db<T: Scalar>(h: &[T], h_hat: &[T], sample_len: usize) -> Result<f64> {
    assert_eq!(h.len(), h_hat.len(), "nmse_db length mismatch");
    if h.is_empty() {
        return Err(Error::Empty("NMSE test set"));
    }
    let mut acc = 0.0;
    let n = h.len() / sample_len;
    for (i, (a, b)) in h
        .chunks_exact(sample_len)
        .zip(h_hat.chunks_exact(sample_len))
        .enumerate()
    {
        let power: f64 = a.iter().map(|&x| x.as_f64().powi(2)).sum();
        if power == 0.0 {
            return Err(Error::Degenerate(format!("test sample {i} has zero norm")));
        }
        let err: f64 = a
            .iter()
            .zip(b)
            .map(|(&x, &y)| (y.as_f64() - x.as_f64()).powi(2))
            .sum();
        acc += err / power;
    }
    Ok(ratio_to_db(acc / n as f64))
}

pub fn ratio_to_db(ratio: f64) -> f64 {
    if ratio < 1e-30 {
        NMSE_FLOOR_DB
    } else {
        10.0 * ratio.log10()
    }
}

/// Eval-mode NMSE of the model on a test collection.
pub fn nmse_eval(model: &FeedbackModel, test: &Samples) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Empty("NMSE test set"));
    }
    let mut recon = Vec::with_capacity(test.data().len());
    let idx: Vec<usize> = (0..test.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        recon.extend_from_slice(reconstruct(model, &test.batch(chunk))?.data());
    }
    nmse_db(test.data(), &recon, test.sample_len())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ModelSidecar {
    gamma: f64,
    v: usize,
    n_t: usize,
    n_c: usize,
    arch: Arch,
    train_config: Option<TrainConfig>,
    seed: u64,
}

/// Writes encoder and decoder parameters (prefixed `enc.` / `dec.`) plus a
/// JSON sidecar at `<path>.json`.
pub fn save_model(
    model: &FeedbackModel,
    path: &Path,
    train_config: Option<&TrainConfig>,
    seed: u64,
) -> Result<()> {
    let mut all = ParameterSet::new();
    for (k, t) in model.enc_params.iter() {
        all.insert(format!("enc.{k}"), t.clone())?;
    }
    for (k, t) in model.dec_params.iter() {
        all.insert(format!("dec.{k}"), t.clone())?;
    }
    fs::write(path, serialize_params(&all)).map_err(|e| Error::io(path, e))?;
    let side = json_sidecar(path);
    let meta = ModelSidecar {
        gamma: model.gamma,
        v: model.v,
        n_t: model.n_t,
        n_c: model.n_c,
        arch: model.arch,
        train_config: train_config.copied(),
        seed,
    };
    fs::write(&side, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&side, e))
}

pub fn load_model(path: &Path) -> Result<FeedbackModel> {
    let side = json_sidecar(path);
    let raw = fs::read(&side).map_err(|e| Error::io(&side, e))?;
    let meta: ModelSidecar =
        serde_json::from_slice(&raw).map_err(|e| Error::format("model sidecar", e.to_string()))?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let all = deserialize_params(&bytes)?;
    let (encoder, decoder) = feedback_specs(meta.arch, meta.v, meta.n_t, meta.n_c)?;
    let mut enc_params = ParameterSet::new();
    let mut dec_params = ParameterSet::new();
    for (k, t) in all.iter() {
        if let Some(rest) = k.strip_prefix("enc.") {
            enc_params.insert(rest, t.clone())?;
        } else if let Some(rest) = k.strip_prefix("dec.") {
            dec_params.insert(rest, t.clone())?;
        } else {
            return Err(Error::ParamMismatch(format!(
                "unexpected entry {k} in model file"
            )));
        }
    }
    let model = FeedbackModel {
        arch: meta.arch,
        gamma: meta.gamma,
        v: meta.v,
        n_t: meta.n_t,
        n_c: meta.n_c,
        encoder,
        decoder,
        enc_params,
        dec_params,
    };
    check_params(&model.encoder, &model.enc_params)?;
    check_params(&model.decoder, &model.dec_params)?;
    Ok(model)
}

fn check_params(net: &NetworkSpec, params: &ParameterSet) -> Result<()> {
    let fresh = net.init_params(&mut RandomState::new(0).stream(Stream::Init));
    if fresh.len() != params.len() {
        return Err(Error::ParamMismatch(format!(
            "expected {} tensors, file holds {}",
            fresh.len(),
            params.len()
        )));
    }
    for (k, t) in fresh.iter() {
        let got = params.require(k)?;
        if got.shape() != t.shape() {
            return Err(Error::ParamMismatch(format!(
                "{k}: expected shape {:?}, got {:?}",
                t.shape(),
                got.shape()
            )));
        }
    }
    Ok(())
}

fn json_sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    s.into()
}
