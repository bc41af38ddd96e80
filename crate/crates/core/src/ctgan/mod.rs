//! Consistency-regularized Wasserstein GAN used as a compact channel model:
//! network builders, the three-term critic loss, the adversarial training
//! loop and generator snapshots.

mod loss;
mod snapshot;
mod train;

pub use loss::{
    consistency_term, discriminator_loss, generator_loss, gradient_penalty, gradient_penalty_with,
    interpolate, Bound, DiscLossTerms,
};
pub use snapshot::{
    load_snapshot, meta_path, save_snapshot, snapshot_generator, spec_hash, GeneratorSnapshot,
    SnapshotMeta,
};
pub use train::{train_gan, write_loss_csv, GanTrainConfig, GanTrained, LossRow};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::{self, LayerSpec, Mode, NetworkSpec, ParameterSet, Tensor};

pub const Z_DIM: usize = 64;
pub const GAN_LEAKY_SLOPE: f64 = 0.2;
/// Generator parameter budget behind the proposed method's memory footprint.
pub const GENERATOR_BUDGET: usize = 465_568;

/// Generator architecture: `dense(z -> base*h/4*w/4)`, two upsample-conv-BN
/// stages, then a 2-channel conv and `tanh`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub z_dim: usize,
    pub n_t: usize,
    pub n_c: usize,
    pub base_ch: usize,
    pub mid_ch: usize,
    pub top_ch: usize,
    /// When set, `count_params` must land within 5% of it.
    #[serde(default)]
    pub budget: Option<usize>,
}

impl GeneratorSpec {
    pub fn new(z_dim: usize, n_t: usize, n_c: usize, width: usize) -> Self {
        Self {
            z_dim,
            n_t,
            n_c,
            base_ch: width,
            mid_ch: width,
            top_ch: width,
            budget: None,
        }
    }

    /// Uniform-width generator whose parameter count is closest to `budget`.
    pub fn for_budget(z_dim: usize, n_t: usize, n_c: usize, budget: usize) -> Result<Self> {
        let best = (1..=2048)
            .map(|w| Self::new(z_dim, n_t, n_c, w))
            .min_by_key(|s| s.count_params().abs_diff(budget))
            .expect("non-empty search");
        let spec = Self {
            budget: Some(budget),
            ..best
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.z_dim == 0 || self.base_ch == 0 || self.mid_ch == 0 || self.top_ch == 0 {
            return Err(Error::Config(
                "generator widths and z_dim must be positive".into(),
            ));
        }
        if !self.n_t.is_multiple_of(4)
            || !self.n_c.is_multiple_of(4)
            || self.n_t == 0
            || self.n_c == 0
        {
            return Err(Error::Config(format!(
                "generator output {}x{} must be a positive multiple of 4 per axis",
                self.n_t, self.n_c
            )));
        }
        if let Some(b) = self.budget {
            let n = self.count_params();
            if (n as f64 - b as f64).abs() > 0.05 * b as f64 {
                return Err(Error::Config(format!(
                    "generator has {n} parameters, more than 5% away from budget {b}"
                )));
            }
        }
        Ok(())
    }

    pub fn network(&self) -> Result<NetworkSpec> {
        self.validate()?;
        let (h, w) = (self.n_t / 4, self.n_c / 4);
        NetworkSpec::new(
            vec![self.z_dim],
            vec![
                LayerSpec::dense(self.z_dim, self.base_ch * h * w),
                LayerSpec::Reshape {
                    shape: vec![self.base_ch, h, w],
                },
                LayerSpec::UpsampleNearest2x,
                LayerSpec::conv3x3(self.base_ch, self.mid_ch),
                LayerSpec::batch_norm(self.mid_ch),
                LayerSpec::leaky_relu(GAN_LEAKY_SLOPE),
                LayerSpec::UpsampleNearest2x,
                LayerSpec::conv3x3(self.mid_ch, self.top_ch),
                LayerSpec::batch_norm(self.top_ch),
                LayerSpec::leaky_relu(GAN_LEAKY_SLOPE),
                LayerSpec::conv3x3(self.top_ch, 2),
                LayerSpec::Tanh,
            ],
            vec![2, self.n_t, self.n_c],
        )
    }

    pub fn count_params(&self) -> usize {
        let (h, w) = (self.n_t / 4, self.n_c / 4);
        let dense = self.z_dim * self.base_ch * h * w + self.base_ch * h * w;
        let conv = |i: usize, o: usize| i * o * 9 + o;
        dense
            + conv(self.base_ch, self.mid_ch)
            + 2 * self.mid_ch
            + conv(self.mid_ch, self.top_ch)
            + 2 * self.top_ch
            + conv(self.top_ch, 2)
    }
}

/// Critic architecture: three stride-2 conv / leaky / dropout stages, a
/// 1-channel conv and a spatial mean, giving one scalar per sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub n_t: usize,
    pub n_c: usize,
    pub widths: [usize; 3],
    pub dropout: f64,
}

impl DiscriminatorSpec {
    pub fn new(n_t: usize, n_c: usize, widths: [usize; 3]) -> Self {
        Self {
            n_t,
            n_c,
            widths,
            dropout: 0.5,
        }
    }

    pub fn network(&self) -> Result<NetworkSpec> {
        let mut layers = Vec::new();
        let mut c_in = 2;
        for &c in &self.widths {
            layers.push(LayerSpec::conv3x3_stride2(c_in, c));
            layers.push(LayerSpec::leaky_relu(GAN_LEAKY_SLOPE));
            layers.push(LayerSpec::dropout(self.dropout));
            c_in = c;
        }
        layers.push(LayerSpec::conv3x3(c_in, 1));
        layers.push(LayerSpec::MeanReduce);
        NetworkSpec::new(vec![2, self.n_t, self.n_c], layers, vec![1])
    }
}

/// `B x z_dim` i.i.d. standard normal draws.
pub fn sample_latent(b: usize, z_dim: usize, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    Tensor::from_fn(&[b, z_dim], |_| rng.sample::<f32, _>(StandardNormal))
}

/// Eval-mode generator output for latent codes `z: [B, z_dim]`.
pub fn generate(net: &NetworkSpec, params: &ParameterSet, z: &Tensor<f32>) -> Result<Tensor<f32>> {
    let z_dim = net.input_shape()[0];
    if z.rank() != 2 || z.shape()[1] != z_dim {
        return Err(Error::Dimension {
            what: "latent width",
            found: z.shape().get(1).copied().unwrap_or(0),
            expected: z_dim,
        });
    }
    if z.batch() == 0 {
        let mut shape = vec![0];
        shape.extend_from_slice(net.output_shape());
        return Ok(Tensor::zeros(&shape));
    }
    netcore::forward(net, params, z, Mode::Eval, None)
}
