//! Clustered-multipath ULA/OFDM channel synthesis.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry and statistics of one channel-distribution scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: String,
    pub n_t: usize,
    pub n_c: usize,
    pub paths: usize,
    /// Angle-of-departure sector `[min, max]` in radians.
    pub aod_min: f64,
    pub aod_max: f64,
    /// Maximum excess delay in units of `1 / bandwidth`.
    pub delay_spread: f64,
    pub bandwidth_hz: f64,
    /// Path `p` (0-based) carries power proportional to `exp(-power_decay * p)`.
    pub power_decay: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Desk-scale scenario with the default array and path settings and an
    /// AoD sector given in degrees.
    pub fn sector(id: &str, deg_min: f64, deg_max: f64, seed: u64) -> Self {
        Self {
            id: id.to_string(),
            n_t: 32,
            n_c: 32,
            paths: 25,
            aod_min: deg_min.to_radians(),
            aod_max: deg_max.to_radians(),
            delay_spread: 4.0,
            bandwidth_hz: 0.05e9,
            power_decay: 0.15,
            seed,
        }
    }

    /// The three default scenarios A, B, C with disjoint AoD sectors.
    pub fn default_sequence(seed: u64) -> Vec<Self> {
        vec![
            Self::sector("A", 0.0, 25.0, seed),
            Self::sector("B", 35.0, 60.0, seed.wrapping_add(1)),
            Self::sector("C", -60.0, -35.0, seed.wrapping_add(2)),
        ]
    }

    pub fn with_dims(mut self, n_t: usize, n_c: usize) -> Self {
        self.n_t = n_t;
        self.n_c = n_c;
        self
    }

    /// Real-form length `2 * n_t * n_c`.
    pub fn sample_len(&self) -> usize {
        2 * self.n_t * self.n_c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |why: String| Err(Error::Config(format!("scenario {}: {why}", self.id)));
        if self.n_t == 0 || self.n_c == 0 || self.paths == 0 {
            return bad("antenna, subcarrier and path counts must be at least 1".into());
        }
        if !(self.aod_min < self.aod_max && self.aod_min > -FRAC_PI_2 && self.aod_max < FRAC_PI_2) {
            return bad(format!(
                "AoD sector [{}, {}] must be increasing and inside (-pi/2, pi/2)",
                self.aod_min, self.aod_max
            ));
        }
        if !(self.delay_spread >= 0.0) || !(self.power_decay >= 0.0) || !(self.bandwidth_hz > 0.0) {
            return bad("delay spread and power decay must be >= 0, bandwidth > 0".into());
        }
        Ok(())
    }
}

/// ULA response with half-wavelength spacing: entry k is `exp(j*pi*k*sin(theta))`.
pub fn steering_vector(theta: f64, n_t: usize) -> Vec<Complex64> {
    let phase = PI * theta.sin();
    (0..n_t)
        .map(|k| Complex64::from_polar(1.0, phase * k as f64))
        .collect()
}

/// One propagation path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Path {
    pub gain: Complex64,
    pub aod: f64,
    /// Delay in units of `1 / bandwidth`.
    pub delay: f64,
}

/// A spatial-frequency channel matrix `H` (`n_t x n_c`, row-major).
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSample {
    pub n_t: usize,
    pub n_c: usize,
    pub h: Vec<Complex64>,
}

impl ChannelSample {
    pub fn at(&self, antenna: usize, subcarrier: usize) -> Complex64 {
        self.h[antenna * self.n_c + subcarrier]
    }

    /// Column `n`: the channel vector of subcarrier `n`.
    pub fn column(&self, n: usize) -> Vec<Complex64> {
        (0..self.n_t).map(|k| self.at(k, n)).collect()
    }

    /// Canonical `2 x n_t x n_c` real form: real parts, then imaginary parts.
    pub fn to_real(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.h.len());
        out.extend(self.h.iter().map(|c| c.re));
        out.extend(self.h.iter().map(|c| c.im));
        out
    }

    pub fn from_real(real: &[f64], n_t: usize, n_c: usize) -> Result<Self> {
        let len = n_t * n_c;
        if real.len() != 2 * len {
            return Err(Error::Dimension {
                what: "real-form sample length",
                found: real.len(),
                expected: 2 * len,
            });
        }
        let h = (0..len)
            .map(|i| Complex64::new(real[i], real[len + i]))
            .collect();
        Ok(Self { n_t, n_c, h })
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

/// `h_n = sum_p gain_p * a(aod_p) * exp(-j 2 pi f_n delay_p)` with `f_n = n / n_c`.
pub fn channel_from_paths(paths: &[Path], n_t: usize, n_c: usize) -> ChannelSample {
    let mut h = vec![Complex64::new(0.0, 0.0); n_t * n_c];
    for p in paths {
        let a = steering_vector(p.aod, n_t);
        for n in 0..n_c {
            let f = n as f64 / n_c as f64;
            let coeff = p.gain * Complex64::from_polar(1.0, -2.0 * PI * f * p.delay);
            for (k, ak) in a.iter().enumerate() {
                h[k * n_c + n] += coeff * ak;
            }
        }
    }
    ChannelSample { n_t, n_c, h }
}

/// Draws path parameters for `spec`: AoD uniform in the sector, delay
/// uniform in `[0, delay_spread]`, complex Gaussian gains with exponentially
/// decaying power normalized to unit total.
pub fn draw_paths<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Vec<Path> {
    let weights: Vec<f64> = (0..spec.paths)
        .map(|p| (-spec.power_decay * p as f64).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    weights
        .iter()
        .map(|w| {
            let sigma = (w / total / 2.0).sqrt();
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            let aod = rng.random_range(spec.aod_min..spec.aod_max);
            let delay = if spec.delay_spread > 0.0 {
                rng.random_range(0.0..=spec.delay_spread)
            } else {
                0.0
            };
            Path {
                gain: Complex64::new(re * sigma, im * sigma),
                aod,
                delay,
            }
        })
        .collect()
}

pub fn synth_channel<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> ChannelSample {
    channel_from_paths(&draw_paths(spec, rng), spec.n_t, spec.n_c)
}

/// Energy per DFT beam, summed over subcarriers.
pub fn beamspace_spectrum(sample: &ChannelSample) -> Vec<f64> {
    let n_t = sample.n_t;
    let mut energy = vec![0.0; n_t];
    let twiddles: Vec<Complex64> = (0..n_t * n_t)
        .map(|i| {
            Complex64::from_polar(1.0, -2.0 * PI * ((i / n_t) * (i % n_t)) as f64 / n_t as f64)
        })
        .collect();
    for n in 0..sample.n_c {
        for (b, e) in energy.iter_mut().enumerate() {
            let s: Complex64 = (0..n_t)
                .map(|k| twiddles[b * n_t + k] * sample.at(k, n))
                .sum();
            *e += s.norm_sqr();
        }
    }
    energy
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| {
            if x > bv {
                (i, x)
            } else {
                (bi, bv)
            }
        })
        .0
}
