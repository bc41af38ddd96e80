//! Normalized scenario datasets and the `CSID` file format.
//!
//! ```text
//! "CSID" | u32 version=1 | u32 N | u32 C=2 | u32 N_t | u32 N_c | u8 normalized
//! N * 2 * N_t * N_c f32 little-endian, row-major
//! ```
//!
//! A JSON sidecar at `<path>.meta` carries the scenario spec, the
//! normalization statistics, the seed and the split counts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::{synth_channel, ScenarioSpec};
use crate::error::{Error, Result};
use crate::netcore::{RandomState, Stream, Tensor};

pub const DATASET_MAGIC: &[u8; 4] = b"CSID";
pub const DATASET_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 5 * 4 + 1;

pub const DEFAULT_TRAIN: usize = 5000;
pub const DEFAULT_TEST: usize = 1000;

/// A collection of real-form samples of shape `[2, n_t, n_c]`, stored flat.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    n_t: usize,
    n_c: usize,
    data: Vec<f32>,
}

impl Samples {
    pub fn new(n_t: usize, n_c: usize, data: Vec<f32>) -> Result<Self> {
        let per = 2 * n_t * n_c;
        if per == 0 || !data.len().is_multiple_of(per) {
            return Err(Error::Dimension {
                what: "sample buffer length",
                found: data.len(),
                expected: per,
            });
        }
        Ok(Self { n_t, n_c, data })
    }

    pub fn empty(n_t: usize, n_c: usize) -> Self {
        Self {
            n_t,
            n_c,
            data: Vec::new(),
        }
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_c(&self) -> usize {
        self.n_c
    }

    pub fn sample_len(&self) -> usize {
        2 * self.n_t * self.n_c
    }

    pub fn sample_shape(&self) -> [usize; 3] {
        [2, self.n_t, self.n_c]
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.sample_len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f32] {
        let n = self.sample_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.sample_len())
    }

    pub fn push(&mut self, sample: &[f32]) {
        assert_eq!(sample.len(), self.sample_len(), "sample length mismatch");
        self.data.extend_from_slice(sample);
    }

    pub fn extend(&mut self, other: &Samples) {
        assert_eq!(
            (self.n_t, self.n_c),
            (other.n_t, other.n_c),
            "sample dims mismatch"
        );
        self.data.extend_from_slice(&other.data);
    }

    /// Overwrites sample `i` in place.
    pub fn set(&mut self, i: usize, sample: &[f32]) {
        let n = self.sample_len();
        self.data[i * n..(i + 1) * n].copy_from_slice(sample);
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Samples {
        let n = self.sample_len();
        Samples {
            n_t: self.n_t,
            n_c: self.n_c,
            data: self.data[range.start * n..range.end * n].to_vec(),
        }
    }

    /// Batch tensor `[indices.len(), 2, n_t, n_c]`.
    pub fn batch(&self, indices: &[usize]) -> Tensor<f32> {
        let rows: Vec<&[f32]> = indices.iter().map(|&i| self.get(i)).collect();
        Tensor::stack(&self.sample_shape(), &rows)
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        let mut shape = vec![self.len()];
        shape.extend_from_slice(&self.sample_shape());
        Tensor::new(shape, self.data.clone())
    }

    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        if t.rank() != 4 || t.shape()[1] != 2 {
            return Err(Error::Dimension {
                what: "sample tensor rank",
                found: t.rank(),
                expected: 4,
            });
        }
        Samples::new(t.shape()[2], t.shape()[3], t.data().to_vec())
    }

    pub fn concat<'a>(
        parts: impl IntoIterator<Item = &'a Samples>,
        n_t: usize,
        n_c: usize,
    ) -> Samples {
        let mut out = Samples::empty(n_t, n_c);
        for p in parts {
            out.extend(p);
        }
        out
    }
}

/// Min/max over every real-form element of a training split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: f32,
    pub max: f32,
}

impl NormStats {
    pub fn from_samples(s: &Samples) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::Empty("normalization statistics need samples"));
        }
        let (min, max) = s
            .data()
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            });
        Ok(Self { min, max })
    }

    fn range(&self) -> Result<f64> {
        if !(self.max > self.min) {
            return Err(Error::Degenerate(format!(
                "normalization range is empty (min {} max {})",
                self.min, self.max
            )));
        }
        Ok(self.max as f64 - self.min as f64)
    }
}

/// `x' = 2 (x - min) / (max - min) - 1`.
pub fn normalize(x: f32, stats: &NormStats) -> Result<f32> {
    let r = stats.range()?;
    Ok((2.0 * (x as f64 - stats.min as f64) / r - 1.0) as f32)
}

pub fn denormalize(x: f32, stats: &NormStats) -> Result<f32> {
    let r = stats.range()?;
    Ok(((x as f64 + 1.0) * 0.5 * r + stats.min as f64) as f32)
}

/// Normalizes every element; with `clip`, results are clamped to `[-1, 1]`.
pub fn normalize_samples(s: &Samples, stats: &NormStats, clip: bool) -> Result<Samples> {
    let r = stats.range()?;
    let lo = stats.min as f64;
    let data = s
        .data()
        .iter()
        .map(|&x| {
            let v = (2.0 * (x as f64 - lo) / r - 1.0) as f32;
            if clip {
                v.clamp(-1.0, 1.0)
            } else {
                v
            }
        })
        .collect();
    Samples::new(s.n_t(), s.n_c(), data)
}

pub fn denormalize_samples(s: &Samples, stats: &NormStats) -> Result<Samples> {
    let r = stats.range()?;
    let data = s
        .data()
        .iter()
        .map(|&x| ((x as f64 + 1.0) * 0.5 * r + stats.min as f64) as f32)
        .collect();
    Samples::new(s.n_t(), s.n_c(), data)
}

/// Train/test splits of one scenario in the normalized domain.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioDataset {
    pub spec: ScenarioSpec,
    pub train: Samples,
    pub test: Samples,
    pub stats: NormStats,
}

impl ScenarioDataset {
    /// Splits raw samples in order (first `n_train` train, next `n_test` test),
    /// computes stats on the train split and normalizes both, clipping the test split.
    pub fn from_raw(
        spec: ScenarioSpec,
        raw: &Samples,
        n_train: usize,
        n_test: usize,
    ) -> Result<Self> {
        if n_train == 0 || n_test == 0 {
            return Err(Error::Config(
                "train and test counts must be at least 1".into(),
            ));
        }
        if raw.len() < n_train + n_test {
            return Err(Error::Dimension {
                what: "sample count",
                found: raw.len(),
                expected: n_train + n_test,
            });
        }
        let train_raw = raw.slice(0..n_train);
        let test_raw = raw.slice(n_train..n_train + n_test);
        let stats = NormStats::from_samples(&train_raw)?;
        Ok(Self {
            train: normalize_samples(&train_raw, &stats, false)?,
            test: normalize_samples(&test_raw, &stats, true)?,
            spec,
            stats,
        })
    }
}

/// `n` raw (unnormalized) samples; sample `i` uses its own data substream.
pub fn generate_raw(spec: &ScenarioSpec, n: usize) -> Result<Samples> {
    spec.validate()?;
    let rs = RandomState::new(spec.seed);
    let mut out = Samples::empty(spec.n_t, spec.n_c);
    for i in 0..n {
        let h = synth_channel(spec, &mut rs.substream(Stream::Data, i as u64));
        let real: Vec<f32> = h.to_real().into_iter().map(|x| x as f32).collect();
        out.push(&real);
    }
    Ok(out)
}

pub fn generate_dataset(
    spec: &ScenarioSpec,
    n_train: usize,
    n_test: usize,
) -> Result<ScenarioDataset> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::Config(
            "train and test counts must be at least 1".into(),
        ));
    }
    let raw = generate_raw(spec, n_train + n_test)?;
    ScenarioDataset::from_raw(spec.clone(), &raw, n_train, n_test)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    spec: ScenarioSpec,
    stats: NormStats,
    seed: u64,
    n_train: usize,
    n_test: usize,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".meta");
    PathBuf::from(s)
}

/// Writes samples in the `CSID` layout.
pub fn write_samples(path: &Path, samples: &Samples, normalized: bool) -> Result<()> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * samples.data().len());
    out.extend_from_slice(DATASET_MAGIC);
    for v in [
        DATASET_VERSION,
        samples.len() as u32,
        2,
        samples.n_t() as u32,
        samples.n_c() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(normalized as u8);
    for &x in samples.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Parsed `CSID` file: samples plus the normalized flag.
pub fn read_samples(path: &Path) -> Result<(Samples, bool)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::format("dataset file", "shorter than header"));
    }
    if &bytes[..4] != DATASET_MAGIC {
        return Err(Error::format("dataset file", "bad magic"));
    }
    let u = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
    let version = u(0);
    if version != DATASET_VERSION {
        return Err(Error::UnsupportedVersion {
            what: "dataset file",
            found: version,
            expected: DATASET_VERSION,
        });
    }
    let (n, c, n_t, n_c) = (u(1) as usize, u(2) as usize, u(3) as usize, u(4) as usize);
    if c != 2 {
        return Err(Error::Dimension {
            what: "channel count",
            found: c,
            expected: 2,
        });
    }
    let normalized = match bytes[HEADER_LEN - 1] {
        0 => false,
        1 => true,
        other => {
            return Err(Error::format(
                "dataset file",
                format!("normalized flag {other}"),
            ))
        }
    };
    let expected = n * 2 * n_t * n_c * 4;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::format(
            "dataset file",
            format!(
                "payload is {} bytes, header implies {expected}",
                payload.len()
            ),
        ));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::format("dataset file", "non-finite entries"));
    }
    Ok((Samples::new(n_t, n_c, data)?, normalized))
}

/// Writes the normalized train+test samples (in that order) plus the sidecar.
pub fn save_dataset(ds: &ScenarioDataset, path: &Path) -> Result<()> {
    let all = Samples::concat([&ds.train, &ds.test], ds.spec.n_t, ds.spec.n_c);
    write_samples(path, &all, true)?;
    let meta = Sidecar {
        spec: ds.spec.clone(),
        stats: ds.stats,
        seed: ds.spec.seed,
        n_train: ds.train.len(),
        n_test: ds.test.len(),
    };
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&side, e))
}

pub fn load_dataset(path: &Path) -> Result<ScenarioDataset> {
    let (all, normalized) = read_samples(path)?;
    if !normalized {
        return Err(Error::format(
            "dataset file",
            "holds unnormalized samples; use import_external",
        ));
    }
    let side = sidecar_path(path);
    let raw = match fs::read(&side) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingStats(path.to_path_buf()))
        }
        Err(e) => return Err(Error::io(&side, e)),
    };
    let meta: Sidecar = serde_json::from_slice(&raw)
        .map_err(|e| Error::format("dataset sidecar", e.to_string()))?;
    if meta.n_train + meta.n_test != all.len() {
        return Err(Error::format(
            "dataset sidecar",
            format!(
                "counts {}+{} do not match {} samples",
                meta.n_train,
                meta.n_test,
                all.len()
            ),
        ));
    }
    if (meta.spec.n_t, meta.spec.n_c) != (all.n_t(), all.n_c()) {
        return Err(Error::format(
            "dataset sidecar",
            "dimensions disagree with the data file",
        ));
    }
    Ok(ScenarioDataset {
        train: all.slice(0..meta.n_train),
        test: all.slice(meta.n_train..all.len()),
        spec: meta.spec,
        stats: meta.stats,
    })
}

/// Imports an externally exported, unnormalized `CSID` file with the
/// default 5000/1000 split.
pub fn import_external(path: &Path, n_t: usize, n_c: usize) -> Result<ScenarioDataset> {
    import_external_with(path, n_t, n_c, DEFAULT_TRAIN, DEFAULT_TEST)
}

/// Uses the first `n_train + n_test` samples in file order.
pub fn import_external_with(
    path: &Path,
    n_t: usize,
    n_c: usize,
    n_train: usize,
    n_test: usize,
) -> Result<ScenarioDataset> {
    let (raw, normalized) = read_samples(path)?;
    if raw.n_t() != n_t {
        return Err(Error::Dimension {
            what: "N_t",
            found: raw.n_t(),
            expected: n_t,
        });
    }
    if raw.n_c() != n_c {
        return Err(Error::Dimension {
            what: "N_c",
            found: raw.n_c(),
            expected: n_c,
        });
    }
    if normalized {
        return Err(Error::format(
            "external dataset",
            "expected unnormalized samples",
        ));
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "external".into());
    let mut spec = ScenarioSpec::sector(&id, -1.0, 1.0, 0).with_dims(n_t, n_c);
    spec.id = id;
    ScenarioDataset::from_raw(spec, &raw, n_train, n_test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> ScenarioSpec {
        ScenarioSpec::sector("A", 0.0, 25.0, 11).with_dims(8, 8)
    }

    #[test]
    fn normalize_endpoints_and_midpoint() {
        let st = NormStats {
            min: -3.0,
            max: 5.0,
        };
        assert_eq!(normalize(-3.0, &st).unwrap(), -1.0);
        assert_eq!(normalize(5.0, &st).unwrap(), 1.0);
        assert_eq!(normalize(1.0, &st).unwrap(), 0.0);
        let degenerate = NormStats { min: 2.0, max: 2.0 };
        assert!(matches!(
            normalize(2.0, &degenerate),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn denormalize_inverts() {
        let st = NormStats {
            min: -0.37,
            max: 0.41,
        };
        for i in 0..=100 {
            let x = -0.37 + 0.78 * i as f32 / 100.0;
            let back = denormalize(normalize(x, &st).unwrap(), &st).unwrap();
            assert!((back - x).abs() <= 1e-6 * 0.78);
        }
    }

    #[test]
    fn dataset_sizes_and_range() {
        let ds = generate_dataset(&small_spec(), 60, 20).unwrap();
        assert_eq!((ds.train.len(), ds.test.len()), (60, 20));
        let d = ds.train.data();
        assert!(d.iter().all(|x| (-1.0..=1.0).contains(x)));
        assert!(d.contains(&-1.0) && d.contains(&1.0));
        assert!(ds.test.data().iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_dataset(&small_spec(), 30, 10).unwrap();
        let b = generate_dataset(&small_spec(), 30, 10).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_counts_rejected() {
        assert!(generate_dataset(&small_spec(), 0, 10).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csid");
        let ds = generate_dataset(&small_spec(), 20, 5).unwrap();
        save_dataset(&ds, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);
    }

    #[test]
    fn missing_sidecar_is_distinguished() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csid");
        let ds = generate_dataset(&small_spec(), 20, 5).unwrap();
        save_dataset(&ds, &path).unwrap();
        fs::remove_file(sidecar_path(&path)).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::MissingStats(_))));

        // corrupt payload is a format error, not missing stats
        save_dataset(&ds, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csid");
        let ds = generate_dataset(&small_spec(), 4, 2).unwrap();
        save_dataset(&ds, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[4] = 2;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(Error::UnsupportedVersion {
                found: 2,
                expected: 1,
                ..
            })
        ));
    }

    #[test]
    fn import_matches_generation_and_checks_dims() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ext.csid");
        let spec = small_spec();
        let raw = generate_raw(&spec, 60).unwrap();
        write_samples(&path, &raw, false).unwrap();

        let imported = import_external_with(&path, 8, 8, 50, 10).unwrap();
        let generated = generate_dataset(&spec, 50, 10).unwrap();
        assert_eq!(imported.train, generated.train);
        assert_eq!(imported.test, generated.test);
        assert_eq!(imported.stats, generated.stats);

        assert!(matches!(
            import_external_with(&path, 16, 8, 50, 10),
            Err(Error::Dimension { what: "N_t", .. })
        ));
        assert!(import_external_with(&path, 8, 8, 55, 10).is_err());
    }

    #[test]
    fn non_finite_entries_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csid");
        let mut raw = generate_raw(&small_spec(), 3).unwrap();
        raw.set(1, &vec![f32::NAN; 128]);
        write_samples(&path, &raw, false).unwrap();
        assert!(matches!(
            import_external_with(&path, 8, 8, 2, 1),
            Err(Error::Format { .. })
        ));
    }
}
