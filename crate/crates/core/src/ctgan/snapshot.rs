use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{generate, GanTrainConfig, GeneratorSpec};
use crate::error::{Error, Result};
use crate::netcore::{deserialize_params, serialize_params, NetworkSpec, ParameterSet, Tensor};

/// A frozen generator: its spec plus the serialized parameter payload.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSnapshot {
    pub scenario_id: String,
    pub spec: GeneratorSpec,
    pub payload: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub scenario_id: String,
    pub z_dim: usize,
    pub spec: GeneratorSpec,
    pub spec_hash: String,
    pub byte_size: usize,
    pub config: Option<GanTrainConfig>,
    pub seed: u64,
}

/// Hex SHA-256 of the spec's canonical JSON form.
pub fn spec_hash(spec: &GeneratorSpec) -> String {
    let json = serde_json::to_vec(spec).expect("spec serializes");
    Sha256::digest(&json)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn snapshot_generator(
    spec: &GeneratorSpec,
    params: &ParameterSet,
    scenario_id: &str,
) -> Result<GeneratorSnapshot> {
    let net = spec.network()?;
    let expected = net
        .init_params(&mut crate::netcore::RandomState::new(0).stream(crate::netcore::Stream::Init));
    for (k, t) in expected.iter() {
        if params.require(k)?.shape() != t.shape() {
            return Err(Error::ParamMismatch(format!(
                "{k} has the wrong shape for this generator spec"
            )));
        }
    }
    if params.len() != expected.len() {
        return Err(Error::ParamMismatch(
            "extra tensors in generator parameters".into(),
        ));
    }
    Ok(GeneratorSnapshot {
        scenario_id: scenario_id.to_string(),
        spec: spec.clone(),
        payload: serialize_params(params),
    })
}

impl GeneratorSnapshot {
    pub fn z_dim(&self) -> usize {
        self.spec.z_dim
    }

    /// Reported memory cost: 4 bytes per trainable parameter.
    pub fn byte_size(&self) -> usize {
        4 * self.spec.count_params()
    }

    fn corrupt(&self, reason: impl ToString) -> Error {
        Error::CorruptSnapshot {
            scenario: self.scenario_id.clone(),
            reason: reason.to_string(),
        }
    }

    pub fn network(&self) -> Result<NetworkSpec> {
        self.spec.network().map_err(|e| self.corrupt(e))
    }

    pub fn params(&self) -> Result<ParameterSet> {
        let p = deserialize_params(&self.payload).map_err(|e| self.corrupt(e))?;
        if p.count_params() != self.spec.count_params() {
            return Err(self.corrupt(format!(
                "payload holds {} parameters, spec expects {}",
                p.count_params(),
                self.spec.count_params()
            )));
        }
        Ok(p)
    }

    pub fn generate(&self, z: &Tensor<f32>) -> Result<Tensor<f32>> {
        let net = self.network()?;
        let params = self.params()?;
        generate(&net, &params, z).map_err(|e| self.corrupt(e))
    }
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    s.into()
}

/// Writes the payload to `path` and the sidecar to `<path>.json`.
pub fn save_snapshot(
    snap: &GeneratorSnapshot,
    path: &Path,
    config: Option<&GanTrainConfig>,
    seed: u64,
) -> Result<()> {
    fs::write(path, &snap.payload).map_err(|e| Error::io(path, e))?;
    let meta = SnapshotMeta {
        scenario_id: snap.scenario_id.clone(),
        z_dim: snap.z_dim(),
        spec: snap.spec.clone(),
        spec_hash: spec_hash(&snap.spec),
        byte_size: snap.byte_size(),
        config: config.copied(),
        seed,
    };
    let side = meta_path(path);
    fs::write(&side, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&side, e))
}

pub fn load_snapshot(path: &Path) -> Result<(GeneratorSnapshot, SnapshotMeta)> {
    let side = meta_path(path);
    let raw = fs::read(&side).map_err(|e| Error::io(&side, e))?;
    let meta: SnapshotMeta = serde_json::from_slice(&raw)
        .map_err(|e| Error::format("snapshot sidecar", e.to_string()))?;
    let corrupt = |reason: String| Error::CorruptSnapshot {
        scenario: meta.scenario_id.clone(),
        reason,
    };
    if spec_hash(&meta.spec) != meta.spec_hash {
        return Err(corrupt("spec hash does not match the recorded spec".into()));
    }
    let snap = GeneratorSnapshot {
        scenario_id: meta.scenario_id.clone(),
        spec: meta.spec.clone(),
        payload: fs::read(path).map_err(|e| Error::io(path, e))?,
    };
    if snap.byte_size() != meta.byte_size {
        return Err(corrupt(format!(
            "sidecar byte size {} disagrees with spec ({})",
            meta.byte_size,
            snap.byte_size()
        )));
    }
    snap.params()?;
    Ok((snap, meta))
}
