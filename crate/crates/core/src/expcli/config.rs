use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::channelgen::ScenarioSpec;
use crate::ctgan::{DiscriminatorSpec, GanTrainConfig, GeneratorSpec, GENERATOR_BUDGET, Z_DIM};
use crate::error::{Error, Result};
use crate::feedbacknet::{codeword_len, TrainConfig};
use crate::memory::{ContinualConfig, StrategyKind};

/// Environment variable that replaces the configured master seed.
pub const SEED_ENV: &str = "CSILAB_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Full,
}

/// Everything a protocol run needs. Config files are layered over a preset,
/// so they only have to name the fields they change.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    /// Scenario sequence in training order. The `seed` of each entry is
    /// replaced by the seed plan.
    pub scenarios: Vec<ScenarioSpec>,
    pub strategies: Vec<String>,
    /// Compression ratios for `run`.
    pub gammas: Vec<f64>,
    /// Compression ratios for `sweep-gamma`.
    pub sweep_gammas: Vec<f64>,
    /// Replay sizes per generator for the proposed strategy.
    pub ks: Vec<usize>,
    /// Replay size used by `sweep-gamma`; defaults to the largest of `ks`.
    #[serde(default)]
    pub sweep_k: Option<usize>,
    pub n_train: usize,
    pub n_test: usize,
    /// Reservoir and max-min store size.
    pub capacity: usize,
    pub warm_start: bool,
    pub train: TrainConfig,
    pub gan: GanTrainConfig,
    /// Uniform generator width; `None` sizes it to the parameter budget.
    #[serde(default)]
    pub generator_width: Option<usize>,
    pub critic_widths: [usize; 3],
    pub out_dir: PathBuf,
    pub master_seed: u64,
    /// Write measured step times into the results file. Off by default so
    /// that result files are byte-reproducible; times always go to `timings.csv`.
    pub record_wall_time: bool,
}

const GAMMAS: [f64; 4] = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0];

impl ExperimentConfig {
    /// The published setup: 32x32, 5000/1000 split, 300 epochs.
    pub fn full() -> Self {
        Self {
            preset: Preset::Full,
            scenarios: ScenarioSpec::default_sequence(0),
            strategies: ["proposed", "dt", "joint", "reservoir", "minmax", "mtl"]
                .map(String::from)
                .to_vec(),
            gammas: GAMMAS.to_vec(),
            sweep_gammas: GAMMAS.to_vec(),
            ks: vec![1000, 2000, 5000, 10_000],
            sweep_k: None,
            n_train: 5000,
            n_test: 1000,
            capacity: 2000,
            warm_start: true,
            train: TrainConfig::default(),
            gan: GanTrainConfig::default(),
            generator_width: None,
            critic_widths: [64, 128, 256],
            out_dir: PathBuf::from("runs/full"),
            master_seed: 0,
            record_wall_time: false,
        }
    }

    /// Single-core scale: 16x16, 500/100 split, 50 epochs, batch 50.
    pub fn desk() -> Self {
        let train = TrainConfig {
            epochs: 50,
            batch_size: 50,
            ..TrainConfig::default()
        };
        let gan = GanTrainConfig {
            epochs: 50,
            batch_size: 50,
            ..GanTrainConfig::default()
        };
        Self {
            preset: Preset::Desk,
            scenarios: ScenarioSpec::default_sequence(0)
                .into_iter()
                .map(|s| s.with_dims(16, 16))
                .collect(),
            strategies: ["proposed", "dt", "joint"].map(String::from).to_vec(),
            gammas: vec![1.0 / 16.0],
            sweep_gammas: GAMMAS.to_vec(),
            ks: vec![250, 500, 1000, 2000],
            sweep_k: None,
            n_train: 500,
            n_test: 100,
            capacity: 2000,
            warm_start: true,
            train,
            gan,
            generator_width: Some(16),
            critic_widths: [16, 32, 64],
            out_dir: PathBuf::from("runs/desk"),
            master_seed: 0,
            record_wall_time: false,
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::Full => Self::full(),
        }
    }

    /// Parses JSON or TOML (by extension, falling back to content sniffing)
    /// and layers it over a preset: `desk` forces the desk preset, otherwise
    /// the file's `preset` key decides, defaulting to full.
    pub fn from_file(path: &Path, desk: bool) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_toml = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => true,
            Some("json") => false,
            _ => !text.trim_start().starts_with('{'),
        };
        let overlay: Value = if is_toml {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        Self::from_value(overlay, desk)
    }

    pub fn from_value(overlay: Value, desk: bool) -> Result<Self> {
        if !overlay.is_object() {
            return Err(Error::Config("config must be a table/object".into()));
        }
        let preset = if desk {
            Preset::Desk
        } else {
            match overlay.get("preset") {
                None => Preset::Full,
                Some(v) => serde_json::from_value(v.clone())
                    .map_err(|e| Error::Config(format!("preset: {e}")))?,
            }
        };
        let mut base = serde_json::to_value(Self::preset(preset))?;
        merge(&mut base, overlay);
        base["preset"] = serde_json::to_value(preset)?;
        let cfg: Self = serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `CSILAB_SEED` if it is set.
    pub fn apply_env(&mut self) -> Result<()> {
        match std::env::var(SEED_ENV) {
            Ok(v) => {
                self.master_seed = v.trim().parse().map_err(|_| {
                    Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))
                })?;
                Ok(())
            }
            Err(std::env::VarError::NotPresent) => Ok(()),
            Err(e) => Err(Error::Config(format!("{SEED_ENV}: {e}"))),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.scenarios
            .first()
            .map(|s| (s.n_t, s.n_c))
            .unwrap_or((0, 0))
    }

    pub fn strategy_kinds(&self) -> Result<Vec<StrategyKind>> {
        let mut out = Vec::new();
        for name in &self.strategies {
            let base = StrategyKind::from_name(name, 0)?;
            match base {
                StrategyKind::Proposed { warm_start, .. } => {
                    for &k in &self.ks {
                        out.push(StrategyKind::Proposed {
                            k,
                            warm_start: warm_start && self.warm_start,
                        });
                    }
                }
                StrategyKind::Reservoir { .. } => out.push(StrategyKind::Reservoir {
                    capacity: self.capacity,
                }),
                StrategyKind::MinMax { .. } => out.push(StrategyKind::MinMax {
                    capacity: self.capacity,
                }),
                other => out.push(other),
            }
        }
        Ok(out)
    }

    pub fn generator_spec(&self) -> Result<GeneratorSpec> {
        let (n_t, n_c) = self.dims();
        match self.generator_width {
            Some(w) => {
                let spec = GeneratorSpec::new(Z_DIM, n_t, n_c, w);
                spec.validate()?;
                Ok(spec)
            }
            None => GeneratorSpec::for_budget(Z_DIM, n_t, n_c, GENERATOR_BUDGET),
        }
    }

    pub fn continual(&self) -> Result<ContinualConfig> {
        let (n_t, n_c) = self.dims();
        Ok(ContinualConfig {
            train: self.train,
            gan: self.gan,
            gen_spec: self.generator_spec()?,
            disc_spec: DiscriminatorSpec::new(n_t, n_c, self.critic_widths),
        })
    }

    pub fn sweep_k(&self) -> usize {
        self.sweep_k
            .unwrap_or_else(|| self.ks.iter().copied().max().unwrap_or(0))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.scenarios.is_empty() {
            return bad("at least one scenario is required".into());
        }
        let mut ids = HashSet::new();
        for s in &self.scenarios {
            if s.id.is_empty() || s.id.contains([',', '"', '\n', '/', '\\']) {
                return bad(format!(
                    "scenario id {:?} is empty or has reserved characters",
                    s.id
                ));
            }
            if !ids.insert(s.id.as_str()) {
                return bad(format!("duplicate scenario id {:?}", s.id));
            }
            s.validate()?;
        }
        let (n_t, n_c) = self.dims();
        if self.scenarios.iter().any(|s| (s.n_t, s.n_c) != (n_t, n_c)) {
            return bad("all scenarios must share N_t and N_c".into());
        }
        if self.strategies.is_empty() {
            return bad("no strategies requested".into());
        }
        let kinds = self.strategy_kinds()?;
        let wants_proposed = self.strategies.iter().any(|s| s.starts_with("proposed"));
        if wants_proposed && self.ks.is_empty() {
            return bad("the proposed strategy needs at least one K".into());
        }
        let mut seen = HashSet::new();
        if !kinds.iter().all(|k| seen.insert(k)) {
            return bad("strategy list has duplicates".into());
        }
        for g in self.gammas.iter().chain(&self.sweep_gammas) {
            codeword_len(*g, n_t, n_c)?;
        }
        if self.gammas.is_empty() {
            return bad("gamma list is empty".into());
        }
        if self.n_train == 0 || self.n_test == 0 {
            return bad("train and test counts must be at least 1".into());
        }
        self.train.validate()?;
        self.gan.validate()?;
        self.generator_spec()?;
        if self.critic_widths.contains(&0) {
            return bad("critic widths must be positive".into());
        }
        if self.out_dir.as_os_str().is_empty() {
            return bad("out_dir is empty".into());
        }
        Ok(())
    }
}

/// Recursive object merge; anything that is not an object is replaced.
fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn presets_validate() {
        ExperimentConfig::full().validate().unwrap();
        ExperimentConfig::desk().validate().unwrap();
        let full = ExperimentConfig::full().generator_spec().unwrap();
        assert_eq!(full.budget, Some(GENERATOR_BUDGET));
    }

    #[test]
    fn overlay_changes_only_named_fields() {
        let cfg = ExperimentConfig::from_value(
            json!({"preset": "desk", "master_seed": 9, "train": {"epochs": 3}}),
            false,
        )
        .unwrap();
        assert_eq!(cfg.preset, Preset::Desk);
        assert_eq!(cfg.master_seed, 9);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, 50);
        assert_eq!(cfg.ks, vec![250, 500, 1000, 2000]);
        let forced = ExperimentConfig::from_value(json!({"preset": "full"}), true).unwrap();
        assert_eq!(forced.preset, Preset::Desk);
    }

    #[test]
    fn toml_and_json_files_agree() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        let j = dir.path().join("c.json");
        fs::write(&t, "preset = \"desk\"\nks = [3, 4]\n[gan]\nepochs = 2\n").unwrap();
        fs::write(&j, r#"{"preset":"desk","ks":[3,4],"gan":{"epochs":2}}"#).unwrap();
        let a = ExperimentConfig::from_file(&t, false).unwrap();
        let b = ExperimentConfig::from_file(&j, false).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.gan.epochs, 2);
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        for bad in [
            json!({"gammas": [0.0]}),
            json!({"strategies": ["nope"]}),
            json!({"ks": []}),
            json!({"unknown_field": 1}),
            json!({"n_train": 0}),
            json!({"strategies": ["dt", "dt"]}),
            json!({"gan": {"ct_hidden_weight": 1.0}}),
        ] {
            assert!(
                matches!(
                    ExperimentConfig::from_value(bad.clone(), true),
                    Err(Error::Config(_))
                ),
                "{bad}"
            );
        }
        let mut dup = ExperimentConfig::desk();
        dup.scenarios[1].id = "A".into();
        assert!(dup.validate().is_err());
    }

    #[test]
    fn proposed_expands_over_k() {
        let cfg = ExperimentConfig::desk();
        let kinds = cfg.strategy_kinds().unwrap();
        assert_eq!(kinds.len(), 6);
        assert_eq!(kinds[3], StrategyKind::proposed(2000));
        assert_eq!(cfg.sweep_k(), 2000);
    }
}
