use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::records::{read_csv, write_csv, MemoryRecord, ResultRecord, TimingRecord};
use super::seeds::{cell_seeds, seed_plan, step_seeds, Cell, ComponentSeeds};
use super::ExperimentConfig;
use crate::channelgen::{
    generate_dataset, load_dataset, save_dataset, ScenarioDataset, ScenarioSpec,
};
use crate::ctgan::{save_snapshot, write_loss_csv};
use crate::error::{Error, Result};
use crate::feedbacknet::{build_feedback_model, Arch, LossHistory};
use crate::memory::{
    continual_step, train_offline, ContinualRun, GanCache, StepSeeds, StrategyKind, TrainCache,
};
use crate::netcore::{RandomState, Stream};

pub const MANIFEST: &str = "manifest.json";
pub const RESULTS: &str = "results.csv";
pub const MEMORY: &str = "memory.csv";
pub const TIMINGS: &str = "timings.csv";
pub const SWEEP: &str = "sweep_gamma.csv";
const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Discard any previous run in the output directory.
    pub force: bool,
    /// Continue a partial run with an identical configuration.
    pub resume: bool,
    /// Print one line per continual step to stderr.
    pub progress: bool,
}

/// Written before any training so that an interrupted run is detectable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub strategies: Vec<StrategyKind>,
    pub scenarios: Vec<String>,
    pub gammas: Vec<f64>,
    pub ks: Vec<usize>,
    pub capacity: usize,
    pub master_seed: u64,
    pub config_hash: String,
    pub expected_records: usize,
    pub config: ExperimentConfig,
    pub seeds: BTreeMap<String, ComponentSeeds>,
}

impl Manifest {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let strategies = cfg.strategy_kinds()?;
        let scenarios: Vec<String> = cfg.scenarios.iter().map(|s| s.id.clone()).collect();
        let t = scenarios.len();
        let expected_records = cfg.gammas.len()
            * strategies
                .iter()
                .map(|k| records_per_cell(k, t))
                .sum::<usize>();
        Ok(Self {
            version: MANIFEST_VERSION,
            seeds: seed_plan(cfg.master_seed, &scenarios, &strategies, &cfg.gammas),
            strategies,
            scenarios,
            gammas: cfg.gammas.clone(),
            ks: cfg.ks.clone(),
            capacity: cfg.capacity,
            master_seed: cfg.master_seed,
            config_hash: config_hash(cfg),
            expected_records,
            config: cfg.clone(),
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let raw = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let m: Self = serde_json::from_slice(&raw)
            .map_err(|e| Error::format("run manifest", e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "run manifest",
                found: m.version,
                expected: MANIFEST_VERSION,
            });
        }
        Ok(m)
    }
}

/// Lower-triangular record count of one strategy cell; the offline bound
/// only reports after the last scenario.
pub fn records_per_cell(kind: &StrategyKind, scenarios: usize) -> usize {
    match kind {
        StrategyKind::Mtl => scenarios,
        _ => scenarios * (scenarios + 1) / 2,
    }
}

/// Hash of the configuration minus where it is written.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.out_dir = PathBuf::new();
    let json = serde_json::to_vec(&c).expect("config serializes");
    Sha256::digest(&json)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub records: Vec<ResultRecord>,
    pub memory: Vec<MemoryRecord>,
    pub gan_trainings: usize,
    pub resumed_cells: usize,
}

/// Scenario specs with their seeds taken from the seed plan.
pub fn planned_specs(cfg: &ExperimentConfig) -> Vec<ScenarioSpec> {
    cfg.scenarios
        .iter()
        .map(|s| {
            let seeds = cell_seeds(
                cfg.master_seed,
                &Cell::Data {
                    scenario: s.id.clone(),
                },
            );
            ScenarioSpec {
                seed: seeds.root,
                ..s.clone()
            }
        })
        .collect()
}

pub fn data_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("data").join(format!("{id}.csid"))
}

/// Synthesizes and stores the datasets (or just `only`) under `<out>/data`.
pub fn gen_data(cfg: &ExperimentConfig, only: Option<&str>) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let specs = planned_specs(cfg);
    if let Some(id) = only {
        if !specs.iter().any(|s| s.id == id) {
            return Err(Error::Config(format!("no scenario named {id:?}")));
        }
    }
    let mut written = Vec::new();
    for spec in specs.iter().filter(|s| only.is_none_or(|id| s.id == id)) {
        let ds = generate_dataset(spec, cfg.n_train, cfg.n_test)?;
        let path = data_path(&cfg.out_dir, &spec.id);
        create_dir(path.parent().expect("data path has a parent"))?;
        save_dataset(&ds, &path)?;
        written.push(path);
    }
    Ok(written)
}

/// Stored datasets when present and matching the config, fresh ones otherwise.
pub fn load_or_generate(cfg: &ExperimentConfig) -> Result<Vec<ScenarioDataset>> {
    planned_specs(cfg)
        .into_iter()
        .map(|spec| {
            let path = data_path(&cfg.out_dir, &spec.id);
            if !path.exists() {
                return generate_dataset(&spec, cfg.n_train, cfg.n_test);
            }
            let ds = load_dataset(&path)?;
            if ds.spec != spec || ds.train.len() != cfg.n_train || ds.test.len() != cfg.n_test {
                return Err(Error::Config(format!(
                    "{} was generated with a different configuration; regenerate it",
                    path.display()
                )));
            }
            Ok(ds)
        })
        .collect()
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn remove_if_exists(path: &Path) -> Result<()> {
    let r = if path.is_dir() {
        fs::remove_dir_all(path)
    } else {
        fs::remove_file(path)
    };
    match r {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(Error::io(path, e)),
        _ => Ok(()),
    }
}

fn clear_run(dir: &Path) -> Result<()> {
    for name in [MANIFEST, RESULTS, MEMORY, TIMINGS, "curves", "memory"] {
        remove_if_exists(&dir.join(name))?;
    }
    Ok(())
}

type CellKey = (String, Option<usize>, u64);

fn cell_key(label: &str, k: Option<usize>, gamma: f64) -> CellKey {
    (label.to_string(), k, gamma.to_bits())
}

/// Decides what to do with an existing output directory and returns the
/// records of cells that are already complete.
fn prepare(
    dir: &Path,
    manifest: &Manifest,
    opts: &RunOptions,
) -> Result<(Vec<ResultRecord>, Vec<MemoryRecord>)> {
    if opts.force {
        clear_run(dir)?;
    }
    if !dir.join(MANIFEST).exists() {
        clear_run(dir)?;
        return Ok((Vec::new(), Vec::new()));
    }
    let old = Manifest::load(dir)?;
    let records: Vec<ResultRecord> = read_csv(&dir.join(RESULTS)).unwrap_or_default();
    if records.len() == old.expected_records {
        return Err(Error::AlreadyComplete(dir.to_path_buf()));
    }
    if !opts.resume {
        return Err(Error::PartialRun(dir.to_path_buf()));
    }
    if old.config_hash != manifest.config_hash {
        return Err(Error::Config(format!(
            "{} holds a partial run of a different configuration",
            dir.display()
        )));
    }
    let t = manifest.scenarios.len();
    let mut counts: BTreeMap<CellKey, usize> = BTreeMap::new();
    for r in &records {
        *counts
            .entry(cell_key(&r.strategy, r.k, r.gamma))
            .or_default() += 1;
    }
    let complete = |label: &str, k: Option<usize>, gamma: f64| {
        manifest.strategies.iter().any(|s| {
            s.label() == label
                && s.replay_k() == k
                && counts.get(&cell_key(label, k, gamma)) == Some(&records_per_cell(s, t))
        })
    };
    let records: Vec<_> = records
        .into_iter()
        .filter(|r| complete(&r.strategy, r.k, r.gamma))
        .collect();
    let memory: Vec<MemoryRecord> = read_csv::<MemoryRecord>(&dir.join(MEMORY))
        .unwrap_or_default()
        .into_iter()
        .filter(|m| complete(&m.strategy, m.k, m.gamma))
        .collect();
    write_csv(&dir.join(RESULTS), &records)?;
    write_csv(&dir.join(MEMORY), &memory)?;
    Ok((records, memory))
}

fn append_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let exists = path.exists() && fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(!exists)
        .from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_feedback_curve(path: &Path, loss: &LossHistory) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "loss"])?;
    for (i, l) in loss.epoch_loss.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn cell_name(kind: &StrategyKind, gamma: f64) -> String {
    match kind.replay_k() {
        Some(k) => format!("{}_k{k}_g{gamma}", kind.label()),
        None => format!("{}_g{gamma}", kind.label()),
    }
}

struct Shared<'a> {
    cfg: &'a ExperimentConfig,
    data: &'a [ScenarioDataset],
    ccfg: crate::memory::ContinualConfig,
    gans: Arc<Mutex<GanCache>>,
    trains: Arc<Mutex<TrainCache>>,
    opts: RunOptions,
}

struct CellOutput {
    records: Vec<ResultRecord>,
    memory: Vec<MemoryRecord>,
    timings: Vec<TimingRecord>,
}

fn run_cell(sh: &Shared, kind: &StrategyKind, gamma: f64) -> Result<CellOutput> {
    let cfg = sh.cfg;
    let dir = &cfg.out_dir;
    let master = cfg.master_seed;
    let (n_t, n_c) = cfg.dims();
    let base = cell_seeds(master, &Cell::base(gamma));
    let model = build_feedback_model(
        gamma,
        n_t,
        n_c,
        Arch::CsinetLike,
        &mut RandomState::new(base.init).stream(Stream::Init),
    )?;
    let mut run = ContinualRun::new(kind.clone(), model)
        .with_gan_cache(sh.gans.clone())
        .with_train_cache(sh.trains.clone());
    let mut out = CellOutput {
        records: Vec::new(),
        memory: Vec::new(),
        timings: Vec::new(),
    };
    let name = cell_name(kind, gamma);
    let curves = dir.join("curves");
    let mut outcomes = Vec::new();
    for (t, ds) in sh.data.iter().enumerate() {
        let id = &ds.spec.id;
        let seeds = step_seeds(master, kind, gamma, id, t);
        let o = continual_step(&mut run, ds, &sh.ccfg, &seeds)?;
        if let Some(curve) = &o.gan_curve {
            let path = curves.join(format!("gan_{id}.csv"));
            if !path.exists() {
                write_loss_csv(curve, &path)?;
            }
            let snap_path = dir.join("memory").join(format!("{id}.csip"));
            if !snap_path.exists() {
                let snap = &run.memory().snapshots()[t];
                save_snapshot(snap, &snap_path, Some(&sh.ccfg.gan), seeds.gan)?;
            }
        }
        out.memory.push(MemoryRecord {
            strategy: kind.label().into(),
            k: kind.replay_k(),
            gamma,
            step: t,
            scenario: id.clone(),
            bytes: o.memory.bytes,
        });
        if sh.opts.progress {
            eprintln!(
                "[{name}] step {t} ({id}): {} training samples, {:.1}s",
                o.train_size, o.wall_seconds
            );
        }
        outcomes.push(o);
    }
    if *kind == StrategyKind::Mtl {
        let s = cell_seeds(master, &Cell::offline(gamma));
        let seeds = StepSeeds {
            shuffle: s.shuffle,
            init: s.init,
            replay: s.latent,
            select: s.select,
            gan: s.root,
        };
        let o = train_offline(&mut run, &sh.ccfg, &seeds)?;
        if sh.opts.progress {
            eprintln!(
                "[{name}] offline: {} samples, {:.1}s",
                o.train_size, o.wall_seconds
            );
        }
        outcomes.push(o);
    }
    for o in outcomes {
        if !o.feedback_loss.epoch_loss.is_empty() {
            let path = curves.join(format!("feedback_{name}_{}.csv", o.trained_up_to));
            write_feedback_curve(&path, &o.feedback_loss)?;
        }
        out.timings.push(TimingRecord {
            strategy: kind.label().into(),
            k: kind.replay_k(),
            gamma,
            step: o.step,
            scenario: o.trained_up_to.clone(),
            wall_seconds: o.wall_seconds,
        });
        for e in o.evaluations {
            out.records.push(ResultRecord {
                strategy: kind.label().into(),
                trained_up_to: o.trained_up_to.clone(),
                evaluated_on: e.evaluated_on,
                gamma,
                k: kind.replay_k(),
                nmse_db: e.nmse_db,
                seed: master,
                wall_seconds: cfg.record_wall_time.then_some(o.wall_seconds),
            });
        }
    }
    Ok(out)
}

/// Runs every (gamma, strategy, K) cell through the scenario sequence and
/// writes results, memory reports, loss curves and generator snapshots.
///
/// An output directory holding a finished run is refused unless `force`;
/// an unfinished one is a [`Error::PartialRun`] unless `force` or `resume`.
pub fn run_protocol(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    cfg.validate()?;
    let dir = cfg.out_dir.clone();
    create_dir(&dir)?;
    let manifest = Manifest::new(cfg)?;
    let (mut records, mut memory) = prepare(&dir, &manifest, opts)?;
    let data = load_or_generate(cfg)?;
    fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)
        .map_err(|e| Error::io(dir.join(MANIFEST), e))?;
    create_dir(&dir.join("curves"))?;
    create_dir(&dir.join("memory"))?;
    let sh = Shared {
        cfg,
        data: &data,
        ccfg: cfg.continual()?,
        gans: GanCache::shared(),
        trains: TrainCache::shared(),
        opts: *opts,
    };
    let done: Vec<CellKey> = records
        .iter()
        .map(|r| cell_key(&r.strategy, r.k, r.gamma))
        .collect();
    let mut resumed = 0;
    for &gamma in &cfg.gammas {
        for kind in &manifest.strategies {
            if done.contains(&cell_key(kind.label(), kind.replay_k(), gamma)) {
                resumed += 1;
                continue;
            }
            let out = run_cell(&sh, kind, gamma)?;
            append_csv(&dir.join(RESULTS), &out.records)?;
            append_csv(&dir.join(MEMORY), &out.memory)?;
            append_csv(&dir.join(TIMINGS), &out.timings)?;
            records.extend(out.records);
            memory.extend(out.memory);
        }
    }
    let gan_trainings = sh.gans.lock().expect("GAN cache poisoned").misses;
    Ok(RunSummary {
        out_dir: dir,
        records,
        memory,
        gan_trainings,
        resumed_cells: resumed,
    })
}

/// Retrains the proposed method, direct transfer and the offline bound from
/// scratch for every sweep ratio and reports NMSE on the first two scenarios
/// after the whole sequence. Runs live under `<out>/sweep`.
pub fn sweep_compression(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    let mut sub = cfg.clone();
    sub.strategies = ["proposed", "dt", "mtl"].map(String::from).to_vec();
    sub.ks = vec![cfg.sweep_k()];
    sub.gammas = cfg.sweep_gammas.clone();
    sub.out_dir = cfg.out_dir.join("sweep");
    let summary = run_protocol(&sub, opts)?;
    let ids: Vec<&str> = cfg.scenarios.iter().map(|s| s.id.as_str()).collect();
    let last = *ids.last().expect("validated non-empty");
    let targets = &ids[..ids.len().min(2)];
    let out: Vec<ResultRecord> = summary
        .records
        .into_iter()
        .filter(|r| r.trained_up_to == last && targets.contains(&r.evaluated_on.as_str()))
        .collect();
    write_csv(&cfg.out_dir.join(SWEEP), &out)?;
    Ok(out)
}
