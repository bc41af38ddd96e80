use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    memory_bytes, synthesize_replay, MemoryBytes, MemoryUnit, RawSampleMemory, StrategyKind,
};
use crate::channelgen::{Samples, ScenarioDataset};
use crate::ctgan::{
    snapshot_generator, spec_hash, train_gan, DiscriminatorSpec, GanTrainConfig, GeneratorSnapshot,
    GeneratorSpec, LossRow,
};
use crate::error::{Error, Result};
use crate::feedbacknet::{
    build_feedback_model, nmse_eval, train_feedback, FeedbackModel, LossHistory, TrainConfig,
};
use crate::netcore::{serialize_params, RandomState, Stream};

/// Training settings shared by every step of a continual run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinualConfig {
    pub train: TrainConfig,
    pub gan: GanTrainConfig,
    pub gen_spec: GeneratorSpec,
    pub disc_spec: DiscriminatorSpec,
}

/// Seeds consumed by one continual step. Each field overrides the seed of
/// the matching component so the caller controls the whole seed plan.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StepSeeds {
    /// Re-initialization for cold-start replay training.
    pub init: u64,
    pub shuffle: u64,
    pub replay: u64,
    /// Reservoir draws and the max-min starting point.
    pub select: u64,
    pub gan: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub evaluated_on: String,
    pub nmse_db: f64,
}

/// What one step trained on and how the model scores afterwards.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub step: usize,
    pub trained_up_to: String,
    pub train_size: usize,
    pub replay_size: usize,
    pub evaluations: Vec<Evaluation>,
    pub feedback_loss: LossHistory,
    pub gan_curve: Option<Vec<LossRow>>,
    pub memory: MemoryBytes,
    pub wall_seconds: f64,
}

/// Trained generators keyed by everything that determines them, so runs
/// that differ only in downstream settings can share them.
#[derive(Debug, Default)]
pub struct GanCache {
    entries: HashMap<String, (GeneratorSnapshot, Vec<LossRow>)>,
    pub hits: usize,
    pub misses: usize,
}

impl GanCache {
    pub fn shared() -> Arc<Mutex<GanCache>> {
        Arc::new(Mutex::new(GanCache::default()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Feedback-model training results keyed by starting weights, training
/// data and config. Strategies whose first step trains the same initial
/// model on the same data share one result.
#[derive(Debug, Default)]
pub struct TrainCache {
    entries: HashMap<String, (FeedbackModel, LossHistory)>,
    pub hits: usize,
    pub misses: usize,
}

impl TrainCache {
    pub fn shared() -> Arc<Mutex<TrainCache>> {
        Arc::new(Mutex::new(TrainCache::default()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn train_key(model: &FeedbackModel, sets: &[&Samples], cfg: &TrainConfig) -> String {
    let mut h = Sha256::new();
    h.update(serialize_params(&model.enc_params));
    h.update(serialize_params(&model.dec_params));
    h.update(model.gamma.to_le_bytes());
    h.update(serde_json::to_vec(cfg).expect("config serializes"));
    // empty sets do not change the union, so they must not change the key
    for s in sets.iter().filter(|s| !s.is_empty()) {
        for x in s.data() {
            h.update(x.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn fit(
    model: &mut FeedbackModel,
    cache: Option<&Arc<Mutex<TrainCache>>>,
    sets: &[&Samples],
    cfg: &TrainConfig,
) -> Result<LossHistory> {
    let Some(cache) = cache else {
        return train_feedback(model, sets, cfg);
    };
    let key = train_key(model, sets, cfg);
    {
        let mut c = cache.lock().expect("train cache poisoned");
        if let Some((m, loss)) = c.entries.get(&key).cloned() {
            c.hits += 1;
            *model = m;
            return Ok(loss);
        }
    }
    let loss = train_feedback(model, sets, cfg)?;
    let mut c = cache.lock().expect("train cache poisoned");
    c.misses += 1;
    c.entries.insert(key, (model.clone(), loss.clone()));
    Ok(loss)
}

fn gan_key(scenario: &str, data: &Samples, cfg: &ContinualConfig, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(scenario.as_bytes());
    h.update(spec_hash(&cfg.gen_spec).as_bytes());
    h.update(serde_json::to_vec(&cfg.disc_spec).expect("spec serializes"));
    h.update(serde_json::to_vec(&cfg.gan).expect("config serializes"));
    h.update(seed.to_le_bytes());
    for x in data.data() {
        h.update(x.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn fit_generator(
    scenario: &str,
    data: &Samples,
    cfg: &ContinualConfig,
    seed: u64,
) -> Result<(GeneratorSnapshot, Vec<LossRow>)> {
    let gan_cfg = GanTrainConfig { seed, ..cfg.gan };
    let trained = train_gan(data, &cfg.gen_spec, &cfg.disc_spec, &gan_cfg)?;
    let snap = snapshot_generator(&trained.gen_spec, &trained.gen_params, scenario)?;
    Ok((snap, trained.curve))
}

/// State of one strategy walking through the scenario sequence.
#[derive(Debug)]
pub struct ContinualRun {
    strategy: StrategyKind,
    model: FeedbackModel,
    memory: MemoryUnit,
    raw: RawSampleMemory,
    offline: Vec<Samples>,
    tests: Vec<(String, Samples)>,
    trained: Vec<String>,
    gan_cache: Option<Arc<Mutex<GanCache>>>,
    train_cache: Option<Arc<Mutex<TrainCache>>>,
}

impl ContinualRun {
    pub fn new(strategy: StrategyKind, model: FeedbackModel) -> Self {
        let (n_t, n_c) = (model.n_t, model.n_c);
        let capacity = match strategy {
            StrategyKind::Joint => None,
            _ => Some(strategy.capacity().unwrap_or(0)),
        };
        Self {
            memory: MemoryUnit::new(n_t, n_c),
            raw: RawSampleMemory::new(n_t, n_c, capacity),
            offline: Vec::new(),
            tests: Vec::new(),
            trained: Vec::new(),
            gan_cache: None,
            train_cache: None,
            strategy,
            model,
        }
    }

    pub fn with_gan_cache(mut self, cache: Arc<Mutex<GanCache>>) -> Self {
        self.gan_cache = Some(cache);
        self
    }

    pub fn with_train_cache(mut self, cache: Arc<Mutex<TrainCache>>) -> Self {
        self.train_cache = Some(cache);
        self
    }

    pub fn strategy(&self) -> &StrategyKind {
        &self.strategy
    }

    pub fn model(&self) -> &FeedbackModel {
        &self.model
    }

    pub fn memory(&self) -> &MemoryUnit {
        &self.memory
    }

    pub fn raw(&self) -> &RawSampleMemory {
        &self.raw
    }

    /// Scenario ids seen so far, in order.
    pub fn encountered(&self) -> Vec<&str> {
        self.tests.iter().map(|(id, _)| id.as_str()).collect()
    }

    pub fn memory_bytes(&self, element_bytes: usize) -> MemoryBytes {
        memory_bytes(&self.strategy, &self.memory, &self.raw, element_bytes)
    }

    fn generator_for(
        &self,
        scenario: &str,
        data: &Samples,
        cfg: &ContinualConfig,
        seed: u64,
    ) -> Result<(GeneratorSnapshot, Vec<LossRow>)> {
        let Some(cache) = &self.gan_cache else {
            return fit_generator(scenario, data, cfg, seed);
        };
        let key = gan_key(scenario, data, cfg, seed);
        {
            let mut c = cache.lock().expect("GAN cache poisoned");
            if let Some(hit) = c.entries.get(&key).cloned() {
                c.hits += 1;
                return Ok(hit);
            }
        }
        let fitted = fit_generator(scenario, data, cfg, seed)?;
        let mut c = cache.lock().expect("GAN cache poisoned");
        c.misses += 1;
        c.entries.insert(key, fitted.clone());
        Ok(fitted)
    }
}

/// NMSE of `model` on every listed test split.
pub fn evaluate_all(model: &FeedbackModel, tests: &[(String, Samples)]) -> Result<Vec<Evaluation>> {
    tests
        .iter()
        .map(|(id, test)| {
            Ok(Evaluation {
                evaluated_on: id.clone(),
                nmse_db: nmse_eval(model, test)?,
            })
        })
        .collect()
}

/// Learns scenario `data` with the run's strategy, updates its memory and
/// evaluates on every scenario encountered so far.
///
/// The offline upper bound only records the scenario here; see
/// [`train_offline`].
pub fn continual_step(
    run: &mut ContinualRun,
    data: &ScenarioDataset,
    cfg: &ContinualConfig,
    seeds: &StepSeeds,
) -> Result<StepOutcome> {
    let id = data.spec.id.clone();
    if run.trained.contains(&id) || run.tests.iter().any(|(t, _)| *t == id) {
        return Err(Error::State(format!("scenario {id} was already trained")));
    }
    let start = Instant::now();
    let step = run.tests.len();
    let train_cfg = TrainConfig {
        seed: seeds.shuffle,
        ..cfg.train
    };
    let mut replay_size = 0;
    let mut gan_curve = None;
    let mut select = RandomState::new(seeds.select).stream(Stream::Shuffle);

    let feedback_loss = match run.strategy.clone() {
        StrategyKind::Proposed { k, warm_start } => {
            if !warm_start && step > 0 {
                let m = &run.model;
                run.model = build_feedback_model(
                    m.gamma,
                    m.n_t,
                    m.n_c,
                    m.arch,
                    &mut RandomState::new(seeds.init).stream(Stream::Init),
                )?;
            }
            let mut latent = RandomState::new(seeds.replay).stream(Stream::Latent);
            let replay = synthesize_replay(&run.memory, k, &mut latent)?;
            replay_size = replay.samples.len();
            let loss = fit(
                &mut run.model,
                run.train_cache.as_ref(),
                &[&replay.samples, &data.train],
                &train_cfg,
            )?;
            drop(replay);
            let (snap, curve) = run.generator_for(&id, &data.train, cfg, seeds.gan)?;
            run.memory.push(snap)?;
            gan_curve = Some(curve);
            loss
        }
        StrategyKind::DirectTransfer => fit(
            &mut run.model,
            run.train_cache.as_ref(),
            &[&data.train],
            &train_cfg,
        )?,
        StrategyKind::Joint => {
            run.raw.append(&data.train, &id)?;
            fit(
                &mut run.model,
                run.train_cache.as_ref(),
                &[run.raw.samples()],
                &train_cfg,
            )?
        }
        StrategyKind::Reservoir { .. } => {
            replay_size = run.raw.len();
            let loss = fit(
                &mut run.model,
                run.train_cache.as_ref(),
                &[run.raw.samples(), &data.train],
                &train_cfg,
            )?;
            run.raw.reservoir_update(&data.train, &id, &mut select)?;
            loss
        }
        StrategyKind::MinMax { .. } => {
            replay_size = run.raw.len();
            let loss = fit(
                &mut run.model,
                run.train_cache.as_ref(),
                &[run.raw.samples(), &data.train],
                &train_cfg,
            )?;
            run.raw.minmax_update(&data.train, &id, &mut select)?;
            loss
        }
        StrategyKind::Mtl => {
            run.offline.push(data.train.clone());
            run.tests.push((id.clone(), data.test.clone()));
            return Ok(StepOutcome {
                step,
                trained_up_to: id,
                train_size: 0,
                replay_size: 0,
                evaluations: Vec::new(),
                feedback_loss: LossHistory::default(),
                gan_curve: None,
                memory: run.memory_bytes(4),
                wall_seconds: start.elapsed().as_secs_f64(),
            });
        }
    };
    let train_size = match run.strategy {
        StrategyKind::Joint => run.raw.len(),
        _ => replay_size + data.train.len(),
    };
    run.trained.push(id.clone());
    run.tests.push((id.clone(), data.test.clone()));
    Ok(StepOutcome {
        step,
        trained_up_to: id,
        train_size,
        replay_size,
        evaluations: evaluate_all(&run.model, &run.tests)?,
        feedback_loss,
        gan_curve,
        memory: run.memory_bytes(4),
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Trains the offline upper bound on every recorded scenario at once.
pub fn train_offline(
    run: &mut ContinualRun,
    cfg: &ContinualConfig,
    seeds: &StepSeeds,
) -> Result<StepOutcome> {
    if run.strategy != StrategyKind::Mtl {
        return Err(Error::State(format!(
            "offline training is only defined for MTL, not {}",
            run.strategy.label()
        )));
    }
    if !run.trained.is_empty() {
        return Err(Error::State("offline model already trained".into()));
    }
    let Some((last, _)) = run.tests.last() else {
        return Err(Error::Empty("offline training scenarios"));
    };
    let last = last.clone();
    let start = Instant::now();
    let sets: Vec<&Samples> = run.offline.iter().collect();
    let train_cfg = TrainConfig {
        seed: seeds.shuffle,
        ..cfg.train
    };
    let feedback_loss = fit(&mut run.model, run.train_cache.as_ref(), &sets, &train_cfg)?;
    let train_size = sets.iter().map(|s| s.len()).sum();
    run.trained = run.tests.iter().map(|(id, _)| id.clone()).collect();
    Ok(StepOutcome {
        step: run.tests.len() - 1,
        trained_up_to: last,
        train_size,
        replay_size: 0,
        evaluations: evaluate_all(&run.model, &run.tests)?,
        feedback_loss,
        gan_curve: None,
        memory: run.memory_bytes(4),
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}
