//! The continual-learning engine: a memory unit of generator snapshots,
//! replay synthesis, raw-sample baselines (joint, reservoir, max-min) and
//! memory-cost accounting.

mod continual;
mod selection;

pub use continual::{
    continual_step, evaluate_all, train_offline, ContinualConfig, ContinualRun, Evaluation,
    GanCache, StepOutcome, StepSeeds, TrainCache,
};
pub use selection::{
    min_pairwise_distance, minmax_select, reservoir_slot, reservoir_update, ReservoirSlot,
    LOCAL_SEARCH_MAX_POOL,
};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channelgen::Samples;
use crate::ctgan::{sample_latent, GeneratorSnapshot};
use crate::error::{Error, Result};

/// Replay and raw-store capacity defaults.
pub const DEFAULT_CAPACITY: usize = 2000;
pub const DEFAULT_REPLAY_K: usize = 10_000;
/// Latent codes pushed through a generator at once during replay synthesis.
pub const REPLAY_BATCH: usize = 250;

/// Ordered generator snapshots, at most one per scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryUnit {
    n_t: usize,
    n_c: usize,
    snapshots: Vec<GeneratorSnapshot>,
}

impl MemoryUnit {
    pub fn new(n_t: usize, n_c: usize) -> Self {
        Self {
            n_t,
            n_c,
            snapshots: Vec::new(),
        }
    }

    pub fn push(&mut self, snap: GeneratorSnapshot) -> Result<()> {
        if self.contains(&snap.scenario_id) {
            return Err(Error::State(format!(
                "memory already holds a generator for scenario {}",
                snap.scenario_id
            )));
        }
        if (snap.spec.n_t, snap.spec.n_c) != (self.n_t, self.n_c) {
            return Err(Error::Dimension {
                what: "snapshot sample size",
                found: 2 * snap.spec.n_t * snap.spec.n_c,
                expected: 2 * self.n_t * self.n_c,
            });
        }
        self.snapshots.push(snap);
        Ok(())
    }

    pub fn contains(&self, scenario_id: &str) -> bool {
        self.snapshots.iter().any(|s| s.scenario_id == scenario_id)
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn snapshots(&self) -> &[GeneratorSnapshot] {
        &self.snapshots
    }

    pub fn ids(&self) -> Vec<&str> {
        self.snapshots
            .iter()
            .map(|s| s.scenario_id.as_str())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.snapshots.iter().map(|s| s.spec.count_params()).sum()
    }
}

/// Continual-learning strategy and its memory configuration.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategyKind {
    /// Generative replay: `k` synthetic samples per stored generator.
    Proposed {
        k: usize,
        #[serde(default = "yes")]
        warm_start: bool,
    },
    DirectTransfer,
    Joint,
    Reservoir {
        capacity: usize,
    },
    MinMax {
        capacity: usize,
    },
    /// Offline multi-task upper bound, trained once on every scenario.
    Mtl,
}

fn yes() -> bool {
    true
}

impl StrategyKind {
    pub fn proposed(k: usize) -> Self {
        StrategyKind::Proposed {
            k,
            warm_start: true,
        }
    }

    /// Parses a CLI name; `k` applies to `proposed` only.
    pub fn from_name(name: &str, k: usize) -> Result<Self> {
        Ok(match name.to_ascii_lowercase().as_str() {
            "proposed" => Self::proposed(k),
            "proposed-cold" => StrategyKind::Proposed {
                k,
                warm_start: false,
            },
            "dt" | "direct-transfer" | "directtransfer" => StrategyKind::DirectTransfer,
            "joint" => StrategyKind::Joint,
            "reservoir" => StrategyKind::Reservoir {
                capacity: DEFAULT_CAPACITY,
            },
            "minmax" | "min-max" => StrategyKind::MinMax {
                capacity: DEFAULT_CAPACITY,
            },
            "mtl" => StrategyKind::Mtl,
            other => return Err(Error::Config(format!("unknown strategy {other:?}"))),
        })
    }

    /// Short name used in result files.
    pub fn label(&self) -> &'static str {
        match self {
            StrategyKind::Proposed { .. } => "Proposed",
            StrategyKind::DirectTransfer => "DT",
            StrategyKind::Joint => "Joint",
            StrategyKind::Reservoir { .. } => "Reservoir",
            StrategyKind::MinMax { .. } => "MinMax",
            StrategyKind::Mtl => "MTL",
        }
    }

    /// Replay size per generator, for the strategy that has one.
    pub fn replay_k(&self) -> Option<usize> {
        match self {
            StrategyKind::Proposed { k, .. } => Some(*k),
            _ => None,
        }
    }

    pub fn capacity(&self) -> Option<usize> {
        match self {
            StrategyKind::Reservoir { capacity } | StrategyKind::MinMax { capacity } => {
                Some(*capacity)
            }
            _ => None,
        }
    }
}

/// Stored real samples with the scenario each came from.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSampleMemory {
    samples: Samples,
    provenance: Vec<String>,
    capacity: Option<usize>,
    seen: usize,
}

impl RawSampleMemory {
    /// `capacity: None` means unbounded.
    pub fn new(n_t: usize, n_c: usize, capacity: Option<usize>) -> Self {
        Self {
            samples: Samples::empty(n_t, n_c),
            provenance: Vec::new(),
            capacity,
            seen: 0,
        }
    }

    pub fn samples(&self) -> &Samples {
        &self.samples
    }

    pub fn provenance(&self) -> &[String] {
        &self.provenance
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn check(&self, new: &Samples) -> Result<()> {
        if new.sample_shape() != self.samples.sample_shape() {
            return Err(Error::Dimension {
                what: "stored sample size",
                found: new.sample_len(),
                expected: self.samples.sample_len(),
            });
        }
        Ok(())
    }

    /// Appends everything; only valid for an unbounded store.
    pub fn append(&mut self, new: &Samples, scenario_id: &str) -> Result<()> {
        self.check(new)?;
        if self.capacity.is_some() {
            return Err(Error::State(
                "append on a bounded store; use a selection rule".into(),
            ));
        }
        self.samples.extend(new);
        self.provenance
            .extend(std::iter::repeat_n(scenario_id.to_string(), new.len()));
        self.seen += new.len();
        Ok(())
    }

    /// Continues the reservoir stream with `new` in file order.
    pub fn reservoir_update<R: Rng + ?Sized>(
        &mut self,
        new: &Samples,
        scenario_id: &str,
        rng: &mut R,
    ) -> Result<()> {
        self.check(new)?;
        let cap = self.bounded()?;
        for x in new.iter() {
            self.seen += 1;
            match reservoir_slot(self.samples.len(), cap, self.seen, rng) {
                ReservoirSlot::Push => {
                    self.samples.push(x);
                    self.provenance.push(scenario_id.to_string());
                }
                ReservoirSlot::Replace(j) => {
                    self.samples.set(j, x);
                    self.provenance[j] = scenario_id.to_string();
                }
                ReservoirSlot::Skip => {}
            }
        }
        Ok(())
    }

    /// Replaces the store by a max-min subset of `store ∪ new`.
    pub fn minmax_update<R: Rng + ?Sized>(
        &mut self,
        new: &Samples,
        scenario_id: &str,
        rng: &mut R,
    ) -> Result<()> {
        self.check(new)?;
        let cap = self.bounded()?;
        let pool = Samples::concat([&self.samples, new], new.n_t(), new.n_c());
        let mut prov = std::mem::take(&mut self.provenance);
        prov.extend(std::iter::repeat_n(scenario_id.to_string(), new.len()));
        let keep = minmax_select(&pool, cap, rng);
        let mut samples = Samples::empty(new.n_t(), new.n_c());
        for &i in &keep {
            samples.push(pool.get(i));
        }
        self.provenance = keep.iter().map(|&i| prov[i].clone()).collect();
        self.samples = samples;
        self.seen += new.len();
        Ok(())
    }

    fn bounded(&self) -> Result<usize> {
        self.capacity
            .ok_or_else(|| Error::State("selection rule on an unbounded store".into()))
    }
}

/// Synthetic samples drawn from a memory unit, with per-scenario counts.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplaySet {
    pub samples: Samples,
    pub provenance: Vec<(String, usize)>,
}

/// Exactly `k` samples from every snapshot in order, generated in batches.
/// The result is meant to live for one training round only.
pub fn synthesize_replay(memory: &MemoryUnit, k: usize, rng: &mut ChaCha8Rng) -> Result<ReplaySet> {
    let mut samples = Samples::empty(memory.n_t, memory.n_c);
    let mut provenance = Vec::with_capacity(memory.len());
    for snap in memory.snapshots() {
        let net = snap.network()?;
        let params = snap.params()?;
        let mut left = k;
        while left > 0 {
            let b = left.min(REPLAY_BATCH);
            let z = sample_latent(b, snap.z_dim(), rng);
            let out =
                crate::ctgan::generate(&net, &params, &z).map_err(|e| Error::CorruptSnapshot {
                    scenario: snap.scenario_id.clone(),
                    reason: e.to_string(),
                })?;
            samples.extend(&Samples::from_tensor(&out)?);
            left -= b;
        }
        provenance.push((snap.scenario_id.clone(), k));
    }
    Ok(ReplaySet {
        samples,
        provenance,
    })
}

/// Memory footprint of a strategy's persistent store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryBytes {
    pub bytes: u64,
    /// Set for the offline upper bound, whose data is assumed rather than stored.
    pub offline: bool,
}

/// Bytes held by `strategy` at `element_bytes` per stored element: generator
/// parameters for the proposed method, raw sample elements for the data
/// stores, nothing for direct transfer and the offline bound.
pub fn memory_bytes(
    strategy: &StrategyKind,
    memory: &MemoryUnit,
    raw: &RawSampleMemory,
    element_bytes: usize,
) -> MemoryBytes {
    let eb = element_bytes as u64;
    let bytes = match strategy {
        StrategyKind::Proposed { .. } => eb * memory.param_count() as u64,
        StrategyKind::Joint | StrategyKind::Reservoir { .. } | StrategyKind::MinMax { .. } => {
            eb * (raw.len() * raw.samples().sample_len()) as u64
        }
        StrategyKind::DirectTransfer | StrategyKind::Mtl => 0,
    };
    MemoryBytes {
        bytes,
        offline: matches!(strategy, StrategyKind::Mtl),
    }
}

/// Bytes for raw storage of `n` samples of an `n_t x n_c` complex channel.
pub fn raw_sample_bytes(n: usize, n_t: usize, n_c: usize, element_bytes: usize) -> u64 {
    (n * 2 * n_t * n_c * element_bytes) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctgan::{snapshot_generator, GeneratorSpec, GENERATOR_BUDGET, Z_DIM};
    use crate::netcore::{RandomState, Stream};

    fn snap(id: &str, seed: u64) -> GeneratorSnapshot {
        let spec = GeneratorSpec::new(8, 8, 8, 3);
        let params = spec
            .network()
            .unwrap()
            .init_params(&mut RandomState::new(seed).stream(Stream::Init));
        snapshot_generator(&spec, &params, id).unwrap()
    }

    fn filled(n: usize, n_t: usize, n_c: usize) -> Samples {
        Samples::new(n_t, n_c, vec![0.5; n * 2 * n_t * n_c]).unwrap()
    }

    #[test]
    fn memory_unit_rejects_duplicates() {
        let mut m = MemoryUnit::new(8, 8);
        m.push(snap("A", 1)).unwrap();
        m.push(snap("B", 2)).unwrap();
        assert!(matches!(m.push(snap("A", 3)), Err(Error::State(_))));
        assert_eq!(m.ids(), vec!["A", "B"]);
        let mut other = MemoryUnit::new(16, 16);
        assert!(other.push(snap("A", 1)).is_err());
    }

    #[test]
    fn replay_cardinality_and_provenance() {
        let mut m = MemoryUnit::new(8, 8);
        m.push(snap("A", 1)).unwrap();
        m.push(snap("B", 2)).unwrap();
        let mut rng = RandomState::new(4).stream(Stream::Latent);
        let r = synthesize_replay(&m, 1000, &mut rng).unwrap();
        assert_eq!(r.samples.len(), 2000);
        assert_eq!(r.provenance, vec![("A".into(), 1000), ("B".into(), 1000)]);
        let again =
            synthesize_replay(&m, 1000, &mut RandomState::new(4).stream(Stream::Latent)).unwrap();
        assert_eq!(r, again);
        let none = synthesize_replay(&m, 0, &mut rng).unwrap();
        assert!(none.samples.is_empty());
        let odd = synthesize_replay(&m, 251, &mut rng).unwrap();
        assert_eq!(odd.samples.len(), 502);
    }

    #[test]
    fn replay_names_corrupt_scenario() {
        let mut m = MemoryUnit::new(8, 8);
        let mut bad = snap("B", 2);
        bad.payload.truncate(12);
        m.push(snap("A", 1)).unwrap();
        m.push(bad).unwrap();
        match synthesize_replay(&m, 4, &mut RandomState::new(0).stream(Stream::Latent)) {
            Err(Error::CorruptSnapshot { scenario, .. }) => assert_eq!(scenario, "B"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn table_two_raw_byte_counts() {
        let mut res = RawSampleMemory::new(32, 32, Some(2000));
        let mut rng = RandomState::new(0).stream(Stream::Shuffle);
        res.reservoir_update(&filled(2500, 32, 32), "A", &mut rng)
            .unwrap();
        let r = memory_bytes(
            &StrategyKind::Reservoir { capacity: 2000 },
            &MemoryUnit::new(32, 32),
            &res,
            4,
        );
        assert_eq!(r.bytes, 16_384_000);
        assert_eq!(r.bytes as f64 / (1u64 << 20) as f64, 15.625);

        let mut joint = RawSampleMemory::new(32, 32, None);
        joint.append(&filled(5000, 32, 32), "A").unwrap();
        joint.append(&filled(5000, 32, 32), "B").unwrap();
        let j = memory_bytes(&StrategyKind::Joint, &MemoryUnit::new(32, 32), &joint, 4);
        assert_eq!(j.bytes, 81_920_000);
        assert_eq!(j.bytes, raw_sample_bytes(10_000, 32, 32, 4));
        assert_eq!(j.bytes as f64 / (1u64 << 20) as f64, 78.125);
    }

    #[test]
    fn proposed_bytes_count_parameters() {
        let mut m = MemoryUnit::new(8, 8);
        m.push(snap("A", 1)).unwrap();
        let one = memory_bytes(
            &StrategyKind::proposed(5),
            &m,
            &RawSampleMemory::new(8, 8, None),
            4,
        );
        m.push(snap("B", 2)).unwrap();
        let two = memory_bytes(
            &StrategyKind::proposed(5),
            &m,
            &RawSampleMemory::new(8, 8, None),
            4,
        );
        let per = 4 * snap("A", 1).spec.count_params() as u64;
        assert_eq!(one.bytes, per);
        assert_eq!(two.bytes - one.bytes, per);
        assert_eq!(2 * 4 * GENERATOR_BUDGET as u64, 3_724_544);

        let full = GeneratorSpec::for_budget(Z_DIM, 32, 32, GENERATOR_BUDGET).unwrap();
        let bytes = (2 * 4 * full.count_params()) as f64;
        let target = 3.552 * (1u64 << 20) as f64;
        assert!((bytes - target).abs() <= 0.05_f64 * target);
    }

    #[test]
    fn baselines_without_store_report_zero() {
        let m = MemoryUnit::new(4, 4);
        let raw = RawSampleMemory::new(4, 4, None);
        assert_eq!(
            memory_bytes(&StrategyKind::DirectTransfer, &m, &raw, 4).bytes,
            0
        );
        let mtl = memory_bytes(&StrategyKind::Mtl, &m, &raw, 4);
        assert_eq!(mtl.bytes, 0);
        assert!(mtl.offline);
    }

    #[test]
    fn bounded_stores_stay_bounded() {
        let mut rng = RandomState::new(3).stream(Stream::Shuffle);
        let mut res = RawSampleMemory::new(2, 2, Some(30));
        let mut mm = RawSampleMemory::new(2, 2, Some(30));
        for (t, id) in ["A", "B", "C"].into_iter().enumerate() {
            let data: Vec<f32> = (0..50 * 8)
                .map(|i| ((i * 7 + t * 13) % 17) as f32)
                .collect();
            let s = Samples::new(2, 2, data).unwrap();
            res.reservoir_update(&s, id, &mut rng).unwrap();
            mm.minmax_update(&s, id, &mut rng).unwrap();
            assert_eq!(res.len(), 30);
            assert_eq!(mm.len(), 30);
            assert_eq!(res.provenance().len(), 30);
            assert_eq!(mm.provenance().len(), 30);
        }
        assert!(res.append(&filled(1, 2, 2), "D").is_err());
        assert!(RawSampleMemory::new(2, 2, None)
            .reservoir_update(&filled(1, 2, 2), "A", &mut rng)
            .is_err());
    }

    #[test]
    fn strategy_names_round_trip() {
        for name in ["proposed", "dt", "joint", "reservoir", "minmax", "mtl"] {
            let s = StrategyKind::from_name(name, 250).unwrap();
            let json = serde_json::to_string(&s).unwrap();
            assert_eq!(serde_json::from_str::<StrategyKind>(&json).unwrap(), s);
        }
        assert_eq!(
            StrategyKind::from_name("proposed", 250).unwrap().replay_k(),
            Some(250)
        );
        assert!(StrategyKind::from_name("bogus", 0).is_err());
        let parsed: StrategyKind = serde_json::from_str(r#"{"kind":"proposed","k":3}"#).unwrap();
        assert_eq!(parsed, StrategyKind::proposed(3));
    }
}
