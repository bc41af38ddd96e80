use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::memory::{StepSeeds, StrategyKind};

/// A unit of work that owns its random streams.
///
/// Step 0 of every strategy is the same computation (nothing is in memory
/// yet), so it is one `Base` cell per compression ratio. Generators depend
/// only on the scenario, so they are `Gan` cells shared across the grid.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cell {
    Data {
        scenario: String,
    },
    Base {
        gamma_bits: u64,
    },
    Gan {
        scenario: String,
    },
    Step {
        strategy: StrategyKind,
        gamma_bits: u64,
        scenario: String,
    },
    Offline {
        gamma_bits: u64,
    },
}

impl Cell {
    pub fn base(gamma: f64) -> Self {
        Cell::Base {
            gamma_bits: gamma.to_bits(),
        }
    }

    pub fn step(strategy: &StrategyKind, gamma: f64, scenario: &str) -> Self {
        Cell::Step {
            strategy: strategy.clone(),
            gamma_bits: gamma.to_bits(),
            scenario: scenario.to_string(),
        }
    }

    pub fn offline(gamma: f64) -> Self {
        Cell::Offline {
            gamma_bits: gamma.to_bits(),
        }
    }

    /// Canonical text form, which is what gets hashed.
    pub fn key(&self) -> String {
        match self {
            Cell::Data { scenario } => format!("data/{scenario}"),
            Cell::Base { gamma_bits } => format!("base/g{gamma_bits:016x}"),
            Cell::Gan { scenario } => format!("gan/{scenario}"),
            Cell::Step {
                strategy,
                gamma_bits,
                scenario,
            } => format!(
                "step/{}/g{gamma_bits:016x}/{scenario}",
                serde_json::to_string(strategy).expect("strategy serializes")
            ),
            Cell::Offline { gamma_bits } => format!("offline/g{gamma_bits:016x}"),
        }
    }
}

/// Per-component seeds of one cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ComponentSeeds {
    /// Root seed; components that take a single seed (dataset synthesis,
    /// GAN training) derive their named streams from it.
    pub root: u64,
    pub data: u64,
    pub init: u64,
    pub dropout: u64,
    pub latent: u64,
    pub interpolation: u64,
    pub shuffle: u64,
    pub select: u64,
}

impl ComponentSeeds {
    pub fn all(&self) -> [u64; 8] {
        [
            self.root,
            self.data,
            self.init,
            self.dropout,
            self.latent,
            self.interpolation,
            self.shuffle,
            self.select,
        ]
    }
}

fn hash_seed(master: u64, key: &str, component: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((key.len() as u64).to_le_bytes());
    h.update(key.as_bytes());
    h.update(component.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Seeds of `cell` under `master`: a hash of the coordinate tuple, so a cell's
/// seeds never depend on which other cells exist.
pub fn cell_seeds(master: u64, cell: &Cell) -> ComponentSeeds {
    let key = cell.key();
    let s = |c: &str| hash_seed(master, &key, c);
    ComponentSeeds {
        root: s("root"),
        data: s("data"),
        init: s("init"),
        dropout: s("dropout"),
        latent: s("latent"),
        interpolation: s("interpolation"),
        shuffle: s("shuffle"),
        select: s("select"),
    }
}

/// Seeds for a continual step at position `t` in the sequence.
pub fn step_seeds(
    master: u64,
    strategy: &StrategyKind,
    gamma: f64,
    scenario: &str,
    t: usize,
) -> StepSeeds {
    let own = if t == 0 {
        cell_seeds(master, &Cell::base(gamma))
    } else {
        cell_seeds(master, &Cell::step(strategy, gamma, scenario))
    };
    let gan = cell_seeds(
        master,
        &Cell::Gan {
            scenario: scenario.to_string(),
        },
    );
    StepSeeds {
        init: own.init,
        shuffle: own.shuffle,
        replay: own.latent,
        select: own.select,
        gan: gan.root,
    }
}

/// Every cell of a grid with its seeds, keyed by the cell's text form.
pub fn seed_plan(
    master: u64,
    scenarios: &[String],
    strategies: &[StrategyKind],
    gammas: &[f64],
) -> BTreeMap<String, ComponentSeeds> {
    let mut cells = Vec::new();
    for s in scenarios {
        cells.push(Cell::Data {
            scenario: s.clone(),
        });
        cells.push(Cell::Gan {
            scenario: s.clone(),
        });
    }
    for &g in gammas {
        cells.push(Cell::base(g));
        cells.push(Cell::offline(g));
        for st in strategies {
            for s in scenarios.iter().skip(1) {
                cells.push(Cell::step(st, g, s));
            }
        }
    }
    cells
        .into_iter()
        .map(|c| (c.key(), cell_seeds(master, &c)))
        .collect()
}
