// Walks three scenarios in order with generative replay and with plain
// fine-tuning, then prints what each remembers of the first scenario.

use csilab::channelgen::{generate_dataset, ScenarioSpec};
use csilab::ctgan::{DiscriminatorSpec, GanTrainConfig, GeneratorSpec, Z_DIM};
use csilab::feedbacknet::{build_feedback_model, Arch, TrainConfig};
use csilab::memory::{continual_step, ContinualConfig, ContinualRun, StepSeeds, StrategyKind};
use csilab::netcore::{RandomState, Stream};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = ScenarioSpec::default_sequence(0)
        .into_iter()
        .map(|s| generate_dataset(&s.with_dims(16, 16), 120, 40))
        .collect::<Result<Vec<_>, _>>()?;
    let cfg = ContinualConfig {
        train: TrainConfig {
            epochs: 8,
            batch_size: 40,
            ..TrainConfig::default()
        },
        gan: GanTrainConfig {
            epochs: 2,
            batch_size: 40,
            ..GanTrainConfig::default()
        },
        gen_spec: GeneratorSpec::new(Z_DIM, 16, 16, 8),
        disc_spec: DiscriminatorSpec::new(16, 16, [8, 16, 32]),
    };

    for strategy in [StrategyKind::proposed(240), StrategyKind::DirectTransfer] {
        let model = build_feedback_model(
            1.0 / 16.0,
            16,
            16,
            Arch::CsinetLike,
            &mut RandomState::new(7).stream(Stream::Init),
        )?;
        let mut run = ContinualRun::new(strategy.clone(), model);
        println!("{}:", strategy.label());
        for (t, ds) in data.iter().enumerate() {
            let t = t as u64;
            let seeds = StepSeeds {
                init: 7,
                shuffle: 100 + t,
                replay: 200 + t,
                select: 300 + t,
                gan: 400 + t,
            };
            let o = continual_step(&mut run, ds, &cfg, &seeds)?;
            let row: Vec<String> = o
                .evaluations
                .iter()
                .map(|e| format!("{} {:6.2} dB", e.evaluated_on, e.nmse_db))
                .collect();
            println!(
                "  after {} ({} real + {} replayed): {}",
                o.trained_up_to,
                o.train_size - o.replay_size,
                o.replay_size,
                row.join(" | ")
            );
        }
        println!("  memory: {} bytes", run.memory_bytes(4).bytes);
    }
    Ok(())
}
