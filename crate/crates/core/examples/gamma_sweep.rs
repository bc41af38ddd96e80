// Runs a miniature experiment grid end to end: the sequential protocol,
// the compression sweep, then the tables and plots the CLI would emit.

use csilab::channelgen::ScenarioSpec;
use csilab::expcli::{
    emit_plots, emit_tables, run_protocol, sweep_compression, ExperimentConfig, PlotKind,
    RunOptions, TableShape,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::temp_dir().join("csilab-example-grid");
    let mut cfg = ExperimentConfig::desk();
    cfg.scenarios = ScenarioSpec::default_sequence(0)
        .into_iter()
        .map(|s| s.with_dims(8, 8))
        .collect();
    cfg.n_train = 24;
    cfg.n_test = 8;
    cfg.ks = vec![16, 48];
    cfg.sweep_gammas = vec![1.0 / 4.0, 1.0 / 8.0, 1.0 / 16.0];
    cfg.train.epochs = 3;
    cfg.train.batch_size = 8;
    cfg.gan.epochs = 1;
    cfg.gan.batch_size = 8;
    cfg.gan.n_critic = 2;
    cfg.generator_width = Some(4);
    cfg.critic_widths = [4, 4, 4];
    cfg.out_dir = out.clone();
    let opts = RunOptions {
        force: true,
        ..RunOptions::default()
    };

    let summary = run_protocol(&cfg, &opts)?;
    for shape in [TableShape::Table1, TableShape::Table2] {
        println!(
            "{}",
            emit_tables(&summary.records, &summary.memory, shape)?.to_text()
        );
    }
    let sweep = sweep_compression(&cfg, &opts)?;
    for r in sweep.iter().filter(|r| r.evaluated_on == "A") {
        println!(
            "{:<14} gamma {:<8} A after C: {:6.2} dB",
            r.strategy, r.gamma, r.nmse_db
        );
    }
    let ks: Vec<f64> = cfg.ks.iter().map(|&k| k as f64).collect();
    let mut files = emit_plots(&summary.records, PlotKind::KTrend, &ks, &out.join("report"))?;
    files.extend(emit_plots(
        &sweep,
        PlotKind::GammaSweep,
        &cfg.sweep_gammas,
        &out.join("report"),
    )?);
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}
