use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use csilab::ctgan::load_snapshot;
use csilab::error::{Error, Result};
use csilab::expcli::{
    emit_plots, emit_tables, format_mib, gen_data, read_csv, run_protocol, sweep_compression,
    ExperimentConfig, Manifest, MemoryRecord, PlotKind, ResultRecord, RunOptions, TableShape,
    MANIFEST, MEMORY, RESULTS, SWEEP,
};

#[derive(Parser)]
#[command(name = "csilab", version, about = "Continual CSI feedback experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize and store the scenario datasets.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        desk_scale: bool,
    },
    /// Run the sequential protocol for the given strategies.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Strategy names; defaults to the config's list.
        #[arg(long = "strategy", num_args = 1..)]
        strategies: Vec<String>,
        #[arg(long)]
        desk_scale: bool,
        /// Discard any previous output in the run directory.
        #[arg(long)]
        force: bool,
        /// Continue a partial run with the same configuration.
        #[arg(long, conflicts_with = "force")]
        resume: bool,
    },
    /// NMSE vs compression ratio for Proposed, DT and MTL.
    SweepGamma {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        desk_scale: bool,
        #[arg(long)]
        force: bool,
        #[arg(long, conflicts_with = "force")]
        resume: bool,
    },
    /// Build tables and plots from a finished run directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        tables: bool,
        #[arg(long)]
        plots: bool,
    },
    /// List the generator snapshots of a run with their sizes.
    InspectMemory {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn load_config(path: &Path, desk: bool) -> Result<ExperimentConfig> {
    // an unreadable config file is a config problem, not an I/O failure
    let mut cfg = ExperimentConfig::from_file(path, desk).map_err(|e| match e {
        Error::Io { .. } => Error::Config(e.to_string()),
        e => e,
    })?;
    cfg.apply_env()?;
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::AlreadyComplete(_) => 2,
        Error::PartialRun(_) => 3,
        Error::Divergence { .. } | Error::NonFiniteLoss { .. } | Error::NonFiniteTerm { .. } => 4,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData {
            config,
            scenario,
            desk_scale,
        } => {
            let cfg = load_config(&config, desk_scale)?;
            for p in gen_data(&cfg, scenario.as_deref())? {
                println!("{}", p.display());
            }
        }
        Cmd::Run {
            config,
            strategies,
            desk_scale,
            force,
            resume,
        } => {
            let mut cfg = load_config(&config, desk_scale)?;
            if !strategies.is_empty() {
                cfg.strategies = strategies;
                cfg.validate()?;
            }
            let opts = RunOptions {
                force,
                resume,
                progress: true,
            };
            let s = run_protocol(&cfg, &opts)?;
            println!(
                "{} records in {} ({} GAN trainings, {} cells reused)",
                s.records.len(),
                s.out_dir.display(),
                s.gan_trainings,
                s.resumed_cells
            );
        }
        Cmd::SweepGamma {
            config,
            desk_scale,
            force,
            resume,
        } => {
            let cfg = load_config(&config, desk_scale)?;
            let opts = RunOptions {
                force,
                resume,
                progress: true,
            };
            let recs = sweep_compression(&cfg, &opts)?;
            println!(
                "{} records in {}",
                recs.len(),
                cfg.out_dir.join(SWEEP).display()
            );
        }
        Cmd::Report {
            input,
            tables,
            plots,
        } => report(&input, tables, plots)?,
        Cmd::InspectMemory { input } => inspect(&input)?,
    }
    Ok(())
}

fn report(dir: &Path, tables: bool, plots: bool) -> Result<()> {
    let (tables, plots) = if !tables && !plots {
        (true, true)
    } else {
        (tables, plots)
    };
    let results_path = dir.join(RESULTS);
    if !results_path.exists() {
        return Err(Error::Config(format!(
            "{} not found",
            results_path.display()
        )));
    }
    let records: Vec<ResultRecord> = read_csv(&results_path)?;
    let memory: Vec<MemoryRecord> = if dir.join(MEMORY).exists() {
        read_csv(&dir.join(MEMORY))?
    } else {
        Vec::new()
    };
    let sweep_path = dir.join(SWEEP);
    let sweep: Vec<ResultRecord> = if sweep_path.exists() {
        read_csv(&sweep_path)?
    } else {
        Vec::new()
    };
    let out = dir.join("report");
    if tables {
        for shape in TableShape::ALL {
            let t = emit_tables(&records, &memory, shape)?;
            print!("{}", t.to_text());
            println!();
            t.write(&out)?;
        }
    }
    if plots {
        let ks: Vec<f64> = match Manifest::load(dir) {
            Ok(m) => m.ks.iter().map(|&k| k as f64).collect(),
            Err(_) => {
                let mut ks: Vec<usize> = records.iter().filter_map(|r| r.k).collect();
                ks.sort_unstable();
                ks.dedup();
                ks.into_iter().map(|k| k as f64).collect()
            }
        };
        emit_plots(&records, PlotKind::StrategyBars, &[], &out)?;
        emit_plots(&records, PlotKind::KTrend, &ks, &out)?;
        if sweep.is_empty() {
            eprintln!(
                "no {SWEEP} in {}; skipping the gamma sweep plot",
                dir.display()
            );
        } else {
            let mut gammas: Vec<f64> = Vec::new();
            for r in &sweep {
                if !gammas.contains(&r.gamma) {
                    gammas.push(r.gamma);
                }
            }
            gammas.sort_by(|a, b| b.total_cmp(a));
            emit_plots(&sweep, PlotKind::GammaSweep, &gammas, &out)?;
        }
    }
    println!("report written to {}", out.display());
    Ok(())
}

fn inspect(dir: &Path) -> Result<()> {
    let mem_dir = dir.join("memory");
    if !mem_dir.is_dir() {
        return Err(Error::Config(format!(
            "{} has no memory/ directory",
            dir.display()
        )));
    }
    let order: Vec<String> = Manifest::load(dir).map(|m| m.scenarios).unwrap_or_default();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&mem_dir)
        .map_err(|e| Error::io(&mem_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csip"))
        .collect();
    paths.sort_by_key(|p| {
        let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned());
        (
            stem.as_ref()
                .and_then(|s| order.iter().position(|o| o == s))
                .unwrap_or(usize::MAX),
            stem,
        )
    });
    if paths.is_empty() {
        println!("no generator snapshots in {}", mem_dir.display());
        return Ok(());
    }
    println!(
        "{:<10} {:>10} {:>12} {:>14} {:>6}  spec",
        "scenario", "params", "bytes", "size", "z_dim"
    );
    let mut total = 0u64;
    for p in &paths {
        let (snap, meta) = load_snapshot(p)?;
        let params = snap.spec.count_params();
        total += meta.byte_size as u64;
        println!(
            "{:<10} {:>10} {:>12} {:>14} {:>6}  {}",
            meta.scenario_id,
            params,
            meta.byte_size,
            format_mib(meta.byte_size as u64),
            meta.z_dim,
            &meta.spec_hash[..12]
        );
    }
    println!("total {} bytes ({})", total, format_mib(total));
    if dir.join(MANIFEST).exists() {
        let m = Manifest::load(dir)?;
        println!(
            "master seed {}, config {}",
            m.master_seed,
            &m.config_hash[..12.min(m.config_hash.len())]
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
