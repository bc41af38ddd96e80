use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use csilab::channelgen::ScenarioSpec;
use csilab::expcli::{ExperimentConfig, Manifest};

fn tiny_config(dir: &Path) -> PathBuf {
    let mut cfg = ExperimentConfig::desk();
    cfg.scenarios = ScenarioSpec::default_sequence(0)
        .into_iter()
        .map(|s| s.with_dims(8, 8))
        .collect();
    cfg.n_train = 16;
    cfg.n_test = 4;
    cfg.ks = vec![8];
    cfg.sweep_gammas = vec![1.0 / 4.0, 1.0 / 8.0];
    cfg.train.epochs = 1;
    cfg.train.batch_size = 8;
    cfg.gan.epochs = 1;
    cfg.gan.batch_size = 8;
    cfg.gan.n_critic = 1;
    cfg.generator_width = Some(2);
    cfg.critic_widths = [2, 2, 2];
    cfg.out_dir = dir.join("run");
    let path = dir.join("tiny.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn csilab(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_csilab"));
    cmd.args(args).env_remove("CSILAB_SEED");
    if let Some(s) = seed {
        cmd.env("CSILAB_SEED", s);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn run_protects_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let run = dir.path().join("run");

    assert_eq!(
        code(&csilab(
            &["gen-data", "--config", cfg, "--scenario", "B"],
            None
        )),
        0
    );
    assert!(run.join("data/B.csid").exists());
    assert!(!run.join("data/A.csid").exists());

    let first = csilab(
        &["run", "--config", cfg, "--strategy", "proposed", "dt"],
        None,
    );
    assert_eq!(
        code(&first),
        0,
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    let results = fs::read(run.join("results.csv")).unwrap();

    // a completed run is not overwritten without --force
    assert_eq!(
        code(&csilab(
            &["run", "--config", cfg, "--strategy", "proposed", "dt"],
            None
        )),
        2
    );

    // truncate to simulate an interrupted run
    let text = String::from_utf8(results.clone()).unwrap();
    let head: Vec<&str> = text.lines().take(4).collect();
    fs::write(run.join("results.csv"), head.join("\n") + "\n").unwrap();
    assert_eq!(
        code(&csilab(
            &["run", "--config", cfg, "--strategy", "proposed", "dt"],
            None
        )),
        3
    );
    let resumed = csilab(
        &[
            "run",
            "--config",
            cfg,
            "--strategy",
            "proposed",
            "dt",
            "--resume",
        ],
        None,
    );
    assert_eq!(
        code(&resumed),
        0,
        "{}",
        String::from_utf8_lossy(&resumed.stderr)
    );
    assert_eq!(fs::read(run.join("results.csv")).unwrap(), results);

    let forced = csilab(
        &[
            "run",
            "--config",
            cfg,
            "--strategy",
            "proposed",
            "dt",
            "--force",
        ],
        None,
    );
    assert_eq!(code(&forced), 0);
    assert_eq!(fs::read(run.join("results.csv")).unwrap(), results);
}

#[test]
fn seed_env_overrides_master_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let o = csilab(&["run", "--config", cfg, "--strategy", "dt"], Some("77"));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = Manifest::load(&dir.path().join("run")).unwrap();
    assert_eq!(m.master_seed, 77);
    assert_eq!(
        code(&csilab(&["run", "--config", cfg, "--force"], Some("x7"))),
        2
    );
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "gammas = [0.0]\n").unwrap();
    for args in [
        vec!["run", "--config", bad.to_str().unwrap()],
        vec!["run", "--config", "/does/not/exist.json"],
        vec!["sweep-gamma"],
        vec!["no-such-command"],
    ] {
        assert_eq!(code(&csilab(&args, None)), 2, "{args:?}");
    }
    let cfg = tiny_config(dir.path());
    let o = csilab(
        &[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--strategy",
            "bogus",
        ],
        None,
    );
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
}

#[test]
fn report_and_inspect_memory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let run = dir.path().join("run");
    assert_eq!(code(&csilab(&["run", "--config", cfg], None)), 0);
    assert_eq!(code(&csilab(&["sweep-gamma", "--config", cfg], None)), 0);
    let o = csilab(
        &[
            "report",
            "--in",
            run.to_str().unwrap(),
            "--tables",
            "--plots",
        ],
        None,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "table1.csv",
        "table1.txt",
        "table2.csv",
        "fig6.csv",
        "strategy_bars.svg",
        "k_trend.svg",
        "gamma_sweep.svg",
        "gamma_sweep.csv",
    ] {
        assert!(run.join("report").join(f).exists(), "{f}");
    }
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("MiB"));

    let o = csilab(&["inspect-memory", "--in", run.to_str().unwrap()], None);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    let rows: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with(['A', 'B', 'C']))
        .collect();
    assert_eq!(rows.len(), 3, "{text}");

    let empty = dir.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    assert_ne!(
        code(&csilab(&["report", "--in", empty.to_str().unwrap()], None)),
        0
    );
}
