use std::fs;
use std::path::Path;
use std::process::Command;

use safe_explore::campaign::{run_campaign, FREQUENCY_CSV, TRACE_CSV};
use safe_explore::config::ExperimentConfig;
use safe_explore::governor::ExplorationMode;

fn config_path() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/benchmark.toml")
}

fn config(episodes: usize) -> ExperimentConfig {
    ExperimentConfig {
        episodes,
        ..ExperimentConfig::load(&config_path()).unwrap()
    }
}

struct Row {
    episode: usize,
    k: usize,
    branch: String,
    violated: bool,
}

fn read_trace(dir: &Path) -> Vec<Row> {
    let text = fs::read_to_string(dir.join(TRACE_CSV)).unwrap();
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            Row {
                episode: f[0].parse().unwrap(),
                k: f[1].parse().unwrap(),
                branch: f[5].to_string(),
                violated: f[9] == "1",
            }
        })
        .collect()
}

fn read_frequencies(dir: &Path) -> Vec<f64> {
    fs::read_to_string(dir.join(FREQUENCY_CSV))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn adaptive_trace_is_complete_and_recounts() {
    let dir = tempfile::tempdir().unwrap();
    let n = 400;
    run_campaign(&config(n), dir.path(), None).unwrap();
    let rows = read_trace(dir.path());
    assert_eq!(rows.len(), n * 15);

    let mut counts = [0usize; 15];
    for r in &rows {
        counts[r.k - 1] += !r.violated as usize;
    }
    for (c, f) in counts.iter().zip(read_frequencies(dir.path())) {
        assert_eq!(*c as f64 / n as f64, f);
    }
}

#[test]
fn adaptive_returns_within_tau() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(1000);
    let tau = cfg.chance.tau();
    run_campaign(&cfg, dir.path(), None).unwrap();
    let rows = read_trace(dir.path());
    let mut run = 0;
    let mut longest = 0;
    let mut previous = None;
    for r in &rows {
        if previous != Some(r.episode) {
            run = 0;
        }
        previous = Some(r.episode);
        run = if r.violated { run + 1 } else { 0 };
        longest = longest.max(run);
    }
    assert!(longest <= tau, "outside X for {longest} consecutive steps");
    // each violation is followed by a backup step
    for w in rows.windows(2) {
        if w[0].violated && w[0].episode == w[1].episode {
            assert_eq!(w[1].branch, "backup");
        }
    }
}

#[test]
fn baseline_trace_stops_at_first_violation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        mode: ExplorationMode::FixedSigma(10.0),
        ..config(300)
    };
    run_campaign(&cfg, dir.path(), None).unwrap();
    let rows = read_trace(dir.path());
    for e in 0..300 {
        let ep: Vec<&Row> = rows.iter().filter(|r| r.episode == e).collect();
        let first = ep.iter().position(|r| r.violated);
        if let Some(i) = first {
            assert_eq!(i + 1, ep.len(), "episode {e} continued after a violation");
        } else {
            assert_eq!(ep.len(), 15);
        }
        assert!(ep.iter().all(|r| r.branch == "explore"));
    }

    // frequencies count terminated steps as unsatisfied
    let mut counts = [0usize; 15];
    for r in &rows {
        counts[r.k - 1] += !r.violated as usize;
    }
    for (c, f) in counts.iter().zip(read_frequencies(dir.path())) {
        assert_eq!(*c as f64 / 300.0, f);
    }
}

#[test]
fn different_seeds_differ() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_campaign(&config(20), a.path(), None).unwrap();
    run_campaign(
        &ExperimentConfig {
            seed: 1,
            ..config(20)
        },
        b.path(),
        None,
    )
    .unwrap();
    assert_ne!(
        fs::read(a.path().join(TRACE_CSV)).unwrap(),
        fs::read(b.path().join(TRACE_CSV)).unwrap()
    );
}

fn cli(args: &[&str]) -> (bool, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_safe-explore"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    (
        out.status.success(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn cli_run_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_path();
    let cfg = cfg.to_str().unwrap();
    let out = dir.path().to_str().unwrap();
    let (ok, stdout, stderr) = cli(&[
        "run",
        "--config",
        cfg,
        "--episodes",
        "60",
        "--seed",
        "3",
        "--out",
        out,
    ]);
    assert!(ok, "{stderr}");
    assert!(stdout.contains("min satisfaction frequency"));
    for f in [
        "episodes.csv",
        "frequency.csv",
        "trace.csv",
        "sigma_final.csv",
        "trajectory_final.csv",
        "weights.txt",
    ] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    assert_eq!(
        fs::read_to_string(dir.path().join("episodes.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );

    let weights = dir.path().join("weights.txt");
    let (ok, stdout, stderr) = cli(&[
        "eval",
        "--config",
        cfg,
        "--weights",
        weights.to_str().unwrap(),
    ]);
    assert!(ok, "{stderr}");
    assert!(stdout.lines().any(|l| l.starts_with("J = ")));
    assert_eq!(stdout.lines().filter(|l| l.contains(",mean,")).count(), 15);
}

#[test]
fn cli_rejects_bad_arguments() {
    let cfg = config_path();
    let cfg = cfg.to_str().unwrap();
    let (ok, _, stderr) = cli(&[
        "run",
        "--config",
        cfg,
        "--mode",
        "fixed-sigma",
        "--episodes",
        "1",
    ]);
    assert!(!ok && stderr.contains("sigma"));
    let (ok, _, _) = cli(&["run", "--config", "/nonexistent/config.toml"]);
    assert!(!ok);
    let (ok, _, stderr) = cli(&["markov-bound", "--tau", "3", "--rho", "0.9,0.5"]);
    assert!(!ok && stderr.contains("expected 3"));
}

#[test]
fn cli_markov_and_mc() {
    let (ok, stdout, _) = cli(&[
        "markov-bound",
        "--tau",
        "2",
        "--rho",
        "0.95,0.5",
        "--horizon",
        "100",
    ]);
    assert!(ok);
    assert!(stdout.contains("0.902500000000") && stdout.contains("holds"));

    let cfg = config_path();
    let (ok, stdout, stderr) = cli(&[
        "mc-check",
        "--config",
        cfg.to_str().unwrap(),
        "--samples",
        "2000",
    ]);
    assert!(ok, "{stderr}");
    assert!(stdout.contains("eta' = 0.987340"));
    assert_eq!(stdout.lines().filter(|l| l.contains(",true,")).count(), 3);
}
