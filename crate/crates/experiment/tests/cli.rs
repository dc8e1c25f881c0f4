use std::path::Path;
use std::process::{Command, Output};

use minattn::heatmap::read_heatmap_csv;
use minattn::records::{read_csv, read_json, EpisodeRow};
use minattn::runner::Summary;
use minattn::svg::read_heatmap_svg;

const TINY: &str = r#"
schema = "minattn.experiment.v1"
seeds = [0, 1, 2]

[env]
kind = "pendulum_swingup"
horizon = 40

[meta]
epochs = 2
env_steps_per_epoch = 160
imaginary_trajectories = 3
imaginary_horizon = 15
eval_episodes = 2

[meta.ensemble]
members = 2
hidden = [16]
epochs = 2

[heatmap]
bins = [6, 5]
"#;

fn cli(dir: &Path, args: &[&str], threads: usize) -> Output {
    Command::new(env!("CARGO_BIN_EXE_minattn"))
        .current_dir(dir)
        .args(args)
        .env("RAYON_NUM_THREADS", threads.to_string())
        .output()
        .unwrap()
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), config).unwrap();
    dir
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn exit_codes() {
    let dir = setup(TINY);
    let d = dir.path();
    assert_eq!(cli(d, &["validate-config", "--config", "c.toml"], 1).status.code(), Some(0));
    assert_eq!(cli(d, &["validate-config", "--config", "missing.toml"], 1).status.code(), Some(2));
    std::fs::write(d.join("bad.toml"), format!("{TINY}\n[output]\ncolour = true\n")).unwrap();
    let out = cli(d, &["train", "--config", "bad.toml"], 1);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
    std::fs::write(d.join("schema.toml"), TINY.replace("experiment.v1", "experiment.v0")).unwrap();
    assert_eq!(cli(d, &["train", "--config", "schema.toml"], 1).status.code(), Some(2));
    assert_eq!(cli(d, &["train", "--config", "c.toml", "--alpha", "-1"], 1).status.code(), Some(2));
    assert_eq!(cli(d, &["train", "--config", "c.toml", "--seeds", "3,3"], 1).status.code(), Some(2));
    assert_eq!(cli(d, &["frobnicate"], 1).status.code(), Some(2));
}

#[test]
fn total_failure_exits_one() {
    // Every episode leaves the state bound at once, so the ensemble never
    // gets enough data to train.
    let dir = setup(&TINY.replace("horizon = 40", "horizon = 40\nstate_bound = 1e-9"));
    let out = cli(dir.path(), &["train", "--config", "c.toml", "--seeds", "0,1"], 1);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let s: Summary = read_json(&dir.path().join("out/summary.json")).unwrap();
    assert!(s.seeds_ok.is_empty());
    assert_eq!(s.failed.len(), 2);
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = setup(TINY);
    let d = dir.path();
    assert!(cli(d, &["train", "--config", "c.toml", "--out", "a"], 1).status.success());
    assert!(cli(d, &["train", "--config", "c.toml", "--out", "b"], 4).status.success());
    let mut files = vec!["summary.json".to_string(), "curves.csv".into(), "curves.svg".into()];
    for s in 0..3 {
        for f in ["epochs.csv", "episodes.csv", "time_profile.csv", "checkpoint.json"] {
            files.push(format!("seed_{s}/{f}"));
        }
    }
    for f in &files {
        assert_eq!(read(&d.join("a").join(f)), read(&d.join("b").join(f)), "{f}");
    }
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let dir = setup(TINY);
    let d = dir.path();
    std::fs::write(d.join("long.toml"), TINY.replace("epochs = 2\nenv", "epochs = 4\nenv")).unwrap();
    assert!(cli(d, &["train", "--config", "c.toml", "--out", "r"], 1).status.success());
    assert!(cli(d, &["train", "--config", "long.toml", "--out", "r"], 1).status.success());
    assert!(cli(d, &["train", "--config", "long.toml", "--out", "u"], 1).status.success());
    for f in ["seed_1/epochs.csv", "seed_1/episodes.csv", "seed_1/checkpoint.json", "summary.json"] {
        assert_eq!(read(&d.join("r").join(f)), read(&d.join("u").join(f)), "{f}");
    }
    // Different settings must not silently reuse the checkpoint.
    let out = cli(d, &["train", "--config", "long.toml", "--out", "r", "--alpha", "0.7"], 1);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn summary_is_recomputable_from_episodes() {
    let dir = setup(TINY);
    let d = dir.path();
    assert!(cli(d, &["train", "--config", "c.toml"], 2).status.success());
    let s: Summary = read_json(&d.join("out/summary.json")).unwrap();
    assert_eq!(s.unit, "epoch");
    let m = s.final_metrics.unwrap();
    let mut per_seed = Vec::new();
    for seed in 0..3 {
        let rows: Vec<EpisodeRow> = read_csv(&d.join(format!("out/seed_{seed}/episodes.csv"))).unwrap();
        let last: Vec<&EpisodeRow> = rows.iter().filter(|r| r.epoch == 2).collect();
        per_seed.push(last.iter().map(|r| r.total_reward).sum::<f64>() / last.len() as f64);
    }
    let mean = per_seed.iter().sum::<f64>() / 3.0;
    let std = (per_seed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
    assert!((m.total_reward.mean - mean).abs() <= 1e-12 * mean.abs().max(1.0));
    assert!((m.total_reward.std - std).abs() <= 1e-12 * std.max(1.0));
}

#[test]
fn zero_epochs_gives_valid_empty_outputs() {
    let dir = setup(&TINY.replace("epochs = 2\nenv", "epochs = 0\nenv"));
    let d = dir.path();
    let out = cli(d, &["train", "--config", "c.toml"], 1);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s: Summary = read_json(&d.join("out/summary.json")).unwrap();
    assert_eq!(s.seeds_ok, vec![0, 1, 2]);
    assert!(s.final_metrics.is_none());
    assert!(read_csv::<EpisodeRow>(&d.join("out/seed_0/episodes.csv")).unwrap().is_empty());
    let curves = std::fs::read_to_string(d.join("out/curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1);
}

#[test]
fn every_verb_writes_its_outputs() {
    let dir = setup(TINY);
    let d = dir.path();
    let ok = |args: &[&str]| {
        let out = cli(d, args, 2);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    ok(&["train", "--config", "c.toml", "--seed", "5"]);
    ok(&["meta-test", "--config", "c.toml", "--seed", "5"]);
    ok(&["heatmap", "--config", "c.toml", "--seed", "5"]);
    ok(&["curves", "--out", "out"]);
    ok(&["ablate", "--config", "c.toml", "--seeds", "0-1", "--out", "abl"]);
    for f in ["out/metatest.csv", "out/metatest.json", "out/curves.svg", "abl/comparison.csv", "abl/comparison.json", "abl/curves.svg"] {
        assert!(d.join(f).exists(), "{f}");
    }
    let csv = read_heatmap_csv(&d.join("out/seed_5/heatmap.csv")).unwrap();
    let svg = read_heatmap_svg(&std::fs::read_to_string(d.join("out/seed_5/heatmap.svg")).unwrap()).unwrap();
    assert_eq!(csv, svg);
    assert_eq!(csv.bins, [6, 5]);
}
