use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

fn utrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_utrack")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json_lines(o: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&o.stdout).lines().map(|l| serde_json::from_str(l).expect("stdout line is JSON")).collect()
}

const TINY: [&str; 8] = [
    "threads=1",
    "train.d_model=8",
    "train.heads=2",
    "train.n_envs=4",
    "train.rollout_len=64",
    "train.minibatches=2",
    "env.pf.n_particles=64",
    "train.total_timesteps=10000",
];

/// A small training run shared by the tests that need a checkpoint.
fn trained() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let mut args = vec!["train", "--seed", "7", "--out", out.to_str().unwrap()];
        args.extend(TINY);
        let o = utrack(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        dir
    })
    .path()
}

fn checkpoint() -> PathBuf {
    trained().join("run/checkpoint")
}

#[test]
fn missing_config_names_the_path() {
    let o = utrack(&["train", "--config", "/definitely/not/here.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/definitely/not/here.toml"), "{}", stderr(&o));
}

#[test]
fn bad_override_is_a_config_error() {
    let o = utrack(&["train", "env.horizon=0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("env.horizon"), "{}", stderr(&o));
}

#[test]
fn smoke_train_writes_snapshot_metrics_and_checkpoint() {
    let run = trained().join("run");
    let snapshot = fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(snapshot.lines().any(|l| l.trim() == "seed = 7"), "{snapshot}");
    let metrics = fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    // 10 000 steps at 256 steps per update
    assert_eq!(metrics.lines().count(), 40);
    for name in ["manifest.toml", "tensors.bin", "trainer_state.cbor", "config.toml"] {
        assert!(run.join("checkpoint").join(name).is_file(), "{name}");
    }
}

#[test]
fn unknown_plan_is_a_usage_error() {
    let o = utrack(&["curriculum", "no-such-plan"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no-such-plan"), "{}", stderr(&o));
}

#[test]
fn evaluate_sweep_emits_one_record_per_value() {
    let out = tempfile::tempdir().unwrap();
    let ck = checkpoint();
    let o = utrack(&[
        "evaluate",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--episodes",
        "3",
        "--sweep",
        "env.target_speed_frac=0.3,0.5,0.7",
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let recs = json_lines(&o);
    assert_eq!(recs.len(), 3);
    for (r, v) in recs.iter().zip(["0.3", "0.5", "0.7"]) {
        assert_eq!(r["episodes"], 3);
        assert_eq!(r["sweep"]["key"], "env.target_speed_frac");
        assert_eq!(r["sweep"]["value"], v);
        let m = r["metrics"].as_object().unwrap();
        let mut keys: Vec<&str> = m.keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(keys, ["collision_pct", "distance_m", "target_loss_pct", "tracking_error_m"]);
    }
    assert_eq!(fs::read_to_string(out.path().join("eval.jsonl")).unwrap().lines().count(), 3);
}

#[test]
fn evaluate_rejects_mismatched_network() {
    let ck = checkpoint();
    let o = utrack(&["evaluate", "--checkpoint", ck.to_str().unwrap(), "--episodes", "1", "train.d_model=16"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn resume_rejects_team_change() {
    let out = tempfile::tempdir().unwrap();
    let ck = checkpoint();
    let o = utrack(&["train", "--resume", ck.to_str().unwrap(), "--out", out.path().to_str().unwrap(), "env.n_agents=2"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn benchmark_reports_each_env_count() {
    let o = utrack(&["benchmark", "--envs", "1,128,1024", "--teams", "1A1T", "--steps", "2", "--warmup", "1", "threads=1", "env.pf.n_particles=64"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let recs = json_lines(&o);
    let counts: Vec<u64> = recs.iter().map(|r| r["n_envs"].as_u64().unwrap()).collect();
    assert_eq!(counts, [1, 128, 1024]);
    assert!(recs.iter().all(|r| r["config"] == "1A1T" && r["sps"].as_f64().unwrap() > 0.0));
}

#[test]
fn rollout_then_plot_renders_svg() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("traj");
    let ck = checkpoint();
    let o = utrack(&["rollout", "--checkpoint", ck.to_str().unwrap(), "--episodes", "2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut csvs: Vec<PathBuf> =
        fs::read_dir(&out).unwrap().map(|e| e.unwrap().path()).filter(|p| p.extension().is_some_and(|e| e == "csv")).collect();
    csvs.sort();
    assert_eq!(csvs.len(), 2);
    let svg = dir.path().join("ep.svg");
    let o = utrack(&["plot", csvs[0].to_str().unwrap(), "--out", svg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&svg).unwrap();
    assert!(text.contains("<svg") && text.contains("polyline"));
}

#[test]
fn malformed_csv_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    fs::write(
        &csv,
        "step,entity_id,kind,x,y,z,heading,est_x,est_y,track_err,reward,collision\n\
         0,0,agent,0,0,5,0,,,,0,0\n\
         1,0,agent,zero,0,5,0,,,,0,0\n",
    )
    .unwrap();
    let o = utrack(&["plot", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}
