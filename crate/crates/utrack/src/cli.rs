//! `utrack <train|curriculum|evaluate|benchmark|rollout|plot>`.

use std::ffi::OsString;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use utrack_core::eval::{evaluate, EvalMetrics, GreedyActor};
use utrack_core::rng::derive_seed;

use crate::checkpoint::Checkpoint;
use crate::config::{load_run_config, override_run_config, RunConfig};
use crate::curriculum::{resolve_plan, run_curriculum};
use crate::error::{AppError, AppResult};
use crate::io::{read_trajectory_csv, record_episode, write_trajectory_csv, RecordPolicy};
use crate::plot::render_svg;
use crate::trainer::{train, JsonLines, Start, TrainOptions};
use crate::vecenv::{benchmark_sps, team_configs, BenchPolicy, BenchRecord, RayonExecutor};

/// Seed stream of evaluation and recorded episodes, keyed by `train.seed`.
pub const STREAM_EVAL: u64 = 0xE7;
const STREAM_TRAJECTORY: u64 = 0x7A;

#[derive(Debug, Parser)]
#[command(name = "utrack", version, about = "Multi-agent underwater target tracking: simulation, training and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; sets `train.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (or file for `plot`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one configuration.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a resumable checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// `key=value` overrides.
        overrides: Vec<String>,
    },
    /// Run a staged plan: `desk`, `paper` or a plan file, then overrides.
    Curriculum {
        #[command(flatten)]
        common: Common,
        /// Plan name or path followed by `key=value` overrides.
        args: Vec<String>,
    },
    /// Greedy evaluation of a checkpoint.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        /// Sweep one key over values, e.g. `env.target_speed_frac=0.3,0.5,0.7`.
        #[arg(long)]
        sweep: Option<String>,
        /// Write one trajectory CSV per episode into this directory.
        #[arg(long)]
        trajectories: Option<PathBuf>,
        overrides: Vec<String>,
    },
    /// Steps per second for team sizes 1A1T..5A5T over environment counts.
    Benchmark {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 128, 1024])]
        envs: Vec<usize>,
        /// Team sizes to run, e.g. `1A1T,3A3T`; all five by default.
        #[arg(long, value_delimiter = ',')]
        teams: Vec<String>,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 20)]
        warmup: usize,
        #[arg(long, value_enum, default_value_t = BenchPolicy::Random)]
        policy: BenchPolicy,
        overrides: Vec<String>,
    },
    /// Record episodes as trajectory CSVs.
    Rollout {
        #[command(flatten)]
        common: Common,
        /// Greedy actor to play; holds course when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        episodes: usize,
        overrides: Vec<String>,
    },
    /// Render trajectory CSVs as SVG.
    Plot {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> AppResult<()> {
    match cmd {
        Command::Train { common, resume, overrides } => cmd_train(&common, resume.as_deref(), &overrides),
        Command::Curriculum { common, args } => cmd_curriculum(&common, &args),
        Command::Evaluate { common, checkpoint, episodes, sweep, trajectories, overrides } => {
            cmd_evaluate(&common, &checkpoint, episodes, sweep.as_deref(), trajectories.as_deref(), &overrides)
        }
        Command::Benchmark { common, envs, teams, steps, warmup, policy, overrides } => {
            cmd_benchmark(&common, &envs, &teams, steps, warmup, policy, &overrides)
        }
        Command::Rollout { common, checkpoint, episodes, overrides } => {
            cmd_rollout(&common, checkpoint.as_deref(), episodes, &overrides)
        }
        Command::Plot { common, inputs } => cmd_plot(&common, &inputs),
    }
}

fn with_seed(mut overrides: Vec<String>, common: &Common) -> Vec<String> {
    if let Some(s) = common.seed {
        overrides.push(format!("train.seed={s}"));
    }
    overrides
}

fn load(common: &Common, overrides: &[String]) -> AppResult<RunConfig> {
    load_run_config(common.config.as_deref(), &with_seed(overrides.to_vec(), common))
}

fn out_dir(common: &Common, cfg: &RunConfig, default: &str) -> PathBuf {
    common.out.clone().or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from(default))
}

/// Creates `dir` and writes the configuration snapshot through a rename.
fn prepare_out(dir: &Path, cfg: &RunConfig) -> AppResult<()> {
    fs::create_dir_all(dir).map_err(|e| AppError::file(dir, format!("cannot create output directory: {e}")))?;
    let tmp = dir.join(".config.toml.tmp");
    fs::write(&tmp, cfg.to_toml()).map_err(|e| AppError::file(&tmp, e.to_string()))?;
    fs::rename(&tmp, dir.join("config.toml"))?;
    Ok(())
}

fn executor(cfg: &RunConfig) -> AppResult<RayonExecutor> {
    Ok(RayonExecutor::new(cfg.threads)?)
}

fn cmd_train(common: &Common, resume: Option<&Path>, overrides: &[String]) -> AppResult<()> {
    let (cfg, start) = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            let mut ov = overrides.to_vec();
            if let Some(path) = &common.config {
                return Err(AppError::Usage(format!(
                    "--config {} cannot be combined with --resume; the checkpoint carries its configuration",
                    path.display()
                )));
            }
            ov = with_seed(ov, common);
            (override_run_config(&ck.config, &ov)?, Start::Resume(ck))
        }
        None => (load(common, overrides)?, Start::Fresh),
    };
    let out = out_dir(common, &cfg, "utrack-train");
    prepare_out(&out, &cfg)?;
    let exec = executor(&cfg)?;
    let metrics = OpenOptions::new().create(true).append(true).open(out.join("metrics.jsonl"))?;
    let mut sink = JsonLines(vec![BufWriter::new(metrics)]);
    let ck_path = out.join("checkpoint");
    let opts = TrainOptions { stage: None, checkpoint: &ck_path, max_updates: None };
    let ck = train(&cfg, start, &opts, &exec, &mut sink)?;
    println!(
        "{}",
        serde_json::json!({
            "checkpoint": ck_path,
            "updates": ck.updates,
            "timesteps": ck.timesteps,
            "sha256": ck.content_hash()?,
        })
    );
    Ok(())
}

fn cmd_curriculum(common: &Common, args: &[String]) -> AppResult<()> {
    let (plan_args, overrides): (Vec<String>, Vec<String>) = args.iter().cloned().partition(|a| !a.contains('='));
    if plan_args.len() > 1 {
        return Err(AppError::Usage(format!("expected one plan, got {}", plan_args.join(" "))));
    }
    let cfg = load(common, &overrides)?;
    let plan_name = plan_args.first().cloned().or_else(|| cfg.plan.clone()).unwrap_or_else(|| "desk".into());
    let plan = resolve_plan(&plan_name)?;
    let out = out_dir(common, &cfg, "utrack-curriculum");
    prepare_out(&out, &cfg)?;
    let exec = executor(&cfg)?;
    let report = run_curriculum(&cfg, &plan, &out, &exec, &mut |line| eprintln!("{line}"))?;
    println!("{}", serde_json::to_string(&report).expect("report serializes"));
    if report.all_completed() {
        Ok(())
    } else {
        Err(AppError::Core(utrack_core::Error::Contract("some stages did not complete; see report.json".into())))
    }
}

/// One evaluation record.
#[derive(Debug, Clone, Serialize)]
pub struct EvalRecord {
    pub checkpoint: PathBuf,
    pub sweep: Option<SweepPoint>,
    pub episodes: usize,
    pub metrics: EvalMetrics,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub key: String,
    pub value: String,
}

fn parse_sweep(arg: &str) -> AppResult<(String, Vec<String>)> {
    let (key, values) = arg
        .split_once('=')
        .ok_or_else(|| AppError::Usage(format!("sweep `{arg}` is not key=v1,v2,...")))?;
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(AppError::Usage(format!("sweep `{arg}` has no values")));
    }
    Ok((key.trim().to_string(), values))
}

fn cmd_evaluate(
    common: &Common,
    checkpoint: &Path,
    episodes: usize,
    sweep: Option<&str>,
    trajectories: Option<&Path>,
    overrides: &[String],
) -> AppResult<()> {
    if episodes == 0 {
        return Err(AppError::Usage("--episodes must be >= 1".into()));
    }
    let ck = Checkpoint::load(checkpoint)?;
    let overrides = with_seed(overrides.to_vec(), common);
    let base = match &common.config {
        Some(_) => load(common, &[])?,
        None => ck.config.clone(),
    };
    let points: Vec<Option<SweepPoint>> = match sweep {
        None => vec![None],
        Some(s) => {
            let (key, values) = parse_sweep(s)?;
            values.into_iter().map(|value| Some(SweepPoint { key: key.clone(), value })).collect()
        }
    };
    let mut records = Vec::new();
    for point in &points {
        let mut ov = overrides.clone();
        if let Some(p) = point {
            ov.push(format!("{}={}", p.key, p.value));
        }
        let cfg = override_run_config(&base, &ov)?;
        ck.check_nets(&cfg.train.actor_net(), None)?;
        let exec = executor(&cfg)?;
        let seed = derive_seed(cfg.train.seed, STREAM_EVAL, 0);
        let mut policy = GreedyActor::new(&ck.learner.actor, episodes.min(cfg.train.n_envs.max(1)), cfg.env.n_agents);
        let report = evaluate(&mut policy, &cfg.env, episodes, cfg.train.n_envs, seed, &exec)?;
        records.push(EvalRecord { checkpoint: checkpoint.to_path_buf(), sweep: point.clone(), episodes: report.episodes, metrics: report.metrics });
        if let Some(dir) = trajectories {
            let sub = match point {
                Some(p) => dir.join(format!("{}={}", p.key, p.value)),
                None => dir.to_path_buf(),
            };
            write_episodes(&sub, &cfg, episodes, seed, &RecordPolicy::Greedy(&ck.learner.actor))?;
        }
    }
    let mut sink: Option<BufWriter<File>> = match &common.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| AppError::file(dir, e.to_string()))?;
            Some(BufWriter::new(File::create(dir.join("eval.jsonl"))?))
        }
        None => None,
    };
    for r in &records {
        let line = serde_json::to_string(r).expect("record serializes");
        println!("{line}");
        if let Some(w) = sink.as_mut() {
            writeln!(w, "{line}")?;
        }
    }
    if let Some(mut w) = sink {
        w.flush()?;
    }
    Ok(())
}

fn write_episodes(dir: &Path, cfg: &RunConfig, episodes: usize, seed: u64, policy: &RecordPolicy<'_>) -> AppResult<()> {
    fs::create_dir_all(dir).map_err(|e| AppError::file(dir, e.to_string()))?;
    for k in 0..episodes {
        let rows = record_episode(&cfg.env, derive_seed(seed, STREAM_TRAJECTORY, k as u64), policy)?;
        let path = dir.join(format!("episode_{k:04}.csv"));
        write_trajectory_csv(&rows, BufWriter::new(File::create(&path).map_err(|e| AppError::file(&path, e.to_string()))?))?;
    }
    Ok(())
}

fn cmd_benchmark(
    common: &Common,
    envs: &[usize],
    teams: &[String],
    steps: usize,
    warmup: usize,
    policy: BenchPolicy,
    overrides: &[String],
) -> AppResult<()> {
    let cfg = load(common, overrides)?;
    if envs.contains(&0) {
        return Err(AppError::Usage("environment counts must be >= 1".into()));
    }
    let exec = executor(&cfg)?;
    let mut configs = team_configs(&cfg.env);
    if !teams.is_empty() {
        for t in teams {
            if !configs.iter().any(|(n, _)| n == t) {
                return Err(AppError::Usage(format!("unknown team `{t}` (expected 1A1T..5A5T)")));
            }
        }
        configs.retain(|(n, _)| teams.contains(n));
    }
    let mut counts = envs.to_vec();
    counts.sort_unstable();
    counts.dedup();
    let mut records: Vec<BenchRecord> = Vec::new();
    for (name, env) in &configs {
        for &n in &counts {
            let r = benchmark_sps(name, env, n, steps, warmup, policy, cfg.train.seed, &exec, exec.threads())?;
            eprintln!("{:>5} {:>6} envs {:>12.0} sps", r.config, r.n_envs, r.sps);
            records.push(r);
        }
    }
    let lines: Vec<String> = records.iter().map(|r| serde_json::to_string(r).expect("record serializes")).collect();
    for l in &lines {
        println!("{l}");
    }
    if let Some(dir) = &common.out {
        fs::create_dir_all(dir).map_err(|e| AppError::file(dir, e.to_string()))?;
        fs::write(dir.join("benchmark.jsonl"), lines.join("\n") + "\n")?;
    }
    Ok(())
}

fn cmd_rollout(common: &Common, checkpoint: Option<&Path>, episodes: usize, overrides: &[String]) -> AppResult<()> {
    let ck = checkpoint.map(Checkpoint::load).transpose()?;
    let overrides = with_seed(overrides.to_vec(), common);
    let cfg = match (&ck, &common.config) {
        (Some(ck), None) => override_run_config(&ck.config, &overrides)?,
        _ => load_run_config(common.config.as_deref(), &overrides)?,
    };
    let policy = match &ck {
        Some(ck) => {
            ck.check_nets(&cfg.train.actor_net(), None)?;
            RecordPolicy::Greedy(&ck.learner.actor)
        }
        None => RecordPolicy::HoldCourse,
    };
    let out = out_dir(common, &cfg, "utrack-rollout");
    prepare_out(&out, &cfg)?;
    write_episodes(&out, &cfg, episodes, derive_seed(cfg.train.seed, STREAM_EVAL, 0), &policy)?;
    println!("{}", serde_json::json!({ "episodes": episodes, "dir": out }));
    Ok(())
}

fn cmd_plot(common: &Common, inputs: &[PathBuf]) -> AppResult<()> {
    let single_file = inputs.len() == 1 && common.out.as_ref().is_some_and(|o| o.extension().is_some_and(|e| e == "svg"));
    for input in inputs {
        let rows = read_trajectory_csv(input)?;
        let title = input.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let svg = render_svg(&rows, &title);
        let path = if single_file {
            common.out.clone().expect("checked above")
        } else {
            let dir = common.out.clone().unwrap_or_else(|| input.parent().map(Path::to_path_buf).unwrap_or_default());
            fs::create_dir_all(&dir).map_err(|e| AppError::file(&dir, e.to_string()))?;
            dir.join(input.with_extension("svg").file_name().expect("input has a file name"))
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| AppError::file(parent, e.to_string()))?;
        }
        fs::write(&path, svg).map_err(|e| AppError::file(&path, e.to_string()))?;
        println!("{}", path.display());
    }
    Ok(())
}
