//! Runs stage plans: each stage trains from its source stage's final
//! checkpoint and writes its own checkpoint and metrics.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;
use utrack_core::batch::Executor;
use utrack_core::curriculum::{default_plan, Scale, Stage, StagePlan};
use utrack_core::ppo::Learner;
use utrack_core::rng::derive_seed;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{AppError, AppResult};
use crate::trainer::{train, JsonLines, Start, TrainOptions};

/// Seed stream of per-stage seeds.
pub const STREAM_STAGE: u64 = 0x57;

/// Built-in plan by name, or a TOML plan file.
pub fn resolve_plan(name: &str) -> AppResult<StagePlan> {
    let plan = match name {
        "desk" => default_plan(Scale::Desk),
        "paper" => default_plan(Scale::Paper),
        path if Path::new(path).exists() => {
            let text = fs::read_to_string(path).map_err(|e| AppError::file(path, e.to_string()))?;
            parse_plan(&text).map_err(|e| match e {
                AppError::Config(m) => AppError::file(path, m),
                other => other,
            })?
        }
        other => {
            return Err(AppError::Usage(format!("unknown plan `{other}` (expected `desk`, `paper` or a plan file)")));
        }
    };
    Ok(plan)
}

pub fn parse_plan(text: &str) -> AppResult<StagePlan> {
    let de = toml::Deserializer::parse(text).map_err(|e| AppError::Config(format!("invalid TOML: {e}")))?;
    let plan: StagePlan = serde_path_to_error::deserialize(de)
        .map_err(|e| {
        let path = e.path().to_string();
        AppError::Config(format!("field `{path}`: {}", e.into_inner()))
    })?;
    plan.validate().map_err(|e| AppError::Config(e.to_string()))?;
    Ok(plan)
}

pub fn plan_to_toml(plan: &StagePlan) -> String {
    toml::to_string(plan).expect("plan serializes")
}

/// Stage `i`'s merged configuration. Stage seeds keep 63 bits so they
/// stay representable as TOML integers.
pub fn stage_config(run: &RunConfig, stage: &Stage, index: usize) -> RunConfig {
    let mut c = run.clone();
    c.env = stage.env.apply(&run.env);
    c.train = stage.train.apply(&run.train);
    c.train.seed = derive_seed(run.train.seed, STREAM_STAGE, index as u64) >> 1;
    c
}

pub fn stage_dir(out: &Path, stage: &str) -> PathBuf {
    out.join("stages").join(stage)
}

/// Networks a stage starts from: the source's final networks, with a
/// re-initialized critic when the stage asks for one.
pub fn stage_start(stage: &Stage, cfg: &RunConfig, source: Option<&Checkpoint>) -> AppResult<Start> {
    let Some(src) = source else { return Ok(Start::Fresh) };
    src.check_nets(&cfg.train.actor_net(), None)?;
    let mut learner = Learner::from_params(src.learner.actor.clone(), src.learner.critic.clone(), &cfg.train);
    if stage.reset_critic {
        learner.reset_critic(&cfg.train)?;
    } else {
        src.check_nets(&cfg.train.actor_net(), Some(&cfg.train.critic_net()))?;
    }
    Ok(Start::Warm(learner))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum StageOutcome {
    Completed { checkpoint: PathBuf, updates: u64, timesteps: u64, reused: bool },
    Failed { error: String },
    Skipped { because: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CurriculumReport {
    pub stages: BTreeMap<String, StageOutcome>,
}

impl CurriculumReport {
    pub fn all_completed(&self) -> bool {
        self.stages.values().all(|s| matches!(s, StageOutcome::Completed { .. }))
    }
}

/// Runs every stage in order. A stage whose checkpoint already holds its
/// full budget is reused. A failed stage stops every stage that descends
/// from it; other branches continue.
pub fn run_curriculum<E: Executor>(
    run: &RunConfig,
    plan: &StagePlan,
    out: &Path,
    exec: &E,
    progress: &mut dyn FnMut(&str),
) -> AppResult<CurriculumReport> {
    plan.validate().map_err(|e| AppError::Config(e.to_string()))?;
    fs::create_dir_all(out).map_err(|e| AppError::file(out, e.to_string()))?;
    fs::write(out.join("plan.toml"), plan_to_toml(plan))?;
    let consolidated_path = out.join("metrics.jsonl");
    let mut report = CurriculumReport::default();
    let mut finals: BTreeMap<usize, Checkpoint> = BTreeMap::new();
    for (i, stage) in plan.stages.iter().enumerate() {
        let source = plan.source_of(i);
        if let Some(s) = source {
            if !finals.contains_key(&s) {
                let because = format!("source stage `{}` did not complete", plan.stages[s].name);
                progress(&format!("stage {} skipped: {because}", stage.name));
                report.stages.insert(stage.name.clone(), StageOutcome::Skipped { because });
                continue;
            }
        }
        let cfg = stage_config(run, stage, i);
        let dir = stage_dir(out, &stage.name);
        let ck_path = dir.join("checkpoint");
        let result = (|| -> AppResult<(Checkpoint, bool)> {
            cfg.validate()?;
            if let Ok(existing) = Checkpoint::load(&ck_path) {
                if existing.timesteps >= cfg.train.total_timesteps && existing.config == cfg {
                    return Ok((existing, true));
                }
            }
            fs::create_dir_all(&dir).map_err(|e| AppError::file(&dir, e.to_string()))?;
            fs::write(dir.join("config.toml"), cfg.to_toml())?;
            let start = stage_start(stage, &cfg, source.map(|s| &finals[&s]))?;
            let stage_metrics = BufWriter::new(File::create(dir.join("metrics.jsonl"))?);
            let all = BufWriter::new(OpenOptions::new().create(true).append(true).open(&consolidated_path)?);
            let mut sink = JsonLines(vec![stage_metrics, all]);
            let opts = TrainOptions { stage: Some(&stage.name), checkpoint: &ck_path, max_updates: None };
            Ok((train(&cfg, start, &opts, exec, &mut sink)?, false))
        })();
        match result {
            Ok((ck, reused)) => {
                progress(&format!(
                    "stage {} {}: {} updates, {} steps",
                    stage.name,
                    if reused { "reused" } else { "done" },
                    ck.updates,
                    ck.timesteps
                ));
                report.stages.insert(
                    stage.name.clone(),
                    StageOutcome::Completed { checkpoint: ck_path, updates: ck.updates, timesteps: ck.timesteps, reused },
                );
                finals.insert(i, ck);
            }
            Err(e) => {
                progress(&format!("stage {} failed: {e}", stage.name));
                report.stages.insert(stage.name.clone(), StageOutcome::Failed { error: e.to_string() });
            }
        }
    }
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report).expect("report serializes"))?;
    Ok(report)
}
