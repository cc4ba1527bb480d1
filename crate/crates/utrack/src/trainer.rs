//! The training loop: rollout, update, metrics and checkpoints.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use utrack_core::batch::Executor;
use utrack_core::ppo::{collect_rollout, update, Learner, LossWorkspace, RolloutBatch, RolloutState};

use crate::checkpoint::{Checkpoint, TrainerState};
use crate::config::RunConfig;
use crate::error::{AppError, AppResult};

/// One line of the metrics log, written after every update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub stage: Option<String>,
    pub update: u64,
    pub timesteps: u64,
    /// Episodes that finished during this update's rollout.
    pub episodes: usize,
    pub mean_return: Option<f64>,
    pub mean_track_err: Option<f64>,
    pub mean_dist: Option<f64>,
    pub collision_rate: Option<f64>,
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_frac: f64,
    pub actor_grad_norm: f64,
    pub critic_grad_norm: f64,
    pub skipped_steps: u32,
    /// Environment steps per wall second for rollout plus update.
    pub sps: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs.filter(|x| x.is_finite()) {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// Where a training run starts from.
pub enum Start {
    /// Fresh networks from `train.seed`.
    Fresh,
    /// Continue a resumable checkpoint exactly where it stopped.
    Resume(Checkpoint),
    /// Given networks with fresh optimizer, rollout and minibatch state.
    Warm(Learner),
}

/// Metrics consumer; one call per update.
pub trait MetricsSink {
    fn record(&mut self, r: &MetricsRecord) -> AppResult<()>;
}

/// Writes JSON lines to every writer.
pub struct JsonLines<W: Write>(pub Vec<W>);

impl<W: Write> MetricsSink for JsonLines<W> {
    fn record(&mut self, r: &MetricsRecord) -> AppResult<()> {
        let line = serde_json::to_string(r).expect("metrics serialize");
        for w in &mut self.0 {
            writeln!(w, "{line}")?;
            w.flush()?;
        }
        Ok(())
    }
}

impl MetricsSink for Vec<MetricsRecord> {
    fn record(&mut self, r: &MetricsRecord) -> AppResult<()> {
        self.push(r.clone());
        Ok(())
    }
}

pub struct TrainOptions<'a> {
    pub stage: Option<&'a str>,
    /// Checkpoint directory, rewritten every `run.checkpoint_every` updates
    /// and at the end.
    pub checkpoint: &'a Path,
    /// Stop after this many updates in this call, leaving a resumable
    /// checkpoint.
    pub max_updates: Option<u64>,
}

/// Alternates rollout collection and updates until `train.total_timesteps`.
/// On failure the last completed update is written to
/// `<checkpoint>_abort` before the error is returned.
pub fn train<E: Executor>(
    run: &RunConfig,
    start: Start,
    opts: &TrainOptions<'_>,
    exec: &E,
    sink: &mut dyn MetricsSink,
) -> AppResult<Checkpoint> {
    run.validate()?;
    let (env, tc) = (&run.env, &run.train);
    let (mut learner, mut rollout, mut updates, mut timesteps) = match start {
        Start::Fresh => {
            let l = Learner::new(tc)?;
            let r = RolloutState::new(env, tc.n_envs, tc.d_model, tc.seed, exec)?;
            (l, r, 0, 0)
        }
        Start::Warm(l) => {
            let l = Learner::from_params(l.actor, l.critic, tc);
            let r = RolloutState::new(env, tc.n_envs, tc.d_model, tc.seed, exec)?;
            (l, r, 0, 0)
        }
        Start::Resume(ck) => {
            let t = ck.trainer.ok_or_else(|| AppError::Compat("checkpoint is not resumable".into()))?;
            let (b, r) = (&t.rollout.batch, &t.rollout);
            if b.n_envs != tc.n_envs || b.n_agents != env.n_agents || b.n_targets != env.n_targets || r.hidden.len() != tc.n_envs * env.n_agents * tc.d_model {
                return Err(AppError::Compat(format!(
                    "checkpoint rollout has {} envs, {} agents, {} targets; configuration has {}, {}, {}",
                    b.n_envs, b.n_agents, b.n_targets, tc.n_envs, env.n_agents, env.n_targets
                )));
            }
            let mut l = ck.learner;
            l.rng = t.learner_rng;
            (l, t.rollout, ck.updates, ck.timesteps)
        }
    };
    let ck_of = |learner: &Learner, rollout: &RolloutState, updates: u64, timesteps: u64| Checkpoint {
        stage: opts.stage.map(str::to_string),
        updates,
        timesteps,
        seed: tc.seed,
        learner: learner.clone(),
        trainer: Some(TrainerState { rollout: rollout.clone(), learner_rng: learner.rng.clone() }),
        config: run.clone(),
    };
    let nets = (tc.actor_net(), tc.critic_net());
    if learner.actor.cfg != nets.0 || learner.critic.cfg != nets.1 {
        return Err(AppError::Compat(format!(
            "network shapes {:?} / {:?} do not match the configured {:?} / {:?}",
            learner.actor.cfg, learner.critic.cfg, nets.0, nets.1
        )));
    }

    let spu = tc.steps_per_update();
    let total_updates = tc.total_timesteps.div_ceil(spu);
    let mut batch = RolloutBatch::new(tc.rollout_len, tc.n_envs, env.n_agents, env.n_entities(), tc.d_model);
    let mut ws = LossWorkspace::new(&learner.actor, &learner.critic);
    let mut done_here = 0u64;
    while updates < total_updates && opts.max_updates.is_none_or(|m| done_here < m) {
        let good = (learner.clone(), rollout.clone());
        let t0 = Instant::now();
        let step = collect_rollout(&mut rollout, &learner.actor, &learner.critic, env, exec, &mut batch)
            .and_then(|_| update(&mut learner, &batch, tc, &mut ws));
        let stats = match step {
            Ok(s) => s,
            Err(e) => {
                let abort = abort_path(opts.checkpoint);
                ck_of(&good.0, &good.1, updates, timesteps).save(&abort)?;
                return Err(AppError::Core(e));
            }
        };
        updates += 1;
        timesteps += spu;
        done_here += 1;
        let secs = t0.elapsed().as_secs_f64();
        let eps = &batch.episodes;
        let rec = MetricsRecord {
            stage: opts.stage.map(str::to_string),
            update: updates,
            timesteps,
            episodes: eps.len(),
            mean_return: mean(eps.iter().map(|e| e.ret)),
            mean_track_err: mean(eps.iter().map(|e| e.mean_track_err)),
            mean_dist: mean(eps.iter().map(|e| e.mean_dist)),
            collision_rate: mean(eps.iter().map(|e| e.collided as u8 as f64)),
            loss: stats.loss.loss,
            policy_loss: stats.loss.policy_loss,
            value_loss: stats.loss.value_loss,
            entropy: stats.loss.entropy,
            approx_kl: stats.loss.approx_kl,
            clip_frac: stats.loss.clip_frac,
            actor_grad_norm: stats.actor_grad_norm,
            critic_grad_norm: stats.critic_grad_norm,
            skipped_steps: stats.skipped,
            sps: spu as f64 / secs.max(1e-12),
        };
        sink.record(&rec)?;
        if run.checkpoint_every > 0 && updates % run.checkpoint_every == 0 && updates < total_updates {
            ck_of(&learner, &rollout, updates, timesteps).save(opts.checkpoint)?;
        }
    }
    let ck = ck_of(&learner, &rollout, updates, timesteps);
    ck.save(opts.checkpoint)?;
    Ok(ck)
}

pub fn abort_path(checkpoint: &Path) -> std::path::PathBuf {
    let mut name = checkpoint.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push("_abort");
    checkpoint.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use utrack_core::batch::Sequential;
    use utrack_core::ppo::TrainConfig;

    fn tiny() -> RunConfig {
        let mut c = RunConfig::default();
        c.train = TrainConfig {
            d_model: 8,
            heads: 2,
            blocks: 1,
            n_envs: 2,
            rollout_len: 8,
            epochs: 2,
            minibatches: 2,
            total_timesteps: 80,
            seed: 5,
            ..Default::default()
        };
        c.env.horizon = 12;
        c.env.pf.n_particles = 32;
        c.checkpoint_every = 2;
        c
    }

    #[test]
    fn one_record_per_update_and_final_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let run = tiny();
        let mut recs: Vec<MetricsRecord> = Vec::new();
        let opts = TrainOptions { stage: Some("s1"), checkpoint: &dir.path().join("ck"), max_updates: None };
        let ck = train(&run, Start::Fresh, &opts, &Sequential, &mut recs).unwrap();
        assert_eq!(recs.len(), 5);
        assert_eq!(ck.updates, 5);
        assert_eq!(ck.timesteps, 80);
        assert!(recs.iter().all(|r| r.stage.as_deref() == Some("s1")));
        assert!(recs.iter().any(|r| r.episodes > 0));
        let loaded = Checkpoint::load(opts.checkpoint).unwrap();
        assert_eq!(loaded.content_hash().unwrap(), ck.content_hash().unwrap());
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let run = tiny();
        let full_opts = TrainOptions { stage: None, checkpoint: &dir.path().join("full"), max_updates: None };
        let mut full_recs: Vec<MetricsRecord> = Vec::new();
        let full = train(&run, Start::Fresh, &full_opts, &Sequential, &mut full_recs).unwrap();

        let part = dir.path().join("part");
        let mut recs: Vec<MetricsRecord> = Vec::new();
        let opts = TrainOptions { stage: None, checkpoint: &part, max_updates: Some(3) };
        train(&run, Start::Fresh, &opts, &Sequential, &mut recs).unwrap();
        let ck = Checkpoint::load(&part).unwrap();
        assert_eq!(ck.updates, 3);
        let opts = TrainOptions { stage: None, checkpoint: &part, max_updates: None };
        let resumed = train(&run, Start::Resume(ck), &opts, &Sequential, &mut recs).unwrap();
        assert_eq!(resumed.learner, full.learner);
        assert_eq!(resumed.content_hash().unwrap(), full.content_hash().unwrap());
        let strip = |r: &MetricsRecord| MetricsRecord { sps: 0.0, ..r.clone() };
        assert_eq!(recs.iter().map(strip).collect::<Vec<_>>(), full_recs.iter().map(strip).collect::<Vec<_>>());
    }

    #[test]
    fn resume_rejects_other_team_size() {
        let dir = tempfile::tempdir().unwrap();
        let run = tiny();
        let p = dir.path().join("ck");
        let opts = TrainOptions { stage: None, checkpoint: &p, max_updates: Some(1) };
        train(&run, Start::Fresh, &opts, &Sequential, &mut Vec::new()).unwrap();
        let mut other = run.clone();
        other.env.n_agents = 2;
        let err = train(&other, Start::Resume(Checkpoint::load(&p).unwrap()), &opts, &Sequential, &mut Vec::new()).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
