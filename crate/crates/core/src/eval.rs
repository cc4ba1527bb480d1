//! Policy evaluation: agent-target distance,
//! tracking error, collision probability and target-loss probability.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::batch::{vreset, vstep, BatchOutput, Executor};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::nets::{actor_forward, greedy_action, Cache, Params};
use crate::ppo::{EpisodeAccumulator, EpisodeSummary};

/// Chooses actions for every agent of a batched environment.
pub trait Policy {
    /// Called when environment `env` starts an episode.
    fn reset(&mut self, env: usize);
    fn act(&mut self, out: &BatchOutput, env: usize, agent: usize) -> Result<u8>;
}

/// Argmax over the actor's masked distribution.
pub struct GreedyActor<'a> {
    params: &'a Params<f32>,
    hidden: Vec<f32>,
    n_agents: usize,
    cache: Cache<f32>,
}

impl<'a> GreedyActor<'a> {
    pub fn new(params: &'a Params<f32>, n_envs: usize, n_agents: usize) -> Self {
        let d = params.cfg.d_model;
        GreedyActor { params, hidden: vec![0.0; n_envs * n_agents * d], n_agents, cache: Cache::new() }
    }
}

impl Policy for GreedyActor<'_> {
    fn reset(&mut self, env: usize) {
        let d = self.params.cfg.d_model;
        for a in 0..self.n_agents {
            let i = env * self.n_agents + a;
            self.hidden[i * d..(i + 1) * d].copy_from_slice(self.params.hidden0());
        }
    }

    fn act(&mut self, out: &BatchOutput, env: usize, agent: usize) -> Result<u8> {
        let d = self.params.cfg.d_model;
        let i = env * self.n_agents + agent;
        let h = &mut self.hidden[i * d..(i + 1) * d];
        let lp = actor_forward(self.params, out.obs_block(env, agent), out.n_entities(), h, &out.action_mask(env, agent), &mut self.cache)?;
        h.copy_from_slice(self.cache.hidden_out());
        Ok(greedy_action(&lp) as u8)
    }
}

/// Keeps the current rudder.
pub struct HoldCourse;

impl Policy for HoldCourse {
    fn reset(&mut self, _env: usize) {}
    fn act(&mut self, out: &BatchOutput, env: usize, agent: usize) -> Result<u8> {
        Ok(out.rudder[env * out.n_agents + agent])
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Summary metrics of an evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Closest-agent distance to each target, meters, over steps, targets and episodes.
    pub distance_m: MeanStd,
    /// PF estimate error of each tracked target, meters, over the same samples.
    pub tracking_error_m: MeanStd,
    /// Percent of episodes with at least one crash.
    pub collision_pct: f64,
    /// Percent of episodes where some target was lost.
    pub target_loss_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub metrics: EvalMetrics,
    pub per_episode: Vec<EpisodeSummary>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn get(&self) -> MeanStd {
        if self.n == 0 {
            return MeanStd { mean: f64::NAN, std: f64::NAN };
        }
        let std = if self.n > 1 { num_traits::Float::sqrt(self.m2 / self.n as f64) } else { 0.0 };
        MeanStd { mean: self.mean, std }
    }
}

/// Runs exactly `n_episodes` episodes over at most `max_envs` parallel
/// environments. Episode `k` uses environment `k % n_envs`, episode index
/// `k / n_envs` of that environment's seed stream.
pub fn evaluate<P: Policy, E: Executor>(
    policy: &mut P,
    env: &EnvConfig,
    n_episodes: usize,
    max_envs: usize,
    seed: u64,
    exec: &E,
) -> Result<EvalReport> {
    if n_episodes == 0 {
        return Err(Error::Argument("n_episodes must be >= 1".into()));
    }
    let n_envs = n_episodes.min(max_envs.max(1));
    let (mut bs, mut out) = vreset(env, n_envs, seed, exec)?;
    let na = env.n_agents;
    let nt = env.n_targets;
    let mut acc = vec![EpisodeAccumulator::default(); n_envs];
    let mut dist = Welford::default();
    let mut err = Welford::default();
    let mut actions = vec![0u8; n_envs * na];
    let mut per_episode = Vec::with_capacity(n_episodes);
    let rounds = n_episodes.div_ceil(n_envs);
    for round in 0..rounds {
        let live = (n_episodes - round * n_envs).min(n_envs);
        for e in 0..n_envs {
            policy.reset(e);
        }
        loop {
            for e in 0..n_envs {
                for a in 0..na {
                    actions[e * na + a] = policy.act(&out, e, a)?;
                }
            }
            vstep(&mut bs, &mut out, &actions, env, exec, &mut ())?;
            for e in 0..live {
                acc[e].push(&out, e);
                for t in 0..nt {
                    dist.push(out.min_dist[e * nt + t]);
                    let x = out.track_err[e * nt + t];
                    if x.is_finite() {
                        err.push(x);
                    }
                }
            }
            if out.done[0] {
                break;
            }
        }
        for a in acc.iter_mut().take(live) {
            per_episode.push(a.finish());
        }
    }
    let n = per_episode.len() as f64;
    let metrics = EvalMetrics {
        distance_m: dist.get(),
        tracking_error_m: err.get(),
        collision_pct: 100.0 * per_episode.iter().filter(|s| s.collided).count() as f64 / n,
        target_loss_pct: 100.0 * per_episode.iter().filter(|s| s.lost).count() as f64 / n,
    };
    Ok(EvalReport { episodes: per_episode.len(), metrics, per_episode })
}
