//! Thread-pool execution of the batched step and the throughput benchmark.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use utrack_core::batch::{vreset, vstep, EnvSlot, Executor, Phase, PhaseHook};
use utrack_core::env::{EnvConfig, N_ACTIONS};
use utrack_core::rng::{derive_seed, stream_rng};
use utrack_core::{Error, Result};

/// Runs environment slots on a private rayon pool. Outputs do not depend on
/// the thread count because every slot owns its random stream.
pub struct RayonExecutor {
    pool: rayon::ThreadPool,
}

impl RayonExecutor {
    /// `threads == 0` uses one worker per available core.
    pub fn new(threads: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .thread_name(|i| format!("utrack-env-{i}"))
            .build()
            .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
        Ok(RayonExecutor { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for RayonExecutor {
    fn for_each(&self, slots: &mut [EnvSlot<'_>], f: &(dyn Fn(&mut EnvSlot<'_>) -> Result<()> + Sync)) -> Result<()> {
        let first_err = self.pool.install(|| {
            slots
                .par_iter_mut()
                .enumerate()
                .filter_map(|(i, s)| f(s).err().map(|e| (i, e)))
                .min_by_key(|(i, _)| *i)
        });
        match first_err {
            Some((_, e)) => Err(e),
            None => Ok(()),
        }
    }
}

pub fn available_cores() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Accumulates wall time per phase.
#[derive(Debug, Default)]
pub struct PhaseTimer {
    started: Option<Instant>,
    pub totals: BTreeMap<Phase, Duration>,
}

impl PhaseHook for PhaseTimer {
    fn begin(&mut self, _phase: Phase) {
        self.started = Some(Instant::now());
    }

    fn end(&mut self, phase: Phase) {
        if let Some(t) = self.started.take() {
            *self.totals.entry(phase).or_default() += t.elapsed();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BenchPolicy {
    /// Uniform over legal actions.
    Random,
    /// Holds the current rudder.
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub config: String,
    pub n_envs: usize,
    pub n_steps: usize,
    pub threads: usize,
    pub policy: BenchPolicy,
    /// Environment steps (`n_steps * n_envs`) per wall second.
    pub sps: f64,
    /// Seconds per phase, including action selection as `policy`.
    pub phases: BTreeMap<String, f64>,
    pub total_s: f64,
}

/// Steps `n_envs` environments `warmup + n_steps` times and times the last
/// `n_steps`.
pub fn benchmark_sps<E: Executor>(
    name: &str,
    cfg: &EnvConfig,
    n_envs: usize,
    n_steps: usize,
    warmup: usize,
    policy: BenchPolicy,
    seed: u64,
    exec: &E,
    threads: usize,
) -> Result<BenchRecord> {
    if n_steps == 0 {
        return Err(Error::Argument("n_steps must be >= 1".into()));
    }
    let (mut bs, mut out) = vreset(cfg, n_envs, seed, exec)?;
    let na = cfg.n_agents;
    let mut actions = vec![0u8; n_envs * na];
    let mut rng = stream_rng(derive_seed(seed, 0xBE, 0));
    let mut timer = PhaseTimer::default();
    let mut policy_time = Duration::ZERO;
    let mut total = Duration::ZERO;
    for step in 0..warmup + n_steps {
        let timed = step >= warmup;
        if step == warmup {
            timer.totals.clear();
        }
        let t0 = Instant::now();
        for e in 0..n_envs {
            for a in 0..na {
                actions[e * na + a] = match policy {
                    BenchPolicy::Scripted => out.rudder[e * na + a],
                    BenchPolicy::Random => {
                        let mask = out.action_mask(e, a);
                        let legal: Vec<u8> = (0..N_ACTIONS as u8).filter(|&k| mask[k as usize]).collect();
                        legal[rng.random_range(0..legal.len())]
                    }
                };
            }
        }
        let t1 = Instant::now();
        vstep(&mut bs, &mut out, &actions, cfg, exec, &mut timer)?;
        if timed {
            policy_time += t1 - t0;
            total += t0.elapsed();
        }
    }
    let mut phases: BTreeMap<String, f64> =
        timer.totals.iter().map(|(p, d)| (p.name().to_string(), d.as_secs_f64())).collect();
    phases.insert("policy".into(), policy_time.as_secs_f64());
    let total_s = total.as_secs_f64();
    Ok(BenchRecord {
        config: name.to_string(),
        n_envs,
        n_steps,
        threads,
        policy,
        sps: (n_steps * n_envs) as f64 / total_s.max(1e-12),
        phases,
        total_s,
    })
}

/// Team sizes of the scaling table: `1A1T` through `5A5T`.
pub fn team_configs(base: &EnvConfig) -> Vec<(String, EnvConfig)> {
    (1..=5)
        .map(|n| (format!("{n}A{n}T"), EnvConfig { n_agents: n, n_targets: n, ..base.clone() }))
        .collect()
}
