//! MAPPO: rollout collection over the batched environment, GAE, the clipped
//! surrogate, Adam and the minibatched multi-epoch update.
//!
//! One actor parameter set is shared by all agents and one critic sees the
//! global state. The reward is shared, so there is one advantage per
//! environment step, applied to every agent's actor term. Minibatches are
//! groups of whole environment sequences and the actor is differentiated
//! through the hidden token over the full rollout segment.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{vreset, vstep, BatchOutput, BatchState, Executor};
use crate::env::{EnvConfig, N_ACTIONS, TOKEN_FEATURES};
use crate::error::{Error, Result};
use crate::nets::{
    actor_forward, backward, critic_forward, entropy, init_params, policy_logit_grad, sample_action, Cache, NetConfig,
    Params, Real, Scratch,
};
use crate::rng::{derive_seed, stream_rng, StreamRng};

/// Seed stream tags, so every consumer of the master seed draws from its own stream.
pub const STREAM_ACTOR_INIT: u64 = 0xA;
pub const STREAM_CRITIC_INIT: u64 = 0xC;
pub const STREAM_ENVS: u64 = 0xE;
pub const STREAM_ACTIONS: u64 = 0xAC;
pub const STREAM_MINIBATCH: u64 = 0x3B;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Discount factor.
    pub gamma: f64,
    /// GAE parameter.
    pub lam: f64,
    /// Surrogate clip range.
    pub clip: f64,
    pub lr: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub rollout_len: usize,
    pub n_envs: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub total_timesteps: u64,
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.99,
            lam: 0.95,
            clip: 0.2,
            lr: 3e-4,
            epochs: 4,
            minibatches: 4,
            rollout_len: 128,
            n_envs: 16,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            total_timesteps: 2_000_000,
            d_model: 64,
            heads: 4,
            blocks: 2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config("gamma", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.lam) {
            return Err(Error::config("lam", "must lie in [0, 1]"));
        }
        if !(self.clip > 0.0) {
            return Err(Error::config("clip", "must be > 0"));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::config("lr", "must be finite and >= 0"));
        }
        for (name, v) in [
            ("epochs", self.epochs),
            ("minibatches", self.minibatches),
            ("rollout_len", self.rollout_len),
            ("n_envs", self.n_envs),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be >= 1"));
            }
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(Error::config("max_grad_norm", "must be > 0"));
        }
        if !(self.entropy_coef >= 0.0) || !(self.value_coef >= 0.0) {
            return Err(Error::config("entropy_coef", "coefficients must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::config("adam_beta1", "betas must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("adam_eps", "must be > 0"));
        }
        self.actor_net().validate().map_err(|_| Error::config("heads", "d_model must be divisible by heads"))?;
        Ok(())
    }

    pub fn actor_net(&self) -> NetConfig {
        NetConfig::actor(self.d_model, self.heads, self.blocks)
    }

    pub fn critic_net(&self) -> NetConfig {
        NetConfig::critic(self.d_model, self.heads, self.blocks)
    }

    pub fn steps_per_update(&self) -> u64 {
        (self.rollout_len * self.n_envs) as u64
    }
}

/// `A_t = δ_t + γλ(1−done_t)A_{t+1}` with `δ_t = r_t + γ(1−done_t)V_{t+1} − V_t`,
/// over time-major `T × n_envs` arrays. Returns `(advantages, returns)`.
pub fn compute_gae<F: Real>(
    rewards: &[F],
    values: &[F],
    dones: &[bool],
    bootstrap: &[F],
    gamma: F,
    lam: F,
) -> (Vec<F>, Vec<F>) {
    let n = bootstrap.len();
    assert!(n > 0 && rewards.len() % n == 0, "GAE arrays must be T x n_envs");
    assert!(values.len() == rewards.len() && dones.len() == rewards.len(), "GAE arrays must agree in shape");
    let t_len = rewards.len() / n;
    let mut adv = vec![F::zero(); rewards.len()];
    for e in 0..n {
        let mut next_v = bootstrap[e];
        let mut next_a = F::zero();
        for t in (0..t_len).rev() {
            let i = t * n + e;
            let live = if dones[i] { F::zero() } else { F::one() };
            let delta = rewards[i] + gamma * next_v * live - values[i];
            next_a = delta + gamma * lam * live * next_a;
            adv[i] = next_a;
            next_v = values[i];
        }
    }
    let ret = adv.iter().zip(values).map(|(a, v)| *a + *v).collect();
    (adv, ret)
}

/// `min(ρA, clip(ρ, 1−ε, 1+ε)A)` and its derivative in `ρ`; the flag is set
/// when the clipped branch is active.
pub fn clipped_surrogate(ratio: f64, adv: f64, eps: f64) -> (f64, f64, bool) {
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
    if clipped < unclipped {
        (clipped, 0.0, true)
    } else {
        (unclipped, adv, false)
    }
}

/// Global L2 norm of a gradient vector.
pub fn grad_norm(g: &[f32]) -> f64 {
    g.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

/// Scales `g` so its norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm(g: &mut [f32], max_norm: f64) -> f64 {
    let n = grad_norm(g);
    if n > max_norm {
        let s = (max_norm / (n + 1e-6)) as f32;
        g.iter_mut().for_each(|x| *x *= s);
    }
    n
}

/// Adam with bias-corrected moments:
/// `m̂ = m/(1−β₁ᵗ)`, `v̂ = v/(1−β₂ᵗ)`, `θ ← θ − lr·m̂/(√v̂ + ε)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl Adam {
    pub fn new(n: usize, cfg: &TrainConfig) -> Self {
        Adam { lr: cfg.lr, beta1: cfg.adam_beta1, beta2: cfg.adam_beta2, eps: cfg.adam_eps, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32]) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - powi(self.beta1, t);
        let c2 = 1.0 - powi(self.beta2, t);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let step = (self.lr / c1) as f32;
        let inv_c2 = (1.0 / c2) as f32;
        let eps = self.eps as f32;
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            params[i] -= step * self.m[i] / (num_traits::Float::sqrt(self.v[i] * inv_c2) + eps);
        }
    }
}

fn powi(x: f64, n: i32) -> f64 {
    num_traits::Float::powi(x, n)
}

/// Running state of rollout collection. Serializable so training can resume
/// bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutState {
    pub batch: BatchState,
    pub out: BatchOutput,
    /// `n_envs × n_agents × d` hidden tokens.
    pub hidden: Vec<f32>,
    /// Environment started a new episode since the last actor pass.
    pub fresh: Vec<bool>,
    pub rng: StreamRng,
    pub acc: Vec<EpisodeAccumulator>,
}

impl RolloutState {
    pub fn new<E: Executor>(env: &EnvConfig, n_envs: usize, d_model: usize, seed: u64, exec: &E) -> Result<Self> {
        let (batch, out) = vreset(env, n_envs, derive_seed(seed, STREAM_ENVS, 0), exec)?;
        Ok(RolloutState {
            hidden: vec![0.0; n_envs * env.n_agents * d_model],
            fresh: vec![true; n_envs],
            rng: stream_rng(derive_seed(seed, STREAM_ACTIONS, 0)),
            acc: vec![EpisodeAccumulator::default(); n_envs],
            batch,
            out,
        })
    }
}

/// Per-episode running sums for metrics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeAccumulator {
    pub ret: f64,
    pub steps: u32,
    pub err_sum: f64,
    pub err_n: u64,
    pub dist_sum: f64,
    pub dist_n: u64,
    pub collided: bool,
    pub lost: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub ret: f64,
    pub steps: u32,
    /// Mean over steps and targets with an estimate; NaN if none.
    pub mean_track_err: f64,
    pub mean_dist: f64,
    pub collided: bool,
    pub lost: bool,
}

impl EpisodeAccumulator {
    /// Adds one step of environment `e`'s output.
    pub fn push(&mut self, out: &BatchOutput, e: usize) {
        let nt = out.n_targets;
        self.ret += out.reward[e];
        self.steps += 1;
        for t in 0..nt {
            let err = out.track_err[e * nt + t];
            if err.is_finite() {
                self.err_sum += err;
                self.err_n += 1;
            }
            self.dist_sum += out.min_dist[e * nt + t];
            self.dist_n += 1;
            self.lost |= out.lost[e * nt + t];
        }
        self.collided |= out.collision[e];
    }

    pub fn finish(&mut self) -> EpisodeSummary {
        let s = EpisodeSummary {
            ret: self.ret,
            steps: self.steps,
            mean_track_err: if self.err_n > 0 { self.err_sum / self.err_n as f64 } else { f64::NAN },
            mean_dist: if self.dist_n > 0 { self.dist_sum / self.dist_n as f64 } else { f64::NAN },
            collided: self.collided,
            lost: self.lost,
        };
        *self = EpisodeAccumulator::default();
        s
    }
}

/// Time-major rollout storage, `T × n_envs (× n_agents)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutBatch {
    pub t_len: usize,
    pub n_envs: usize,
    pub n_agents: usize,
    pub n_entities: usize,
    pub d_model: usize,
    pub obs: Vec<f32>,
    pub masks: Vec<bool>,
    pub actions: Vec<u8>,
    pub logp: Vec<f32>,
    pub global: Vec<f32>,
    pub values: Vec<f32>,
    pub rewards: Vec<f32>,
    pub dones: Vec<bool>,
    /// Episode began at this step; the actor then starts from the learned initial hidden token.
    pub starts: Vec<bool>,
    /// Hidden tokens entering step 0, `n_envs × n_agents × d`.
    pub hidden_init: Vec<f32>,
    pub bootstrap: Vec<f32>,
    pub episodes: Vec<EpisodeSummary>,
}

impl RolloutBatch {
    pub fn new(t_len: usize, n_envs: usize, n_agents: usize, n_entities: usize, d_model: usize) -> Self {
        let tea = t_len * n_envs * n_agents;
        let te = t_len * n_envs;
        let tok = n_entities * TOKEN_FEATURES;
        RolloutBatch {
            t_len,
            n_envs,
            n_agents,
            n_entities,
            d_model,
            obs: vec![0.0; tea * tok],
            masks: vec![false; tea * N_ACTIONS],
            actions: vec![0; tea],
            logp: vec![0.0; tea],
            global: vec![0.0; te * tok],
            values: vec![0.0; te],
            rewards: vec![0.0; te],
            dones: vec![false; te],
            starts: vec![false; te],
            hidden_init: vec![0.0; n_envs * n_agents * d_model],
            bootstrap: vec![0.0; n_envs],
            episodes: Vec::new(),
        }
    }

    fn tok(&self) -> usize {
        self.n_entities * TOKEN_FEATURES
    }

    #[inline]
    pub fn sample_index(&self, t: usize, e: usize, a: usize) -> usize {
        (t * self.n_envs + e) * self.n_agents + a
    }

    pub fn obs_at(&self, t: usize, e: usize, a: usize) -> &[f32] {
        let k = self.tok();
        let i = self.sample_index(t, e, a);
        &self.obs[i * k..(i + 1) * k]
    }

    pub fn mask_at(&self, t: usize, e: usize, a: usize) -> &[bool] {
        let i = self.sample_index(t, e, a);
        &self.masks[i * N_ACTIONS..(i + 1) * N_ACTIONS]
    }

    pub fn global_at(&self, t: usize, e: usize) -> &[f32] {
        let k = self.tok();
        let i = t * self.n_envs + e;
        &self.global[i * k..(i + 1) * k]
    }

    pub fn hidden_at(&self, e: usize, a: usize) -> &[f32] {
        let d = self.d_model;
        let i = e * self.n_agents + a;
        &self.hidden_init[i * d..(i + 1) * d]
    }
}

/// Steps the batched environment `batch.t_len` times with actions sampled
/// from the actor, recording everything the update needs.
pub fn collect_rollout<E: Executor>(
    state: &mut RolloutState,
    actor: &Params<f32>,
    critic: &Params<f32>,
    env: &EnvConfig,
    exec: &E,
    batch: &mut RolloutBatch,
) -> Result<()> {
    let (ne, na) = (state.batch.n_envs, state.batch.n_agents);
    let n_ent = state.out.n_entities();
    let d = actor.cfg.d_model;
    if batch.n_envs != ne || batch.n_agents != na || batch.n_entities != n_ent || batch.d_model != d {
        return Err(Error::Contract(format!(
            "rollout buffer shape ({}, {}, {}, {}) does not match environment ({ne}, {na}, {n_ent}, {d})",
            batch.n_envs, batch.n_agents, batch.n_entities, batch.d_model
        )));
    }
    let tok = n_ent * TOKEN_FEATURES;
    let mut cache = Cache::new();
    let mut actions = vec![0u8; ne * na];
    batch.episodes.clear();
    for t in 0..batch.t_len {
        for e in 0..ne {
            if state.fresh[e] {
                for a in 0..na {
                    state.hidden[(e * na + a) * d..(e * na + a + 1) * d].copy_from_slice(actor.hidden0());
                }
            }
            batch.starts[t * ne + e] = state.fresh[e];
            state.fresh[e] = false;
        }
        if t == 0 {
            batch.hidden_init.copy_from_slice(&state.hidden);
        }
        for e in 0..ne {
            let gi = t * ne + e;
            batch.global[gi * tok..(gi + 1) * tok].copy_from_slice(state.out.global_block(e));
            batch.values[gi] = critic_forward(critic, state.out.global_block(e), n_ent, &mut cache)?;
            for a in 0..na {
                let si = batch.sample_index(t, e, a);
                let mask = state.out.action_mask(e, a);
                let obs = state.out.obs_block(e, a);
                let h = &mut state.hidden[(e * na + a) * d..(e * na + a + 1) * d];
                let lp = actor_forward(actor, obs, n_ent, h, &mask, &mut cache)?;
                h.copy_from_slice(cache.hidden_out());
                let act = sample_action(&lp, state.rng.random::<f64>());
                batch.obs[si * tok..(si + 1) * tok].copy_from_slice(obs);
                batch.masks[si * N_ACTIONS..(si + 1) * N_ACTIONS].copy_from_slice(&mask);
                batch.actions[si] = act as u8;
                batch.logp[si] = lp[act];
                actions[e * na + a] = act as u8;
            }
        }
        vstep(&mut state.batch, &mut state.out, &actions, env, exec, &mut ())?;
        for e in 0..ne {
            let gi = t * ne + e;
            batch.rewards[gi] = state.out.reward[e] as f32;
            batch.dones[gi] = state.out.done[e];
            state.acc[e].push(&state.out, e);
            if state.out.done[e] {
                batch.episodes.push(state.acc[e].finish());
                state.fresh[e] = true;
            }
        }
    }
    for e in 0..ne {
        batch.bootstrap[e] = critic_forward(critic, state.out.global_block(e), n_ent, &mut cache)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_frac: f64,
}

/// Gradient buffers and work memory for [`ppo_loss`].
pub struct LossWorkspace<F> {
    pub actor_grad: Vec<F>,
    pub critic_grad: Vec<F>,
    caches: Vec<Cache<F>>,
    critic_cache: Cache<F>,
    scratch: Scratch<F>,
    dlogits: Vec<[F; N_ACTIONS]>,
    tokens: Vec<F>,
}

impl<F: Real> LossWorkspace<F> {
    pub fn new(actor: &Params<F>, critic: &Params<F>) -> Self {
        LossWorkspace {
            actor_grad: actor.zeros_like(),
            critic_grad: critic.zeros_like(),
            caches: Vec::new(),
            critic_cache: Cache::new(),
            scratch: Scratch::new(),
            dlogits: Vec::new(),
            tokens: Vec::new(),
        }
    }
}

fn load_tokens<F: Real>(src: &[f32], dst: &mut Vec<F>) {
    dst.clear();
    dst.extend(src.iter().map(|&x| F::from(x).unwrap()));
}

/// Loss and gradients over the environment sequences `envs`:
/// `−mean(min(ρÂ, clip(ρ)Â)) + c_v·mean((V − R̂)²) − c_e·mean(H)`, with `Â`
/// normalized over the minibatch. Gradients are written (not accumulated)
/// into the workspace.
pub fn ppo_loss<F: Real>(
    actor: &Params<F>,
    critic: &Params<F>,
    batch: &RolloutBatch,
    advantages: &[f32],
    returns: &[f32],
    envs: &[usize],
    cfg: &TrainConfig,
    ws: &mut LossWorkspace<F>,
) -> Result<LossStats> {
    let (t_len, na, n_ent, d) = (batch.t_len, batch.n_agents, batch.n_entities, batch.d_model);
    let ne = batch.n_envs;
    ws.actor_grad.iter_mut().for_each(|g| *g = F::zero());
    ws.critic_grad.iter_mut().for_each(|g| *g = F::zero());
    if envs.is_empty() {
        return Ok(LossStats::default());
    }

    let mut mean = 0.0f64;
    for t in 0..t_len {
        for &e in envs {
            mean += advantages[t * ne + e] as f64;
        }
    }
    let n_te = (t_len * envs.len()) as f64;
    mean /= n_te;
    let mut var = 0.0f64;
    for t in 0..t_len {
        for &e in envs {
            let x = advantages[t * ne + e] as f64 - mean;
            var += x * x;
        }
    }
    let std = (var / n_te).sqrt();
    let norm = |t: usize, e: usize| (advantages[t * ne + e] as f64 - mean) / (std + 1e-8);

    let n_samples = n_te * na as f64;
    let mut st = LossStats::default();
    ws.caches.resize_with(t_len, Cache::new);
    ws.dlogits.resize(t_len, [F::zero(); N_ACTIONS]);
    let mut h = vec![F::zero(); d];
    let mut dh_next = vec![F::zero(); d];
    let mut dh_in = vec![F::zero(); d];
    let h0 = actor.layout.hidden0.ok_or_else(|| Error::Contract("actor has no hidden token".into()))?;
    for &e in envs {
        for a in 0..na {
            for (x, y) in h.iter_mut().zip(batch.hidden_at(e, a)) {
                *x = F::from(*y).unwrap();
            }
            for t in 0..t_len {
                if batch.starts[t * ne + e] {
                    h.copy_from_slice(actor.hidden0());
                }
                let cache = &mut ws.caches[t];
                load_tokens(batch.obs_at(t, e, a), &mut ws.tokens);
                let lp = actor_forward(actor, &ws.tokens, n_ent, &h, batch.mask_at(t, e, a), cache)?;
                h.copy_from_slice(cache.hidden_out());
                let si = batch.sample_index(t, e, a);
                let act = batch.actions[si] as usize;
                let logr = lp[act].to_f64().unwrap() - batch.logp[si] as f64;
                let ratio = num_traits::Float::exp(logr);
                let adv = norm(t, e);
                let (surr, dsurr, clipped) = clipped_surrogate(ratio, adv, cfg.clip);
                let ent = entropy(&lp).to_f64().unwrap();
                st.policy_loss -= surr / n_samples;
                st.entropy += ent / n_samples;
                st.approx_kl += ((ratio - 1.0) - logr) / n_samples;
                if clipped {
                    st.clip_frac += 1.0 / n_samples;
                }
                // d(loss)/d(log π) = −dsurr·ρ / N
                let coef_logp = F::from(-dsurr * ratio / n_samples).unwrap();
                let coef_ent = F::from(-cfg.entropy_coef / n_samples).unwrap();
                ws.dlogits[t] = policy_logit_grad(&lp, act, coef_logp, coef_ent);
            }
            dh_next.iter_mut().for_each(|x| *x = F::zero());
            for t in (0..t_len).rev() {
                backward(actor, &ws.caches[t], &ws.dlogits[t], Some(&dh_next), &mut ws.actor_grad, &mut ws.scratch, Some(&mut dh_in));
                if batch.starts[t * ne + e] {
                    for (g, x) in h0.of_mut(&mut ws.actor_grad).iter_mut().zip(&dh_in) {
                        *g = *g + *x;
                    }
                    dh_next.iter_mut().for_each(|x| *x = F::zero());
                } else {
                    dh_next.copy_from_slice(&dh_in);
                }
            }
        }
    }

    for t in 0..t_len {
        for &e in envs {
            load_tokens(batch.global_at(t, e), &mut ws.tokens);
            let v = critic_forward(critic, &ws.tokens, n_ent, &mut ws.critic_cache)?.to_f64().unwrap();
            let diff = v - returns[t * ne + e] as f64;
            st.value_loss += diff * diff / n_te;
            let dv = F::from(2.0 * cfg.value_coef * diff / n_te).unwrap();
            backward(critic, &ws.critic_cache, &[dv], None, &mut ws.critic_grad, &mut ws.scratch, None);
        }
    }
    st.loss = st.policy_loss + cfg.value_coef * st.value_loss - cfg.entropy_coef * st.entropy;
    if !st.loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "PPO loss is not finite (policy {}, value {}, entropy {})",
            st.policy_loss, st.value_loss, st.entropy
        )));
    }
    Ok(st)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub loss: LossStats,
    pub actor_grad_norm: f64,
    pub critic_grad_norm: f64,
    pub steps: u32,
    pub skipped: u32,
}

/// Learner state: both networks, their optimizers and the minibatch RNG.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    pub actor: Params<f32>,
    pub critic: Params<f32>,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub rng: StreamRng,
}

impl Learner {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let actor = init_params(cfg.actor_net(), derive_seed(cfg.seed, STREAM_ACTOR_INIT, 0))?;
        let critic = init_params(cfg.critic_net(), derive_seed(cfg.seed, STREAM_CRITIC_INIT, 0))?;
        Ok(Self::from_params(actor, critic, cfg))
    }

    pub fn from_params(actor: Params<f32>, critic: Params<f32>, cfg: &TrainConfig) -> Self {
        Learner {
            actor_opt: Adam::new(actor.len(), cfg),
            critic_opt: Adam::new(critic.len(), cfg),
            rng: stream_rng(derive_seed(cfg.seed, STREAM_MINIBATCH, 0)),
            actor,
            critic,
        }
    }

    /// Fresh critic for `seed`, with a fresh optimizer state.
    pub fn reset_critic(&mut self, cfg: &TrainConfig) -> Result<()> {
        self.critic = init_params(cfg.critic_net(), derive_seed(cfg.seed, STREAM_CRITIC_INIT, 0))?;
        self.critic_opt = Adam::new(self.critic.len(), cfg);
        Ok(())
    }
}

/// Epochs × minibatches of [`ppo_loss`] and Adam steps with per-network
/// gradient-norm clipping. Steps with non-finite gradients are skipped.
pub fn update(learner: &mut Learner, batch: &RolloutBatch, cfg: &TrainConfig, ws: &mut LossWorkspace<f32>) -> Result<UpdateStats> {
    let (adv, ret) = compute_gae(&batch.rewards, &batch.values, &batch.dones, &batch.bootstrap, cfg.gamma as f32, cfg.lam as f32);
    let mb = cfg.minibatches.min(batch.n_envs);
    let mut order: Vec<usize> = (0..batch.n_envs).collect();
    let mut st = UpdateStats::default();
    learner.actor_opt.lr = cfg.lr;
    learner.critic_opt.lr = cfg.lr;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut learner.rng);
        for k in 0..mb {
            let lo = k * batch.n_envs / mb;
            let hi = (k + 1) * batch.n_envs / mb;
            let ls = ppo_loss(&learner.actor, &learner.critic, batch, &adv, &ret, &order[lo..hi], cfg, ws)?;
            let finite = ws.actor_grad.iter().chain(&ws.critic_grad).all(|g| g.is_finite());
            if !finite {
                st.skipped += 1;
                continue;
            }
            let na = clip_grad_norm(&mut ws.actor_grad, cfg.max_grad_norm);
            let nc = clip_grad_norm(&mut ws.critic_grad, cfg.max_grad_norm);
            learner.actor_opt.step(&mut learner.actor.data, &ws.actor_grad);
            learner.critic_opt.step(&mut learner.critic.data, &ws.critic_grad);
            st.steps += 1;
            let w = 1.0 / (cfg.epochs * mb) as f64;
            st.loss.loss += ls.loss * w;
            st.loss.policy_loss += ls.policy_loss * w;
            st.loss.value_loss += ls.value_loss * w;
            st.loss.entropy += ls.entropy * w;
            st.loss.approx_kl += ls.approx_kl * w;
            st.loss.clip_frac += ls.clip_frac * w;
            st.actor_grad_norm += na * w;
            st.critic_grad_norm += nc * w;
        }
    }
    Ok(st)
}
