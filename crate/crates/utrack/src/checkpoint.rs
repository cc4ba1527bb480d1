//! Checkpoint directories.
//!
//! ```text
//! <dir>/manifest.toml        format version, counters, network shapes, tensor table, digest
//! <dir>/tensors.bin          little-endian f32: actor, critic, Adam moments
//! <dir>/trainer_state.cbor   rollout state and learner RNG (resumable checkpoints only)
//! <dir>/config.toml          run configuration snapshot
//! ```
//!
//! Directories are written under a temporary name and renamed into place.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use utrack_core::nets::{NetConfig, Params};
use utrack_core::ppo::{Adam, Learner, RolloutState};
use utrack_core::rng::StreamRng;

use crate::config::RunConfig;
use crate::error::{AppError, AppResult};

pub const CHECKPOINT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.toml";
const TENSORS: &str = "tensors.bin";
const STATE: &str = "trainer_state.cbor";
const CONFIG: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    /// Offset in f32 elements.
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamMeta {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub stage: Option<String>,
    pub updates: u64,
    pub timesteps: u64,
    pub seed: u64,
    pub actor: NetConfig,
    pub critic: NetConfig,
    pub actor_adam: AdamMeta,
    pub critic_adam: AdamMeta,
    pub tensors: Vec<TensorEntry>,
    /// SHA-256 of `tensors.bin`, hex.
    pub tensors_sha256: String,
    pub resumable: bool,
}

/// Everything besides parameters that a bit-exact resume needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub rollout: RolloutState,
    pub learner_rng: StreamRng,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stage: Option<String>,
    pub updates: u64,
    pub timesteps: u64,
    pub seed: u64,
    pub learner: Learner,
    pub trainer: Option<TrainerState>,
    pub config: RunConfig,
}

fn meta(a: &Adam) -> AdamMeta {
    AdamMeta { lr: a.lr, beta1: a.beta1, beta2: a.beta2, eps: a.eps, t: a.t }
}

fn tensor_list(l: &Learner) -> [(&'static str, &[f32]); 6] {
    [
        ("actor", &l.actor.data),
        ("critic", &l.critic.data),
        ("actor_adam.m", &l.actor_opt.m),
        ("actor_adam.v", &l.actor_opt.v),
        ("critic_adam.m", &l.critic_opt.m),
        ("critic_adam.v", &l.critic_opt.v),
    ]
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    fn encode(&self) -> AppResult<(Manifest, Vec<u8>, Option<Vec<u8>>)> {
        let mut tensors = Vec::new();
        let mut bytes = Vec::new();
        let mut offset = 0u64;
        for (name, data) in tensor_list(&self.learner) {
            tensors.push(TensorEntry { name: name.into(), offset, len: data.len() as u64 });
            offset += data.len() as u64;
            for x in data {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
        let state = match &self.trainer {
            Some(t) => {
                let mut buf = Vec::new();
                ciborium::into_writer(t, &mut buf).map_err(|e| AppError::Config(format!("encoding trainer state: {e}")))?;
                Some(buf)
            }
            None => None,
        };
        let manifest = Manifest {
            version: CHECKPOINT_VERSION,
            stage: self.stage.clone(),
            updates: self.updates,
            timesteps: self.timesteps,
            seed: self.seed,
            actor: self.learner.actor.cfg,
            critic: self.learner.critic.cfg,
            actor_adam: meta(&self.learner.actor_opt),
            critic_adam: meta(&self.learner.critic_opt),
            tensors,
            tensors_sha256: hex(&Sha256::digest(&bytes)),
            resumable: state.is_some(),
        };
        Ok((manifest, bytes, state))
    }

    /// SHA-256 over parameters, optimizer moments and trainer state.
    pub fn content_hash(&self) -> AppResult<String> {
        let (m, bytes, state) = self.encode()?;
        let mut h = Sha256::new();
        h.update(toml::to_string(&m).expect("manifest serializes").as_bytes());
        h.update(&bytes);
        if let Some(s) = state {
            h.update(&s);
        }
        Ok(hex(&h.finalize()))
    }

    pub fn save(&self, dir: &Path) -> AppResult<()> {
        let (manifest, bytes, state) = self.encode()?;
        let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(|e| AppError::file(parent, e.to_string()))?;
        let name = dir.file_name().ok_or_else(|| AppError::Usage(format!("bad checkpoint path {}", dir.display())))?;
        let tmp = parent.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir(&tmp).map_err(|e| AppError::file(&tmp, e.to_string()))?;
        fs::write(tmp.join(TENSORS), &bytes)?;
        if let Some(s) = state {
            fs::write(tmp.join(STATE), s)?;
        }
        fs::write(tmp.join(CONFIG), self.config.to_toml())?;
        fs::write(tmp.join(MANIFEST), toml::to_string(&manifest).expect("manifest serializes"))?;
        replace_dir(&tmp, dir)
    }

    pub fn load(dir: &Path) -> AppResult<Checkpoint> {
        let read = |name: &str| -> AppResult<Vec<u8>> {
            let p = dir.join(name);
            fs::read(&p).map_err(|e| AppError::file(&p, format!("cannot read checkpoint: {e}")))
        };
        let mpath = dir.join(MANIFEST);
        let text = String::from_utf8(read(MANIFEST)?).map_err(|_| AppError::file(&mpath, "not UTF-8"))?;
        let table = text
            .parse::<toml::Table>()
            .map_err(|e| AppError::Compat(format!("{}: {e}", mpath.display())))?;
        let version = table.get("version").and_then(|v| v.as_integer());
        if version != Some(CHECKPOINT_VERSION as i64) {
            return Err(AppError::Compat(format!(
                "{}: checkpoint version {:?} is not supported (expected {CHECKPOINT_VERSION})",
                mpath.display(),
                version
            )));
        }
        let m: Manifest = toml::from_str(&text).map_err(|e| AppError::Compat(format!("{}: {e}", mpath.display())))?;
        let bytes = read(TENSORS)?;
        if hex(&Sha256::digest(&bytes)) != m.tensors_sha256 {
            return Err(AppError::Compat(format!("{}: tensor digest mismatch", dir.join(TENSORS).display())));
        }
        if bytes.len() % 4 != 0 {
            return Err(AppError::Compat("tensors.bin length is not a multiple of 4".into()));
        }
        let floats: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let take = |name: &str| -> AppResult<Vec<f32>> {
            let t = m
                .tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| AppError::Compat(format!("checkpoint lacks tensor `{name}`")))?;
            let (lo, hi) = (t.offset as usize, (t.offset + t.len) as usize);
            floats
                .get(lo..hi)
                .map(<[f32]>::to_vec)
                .ok_or_else(|| AppError::Compat(format!("tensor `{name}` lies outside tensors.bin")))
        };
        let compat = |e: utrack_core::Error| AppError::Compat(e.to_string());
        let actor = Params::from_data(m.actor, take("actor")?).map_err(compat)?;
        let critic = Params::from_data(m.critic, take("critic")?).map_err(compat)?;
        let adam = |meta: &AdamMeta, mv: Vec<f32>, vv: Vec<f32>, n: usize| -> AppResult<Adam> {
            if mv.len() != n || vv.len() != n {
                return Err(AppError::Compat("optimizer state does not match parameter count".into()));
            }
            Ok(Adam { lr: meta.lr, beta1: meta.beta1, beta2: meta.beta2, eps: meta.eps, t: meta.t, m: mv, v: vv })
        };
        let actor_opt = adam(&m.actor_adam, take("actor_adam.m")?, take("actor_adam.v")?, actor.len())?;
        let critic_opt = adam(&m.critic_adam, take("critic_adam.m")?, take("critic_adam.v")?, critic.len())?;
        let cpath = dir.join(CONFIG);
        let ctext = String::from_utf8(read(CONFIG)?).map_err(|_| AppError::file(&cpath, "not UTF-8"))?;
        let config = crate::config::parse_run_config(&ctext)?;
        let trainer: Option<TrainerState> = if m.resumable {
            let s = read(STATE)?;
            Some(ciborium::from_reader(s.as_slice()).map_err(|e| AppError::Compat(format!("{}: {e}", dir.join(STATE).display())))?)
        } else {
            None
        };
        let rng = trainer.as_ref().map(|t| t.learner_rng.clone()).unwrap_or_else(|| {
            utrack_core::rng::stream_rng(utrack_core::rng::derive_seed(m.seed, utrack_core::ppo::STREAM_MINIBATCH, 0))
        });
        Ok(Checkpoint {
            stage: m.stage,
            updates: m.updates,
            timesteps: m.timesteps,
            seed: m.seed,
            learner: Learner { actor, critic, actor_opt, critic_opt, rng },
            trainer,
            config,
        })
    }

    /// Fails with a compatibility error unless the networks have the
    /// shapes `train` asks for.
    pub fn check_nets(&self, actor: &NetConfig, critic: Option<&NetConfig>) -> AppResult<()> {
        if self.learner.actor.cfg != *actor {
            return Err(AppError::Compat(format!(
                "checkpoint actor {:?} does not match configured {:?}",
                self.learner.actor.cfg, actor
            )));
        }
        if let Some(c) = critic {
            if self.learner.critic.cfg != *c {
                return Err(AppError::Compat(format!(
                    "checkpoint critic {:?} does not match configured {:?}",
                    self.learner.critic.cfg, c
                )));
            }
        }
        Ok(())
    }
}

/// Moves `tmp` to `dst`, replacing any existing directory.
fn replace_dir(tmp: &Path, dst: &Path) -> AppResult<()> {
    if dst.exists() {
        let old: PathBuf = tmp.with_extension("old");
        if old.exists() {
            fs::remove_dir_all(&old)?;
        }
        fs::rename(dst, &old).map_err(|e| AppError::file(dst, e.to_string()))?;
        fs::rename(tmp, dst).map_err(|e| AppError::file(dst, e.to_string()))?;
        fs::remove_dir_all(&old)?;
    } else {
        fs::rename(tmp, dst).map_err(|e| AppError::file(dst, e.to_string()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use utrack_core::batch::Sequential;
    use utrack_core::ppo::TrainConfig;

    fn small() -> RunConfig {
        let mut c = RunConfig::default();
        c.train = TrainConfig { d_model: 8, heads: 2, blocks: 1, n_envs: 2, rollout_len: 4, ..Default::default() };
        c.env.horizon = 8;
        c.env.pf.n_particles = 32;
        c
    }

    fn sample(resumable: bool) -> Checkpoint {
        let cfg = small();
        let mut learner = Learner::new(&cfg.train).unwrap();
        learner.actor_opt.t = 3;
        learner.actor_opt.m[0] = 0.5;
        let trainer = resumable.then(|| TrainerState {
            rollout: RolloutState::new(&cfg.env, 2, 8, 1, &Sequential).unwrap(),
            learner_rng: learner.rng.clone(),
        });
        Checkpoint { stage: Some("s".into()), updates: 4, timesteps: 64, seed: 0, learner, trainer, config: cfg }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        for resumable in [true, false] {
            let ck = sample(resumable);
            let p = dir.path().join(format!("ck{resumable}"));
            ck.save(&p).unwrap();
            let back = Checkpoint::load(&p).unwrap();
            assert_eq!(back.learner, ck.learner);
            assert_eq!((back.stage.as_deref(), back.updates, back.timesteps), (Some("s"), 4, 64));
            assert_eq!(back.config, ck.config);
            assert_eq!(back.trainer.is_some(), resumable);
            assert_eq!(back.content_hash().unwrap(), ck.content_hash().unwrap());
            ck.save(&p).unwrap();
            assert!(Checkpoint::load(&p).is_ok());
        }
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 2, "{names:?}");
    }

    #[test]
    fn corruption_and_version_are_compat_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck");
        sample(false).save(&p).unwrap();
        let mut bytes = fs::read(p.join(TENSORS)).unwrap();
        bytes[0] ^= 1;
        fs::write(p.join(TENSORS), &bytes).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap_err().exit_code(), 3);

        sample(false).save(&p).unwrap();
        let m = fs::read_to_string(p.join(MANIFEST)).unwrap().replace("version = 1", "version = 9");
        fs::write(p.join(MANIFEST), m).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap_err().exit_code(), 3);
        assert_eq!(Checkpoint::load(&dir.path().join("missing")).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn net_shape_mismatch_is_compat() {
        let ck = sample(false);
        let ok = ck.config.train.actor_net();
        assert!(ck.check_nets(&ok, None).is_ok());
        let wrong = NetConfig::actor(16, 2, 1);
        assert_eq!(ck.check_nets(&wrong, None).unwrap_err().exit_code(), 3);
    }
}
