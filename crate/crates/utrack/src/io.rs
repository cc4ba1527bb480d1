//! CSV formats: heading-model calibration tables and episode trajectories.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use utrack_core::env::{self, EnvConfig, TOKEN_FEATURES};
use utrack_core::kinematics::{CalibrationDataset, CalibrationRow};
use utrack_core::nets::{actor_forward, greedy_action, Cache, Params};

use crate::error::{AppError, AppResult};

pub const CALIBRATION_HEADER: [&str; 4] = ["gamma", "speed", "dt", "dpsi"];
pub const TRAJECTORY_HEADER: [&str; 12] =
    ["step", "entity_id", "kind", "x", "y", "z", "heading", "est_x", "est_y", "track_err", "reward", "collision"];

fn malformed(path: &Path, e: &csv::Error) -> AppError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    let message = match e.kind() {
        csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
        _ => e.to_string(),
    };
    AppError::Malformed { path: path.to_path_buf(), line, message }
}

fn read_rows<T: for<'de> Deserialize<'de>, R: Read>(path: &Path, reader: R, header: &[&str]) -> AppResult<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let got = rdr.headers().map_err(|e| malformed(path, &e))?.clone();
    if got.iter().ne(header.iter().copied()) {
        return Err(AppError::Malformed {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header `{}`, found `{}`", header.join(","), got.iter().collect::<Vec<_>>().join(",")),
        });
    }
    rdr.deserialize().map(|r| r.map_err(|e| malformed(path, &e))).collect()
}

fn open(path: &Path) -> AppResult<File> {
    File::open(path).map_err(|e| AppError::file(path, e.to_string()))
}

pub fn read_calibration_csv(path: &Path) -> AppResult<CalibrationDataset> {
    let rows: Vec<CalibrationRow> = read_rows(path, open(path)?, &CALIBRATION_HEADER)?;
    if let Some((i, _)) = rows.iter().enumerate().find(|(_, r)| ![r.gamma, r.speed, r.dt, r.dpsi].iter().all(|x| x.is_finite())) {
        return Err(AppError::Malformed { path: path.to_path_buf(), line: i as u64 + 2, message: "non-finite value".into() });
    }
    Ok(CalibrationDataset { rows })
}

pub fn write_calibration_csv<W: Write>(data: &CalibrationDataset, w: W) -> AppResult<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in &data.rows {
        wr.serialize(r).map_err(|e| AppError::Io(e.into()))?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Agent,
    Target,
}

/// One entity at one step. Estimate and error columns are empty for agents
/// and for untracked targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: u32,
    pub entity_id: usize,
    pub kind: EntityKind,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub heading: f64,
    pub est_x: Option<f64>,
    pub est_y: Option<f64>,
    pub track_err: Option<f64>,
    pub reward: f64,
    pub collision: u8,
}

pub fn read_trajectory_csv(path: &Path) -> AppResult<Vec<TrajectoryRow>> {
    read_rows(path, open(path)?, &TRAJECTORY_HEADER)
}

pub fn write_trajectory_csv<W: Write>(rows: &[TrajectoryRow], w: W) -> AppResult<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wr.write_record(TRAJECTORY_HEADER).map_err(|e| AppError::Io(e.into()))?;
    for r in rows {
        wr.serialize(r).map_err(|e| AppError::Io(e.into()))?;
    }
    wr.flush()?;
    Ok(())
}

/// Actions for a recorded episode.
pub enum RecordPolicy<'a> {
    Greedy(&'a Params<f32>),
    HoldCourse,
}

fn snapshot(state: &env::WorldState, step: u32, reward: f64, collision: bool, rows: &mut Vec<TrajectoryRow>) {
    let na = state.agents.len();
    let nt = state.targets.len();
    for (i, a) in state.agents.iter().enumerate() {
        rows.push(TrajectoryRow {
            step,
            entity_id: i,
            kind: EntityKind::Agent,
            x: a.position[0],
            y: a.position[1],
            z: a.position[2],
            heading: a.heading,
            est_x: None,
            est_y: None,
            track_err: None,
            reward,
            collision: collision as u8,
        });
    }
    for (j, t) in state.targets.iter().enumerate() {
        let p = t.vehicle.position;
        let best = (0..na)
            .map(|a| &state.tracks[a * nt + j])
            .filter(|tr| tr.initialized)
            .map(|tr| {
                let e = tr.estimate.position_xy;
                (e, (e[0] - p[0]).hypot(e[1] - p[1]))
            })
            .min_by(|a, b| a.1.total_cmp(&b.1));
        rows.push(TrajectoryRow {
            step,
            entity_id: na + j,
            kind: EntityKind::Target,
            x: p[0],
            y: p[1],
            z: p[2],
            heading: t.vehicle.heading,
            est_x: best.map(|b| b.0[0]),
            est_y: best.map(|b| b.0[1]),
            track_err: best.map(|b| b.1),
            reward,
            collision: collision as u8,
        });
    }
}

/// Plays one episode from `seed` and records every entity at every step,
/// starting with the spawn state as step 0.
pub fn record_episode(cfg: &EnvConfig, seed: u64, policy: &RecordPolicy<'_>) -> AppResult<Vec<TrajectoryRow>> {
    let mut state = env::spawn(cfg, seed)?;
    let mut out = env::observe(&mut state, cfg);
    let na = cfg.n_agents;
    let mut rows = Vec::new();
    snapshot(&state, 0, 0.0, false, &mut rows);
    let mut cache = Cache::new();
    let mut hidden: Vec<Vec<f32>> = match policy {
        RecordPolicy::Greedy(p) => vec![p.hidden0().to_vec(); na],
        RecordPolicy::HoldCourse => Vec::new(),
    };
    let mut actions = vec![0u8; na];
    loop {
        for a in 0..na {
            actions[a] = match policy {
                RecordPolicy::HoldCourse => out.rudder[a],
                RecordPolicy::Greedy(p) => {
                    let block = out.n_entities * TOKEN_FEATURES;
                    let obs = &out.obs[a * block..(a + 1) * block];
                    let lp = actor_forward(p, obs, out.n_entities, &hidden[a], &out.action_mask(a), &mut cache)?;
                    hidden[a].copy_from_slice(cache.hidden_out());
                    greedy_action(&lp) as u8
                }
            };
        }
        out = env::step(&mut state, &actions, cfg)?;
        snapshot(&state, state.clock.step, out.reward, out.info.collision, &mut rows);
        if out.done {
            return Ok(rows);
        }
    }
}
