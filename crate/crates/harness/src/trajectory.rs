//! Per-inner-step table of one greedy evaluation episode.
//!
//! Column order:
//! `time, decision_step`, then per aircraft `a{i}_x, a{i}_y, a{i}_z, a{i}_heading, a{i}_pitch,
//! a{i}_roll, a{i}_speed, a{i}_alive`, then per missile slot `m{j}_x, m{j}_y, m{j}_z, m{j}_status`
//! (status 0 = not launched, 1 = flying, 2 = hit, 3 = expired), then per aircraft
//! `r{i}_altitude, r{i}_posture, r{i}_event, r{i}_total`, then `team0_reward`.
//!
//! Rewards belong to decision steps, so they appear on the last inner step of each decision
//! and are zero on the others; summing `team0_reward` gives the evaluation episode reward.

use std::io::Write;
use std::path::Path;

use rand::Rng;

use dogfight_core::arena::CombatEnv;
use dogfight_core::ordnance::MissileStatus;

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::eval::{team_step_reward, EvalStreams};
use crate::metrics::format_real;
use crate::policy::{joint_action, ActionMode, Pilot};

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySummary {
    pub rows: usize,
    pub decision_steps: usize,
    pub episode_reward: f64,
}

/// Header of the trajectory table.
pub fn trajectory_columns(cfg: &RunConfig) -> Vec<String> {
    let n = cfg.task.num_agents();
    let mut cols = vec!["time".to_string(), "decision_step".to_string()];
    for i in 0..n {
        for f in ["x", "y", "z", "heading", "pitch", "roll", "speed", "alive"] {
            cols.push(format!("a{i}_{f}"));
        }
    }
    for j in 0..missile_slots(cfg) {
        for f in ["x", "y", "z", "status"] {
            cols.push(format!("m{j}_{f}"));
        }
    }
    for i in 0..n {
        for f in ["altitude", "posture", "event", "total"] {
            cols.push(format!("r{i}_{f}"));
        }
    }
    cols.push("team0_reward".into());
    cols
}

/// Upper bound on launches in one episode.
fn missile_slots(cfg: &RunConfig) -> usize {
    if cfg.task.has_weapons() {
        cfg.task.num_agents() * cfg.env.missiles_per_aircraft as usize
    } else {
        0
    }
}

/// Plays the first episode `evaluate` would play for `seed` and writes it to `out_path`.
pub fn export_trajectory(pilots: &[Pilot], cfg: &RunConfig, seed: u64, out_path: &Path) -> Result<TrajectorySummary> {
    let n = cfg.task.num_agents();
    if pilots.len() != n {
        return Err(HarnessError::Runtime(format!("{} pilots for {n} aircraft", pilots.len())));
    }
    let slots = missile_slots(cfg);
    let mut env = CombatEnv::new(cfg.env.clone())?;
    let mut streams = EvalStreams::new(seed);
    let mut obs = env.reset(streams.resets.gen());
    env.set_recording(true);

    let mut file = std::io::BufWriter::new(std::fs::File::create(out_path)?);
    writeln!(file, "{}", trajectory_columns(cfg).join(","))?;
    let mut summary = TrajectorySummary { rows: 0, decision_steps: 0, episode_reward: 0.0 };
    loop {
        let actions = joint_action(&env, pilots, &obs, ActionMode::Greedy, &mut streams.actions)?;
        let out = env.step(&actions)?;
        let frames = env.take_frames();
        let team_reward = team_step_reward(cfg.task, &out);
        summary.decision_steps += 1;
        summary.episode_reward += team_reward;
        for (f, frame) in frames.iter().enumerate() {
            let last = f + 1 == frames.len();
            let mut cells = vec![format_real(frame.time), summary.decision_steps.to_string()];
            for a in &frame.aircraft {
                for v in [a.position.x, a.position.y, a.position.z, a.heading, a.pitch, a.roll, a.airspeed] {
                    cells.push(format_real(v));
                }
                cells.push((a.alive as u8).to_string());
            }
            for j in 0..slots {
                match frame.missiles.get(j) {
                    Some(m) => {
                        for v in [m.position.x, m.position.y, m.position.z] {
                            cells.push(format_real(v));
                        }
                        let status = match m.status {
                            MissileStatus::Flying => 1,
                            MissileStatus::Hit => 2,
                            MissileStatus::Expired => 3,
                        };
                        cells.push(status.to_string());
                    }
                    None => cells.extend(["0".to_string(), "0".to_string(), "0".to_string(), "0".to_string()]),
                }
            }
            for r in &out.rewards {
                let vals = if last { [r.altitude, r.posture, r.event, r.total] } else { [0.0; 4] };
                cells.extend(vals.iter().map(|&v| format_real(v)));
            }
            cells.push(format_real(if last { team_reward } else { 0.0 }));
            writeln!(file, "{}", cells.join(","))?;
            summary.rows += 1;
        }
        if out.episode_done {
            break;
        }
        obs = out.observations;
    }
    file.flush()?;
    Ok(summary)
}
