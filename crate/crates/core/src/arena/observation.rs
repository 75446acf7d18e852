//! Fixed-layout observation vectors.
//!
//! Layout per agent:
//! - ego block (9): altitude/5000, sin/cos heading, sin/cos roll, sin/cos pitch,
//!   airspeed/340, vertical speed/100
//! - one 6-entry block per other aircraft, teammates first then enemies, in id
//!   order: distance/10000, closure/340, ao/π, ta/π, Δaltitude/5000, Δheading/π.
//!   SingleControlHeading uses the block for the tracking target instead:
//!   Δheading/π, sin Δheading, cos Δheading, Δaltitude/5000, Δspeed/340, 0.
//! - nearest-threat missile block (6): present flag, distance/10000,
//!   closure/680, sin/cos relative bearing, time-to-go/60 (capped at 1).
//!
//! Dead aircraft observe all zeros; blocks describing dead aircraft are zero.

use std::f64::consts::PI;

use super::control::FlightTargets;
use super::TaskKind;
use crate::airframe::{relative_geometry, AircraftState};
use crate::ordnance::MissileState;
use crate::vec3::wrap_angle;
use crate::AgentId;

pub const EGO_BLOCK: usize = 9;
pub const OTHER_BLOCK: usize = 6;
pub const MISSILE_BLOCK: usize = 6;

/// Read-only view of everything an observation may depend on.
#[derive(Debug, Clone, Copy)]
pub struct World<'a> {
    pub task: TaskKind,
    pub aircraft: &'a [AircraftState],
    pub missiles: &'a [MissileState],
    /// Tracking target for SingleControlHeading.
    pub targets: Option<FlightTargets>,
}

pub fn observation_len(task: TaskKind) -> usize {
    let others = match task {
        TaskKind::SingleControlHeading => 1,
        _ => task.num_agents() - 1,
    };
    EGO_BLOCK + OTHER_BLOCK * others + MISSILE_BLOCK
}

/// Other aircraft in observation order: teammates first, then enemies.
pub fn observation_order(task: TaskKind, agent: AgentId) -> Vec<AgentId> {
    let team = task.team_of(agent);
    let mates = task.team_members(team).filter(|&i| i != agent);
    let enemies = (0..task.num_teams()).filter(|&t| t != team).flat_map(|t| task.team_members(t));
    mates.chain(enemies).collect()
}

/// Time-to-go of a missile against `target`, infinite when it is not closing.
pub fn time_to_go(missile: &MissileState, target: &AircraftState) -> (f64, f64, f64) {
    let los = target.position - missile.position;
    let distance = los.norm();
    let closure = if distance > 0.0 { -los.dot(target.velocity - missile.velocity) / distance } else { 0.0 };
    let tgo = if closure > 0.0 { distance / closure } else { f64::INFINITY };
    (tgo, distance, closure)
}

pub fn build_observation(agent: AgentId, world: &World<'_>) -> Vec<f64> {
    let mut obs = vec![0.0; observation_len(world.task)];
    let me = &world.aircraft[agent];
    if !me.alive {
        return obs;
    }
    obs[0] = me.altitude() / 5000.0;
    obs[1] = me.heading.sin();
    obs[2] = me.heading.cos();
    obs[3] = me.roll.sin();
    obs[4] = me.roll.cos();
    obs[5] = me.pitch.sin();
    obs[6] = me.pitch.cos();
    obs[7] = me.airspeed / 340.0;
    obs[8] = me.velocity.z / 100.0;

    let mut offset = EGO_BLOCK;
    if world.task == TaskKind::SingleControlHeading {
        if let Some(t) = world.targets {
            let dh = wrap_angle(t.heading - me.heading);
            obs[offset..offset + OTHER_BLOCK].copy_from_slice(&[
                dh / PI,
                dh.sin(),
                dh.cos(),
                (t.altitude - me.altitude()) / 5000.0,
                (t.speed - me.airspeed) / 340.0,
                0.0,
            ]);
        }
        offset += OTHER_BLOCK;
    } else {
        for other in observation_order(world.task, agent) {
            let o = &world.aircraft[other];
            if o.alive {
                if let Ok(g) = relative_geometry(me, o) {
                    obs[offset..offset + OTHER_BLOCK].copy_from_slice(&[
                        g.distance / 10_000.0,
                        g.closure_rate / 340.0,
                        g.ao / PI,
                        g.ta / PI,
                        g.delta_altitude / 5000.0,
                        g.delta_heading / PI,
                    ]);
                }
            }
            offset += OTHER_BLOCK;
        }
    }

    let threat = world
        .missiles
        .iter()
        .filter(|m| m.is_flying() && m.target_id == agent)
        .map(|m| (m, time_to_go(m, me)))
        .min_by(|a, b| {
            let (ta, da, _) = a.1;
            let (tb, db, _) = b.1;
            ta.total_cmp(&tb).then(da.total_cmp(&db))
        });
    if let Some((m, (tgo, distance, closure))) = threat {
        let rel = m.position - me.position;
        let bearing = wrap_angle(rel.y.atan2(rel.x) - me.heading);
        obs[offset..offset + MISSILE_BLOCK].copy_from_slice(&[
            1.0,
            distance / 10_000.0,
            closure / 680.0,
            bearing.sin(),
            bearing.cos(),
            (tgo / 60.0).min(1.0),
        ]);
    }
    obs
}
