//! Scripted pursuit opponent.

use super::{HighLevelAction, TaskKind, WeaponRules, ALTITUDE_OFFSETS, HEADING_OFFSETS, SPEED_OFFSETS};
use crate::airframe::{relative_geometry, AircraftState};
use crate::vec3::wrap_angle;

/// Points at the enemy, matches its altitude, runs at full speed and fires on
/// the scripted range/angle rule when the task has policy-fired missiles.
pub fn pursue_baseline(
    agent: &AircraftState,
    enemy: &AircraftState,
    task: TaskKind,
    rules: &WeaponRules,
) -> HighLevelAction {
    let los = enemy.position - agent.position;
    let bearing = los.y.atan2(los.x);
    let heading_bin = argmin(&HEADING_OFFSETS, |off| wrap_angle(bearing - (agent.heading + off)).abs());
    let altitude_bin = argmin(&ALTITUDE_OFFSETS, |off| (los.z - off).abs());
    let speed_bin = SPEED_OFFSETS.len() - 1;
    let shoot = task.policy_shoots()
        && relative_geometry(agent, enemy)
            .map(|g| g.distance < rules.scripted_range && g.ao < rules.scripted_ao)
            .unwrap_or(false);
    HighLevelAction { heading_bin, altitude_bin, speed_bin, shoot }
}

fn argmin(options: &[f64], cost: impl Fn(f64) -> f64) -> usize {
    let mut best = 0;
    let mut best_cost = f64::INFINITY;
    for (i, &o) in options.iter().enumerate() {
        let c = cost(o);
        if c < best_cost {
            best = i;
            best_cost = c;
        }
    }
    best
}
