//! Composite per-step reward: flight-safety penalties, relative posture and
//! sparse combat events.

use crate::airframe::{AircraftState, RelativeGeometry};
use crate::error::{Result, SimError};
use crate::AgentId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    pub safe_altitude: f64,
    pub danger_altitude: f64,
    pub safe_speed: f64,
    pub range_inner_km: f64,
    pub range_outer_km: f64,
    pub range_far_km: f64,
    pub far_penalty_floor: f64,
    pub event_kill: f64,
    pub event_death: f64,
    pub event_crash: f64,
    pub weight_altitude: f64,
    pub weight_posture: f64,
    /// Credit an `EnemyKill` when an opponent crashes on its own.
    pub credit_crash_as_kill: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            safe_altitude: 4000.0,
            danger_altitude: 3500.0,
            safe_speed: 150.0,
            range_inner_km: 1.0,
            range_outer_km: 3.0,
            range_far_km: 10.0,
            far_penalty_floor: -0.1,
            event_kill: 200.0,
            event_death: -200.0,
            event_crash: -200.0,
            weight_altitude: 1.0,
            weight_posture: 1.0,
            credit_crash_as_kill: false,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.danger_altitude <= self.safe_altitude
            && self.danger_altitude > 0.0
            && self.safe_speed > 0.0
            && 0.0 < self.range_inner_km
            && self.range_inner_km < self.range_outer_km
            && self.range_outer_km < self.range_far_km
            && self.far_penalty_floor <= 0.0;
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidConfig(format!("reward: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    ShotDownByMissile,
    Crash,
    EnemyKill,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CombatEvent {
    pub kind: EventKind,
    pub subject: AgentId,
    pub counterpart: Option<AgentId>,
}

impl CombatEvent {
    pub fn crash(subject: AgentId) -> Self {
        Self { kind: EventKind::Crash, subject, counterpart: None }
    }

    pub fn shot_down(subject: AgentId, shooter: AgentId) -> Self {
        Self { kind: EventKind::ShotDownByMissile, subject, counterpart: Some(shooter) }
    }

    pub fn kill(shooter: AgentId, victim: AgentId) -> Self {
        Self { kind: EventKind::EnemyKill, subject: shooter, counterpart: Some(victim) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardBreakdown {
    pub altitude: f64,
    pub posture: f64,
    pub event: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn compose(altitude: f64, posture: f64, event: f64, cfg: &RewardConfig) -> Self {
        Self {
            altitude,
            posture,
            event,
            total: cfg.weight_altitude * altitude + cfg.weight_posture * posture + event,
        }
    }
}

/// Low-speed penalty below the safe altitude plus a low-altitude penalty below
/// the danger altitude. Each term lies in `[-1, 0]`.
pub fn altitude_reward(state: &AircraftState, cfg: &RewardConfig) -> f64 {
    let altitude = state.altitude();
    let speed_penalty = if altitude < cfg.safe_altitude {
        -((cfg.safe_speed - state.airspeed) / cfg.safe_speed).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let height_penalty = if altitude < cfg.danger_altitude {
        -((cfg.danger_altitude - altitude) / cfg.danger_altitude).clamp(0.0, 1.0)
    } else {
        0.0
    };
    speed_penalty + height_penalty
}

/// `0.5 (cos ao - cos ta)`: +1 when chasing the opponent's tail, -1 when it chases ours.
pub fn orientation_factor(ao: f64, ta: f64) -> f64 {
    0.5 * (ao.cos() - ta.cos())
}

/// Trapezoidal engagement band with a bounded negative tail beyond `range_far_km`.
pub fn range_factor(distance_m: f64, cfg: &RewardConfig) -> f64 {
    let d = distance_m / 1000.0;
    if d < cfg.range_inner_km {
        d / cfg.range_inner_km
    } else if d <= cfg.range_outer_km {
        1.0
    } else if d <= cfg.range_far_km {
        1.0 - (d - cfg.range_outer_km) / (cfg.range_far_km - cfg.range_outer_km)
    } else {
        // reaches the floor at twice the far range
        (cfg.far_penalty_floor * (d - cfg.range_far_km) / cfg.range_far_km).max(cfg.far_penalty_floor)
    }
}

/// Orientation times the non-negative part of the range band, plus the negative part additively.
pub fn posture_reward(geom: &RelativeGeometry, cfg: &RewardConfig) -> f64 {
    let range = range_factor(geom.distance, cfg);
    orientation_factor(geom.ao, geom.ta) * range.max(0.0) + range.min(0.0)
}

pub fn event_reward(events: &[CombatEvent], agent: AgentId, cfg: &RewardConfig) -> f64 {
    events
        .iter()
        .filter(|e| e.subject == agent)
        .map(|e| match e.kind {
            EventKind::ShotDownByMissile => cfg.event_death,
            EventKind::Crash => cfg.event_crash,
            EventKind::EnemyKill => cfg.event_kill,
        })
        .sum()
}

/// Full breakdown for `agent`. Posture is zero when there is no opponent geometry.
pub fn total_reward(
    state: &AircraftState,
    geom: Option<&RelativeGeometry>,
    events: &[CombatEvent],
    agent: AgentId,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    RewardBreakdown::compose(
        altitude_reward(state, cfg),
        geom.map_or(0.0, |g| posture_reward(g, cfg)),
        event_reward(events, agent, cfg),
        cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vec3::Vec3;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn state(altitude: f64, speed: f64) -> AircraftState {
        AircraftState::new(Vec3::new(0.0, 0.0, altitude), 0.0, 0.0, speed)
    }

    fn geom(distance: f64, ao: f64, ta: f64) -> RelativeGeometry {
        RelativeGeometry { distance, closure_rate: 0.0, ao, ta, delta_altitude: 0.0, delta_heading: 0.0 }
    }

    #[test]
    fn altitude_reward_cases() {
        let cfg = RewardConfig::default();
        assert_eq!(altitude_reward(&state(6000.0, 10.0), &cfg), 0.0);
        assert_eq!(altitude_reward(&state(3800.0, cfg.safe_speed), &cfg), 0.0);
        assert_eq!(altitude_reward(&state(0.0, 0.0), &cfg), -2.0);
        // halfway to the ground below the danger altitude, half the safe speed
        let r = altitude_reward(&state(1750.0, 75.0), &cfg);
        assert!((r + 1.0).abs() < 1e-15);
    }

    #[test]
    fn posture_reward_cases() {
        let cfg = RewardConfig::default();
        assert_eq!(posture_reward(&geom(2000.0, 0.0, PI), &cfg), 1.0);
        let standoff = posture_reward(&geom(12_000.0, 0.7, 0.7), &cfg);
        assert_eq!(standoff, range_factor(12_000.0, &cfg).min(0.0));
        assert!(standoff <= 0.0);
    }

    #[test]
    fn far_range_is_floored_regardless_of_angles() {
        let cfg = RewardConfig::default();
        let steps = 24;
        for d in [2.0 * cfg.range_far_km * 1000.0, 25_000.0, 100_000.0] {
            for i in 0..=steps {
                for j in 0..=steps {
                    let ao = PI * i as f64 / steps as f64;
                    let ta = PI * j as f64 / steps as f64;
                    assert_eq!(posture_reward(&geom(d, ao, ta), &cfg), cfg.far_penalty_floor);
                }
            }
        }
    }

    #[test]
    fn range_factor_is_continuous_at_breakpoints() {
        let cfg = RewardConfig::default();
        for km in [cfg.range_inner_km, cfg.range_outer_km, cfg.range_far_km, 2.0 * cfg.range_far_km] {
            let d = km * 1000.0;
            let below = range_factor(d - 1e-6, &cfg);
            let above = range_factor(d + 1e-6, &cfg);
            assert!((below - above).abs() < 1e-8, "jump at {km} km");
        }
        for (ao, ta) in [(0.3, 2.0), (1.0, 0.2), (PI, 0.0)] {
            for km in [cfg.range_inner_km, cfg.range_outer_km, cfg.range_far_km] {
                let d = km * 1000.0;
                let a = posture_reward(&geom(d - 1e-6, ao, ta), &cfg);
                let b = posture_reward(&geom(d + 1e-6, ao, ta), &cfg);
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn event_values_are_exact() {
        let cfg = RewardConfig::default();
        assert_eq!(event_reward(&[CombatEvent::shot_down(0, 1)], 0, &cfg), -200.0);
        assert_eq!(event_reward(&[CombatEvent::crash(0)], 0, &cfg), -200.0);
        assert_eq!(event_reward(&[CombatEvent::kill(0, 1)], 0, &cfg), 200.0);
        assert_eq!(event_reward(&[CombatEvent::kill(0, 1), CombatEvent::crash(0)], 0, &cfg), 0.0);
        // events about someone else do not count
        assert_eq!(event_reward(&[CombatEvent::crash(1)], 0, &cfg), 0.0);
    }

    #[test]
    fn total_reward_composition() {
        let cfg = RewardConfig::default();
        let b = total_reward(&state(6000.0, 250.0), Some(&geom(2000.0, 0.0, PI)), &[], 0, &cfg);
        assert_eq!(b, RewardBreakdown { altitude: 0.0, posture: 1.0, event: 0.0, total: 1.0 });
        let zero = total_reward(&state(6000.0, 250.0), None, &[], 0, &cfg);
        assert_eq!(zero, RewardBreakdown::default());
    }

    proptest! {
        #[test]
        fn altitude_reward_bounds(alt in -1000.0..20_000.0f64, speed in 0.0..500.0f64) {
            let cfg = RewardConfig::default();
            let r = altitude_reward(&state(alt, speed), &cfg);
            prop_assert!((-2.0..=0.0).contains(&r));
            if alt >= cfg.safe_altitude {
                prop_assert_eq!(r, 0.0);
            }
        }

        #[test]
        fn orientation_is_antisymmetric(a in 0.0..PI, b in 0.0..PI) {
            prop_assert_eq!(orientation_factor(a, b), -orientation_factor(b, a));
        }

        #[test]
        fn event_reward_is_permutation_invariant(kinds in proptest::collection::vec(0u8..3, 0..12), seed in any::<u64>()) {
            let cfg = RewardConfig::default();
            let events: Vec<CombatEvent> = kinds.iter().map(|k| match k {
                0 => CombatEvent::crash(0),
                1 => CombatEvent::shot_down(0, 1),
                _ => CombatEvent::kill(0, 1),
            }).collect();
            let mut shuffled = events.clone();
            let n = shuffled.len();
            if n > 1 {
                let mut s = seed;
                for i in (1..n).rev() {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    shuffled.swap(i, (s >> 33) as usize % (i + 1));
                }
            }
            let total = event_reward(&events, 0, &cfg);
            prop_assert_eq!(total, event_reward(&shuffled, 0, &cfg));
            let parts: f64 = events.iter().map(|e| event_reward(std::slice::from_ref(e), 0, &cfg)).sum();
            prop_assert_eq!(total, parts);
        }
    }
}
