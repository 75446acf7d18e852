//! Guided missiles: boost/coast propulsion, quadratic drag, true proportional
//! navigation and proximity fusing.

use crate::airframe::AircraftState;
use crate::error::{Result, SimError};
use crate::vec3::Vec3;
use crate::AgentId;

pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MissileStatus {
    Flying,
    Hit,
    Expired,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MissileState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub age: f64,
    pub shooter_id: AgentId,
    pub target_id: AgentId,
    pub status: MissileStatus,
    /// Closest approach to the target seen so far (m).
    pub min_distance: f64,
}

impl MissileState {
    pub fn is_flying(&self) -> bool {
        self.status == MissileStatus::Flying
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MissileConfig {
    pub nav_constant: f64,
    pub boost_thrust: f64,
    pub boost_duration: f64,
    pub mass: f64,
    /// Quadratic drag, N per (m/s)².
    pub drag_coefficient: f64,
    /// Lateral acceleration limit in multiples of g.
    pub max_lateral_g: f64,
    pub explosive_radius: f64,
    pub lifespan: f64,
}

impl Default for MissileConfig {
    fn default() -> Self {
        Self {
            nav_constant: 3.0,
            boost_thrust: 20_000.0,
            boost_duration: 4.0,
            mass: 150.0,
            drag_coefficient: 0.002,
            max_lateral_g: 30.0,
            explosive_radius: 300.0,
            lifespan: 60.0,
        }
    }
}

impl MissileConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.nav_constant >= 1.0
            && self.explosive_radius > 0.0
            && self.lifespan > 0.0
            && self.mass > 0.0
            && self.boost_thrust >= 0.0
            && self.boost_duration >= 0.0
            && self.drag_coefficient >= 0.0
            && self.max_lateral_g > 0.0;
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidConfig(format!("missile: {self:?}")))
        }
    }
}

/// Spawns a missile at the shooter, inheriting its velocity.
pub fn launch_missile(
    shooter: &AircraftState,
    shooter_id: AgentId,
    target_id: AgentId,
) -> Result<MissileState> {
    if !shooter.alive {
        return Err(SimError::InvalidLaunch(format!("shooter {shooter_id} is dead")));
    }
    Ok(MissileState {
        position: shooter.position,
        velocity: shooter.velocity,
        age: 0.0,
        shooter_id,
        target_id,
        status: MissileStatus::Flying,
        min_distance: f64::INFINITY,
    })
}

/// True proportional navigation: `N · (Ω × v_missile)` with `Ω = (r × v_rel) / |r|²`.
///
/// The result is not limited; [`step_missile`] clamps it to the lateral-g budget.
pub fn pn_command(missile: &MissileState, target: &AircraftState, nav_constant: f64) -> Result<Vec3> {
    let los = target.position - missile.position;
    let range_sq = los.norm_squared();
    if !(range_sq > 0.0) {
        return Err(SimError::DegenerateGeometry("missile and target coincide"));
    }
    let rel_vel = target.velocity - missile.velocity;
    let los_rate = los.cross(rel_vel) / range_sq;
    Ok(los_rate.cross(missile.velocity) * nav_constant)
}

/// Guidance command after the lateral acceleration limit.
pub fn clamped_command(missile: &MissileState, target: &AircraftState, cfg: &MissileConfig) -> Result<Vec3> {
    let raw = pn_command(missile, target, cfg.nav_constant)?;
    Ok(raw.clamp_norm(cfg.max_lateral_g * STANDARD_GRAVITY))
}

/// Advances a missile by `dt` assuming the target holds its velocity over the step.
///
/// Terminal missiles are returned unchanged.
pub fn step_missile(
    missile: &MissileState,
    target: &AircraftState,
    cfg: &MissileConfig,
    dt: f64,
) -> Result<MissileState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(SimError::InvalidState(format!("bad missile time step {dt}")));
    }
    if !missile.is_flying() {
        return Ok(*missile);
    }
    let mut next = *missile;
    let start_rel = target.position - missile.position;
    let start_distance = start_rel.norm();
    next.min_distance = next.min_distance.min(start_distance);
    if start_distance <= cfg.explosive_radius {
        next.status = MissileStatus::Hit;
        return Ok(next);
    }

    let speed = missile.velocity.norm();
    let thrust = if missile.age < cfg.boost_duration && speed > 0.0 {
        missile.velocity * (cfg.boost_thrust / (cfg.mass * speed))
    } else {
        Vec3::ZERO
    };
    let drag = missile.velocity * (-cfg.drag_coefficient * speed / cfg.mass);
    let gravity = Vec3::new(0.0, 0.0, -STANDARD_GRAVITY);
    let accel = thrust + drag + clamped_command(missile, target, cfg)? + gravity;

    next.velocity = missile.velocity + accel * dt;
    next.position = missile.position + next.velocity * dt;
    next.age = missile.age + dt;

    // closest approach within the step, both bodies moving linearly
    let rel_vel = target.velocity - next.velocity;
    let rel_speed_sq = rel_vel.norm_squared();
    let t_star = if rel_speed_sq > 0.0 {
        (-start_rel.dot(rel_vel) / rel_speed_sq).clamp(0.0, dt)
    } else {
        0.0
    };
    let step_min = (start_rel + rel_vel * t_star).norm();
    next.min_distance = next.min_distance.min(step_min);

    let end_rel = start_rel + rel_vel * dt;
    let end_distance = end_rel.norm();
    let closure = if end_distance > 0.0 { -end_rel.dot(rel_vel) / end_distance } else { 0.0 };

    if step_min <= cfg.explosive_radius {
        next.status = MissileStatus::Hit;
    } else if next.age > cfg.lifespan
        || (next.velocity.norm() < target.velocity.norm() && closure <= 0.0)
        || next.position.z <= 0.0
    {
        next.status = MissileStatus::Expired;
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngagementResult {
    pub status: MissileStatus,
    pub miss_distance: f64,
    pub time: f64,
}

/// Flies a missile against a constant-velocity target until it terminates.
pub fn simulate_engagement(
    missile: &MissileState,
    target: &AircraftState,
    cfg: &MissileConfig,
    dt: f64,
) -> Result<EngagementResult> {
    let mut m = *missile;
    let mut tgt = *target;
    let mut time = 0.0;
    while m.is_flying() {
        m = step_missile(&m, &tgt, cfg, dt)?;
        tgt.position += tgt.velocity * dt;
        time += dt;
    }
    Ok(EngagementResult { status: m.status, miss_distance: m.min_distance, time })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::airframe::AircraftState;

    fn shooter(speed: f64) -> AircraftState {
        AircraftState::new(Vec3::new(0.0, 0.0, 6000.0), 0.0, 0.0, speed)
    }

    fn crossing_target() -> AircraftState {
        AircraftState::new(Vec3::new(3000.0, 0.0, 6000.0), std::f64::consts::FRAC_PI_2, 0.0, 200.0)
    }

    #[test]
    fn launch_inherits_shooter_motion() {
        let s = shooter(200.0);
        let m = launch_missile(&s, 0, 1).unwrap();
        assert_eq!(m.velocity, Vec3::new(200.0, 0.0, 0.0));
        assert_eq!(m.position, s.position);
        assert_eq!(m.age, 0.0);
        assert_eq!(m.status, MissileStatus::Flying);
        assert_eq!(m, launch_missile(&s, 0, 1).unwrap());
    }

    #[test]
    fn dead_shooter_cannot_launch() {
        let mut s = shooter(200.0);
        s.alive = false;
        assert!(matches!(launch_missile(&s, 0, 1), Err(SimError::InvalidLaunch(_))));
    }

    #[test]
    fn constant_bearing_gives_zero_command() {
        // target flying straight at the missile along the line of sight
        let mut m = launch_missile(&shooter(600.0), 0, 1).unwrap();
        m.position = Vec3::new(0.0, 0.0, 6000.0);
        let target = AircraftState::new(Vec3::new(5000.0, 0.0, 6000.0), std::f64::consts::PI, 0.0, 200.0);
        let cmd = pn_command(&m, &target, 3.0).unwrap();
        assert!(cmd.norm() < 1e-12);

        let parked = AircraftState::new(Vec3::new(5000.0, 0.0, 6000.0), 0.0, 0.0, 0.0);
        assert!(pn_command(&m, &parked, 3.0).unwrap().norm() < 1e-12);
    }

    #[test]
    fn crossing_command_matches_hand_computation() {
        // r = (3000, 0, 0), v_rel = (-600, 200, 0), r × v_rel = (0, 0, 600000)
        // Ω = (0, 0, 600000 / 9e6) = (0, 0, 1/15)
        // Ω × v_m = (0, 0, 1/15) × (600, 0, 0) = (0, 40, 0); N = 3 gives (0, 120, 0)
        let mut m = launch_missile(&shooter(600.0), 0, 1).unwrap();
        m.velocity = Vec3::new(600.0, 0.0, 0.0);
        let target = crossing_target();
        let cmd = pn_command(&m, &target, 3.0).unwrap();
        assert!((cmd.x).abs() < 1e-9);
        assert!((cmd.y - 120.0).abs() < 1e-9);
        assert!((cmd.z).abs() < 1e-12);
    }

    #[test]
    fn coincident_positions_are_degenerate() {
        let s = shooter(250.0);
        let m = launch_missile(&s, 0, 1).unwrap();
        assert!(matches!(pn_command(&m, &s, 3.0), Err(SimError::DegenerateGeometry(_))));
    }

    #[test]
    fn lifespan_expiry() {
        let cfg = MissileConfig::default();
        let mut m = launch_missile(&shooter(600.0), 0, 1).unwrap();
        m.age = cfg.lifespan + 1.0;
        let far = AircraftState::new(Vec3::new(50_000.0, 0.0, 6000.0), 0.0, 0.0, 200.0);
        let next = step_missile(&m, &far, &cfg, 0.1).unwrap();
        assert_eq!(next.status, MissileStatus::Expired);
    }

    #[test]
    fn fuse_inside_radius() {
        let cfg = MissileConfig::default();
        let m = launch_missile(&shooter(600.0), 0, 1).unwrap();
        let close = AircraftState::new(Vec3::new(100.0, 50.0, 6000.0), 0.0, 0.0, 200.0);
        let next = step_missile(&m, &close, &cfg, 0.1).unwrap();
        assert_eq!(next.status, MissileStatus::Hit);
        assert_eq!(step_missile(&next, &close, &cfg, 0.1).unwrap(), next);
    }

    #[test]
    fn terminal_missiles_do_not_move() {
        let cfg = MissileConfig::default();
        let mut m = launch_missile(&shooter(600.0), 0, 1).unwrap();
        m.status = MissileStatus::Expired;
        assert_eq!(step_missile(&m, &crossing_target(), &cfg, 0.1).unwrap(), m);
    }

    #[test]
    fn zero_dt_is_rejected() {
        let m = launch_missile(&shooter(600.0), 0, 1).unwrap();
        assert!(step_missile(&m, &crossing_target(), &MissileConfig::default(), 0.0).is_err());
    }

    #[test]
    fn coasting_missile_slows_down() {
        let cfg = MissileConfig { boost_duration: 0.0, ..Default::default() };
        // target dead ahead and receding along the boresight: no lateral command
        let mut m = launch_missile(&shooter(800.0), 0, 1).unwrap();
        m.position.z = 6000.0;
        let target = AircraftState::new(Vec3::new(40_000.0, 0.0, 6000.0), 0.0, 0.0, 200.0);
        let mut previous = m.velocity.norm();
        for _ in 0..100 {
            // cancel gravity so the check isolates drag
            m = step_missile(&m, &target, &cfg, 0.01).unwrap();
            m.velocity.z = 0.0;
            m.position.z = 6000.0;
            let speed = m.velocity.norm();
            assert!(speed < previous);
            previous = speed;
        }
    }

    #[test]
    fn crossing_engagement_hits() {
        let cfg = MissileConfig::default();
        let mut m = launch_missile(&shooter(600.0), 0, 1).unwrap();
        m.velocity = Vec3::new(600.0, 0.0, 0.0);
        let r = simulate_engagement(&m, &crossing_target(), &cfg, 1.0 / 60.0).unwrap();
        assert_eq!(r.status, MissileStatus::Hit);
        assert!(r.miss_distance <= cfg.explosive_radius);
        assert!(r.time < cfg.lifespan);
    }
}
