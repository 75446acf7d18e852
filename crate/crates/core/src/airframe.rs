//! Point-mass fixed-wing flight model.
//!
//! Attitude is integrated directly from the control surfaces, heading follows a
//! coordinated-turn law and airspeed follows a thrust/drag/gravity balance along
//! the flight path. Position is advanced with the reconstructed velocity.

use crate::error::{Result, SimError};
use crate::vec3::{wrap_angle, Vec3};

/// Fixed inner integration step used by the environments (seconds).
pub const INNER_DT: f64 = 1.0 / 60.0;

/// Mean Earth radius used by the equirectangular export (m).
pub const EARTH_RADIUS: f64 = 6_371_000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AircraftState {
    /// North, east, altitude (m).
    pub position: Vec3,
    /// Radians clockwise from north, in `[-π, π)`.
    pub heading: f64,
    /// Flight-path pitch (rad).
    pub pitch: f64,
    pub roll: f64,
    pub airspeed: f64,
    pub velocity: Vec3,
    /// Finite-difference acceleration over the last step. Informational only.
    pub acceleration: Vec3,
    pub alive: bool,
}

impl AircraftState {
    /// Builds a consistent state with zero roll and acceleration.
    pub fn new(position: Vec3, heading: f64, pitch: f64, airspeed: f64) -> Self {
        let heading = wrap_angle(heading);
        Self {
            position,
            heading,
            pitch,
            roll: 0.0,
            airspeed,
            velocity: velocity_from(airspeed, heading, pitch),
            acceleration: Vec3::ZERO,
            alive: true,
        }
    }

    pub fn altitude(&self) -> f64 {
        self.position.z
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite()
            && self.velocity.is_finite()
            && self.acceleration.is_finite()
            && self.heading.is_finite()
            && self.pitch.is_finite()
            && self.roll.is_finite()
            && self.airspeed.is_finite()
    }
}

/// Normalised actuator commands.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInput {
    pub aileron: f64,
    pub elevator: f64,
    pub rudder: f64,
    pub throttle: f64,
}

impl ControlInput {
    pub fn is_finite(&self) -> bool {
        self.aileron.is_finite()
            && self.elevator.is_finite()
            && self.rudder.is_finite()
            && self.throttle.is_finite()
    }

    /// Clamps every channel into its admissible interval.
    pub fn clamped(self) -> Self {
        Self {
            aileron: self.aileron.clamp(-1.0, 1.0),
            elevator: self.elevator.clamp(-1.0, 1.0),
            rudder: self.rudder.clamp(-1.0, 1.0),
            throttle: self.throttle.clamp(0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AirframeConfig {
    pub mass: f64,
    pub max_thrust: f64,
    /// Quadratic drag, N per (m/s)².
    pub drag_coefficient: f64,
    pub roll_rate_gain: f64,
    pub pitch_rate_gain: f64,
    pub yaw_trim_gain: f64,
    /// Lower bound on the speed used in the turn-rate law; airspeed itself may go below it.
    pub min_speed: f64,
    pub max_speed: f64,
    pub max_roll: f64,
    pub max_pitch: f64,
    pub gravity: f64,
}

impl Default for AirframeConfig {
    fn default() -> Self {
        Self {
            mass: 9000.0,
            max_thrust: 100_000.0,
            drag_coefficient: 0.5,
            roll_rate_gain: 1.5,
            pitch_rate_gain: 0.5,
            yaw_trim_gain: 0.05,
            min_speed: 80.0,
            max_speed: 400.0,
            max_roll: 80f64.to_radians(),
            max_pitch: 45f64.to_radians(),
            gravity: 9.81,
        }
    }
}

impl AirframeConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mass > 0.0
            && self.min_speed < self.max_speed
            && self.roll_rate_gain > 0.0
            && self.pitch_rate_gain > 0.0
            && self.yaw_trim_gain > 0.0
            && self.max_thrust > 0.0
            && self.drag_coefficient >= 0.0
            && self.max_roll > 0.0
            && self.max_roll < std::f64::consts::FRAC_PI_2
            && self.max_pitch > 0.0
            && self.max_pitch < std::f64::consts::FRAC_PI_2;
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidConfig(format!("airframe: {self:?}")))
        }
    }

    /// Throttle that balances drag at `airspeed` on a flight path of angle `pitch`.
    /// Not clamped.
    pub fn trim_throttle(&self, airspeed: f64, pitch: f64) -> f64 {
        (self.drag_coefficient * airspeed * airspeed + self.mass * self.gravity * pitch.sin())
            / self.max_thrust
    }
}

/// Velocity vector for the given speed and flight-path angles.
pub fn velocity_from(airspeed: f64, heading: f64, pitch: f64) -> Vec3 {
    let horizontal = airspeed * pitch.cos();
    Vec3::new(horizontal * heading.cos(), horizontal * heading.sin(), airspeed * pitch.sin())
}

/// Advances one aircraft by `dt` seconds under constant controls.
pub fn step_airframe(
    state: &AircraftState,
    ctrl: &ControlInput,
    cfg: &AirframeConfig,
    dt: f64,
) -> Result<AircraftState> {
    if !state.is_finite() {
        return Err(SimError::InvalidState(format!("non-finite aircraft state {state:?}")));
    }
    if !ctrl.is_finite() {
        return Err(SimError::InvalidState(format!("non-finite controls {ctrl:?}")));
    }
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(SimError::InvalidState(format!("bad time step {dt}")));
    }
    if dt == 0.0 {
        return Ok(*state);
    }
    let ctrl = ctrl.clamped();

    // rates are taken from the state at the start of the step
    let turn_speed = state.airspeed.max(cfg.min_speed);
    let heading_rate = cfg.gravity / turn_speed * state.roll.tan() + cfg.yaw_trim_gain * ctrl.rudder;
    let speed_rate = (ctrl.throttle * cfg.max_thrust
        - cfg.drag_coefficient * state.airspeed * state.airspeed)
        / cfg.mass
        - cfg.gravity * state.pitch.sin();

    let roll = (state.roll + cfg.roll_rate_gain * ctrl.aileron * dt).clamp(-cfg.max_roll, cfg.max_roll);
    let pitch =
        (state.pitch + cfg.pitch_rate_gain * ctrl.elevator * dt).clamp(-cfg.max_pitch, cfg.max_pitch);
    let heading = wrap_angle(state.heading + heading_rate * dt);
    let airspeed = (state.airspeed + speed_rate * dt).clamp(0.0, cfg.max_speed);

    let velocity = velocity_from(airspeed, heading, pitch);
    let next = AircraftState {
        position: state.position + velocity * dt,
        heading,
        pitch,
        roll,
        airspeed,
        velocity,
        acceleration: (velocity - state.velocity) / dt,
        alive: state.alive,
    };
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeGeometry {
    pub distance: f64,
    /// Rate at which the separation shrinks (positive when closing).
    pub closure_rate: f64,
    /// Angle between the ego velocity and the line of sight to the other aircraft.
    pub ao: f64,
    /// Angle between the other velocity and the line of sight back to the ego aircraft.
    pub ta: f64,
    /// `other.altitude - ego.altitude`.
    pub delta_altitude: f64,
    /// `other.heading - ego.heading`, wrapped.
    pub delta_heading: f64,
}

/// Engagement geometry of `other` as seen from `ego`.
pub fn relative_geometry(ego: &AircraftState, other: &AircraftState) -> Result<RelativeGeometry> {
    let los = other.position - ego.position;
    let distance = los.norm();
    if !(distance > 0.0) {
        return Err(SimError::DegenerateGeometry("coincident aircraft positions"));
    }
    let rel_vel = other.velocity - ego.velocity;
    Ok(RelativeGeometry {
        distance,
        closure_rate: -los.dot(rel_vel) / distance,
        ao: ego.velocity.angle_to(los),
        ta: other.velocity.angle_to(-los),
        delta_altitude: other.position.z - ego.position.z,
        delta_heading: wrap_angle(other.heading - ego.heading),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geodetic {
    pub lat: f64,
    pub lon: f64,
    pub alt: f64,
}

/// Equirectangular conversion of a local offset around `(origin_lat, origin_lon)` (radians).
pub fn to_geodetic(local: Vec3, origin_lat: f64, origin_lon: f64) -> Result<Geodetic> {
    if !(origin_lat.abs() < std::f64::consts::FRAC_PI_2) {
        return Err(SimError::InvalidState(format!("origin latitude {origin_lat} out of range")));
    }
    Ok(Geodetic {
        lat: origin_lat + local.x / EARTH_RADIUS,
        lon: origin_lon + local.y / (EARTH_RADIUS * origin_lat.cos()),
        alt: local.z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn cruise() -> AircraftState {
        AircraftState::new(Vec3::new(0.0, 0.0, 6000.0), 0.0, 0.0, 250.0)
    }

    /// Bisection on the thrust/drag balance, independent of `trim_throttle`.
    fn bisect_trim(cfg: &AirframeConfig, speed: f64) -> f64 {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * cfg.max_thrust < cfg.drag_coefficient * speed * speed {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn zero_dt_is_identity() {
        let mut s = cruise();
        s.roll = 0.3;
        let ctrl = ControlInput { aileron: 0.7, elevator: -0.2, rudder: 0.1, throttle: 0.9 };
        let next = step_airframe(&s, &ctrl, &AirframeConfig::default(), 0.0).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn wings_level_keeps_heading() {
        let s = AircraftState::new(Vec3::new(0.0, 0.0, 5000.0), 1.1, 0.05, 230.0);
        let ctrl = ControlInput { throttle: 0.4, ..Default::default() };
        let next = step_airframe(&s, &ctrl, &AirframeConfig::default(), INNER_DT).unwrap();
        assert_eq!(next.heading, s.heading);
    }

    #[test]
    fn trim_throttle_holds_speed() {
        let cfg = AirframeConfig::default();
        let speed = 250.0;
        let throttle = bisect_trim(&cfg, speed);
        assert!((throttle - cfg.trim_throttle(speed, 0.0)).abs() < 1e-12);
        let ctrl = ControlInput { throttle, ..Default::default() };
        let next = step_airframe(&cruise(), &ctrl, &cfg, INNER_DT).unwrap();
        assert!((next.airspeed - speed).abs() < 1e-9);
    }

    #[test]
    fn rejects_non_finite_input() {
        let mut s = cruise();
        s.pitch = f64::NAN;
        let err = step_airframe(&s, &ControlInput::default(), &AirframeConfig::default(), 0.1);
        assert!(matches!(err, Err(SimError::InvalidState(_))));
        let ctrl = ControlInput { aileron: f64::INFINITY, ..Default::default() };
        let err = step_airframe(&cruise(), &ctrl, &AirframeConfig::default(), 0.1);
        assert!(matches!(err, Err(SimError::InvalidState(_))));
    }

    #[test]
    fn attitude_clamps_hold() {
        let cfg = AirframeConfig::default();
        let ctrl = ControlInput { aileron: 1.0, elevator: 1.0, rudder: 0.0, throttle: 1.0 };
        let mut s = cruise();
        for _ in 0..600 {
            s = step_airframe(&s, &ctrl, &cfg, INNER_DT).unwrap();
        }
        assert!((s.roll - cfg.max_roll).abs() < 1e-12);
        assert!((s.pitch - cfg.max_pitch).abs() < 1e-12);
        assert!(s.airspeed <= cfg.max_speed);
    }

    #[test]
    fn level_zero_controls_stay_in_vertical_plane() {
        let cfg = AirframeConfig::default();
        let mut s = cruise();
        for _ in 0..1000 {
            s = step_airframe(&s, &ControlInput::default(), &cfg, INNER_DT).unwrap();
            assert_eq!(s.position.y, 0.0);
        }
    }

    #[test]
    fn idle_throttle_never_gains_speed() {
        let cfg = AirframeConfig::default();
        let mut s = cruise();
        for _ in 0..2000 {
            let next = step_airframe(&s, &ControlInput::default(), &cfg, INNER_DT).unwrap();
            assert!(next.airspeed <= s.airspeed);
            s = next;
        }
    }

    #[test]
    fn step_halving_error_is_second_order() {
        let cfg = AirframeConfig::default();
        let mut s = cruise();
        s.roll = 0.4;
        s.pitch = 0.1;
        s.velocity = velocity_from(s.airspeed, s.heading, s.pitch);
        let ctrl = ControlInput { aileron: 0.2, elevator: 0.1, rudder: 0.3, throttle: 0.8 };
        let gap = |dt: f64| {
            let one = step_airframe(&s, &ctrl, &cfg, dt).unwrap();
            let half = step_airframe(&s, &ctrl, &cfg, dt / 2.0).unwrap();
            let two = step_airframe(&half, &ctrl, &cfg, dt / 2.0).unwrap();
            (one.position - two.position).norm()
                + (one.heading - two.heading).abs()
                + (one.airspeed - two.airspeed).abs()
        };
        let dts = [0.1, 0.05, 0.025, 0.0125];
        for pair in dts.windows(2) {
            let ratio = gap(pair[0]) / gap(pair[1]);
            assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn speed_stays_consistent_with_velocity() {
        let cfg = AirframeConfig::default();
        let mut s = cruise();
        let ctrl = ControlInput { aileron: 0.3, elevator: -0.4, rudder: -0.2, throttle: 1.0 };
        for _ in 0..500 {
            s = step_airframe(&s, &ctrl, &cfg, INNER_DT).unwrap();
            assert!((s.velocity.norm() - s.airspeed).abs() <= 1e-6 * s.airspeed.max(1.0));
            assert!((-PI..PI).contains(&s.heading));
        }
    }

    #[test]
    fn geometry_collinear_and_coaltitude() {
        let ego = cruise();
        let other = AircraftState::new(Vec3::new(5000.0, 0.0, 6000.0), PI, 0.0, 250.0);
        let g = relative_geometry(&ego, &other).unwrap();
        assert_eq!(g.ao, 0.0);
        assert!(g.ta < 1e-12);
        assert_eq!(g.delta_altitude, 0.0);
        assert!((g.closure_rate - 500.0).abs() < 1e-9);
    }

    #[test]
    fn geometry_beam_crossing() {
        // Hand computation: los = (0, 1000, 0), v_rel = (-400, 0, 0),
        // los·v_rel = 0 so nothing closes along the line of sight.
        let ego = AircraftState::new(Vec3::ZERO, 0.0, 0.0, 200.0);
        let other = AircraftState::new(Vec3::new(0.0, 1000.0, 0.0), PI, 0.0, 200.0);
        let g = relative_geometry(&ego, &other).unwrap();
        assert!((g.ao - FRAC_PI_2).abs() < 1e-12);
        assert!((g.ta - FRAC_PI_2).abs() < 1e-12);
        assert!(g.closure_rate.abs() < 1e-9);
        assert!((g.distance - 1000.0).abs() < 1e-12);
        assert!((g.delta_heading + PI).abs() < 1e-12);
    }

    #[test]
    fn geometry_rejects_coincident() {
        let a = cruise();
        assert!(matches!(relative_geometry(&a, &a), Err(SimError::DegenerateGeometry(_))));
    }

    #[test]
    fn geodetic_conversion() {
        let g = to_geodetic(Vec3::ZERO, 0.5, 2.0).unwrap();
        assert_eq!((g.lat, g.lon, g.alt), (0.5, 2.0, 0.0));
        let g = to_geodetic(Vec3::new(EARTH_RADIUS * 1e-3, 0.0, 10.0), 0.5, 2.0).unwrap();
        assert!((g.lat - 0.501).abs() < 1e-15);
        assert_eq!(g.alt, 10.0);
        let g = to_geodetic(Vec3::new(0.0, 1234.0, 0.0), 0.0, 0.1).unwrap();
        assert!((g.lon - (0.1 + 1234.0 / EARTH_RADIUS)).abs() < 1e-15);
        assert!(to_geodetic(Vec3::ZERO, FRAC_PI_2, 0.0).is_err());
    }
}
