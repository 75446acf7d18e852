//! Low-level actuation: turns heading/altitude/speed targets into surface and
//! throttle commands.

use crate::airframe::{AircraftState, AirframeConfig, ControlInput};
use crate::vec3::wrap_angle;

/// Set-points produced by the high-level controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlightTargets {
    pub heading: f64,
    pub altitude: f64,
    pub speed: f64,
}

impl FlightTargets {
    /// Targets equal to the current flight condition.
    pub fn hold(state: &AircraftState) -> Self {
        Self { heading: state.heading, altitude: state.altitude(), speed: state.airspeed }
    }
}

/// Hook for whatever executes high-level targets. The environment owns one per aircraft.
pub trait LowLevelController: Send {
    fn command(&mut self, targets: &FlightTargets, state: &AircraftState, dt: f64) -> ControlInput;

    /// Clears any internal memory at episode start.
    fn reset(&mut self);

    /// Internal memory as plain numbers, for checkpointing.
    fn export_state(&self) -> Vec<f64>;

    fn import_state(&mut self, values: &[f64]);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidGains {
    /// Commanded roll per radian of heading error.
    pub heading_to_roll: f64,
    pub max_bank: f64,
    pub roll_p: f64,
    pub roll_d: f64,
    /// Rudder per radian of heading error.
    pub heading_to_rudder: f64,
    /// Commanded pitch per metre of altitude error.
    pub altitude_to_pitch: f64,
    pub max_climb: f64,
    pub pitch_p: f64,
    pub pitch_d: f64,
    pub speed_p: f64,
    pub speed_i: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            heading_to_roll: 6.0,
            max_bank: 70f64.to_radians(),
            roll_p: 4.0,
            roll_d: 0.05,
            heading_to_rudder: 2.0,
            altitude_to_pitch: 0.0015,
            max_climb: 30f64.to_radians(),
            pitch_p: 4.0,
            pitch_d: 0.05,
            speed_p: 0.05,
            speed_i: 0.01,
        }
    }
}

/// Cascaded PID: heading→roll→aileron, altitude→pitch→elevator, speed→throttle.
#[derive(Debug, Clone, PartialEq)]
pub struct PidCascade {
    pub gains: PidGains,
    pub airframe: AirframeConfig,
    speed_integral: f64,
    last_roll_error: Option<f64>,
    last_pitch_error: Option<f64>,
}

impl PidCascade {
    pub fn new(gains: PidGains, airframe: AirframeConfig) -> Self {
        Self { gains, airframe, speed_integral: 0.0, last_roll_error: None, last_pitch_error: None }
    }

    pub fn speed_integral(&self) -> f64 {
        self.speed_integral
    }
}

impl Default for PidCascade {
    fn default() -> Self {
        Self::new(PidGains::default(), AirframeConfig::default())
    }
}

fn derivative(last: &mut Option<f64>, error: f64, dt: f64) -> f64 {
    let d = match *last {
        Some(prev) if dt > 0.0 => (error - prev) / dt,
        _ => 0.0,
    };
    *last = Some(error);
    d
}

impl LowLevelController for PidCascade {
    fn command(&mut self, targets: &FlightTargets, state: &AircraftState, dt: f64) -> ControlInput {
        let g = &self.gains;

        let heading_error = wrap_angle(targets.heading - state.heading);
        let roll_cmd = (g.heading_to_roll * heading_error).clamp(-g.max_bank, g.max_bank);
        let roll_error = roll_cmd - state.roll;
        let roll_rate = derivative(&mut self.last_roll_error, roll_error, dt);
        let aileron = g.roll_p * roll_error + g.roll_d * roll_rate;
        let rudder = g.heading_to_rudder * heading_error;

        let altitude_error = targets.altitude - state.altitude();
        let pitch_cmd = (g.altitude_to_pitch * altitude_error).clamp(-g.max_climb, g.max_climb);
        let pitch_error = pitch_cmd - state.pitch;
        let pitch_rate = derivative(&mut self.last_pitch_error, pitch_error, dt);
        let elevator = g.pitch_p * pitch_error + g.pitch_d * pitch_rate;

        let speed_error = targets.speed - state.airspeed;
        let feed_forward = self.airframe.trim_throttle(state.airspeed, state.pitch);
        let unclamped = feed_forward + g.speed_p * speed_error + g.speed_i * self.speed_integral;
        let saturated_high = unclamped >= 1.0 && speed_error > 0.0;
        let saturated_low = unclamped <= 0.0 && speed_error < 0.0;
        // anti-windup: freeze the integrator while it would push further into saturation
        if !(saturated_high || saturated_low) {
            self.speed_integral += speed_error * dt;
        }
        let throttle = feed_forward + g.speed_p * speed_error + g.speed_i * self.speed_integral;

        ControlInput { aileron, elevator, rudder, throttle }.clamped()
    }

    fn reset(&mut self) {
        self.speed_integral = 0.0;
        self.last_roll_error = None;
        self.last_pitch_error = None;
    }

    fn export_state(&self) -> Vec<f64> {
        let opt = |v: Option<f64>| match v {
            Some(x) => [1.0, x],
            None => [0.0, 0.0],
        };
        let [a, b] = opt(self.last_roll_error);
        let [c, d] = opt(self.last_pitch_error);
        vec![self.speed_integral, a, b, c, d]
    }

    fn import_state(&mut self, values: &[f64]) {
        if values.len() != 5 {
            return;
        }
        self.speed_integral = values[0];
        self.last_roll_error = (values[1] != 0.0).then_some(values[2]);
        self.last_pitch_error = (values[3] != 0.0).then_some(values[4]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::airframe::{step_airframe, INNER_DT};
    use crate::vec3::Vec3;
    use std::f64::consts::FRAC_PI_2;

    fn cruise() -> AircraftState {
        AircraftState::new(Vec3::new(0.0, 0.0, 6000.0), 0.0, 0.0, 250.0)
    }

    /// Closed-loop simulation; returns the trajectory of states.
    fn fly(targets: FlightTargets, seconds: f64, dt: f64) -> Vec<AircraftState> {
        let mut pid = PidCascade::default();
        let cfg = AirframeConfig::default();
        let mut s = cruise();
        let steps = (seconds / dt).round() as usize;
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            let ctrl = pid.command(&targets, &s, dt);
            s = step_airframe(&s, &ctrl, &cfg, dt).unwrap();
            out.push(s);
        }
        out
    }

    #[test]
    fn zero_error_gives_neutral_surfaces_and_trim() {
        let mut pid = PidCascade::default();
        let s = cruise();
        let ctrl = pid.command(&FlightTargets::hold(&s), &s, INNER_DT);
        assert_eq!(ctrl.aileron, 0.0);
        assert_eq!(ctrl.elevator, 0.0);
        assert_eq!(ctrl.rudder, 0.0);
        assert_eq!(ctrl.throttle, AirframeConfig::default().trim_throttle(250.0, 0.0));
    }

    #[test]
    fn left_turn_commands_left_aileron() {
        let mut pid = PidCascade::default();
        let s = cruise();
        let targets = FlightTargets { heading: -0.3, ..FlightTargets::hold(&s) };
        assert!(pid.command(&targets, &s, INNER_DT).aileron < 0.0);
        let targets = FlightTargets { heading: 0.3, ..FlightTargets::hold(&s) };
        assert!(pid.command(&targets, &s, INNER_DT).aileron > 0.0);
    }

    #[test]
    fn ninety_degree_turn_settles_within_thirty_seconds() {
        // fine-step reference run
        let targets = FlightTargets { heading: FRAC_PI_2, altitude: 6000.0, speed: 250.0 };
        let traj = fly(targets, 30.0, 1.0 / 600.0);
        let settle_window = &traj[traj.len() - 600..];
        for s in settle_window {
            assert!((wrap_angle(FRAC_PI_2 - s.heading)).abs() < 0.05, "heading {}", s.heading);
        }
        // and the production inner step behaves the same
        let traj = fly(targets, 30.0, INNER_DT);
        let last = traj.last().unwrap();
        assert!((wrap_angle(FRAC_PI_2 - last.heading)).abs() < 0.05);
    }

    #[test]
    fn altitude_and_speed_changes_converge() {
        let targets = FlightTargets { heading: 0.0, altitude: 6600.0, speed: 270.0 };
        let traj = fly(targets, 60.0, INNER_DT);
        let last = traj.last().unwrap();
        assert!((last.altitude() - 6600.0).abs() < 10.0, "alt {}", last.altitude());
        assert!((last.airspeed - 270.0).abs() < 2.0, "speed {}", last.airspeed);
    }

    #[test]
    fn state_export_round_trip() {
        let mut pid = PidCascade::default();
        let s = cruise();
        let targets = FlightTargets { heading: 0.5, altitude: 7000.0, speed: 300.0 };
        for _ in 0..10 {
            pid.command(&targets, &s, INNER_DT);
        }
        let mut other = PidCascade::default();
        other.import_state(&pid.export_state());
        assert_eq!(other, pid);
        pid.reset();
        assert_eq!(pid, PidCascade::default());
    }
}
