//! Task environments: spawning, hierarchical command execution, missile
//! bookkeeping, event detection and termination.

pub mod baseline;
pub mod control;
pub mod env;
pub mod observation;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::airframe::{AirframeConfig, ControlInput};
use crate::error::{Result, SimError};
use crate::ordnance::MissileConfig;
use crate::rewards::RewardConfig;
use crate::AgentId;

pub use baseline::pursue_baseline;
pub use control::{FlightTargets, LowLevelController, PidCascade, PidGains};
pub use env::{CombatEnv, Frame, StepOutcome};
pub use observation::{build_observation, observation_len};

/// Heading offsets (rad) selectable by the high-level policy, ascending.
pub const HEADING_OFFSETS: [f64; 7] = [-PI / 3.0, -PI / 6.0, -PI / 12.0, 0.0, PI / 12.0, PI / 6.0, PI / 3.0];
/// Altitude offsets (m).
pub const ALTITUDE_OFFSETS: [f64; 5] = [-2100.0, -600.0, 0.0, 600.0, 2100.0];
/// Speed offsets (m/s).
pub const SPEED_OFFSETS: [f64; 5] = [-60.0, -20.0, 0.0, 20.0, 60.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    SingleControlHeading,
    NoWeapon1v1,
    DodgeMissile1v1,
    ShootMissile1v1,
    NoWeapon2v2,
    ShootMissile2v2,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] = [
        TaskKind::SingleControlHeading,
        TaskKind::NoWeapon1v1,
        TaskKind::DodgeMissile1v1,
        TaskKind::ShootMissile1v1,
        TaskKind::NoWeapon2v2,
        TaskKind::ShootMissile2v2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::SingleControlHeading => "SingleControlHeading",
            TaskKind::NoWeapon1v1 => "NoWeapon1v1",
            TaskKind::DodgeMissile1v1 => "DodgeMissile1v1",
            TaskKind::ShootMissile1v1 => "ShootMissile1v1",
            TaskKind::NoWeapon2v2 => "NoWeapon2v2",
            TaskKind::ShootMissile2v2 => "ShootMissile2v2",
        }
    }

    pub fn num_agents(self) -> usize {
        match self {
            TaskKind::SingleControlHeading => 1,
            TaskKind::NoWeapon1v1 | TaskKind::DodgeMissile1v1 | TaskKind::ShootMissile1v1 => 2,
            TaskKind::NoWeapon2v2 | TaskKind::ShootMissile2v2 => 4,
        }
    }

    pub fn team_size(self) -> usize {
        match self {
            TaskKind::SingleControlHeading => 1,
            _ => self.num_agents() / 2,
        }
    }

    pub fn num_teams(self) -> usize {
        if self.is_combat() {
            2
        } else {
            1
        }
    }

    pub fn team_of(self, agent: AgentId) -> usize {
        agent / self.team_size()
    }

    pub fn team_members(self, team: usize) -> std::ops::Range<AgentId> {
        let n = self.team_size();
        team * n..(team + 1) * n
    }

    pub fn is_combat(self) -> bool {
        self != TaskKind::SingleControlHeading
    }

    /// Missiles exist in this task.
    pub fn has_weapons(self) -> bool {
        matches!(self, TaskKind::DodgeMissile1v1 | TaskKind::ShootMissile1v1 | TaskKind::ShootMissile2v2)
    }

    /// The learning policy decides when to fire.
    pub fn policy_shoots(self) -> bool {
        matches!(self, TaskKind::ShootMissile1v1 | TaskKind::ShootMissile2v2)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        TaskKind::ALL
            .into_iter()
            .find(|t| t.name().to_ascii_lowercase() == key)
            .ok_or_else(|| SimError::InvalidConfig(format!("unknown task '{s}'")))
    }
}

/// Discrete high-level command: offsets from the current heading, altitude and speed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HighLevelAction {
    pub heading_bin: usize,
    pub altitude_bin: usize,
    pub speed_bin: usize,
    /// Fire request; ignored unless the task lets the policy shoot.
    pub shoot: bool,
}

impl HighLevelAction {
    /// Group sizes of the discrete action space, with a trailing fire group when applicable.
    pub fn group_sizes(with_shoot: bool) -> Vec<usize> {
        let mut groups = vec![HEADING_OFFSETS.len(), ALTITUDE_OFFSETS.len(), SPEED_OFFSETS.len()];
        if with_shoot {
            groups.push(2);
        }
        groups
    }

    /// Hold heading, altitude and speed.
    pub fn neutral() -> Self {
        Self { heading_bin: 3, altitude_bin: 2, speed_bin: 2, shoot: false }
    }

    /// Builds an action from per-group indices (`[heading, altitude, speed, (shoot)]`).
    pub fn from_indices(indices: &[usize]) -> Self {
        Self {
            heading_bin: indices.first().copied().unwrap_or(3),
            altitude_bin: indices.get(1).copied().unwrap_or(2),
            speed_bin: indices.get(2).copied().unwrap_or(2),
            shoot: indices.get(3).copied().unwrap_or(0) == 1,
        }
    }

    pub fn validate(&self, agent: AgentId) -> Result<()> {
        let bad = |what: &str, idx: usize, len: usize| SimError::InvalidAction {
            agent,
            reason: format!("{what} bin {idx} out of range 0..{len}"),
        };
        if self.heading_bin >= HEADING_OFFSETS.len() {
            return Err(bad("heading", self.heading_bin, HEADING_OFFSETS.len()));
        }
        if self.altitude_bin >= ALTITUDE_OFFSETS.len() {
            return Err(bad("altitude", self.altitude_bin, ALTITUDE_OFFSETS.len()));
        }
        if self.speed_bin >= SPEED_OFFSETS.len() {
            return Err(bad("speed", self.speed_bin, SPEED_OFFSETS.len()));
        }
        Ok(())
    }
}

/// What one agent submits for a decision step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AgentAction {
    HighLevel(HighLevelAction),
    /// Direct actuation held for the whole decision interval.
    Raw { control: ControlInput, shoot: bool },
}

impl AgentAction {
    pub fn shoot(&self) -> bool {
        match self {
            AgentAction::HighLevel(a) => a.shoot,
            AgentAction::Raw { shoot, .. } => *shoot,
        }
    }
}

/// Beta prior over the probability that a launch ends in a hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaShootPrior {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for BetaShootPrior {
    fn default() -> Self {
        Self { alpha: 10.0, beta: 10.0 }
    }
}

impl BetaShootPrior {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if alpha > 0.0 && beta > 0.0 {
            Ok(Self { alpha, beta })
        } else {
            Err(SimError::InvalidConfig(format!("beta prior needs positive parameters, got ({alpha}, {beta})")))
        }
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn record_hit(&mut self) {
        self.alpha += 1.0;
    }

    pub fn record_miss(&mut self) {
        self.beta += 1.0;
    }
}

/// Fires with probability `policy_shoot_prob · E[hit rate]` under the prior.
pub fn shoot_gate<R: Rng + ?Sized>(policy_shoot_prob: f64, prior: &BetaShootPrior, rng: &mut R) -> bool {
    let p = policy_shoot_prob.clamp(0.0, 1.0) * prior.mean();
    rng.gen::<f64>() < p
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpawnConfig {
    pub center_altitude: f64,
    pub altitude_jitter: f64,
    pub separation: f64,
    pub separation_jitter: f64,
    /// Lateral spacing between wingmen in 2v2 (m).
    pub wingman_offset: f64,
    pub initial_speed: f64,
    /// Randomise altitudes, separation and the bearing of the engagement axis.
    pub randomize: bool,
}

impl Default for SpawnConfig {
    fn default() -> Self {
        Self {
            center_altitude: 6000.0,
            altitude_jitter: 1000.0,
            separation: 14_000.0,
            separation_jitter: 2000.0,
            wingman_offset: 2000.0,
            initial_speed: 250.0,
            randomize: true,
        }
    }
}

/// Launch-gating thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeaponRules {
    /// Policy-requested launches need the target inside this range (m)...
    pub max_range: f64,
    /// ...and inside this off-boresight angle (rad).
    pub max_ao: f64,
    /// Scripted launches (DodgeMissile) and the pursuit baseline use these.
    pub scripted_range: f64,
    pub scripted_ao: f64,
    pub scripted_cooldown: f64,
}

impl Default for WeaponRules {
    fn default() -> Self {
        Self {
            max_range: 12_000.0,
            max_ao: 60f64.to_radians(),
            scripted_range: 8000.0,
            scripted_ao: 30f64.to_radians(),
            scripted_cooldown: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub task: TaskKind,
    /// Inner physics steps per agent decision.
    pub decision_interval: usize,
    pub max_decision_steps: usize,
    pub spawn: SpawnConfig,
    pub reward: RewardConfig,
    pub missile: MissileConfig,
    pub airframe: AirframeConfig,
    pub pid: PidGains,
    pub weapons: WeaponRules,
    pub missiles_per_aircraft: u32,
    pub shoot_prior: BetaShootPrior,
    /// SingleControlHeading: decisions between target-heading redraws (0 = never).
    pub heading_switch_interval: usize,
    pub seed: u64,
}

impl EnvConfig {
    pub fn new(task: TaskKind) -> Self {
        Self {
            task,
            decision_interval: 12,
            max_decision_steps: 1000,
            spawn: SpawnConfig::default(),
            reward: RewardConfig::default(),
            missile: MissileConfig::default(),
            airframe: AirframeConfig::default(),
            pid: PidGains::default(),
            weapons: WeaponRules::default(),
            missiles_per_aircraft: 4,
            shoot_prior: BetaShootPrior::default(),
            heading_switch_interval: 250,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.decision_interval < 1 || self.max_decision_steps < 1 {
            return Err(SimError::InvalidConfig(
                "decision_interval and max_decision_steps must be at least 1".into(),
            ));
        }
        if !(self.shoot_prior.alpha > 0.0 && self.shoot_prior.beta > 0.0) {
            return Err(SimError::InvalidConfig("shoot prior parameters must be positive".into()));
        }
        if self.pid.max_bank >= self.airframe.max_roll {
            return Err(SimError::InvalidConfig("pid.max_bank must stay below airframe.max_roll".into()));
        }
        self.airframe.validate()?;
        self.missile.validate()?;
        self.reward.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn task_names_round_trip() {
        for t in TaskKind::ALL {
            assert_eq!(t.name().parse::<TaskKind>().unwrap(), t);
        }
        assert_eq!("noweapon_2v2".parse::<TaskKind>().unwrap(), TaskKind::NoWeapon2v2);
        assert!("dogfight".parse::<TaskKind>().is_err());
    }

    #[test]
    fn teams_partition_agents() {
        let t = TaskKind::ShootMissile2v2;
        assert_eq!(t.team_members(0), 0..2);
        assert_eq!(t.team_members(1), 2..4);
        assert_eq!(t.team_of(3), 1);
        assert_eq!(TaskKind::SingleControlHeading.num_teams(), 1);
    }

    #[test]
    fn zero_bins_are_neutral() {
        let a = HighLevelAction::neutral();
        assert_eq!(HEADING_OFFSETS[a.heading_bin], 0.0);
        assert_eq!(ALTITUDE_OFFSETS[a.altitude_bin], 0.0);
        assert_eq!(SPEED_OFFSETS[a.speed_bin], 0.0);
        assert!(HighLevelAction { heading_bin: 7, ..a }.validate(0).is_err());
    }

    #[test]
    fn shoot_gate_zero_probability_never_fires() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let prior = BetaShootPrior::default();
        assert!((0..10_000).all(|_| !shoot_gate(0.0, &prior, &mut rng)));
    }

    #[test]
    fn shoot_gate_fire_rate_follows_posterior_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let prior = BetaShootPrior::default();
        assert_eq!(prior.mean(), 0.5);
        let n = 200_000;
        let fired = (0..n).filter(|_| shoot_gate(0.6, &prior, &mut rng)).count() as f64 / n as f64;
        // expected 0.3; binomial sd ≈ 0.001
        assert!((fired - 0.3).abs() < 0.005, "{fired}");
    }

    #[test]
    fn conjugate_update_counts() {
        let mut prior = BetaShootPrior::default();
        for _ in 0..5 {
            prior.record_hit();
        }
        assert_eq!(prior.mean(), 0.6);
        prior.record_miss();
        assert_eq!((prior.alpha, prior.beta), (15.0, 11.0));
        assert!(BetaShootPrior::new(0.0, 1.0).is_err());
    }
}
