//! Run configuration: flat `key = value` text with dotted sections.
//!
//! Every tunable lives in one field table, so parsing, command-line overrides
//! and the canonical rendering used for checkpoint digests cannot drift apart.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use dogfight_core::arena::{EnvConfig, TaskKind};
use dogfight_learn::happo::HappoConfig;
use dogfight_learn::hasac::HasacConfig;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProtocolKind {
    SelfPlay,
    HierarchySelfplay,
    VsBaseline,
    HierarchyVsBaseline,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 4] =
        [ProtocolKind::SelfPlay, ProtocolKind::HierarchySelfplay, ProtocolKind::VsBaseline, ProtocolKind::HierarchyVsBaseline];

    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::SelfPlay => "SelfPlay",
            ProtocolKind::HierarchySelfplay => "HierarchySelfplay",
            ProtocolKind::VsBaseline => "VsBaseline",
            ProtocolKind::HierarchyVsBaseline => "HierarchyVsBaseline",
        }
    }

    /// Learners emit discrete high-level commands flown by the PID cascade.
    pub fn is_hierarchical(self) -> bool {
        matches!(self, ProtocolKind::HierarchySelfplay | ProtocolKind::HierarchyVsBaseline)
    }

    /// The second team is flown by the scripted pursuit baseline.
    pub fn against_baseline(self) -> bool {
        matches!(self, ProtocolKind::VsBaseline | ProtocolKind::HierarchyVsBaseline)
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProtocolKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        let key = normalize_name(s);
        ProtocolKind::ALL
            .into_iter()
            .find(|p| normalize_name(p.name()) == key)
            .ok_or_else(|| HarnessError::Config(format!("unknown protocol '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Happo,
    Hasac,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Happo => "happo",
            Algorithm::Hasac => "hasac",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match normalize_name(s).as_str() {
            "happo" => Ok(Algorithm::Happo),
            "hasac" => Ok(Algorithm::Hasac),
            _ => Err(HarnessError::Config(format!("unknown algorithm '{s}'"))),
        }
    }
}

fn normalize_name(s: &str) -> String {
    s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: TaskKind,
    pub protocol: ProtocolKind,
    pub algorithm: Algorithm,
    pub seeds: Vec<u64>,
    pub total_timesteps: u64,
    /// HAPPO: decision steps collected per environment per iteration.
    pub rollout_length: usize,
    /// Parallel environment instances feeding one trainer.
    pub num_envs: usize,
    /// Environment steps between evaluations (0 disables evaluation).
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// Environment steps between periodic checkpoints (0 = final checkpoint only).
    pub checkpoint_interval: u64,
    /// HASAC: environment steps between training metrics rows.
    pub log_interval: u64,
    /// Fire decision in the policy output; `None` follows the task.
    pub shoot_head: Option<bool>,
    pub out_dir: PathBuf,
    pub env: EnvConfig,
    pub happo: HappoConfig,
    pub hasac: HasacConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::new(TaskKind::NoWeapon1v1, ProtocolKind::HierarchySelfplay, Algorithm::Happo)
    }
}

/// Keys that do not influence learned state and so stay out of the digest.
const DIGEST_EXCLUDED: [&str; 4] = ["seeds", "total_timesteps", "checkpoint_interval", "out_dir"];

impl RunConfig {
    pub fn new(task: TaskKind, protocol: ProtocolKind, algorithm: Algorithm) -> Self {
        Self {
            task,
            protocol,
            algorithm,
            seeds: vec![1],
            total_timesteps: 1_000_000,
            rollout_length: 200,
            num_envs: 4,
            eval_interval: 20_000,
            eval_episodes: 32,
            checkpoint_interval: 0,
            log_interval: 1000,
            shoot_head: None,
            out_dir: PathBuf::from("runs"),
            env: EnvConfig::new(task),
            happo: HappoConfig::default(),
            hasac: HasacConfig::default(),
        }
    }

    /// Parses a configuration file over the defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected key = value", lineno + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| HarnessError::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    /// Sets one field by its dotted key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut fields = self.fields();
        let (_, slot) = fields
            .iter_mut()
            .find(|(k, _)| *k == key)
            .ok_or_else(|| HarnessError::Config(format!("unknown key '{key}'")))?;
        slot.parse_into(value).map_err(|e| HarnessError::Config(format!("{key}: {e}")))?;
        drop(fields);
        if key == "task" {
            self.env.task = self.task;
        }
        Ok(())
    }

    /// Reads one field rendered as text.
    pub fn get(&self, key: &str) -> Option<String> {
        self.clone().fields().into_iter().find(|(k, _)| *k == key).map(|(_, v)| v.render())
    }

    /// Every key in canonical order.
    pub fn keys() -> Vec<&'static str> {
        Self::default().fields().into_iter().map(|(k, _)| k).collect()
    }

    /// Canonical text form; parsing it reproduces this configuration.
    pub fn render(&self) -> String {
        self.clone().fields().into_iter().map(|(k, v)| format!("{k} = {}\n", v.render())).collect()
    }

    /// Identity of everything that shapes learned state for one seed.
    pub fn digest(&self, seed: u64) -> [u8; 32] {
        let mut h = Sha256::new();
        for (k, v) in self.clone().fields() {
            if !DIGEST_EXCLUDED.contains(&k) {
                h.update(format!("{k}={}\n", v.render()).as_bytes());
            }
        }
        h.update(format!("seed={seed}\n").as_bytes());
        h.finalize().into()
    }

    /// Whether the learners' policies include the fire decision.
    pub fn uses_shoot_head(&self) -> bool {
        self.shoot_head.unwrap_or_else(|| self.task.policy_shoots())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.rollout_length == 0 || self.num_envs == 0 || self.eval_episodes == 0 || self.log_interval == 0 {
            return bad("rollout_length, num_envs, eval_episodes and log_interval must be positive");
        }
        if self.env.task != self.task {
            return bad("env task differs from run task");
        }
        if !self.task.is_combat() && self.protocol.against_baseline() {
            return bad("baseline protocols need a combat task");
        }
        if self.shoot_head == Some(true) && !self.task.policy_shoots() {
            return Err(HarnessError::Config(format!("task {} has no policy-fired weapons; shoot head rejected", self.task)));
        }
        self.env.validate()?;
        match self.algorithm {
            Algorithm::Happo => self.happo.validate()?,
            Algorithm::Hasac => self.hasac.validate()?,
        }
        Ok(())
    }

    fn fields(&mut self) -> Vec<(&'static str, &mut dyn ConfigValue)> {
        let e = &mut self.env;
        let (sp, rw, ms, af, pid, wp) =
            (&mut e.spawn, &mut e.reward, &mut e.missile, &mut e.airframe, &mut e.pid, &mut e.weapons);
        let (hp, hs) = (&mut self.happo, &mut self.hasac);
        vec![
            ("task", &mut self.task),
            ("protocol", &mut self.protocol),
            ("algorithm", &mut self.algorithm),
            ("seeds", &mut self.seeds),
            ("total_timesteps", &mut self.total_timesteps),
            ("rollout_length", &mut self.rollout_length),
            ("num_envs", &mut self.num_envs),
            ("eval_interval", &mut self.eval_interval),
            ("eval_episodes", &mut self.eval_episodes),
            ("checkpoint_interval", &mut self.checkpoint_interval),
            ("log_interval", &mut self.log_interval),
            ("shoot_head", &mut self.shoot_head),
            ("out_dir", &mut self.out_dir),
            ("env.decision_interval", &mut e.decision_interval),
            ("env.max_decision_steps", &mut e.max_decision_steps),
            ("env.heading_switch_interval", &mut e.heading_switch_interval),
            ("env.missiles_per_aircraft", &mut e.missiles_per_aircraft),
            ("shoot_prior.alpha", &mut e.shoot_prior.alpha),
            ("shoot_prior.beta", &mut e.shoot_prior.beta),
            ("spawn.center_altitude", &mut sp.center_altitude),
            ("spawn.altitude_jitter", &mut sp.altitude_jitter),
            ("spawn.separation", &mut sp.separation),
            ("spawn.separation_jitter", &mut sp.separation_jitter),
            ("spawn.wingman_offset", &mut sp.wingman_offset),
            ("spawn.initial_speed", &mut sp.initial_speed),
            ("spawn.randomize", &mut sp.randomize),
            ("reward.safe_altitude", &mut rw.safe_altitude),
            ("reward.danger_altitude", &mut rw.danger_altitude),
            ("reward.safe_speed", &mut rw.safe_speed),
            ("reward.range_inner_km", &mut rw.range_inner_km),
            ("reward.range_outer_km", &mut rw.range_outer_km),
            ("reward.range_far_km", &mut rw.range_far_km),
            ("reward.far_penalty_floor", &mut rw.far_penalty_floor),
            ("reward.event_kill", &mut rw.event_kill),
            ("reward.event_death", &mut rw.event_death),
            ("reward.event_crash", &mut rw.event_crash),
            ("reward.weight_altitude", &mut rw.weight_altitude),
            ("reward.weight_posture", &mut rw.weight_posture),
            ("reward.credit_crash_as_kill", &mut rw.credit_crash_as_kill),
            ("missile.nav_constant", &mut ms.nav_constant),
            ("missile.boost_thrust", &mut ms.boost_thrust),
            ("missile.boost_duration", &mut ms.boost_duration),
            ("missile.mass", &mut ms.mass),
            ("missile.drag_coefficient", &mut ms.drag_coefficient),
            ("missile.max_lateral_g", &mut ms.max_lateral_g),
            ("missile.explosive_radius", &mut ms.explosive_radius),
            ("missile.lifespan", &mut ms.lifespan),
            ("airframe.mass", &mut af.mass),
            ("airframe.max_thrust", &mut af.max_thrust),
            ("airframe.drag_coefficient", &mut af.drag_coefficient),
            ("airframe.roll_rate_gain", &mut af.roll_rate_gain),
            ("airframe.pitch_rate_gain", &mut af.pitch_rate_gain),
            ("airframe.yaw_trim_gain", &mut af.yaw_trim_gain),
            ("airframe.min_speed", &mut af.min_speed),
            ("airframe.max_speed", &mut af.max_speed),
            ("airframe.max_roll", &mut af.max_roll),
            ("airframe.max_pitch", &mut af.max_pitch),
            ("airframe.gravity", &mut af.gravity),
            ("pid.heading_to_roll", &mut pid.heading_to_roll),
            ("pid.max_bank", &mut pid.max_bank),
            ("pid.roll_p", &mut pid.roll_p),
            ("pid.roll_d", &mut pid.roll_d),
            ("pid.heading_to_rudder", &mut pid.heading_to_rudder),
            ("pid.altitude_to_pitch", &mut pid.altitude_to_pitch),
            ("pid.max_climb", &mut pid.max_climb),
            ("pid.pitch_p", &mut pid.pitch_p),
            ("pid.pitch_d", &mut pid.pitch_d),
            ("pid.speed_p", &mut pid.speed_p),
            ("pid.speed_i", &mut pid.speed_i),
            ("weapons.max_range", &mut wp.max_range),
            ("weapons.max_ao", &mut wp.max_ao),
            ("weapons.scripted_range", &mut wp.scripted_range),
            ("weapons.scripted_ao", &mut wp.scripted_ao),
            ("weapons.scripted_cooldown", &mut wp.scripted_cooldown),
            ("happo.gamma", &mut hp.gamma),
            ("happo.gae_lambda", &mut hp.gae_lambda),
            ("happo.clip", &mut hp.clip),
            ("happo.epochs", &mut hp.epochs),
            ("happo.minibatches", &mut hp.minibatches),
            ("happo.actor_lr", &mut hp.actor_lr),
            ("happo.critic_lr", &mut hp.critic_lr),
            ("happo.entropy_coef", &mut hp.entropy_coef),
            ("happo.value_coef", &mut hp.value_coef),
            ("happo.max_grad_norm", &mut hp.max_grad_norm),
            ("happo.normalize_advantages", &mut hp.normalize_advantages),
            ("happo.randomize_order", &mut hp.randomize_order),
            ("happo.hidden", &mut hp.hidden),
            ("hasac.gamma", &mut hs.gamma),
            ("hasac.tau", &mut hs.tau),
            ("hasac.init_alpha", &mut hs.init_alpha),
            ("hasac.auto_alpha", &mut hs.auto_alpha),
            ("hasac.target_entropy_scale", &mut hs.target_entropy_scale),
            ("hasac.batch_size", &mut hs.batch_size),
            ("hasac.warmup_steps", &mut hs.warmup_steps),
            ("hasac.updates_per_step", &mut hs.updates_per_step),
            ("hasac.critic_lr", &mut hs.critic_lr),
            ("hasac.actor_lr", &mut hs.actor_lr),
            ("hasac.alpha_lr", &mut hs.alpha_lr),
            ("hasac.capacity", &mut hs.capacity),
            ("hasac.max_grad_norm", &mut hs.max_grad_norm),
            ("hasac.log_alpha_min", &mut hs.log_alpha_min),
            ("hasac.log_alpha_max", &mut hs.log_alpha_max),
            ("hasac.reward_scale", &mut hs.reward_scale),
            ("hasac.hidden", &mut hs.hidden),
        ]
    }
}

/// A configuration slot that can be parsed from and rendered to text.
trait ConfigValue {
    fn parse_into(&mut self, s: &str) -> std::result::Result<(), String>;
    fn render(&self) -> String;
}

macro_rules! scalar_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_into(&mut self, s: &str) -> std::result::Result<(), String> {
                *self = s.parse().map_err(|e| format!("cannot parse '{s}': {e}"))?;
                Ok(())
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

scalar_value!(f64, usize, u32, u64, bool, TaskKind, ProtocolKind, Algorithm);

macro_rules! list_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for Vec<$t> {
            fn parse_into(&mut self, s: &str) -> std::result::Result<(), String> {
                *self = s
                    .split(',')
                    .map(str::trim)
                    .filter(|p| !p.is_empty())
                    .map(|p| p.parse().map_err(|e| format!("cannot parse '{p}': {e}")))
                    .collect::<std::result::Result<_, _>>()?;
                Ok(())
            }
            fn render(&self) -> String {
                self.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
            }
        }
    )*};
}

list_value!(usize, u64);

impl ConfigValue for Option<bool> {
    fn parse_into(&mut self, s: &str) -> std::result::Result<(), String> {
        *self = match s {
            "auto" => None,
            _ => Some(s.parse().map_err(|_| format!("expected auto, true or false, got '{s}'"))?),
        };
        Ok(())
    }

    fn render(&self) -> String {
        self.map_or_else(|| "auto".to_string(), |b| b.to_string())
    }
}

impl ConfigValue for PathBuf {
    fn parse_into(&mut self, s: &str) -> std::result::Result<(), String> {
        *self = PathBuf::from(s);
        Ok(())
    }

    fn render(&self) -> String {
        self.display().to_string()
    }
}
