use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::control::{FlightTargets, LowLevelController, PidCascade};
use super::observation::{build_observation, World};
use super::{
    shoot_gate, AgentAction, BetaShootPrior, EnvConfig, TaskKind, ALTITUDE_OFFSETS, HEADING_OFFSETS,
    SPEED_OFFSETS,
};
use crate::airframe::{relative_geometry, step_airframe, AircraftState, INNER_DT};
use crate::error::{Result, SimError};
use crate::ordnance::{launch_missile, step_missile, MissileState, MissileStatus};
use crate::rewards::{altitude_reward, event_reward, posture_reward, CombatEvent, RewardBreakdown};
use crate::snapshot::{rng_from_f64s, rng_to_f64s, take, NamedArrays};
use crate::vec3::{wrap_angle, Vec3};
use crate::AgentId;

/// World state after one inner physics step, for trajectory export.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub time: f64,
    pub aircraft: Vec<AircraftState>,
    pub missiles: Vec<MissileState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observations: Vec<Vec<f64>>,
    pub rewards: Vec<RewardBreakdown>,
    pub dones: Vec<bool>,
    pub episode_done: bool,
    /// The episode ended on the decision cap rather than by elimination.
    pub truncated: bool,
    pub events: Vec<CombatEvent>,
    /// Accumulated reward totals for the episode so far, per agent.
    pub episode_rewards: Vec<f64>,
    pub step_count: usize,
    /// Inner physics steps simulated in this decision step.
    pub inner_steps: usize,
}

/// One combat (or single-aircraft control) environment instance.
///
/// Not shareable while stepping; run independent instances on independent workers.
pub struct CombatEnv {
    cfg: EnvConfig,
    rng: ChaCha8Rng,
    aircraft: Vec<AircraftState>,
    controllers: Vec<Box<dyn LowLevelController>>,
    missiles: Vec<MissileState>,
    ammo: Vec<u32>,
    priors: Vec<BetaShootPrior>,
    last_launch: Vec<f64>,
    reported_done: Vec<bool>,
    episode_rewards: Vec<f64>,
    tracking: Option<FlightTargets>,
    time: f64,
    steps: usize,
    episode_done: bool,
    recording: bool,
    frames: Vec<Frame>,
}

impl CombatEnv {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.task.num_agents();
        let controllers = (0..n)
            .map(|_| Box::new(PidCascade::new(cfg.pid, cfg.airframe)) as Box<dyn LowLevelController>)
            .collect();
        let mut env = Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            aircraft: Vec::new(),
            controllers,
            missiles: Vec::new(),
            ammo: Vec::new(),
            priors: Vec::new(),
            last_launch: Vec::new(),
            reported_done: Vec::new(),
            episode_rewards: Vec::new(),
            tracking: None,
            time: 0.0,
            steps: 0,
            episode_done: false,
            recording: false,
            frames: Vec::new(),
            cfg,
        };
        env.reset(env.cfg.seed);
        Ok(env)
    }

    /// Replaces the low-level controllers (one per aircraft).
    pub fn set_controllers(&mut self, controllers: Vec<Box<dyn LowLevelController>>) -> Result<()> {
        if controllers.len() != self.num_agents() {
            return Err(SimError::InvalidConfig("one controller per aircraft required".into()));
        }
        self.controllers = controllers;
        Ok(())
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn task(&self) -> TaskKind {
        self.cfg.task
    }

    pub fn num_agents(&self) -> usize {
        self.cfg.task.num_agents()
    }

    pub fn aircraft(&self) -> &[AircraftState] {
        &self.aircraft
    }

    pub fn missiles(&self) -> &[MissileState] {
        &self.missiles
    }

    pub fn ammo(&self) -> &[u32] {
        &self.ammo
    }

    pub fn priors(&self) -> &[BetaShootPrior] {
        &self.priors
    }

    pub fn tracking_targets(&self) -> Option<FlightTargets> {
        self.tracking
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn step_count(&self) -> usize {
        self.steps
    }

    pub fn is_episode_done(&self) -> bool {
        self.episode_done
    }

    /// Mutable access for scenario setup in tests and tools.
    pub fn aircraft_mut(&mut self) -> &mut [AircraftState] {
        &mut self.aircraft
    }

    /// Records one [`Frame`] per inner step until disabled.
    pub fn set_recording(&mut self, on: bool) {
        self.recording = on;
    }

    pub fn take_frames(&mut self) -> Vec<Frame> {
        std::mem::take(&mut self.frames)
    }

    /// Starts a new episode. Deterministic in `(config, seed)`.
    pub fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.num_agents();
        self.aircraft = self.spawn();
        self.missiles.clear();
        let ammo = if self.cfg.task.has_weapons() { self.cfg.missiles_per_aircraft } else { 0 };
        self.ammo = vec![ammo; n];
        self.priors = vec![self.cfg.shoot_prior; n];
        self.last_launch = vec![f64::NEG_INFINITY; n];
        self.reported_done = vec![false; n];
        self.episode_rewards = vec![0.0; n];
        for c in &mut self.controllers {
            c.reset();
        }
        self.time = 0.0;
        self.steps = 0;
        self.episode_done = false;
        self.frames.clear();
        self.tracking = (self.cfg.task == TaskKind::SingleControlHeading).then(|| FlightTargets {
            heading: self.rng.gen_range(-PI..PI),
            altitude: self.aircraft[0].altitude(),
            speed: self.aircraft[0].airspeed,
        });
        self.observations()
    }

    fn spawn(&mut self) -> Vec<AircraftState> {
        let s = self.cfg.spawn;
        let task = self.cfg.task;
        let speed = s.initial_speed;
        let rng = &mut self.rng;
        let altitude = |rng: &mut ChaCha8Rng| {
            if s.randomize && s.altitude_jitter > 0.0 {
                s.center_altitude + rng.gen_range(-s.altitude_jitter..=s.altitude_jitter)
            } else {
                s.center_altitude
            }
        };
        if task == TaskKind::SingleControlHeading {
            let heading = if s.randomize { rng.gen_range(-PI..PI) } else { 0.0 };
            let alt = altitude(rng);
            return vec![AircraftState::new(Vec3::new(0.0, 0.0, alt), heading, 0.0, speed)];
        }
        let separation = if s.randomize && s.separation_jitter > 0.0 {
            s.separation + rng.gen_range(-s.separation_jitter..=s.separation_jitter)
        } else {
            s.separation
        };
        let bearing = if s.randomize { rng.gen_range(-PI..PI) } else { 0.0 };
        let axis = Vec3::new(bearing.cos(), bearing.sin(), 0.0);
        let lateral = Vec3::new(-bearing.sin(), bearing.cos(), 0.0);
        let per_team = task.team_size();
        let mut out = Vec::with_capacity(task.num_agents());
        for team in 0..2 {
            let side = if team == 0 { -0.5 } else { 0.5 };
            let heading = if team == 0 { bearing } else { wrap_angle(bearing + PI) };
            for k in 0..per_team {
                let spread = if per_team > 1 {
                    (k as f64 - (per_team as f64 - 1.0) / 2.0) * s.wingman_offset
                } else {
                    0.0
                };
                let mut pos = axis * (side * separation) + lateral * spread;
                pos.z = altitude(rng);
                out.push(AircraftState::new(pos, heading, 0.0, speed));
            }
        }
        out
    }

    pub fn observations(&self) -> Vec<Vec<f64>> {
        let world = World {
            task: self.cfg.task,
            aircraft: &self.aircraft,
            missiles: &self.missiles,
            targets: self.tracking,
        };
        (0..self.num_agents()).map(|i| build_observation(i, &world)).collect()
    }

    fn enemies_of(&self, agent: AgentId) -> impl Iterator<Item = AgentId> + '_ {
        let task = self.cfg.task;
        let team = task.team_of(agent);
        (0..task.num_agents()).filter(move |&j| task.team_of(j) != team)
    }

    /// Closest living enemy of `agent`.
    pub fn nearest_enemy(&self, agent: AgentId) -> Option<AgentId> {
        let me = self.aircraft[agent].position;
        self.enemies_of(agent)
            .filter(|&j| self.aircraft[j].alive)
            .min_by(|&a, &b| {
                let da = (self.aircraft[a].position - me).norm();
                let db = (self.aircraft[b].position - me).norm();
                da.total_cmp(&db)
            })
    }

    fn team_eliminated(&self) -> bool {
        let task = self.cfg.task;
        (0..task.num_teams()).any(|t| task.team_members(t).all(|i| !self.aircraft[i].alive))
    }

    fn validate_actions(&self, actions: &[AgentAction]) -> Result<()> {
        if actions.len() != self.num_agents() {
            return Err(SimError::InvalidAction {
                agent: actions.len(),
                reason: format!("expected {} actions, got {}", self.num_agents(), actions.len()),
            });
        }
        for (i, a) in actions.iter().enumerate() {
            if !self.aircraft[i].alive {
                continue;
            }
            match a {
                AgentAction::HighLevel(h) => h.validate(i)?,
                AgentAction::Raw { control, .. } => {
                    if !control.is_finite() {
                        return Err(SimError::InvalidAction { agent: i, reason: "non-finite raw control".into() });
                    }
                }
            }
        }
        Ok(())
    }

    fn launch_phase(&mut self, actions: &[AgentAction]) -> Result<()> {
        let task = self.cfg.task;
        if !task.has_weapons() {
            return Ok(());
        }
        let rules = self.cfg.weapons;
        for i in 0..self.num_agents() {
            if !self.aircraft[i].alive || self.ammo[i] == 0 {
                continue;
            }
            let Some(target) = self.nearest_enemy(i) else { continue };
            let Ok(g) = relative_geometry(&self.aircraft[i], &self.aircraft[target]) else { continue };
            let fire = if task.policy_shoots() {
                actions[i].shoot()
                    && g.distance < rules.max_range
                    && g.ao < rules.max_ao
                    && shoot_gate(1.0, &self.priors[i], &mut self.rng)
            } else {
                // scripted launches from the far team only
                task.team_of(i) == 1
                    && g.distance < rules.scripted_range
                    && g.ao < rules.scripted_ao
                    && self.time - self.last_launch[i] >= rules.scripted_cooldown
            };
            if fire {
                self.missiles.push(launch_missile(&self.aircraft[i], i, target)?);
                self.ammo[i] -= 1;
                self.last_launch[i] = self.time;
            }
        }
        Ok(())
    }

    fn step_missiles(&mut self, events: &mut Vec<CombatEvent>) -> Result<()> {
        for k in 0..self.missiles.len() {
            let m = self.missiles[k];
            if !m.is_flying() {
                continue;
            }
            let target = self.aircraft[m.target_id];
            let next = if target.alive {
                step_missile(&m, &target, &self.cfg.missile, INNER_DT)?
            } else {
                MissileState { status: MissileStatus::Expired, ..m }
            };
            match next.status {
                MissileStatus::Hit => {
                    self.aircraft[m.target_id].alive = false;
                    events.push(CombatEvent::shot_down(m.target_id, m.shooter_id));
                    events.push(CombatEvent::kill(m.shooter_id, m.target_id));
                    self.priors[m.shooter_id].record_hit();
                }
                MissileStatus::Expired => self.priors[m.shooter_id].record_miss(),
                MissileStatus::Flying => {}
            }
            self.missiles[k] = next;
        }
        Ok(())
    }

    /// Advances one decision step. Actions for dead aircraft are ignored.
    pub fn step(&mut self, actions: &[AgentAction]) -> Result<StepOutcome> {
        if self.episode_done {
            return Err(SimError::InvalidState("episode finished; reset before stepping".into()));
        }
        self.validate_actions(actions)?;
        let n = self.num_agents();
        let airframe = self.cfg.airframe;

        let targets: Vec<Option<FlightTargets>> = (0..n)
            .map(|i| match actions[i] {
                _ if !self.aircraft[i].alive => None,
                AgentAction::HighLevel(h) => {
                    let s = &self.aircraft[i];
                    Some(FlightTargets {
                        heading: wrap_angle(s.heading + HEADING_OFFSETS[h.heading_bin]),
                        altitude: s.altitude() + ALTITUDE_OFFSETS[h.altitude_bin],
                        speed: (s.airspeed + SPEED_OFFSETS[h.speed_bin]).clamp(airframe.min_speed, airframe.max_speed),
                    })
                }
                AgentAction::Raw { .. } => None,
            })
            .collect();

        self.launch_phase(actions)?;

        let mut events = Vec::new();
        let mut inner_steps = 0;
        for _ in 0..self.cfg.decision_interval {
            self.step_missiles(&mut events)?;
            for i in 0..n {
                if !self.aircraft[i].alive {
                    continue;
                }
                let state = self.aircraft[i];
                let ctrl = match (&actions[i], targets[i]) {
                    (AgentAction::Raw { control, .. }, _) => *control,
                    (_, Some(t)) => self.controllers[i].command(&t, &state, INNER_DT),
                    (_, None) => unreachable!("living aircraft with high-level actions have targets"),
                };
                let next = step_airframe(&state, &ctrl, &airframe, INNER_DT)?;
                self.aircraft[i] = next;
                if next.altitude() <= 0.0 {
                    self.aircraft[i].alive = false;
                    events.push(CombatEvent::crash(i));
                    if self.cfg.reward.credit_crash_as_kill {
                        if let Some(enemy) = self.nearest_enemy(i) {
                            events.push(CombatEvent::kill(enemy, i));
                        }
                    }
                }
            }
            self.time += INNER_DT;
            inner_steps += 1;
            if self.recording {
                self.frames.push(Frame {
                    time: self.time,
                    aircraft: self.aircraft.clone(),
                    missiles: self.missiles.clone(),
                });
            }
            let finished = if self.cfg.task.is_combat() { self.team_eliminated() } else { !self.aircraft[0].alive };
            if finished {
                break;
            }
        }
        self.steps += 1;

        if let (Some(t), k) = (self.tracking.as_mut(), self.cfg.heading_switch_interval) {
            if k > 0 && self.steps % k == 0 {
                t.heading = self.rng.gen_range(-PI..PI);
            }
        }

        let rewards: Vec<RewardBreakdown> = (0..n).map(|i| self.reward_for(i, &events)).collect();
        for i in 0..n {
            self.episode_rewards[i] += rewards[i].total;
            if !self.aircraft[i].alive {
                self.reported_done[i] = true;
            }
        }

        let terminated =
            if self.cfg.task.is_combat() { self.team_eliminated() } else { !self.aircraft[0].alive };
        let truncated = !terminated && self.steps >= self.cfg.max_decision_steps;
        self.episode_done = terminated || truncated;
        let dones = (0..n).map(|i| self.episode_done || !self.aircraft[i].alive).collect();

        Ok(StepOutcome {
            observations: self.observations(),
            rewards,
            dones,
            episode_done: self.episode_done,
            truncated,
            events,
            episode_rewards: self.episode_rewards.clone(),
            step_count: self.steps,
            inner_steps,
        })
    }

    fn reward_for(&self, agent: AgentId, events: &[CombatEvent]) -> RewardBreakdown {
        if self.reported_done[agent] {
            return RewardBreakdown::default();
        }
        let cfg = &self.cfg.reward;
        let me = &self.aircraft[agent];
        let posture = if !me.alive {
            0.0
        } else if let Some(t) = self.tracking {
            -wrap_angle(t.heading - me.heading).abs() / PI
        } else {
            self.nearest_enemy(agent)
                .and_then(|e| relative_geometry(me, &self.aircraft[e]).ok())
                .map_or(0.0, |g| posture_reward(&g, cfg))
        };
        RewardBreakdown::compose(altitude_reward(me, cfg), posture, event_reward(events, agent, cfg), cfg)
    }

    /// Full mutable state as named arrays (prefixed by `prefix`).
    pub fn export_state(&self, prefix: &str) -> NamedArrays {
        let name = |s: &str| format!("{prefix}{s}");
        let aircraft = self
            .aircraft
            .iter()
            .flat_map(|a| {
                [
                    a.position.x, a.position.y, a.position.z, a.heading, a.pitch, a.roll, a.airspeed,
                    a.velocity.x, a.velocity.y, a.velocity.z, a.acceleration.x, a.acceleration.y,
                    a.acceleration.z, a.alive as u8 as f64,
                ]
            })
            .collect();
        let missiles = self
            .missiles
            .iter()
            .flat_map(|m| {
                [
                    m.position.x, m.position.y, m.position.z, m.velocity.x, m.velocity.y, m.velocity.z, m.age,
                    m.shooter_id as f64, m.target_id as f64, status_code(m.status), m.min_distance,
                ]
            })
            .collect();
        let tracking = match self.tracking {
            Some(t) => vec![1.0, t.heading, t.altitude, t.speed],
            None => vec![0.0; 4],
        };
        vec![
            (name("rng"), rng_to_f64s(&self.rng)),
            (name("aircraft"), aircraft),
            (name("missiles"), missiles),
            (name("ammo"), self.ammo.iter().map(|&a| a as f64).collect()),
            (name("priors"), self.priors.iter().flat_map(|p| [p.alpha, p.beta]).collect()),
            (name("last_launch"), self.last_launch.clone()),
            (name("reported_done"), self.reported_done.iter().map(|&d| d as u8 as f64).collect()),
            (name("episode_rewards"), self.episode_rewards.clone()),
            (name("tracking"), tracking),
            (name("clock"), vec![self.time, self.steps as f64, self.episode_done as u8 as f64]),
            (name("controllers"), self.controllers.iter().flat_map(|c| c.export_state()).collect()),
        ]
    }

    pub fn import_state(&mut self, arrays: &[(String, Vec<f64>)], prefix: &str) -> Result<()> {
        let n = self.num_agents();
        let get = |s: &str, len: Option<usize>| take(arrays, &format!("{prefix}{s}"), len);
        self.rng = rng_from_f64s(get("rng", None)?)?;
        self.aircraft = get("aircraft", Some(14 * n))?
            .chunks_exact(14)
            .map(|v| AircraftState {
                position: Vec3::new(v[0], v[1], v[2]),
                heading: v[3],
                pitch: v[4],
                roll: v[5],
                airspeed: v[6],
                velocity: Vec3::new(v[7], v[8], v[9]),
                acceleration: Vec3::new(v[10], v[11], v[12]),
                alive: v[13] != 0.0,
            })
            .collect();
        let raw_missiles = get("missiles", None)?;
        if raw_missiles.len() % 11 != 0 {
            return Err(SimError::InvalidState("missile snapshot length".into()));
        }
        self.missiles = raw_missiles
            .chunks_exact(11)
            .map(|v| {
                Ok(MissileState {
                    position: Vec3::new(v[0], v[1], v[2]),
                    velocity: Vec3::new(v[3], v[4], v[5]),
                    age: v[6],
                    shooter_id: v[7] as usize,
                    target_id: v[8] as usize,
                    status: status_from(v[9])?,
                    min_distance: v[10],
                })
            })
            .collect::<Result<_>>()?;
        self.ammo = get("ammo", Some(n))?.iter().map(|&a| a as u32).collect();
        self.priors = get("priors", Some(2 * n))?
            .chunks_exact(2)
            .map(|p| BetaShootPrior { alpha: p[0], beta: p[1] })
            .collect();
        self.last_launch = get("last_launch", Some(n))?.to_vec();
        self.reported_done = get("reported_done", Some(n))?.iter().map(|&d| d != 0.0).collect();
        self.episode_rewards = get("episode_rewards", Some(n))?.to_vec();
        let t = get("tracking", Some(4))?;
        self.tracking = (t[0] != 0.0).then(|| FlightTargets { heading: t[1], altitude: t[2], speed: t[3] });
        let clock = get("clock", Some(3))?;
        self.time = clock[0];
        self.steps = clock[1] as usize;
        self.episode_done = clock[2] != 0.0;
        let ctrl = get("controllers", None)?;
        let per = ctrl.len() / n.max(1);
        if per * n != ctrl.len() {
            return Err(SimError::InvalidState("controller snapshot length".into()));
        }
        for (c, chunk) in self.controllers.iter_mut().zip(ctrl.chunks(per.max(1))) {
            c.import_state(chunk);
        }
        Ok(())
    }
}

fn status_code(s: MissileStatus) -> f64 {
    match s {
        MissileStatus::Flying => 1.0,
        MissileStatus::Hit => 2.0,
        MissileStatus::Expired => 3.0,
    }
}

fn status_from(code: f64) -> Result<MissileStatus> {
    match code as i64 {
        1 => Ok(MissileStatus::Flying),
        2 => Ok(MissileStatus::Hit),
        3 => Ok(MissileStatus::Expired),
        _ => Err(SimError::InvalidState(format!("bad missile status code {code}"))),
    }
}
