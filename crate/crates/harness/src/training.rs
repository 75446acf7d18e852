//! Training protocols: learner teams, rollout / replay collection, logging cadence and resume.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dogfight_core::arena::{observation_len, AgentAction, CombatEnv, EnvConfig, StepOutcome};
use dogfight_core::snapshot::{rng_from_f64s, rng_to_f64s, RNG_WORDS};
use dogfight_learn::happo::{HappoReport, HappoTeam, RolloutBuffer, RolloutStep};
use dogfight_learn::hasac::{HasacReport, HasacTeam, Transition};
use dogfight_learn::neural::PolicyAction;
use dogfight_learn::take;

use crate::checkpoint::{checkpoint_name, load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::{Algorithm, RunConfig};
use crate::error::{HarnessError, Result};
use crate::eval::{evaluate, team_step_reward, EvalResult};
use crate::metrics::{MetricsRow, MetricsSchema, MetricsWriter};
use crate::policy::{baseline_action, policy_head, to_env_action, Pilot};

/// The trainer of one learning team.
#[derive(Debug, Clone)]
pub enum TeamLearner {
    Happo(HappoTeam),
    Hasac(HasacTeam),
}

impl TeamLearner {
    fn export(&self, prefix: &str) -> Vec<(String, Vec<f64>)> {
        match self {
            TeamLearner::Happo(t) => t.export(prefix),
            TeamLearner::Hasac(t) => t.export(prefix),
        }
    }

    fn import(&mut self, arrays: &[(String, Vec<f64>)], prefix: &str) -> Result<()> {
        match self {
            TeamLearner::Happo(t) => t.import(arrays, prefix)?,
            TeamLearner::Hasac(t) => t.import(arrays, prefix)?,
        }
        Ok(())
    }

    pub fn actors(&self) -> &[dogfight_learn::neural::Actor] {
        match self {
            TeamLearner::Happo(t) => &t.actors,
            TeamLearner::Hasac(t) => &t.actors,
        }
    }
}

/// Running means of HASAC update statistics between two metrics rows.
#[derive(Debug, Clone, PartialEq)]
struct UpdateWindow {
    count: f64,
    /// q-loss mean, critic grad norm, α, average step reward, then (loss, entropy, grad norm) per agent.
    sums: Vec<f64>,
}

impl UpdateWindow {
    fn new(agents: usize) -> Self {
        Self { count: 0.0, sums: vec![0.0; 4 + 3 * agents] }
    }

    fn add(&mut self, r: &HasacReport) {
        let mut v = vec![0.5 * (r.q_losses[0] + r.q_losses[1]), r.critic_grad_norm, r.alpha, r.average_step_rewards];
        for a in &r.agents {
            v.extend([a.actor_loss, a.entropy, a.actor_grad_norm]);
        }
        self.sums.iter_mut().zip(v).for_each(|(s, x)| *s += x);
        self.count += 1.0;
    }

    fn mean(&self, i: usize) -> f64 {
        if self.count == 0.0 {
            f64::NAN
        } else {
            self.sums[i] / self.count
        }
    }

    fn clear(&mut self) {
        self.count = 0.0;
        self.sums.iter_mut().for_each(|s| *s = 0.0);
    }

    fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.count];
        v.extend_from_slice(&self.sums);
        v
    }
}

/// Everything that evolves during one seed's training run.
pub struct Trainer {
    cfg: RunConfig,
    seed: u64,
    rng: ChaCha8Rng,
    envs: Vec<CombatEnv>,
    /// Environment team index of each learner.
    learner_teams: Vec<usize>,
    learners: Vec<TeamLearner>,
    windows: Vec<UpdateWindow>,
    schema: MetricsSchema,
    timestep: u64,
    iteration: u64,
    next_eval: u64,
    next_log: u64,
    next_checkpoint: u64,
    update_credit: f64,
    /// Running team-0 reward of the episode in progress, per environment.
    episode_acc: Vec<f64>,
    /// Team-0 rewards of episodes finished since the last training row.
    finished: Vec<f64>,
}

impl Trainer {
    pub fn new(cfg: &RunConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let cfg = cfg.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let task = cfg.task;
        let envs = (0..cfg.num_envs)
            .map(|_| CombatEnv::new(EnvConfig { seed: rng.gen(), ..cfg.env.clone() }))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let learner_teams: Vec<usize> =
            if cfg.protocol.against_baseline() { vec![0] } else { (0..task.num_teams()).collect() };
        let obs_dim = observation_len(task);
        let head = policy_head(&cfg);
        let n = task.team_size();
        let mut learners = Vec::new();
        for _ in &learner_teams {
            let heads = vec![head.clone(); n];
            learners.push(match cfg.algorithm {
                Algorithm::Happo => TeamLearner::Happo(HappoTeam::new(obs_dim, heads, n * obs_dim, cfg.happo.clone(), &mut rng)?),
                Algorithm::Hasac => TeamLearner::Hasac(HasacTeam::new(obs_dim, heads, cfg.hasac.clone(), &mut rng)?),
            });
        }
        let agents: Vec<usize> = learner_teams.iter().flat_map(|&t| task.team_members(t)).collect();
        let schema = MetricsSchema::new(cfg.algorithm, &agents);
        Ok(Self {
            windows: vec![UpdateWindow::new(n); learner_teams.len()],
            learner_teams,
            learners,
            schema,
            timestep: 0,
            iteration: 0,
            next_eval: cfg.eval_interval,
            next_log: cfg.log_interval,
            next_checkpoint: cfg.checkpoint_interval,
            update_credit: 0.0,
            episode_acc: vec![0.0; cfg.num_envs],
            finished: Vec::new(),
            envs,
            rng,
            seed,
            cfg,
        })
    }

    /// Rebuilds a trainer mid-run from a checkpoint's arrays.
    pub fn from_checkpoint(cfg: &RunConfig, seed: u64, ckpt: &Checkpoint) -> Result<Self> {
        let mut t = Self::new(cfg, seed)?;
        t.import_state(&ckpt.arrays)?;
        if t.timestep != ckpt.timestep {
            return Err(HarnessError::Mismatch("checkpoint header and body disagree on the timestep".into()));
        }
        Ok(t)
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn timestep(&self) -> u64 {
        self.timestep
    }

    pub fn schema(&self) -> &MetricsSchema {
        &self.schema
    }

    pub fn learners(&self) -> &[TeamLearner] {
        &self.learners
    }

    /// Current controller of every aircraft: learner actors or the scripted baseline.
    pub fn pilots(&self) -> Vec<Pilot> {
        let task = self.cfg.task;
        let mut pilots = vec![Pilot::Baseline; task.num_agents()];
        for (learner, &team) in self.learners.iter().zip(&self.learner_teams) {
            for (actor, agent) in learner.actors().iter().zip(task.team_members(team)) {
                pilots[agent] = Pilot::Learner(actor.clone());
            }
        }
        pilots
    }

    /// Greedy evaluation of the current policies; training state is untouched.
    pub fn evaluate(&self, episodes: usize, seed: u64) -> Result<EvalResult> {
        evaluate(&self.pilots(), &self.cfg, episodes, seed)
    }

    /// Seed of the evaluation held at `timestep`, independent of the training streams.
    pub fn eval_seed(&self, timestep: u64) -> u64 {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(2);
        r.set_word_pos(u128::from(timestep) * 2);
        r.gen()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.cfg.digest(self.seed), self.timestep, self.export_state())
    }

    /// Trains until `total_timesteps`, logging to `metrics` and checkpointing into `dir`.
    pub fn run(&mut self, metrics: &mut MetricsWriter, dir: Option<&Path>) -> Result<()> {
        self.advance(self.cfg.total_timesteps, metrics, dir)?;
        if let Some(d) = dir {
            save_checkpoint(&d.join(checkpoint_name(self.timestep)), &self.checkpoint())?;
        }
        Ok(())
    }

    /// Trains until at least `until` environment steps, with the usual evaluation and
    /// periodic checkpoint cadence but no final checkpoint.
    pub fn advance(&mut self, until: u64, metrics: &mut MetricsWriter, dir: Option<&Path>) -> Result<()> {
        if metrics.schema() != &self.schema {
            return Err(HarnessError::Runtime("metrics writer schema differs from the trainer's".into()));
        }
        while self.timestep < until {
            match self.cfg.algorithm {
                Algorithm::Happo => self.happo_iteration(metrics)?,
                Algorithm::Hasac => self.hasac_step(metrics)?,
            }
            self.maybe_evaluate(metrics)?;
            if let Some(d) = dir {
                if self.cfg.checkpoint_interval > 0 && self.timestep >= self.next_checkpoint {
                    save_checkpoint(&d.join(checkpoint_name(self.timestep)), &self.checkpoint())?;
                    self.next_checkpoint = next_multiple(self.timestep, self.cfg.checkpoint_interval);
                }
            }
        }
        Ok(())
    }

    fn maybe_evaluate(&mut self, metrics: &mut MetricsWriter) -> Result<()> {
        if self.cfg.eval_interval == 0 || self.timestep < self.next_eval {
            return Ok(());
        }
        let res = self.evaluate(self.cfg.eval_episodes, self.eval_seed(self.timestep))?;
        let mut row = self.schema.empty_row(self.timestep);
        row.set(&self.schema, "eval_average_episode_rewards", res.average)?;
        row.set(&self.schema, "eval_max_episode_rewards", res.max)?;
        metrics.write(&row)?;
        self.next_eval = next_multiple(self.timestep, self.cfg.eval_interval);
        Ok(())
    }

    /// Learner actions (with sampling data) and the joint environment action for one env.
    fn act(&mut self, e: usize, obs: &[Vec<f64>]) -> Result<(Vec<Vec<(PolicyAction, f64)>>, Vec<AgentAction>)> {
        let task = self.cfg.task;
        let env = &self.envs[e];
        let mut joint: Vec<AgentAction> = (0..task.num_agents()).map(|i| baseline_action(env, i)).collect();
        let mut per_team = Vec::with_capacity(self.learners.len());
        for (learner, &team) in self.learners.iter().zip(&self.learner_teams) {
            let mut acts = Vec::with_capacity(task.team_size());
            for (k, agent) in task.team_members(team).enumerate() {
                let (a, lp) = match learner {
                    TeamLearner::Happo(t) => t.act(k, &obs[agent], &mut self.rng)?,
                    TeamLearner::Hasac(t) => (t.act(k, &obs[agent], &mut self.rng)?, 0.0),
                };
                joint[agent] = to_env_action(learner.actors()[k].head(), &a)?;
                acts.push((a, lp));
            }
            per_team.push(acts);
        }
        Ok((per_team, joint))
    }

    /// Episode bookkeeping after a step; resets finished environments.
    fn after_step(&mut self, e: usize, out: &StepOutcome) {
        self.timestep += 1;
        self.episode_acc[e] += team_step_reward(self.cfg.task, out);
        if out.episode_done {
            self.finished.push(self.episode_acc[e]);
            self.episode_acc[e] = 0.0;
            let seed = self.rng.gen();
            self.envs[e].reset(seed);
        }
    }

    fn team_obs(&self, team: usize, obs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        self.cfg.task.team_members(team).map(|i| obs[i].clone()).collect()
    }

    fn happo_iteration(&mut self, metrics: &mut MetricsWriter) -> Result<()> {
        let task = self.cfg.task;
        let gamma = self.cfg.happo.gamma;
        let mut buffers: Vec<RolloutBuffer> = self.learners.iter().map(|_| RolloutBuffer::new(task.team_size())).collect();
        for e in 0..self.envs.len() {
            for _ in 0..self.cfg.rollout_length {
                let obs = self.envs[e].observations();
                let alive: Vec<bool> = self.envs[e].aircraft().iter().map(|a| a.alive).collect();
                let (acts, joint) = self.act(e, &obs)?;
                let out = self.envs[e].step(&joint)?;
                for (li, (&team, acts)) in self.learner_teams.iter().zip(acts).enumerate() {
                    let TeamLearner::Happo(learner) = &self.learners[li] else { unreachable!() };
                    let members = task.team_members(team);
                    let critic_obs = self.team_obs(team, &obs).concat();
                    let mut reward = members.clone().map(|i| out.rewards[i].total).sum::<f64>() / members.len() as f64;
                    if out.truncated {
                        reward += gamma * learner.value(&self.team_obs(team, &out.observations).concat())?;
                    }
                    let (actions, log_probs) = acts.into_iter().unzip();
                    buffers[li].push(RolloutStep {
                        obs: self.team_obs(team, &obs),
                        actions,
                        log_probs,
                        active: members.map(|i| alive[i]).collect(),
                        value: learner.value(&critic_obs)?,
                        critic_obs,
                        reward,
                        done: out.episode_done,
                    })?;
                }
                self.after_step(e, &out);
            }
            // bootstrap from the state the next iteration starts in
            let obs = self.envs[e].observations();
            for (li, &team) in self.learner_teams.iter().enumerate() {
                let TeamLearner::Happo(learner) = &self.learners[li] else { unreachable!() };
                buffers[li].end_segment(learner.value(&self.team_obs(team, &obs).concat())?);
            }
        }
        let mut reports = Vec::with_capacity(buffers.len());
        for (li, buf) in buffers.iter_mut().enumerate() {
            buf.finish(gamma, self.cfg.happo.gae_lambda)?;
            let TeamLearner::Happo(learner) = &mut self.learners[li] else { unreachable!() };
            let report = learner.update(buf, &mut self.rng)?;
            check_finite_happo(&report)?;
            reports.push(report);
        }
        self.iteration += 1;
        let row = self.happo_row(&reports)?;
        metrics.write(&row)
    }

    fn happo_row(&mut self, reports: &[HappoReport]) -> Result<MetricsRow> {
        let s = &self.schema;
        let mut row = s.empty_row(self.timestep);
        for (r, &team) in reports.iter().zip(&self.learner_teams) {
            for (a, agent) in r.agents.iter().zip(self.cfg.task.team_members(team)) {
                row.set(s, &format!("policy_loss/agent{agent}"), a.policy_loss)?;
                row.set(s, &format!("dist_entropy/agent{agent}"), a.dist_entropy)?;
                row.set(s, &format!("actor_grad_norm/agent{agent}"), a.actor_grad_norm)?;
                row.set(s, &format!("imp_weights_mean/agent{agent}"), a.imp_weights_mean)?;
            }
        }
        row.set(s, "value_loss", mean(reports.iter().map(|r| r.value_loss)))?;
        row.set(s, "critic_grad_norm", mean(reports.iter().map(|r| r.critic_grad_norm)))?;
        row.set(s, "average_step_rewards", mean(reports.iter().map(|r| r.average_step_rewards)))?;
        row.set(s, "train_episode_reward", mean(self.finished.drain(..)))?;
        Ok(row)
    }

    /// One decision step in every environment, followed by the due gradient updates.
    fn hasac_step(&mut self, metrics: &mut MetricsWriter) -> Result<()> {
        let task = self.cfg.task;
        for e in 0..self.envs.len() {
            let obs = self.envs[e].observations();
            let (acts, joint) = self.act(e, &obs)?;
            let out = self.envs[e].step(&joint)?;
            for (li, (&team, acts)) in self.learner_teams.iter().zip(acts).enumerate() {
                let t = Transition {
                    obs: self.team_obs(team, &obs),
                    actions: acts.into_iter().map(|(a, _)| a).collect(),
                    rewards: task.team_members(team).map(|i| out.rewards[i].total).collect(),
                    next_obs: self.team_obs(team, &out.observations),
                    done: out.episode_done && !out.truncated,
                };
                let TeamLearner::Hasac(learner) = &mut self.learners[li] else { unreachable!() };
                learner.store(t)?;
            }
            self.after_step(e, &out);
            if self.timestep >= self.cfg.hasac.warmup_steps as u64 {
                self.update_credit += self.cfg.hasac.updates_per_step;
            }
            while self.update_credit >= 1.0 {
                self.update_credit -= 1.0;
                for li in 0..self.learners.len() {
                    let TeamLearner::Hasac(learner) = &mut self.learners[li] else { unreachable!() };
                    if learner.ready() {
                        let report = learner.update(&mut self.rng)?;
                        if !(report.q_losses.iter().all(|q| q.is_finite()) && report.alpha.is_finite()) {
                            return Err(HarnessError::Numeric(format!("non-finite critic loss at timestep {}", self.timestep)));
                        }
                        self.windows[li].add(&report);
                    }
                }
            }
            if self.timestep >= self.next_log {
                let row = self.hasac_row()?;
                metrics.write(&row)?;
                self.next_log = next_multiple(self.timestep, self.cfg.log_interval);
            }
        }
        Ok(())
    }

    fn hasac_row(&mut self) -> Result<MetricsRow> {
        let s = &self.schema;
        let mut row = s.empty_row(self.timestep);
        for (w, &team) in self.windows.iter().zip(&self.learner_teams) {
            for (k, agent) in self.cfg.task.team_members(team).enumerate() {
                row.set(s, &format!("policy_loss/agent{agent}"), w.mean(4 + 3 * k))?;
                row.set(s, &format!("dist_entropy/agent{agent}"), w.mean(5 + 3 * k))?;
                row.set(s, &format!("actor_grad_norm/agent{agent}"), w.mean(6 + 3 * k))?;
            }
        }
        row.set(s, "value_loss", mean(self.windows.iter().map(|w| w.mean(0))))?;
        row.set(s, "critic_grad_norm", mean(self.windows.iter().map(|w| w.mean(1))))?;
        row.set(s, "alpha", mean(self.windows.iter().map(|w| w.mean(2))))?;
        row.set(s, "average_step_rewards", mean(self.windows.iter().map(|w| w.mean(3))))?;
        row.set(s, "train_episode_reward", mean(self.finished.drain(..)))?;
        self.windows.iter_mut().for_each(UpdateWindow::clear);
        Ok(row)
    }

    /// Full run state as named arrays.
    pub fn export_state(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = vec![
            ("run.rng".to_string(), rng_to_f64s(&self.rng)),
            (
                "run.counters".to_string(),
                vec![
                    self.timestep as f64,
                    self.iteration as f64,
                    self.next_eval as f64,
                    self.next_log as f64,
                    self.next_checkpoint as f64,
                    self.update_credit,
                ],
            ),
            ("run.episode_acc".to_string(), self.episode_acc.clone()),
            ("run.finished".to_string(), self.finished.clone()),
        ];
        for (e, env) in self.envs.iter().enumerate() {
            out.extend(env.export_state(&format!("env{e}.")));
        }
        for (li, learner) in self.learners.iter().enumerate() {
            out.extend(learner.export(&format!("team{li}.")));
            out.push((format!("team{li}.window"), self.windows[li].to_vec()));
        }
        out
    }

    pub fn import_state(&mut self, arrays: &[(String, Vec<f64>)]) -> Result<()> {
        self.rng = rng_from_f64s(take(arrays, "run.rng", Some(RNG_WORDS))?)?;
        let c = take(arrays, "run.counters", Some(6))?;
        self.timestep = c[0] as u64;
        self.iteration = c[1] as u64;
        self.next_eval = c[2] as u64;
        self.next_log = c[3] as u64;
        self.next_checkpoint = c[4] as u64;
        self.update_credit = c[5];
        self.episode_acc = take(arrays, "run.episode_acc", Some(self.envs.len()))?.to_vec();
        self.finished = take(arrays, "run.finished", None)?.to_vec();
        for (e, env) in self.envs.iter_mut().enumerate() {
            env.import_state(arrays, &format!("env{e}."))?;
        }
        for (li, learner) in self.learners.iter_mut().enumerate() {
            learner.import(arrays, &format!("team{li}."))?;
            let w = take(arrays, &format!("team{li}.window"), Some(self.windows[li].sums.len() + 1))?;
            self.windows[li].count = w[0];
            self.windows[li].sums = w[1..].to_vec();
        }
        Ok(())
    }
}

fn check_finite_happo(r: &HappoReport) -> Result<()> {
    let ok = r.value_loss.is_finite() && r.agents.iter().all(|a| a.policy_loss.is_finite() && a.imp_weights_mean.is_finite());
    if ok {
        Ok(())
    } else {
        Err(HarnessError::Numeric("non-finite loss in HAPPO update".into()))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Smallest multiple of `interval` strictly above `t`.
fn next_multiple(t: u64, interval: u64) -> u64 {
    (t / interval + 1) * interval
}

/// Directory holding one (algorithm, seed) run.
pub fn run_dir(cfg: &RunConfig, seed: u64) -> PathBuf {
    cfg.out_dir.join(format!("{}_seed{seed}", cfg.algorithm))
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.txt";
pub const SUMMARY_FILE: &str = "summary.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub seed: u64,
    pub dir: PathBuf,
    pub timestep: u64,
    pub metrics_rows: usize,
    /// Greedy evaluation of the final policies.
    pub final_eval: EvalResult,
}

/// Trains one seed from scratch, or from `resume` when given.
pub fn train_seed(cfg: &RunConfig, seed: u64, resume: Option<&Path>, force: bool) -> Result<RunSummary> {
    let dir = run_dir(cfg, seed);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join(CONFIG_FILE), cfg.render())?;
    let metrics_path = dir.join(METRICS_FILE);
    let (mut trainer, mut metrics) = match resume {
        Some(path) => {
            let ckpt = load_checkpoint(path, Some(&cfg.digest(seed)), force)?;
            let trainer = Trainer::from_checkpoint(cfg, seed, &ckpt)?;
            let metrics = if metrics_path.exists() {
                MetricsWriter::resume(&metrics_path, trainer.schema().clone(), ckpt.timestep)?
            } else {
                MetricsWriter::create(&metrics_path, trainer.schema().clone())?
            };
            (trainer, metrics)
        }
        None => {
            let trainer = Trainer::new(cfg, seed)?;
            let metrics = MetricsWriter::create(&metrics_path, trainer.schema().clone())?;
            (trainer, metrics)
        }
    };
    trainer.run(&mut metrics, Some(&dir))?;
    let final_eval = trainer.evaluate(cfg.eval_episodes, trainer.eval_seed(u64::MAX))?;
    let summary = RunSummary {
        seed,
        timestep: trainer.timestep(),
        metrics_rows: metrics.rows_written(),
        final_eval,
        dir: dir.clone(),
    };
    std::fs::write(
        dir.join(SUMMARY_FILE),
        format!(
            "seed = {seed}\ntimestep = {}\nmetrics_rows = {}\nfinal_eval_average = {}\nfinal_eval_max = {}\n",
            summary.timestep,
            summary.metrics_rows,
            crate::metrics::format_real(summary.final_eval.average),
            crate::metrics::format_real(summary.final_eval.max)
        ),
    )?;
    Ok(summary)
}

/// Trains every configured seed in turn.
pub fn run_training(cfg: &RunConfig) -> Result<Vec<RunSummary>> {
    cfg.validate()?;
    cfg.seeds.iter().map(|&s| train_seed(cfg, s, None, false)).collect()
}
