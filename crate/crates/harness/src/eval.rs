//! Greedy evaluation episodes on a private environment and random streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dogfight_core::arena::{CombatEnv, StepOutcome, TaskKind};

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::policy::{joint_action, ActionMode, Pilot};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub average: f64,
    pub max: f64,
    /// Team-0 reward of every episode, in play order.
    pub episodes: Vec<f64>,
}

/// Streams used by one evaluation call: episode reset seeds and action noise.
pub(crate) struct EvalStreams {
    pub resets: ChaCha8Rng,
    pub actions: ChaCha8Rng,
}

impl EvalStreams {
    pub fn new(seed: u64) -> Self {
        let resets = ChaCha8Rng::seed_from_u64(seed);
        let mut actions = ChaCha8Rng::seed_from_u64(seed);
        actions.set_stream(1);
        Self { resets, actions }
    }
}

/// Reward credited to team 0 for one decision step: the mean over its aircraft.
pub fn team_step_reward(task: TaskKind, out: &StepOutcome) -> f64 {
    let members = task.team_members(0);
    let n = members.len() as f64;
    members.map(|i| out.rewards[i].total).sum::<f64>() / n
}

/// Plays `episodes` episodes with learners acting greedily and returns team-0 episode rewards.
pub fn evaluate(pilots: &[Pilot], cfg: &RunConfig, episodes: usize, seed: u64) -> Result<EvalResult> {
    if pilots.len() != cfg.task.num_agents() {
        return Err(HarnessError::Runtime(format!("{} pilots for {} aircraft", pilots.len(), cfg.task.num_agents())));
    }
    let mut env = CombatEnv::new(cfg.env.clone())?;
    let mut streams = EvalStreams::new(seed);
    let mut totals = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset(streams.resets.gen());
        let mut total = 0.0;
        loop {
            let actions = joint_action(&env, pilots, &obs, ActionMode::Greedy, &mut streams.actions)?;
            let out = env.step(&actions)?;
            total += team_step_reward(cfg.task, &out);
            if out.episode_done {
                break;
            }
            obs = out.observations;
        }
        totals.push(total);
    }
    let average = if totals.is_empty() { f64::NAN } else { totals.iter().sum::<f64>() / totals.len() as f64 };
    let max = totals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(EvalResult { average, max, episodes: totals })
}
