//! Action spaces per protocol and the mapping from policy outputs to aircraft commands.

use rand::Rng;

use dogfight_core::airframe::ControlInput;
use dogfight_core::arena::{pursue_baseline, AgentAction, CombatEnv, HighLevelAction};
use dogfight_core::AgentId;
use dogfight_learn::neural::{Actor, GaussianHead, MultiDiscreteHead, PolicyAction, PolicyHead};

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};

/// Raw-control bounds: aileron, elevator, rudder, throttle.
const RAW_LOW: [f64; 4] = [-1.0, -1.0, -1.0, 0.0];
const RAW_HIGH: [f64; 4] = [1.0, 1.0, 1.0, 1.0];

/// Output head for every learner of this run.
pub fn policy_head(cfg: &RunConfig) -> PolicyHead {
    let shoot = cfg.uses_shoot_head();
    if cfg.protocol.is_hierarchical() {
        let sizes = HighLevelAction::group_sizes(shoot);
        PolicyHead::Discrete(MultiDiscreteHead::new(&sizes).expect("fixed group sizes are valid"))
    } else {
        let (mut low, mut high) = (RAW_LOW.to_vec(), RAW_HIGH.to_vec());
        if shoot {
            // fire when the squashed value is positive
            low.push(-1.0);
            high.push(1.0);
        }
        PolicyHead::Gaussian(GaussianHead::new(&low, &high).expect("fixed bounds are valid"))
    }
}

/// Converts a policy output into an environment action.
pub fn to_env_action(head: &PolicyHead, action: &PolicyAction) -> Result<AgentAction> {
    match (head, action) {
        (PolicyHead::Discrete(_), PolicyAction::Discrete(idx)) => Ok(AgentAction::HighLevel(HighLevelAction::from_indices(idx))),
        (PolicyHead::Gaussian(h), PolicyAction::Continuous(u)) => {
            let v = h.squash(u);
            let control = ControlInput { aileron: v[0], elevator: v[1], rudder: v[2], throttle: v[3] };
            Ok(AgentAction::Raw { control, shoot: v.get(4).is_some_and(|&s| s > 0.0) })
        }
        _ => Err(HarnessError::Runtime("policy action does not match its head".into())),
    }
}

/// Who flies each seat during an episode.
#[derive(Debug, Clone)]
pub enum Pilot {
    /// Learned actor; greedy or sampled depending on the caller.
    Learner(Actor),
    /// Scripted pursuit of the nearest enemy.
    Baseline,
    /// Uniformly random commands in the learner's action space.
    Uniform(PolicyHead),
}

/// How learned actors pick actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    Greedy,
    Sample,
}

/// Decision of the scripted pursuer for one aircraft.
pub fn baseline_action(env: &CombatEnv, agent: AgentId) -> AgentAction {
    let me = &env.aircraft()[agent];
    let action = env
        .nearest_enemy(agent)
        .map(|e| pursue_baseline(me, &env.aircraft()[e], env.task(), &env.config().weapons))
        .unwrap_or_else(HighLevelAction::neutral);
    AgentAction::HighLevel(action)
}

/// A uniformly random action in `head`'s space (pre-squash values for continuous heads).
pub fn uniform_action<R: Rng + ?Sized>(head: &PolicyHead, rng: &mut R) -> PolicyAction {
    match head {
        PolicyHead::Discrete(h) => PolicyAction::Discrete(h.sizes().iter().map(|&k| rng.gen_range(0..k)).collect()),
        PolicyHead::Gaussian(h) => {
            // atanh of a uniform squashed value, kept off the saturated ends
            PolicyAction::Continuous((0..h.dim()).map(|_| rng.gen_range(-0.999_f64..0.999).atanh()).collect())
        }
    }
}

/// Actions for every seat given the current observations.
pub fn joint_action<R: Rng + ?Sized>(
    env: &CombatEnv,
    pilots: &[Pilot],
    obs: &[Vec<f64>],
    mode: ActionMode,
    rng: &mut R,
) -> Result<Vec<AgentAction>> {
    pilots
        .iter()
        .enumerate()
        .map(|(i, p)| match p {
            Pilot::Baseline => Ok(baseline_action(env, i)),
            Pilot::Uniform(head) => to_env_action(head, &uniform_action(head, rng)),
            Pilot::Learner(actor) => {
                let a = match mode {
                    ActionMode::Greedy => actor.greedy(&obs[i])?,
                    ActionMode::Sample => actor.sample(&obs[i], rng)?,
                };
                to_env_action(actor.head(), &a)
            }
        })
        .collect()
}
