//! Heterogeneous-agent PPO: GAE advantages, a centralized critic, and
//! sequential per-agent clipped updates carrying the running correction
//! factor M = (Π predecessors' π̂/π)·A.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{LearnError, Result};
use crate::neural::{
    adam_step, global_norm_clip, mse_loss, Actor, AdamState, Matrix, Mlp, PolicyAction, PolicyHead, HIDDEN_GAIN,
};
use crate::{take, NamedArrays};

#[derive(Debug, Clone, PartialEq)]
pub struct HappoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    pub randomize_order: bool,
    pub hidden: Vec<usize>,
}

impl Default for HappoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            epochs: 5,
            minibatches: 4,
            actor_lr: 5e-4,
            critic_lr: 5e-4,
            entropy_coef: 0.01,
            value_coef: 1.0,
            max_grad_norm: 0.5,
            normalize_advantages: true,
            randomize_order: true,
            hidden: vec![128, 128],
        }
    }
}

impl HappoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LearnError::InvalidConfig(m.into()));
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]");
        }
        if self.epochs == 0 || self.minibatches == 0 {
            return bad("epochs and minibatches must be positive");
        }
        if !(self.actor_lr >= 0.0 && self.critic_lr >= 0.0 && self.max_grad_norm > 0.0) {
            return bad("learning rates must be non-negative and max_grad_norm positive");
        }
        Ok(())
    }
}

/// Generalized advantage estimation over one trajectory segment.
///
/// `dones[t]` marks that the transition out of step `t` ended the episode;
/// `last_value` bootstraps the step after the segment when it did not.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = last_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Zero mean, unit (population) variance.
pub fn normalize(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    if values.is_empty() {
        return Vec::new();
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    values.iter().map(|v| (v - mean) / std).collect()
}

/// The clipped objective min(r·m, clip(r, 1−ε, 1+ε)·m).
pub fn surrogate_objective(ratio: f64, factor: f64, eps: f64) -> f64 {
    (ratio * factor).min(ratio.clamp(1.0 - eps, 1.0 + eps) * factor)
}

/// ∂ surrogate / ∂ log π_new (ratio = exp(log π_new − log π_old)).
fn surrogate_log_prob_grad(ratio: f64, factor: f64, eps: f64) -> f64 {
    let unclipped = ratio * factor;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * factor;
    if unclipped <= clipped {
        unclipped
    } else {
        0.0
    }
}

/// Minibatch inputs to the actor loss.
#[derive(Debug, Clone)]
pub struct ActorBatch<'a> {
    pub obs: Matrix,
    pub actions: &'a [PolicyAction],
    pub old_log_prob: &'a [f64],
    pub factor: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorLoss {
    pub loss: f64,
    pub grads: Vec<f64>,
    pub entropy: f64,
    pub ratios: Vec<f64>,
}

/// −mean(surrogate) − entropy_coef·mean(entropy), with its gradient.
pub fn actor_loss(actor: &Actor, batch: &ActorBatch<'_>, clip: f64, entropy_coef: f64) -> Result<ActorLoss> {
    let eval = actor.evaluate(&batch.obs, batch.actions)?;
    let n = batch.obs.rows as f64;
    let mut loss = 0.0;
    let mut w_logp = Vec::with_capacity(batch.obs.rows);
    let mut ratios = Vec::with_capacity(batch.obs.rows);
    for b in 0..batch.obs.rows {
        let r = (eval.log_prob[b] - batch.old_log_prob[b]).exp();
        loss -= surrogate_objective(r, batch.factor[b], clip) / n;
        w_logp.push(-surrogate_log_prob_grad(r, batch.factor[b], clip) / n);
        ratios.push(r);
    }
    let entropy = eval.entropy.iter().sum::<f64>() / n;
    loss -= entropy_coef * entropy;
    let w_ent = vec![-entropy_coef / n; batch.obs.rows];
    let grads = actor.backward(&eval, batch.actions, &w_logp, &w_ent)?;
    Ok(ActorLoss { loss, grads, entropy, ratios })
}

/// One decision step of experience for a team.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStep {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<PolicyAction>,
    pub log_probs: Vec<f64>,
    /// Agents whose actions mattered this step (alive at its start).
    pub active: Vec<bool>,
    pub critic_obs: Vec<f64>,
    pub value: f64,
    /// Team reward; on a truncated episode end the caller folds γ·V(s_next) in.
    pub reward: f64,
    pub done: bool,
}

/// Experience for E environments × T steps, stored segment by segment.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    num_agents: usize,
    obs: Vec<Vec<Vec<f64>>>,
    actions: Vec<Vec<PolicyAction>>,
    old_log_prob: Vec<Vec<f64>>,
    active: Vec<Vec<bool>>,
    critic_obs: Vec<Vec<f64>>,
    values: Vec<f64>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
    segments: Vec<(usize, usize, f64)>,
    open_segment: usize,
    advantages: Vec<f64>,
    returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(num_agents: usize) -> Self {
        Self {
            num_agents,
            obs: vec![Vec::new(); num_agents],
            actions: vec![Vec::new(); num_agents],
            old_log_prob: vec![Vec::new(); num_agents],
            active: vec![Vec::new(); num_agents],
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn push(&mut self, step: RolloutStep) -> Result<()> {
        let m = self.num_agents;
        if step.obs.len() != m || step.actions.len() != m || step.log_probs.len() != m || step.active.len() != m {
            return Err(LearnError::Shape(format!("rollout step for {m} agents has mismatched arity")));
        }
        for (k, ((o, a), (lp, act))) in step
            .obs
            .into_iter()
            .zip(step.actions)
            .zip(step.log_probs.into_iter().zip(step.active))
            .enumerate()
        {
            self.obs[k].push(o);
            self.actions[k].push(a);
            self.old_log_prob[k].push(lp);
            self.active[k].push(act);
        }
        self.critic_obs.push(step.critic_obs);
        self.values.push(step.value);
        self.rewards.push(step.reward);
        self.dones.push(step.done);
        Ok(())
    }

    /// Closes the current environment's segment with its bootstrap value.
    pub fn end_segment(&mut self, last_value: f64) {
        let start = self.open_segment;
        let len = self.len() - start;
        if len > 0 {
            self.segments.push((start, len, last_value));
        }
        self.open_segment = self.len();
    }

    /// Computes advantages and returns for every closed segment.
    pub fn finish(&mut self, gamma: f64, lambda: f64) -> Result<()> {
        if self.open_segment != self.len() {
            return Err(LearnError::InvalidConfig("rollout segment left open".into()));
        }
        self.advantages = vec![0.0; self.len()];
        self.returns = vec![0.0; self.len()];
        for &(s, n, last) in &self.segments {
            let (a, r) =
                compute_gae(&self.rewards[s..s + n], &self.values[s..s + n], &self.dones[s..s + n], last, gamma, lambda);
            self.advantages[s..s + n].copy_from_slice(&a);
            self.returns[s..s + n].copy_from_slice(&r);
        }
        Ok(())
    }

    pub fn advantages(&self) -> &[f64] {
        &self.advantages
    }

    pub fn returns(&self) -> &[f64] {
        &self.returns
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn old_log_probs(&self, agent: usize) -> &[f64] {
        &self.old_log_prob[agent]
    }

    pub fn actions(&self, agent: usize) -> &[PolicyAction] {
        &self.actions[agent]
    }

    pub fn observations(&self, agent: usize) -> &[Vec<f64>] {
        &self.obs[agent]
    }

    pub fn active(&self, agent: usize) -> &[bool] {
        &self.active[agent]
    }

    pub fn clear(&mut self) {
        *self = Self::new(self.num_agents);
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AgentMetrics {
    pub policy_loss: f64,
    pub dist_entropy: f64,
    pub actor_grad_norm: f64,
    pub imp_weights_mean: f64,
    pub imp_weights_min: f64,
    pub imp_weights_max: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HappoReport {
    /// Update order drawn for this iteration.
    pub order: Vec<usize>,
    /// Running factor each agent optimized against, in update order.
    pub factors: Vec<Vec<f64>>,
    /// Factor after the last agent.
    pub final_factor: Vec<f64>,
    /// Indexed by agent id.
    pub agents: Vec<AgentMetrics>,
    pub value_loss: f64,
    pub critic_grad_norm: f64,
    pub average_step_rewards: f64,
}

/// Actors for one team plus its centralized critic and optimizer states.
#[derive(Debug, Clone)]
pub struct HappoTeam {
    cfg: HappoConfig,
    pub actors: Vec<Actor>,
    critic: Mlp,
    pub critic_params: Vec<f64>,
    actor_opt: Vec<AdamState>,
    critic_opt: AdamState,
}

impl HappoTeam {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        heads: Vec<PolicyHead>,
        critic_input: usize,
        cfg: HappoConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let actors = heads
            .into_iter()
            .map(|h| Actor::new(obs_dim, &cfg.hidden, h, rng))
            .collect::<Result<Vec<_>>>()?;
        let mut dims = vec![critic_input];
        dims.extend_from_slice(&cfg.hidden);
        dims.push(1);
        let critic = Mlp::new(&dims)?;
        let critic_params = critic.init(rng, HIDDEN_GAIN, 1.0);
        let actor_opt = actors.iter().map(|a| AdamState::new(a.params.len())).collect();
        let critic_opt = AdamState::new(critic_params.len());
        Ok(Self { cfg, actors, critic, critic_params, actor_opt, critic_opt })
    }

    pub fn config(&self) -> &HappoConfig {
        &self.cfg
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    pub fn num_agents(&self) -> usize {
        self.actors.len()
    }

    pub fn value(&self, critic_obs: &[f64]) -> Result<f64> {
        let x = Matrix::new(1, critic_obs.len(), critic_obs.to_vec())?;
        Ok(self.critic.predict(&self.critic_params, &x)?.data[0])
    }

    /// Samples an action and returns it with its log-probability.
    pub fn act<R: Rng + ?Sized>(&self, agent: usize, obs: &[f64], rng: &mut R) -> Result<(PolicyAction, f64)> {
        let actor = &self.actors[agent];
        let a = actor.sample(obs, rng)?;
        let (lp, _) = actor.log_prob_entropy(obs, &a)?;
        Ok((a, lp))
    }

    /// One training iteration over a finished buffer.
    pub fn update<R: Rng + ?Sized>(&mut self, buf: &RolloutBuffer, rng: &mut R) -> Result<HappoReport> {
        if buf.num_agents() != self.num_agents() {
            return Err(LearnError::Shape("buffer agent count differs from team".into()));
        }
        if buf.is_empty() || buf.advantages().len() != buf.len() {
            return Err(LearnError::InsufficientData { have: buf.advantages().len(), need: buf.len().max(1) });
        }
        let cfg = self.cfg.clone();
        let mut factor =
            if cfg.normalize_advantages { normalize(buf.advantages()) } else { buf.advantages().to_vec() };
        let mut order: Vec<usize> = (0..self.num_agents()).collect();
        if cfg.randomize_order {
            order.shuffle(rng);
        }
        let mut report = HappoReport {
            order: order.clone(),
            agents: vec![AgentMetrics::default(); self.num_agents()],
            ..HappoReport::default()
        };

        for &agent in &order {
            report.factors.push(factor.clone());
            let idx: Vec<usize> = (0..buf.len()).filter(|&i| buf.active(agent)[i]).collect();
            if idx.is_empty() {
                report.agents[agent] = AgentMetrics { imp_weights_mean: 1.0, imp_weights_min: 1.0, imp_weights_max: 1.0, ..Default::default() };
                continue;
            }
            let (mut loss_sum, mut ent_sum, mut norm_sum, mut count) = (0.0, 0.0, 0.0, 0usize);
            let mut shuffled = idx.clone();
            for _ in 0..cfg.epochs {
                shuffled.shuffle(rng);
                for chunk in minibatches(&shuffled, cfg.minibatches) {
                    let batch = gather_actor_batch(buf, agent, chunk, &factor)?;
                    let ab = ActorBatch {
                        obs: batch.0,
                        actions: &batch.1,
                        old_log_prob: &batch.2,
                        factor: &batch.3,
                    };
                    let mut out = actor_loss(&self.actors[agent], &ab, cfg.clip, cfg.entropy_coef)?;
                    if !out.loss.is_finite() || out.grads.iter().any(|g| !g.is_finite()) {
                        return Err(LearnError::NonFinite(format!(
                            "actor {agent} loss {} on a minibatch of {}",
                            out.loss,
                            chunk.len()
                        )));
                    }
                    norm_sum += global_norm_clip(&mut out.grads, cfg.max_grad_norm);
                    adam_step(&mut self.actors[agent].params, &out.grads, &mut self.actor_opt[agent], cfg.actor_lr);
                    loss_sum += out.loss;
                    ent_sum += out.entropy;
                    count += 1;
                }
            }
            // fold this agent's finished update into the running factor
            let ratios = self.ratios(buf, agent, &idx)?;
            for (&i, &r) in idx.iter().zip(&ratios) {
                factor[i] *= r;
            }
            let n = ratios.len() as f64;
            report.agents[agent] = AgentMetrics {
                policy_loss: loss_sum / count as f64,
                dist_entropy: ent_sum / count as f64,
                actor_grad_norm: norm_sum / count as f64,
                imp_weights_mean: ratios.iter().sum::<f64>() / n,
                imp_weights_min: ratios.iter().cloned().fold(f64::INFINITY, f64::min),
                imp_weights_max: ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            };
        }
        report.final_factor = factor;

        let all: Vec<usize> = (0..buf.len()).collect();
        let (mut vl_sum, mut vn_sum, mut count) = (0.0, 0.0, 0usize);
        let mut shuffled = all;
        for _ in 0..cfg.epochs {
            shuffled.shuffle(rng);
            for chunk in minibatches(&shuffled, cfg.minibatches) {
                let rows: Vec<&[f64]> = chunk.iter().map(|&i| buf.critic_obs[i].as_slice()).collect();
                let x = Matrix::from_rows(&rows)?;
                let targets: Vec<f64> = chunk.iter().map(|&i| buf.returns()[i]).collect();
                let (loss, mut grads) = mse_loss(&self.critic, &self.critic_params, &x, &targets)?;
                if !loss.is_finite() {
                    return Err(LearnError::NonFinite(format!("critic loss {loss}")));
                }
                grads.iter_mut().for_each(|g| *g *= cfg.value_coef);
                vn_sum += global_norm_clip(&mut grads, cfg.max_grad_norm);
                adam_step(&mut self.critic_params, &grads, &mut self.critic_opt, cfg.critic_lr);
                vl_sum += loss;
                count += 1;
            }
        }
        report.value_loss = vl_sum / count as f64;
        report.critic_grad_norm = vn_sum / count as f64;
        report.average_step_rewards = buf.rewards().iter().sum::<f64>() / buf.len() as f64;
        Ok(report)
    }

    /// π_new/π_old over the given samples, with the current parameters.
    fn ratios(&self, buf: &RolloutBuffer, agent: usize, idx: &[usize]) -> Result<Vec<f64>> {
        let rows: Vec<&[f64]> = idx.iter().map(|&i| buf.obs[agent][i].as_slice()).collect();
        let actions: Vec<PolicyAction> = idx.iter().map(|&i| buf.actions[agent][i].clone()).collect();
        let eval = self.actors[agent].evaluate(&Matrix::from_rows(&rows)?, &actions)?;
        Ok(idx.iter().zip(&eval.log_prob).map(|(&i, lp)| (lp - buf.old_log_prob[agent][i]).exp()).collect())
    }

    pub fn export(&self, prefix: &str) -> NamedArrays {
        let mut out = Vec::new();
        for (k, (a, opt)) in self.actors.iter().zip(&self.actor_opt).enumerate() {
            out.push((format!("{prefix}actor{k}.params"), a.params.clone()));
            out.push((format!("{prefix}actor{k}.adam"), opt.to_vec()));
        }
        out.push((format!("{prefix}critic.params"), self.critic_params.clone()));
        out.push((format!("{prefix}critic.adam"), self.critic_opt.to_vec()));
        out
    }

    pub fn import(&mut self, arrays: &[(String, Vec<f64>)], prefix: &str) -> Result<()> {
        for k in 0..self.actors.len() {
            let n = self.actors[k].params.len();
            self.actors[k].params = take(arrays, &format!("{prefix}actor{k}.params"), Some(n))?.to_vec();
            self.actor_opt[k] = AdamState::from_slice(take(arrays, &format!("{prefix}actor{k}.adam"), None)?, n)?;
        }
        let n = self.critic_params.len();
        self.critic_params = take(arrays, &format!("{prefix}critic.params"), Some(n))?.to_vec();
        self.critic_opt = AdamState::from_slice(take(arrays, &format!("{prefix}critic.adam"), None)?, n)?;
        Ok(())
    }
}

/// Splits `idx` into `count` near-equal contiguous chunks (fewer if short).
fn minibatches(idx: &[usize], count: usize) -> impl Iterator<Item = &[usize]> {
    let size = idx.len().div_ceil(count.max(1)).max(1);
    idx.chunks(size)
}

type GatheredBatch = (Matrix, Vec<PolicyAction>, Vec<f64>, Vec<f64>);

fn gather_actor_batch(buf: &RolloutBuffer, agent: usize, chunk: &[usize], factor: &[f64]) -> Result<GatheredBatch> {
    let rows: Vec<&[f64]> = chunk.iter().map(|&i| buf.obs[agent][i].as_slice()).collect();
    Ok((
        Matrix::from_rows(&rows)?,
        chunk.iter().map(|&i| buf.actions[agent][i].clone()).collect(),
        chunk.iter().map(|&i| buf.old_log_prob[agent][i]).collect(),
        chunk.iter().map(|&i| factor[i]).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gae_one_step_limit() {
        let r = [1.0, -0.5, 2.0];
        let v = [0.3, 0.1, -0.2];
        let d = [false, false, true];
        let (a, ret) = compute_gae(&r, &v, &d, 9.0, 0.9, 0.0);
        assert!((a[0] - (1.0 + 0.9 * 0.1 - 0.3)).abs() < 1e-15);
        assert!((a[1] - (-0.5 + 0.9 * -0.2 - 0.1)).abs() < 1e-15);
        assert!((a[2] - (2.0 + 0.2)).abs() < 1e-15);
        assert!((ret[0] - (a[0] + 0.3)).abs() < 1e-15);
    }

    #[test]
    fn gae_zero_discount() {
        let (a, _) = compute_gae(&[1.0, 2.0], &[0.5, 0.25], &[false, false], 100.0, 0.0, 0.95);
        assert_eq!(a, vec![0.5, 1.75]);
    }

    #[test]
    fn surrogate_table() {
        assert_eq!(surrogate_objective(1.0, 0.37, 0.2), 0.37);
        assert!((surrogate_objective(1.5, 1.0, 0.2) - 1.2).abs() < 1e-12);
        assert!((surrogate_objective(1.5, -1.0, 0.2) + 1.5).abs() < 1e-12);
        assert!((surrogate_objective(0.5, 1.0, 0.2) - 0.5).abs() < 1e-12);
        assert!((surrogate_objective(0.5, -1.0, 0.2) + 0.8).abs() < 1e-12);
    }

    #[test]
    fn normalization_moments() {
        let z = normalize(&[1.0, 2.0, 3.0, 10.0]);
        let mean = z.iter().sum::<f64>() / 4.0;
        let var = z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn minibatches_cover_all_indices() {
        let idx: Vec<usize> = (0..10).collect();
        let chunks: Vec<&[usize]> = minibatches(&idx, 4).collect();
        assert_eq!(chunks.len(), 4);
        assert_eq!(chunks.concat(), idx);
    }

    #[test]
    fn open_segment_is_an_error() {
        let mut buf = RolloutBuffer::new(1);
        buf.push(RolloutStep {
            obs: vec![vec![0.0]],
            actions: vec![PolicyAction::Discrete(vec![0])],
            log_probs: vec![0.0],
            active: vec![true],
            critic_obs: vec![0.0],
            value: 0.0,
            reward: 1.0,
            done: false,
        })
        .unwrap();
        assert!(buf.finish(0.9, 0.9).is_err());
        buf.end_segment(0.0);
        buf.finish(0.9, 0.9).unwrap();
        assert_eq!(buf.advantages(), &[1.0]);
    }
}
