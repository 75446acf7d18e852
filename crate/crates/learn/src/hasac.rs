//! Heterogeneous-agent soft actor-critic: FIFO replay, twin centralized soft
//! critics with polyak targets, sequential per-agent actor updates, and
//! automatic temperature.
//!
//! Discrete heads use exact categorical expectations. The soft value of the
//! joint policy is evaluated agent by agent: agent m's own action set is
//! enumerated while the others' actions are held at one sample from their
//! current policies,
//!
//! V(s′) = (1/M) Σ_m Σ_a π_m(a|s′)·min(Q1′, Q2′)(s′, a, â_{−m}) + α Σ_m H_m(s′).
//!
//! Gaussian heads use a single reparameterized joint sample.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{LearnError, Result};
use crate::neural::{
    adam_step, global_norm_clip, mse_loss, polyak, Actor, AdamState, Matrix, Mlp, PolicyAction, PolicyHead,
    HIDDEN_GAIN,
};
use crate::{take, NamedArrays};

#[derive(Debug, Clone, PartialEq)]
pub struct HasacConfig {
    pub gamma: f64,
    pub tau: f64,
    pub init_alpha: f64,
    pub auto_alpha: bool,
    /// Target entropy per agent = scale·Σ ln(group size) for discrete heads.
    pub target_entropy_scale: f64,
    pub batch_size: usize,
    pub warmup_steps: usize,
    pub updates_per_step: f64,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub alpha_lr: f64,
    pub capacity: usize,
    pub max_grad_norm: f64,
    pub log_alpha_min: f64,
    pub log_alpha_max: f64,
    pub reward_scale: f64,
    pub hidden: Vec<usize>,
}

impl Default for HasacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            init_alpha: 0.2,
            auto_alpha: true,
            target_entropy_scale: 0.6,
            batch_size: 256,
            warmup_steps: 2000,
            updates_per_step: 1.0,
            critic_lr: 3e-4,
            actor_lr: 3e-4,
            alpha_lr: 3e-4,
            capacity: 200_000,
            max_grad_norm: 10.0,
            log_alpha_min: -12.0,
            log_alpha_max: 2.0,
            reward_scale: 1.0,
            hidden: vec![128, 128],
        }
    }
}

impl HasacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LearnError::InvalidConfig(m.into()));
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.batch_size == 0 || self.batch_size > self.capacity {
            return bad("batch size must be positive and at most the replay capacity");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.init_alpha > 0.0) || self.log_alpha_min >= self.log_alpha_max {
            return bad("initial alpha must be positive and the log-alpha bounds ordered");
        }
        if !(self.updates_per_step >= 0.0 && self.max_grad_norm > 0.0) {
            return bad("updates_per_step must be non-negative and max_grad_norm positive");
        }
        Ok(())
    }
}

/// Fixed-capacity FIFO store with uniform sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<T>,
    cursor: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, items: Vec::new(), cursor: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Inserts, evicting the oldest entry when full.
    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.cursor] = item;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Entries from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        let split = if self.items.len() < self.capacity { 0 } else { self.cursor };
        self.items[split..].iter().chain(&self.items[..split])
    }

    pub fn get(&self, i: usize) -> Option<&T> {
        self.items.get(i)
    }

    /// Uniform indices, with replacement, into the current contents.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.len() < batch || batch == 0 {
            return Err(LearnError::InsufficientData { have: self.items.len(), need: batch.max(1) });
        }
        Ok((0..batch).map(|_| rng.gen_range(0..self.items.len())).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&T>> {
        Ok(self.sample_indices(batch, rng)?.into_iter().map(|i| &self.items[i]).collect())
    }
}

/// One joint environment step for a team.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<PolicyAction>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<Vec<f64>>,
    pub done: bool,
}

impl Transition {
    /// Team reward: mean of the members' rewards.
    pub fn team_reward(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.rewards.len().max(1) as f64
    }
}

/// Column layout of critic inputs: joint observation, then each agent's
/// action encoding (concatenated one-hot groups or squashed values).
#[derive(Debug, Clone, PartialEq)]
pub struct JointLayout {
    obs_dim: usize,
    heads: Vec<PolicyHead>,
}

impl JointLayout {
    pub fn new(obs_dim: usize, heads: Vec<PolicyHead>) -> Self {
        Self { obs_dim, heads }
    }

    pub fn num_agents(&self) -> usize {
        self.heads.len()
    }

    pub fn heads(&self) -> &[PolicyHead] {
        &self.heads
    }

    pub fn input_len(&self) -> usize {
        self.obs_dim * self.heads.len() + self.heads.iter().map(PolicyHead::encoding_len).sum::<usize>()
    }

    /// Columns holding agent `m`'s action encoding.
    pub fn action_range(&self, m: usize) -> Range<usize> {
        let start = self.obs_dim * self.heads.len()
            + self.heads[..m].iter().map(PolicyHead::encoding_len).sum::<usize>();
        start..start + self.heads[m].encoding_len()
    }

    pub fn encode(&self, obs: &[Vec<f64>], actions: &[PolicyAction]) -> Result<Vec<f64>> {
        if obs.len() != self.heads.len() || actions.len() != self.heads.len() {
            return Err(LearnError::Shape("joint input arity".into()));
        }
        let mut row = Vec::with_capacity(self.input_len());
        for o in obs {
            if o.len() != self.obs_dim {
                return Err(LearnError::Shape(format!("observation of {} values, expected {}", o.len(), self.obs_dim)));
            }
            row.extend_from_slice(o);
        }
        for (h, a) in self.heads.iter().zip(actions) {
            row.extend(h.encode(a)?);
        }
        Ok(row)
    }
}

/// Twin Q networks with polyak-tracked target copies.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftCritics {
    net: Mlp,
    pub online: [Vec<f64>; 2],
    pub target: [Vec<f64>; 2],
    opt: [AdamState; 2],
}

impl SoftCritics {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let net = Mlp::new(&dims)?;
        let q1 = net.init(rng, HIDDEN_GAIN, 1.0);
        let q2 = net.init(rng, HIDDEN_GAIN, 1.0);
        let n = q1.len();
        Ok(Self { net, target: [q1.clone(), q2.clone()], online: [q1, q2], opt: [AdamState::new(n), AdamState::new(n)] })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    /// Elementwise minimum of the two critics (target or online copies).
    pub fn q_min(&self, use_target: bool, x: &Matrix) -> Result<Vec<f64>> {
        let p = if use_target { &self.target } else { &self.online };
        let a = self.net.predict(&p[0], x)?;
        let b = self.net.predict(&p[1], x)?;
        Ok(a.data.iter().zip(&b.data).map(|(u, v)| u.min(*v)).collect())
    }

    /// Online min-Q and its gradient with respect to the input rows.
    pub fn q_min_with_input_grad(&self, x: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        let (a, ca) = self.net.forward(&self.online[0], x)?;
        let (b, cb) = self.net.forward(&self.online[1], x)?;
        let mut up_a = Matrix::zeros(x.rows, 1);
        let mut up_b = Matrix::zeros(x.rows, 1);
        let mut q = Vec::with_capacity(x.rows);
        for r in 0..x.rows {
            if a.data[r] <= b.data[r] {
                up_a.data[r] = 1.0;
                q.push(a.data[r]);
            } else {
                up_b.data[r] = 1.0;
                q.push(b.data[r]);
            }
        }
        let (_, mut ga) = self.net.backward(&self.online[0], &ca, &up_a)?;
        let (_, gb) = self.net.backward(&self.online[1], &cb, &up_b)?;
        ga.data.iter_mut().zip(&gb.data).for_each(|(u, v)| *u += v);
        Ok((q, ga))
    }

    pub fn update_targets(&mut self, tau: f64) {
        for k in 0..2 {
            polyak(&mut self.target[k], &self.online[k], tau);
        }
    }
}

/// Rows of `base` with agent `m`'s action slot set to every discrete action in
/// enumeration order.
fn enumerated_rows(layout: &JointLayout, base: &[f64], m: usize, all: &[Vec<usize>]) -> Result<Matrix> {
    let PolicyHead::Discrete(head) = &layout.heads[m] else {
        return Err(LearnError::InvalidAction("enumeration needs a discrete head".into()));
    };
    let range = layout.action_range(m);
    let mut x = Matrix::zeros(all.len(), base.len());
    for (r, a) in all.iter().enumerate() {
        let row = x.row_mut(r);
        row.copy_from_slice(base);
        row[range.clone()].copy_from_slice(&head.one_hot(a));
    }
    Ok(x)
}

/// Soft value of the next state for one transition.
///
/// `sampled` holds one joint action drawn from the current policies at
/// `next_obs`; discrete agents only use the other agents' entries of it.
pub fn soft_value(
    layout: &JointLayout,
    critics: &SoftCritics,
    actors: &[Actor],
    next_obs: &[Vec<f64>],
    sampled: &[PolicyAction],
    alpha: f64,
) -> Result<f64> {
    let base = layout.encode(next_obs, sampled)?;
    let m_count = layout.num_agents();
    if layout.heads.iter().all(|h| matches!(h, PolicyHead::Gaussian(_))) {
        let q = critics.q_min(true, &Matrix::new(1, base.len(), base)?)?[0];
        let mut log_pi = 0.0;
        for m in 0..m_count {
            log_pi += actors[m].log_prob_entropy(&next_obs[m], &sampled[m])?.0;
        }
        return Ok(q - alpha * log_pi);
    }
    let mut expected_q = 0.0;
    let mut entropy = 0.0;
    for m in 0..m_count {
        let PolicyHead::Discrete(head) = &layout.heads[m] else {
            return Err(LearnError::InvalidAction("mixed discrete and continuous heads".into()));
        };
        let lp = actors[m].discrete_log_probs(&next_obs[m])?;
        let all = head.enumerate();
        let q = critics.q_min(true, &enumerated_rows(layout, &base, m, &all)?)?;
        expected_q += all.iter().zip(&q).map(|(a, q)| head.action_log_prob(&lp, a).exp() * q).sum::<f64>();
        entropy += head.entropy(&lp);
    }
    Ok(expected_q / m_count as f64 + alpha * entropy)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorObjective {
    pub loss: f64,
    pub grads: Vec<f64>,
    /// Mean policy entropy over the batch (exact for discrete heads, −log π
    /// of the reparameterized sample for Gaussian heads).
    pub entropy: f64,
}

/// mean_b Σ_a π(a|s_b)·(α log π(a|s_b) − Q_b(a)) for a discrete actor, with
/// `q_values[b]` listing Q for every action in enumeration order.
pub fn discrete_actor_objective(actor: &Actor, obs: &Matrix, q_values: &[Vec<f64>], alpha: f64) -> Result<ActorObjective> {
    let PolicyHead::Discrete(head) = actor.head() else {
        return Err(LearnError::InvalidAction("discrete objective on a continuous actor".into()));
    };
    let all = head.enumerate();
    let (out, cache) = actor.forward(obs)?;
    let n = obs.rows as f64;
    let mut upstream = Matrix::zeros(obs.rows, out.cols);
    let (mut loss, mut entropy) = (0.0, 0.0);
    for b in 0..obs.rows {
        if q_values[b].len() != all.len() {
            return Err(LearnError::Shape("one Q value per enumerated action required".into()));
        }
        let lp = head.log_probs(out.row(b));
        let mut l_b = 0.0;
        let up = upstream.row_mut(b);
        for (a, &q) in all.iter().zip(&q_values[b]) {
            let log_pi = head.action_log_prob(&lp, a);
            let w = log_pi.exp() * (alpha * log_pi - q);
            l_b += w;
            let mut start = 0;
            for (&k, &j) in head.sizes().iter().zip(a) {
                up[start + j] += w;
                start += k;
            }
        }
        // ∂/∂z_{g,j} = Σ_a π f ([a_g = j] − p_{g,j})
        for (u, l) in up.iter_mut().zip(&lp) {
            *u = (*u - l.exp() * l_b) / n;
        }
        loss += l_b / n;
        entropy += head.entropy(&lp) / n;
    }
    let grads = actor.backward_output(&cache, &upstream, &[])?;
    Ok(ActorObjective { loss, grads, entropy })
}

/// Reparameterized objective mean_b [α log π(u_b) − Q(squash(u_b))] with
/// u = μ + σ·noise. `critic` maps a batch of squashed actions to Q values and
/// ∂Q/∂action.
pub fn gaussian_actor_objective<F>(
    actor: &Actor,
    obs: &Matrix,
    noise: &[Vec<f64>],
    alpha: f64,
    mut critic: F,
) -> Result<ActorObjective>
where
    F: FnMut(&Matrix) -> Result<(Vec<f64>, Matrix)>,
{
    let PolicyHead::Gaussian(head) = actor.head() else {
        return Err(LearnError::InvalidAction("gaussian objective on a discrete actor".into()));
    };
    let (mean, cache) = actor.forward(obs)?;
    let log_std = actor.log_std().to_vec();
    let d = head.dim();
    let n = obs.rows as f64;
    let mut us = Vec::with_capacity(obs.rows);
    let mut actions = Matrix::zeros(obs.rows, d);
    for b in 0..obs.rows {
        let u: Vec<f64> = (0..d).map(|i| mean.get(b, i) + log_std[i].exp() * noise[b][i]).collect();
        actions.row_mut(b).copy_from_slice(&head.squash(&u));
        us.push(u);
    }
    let (q, dq) = critic(&actions)?;
    let mut upstream = Matrix::zeros(obs.rows, d);
    let mut log_std_grad = vec![0.0; d];
    let (mut loss, mut neg_logp) = (0.0, 0.0);
    for b in 0..obs.rows {
        let u = &us[b];
        let log_pi = head.log_prob(mean.row(b), &log_std, u);
        loss += (alpha * log_pi - q[b]) / n;
        neg_logp -= log_pi / n;
        let jac = head.squash_derivative(u);
        for i in 0..d {
            let t = u[i].tanh();
            let sigma_eps = log_std[i].exp() * noise[b][i];
            let dq_du = dq.get(b, i) * jac[i];
            upstream.row_mut(b)[i] = (alpha * 2.0 * t - dq_du) / n;
            log_std_grad[i] += (alpha * (-1.0 + 2.0 * t * sigma_eps) - dq_du * sigma_eps) / n;
        }
    }
    let grads = actor.backward_output(&cache, &upstream, &log_std_grad)?;
    Ok(ActorObjective { loss, grads, entropy: neg_logp })
}

/// One SGD step on log α for the objective log α·(H_observed − H_target), clamped.
pub fn temperature_step(log_alpha: f64, observed: f64, target: f64, lr: f64, min: f64, max: f64) -> f64 {
    (log_alpha - lr * (observed - target)).clamp(min, max)
}

/// Default per-agent entropy target for a head.
pub fn default_target_entropy(head: &PolicyHead, scale: f64) -> f64 {
    match head {
        PolicyHead::Discrete(h) => scale * h.sizes().iter().map(|&k| (k as f64).ln()).sum::<f64>(),
        PolicyHead::Gaussian(h) => -(h.dim() as f64),
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AgentStats {
    pub actor_loss: f64,
    pub entropy: f64,
    pub actor_grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HasacReport {
    pub order: Vec<usize>,
    pub q_losses: [f64; 2],
    pub critic_grad_norm: f64,
    /// Indexed by agent id.
    pub agents: Vec<AgentStats>,
    pub alpha: f64,
    pub average_step_rewards: f64,
}

/// Actors, twin critics, temperature and replay for one team.
#[derive(Debug, Clone)]
pub struct HasacTeam {
    cfg: HasacConfig,
    layout: JointLayout,
    pub actors: Vec<Actor>,
    actor_opt: Vec<AdamState>,
    pub critics: SoftCritics,
    pub log_alpha: f64,
    pub replay: ReplayBuffer<Transition>,
}

impl HasacTeam {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, heads: Vec<PolicyHead>, cfg: HasacConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let actors = heads
            .iter()
            .map(|h| Actor::new(obs_dim, &cfg.hidden, h.clone(), rng))
            .collect::<Result<Vec<_>>>()?;
        let layout = JointLayout::new(obs_dim, heads);
        let critics = SoftCritics::new(layout.input_len(), &cfg.hidden, rng)?;
        let actor_opt = actors.iter().map(|a| AdamState::new(a.params.len())).collect();
        Ok(Self {
            log_alpha: cfg.init_alpha.ln(),
            replay: ReplayBuffer::new(cfg.capacity),
            cfg,
            layout,
            actors,
            actor_opt,
            critics,
        })
    }

    pub fn config(&self) -> &HasacConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &JointLayout {
        &self.layout
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn num_agents(&self) -> usize {
        self.actors.len()
    }

    pub fn act<R: Rng + ?Sized>(&self, agent: usize, obs: &[f64], rng: &mut R) -> Result<PolicyAction> {
        self.actors[agent].sample(obs, rng)
    }

    pub fn store(&mut self, t: Transition) -> Result<()> {
        if t.obs.len() != self.num_agents() || t.actions.len() != self.num_agents() || t.next_obs.len() != self.num_agents()
        {
            return Err(LearnError::Shape("transition arity differs from team".into()));
        }
        self.replay.push(t);
        Ok(())
    }

    /// Whether the replay holds enough data for an update.
    pub fn ready(&self) -> bool {
        self.replay.len() >= self.cfg.batch_size
    }

    /// One gradient round: critics, then actors in a drawn order, then α.
    pub fn update<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<HasacReport> {
        let idx = self.replay.sample_indices(self.cfg.batch_size, rng)?;
        let batch: Vec<Transition> = idx.iter().map(|&i| self.replay.items[i].clone()).collect();
        let mut report = self.critic_update(&batch, rng)?;
        let (order, agents) = self.actor_update_sequential(&batch, rng)?;
        if self.cfg.auto_alpha {
            let observed = agents.iter().map(|a| a.entropy).sum::<f64>() / agents.len() as f64;
            let target = self
                .layout
                .heads
                .iter()
                .map(|h| default_target_entropy(h, self.cfg.target_entropy_scale))
                .sum::<f64>()
                / agents.len() as f64;
            self.log_alpha = temperature_step(
                self.log_alpha,
                observed,
                target,
                self.cfg.alpha_lr,
                self.cfg.log_alpha_min,
                self.cfg.log_alpha_max,
            );
        }
        report.order = order;
        report.agents = agents;
        report.alpha = self.alpha();
        Ok(report)
    }

    /// Soft Bellman targets y = r + γ·(1 − done)·V(s′) for a batch.
    pub fn bellman_targets<R: Rng + ?Sized>(&self, batch: &[Transition], rng: &mut R) -> Result<Vec<f64>> {
        let alpha = self.alpha();
        let mut targets = Vec::with_capacity(batch.len());
        for t in batch {
            let reward = self.cfg.reward_scale * t.team_reward();
            let y = if t.done || self.cfg.gamma == 0.0 {
                reward
            } else {
                let sampled = self
                    .actors
                    .iter()
                    .zip(&t.next_obs)
                    .map(|(a, o)| a.sample(o, rng))
                    .collect::<Result<Vec<_>>>()?;
                let v = soft_value(&self.layout, &self.critics, &self.actors, &t.next_obs, &sampled, alpha)?;
                reward + self.cfg.gamma * v
            };
            if !y.is_finite() {
                return Err(LearnError::NonFinite(format!(
                    "soft Bellman target {y} (reward {reward}, alpha {alpha}, done {})",
                    t.done
                )));
            }
            targets.push(y);
        }
        Ok(targets)
    }

    /// Soft Bellman regression for both critics followed by polyak tracking.
    pub fn critic_update<R: Rng + ?Sized>(&mut self, batch: &[Transition], rng: &mut R) -> Result<HasacReport> {
        let targets = self.bellman_targets(batch, rng)?;
        let rows = batch.iter().map(|t| self.layout.encode(&t.obs, &t.actions)).collect::<Result<Vec<_>>>()?;
        let x = Matrix::from_rows(&rows)?;
        let mut report = HasacReport::default();
        let mut norm = 0.0;
        for k in 0..2 {
            let (loss, mut grads) = mse_loss(&self.critics.net, &self.critics.online[k], &x, &targets)?;
            norm += global_norm_clip(&mut grads, self.cfg.max_grad_norm) / 2.0;
            adam_step(&mut self.critics.online[k], &grads, &mut self.critics.opt[k], self.cfg.critic_lr);
            report.q_losses[k] = loss;
        }
        self.critics.update_targets(self.cfg.tau);
        report.critic_grad_norm = norm;
        report.average_step_rewards = batch.iter().map(Transition::team_reward).sum::<f64>() / batch.len() as f64;
        Ok(report)
    }

    /// Updates agents one at a time in a random order; each agent sees its
    /// already-updated predecessors' actions re-sampled from their new policies.
    pub fn actor_update_sequential<R: Rng + ?Sized>(
        &mut self,
        batch: &[Transition],
        rng: &mut R,
    ) -> Result<(Vec<usize>, Vec<AgentStats>)> {
        let alpha = self.alpha();
        let mut order: Vec<usize> = (0..self.num_agents()).collect();
        order.shuffle(rng);
        let mut joint: Vec<Vec<PolicyAction>> = batch.iter().map(|t| t.actions.clone()).collect();
        let mut stats = vec![AgentStats::default(); self.num_agents()];
        for &m in &order {
            let obs = Matrix::from_rows(&batch.iter().map(|t| t.obs[m].as_slice()).collect::<Vec<_>>())?;
            let mut out = match &self.layout.heads[m] {
                PolicyHead::Discrete(head) => {
                    let all = head.enumerate();
                    let mut q_values = Vec::with_capacity(batch.len());
                    for (t, acts) in batch.iter().zip(&joint) {
                        let base = self.layout.encode(&t.obs, acts)?;
                        q_values.push(self.critics.q_min(false, &enumerated_rows(&self.layout, &base, m, &all)?)?);
                    }
                    discrete_actor_objective(&self.actors[m], &obs, &q_values, alpha)?
                }
                PolicyHead::Gaussian(head) => {
                    let noise: Vec<Vec<f64>> =
                        (0..batch.len()).map(|_| (0..head.dim()).map(|_| rng.sample(StandardNormal)).collect()).collect();
                    let bases = batch
                        .iter()
                        .zip(&joint)
                        .map(|(t, acts)| self.layout.encode(&t.obs, acts))
                        .collect::<Result<Vec<_>>>()?;
                    let range = self.layout.action_range(m);
                    let critics = &self.critics;
                    gaussian_actor_objective(&self.actors[m], &obs, &noise, alpha, |acts| {
                        let mut x = Matrix::from_rows(&bases)?;
                        for b in 0..acts.rows {
                            x.row_mut(b)[range.clone()].copy_from_slice(acts.row(b));
                        }
                        let (q, gx) = critics.q_min_with_input_grad(&x)?;
                        let mut dq = Matrix::zeros(acts.rows, acts.cols);
                        for b in 0..acts.rows {
                            dq.row_mut(b).copy_from_slice(&gx.row(b)[range.clone()]);
                        }
                        Ok((q, dq))
                    })?
                }
            };
            if !out.loss.is_finite() || out.grads.iter().any(|g| !g.is_finite()) {
                return Err(LearnError::NonFinite(format!("actor {m} loss {}", out.loss)));
            }
            let norm = global_norm_clip(&mut out.grads, self.cfg.max_grad_norm);
            adam_step(&mut self.actors[m].params, &out.grads, &mut self.actor_opt[m], self.cfg.actor_lr);
            stats[m] = AgentStats { actor_loss: out.loss, entropy: out.entropy, actor_grad_norm: norm };
            for (t, acts) in batch.iter().zip(joint.iter_mut()) {
                acts[m] = self.actors[m].sample(&t.obs[m], rng)?;
            }
        }
        Ok((order, stats))
    }

    fn action_width(head: &PolicyHead) -> usize {
        match head {
            PolicyHead::Discrete(h) => h.sizes().len(),
            PolicyHead::Gaussian(h) => h.dim(),
        }
    }

    fn transition_width(&self) -> usize {
        let m = self.num_agents();
        2 * m * self.layout.obs_dim + self.layout.heads.iter().map(Self::action_width).sum::<usize>() + m + 1
    }

    pub fn export(&self, prefix: &str) -> NamedArrays {
        let mut out = Vec::new();
        for (k, (a, opt)) in self.actors.iter().zip(&self.actor_opt).enumerate() {
            out.push((format!("{prefix}actor{k}.params"), a.params.clone()));
            out.push((format!("{prefix}actor{k}.adam"), opt.to_vec()));
        }
        for k in 0..2 {
            out.push((format!("{prefix}q{k}.params"), self.critics.online[k].clone()));
            out.push((format!("{prefix}q{k}.target"), self.critics.target[k].clone()));
            out.push((format!("{prefix}q{k}.adam"), self.critics.opt[k].to_vec()));
        }
        out.push((format!("{prefix}log_alpha"), vec![self.log_alpha]));
        let mut data = Vec::with_capacity(self.replay.len() * self.transition_width());
        for t in &self.replay.items {
            t.obs.iter().for_each(|o| data.extend_from_slice(o));
            t.actions.iter().for_each(|a| data.extend(a.to_f64s()));
            data.extend_from_slice(&t.rewards);
            t.next_obs.iter().for_each(|o| data.extend_from_slice(o));
            data.push(t.done as u8 as f64);
        }
        out.push((format!("{prefix}replay.cursor"), vec![self.replay.cursor as f64, self.replay.len() as f64]));
        out.push((format!("{prefix}replay.data"), data));
        out
    }

    pub fn import(&mut self, arrays: &[(String, Vec<f64>)], prefix: &str) -> Result<()> {
        for k in 0..self.actors.len() {
            let n = self.actors[k].params.len();
            self.actors[k].params = take(arrays, &format!("{prefix}actor{k}.params"), Some(n))?.to_vec();
            self.actor_opt[k] = AdamState::from_slice(take(arrays, &format!("{prefix}actor{k}.adam"), None)?, n)?;
        }
        let n = self.critics.online[0].len();
        for k in 0..2 {
            self.critics.online[k] = take(arrays, &format!("{prefix}q{k}.params"), Some(n))?.to_vec();
            self.critics.target[k] = take(arrays, &format!("{prefix}q{k}.target"), Some(n))?.to_vec();
            self.critics.opt[k] = AdamState::from_slice(take(arrays, &format!("{prefix}q{k}.adam"), None)?, n)?;
        }
        self.log_alpha = take(arrays, &format!("{prefix}log_alpha"), Some(1))?[0];
        let meta = take(arrays, &format!("{prefix}replay.cursor"), Some(2))?;
        let (cursor, len) = (meta[0] as usize, meta[1] as usize);
        let width = self.transition_width();
        let data = take(arrays, &format!("{prefix}replay.data"), Some(len * width))?;
        if len > self.replay.capacity() || cursor >= self.replay.capacity() {
            return Err(LearnError::Snapshot("replay cursor outside capacity".into()));
        }
        let (m, d) = (self.num_agents(), self.layout.obs_dim);
        let mut items = Vec::with_capacity(len);
        for row in data.chunks_exact(width) {
            let mut it = row.iter().copied();
            let mut next = |k: usize| it.by_ref().take(k).collect::<Vec<f64>>();
            let obs = (0..m).map(|_| next(d)).collect();
            let actions = self
                .layout
                .heads
                .iter()
                .map(|h| {
                    let raw = next(Self::action_width(h));
                    match h {
                        PolicyHead::Discrete(_) => PolicyAction::Discrete(raw.iter().map(|&v| v as usize).collect()),
                        PolicyHead::Gaussian(_) => PolicyAction::Continuous(raw),
                    }
                })
                .collect();
            let rewards = next(m);
            let next_obs = (0..m).map(|_| next(d)).collect();
            let done = next(1)[0] != 0.0;
            items.push(Transition { obs, actions, rewards, next_obs, done });
        }
        self.replay.items = items;
        self.replay.cursor = cursor;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..4 {
            b.push(i);
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.iter().copied().collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn single_item_sample_and_underfill() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = ReplayBuffer::new(5);
        assert!(matches!(b.sample(1, &mut rng), Err(LearnError::InsufficientData { have: 0, need: 1 })));
        b.push("x");
        assert_eq!(b.sample(1, &mut rng).unwrap(), vec![&"x"]);
        assert!(b.sample(2, &mut rng).is_err());
    }

    #[test]
    fn temperature_direction_and_bounds() {
        assert_eq!(temperature_step(0.3, 1.0, 1.0, 0.1, -5.0, 2.0), 0.3);
        assert!(temperature_step(0.3, 0.5, 1.0, 0.1, -5.0, 2.0) > 0.3);
        assert!(temperature_step(0.3, 2.0, 1.0, 0.1, -5.0, 2.0) < 0.3);
        assert_eq!(temperature_step(1.99, -100.0, 1.0, 0.1, -5.0, 2.0), 2.0);
    }

    #[test]
    fn config_validation() {
        assert!(HasacConfig::default().validate().is_ok());
        assert!(HasacConfig { tau: 0.0, ..HasacConfig::default() }.validate().is_err());
        assert!(HasacConfig { batch_size: 10, capacity: 5, ..HasacConfig::default() }.validate().is_err());
    }
}
