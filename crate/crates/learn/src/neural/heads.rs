//! Stochastic policy heads and the actor network that feeds them.

use std::f64::consts::LN_2;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{Matrix, Mlp, MlpCache};
use crate::error::{LearnError, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// An action drawn from a policy head. Continuous actions keep the
/// pre-squash sample so log-densities need no inverse tanh.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyAction {
    Discrete(Vec<usize>),
    Continuous(Vec<f64>),
}

impl PolicyAction {
    pub fn as_discrete(&self) -> Option<&[usize]> {
        match self {
            Self::Discrete(a) => Some(a),
            Self::Continuous(_) => None,
        }
    }

    pub fn as_continuous(&self) -> Option<&[f64]> {
        match self {
            Self::Continuous(u) => Some(u),
            Self::Discrete(_) => None,
        }
    }

    /// Flat numeric form for storage.
    pub fn to_f64s(&self) -> Vec<f64> {
        match self {
            Self::Discrete(a) => a.iter().map(|&i| i as f64).collect(),
            Self::Continuous(u) => u.clone(),
        }
    }
}

/// Independent categorical distributions, one per action group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiDiscreteHead {
    sizes: Vec<usize>,
}

impl MultiDiscreteHead {
    pub fn new(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(LearnError::Shape(format!("bad group sizes {sizes:?}")));
        }
        Ok(Self { sizes: sizes.to_vec() })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Number of distinct joint actions.
    pub fn cardinality(&self) -> usize {
        self.sizes.iter().product()
    }

    fn groups(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.sizes.iter().scan(0, |start, &k| {
            let s = *start;
            *start += k;
            Some((s, k))
        })
    }

    /// Per-group log-softmax of `logits`.
    pub fn log_probs(&self, logits: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; logits.len()];
        for (s, k) in self.groups() {
            let z = &logits[s..s + k];
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for j in 0..k {
                out[s + j] = z[j] - lse;
            }
        }
        out
    }

    pub fn probs(&self, logits: &[f64]) -> Vec<f64> {
        self.log_probs(logits).into_iter().map(f64::exp).collect()
    }

    pub fn validate(&self, action: &[usize]) -> Result<()> {
        if action.len() != self.sizes.len() {
            return Err(LearnError::InvalidAction(format!("{} groups, expected {}", action.len(), self.sizes.len())));
        }
        for (g, (&a, &k)) in action.iter().zip(&self.sizes).enumerate() {
            if a >= k {
                return Err(LearnError::InvalidAction(format!("group {g}: index {a} ≥ {k}")));
            }
        }
        Ok(())
    }

    /// Joint log-probability from precomputed per-group log-probabilities.
    pub fn action_log_prob(&self, log_probs: &[f64], action: &[usize]) -> f64 {
        self.groups().zip(action).map(|((s, _), &a)| log_probs[s + a]).sum()
    }

    /// Sum of per-group entropies.
    pub fn entropy(&self, log_probs: &[f64]) -> f64 {
        -log_probs.iter().map(|&lp| lp.exp() * lp).sum::<f64>()
    }

    /// ∂ log π(action) / ∂ logits.
    pub fn log_prob_grad(&self, log_probs: &[f64], action: &[usize]) -> Vec<f64> {
        let mut g: Vec<f64> = log_probs.iter().map(|lp| -lp.exp()).collect();
        for ((s, _), &a) in self.groups().zip(action) {
            g[s + a] += 1.0;
        }
        g
    }

    /// ∂ H / ∂ logits: −p_j (log p_j + H_group).
    pub fn entropy_grad(&self, log_probs: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; log_probs.len()];
        for (s, k) in self.groups() {
            let lp = &log_probs[s..s + k];
            let h: f64 = -lp.iter().map(|&l| l.exp() * l).sum::<f64>();
            for j in 0..k {
                g[s + j] = -lp[j].exp() * (lp[j] + h);
            }
        }
        g
    }

    pub fn sample<R: Rng + ?Sized>(&self, log_probs: &[f64], rng: &mut R) -> Vec<usize> {
        self.groups()
            .map(|(s, k)| {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for j in 0..k {
                    acc += log_probs[s + j].exp();
                    if u < acc {
                        return j;
                    }
                }
                k - 1
            })
            .collect()
    }

    pub fn mode(&self, log_probs: &[f64]) -> Vec<usize> {
        self.groups()
            .map(|(s, k)| {
                (0..k).fold(0, |best, j| if log_probs[s + j] > log_probs[s + best] { j } else { best })
            })
            .collect()
    }

    /// Concatenated one-hot encoding of a joint action.
    pub fn one_hot(&self, action: &[usize]) -> Vec<f64> {
        let mut v = vec![0.0; self.total()];
        for ((s, _), &a) in self.groups().zip(action) {
            v[s + a] = 1.0;
        }
        v
    }

    /// Every joint action, last group varying fastest.
    pub fn enumerate(&self) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for &k in &self.sizes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    (0..k).map(move |j| {
                        let mut a = prefix.clone();
                        a.push(j);
                        a
                    })
                })
                .collect();
        }
        out
    }
}

/// Diagonal Gaussian with a state-independent log-std, squashed by tanh into
/// per-dimension bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead {
    low: Vec<f64>,
    high: Vec<f64>,
}

impl GaussianHead {
    pub fn new(low: &[f64], high: &[f64]) -> Result<Self> {
        if low.is_empty() || low.len() != high.len() || low.iter().zip(high).any(|(l, h)| !(l < h)) {
            return Err(LearnError::Shape("gaussian bounds must be non-empty with low < high".into()));
        }
        Ok(Self { low: low.to_vec(), high: high.to_vec() })
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    fn half(&self, i: usize) -> f64 {
        0.5 * (self.high[i] - self.low[i])
    }

    /// Maps a pre-squash sample into the action bounds.
    pub fn squash(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, &x)| 0.5 * (self.high[i] + self.low[i]) + self.half(i) * x.tanh())
            .collect()
    }

    /// d squash / du, per dimension.
    pub fn squash_derivative(&self, u: &[f64]) -> Vec<f64> {
        u.iter().enumerate().map(|(i, &x)| self.half(i) * (1.0 - x.tanh().powi(2))).collect()
    }

    /// ln |d squash / du| for one dimension, computed without cancellation.
    fn log_jacobian(&self, i: usize, u: f64) -> f64 {
        // ln(1 − tanh² u) = 2 (ln 2 − u − softplus(−2u))
        let softplus = (-2.0 * u).max(0.0) + (-(2.0 * u).abs()).exp().ln_1p();
        self.half(i).ln() + 2.0 * (LN_2 - u - softplus)
    }

    /// Log-density of the squashed action given its pre-squash sample.
    pub fn log_prob(&self, mean: &[f64], log_std: &[f64], u: &[f64]) -> f64 {
        (0..self.dim())
            .map(|i| {
                let z = (u[i] - mean[i]) * (-log_std[i]).exp();
                -0.5 * z * z - log_std[i] - 0.5 * LN_2PI - self.log_jacobian(i, u[i])
            })
            .sum()
    }

    /// Entropy of the pre-squash Gaussian.
    pub fn entropy(&self, log_std: &[f64]) -> f64 {
        log_std.iter().map(|ls| ls + 0.5 * (1.0 + LN_2PI)).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, mean: &[f64], log_std: &[f64], rng: &mut R) -> Vec<f64> {
        mean.iter()
            .zip(log_std)
            .map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyHead {
    Discrete(MultiDiscreteHead),
    Gaussian(GaussianHead),
}

impl PolicyHead {
    /// Width of the trunk output this head consumes.
    pub fn net_outputs(&self) -> usize {
        match self {
            Self::Discrete(h) => h.total(),
            Self::Gaussian(h) => h.dim(),
        }
    }

    /// Width of the critic-side action encoding.
    pub fn encoding_len(&self) -> usize {
        self.net_outputs()
    }

    /// Critic-side action encoding: one-hot groups or squashed values.
    pub fn encode(&self, action: &PolicyAction) -> Result<Vec<f64>> {
        match (self, action) {
            (Self::Discrete(h), PolicyAction::Discrete(a)) => {
                h.validate(a)?;
                Ok(h.one_hot(a))
            }
            (Self::Gaussian(h), PolicyAction::Continuous(u)) if u.len() == h.dim() => Ok(h.squash(u)),
            _ => Err(LearnError::InvalidAction("action kind does not match head".into())),
        }
    }
}

/// Forward results for a batch of (observation, action) pairs.
#[derive(Debug, Clone)]
pub struct ActorEval {
    pub output: Matrix,
    pub cache: MlpCache,
    pub log_prob: Vec<f64>,
    pub entropy: Vec<f64>,
}

/// A policy network: MLP trunk plus head. Parameters are the trunk's flat
/// vector followed, for Gaussian heads, by the log-std vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    net: Mlp,
    head: PolicyHead,
    pub params: Vec<f64>,
}

pub const HIDDEN_GAIN: f64 = std::f64::consts::SQRT_2;
pub const POLICY_OUTPUT_GAIN: f64 = 0.01;
pub const INITIAL_LOG_STD: f64 = -0.5;

impl Actor {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], head: PolicyHead, rng: &mut R) -> Result<Self> {
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(hidden);
        dims.push(head.net_outputs());
        let net = Mlp::new(&dims)?;
        let mut params = net.init(rng, HIDDEN_GAIN, POLICY_OUTPUT_GAIN);
        if let PolicyHead::Gaussian(g) = &head {
            params.extend(std::iter::repeat(INITIAL_LOG_STD).take(g.dim()));
        }
        Ok(Self { net, head, params })
    }

    /// Builds an actor around existing parameters.
    pub fn with_params(net: Mlp, head: PolicyHead, params: Vec<f64>) -> Result<Self> {
        if net.output_dim() != head.net_outputs() {
            return Err(LearnError::Shape("trunk output does not match head".into()));
        }
        let extra = match &head {
            PolicyHead::Gaussian(g) => g.dim(),
            PolicyHead::Discrete(_) => 0,
        };
        if params.len() != net.num_params() + extra {
            return Err(LearnError::Shape(format!("{} actor params, expected {}", params.len(), net.num_params() + extra)));
        }
        Ok(Self { net, head, params })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn head(&self) -> &PolicyHead {
        &self.head
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn trunk_params(&self) -> &[f64] {
        &self.params[..self.net.num_params()]
    }

    pub fn log_std(&self) -> &[f64] {
        &self.params[self.net.num_params()..]
    }

    pub fn forward(&self, obs: &Matrix) -> Result<(Matrix, MlpCache)> {
        self.net.forward(self.trunk_params(), obs)
    }

    /// Trunk output for one observation.
    pub fn output(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let x = Matrix::new(1, obs.len(), obs.to_vec())?;
        Ok(self.net.predict(self.trunk_params(), &x)?.data)
    }

    /// Per-group action probabilities for a discrete head.
    pub fn discrete_log_probs(&self, obs: &[f64]) -> Result<Vec<f64>> {
        match &self.head {
            PolicyHead::Discrete(h) => Ok(h.log_probs(&self.output(obs)?)),
            PolicyHead::Gaussian(_) => Err(LearnError::InvalidAction("not a discrete policy".into())),
        }
    }

    fn log_prob_entropy_row(&self, out: &[f64], action: &PolicyAction) -> Result<(f64, f64)> {
        match (&self.head, action) {
            (PolicyHead::Discrete(h), PolicyAction::Discrete(a)) => {
                h.validate(a)?;
                let lp = h.log_probs(out);
                Ok((h.action_log_prob(&lp, a), h.entropy(&lp)))
            }
            (PolicyHead::Gaussian(h), PolicyAction::Continuous(u)) if u.len() == h.dim() => {
                Ok((h.log_prob(out, self.log_std(), u), h.entropy(self.log_std())))
            }
            _ => Err(LearnError::InvalidAction("action kind does not match head".into())),
        }
    }

    /// Log-probability and entropy for a single observation/action.
    pub fn log_prob_entropy(&self, obs: &[f64], action: &PolicyAction) -> Result<(f64, f64)> {
        self.log_prob_entropy_row(&self.output(obs)?, action)
    }

    pub fn evaluate(&self, obs: &Matrix, actions: &[PolicyAction]) -> Result<ActorEval> {
        if actions.len() != obs.rows {
            return Err(LearnError::Shape(format!("{} actions for {} observations", actions.len(), obs.rows)));
        }
        let (output, cache) = self.forward(obs)?;
        let mut log_prob = Vec::with_capacity(obs.rows);
        let mut entropy = Vec::with_capacity(obs.rows);
        for (b, a) in actions.iter().enumerate() {
            let (lp, h) = self.log_prob_entropy_row(output.row(b), a)?;
            log_prob.push(lp);
            entropy.push(h);
        }
        Ok(ActorEval { output, cache, log_prob, entropy })
    }

    /// Gradient of Σ_b (w_logp[b]·log π_b + w_ent[b]·H_b) with respect to all parameters.
    pub fn backward(
        &self,
        eval: &ActorEval,
        actions: &[PolicyAction],
        w_logp: &[f64],
        w_ent: &[f64],
    ) -> Result<Vec<f64>> {
        let rows = eval.output.rows;
        let mut upstream = Matrix::zeros(rows, eval.output.cols);
        let mut log_std_grad = vec![0.0; self.log_std().len()];
        for b in 0..rows {
            let out = eval.output.row(b);
            match (&self.head, &actions[b]) {
                (PolicyHead::Discrete(h), PolicyAction::Discrete(a)) => {
                    let lp = h.log_probs(out);
                    let gl = h.log_prob_grad(&lp, a);
                    let ge = h.entropy_grad(&lp);
                    for (u, (l, e)) in upstream.row_mut(b).iter_mut().zip(gl.iter().zip(&ge)) {
                        *u = w_logp[b] * l + w_ent[b] * e;
                    }
                }
                (PolicyHead::Gaussian(_), PolicyAction::Continuous(u)) => {
                    let ls = self.log_std();
                    for i in 0..u.len() {
                        let inv_var = (-2.0 * ls[i]).exp();
                        let d = u[i] - out[i];
                        upstream.row_mut(b)[i] = w_logp[b] * d * inv_var;
                        log_std_grad[i] += w_logp[b] * (d * d * inv_var - 1.0) + w_ent[b];
                    }
                }
                _ => return Err(LearnError::InvalidAction("action kind does not match head".into())),
            }
        }
        let (mut grads, _) = self.net.backward(self.trunk_params(), &eval.cache, &upstream)?;
        grads.extend(log_std_grad);
        Ok(grads)
    }

    /// Parameter gradient from an upstream gradient on the trunk output plus a
    /// direct gradient on the log-std vector (empty for discrete heads).
    pub fn backward_output(&self, cache: &MlpCache, upstream: &Matrix, log_std_grad: &[f64]) -> Result<Vec<f64>> {
        if log_std_grad.len() != self.log_std().len() {
            return Err(LearnError::Shape("log-std gradient length".into()));
        }
        let (mut grads, _) = self.net.backward(self.trunk_params(), cache, upstream)?;
        grads.extend_from_slice(log_std_grad);
        Ok(grads)
    }

    pub fn sample<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<PolicyAction> {
        let out = self.output(obs)?;
        Ok(match &self.head {
            PolicyHead::Discrete(h) => PolicyAction::Discrete(h.sample(&h.log_probs(&out), rng)),
            PolicyHead::Gaussian(h) => PolicyAction::Continuous(h.sample(&out, self.log_std(), rng)),
        })
    }

    /// Most likely discrete action or the Gaussian mean.
    pub fn greedy(&self, obs: &[f64]) -> Result<PolicyAction> {
        let out = self.output(obs)?;
        Ok(match &self.head {
            PolicyHead::Discrete(h) => PolicyAction::Discrete(h.mode(&h.log_probs(&out))),
            PolicyHead::Gaussian(_) => PolicyAction::Continuous(out),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use std::f64::consts::PI;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ln_2pi_constant() {
        assert!((LN_2PI - (2.0 * PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn uniform_logits_have_log_k_entropy() {
        let h = MultiDiscreteHead::new(&[7]).unwrap();
        let lp = h.log_probs(&[0.3; 7]);
        assert!((h.entropy(&lp) - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_logits_have_vanishing_entropy() {
        let h = MultiDiscreteHead::new(&[3, 2]).unwrap();
        let lp = h.log_probs(&[800.0, 0.0, 0.0, -900.0, 0.0]);
        assert!(h.entropy(&lp).abs() < 1e-12);
        assert!(h.entropy(&lp) >= 0.0);
    }

    #[test]
    fn group_probabilities_sum_to_one() {
        let h = MultiDiscreteHead::new(&[7, 5, 5, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits: Vec<f64> = (0..h.total()).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let p = h.probs(&logits);
        let mut s = 0;
        for &k in h.sizes() {
            assert!((p[s..s + k].iter().sum::<f64>() - 1.0).abs() < 1e-12);
            s += k;
        }
    }

    #[test]
    fn out_of_range_action_is_rejected() {
        let h = MultiDiscreteHead::new(&[3, 2]).unwrap();
        assert!(h.validate(&[2, 2]).is_err());
        assert!(h.validate(&[2]).is_err());
        assert!(h.validate(&[2, 1]).is_ok());
    }

    #[test]
    fn enumeration_is_complete_and_ordered() {
        let h = MultiDiscreteHead::new(&[2, 3]).unwrap();
        let all = h.enumerate();
        assert_eq!(all.len(), 6);
        assert_eq!(all[0], vec![0, 0]);
        assert_eq!(all[1], vec![0, 1]);
        assert_eq!(all[5], vec![1, 2]);
    }

    #[test]
    fn gaussian_at_mean_before_squash() {
        let h = GaussianHead::new(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        let ls = [0.2, -0.7];
        // at u = 0 the squash Jacobian is 1, so only the Gaussian part remains
        let lp = h.log_prob(&[0.0, 0.0], &ls, &[0.0, 0.0]);
        assert!((lp - (-(0.2 - 0.7) - LN_2PI)).abs() < 1e-12);
    }

    #[test]
    fn squash_stays_in_bounds() {
        let h = GaussianHead::new(&[0.0, -1.0], &[1.0, 1.0]).unwrap();
        for u in [-50.0, -1.0, 0.0, 3.0, 50.0] {
            let a = h.squash(&[u, u]);
            assert!((0.0..=1.0).contains(&a[0]) && (-1.0..=1.0).contains(&a[1]));
        }
        // log-Jacobian stays finite deep in saturation
        assert!(h.log_prob(&[0.0, 0.0], &[0.0, 0.0], &[40.0, -40.0]).is_finite());
    }

    #[test]
    fn mismatched_action_kind_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let actor = Actor::new(3, &[4], PolicyHead::Discrete(MultiDiscreteHead::new(&[2]).unwrap()), &mut rng).unwrap();
        assert!(actor.log_prob_entropy(&[0.0; 3], &PolicyAction::Continuous(vec![0.0])).is_err());
        assert!(actor.log_prob_entropy(&[0.0; 3], &PolicyAction::Discrete(vec![2])).is_err());
    }
}
