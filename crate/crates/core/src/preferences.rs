//! Preference critics.
//!
//! Each preference maps the current policy and a sample to a scalar metric
//! `d_k` whose batch mean is compared against a threshold `l_k`:
//!
//! * entropy: `KL(pi(.|s) || uniform)`
//! * conserve: `KL(pi(.|s) || pi_old(.|s))`, with `pi_old` trailing the live
//!   policy through a Polyak average
//! * reference: `KL(pi(.|s) || pi_ref(.|s))` for a frozen reference policy
//! * gail: `-log pi(a|s) * A_gail(s, a)` with the advantage derived from an
//!   adversarial discriminator reward
//!
//! Target policies are frozen: gradients only ever flow into the live policy.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffnet::{apply_step, GradSet, OptimizerState, ParamSet};
use crate::error::{invalid_arg, invalid_state};
use crate::policy::{
    floored_log_probs, AcGrads, ActorCritic, Categorical, LogitModel, PolicySnapshot, TARGET_PROB_FLOOR,
};
use crate::rollout::{discounted_returns, RolloutBatch};
use crate::{math, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreferenceKind {
    Entropy,
    Conserve,
    Reference,
    Gail,
}

impl PreferenceKind {
    pub const ALL: [PreferenceKind; 4] =
        [PreferenceKind::Entropy, PreferenceKind::Conserve, PreferenceKind::Reference, PreferenceKind::Gail];

    pub fn name(self) -> &'static str {
        match self {
            PreferenceKind::Entropy => "entropy",
            PreferenceKind::Conserve => "conserve",
            PreferenceKind::Reference => "reference",
            PreferenceKind::Gail => "gail",
        }
    }
}

impl fmt::Display for PreferenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PreferenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PreferenceKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid_arg!("unknown preference kind {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PreferenceConfig {
    Entropy,
    Conserve { eta: f64, old_policy: PolicySnapshot },
    Reference { reference: ParamSet },
    Gail(GailSubsystem),
}

/// One active preference: its threshold and kind-specific state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceSpec {
    threshold: f64,
    config: PreferenceConfig,
}

impl PreferenceSpec {
    pub fn new(threshold: f64, config: PreferenceConfig) -> Result<Self> {
        if !(threshold >= 0.0 && threshold.is_finite()) {
            return Err(invalid_arg!("threshold must be finite and >= 0, got {threshold}"));
        }
        if let PreferenceConfig::Conserve { eta, .. } = config {
            if !(eta > 0.0 && eta < 1.0) {
                return Err(invalid_arg!("conserve eta must lie in (0, 1), got {eta}"));
            }
        }
        Ok(PreferenceSpec { threshold, config })
    }

    pub fn entropy(threshold: f64) -> Result<Self> {
        Self::new(threshold, PreferenceConfig::Entropy)
    }

    /// Conservative-update preference whose trailing policy starts as a copy
    /// of `ac`.
    pub fn conserve(threshold: f64, eta: f64, ac: &ActorCritic) -> Result<Self> {
        Self::new(threshold, PreferenceConfig::Conserve { eta, old_policy: ac.snapshot_policy() })
    }

    pub fn reference(threshold: f64, reference: ParamSet) -> Result<Self> {
        Self::new(threshold, PreferenceConfig::Reference { reference })
    }

    pub fn gail(threshold: f64, gail: GailSubsystem) -> Result<Self> {
        Self::new(threshold, PreferenceConfig::Gail(gail))
    }

    pub fn kind(&self) -> PreferenceKind {
        match self.config {
            PreferenceConfig::Entropy => PreferenceKind::Entropy,
            PreferenceConfig::Conserve { .. } => PreferenceKind::Conserve,
            PreferenceConfig::Reference { .. } => PreferenceKind::Reference,
            PreferenceConfig::Gail(_) => PreferenceKind::Gail,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn config(&self) -> &PreferenceConfig {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut PreferenceConfig {
        &mut self.config
    }

    pub fn gail_mut(&mut self) -> Option<&mut GailSubsystem> {
        match &mut self.config {
            PreferenceConfig::Gail(g) => Some(g),
            _ => None,
        }
    }

    /// Move the trailing policy of a conserve preference toward `ac`. No-op
    /// for other kinds.
    pub fn track(&mut self, ac: &ActorCritic) -> Result<()> {
        if let PreferenceConfig::Conserve { eta, old_policy } = &mut self.config {
            polyak_snapshot(old_policy, ac, *eta)?;
        }
        Ok(())
    }

    /// Metric and its logit gradient for one sample.
    pub(crate) fn sample_metric(
        &self,
        dist: &Categorical,
        obs: &[f64],
        action: usize,
        gail_advantage: Option<f64>,
    ) -> Result<(f64, Vec<f64>)> {
        match &self.config {
            PreferenceConfig::Entropy => {
                let log_q = uniform_log_probs(dist.len());
                Ok((dist.kl_to_log_probs(&log_q), dist.grad_kl(&log_q)))
            }
            PreferenceConfig::Conserve { old_policy, .. } => kl_to_target(dist, old_policy, obs),
            PreferenceConfig::Reference { reference } => kl_to_target(dist, reference, obs),
            PreferenceConfig::Gail(_) => {
                let adv = gail_advantage.ok_or_else(|| invalid_state!("gail preference needs advantages"))?;
                let d = -dist.log_prob(action)? * adv;
                let grad = dist.grad_log_prob(action).into_iter().map(|g| -adv * g).collect();
                Ok((d, grad))
            }
        }
    }
}

fn uniform_log_probs(n: usize) -> Vec<f64> {
    vec![-math::ln(n as f64); n]
}

fn kl_to_target<M: LogitModel>(dist: &Categorical, target: &M, obs: &[f64]) -> Result<(f64, Vec<f64>)> {
    let logits = target.logits(obs)?;
    if logits.len() != dist.len() {
        return Err(invalid_arg!("target policy has {} actions, live policy {}", logits.len(), dist.len()));
    }
    let log_q = floored_log_probs(&logits, TARGET_PROB_FLOOR);
    Ok((dist.kl_to_log_probs(&log_q), dist.grad_kl(&log_q)))
}

/// `KL(pi(.|s) || uniform)` per observation.
pub fn d_entropy(ac: &ActorCritic, obs_batch: &[Vec<f64>]) -> Result<Vec<f64>> {
    let log_q = uniform_log_probs(ac.action_count());
    obs_batch.iter().map(|o| Ok(ac.action_dist(o)?.kl_to_log_probs(&log_q))).collect()
}

/// `KL(pi(.|s) || pi_old(.|s))` per observation.
pub fn d_conserve(ac: &ActorCritic, old_policy: &PolicySnapshot, obs_batch: &[Vec<f64>]) -> Result<Vec<f64>> {
    obs_batch.iter().map(|o| Ok(kl_to_target(&ac.action_dist(o)?, old_policy, o)?.0)).collect()
}

/// `KL(pi(.|s) || pi_ref(.|s))` per observation.
pub fn d_reference<M: LogitModel>(ac: &ActorCritic, reference: &M, obs_batch: &[Vec<f64>]) -> Result<Vec<f64>> {
    obs_batch.iter().map(|o| Ok(kl_to_target(&ac.action_dist(o)?, reference, o)?.0)).collect()
}

/// `-log pi(a_t|s_t) * A_gail_t` per transition.
pub fn d_gail(ac: &ActorCritic, batch: &RolloutBatch, gail_advantages: &[f64]) -> Result<Vec<f64>> {
    if gail_advantages.len() != batch.len() {
        return Err(invalid_arg!("{} advantages for {} transitions", gail_advantages.len(), batch.len()));
    }
    batch
        .transitions()
        .iter()
        .zip(gail_advantages)
        .map(|(t, &a)| Ok(-ac.action_dist(&t.observation)?.log_prob(t.action)? * a))
        .collect()
}

/// Batch mean of one preference metric over `batch` and its gradient with
/// respect to the live policy parameters.
pub fn metric_gradient(
    ac: &ActorCritic,
    pref: &PreferenceSpec,
    batch: &RolloutBatch,
    gail_advantages: Option<&[f64]>,
) -> Result<(f64, AcGrads)> {
    let n = batch.len() as f64;
    let mut grads = AcGrads::zeros_like(ac);
    let mut total = 0.0;
    for (i, t) in batch.transitions().iter().enumerate() {
        let fwd = ac.forward(&t.observation, false)?;
        let dist = Categorical::from_logits(fwd.logits.clone())?;
        let adv = gail_advantages.map(|a| a[i]);
        let (d, g) = pref.sample_metric(&dist, &t.observation, t.action, adv)?;
        total += d;
        let g: Vec<f64> = g.into_iter().map(|v| v / n).collect();
        ac.backward_into(&fwd, Some(&g), None, &mut grads)?;
    }
    Ok((total / n, grads))
}

/// `old <- eta * live + (1 - eta) * old`, elementwise.
pub fn polyak_update(old: &mut ParamSet, live: &ParamSet, eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(invalid_arg!("eta must lie in (0, 1), got {eta}"));
    }
    if !old.same_shape(live) {
        return Err(invalid_arg!("target and live networks differ in shape"));
    }
    for (o, l) in old.layers_mut().iter_mut().zip(live.layers()) {
        for (a, b) in o.weight.iter_mut().zip(&l.weight).chain(o.bias.iter_mut().zip(&l.bias)) {
            *a += eta * (b - *a);
        }
    }
    Ok(())
}

fn polyak_snapshot(old: &mut PolicySnapshot, ac: &ActorCritic, eta: f64) -> Result<()> {
    match (&mut old.trunk, ac.trunk()) {
        (Some(o), Some(l)) => polyak_update(o, l, eta)?,
        (None, None) => {}
        _ => return Err(invalid_arg!("snapshot and live policy disagree on trunk sharing")),
    }
    polyak_update(&mut old.head, ac.policy_net(), eta)
}

/// Discriminator over `(observation, one-hot action)` plus a value net on
/// the adversarial reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GailSubsystem {
    pub discriminator: ParamSet,
    pub value: ParamSet,
    pub discriminator_opt: OptimizerState,
    pub value_opt: OptimizerState,
    action_count: usize,
}

/// Observation and action index.
pub type StateAction = (Vec<f64>, usize);

impl GailSubsystem {
    pub fn new(obs_dim: usize, action_count: usize, hidden: &[usize], step_size: f64, seed: u64) -> Result<Self> {
        let mut sizes = vec![obs_dim + action_count];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let discriminator = ParamSet::init_mlp(&sizes, seed)?;
        sizes[0] = obs_dim;
        let value = ParamSet::init_mlp(&sizes, seed.wrapping_add(0x5851_F42D))?;
        Self::from_parts(discriminator, value, step_size, action_count)
    }

    /// Adam optimizers at `step_size` for both nets.
    pub fn from_parts(discriminator: ParamSet, value: ParamSet, step_size: f64, action_count: usize) -> Result<Self> {
        if discriminator.output_dim() != 1 || value.output_dim() != 1 {
            return Err(invalid_arg!("discriminator and value nets must output a single scalar"));
        }
        if discriminator.input_dim() != value.input_dim() + action_count {
            return Err(invalid_arg!(
                "discriminator expects {} inputs, need observation ({}) + one-hot action ({action_count})",
                discriminator.input_dim(),
                value.input_dim()
            ));
        }
        Ok(GailSubsystem {
            discriminator_opt: OptimizerState::adam(step_size, &discriminator),
            value_opt: OptimizerState::adam(step_size, &value),
            discriminator,
            value,
            action_count,
        })
    }

    fn input(&self, obs: &[f64], action: usize) -> Result<Vec<f64>> {
        if action >= self.action_count {
            return Err(invalid_arg!("action {action} out of range ({} actions)", self.action_count));
        }
        let mut x = Vec::with_capacity(obs.len() + self.action_count);
        x.extend_from_slice(obs);
        x.extend((0..self.action_count).map(|a| if a == action { 1.0 } else { 0.0 }));
        Ok(x)
    }

    pub fn logit(&self, obs: &[f64], action: usize) -> Result<f64> {
        Ok(self.discriminator.predict(&self.input(obs, action)?)?[0])
    }

    /// Probability that `(obs, action)` came from the expert.
    pub fn expert_probability(&self, obs: &[f64], action: usize) -> Result<f64> {
        Ok(math::sigmoid(self.logit(obs, action)?))
    }

    /// `-ln(1 - D(s, a))`.
    pub fn reward(&self, obs: &[f64], action: usize) -> Result<f64> {
        Ok(math::softplus(self.logit(obs, action)?))
    }

    /// Balanced binary cross-entropy (expert = 1, agent = 0) and its gradient.
    pub fn discriminator_loss(&self, expert: &[StateAction], agent: &[StateAction]) -> Result<(f64, GradSet)> {
        if expert.is_empty() || agent.is_empty() {
            return Err(invalid_arg!("discriminator step needs expert and agent samples"));
        }
        let mut grads = GradSet::zeros_like(&self.discriminator);
        let mut loss = 0.0;
        for (samples, label) in [(expert, 1.0), (agent, 0.0)] {
            let w = 0.5 / samples.len() as f64;
            for (obs, action) in samples {
                let (out, tape) = self.discriminator.forward(&self.input(obs, *action)?)?;
                let x = out[0];
                // -[y ln s(x) + (1 - y) ln(1 - s(x))]
                loss += w * if label == 1.0 { math::softplus(-x) } else { math::softplus(x) };
                self.discriminator.backward_into(&tape, &[w * (math::sigmoid(x) - label)], &mut grads)?;
            }
        }
        Ok((loss, grads))
    }

    /// One optimizer step on the discriminator; returns the loss before it.
    pub fn discriminator_step(&mut self, expert: &[StateAction], agent: &[StateAction]) -> Result<f64> {
        let (loss, grads) = self.discriminator_loss(expert, agent)?;
        apply_step(&mut self.discriminator, &grads, &mut self.discriminator_opt)?;
        Ok(loss)
    }

    /// Balanced classification accuracy at the 0.5 decision boundary.
    pub fn accuracy(&self, expert: &[StateAction], agent: &[StateAction]) -> Result<f64> {
        let rate = |samples: &[StateAction], expert: bool| -> Result<f64> {
            let mut hits = 0usize;
            for (o, a) in samples {
                let logit = self.logit(o, *a)?;
                if (logit > 0.0) == expert {
                    hits += 1;
                }
            }
            Ok(hits as f64 / samples.len().max(1) as f64)
        };
        Ok(0.5 * (rate(expert, true)? + rate(agent, false)?))
    }

    /// One-step advantages `r + gamma V(s') (1 - done) - V(s)` under the
    /// current discriminator and value net, plus the discounted reward
    /// returns used to regress the value net.
    pub fn advantage(&self, batch: &RolloutBatch, gamma: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(invalid_arg!("gamma must lie in (0, 1), got {gamma}"));
        }
        let mut advantages = Vec::with_capacity(batch.len());
        let mut targets = Vec::with_capacity(batch.len());
        for e in 0..batch.n_envs() {
            let seg = batch.segment(e);
            let mut rewards = Vec::with_capacity(seg.len());
            for t in seg {
                let r = self.reward(&t.observation, t.action)?;
                let v = self.value.predict(&t.observation)?[0];
                let v_next = if t.done { 0.0 } else { self.value.predict(&t.next_observation)?[0] };
                advantages.push(r + gamma * v_next - v);
                rewards.push(r);
            }
            let last = &seg[seg.len() - 1];
            let bootstrap = if last.done { 0.0 } else { self.value.predict(&last.next_observation)?[0] };
            let dones: Vec<bool> = seg.iter().map(|t| t.done).collect();
            targets.extend(discounted_returns(&rewards, &dones, bootstrap, gamma));
        }
        if advantages.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite(String::from("gail advantage")));
        }
        Ok((advantages, targets))
    }

    /// Advantages for `batch`, then one regression step of the value net
    /// toward the discounted adversarial-reward returns.
    pub fn advantage_and_fit(&mut self, batch: &RolloutBatch, gamma: f64) -> Result<Vec<f64>> {
        let (advantages, targets) = self.advantage(batch, gamma)?;
        let n = batch.len() as f64;
        let mut grads = GradSet::zeros_like(&self.value);
        for (t, target) in batch.transitions().iter().zip(&targets) {
            let (v, tape) = self.value.forward(&t.observation)?;
            self.value.backward_into(&tape, &[-2.0 * (target - v[0]) / n], &mut grads)?;
        }
        apply_step(&mut self.value, &grads, &mut self.value_opt)?;
        Ok(advantages)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::Activation;
    use crate::rollout::Transition;

    fn sharp_policy(actions: usize) -> ActorCritic {
        let mut ac = ActorCritic::new(2, &[4], actions, 0, false).unwrap();
        let mut head = ac.policy_net().zeros_like();
        head.layers_mut().last_mut().unwrap().bias[0] = 40.0;
        *ac.policy_net_mut() = head;
        ac
    }

    fn uniform_policy(actions: usize) -> ActorCritic {
        let mut ac = ActorCritic::new(2, &[4], actions, 0, false).unwrap();
        *ac.policy_net_mut() = ac.policy_net().zeros_like();
        ac
    }

    #[test]
    fn entropy_metric_limits() {
        let obs = vec![vec![0.1, 0.2], vec![-1.0, 3.0]];
        assert!(d_entropy(&uniform_policy(9), &obs).unwrap().iter().all(|d| d.abs() < 1e-15));
        for d in d_entropy(&sharp_policy(9), &obs).unwrap() {
            assert!((d - 9f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_metric_matches_identity() {
        let mut ac = uniform_policy(3);
        ac.policy_net_mut().layers_mut().last_mut().unwrap().bias.copy_from_slice(&[1.0, 2.0, 3.0]);
        let d = d_entropy(&ac, &[vec![0.0, 0.0]]).unwrap()[0];
        let h = ac.action_dist(&[0.0, 0.0]).unwrap().entropy();
        assert!((d - (3f64.ln() - h)).abs() < 1e-9);
    }

    #[test]
    fn conserve_metric_cases() {
        let ac = ActorCritic::new(2, &[8], 3, 4, false).unwrap();
        let obs = vec![vec![0.4, -0.3], vec![1.0, 1.0]];
        assert!(d_conserve(&ac, &ac.snapshot_policy(), &obs).unwrap().iter().all(|d| d.abs() < 1e-15));

        let mut live = ActorCritic::new(1, &[2], 2, 0, false).unwrap();
        let mut head = live.policy_net().zeros_like();
        head.layers_mut()[1].bias.copy_from_slice(&[0.7f64.ln(), 0.3f64.ln()]);
        *live.policy_net_mut() = head.clone();
        let mut old = live.snapshot_policy();
        old.head.layers_mut()[1].bias.copy_from_slice(&[0.0, 0.0]);
        let d = d_conserve(&live, &old, &[vec![0.5]]).unwrap()[0];
        assert!((d - 0.082_282_878_505_051_78).abs() < 1e-12);
    }

    #[test]
    fn conserve_gradient_ignores_old_policy() {
        let ac = ActorCritic::new(2, &[8], 3, 4, false).unwrap();
        let batch = small_batch(3);
        let mut old = ActorCritic::new(2, &[8], 3, 9, false).unwrap();
        let a = PreferenceSpec::conserve(0.03, 0.01, &old).unwrap();
        let (_, g1) = metric_gradient(&ac, &a, &batch, None).unwrap();
        old.policy_net_mut().layers_mut()[0].weight[0] += 0.5;
        let b = PreferenceSpec::conserve(0.03, 0.01, &old).unwrap();
        let (_, g2) = metric_gradient(&ac, &b, &batch, None).unwrap();
        assert_ne!(g1.policy, g2.policy);
        // value net never receives metric gradient
        assert_eq!(g1.value.max_abs(), 0.0);
        assert_eq!(g2.value.max_abs(), 0.0);
    }

    #[test]
    fn polyak_cases() {
        let live = ParamSet::init_mlp(&[2, 3], 1).unwrap();
        let mut old = live.zeros_like();
        let mut ones = live.clone();
        ones.assign_flat(&vec![1.0; live.num_params()]).unwrap();
        polyak_update(&mut old, &ones, 0.1).unwrap();
        assert!(old.flatten().iter().all(|&v| v == 0.1));

        let mut same = live.clone();
        polyak_update(&mut same, &live, 0.3).unwrap();
        assert_eq!(same, live);

        let mut old = live.zeros_like();
        let eta: f64 = 0.05;
        for _ in 0..20 {
            polyak_update(&mut old, &live, eta).unwrap();
        }
        let factor = 1.0 - (1.0 - eta).powi(20);
        for (o, l) in old.flatten().iter().zip(live.flatten()) {
            assert!((o - l * factor).abs() < 1e-12);
        }
        assert!(polyak_update(&mut old, &live, 1.0).is_err());
        assert!(polyak_update(&mut old, &ParamSet::init_mlp(&[3, 2], 0).unwrap(), 0.5).is_err());
    }

    #[test]
    fn reference_metric_cases() {
        let ac = ActorCritic::new(2, &[8], 4, 2, false).unwrap();
        let obs = vec![vec![0.1, 0.9]];
        let reference = ac.policy_net().clone();
        assert!(d_reference(&ac, &reference, &obs).unwrap()[0].abs() < 1e-15);

        let live = uniform_policy(4);
        let mut l = crate::diffnet::Layer::zeros(2, 4, Activation::Identity);
        l.bias = vec![50.0, 0.0, 0.0, 0.0];
        let reference = ParamSet::from_layers(vec![l], 0).unwrap();
        let d = d_reference(&live, &reference, &obs).unwrap()[0];
        // (1/4) [(-ln4 - ln q0) + 3 (-ln4 - ln 1e-8)], q0 = 1 / (1 + 3 e^-50)
        let q0_ln = -(1.0 + 3.0 * (-50f64).exp()).ln();
        let expected = 0.25 * ((-(4f64.ln()) - q0_ln) + 3.0 * (-(4f64.ln()) - 1e-8f64.ln()));
        assert!((d - expected).abs() < 1e-9, "{d} vs {expected}");
        assert!(d.is_finite() && d > 10.0);
    }

    fn small_batch(n: usize) -> RolloutBatch {
        let seg = (0..n)
            .map(|i| Transition {
                observation: vec![0.3 * i as f64 - 0.2, 0.5 - 0.1 * i as f64],
                action: i % 3,
                reward: 0.1 * i as f64,
                next_observation: vec![0.3 * i as f64, 0.4],
                done: i + 1 == n,
                log_prob: -1.0,
            })
            .collect();
        RolloutBatch::from_segments(vec![seg]).unwrap()
    }

    #[test]
    fn gail_metric_cases() {
        let batch = small_batch(3);
        let ac = uniform_policy(3);
        assert!(d_gail(&ac, &batch, &[0.0; 3]).unwrap().iter().all(|&d| d == 0.0));
        let ac4 = uniform_policy(4);
        let d = d_gail(&ac4, &batch, &[1.0; 3]).unwrap();
        assert!(d.iter().all(|x| (x - 4f64.ln()).abs() < 1e-12));
        assert!(d_gail(&ac, &batch, &[1.0]).is_err());
    }

    #[test]
    fn gail_indifferent_discriminator() {
        let mut g = GailSubsystem::new(2, 3, &[8], 1e-3, 0).unwrap();
        g.discriminator = g.discriminator.zeros_like();
        g.value = g.value.zeros_like();
        let e = vec![(vec![0.1, 0.2], 1)];
        let a = vec![(vec![-0.3, 0.7], 2), (vec![0.0, 0.0], 0)];
        let (loss, _) = g.discriminator_loss(&e, &a).unwrap();
        assert!((loss - math::LN_2).abs() < 1e-15);
        assert_eq!(g.expert_probability(&[0.0, 0.0], 0).unwrap(), 0.5);
        let batch = small_batch(3);
        let (adv, _) = g.advantage(&batch, 0.9).unwrap();
        assert!(adv.iter().all(|x| (x - math::LN_2).abs() < 1e-15));
        assert!(g.discriminator_loss(&[], &a).is_err());
    }

    #[test]
    fn gail_advantage_arithmetic() {
        let mut g = GailSubsystem::new(2, 3, &[4], 1e-3, 0).unwrap();
        g.discriminator = g.discriminator.zeros_like();
        let mut v = g.value.zeros_like();
        v.layers_mut().last_mut().unwrap().bias[0] = 1.0;
        g.value = v;
        let batch = small_batch(2);
        let (adv, _) = g.advantage(&batch, 0.99).unwrap();
        assert!((adv[0] - 0.683_147_180_559_945_2).abs() < 1e-12);
        // last transition is terminal: ln2 + 0 - 1
        assert!((adv[1] - (math::LN_2 - 1.0)).abs() < 1e-12);
        let before = g.value.clone();
        let adv2 = g.advantage_and_fit(&batch, 0.99).unwrap();
        assert_eq!(adv, adv2);
        assert_ne!(g.value, before);
    }

    #[test]
    fn spec_validation() {
        assert!(PreferenceSpec::entropy(-0.1).is_err());
        let ac = uniform_policy(3);
        assert!(PreferenceSpec::conserve(0.03, 0.0, &ac).is_err());
        assert_eq!(PreferenceSpec::entropy(2.0).unwrap().kind(), PreferenceKind::Entropy);
        assert_eq!("gail".parse::<PreferenceKind>().unwrap(), PreferenceKind::Gail);
        assert!("bc".parse::<PreferenceKind>().is_err());
    }
}
