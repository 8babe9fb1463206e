//! On-policy experience collection, n-step bootstrapped returns and the
//! entropy-regularized advantage actor-critic loss.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::envs::Env;
use crate::error::{invalid_arg, invalid_state};
use crate::policy::{AcGrads, ActorCritic, Categorical};
use crate::{Result, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_observation: Vec<f64>,
    pub done: bool,
    /// Log-probability of `action` under the policy that collected it.
    pub log_prob: f64,
}

/// Equal-length transition segments, one per environment, stored env-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutBatch {
    n_envs: usize,
    n_steps: usize,
    transitions: Vec<Transition>,
    /// `V(s_t)` at the time returns were computed.
    pub values: Vec<f64>,
    /// `V(s_{t+n})` per segment, zero when the segment ends on a done.
    pub bootstrap_values: Vec<f64>,
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl RolloutBatch {
    pub fn from_segments(segments: Vec<Vec<Transition>>) -> Result<Self> {
        let n_envs = segments.len();
        let n_steps = segments.first().map_or(0, Vec::len);
        if n_envs == 0 || n_steps == 0 {
            return Err(invalid_arg!("a batch needs at least one non-empty segment"));
        }
        if segments.iter().any(|s| s.len() != n_steps) {
            return Err(invalid_arg!("segments must all have {n_steps} transitions"));
        }
        if let Some(t) = segments.iter().flatten().find(|t| !t.reward.is_finite() || t.log_prob > 0.0) {
            return Err(invalid_arg!("transition with reward {} and log-prob {}", t.reward, t.log_prob));
        }
        Ok(RolloutBatch {
            n_envs,
            n_steps,
            transitions: segments.into_iter().flatten().collect(),
            values: Vec::new(),
            bootstrap_values: Vec::new(),
            returns: Vec::new(),
            advantages: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn n_envs(&self) -> usize {
        self.n_envs
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn segment(&self, env: usize) -> &[Transition] {
        &self.transitions[env * self.n_steps..(env + 1) * self.n_steps]
    }

    pub fn has_advantages(&self) -> bool {
        self.advantages.len() == self.transitions.len()
    }

    /// Multiply every stored reward by `factor`. Clears returns and
    /// advantages, which no longer match.
    pub fn scale_rewards(&mut self, factor: f64) -> Result<()> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(invalid_arg!("reward scale must be positive, got {factor}"));
        }
        for t in &mut self.transitions {
            t.reward *= factor;
        }
        self.returns.clear();
        self.advantages.clear();
        Ok(())
    }
}

/// Collect `n_steps` transitions from each environment with actions sampled
/// from `ac`. Finished episodes are reset inline from the env's own stream.
pub fn collect(ac: &ActorCritic, envs: &mut [Env], n_steps: usize, rngs: &mut [Rng]) -> Result<RolloutBatch> {
    collect_with(envs, n_steps, rngs, |obs, rng| {
        let dist = ac.action_dist(obs)?;
        let action = dist.sample(rng);
        Ok((action, dist.log_prob(action)?))
    })
}

/// Like [`collect`] with an arbitrary behavior policy returning
/// `(action, log_prob)`.
pub fn collect_with<F>(envs: &mut [Env], n_steps: usize, rngs: &mut [Rng], mut behavior: F) -> Result<RolloutBatch>
where
    F: FnMut(&[f64], &mut Rng) -> Result<(usize, f64)>,
{
    if n_steps == 0 {
        return Err(invalid_arg!("n_steps must be at least 1"));
    }
    if envs.len() != rngs.len() {
        return Err(invalid_arg!("{} environments but {} random streams", envs.len(), rngs.len()));
    }
    let mut segments = Vec::with_capacity(envs.len());
    for (env, rng) in envs.iter_mut().zip(rngs.iter_mut()) {
        if env.is_done() {
            env.reset_episode();
        }
        let mut segment = Vec::with_capacity(n_steps);
        let mut obs = env.observation();
        for _ in 0..n_steps {
            let (action, log_prob) = behavior(&obs, rng)?;
            let step = env.step(action)?;
            let next_obs = if step.done { env.reset_episode() } else { step.observation.clone() };
            segment.push(Transition {
                observation: core::mem::replace(&mut obs, next_obs),
                action,
                reward: step.reward,
                next_observation: step.observation,
                done: step.done,
                log_prob,
            });
        }
        segments.push(segment);
    }
    RolloutBatch::from_segments(segments)
}

/// Backward recursion `R_t = r_t + gamma R_{t+1}`, restarting at every done
/// and seeded with `bootstrap` past the last step.
pub fn discounted_returns(rewards: &[f64], dones: &[bool], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut next = bootstrap;
    for t in (0..rewards.len()).rev() {
        next = if dones[t] { rewards[t] } else { rewards[t] + gamma * next };
        out[t] = next;
    }
    out
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(invalid_arg!("gamma must lie in (0, 1), got {gamma}"));
    }
    Ok(())
}

/// Fill returns and advantages (`A_t = R_t - V(s_t)`) using `value_fn`.
pub fn compute_returns<F>(batch: &mut RolloutBatch, mut value_fn: F, gamma: f64) -> Result<()>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    check_gamma(gamma)?;
    let n = batch.len();
    let mut values = Vec::with_capacity(n);
    let mut bootstrap_values = Vec::with_capacity(batch.n_envs);
    let mut returns = Vec::with_capacity(n);
    for e in 0..batch.n_envs {
        let seg = batch.segment(e);
        for t in seg {
            values.push(value_fn(&t.observation)?);
        }
        let last = &seg[seg.len() - 1];
        let bootstrap = if last.done { 0.0 } else { value_fn(&last.next_observation)? };
        bootstrap_values.push(bootstrap);
        let rewards: Vec<f64> = seg.iter().map(|t| t.reward).collect();
        let dones: Vec<bool> = seg.iter().map(|t| t.done).collect();
        returns.extend(discounted_returns(&rewards, &dones, bootstrap, gamma));
    }
    batch.advantages = returns.iter().zip(&values).map(|(r, v)| r - v).collect();
    batch.values = values;
    batch.bootstrap_values = bootstrap_values;
    batch.returns = returns;
    Ok(())
}

/// Batch-mean loss components.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    /// `mean(-A log pi(a|s))`
    pub policy: f64,
    /// `mean H(pi(.|s))`
    pub entropy: f64,
    /// `mean (R - V(s))^2`
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub terms: LossTerms,
    pub grads: AcGrads,
}

/// Per-sample hook used to fold extra logit-gradient terms into the same
/// backward pass as the actor-critic loss. Receives the sample index, the
/// current policy distribution and the logit gradient to add into.
pub(crate) type LogitHook<'a> = dyn FnMut(usize, &Categorical, &mut [f64]) -> Result<()> + 'a;

/// `mean[-A log pi - beta H] + value_coef * mean (R - V)^2` and its gradients.
pub fn a2c_loss(batch: &RolloutBatch, ac: &ActorCritic, beta: f64, value_coef: f64) -> Result<LossOutput> {
    actor_critic_loss(batch, ac, beta, value_coef, &mut |_, _, _| Ok(()))
}

pub(crate) fn actor_critic_loss(
    batch: &RolloutBatch,
    ac: &ActorCritic,
    beta: f64,
    value_coef: f64,
    hook: &mut LogitHook<'_>,
) -> Result<LossOutput> {
    if !batch.has_advantages() {
        return Err(invalid_state!("batch has no advantages; call compute_returns first"));
    }
    let n = batch.len() as f64;
    let mut grads = AcGrads::zeros_like(ac);
    let mut terms = LossTerms::default();
    for (i, t) in batch.transitions().iter().enumerate() {
        let fwd = ac.forward(&t.observation, true)?;
        let dist = Categorical::from_logits(fwd.logits.clone())?;
        let adv = batch.advantages[i];
        let ret = batch.returns[i];
        let v = fwd.value.expect("value requested");
        let log_p = dist.log_prob(t.action)?;
        let h = dist.entropy();
        terms.policy += -adv * log_p;
        terms.entropy += h;
        terms.value += (ret - v) * (ret - v);

        let mut dlogits = dist.grad_log_prob(t.action);
        let dh = dist.grad_entropy();
        for (g, gh) in dlogits.iter_mut().zip(&dh) {
            *g = (-adv * *g - beta * gh) / n;
        }
        hook(i, &dist, &mut dlogits)?;
        let dvalue = value_coef * (-2.0 * (ret - v)) / n;
        ac.backward_into(&fwd, Some(&dlogits), Some(dvalue), &mut grads)?;
    }
    terms.policy /= n;
    terms.entropy /= n;
    terms.value /= n;
    let loss = terms.policy - beta * terms.entropy + value_coef * terms.value;
    if !loss.is_finite() {
        return Err(invalid_state!(
            "non-finite actor-critic loss (policy {}, entropy {}, value {})",
            terms.policy,
            terms.entropy,
            terms.value
        ));
    }
    Ok(LossOutput { loss, terms, grads })
}
