//! Categorical policies, the actor-critic pair and exact distribution
//! arithmetic (log-probabilities, entropy, KL) together with their gradients
//! with respect to the logits.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::diffnet::{apply_step, Activation, GradSet, OptimizerState, ParamSet, Tape};
use crate::error::invalid_arg;
use crate::{math, Error, Result, Rng};

/// Smallest probability a frozen target policy may assign inside a KL term.
pub const TARGET_PROB_FLOOR: f64 = 1e-8;

/// A categorical distribution held as logits plus cached log-softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    logits: Vec<f64>,
    log_probs: Vec<f64>,
}

impl Categorical {
    pub fn from_logits(logits: Vec<f64>) -> Result<Self> {
        if logits.is_empty() {
            return Err(invalid_arg!("categorical needs at least one outcome"));
        }
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite("policy logits".into()));
        }
        let log_probs = math::log_softmax(&logits);
        Ok(Categorical { logits, log_probs })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::from_logits(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|&l| math::exp(l)).collect()
    }

    pub fn log_prob(&self, action: usize) -> Result<f64> {
        self.log_probs
            .get(action)
            .copied()
            .ok_or_else(|| invalid_arg!("action {action} out of range for {} outcomes", self.len()))
    }

    /// `-sum p log p`.
    pub fn entropy(&self) -> f64 {
        -self.log_probs.iter().map(|&l| math::exp(l) * l).sum::<f64>()
    }

    /// `KL(self || q)`.
    pub fn kl(&self, q: &Categorical) -> Result<f64> {
        if q.len() != self.len() {
            return Err(invalid_arg!("support sizes differ: {} vs {}", self.len(), q.len()));
        }
        Ok(self.kl_to_log_probs(&q.log_probs))
    }

    /// `KL(self || q)` against explicit target log-probabilities, which may be
    /// floored and therefore not normalized.
    pub fn kl_to_log_probs(&self, log_q: &[f64]) -> f64 {
        self.log_probs.iter().zip(log_q).map(|(&lp, &lq)| math::exp(lp) * (lp - lq)).sum()
    }

    pub fn sample(&self, rng: &mut Rng) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &lp) in self.log_probs.iter().enumerate() {
            let p = math::exp(lp);
            if p > 0.0 {
                last = i;
            }
            acc += p;
            if u < acc {
                return i;
            }
        }
        last
    }

    /// Most likely action; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &z) in self.logits.iter().enumerate() {
            if z > self.logits[best] {
                best = i;
            }
        }
        best
    }

    /// `d log p(action) / d logits`.
    pub fn grad_log_prob(&self, action: usize) -> Vec<f64> {
        let mut g: Vec<f64> = self.probs().into_iter().map(|p| -p).collect();
        g[action] += 1.0;
        g
    }

    /// `d H / d logits`.
    pub fn grad_entropy(&self) -> Vec<f64> {
        let h = self.entropy();
        self.log_probs.iter().map(|&l| -math::exp(l) * (l + h)).collect()
    }

    /// `d KL(self || q) / d logits` with `q` held fixed.
    pub fn grad_kl(&self, log_q: &[f64]) -> Vec<f64> {
        let kl = self.kl_to_log_probs(log_q);
        self.log_probs.iter().zip(log_q).map(|(&lp, &lq)| math::exp(lp) * ((lp - lq) - kl)).collect()
    }
}

/// Log-softmax of `logits` with every entry floored at `ln(floor)`.
pub fn floored_log_probs(logits: &[f64], floor: f64) -> Vec<f64> {
    let min = math::ln(floor);
    math::log_softmax(logits).into_iter().map(|l| l.max(min)).collect()
}

/// Anything that maps an observation to policy logits.
pub trait LogitModel {
    fn logits(&self, obs: &[f64]) -> Result<Vec<f64>>;

    fn distribution(&self, obs: &[f64]) -> Result<Categorical> {
        Categorical::from_logits(self.logits(obs)?)
    }
}

impl LogitModel for ParamSet {
    fn logits(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.predict(obs)
    }
}

/// A frozen copy of a policy (old or trailing target).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub trunk: Option<ParamSet>,
    pub head: ParamSet,
}

impl LogitModel for PolicySnapshot {
    fn logits(&self, obs: &[f64]) -> Result<Vec<f64>> {
        match &self.trunk {
            Some(t) => self.head.predict(&t.predict(obs)?),
            None => self.head.predict(obs),
        }
    }
}

/// Policy net (observation to logits) and value net (observation to scalar),
/// optionally sharing a rectified trunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorCritic {
    trunk: Option<ParamSet>,
    policy: ParamSet,
    value: ParamSet,
}

/// Cached forward pass through an [`ActorCritic`].
#[derive(Debug, Clone)]
pub struct AcForward {
    pub logits: Vec<f64>,
    pub value: Option<f64>,
    trunk_tape: Option<Tape>,
    policy_tape: Tape,
    value_tape: Option<Tape>,
}

impl ActorCritic {
    pub fn new(obs_dim: usize, hidden: &[usize], actions: usize, seed: u64, shared: bool) -> Result<Self> {
        let value_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
        if shared {
            if hidden.is_empty() {
                return Err(invalid_arg!("a shared trunk needs at least one hidden layer"));
            }
            let mut sizes = vec![obs_dim];
            sizes.extend_from_slice(hidden);
            let trunk = ParamSet::init_with_output(&sizes, seed.wrapping_add(2), Activation::Relu)?;
            let width = hidden[hidden.len() - 1];
            let policy = ParamSet::init_mlp(&[width, actions], seed)?;
            let value = ParamSet::init_mlp(&[width, 1], value_seed)?;
            Self::from_parts(Some(trunk), policy, value)
        } else {
            let mut sizes = vec![obs_dim];
            sizes.extend_from_slice(hidden);
            sizes.push(actions);
            let policy = ParamSet::init_mlp(&sizes, seed)?;
            *sizes.last_mut().expect("nonempty") = 1;
            let value = ParamSet::init_mlp(&sizes, value_seed)?;
            Self::from_parts(None, policy, value)
        }
    }

    pub fn from_parts(trunk: Option<ParamSet>, policy: ParamSet, value: ParamSet) -> Result<Self> {
        if value.output_dim() != 1 {
            return Err(invalid_arg!("value net must output one scalar, got {}", value.output_dim()));
        }
        match &trunk {
            Some(t) => {
                if policy.input_dim() != t.output_dim() || value.input_dim() != t.output_dim() {
                    return Err(invalid_arg!("heads do not match the trunk width {}", t.output_dim()));
                }
            }
            None => {
                if policy.input_dim() != value.input_dim() {
                    return Err(invalid_arg!(
                        "policy expects {} inputs but value expects {}",
                        policy.input_dim(),
                        value.input_dim()
                    ));
                }
            }
        }
        Ok(ActorCritic { trunk, policy, value })
    }

    pub fn is_shared(&self) -> bool {
        self.trunk.is_some()
    }

    pub fn obs_dim(&self) -> usize {
        self.trunk.as_ref().unwrap_or(&self.policy).input_dim()
    }

    pub fn action_count(&self) -> usize {
        self.policy.output_dim()
    }

    pub fn trunk(&self) -> Option<&ParamSet> {
        self.trunk.as_ref()
    }

    pub fn policy_net(&self) -> &ParamSet {
        &self.policy
    }

    pub fn value_net(&self) -> &ParamSet {
        &self.value
    }

    pub fn trunk_mut(&mut self) -> Option<&mut ParamSet> {
        self.trunk.as_mut()
    }

    pub fn policy_net_mut(&mut self) -> &mut ParamSet {
        &mut self.policy
    }

    pub fn value_net_mut(&mut self) -> &mut ParamSet {
        &mut self.value
    }

    pub fn action_dist(&self, obs: &[f64]) -> Result<Categorical> {
        Categorical::from_logits(self.logits(obs)?)
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64> {
        let out = match &self.trunk {
            Some(t) => self.value.predict(&t.predict(obs)?)?,
            None => self.value.predict(obs)?,
        };
        Ok(out[0])
    }

    /// Forward through the policy (and value, if `with_value`) keeping tapes.
    pub fn forward(&self, obs: &[f64], with_value: bool) -> Result<AcForward> {
        let (features, trunk_tape) = match &self.trunk {
            Some(t) => {
                let (h, tape) = t.forward(obs)?;
                (h, Some(tape))
            }
            None => (obs.to_vec(), None),
        };
        let (logits, policy_tape) = self.policy.forward(&features)?;
        let (value, value_tape) = if with_value {
            let (v, tape) = self.value.forward(&features)?;
            (Some(v[0]), Some(tape))
        } else {
            (None, None)
        };
        Ok(AcForward { logits, value, trunk_tape, policy_tape, value_tape })
    }

    /// Accumulate gradients given `d loss / d logits` and `d loss / d value`.
    pub fn backward_into(
        &self,
        fwd: &AcForward,
        logits_grad: Option<&[f64]>,
        value_grad: Option<f64>,
        grads: &mut AcGrads,
    ) -> Result<()> {
        let mut feature_grad: Option<Vec<f64>> = None;
        if let Some(g) = logits_grad {
            let d = self.policy.backward_into(&fwd.policy_tape, g, &mut grads.policy)?;
            feature_grad = Some(d);
        }
        if let Some(g) = value_grad {
            let tape = fwd
                .value_tape
                .as_ref()
                .ok_or_else(|| crate::error::invalid_state!("forward pass did not record the value head"))?;
            let d = self.value.backward_into(tape, &[g], &mut grads.value)?;
            feature_grad = Some(match feature_grad {
                Some(mut acc) => {
                    for (a, b) in acc.iter_mut().zip(&d) {
                        *a += b;
                    }
                    acc
                }
                None => d,
            });
        }
        if let (Some(trunk), Some(tape), Some(fg)) = (&self.trunk, &fwd.trunk_tape, feature_grad) {
            let tg = grads.trunk.as_mut().ok_or_else(|| invalid_arg!("gradient set has no trunk entry"))?;
            trunk.backward_into(tape, &fg, tg)?;
        }
        Ok(())
    }

    pub fn snapshot_policy(&self) -> PolicySnapshot {
        PolicySnapshot { trunk: self.trunk.clone(), head: self.policy.clone() }
    }

    /// Trunk, policy and value parameters concatenated in that order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        if let Some(t) = &self.trunk {
            flat.extend(t.flatten());
        }
        flat.extend(self.policy.flatten());
        flat.extend(self.value.flatten());
        flat
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total =
            self.trunk.as_ref().map_or(0, ParamSet::num_params) + self.policy.num_params() + self.value.num_params();
        if flat.len() != total {
            return Err(invalid_arg!("expected {total} values, got {}", flat.len()));
        }
        let mut rest = flat;
        if let Some(t) = &mut self.trunk {
            let (a, b) = rest.split_at(t.num_params());
            t.assign_flat(a)?;
            rest = b;
        }
        let (a, b) = rest.split_at(self.policy.num_params());
        self.policy.assign_flat(a)?;
        self.value.assign_flat(b)
    }

    pub fn is_finite(&self) -> bool {
        self.trunk.as_ref().is_none_or(ParamSet::is_finite) && self.policy.is_finite() && self.value.is_finite()
    }
}

impl LogitModel for ActorCritic {
    fn logits(&self, obs: &[f64]) -> Result<Vec<f64>> {
        match &self.trunk {
            Some(t) => self.policy.predict(&t.predict(obs)?),
            None => self.policy.predict(obs),
        }
    }
}

/// Gradients for every net of an [`ActorCritic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcGrads {
    pub trunk: Option<GradSet>,
    pub policy: GradSet,
    pub value: GradSet,
}

impl AcGrads {
    pub fn zeros_like(ac: &ActorCritic) -> Self {
        AcGrads {
            trunk: ac.trunk.as_ref().map(GradSet::zeros_like),
            policy: GradSet::zeros_like(&ac.policy),
            value: GradSet::zeros_like(&ac.value),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        if let Some(t) = &mut self.trunk {
            t.scale(factor);
        }
        self.policy.scale(factor);
        self.value.scale(factor);
    }

    pub fn add_scaled(&mut self, other: &AcGrads, factor: f64) {
        if let (Some(a), Some(b)) = (&mut self.trunk, &other.trunk) {
            a.add_scaled(b, factor);
        }
        self.policy.add_scaled(&other.policy, factor);
        self.value.add_scaled(&other.value, factor);
    }

    pub fn is_finite(&self) -> bool {
        self.trunk.as_ref().is_none_or(GradSet::is_finite) && self.policy.is_finite() && self.value.is_finite()
    }

    /// Same ordering as [`ActorCritic::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        if let Some(t) = &self.trunk {
            flat.extend(t.flatten());
        }
        flat.extend(self.policy.flatten());
        flat.extend(self.value.flatten());
        flat
    }

    pub fn max_abs(&self) -> f64 {
        self.trunk.as_ref().map_or(0.0, GradSet::max_abs).max(self.policy.max_abs()).max(self.value.max_abs())
    }
}

/// One optimizer per net of an [`ActorCritic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcOptimizer {
    pub trunk: Option<OptimizerState>,
    pub policy: OptimizerState,
    pub value: OptimizerState,
}

impl AcOptimizer {
    pub fn adam(step_size: f64, ac: &ActorCritic) -> Self {
        AcOptimizer {
            trunk: ac.trunk.as_ref().map(|t| OptimizerState::adam(step_size, t)),
            policy: OptimizerState::adam(step_size, &ac.policy),
            value: OptimizerState::adam(step_size, &ac.value),
        }
    }

    pub fn sgd(step_size: f64, ac: &ActorCritic) -> Self {
        AcOptimizer {
            trunk: ac.trunk.as_ref().map(|_| OptimizerState::sgd(step_size)),
            policy: OptimizerState::sgd(step_size),
            value: OptimizerState::sgd(step_size),
        }
    }

    /// Update all nets; nothing changes if any gradient is non-finite.
    pub fn apply(&mut self, ac: &mut ActorCritic, grads: &AcGrads) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("actor-critic gradient; step rejected".into()));
        }
        if let (Some(t), Some(g), Some(o)) = (&mut ac.trunk, &grads.trunk, &mut self.trunk) {
            apply_step(t, g, o)?;
        }
        apply_step(&mut ac.policy, &grads.policy, &mut self.policy)?;
        apply_step(&mut ac.value, &grads.value, &mut self.value)
    }
}
