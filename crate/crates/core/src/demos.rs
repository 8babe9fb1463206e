//! Demonstrations: recording state-action pairs from a generator policy and
//! behavior cloning a frozen reference policy from them.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::diffnet::{apply_step, GradSet, OptimizerState, ParamSet};
use crate::envs::{self, Env, EnvId};
use crate::error::invalid_arg;
use crate::policy::{ActorCritic, Categorical, LogitModel};
use crate::{rng_from_seed, Result, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoPair {
    pub observation: Vec<f64>,
    pub action: usize,
}

/// Ordered `(observation, action)` pairs grouped into episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemonstrationSet {
    env: EnvId,
    generator: String,
    episodes: Vec<Vec<DemoPair>>,
    /// Mean undiscounted return over the episodes that ran to completion.
    mean_return: Option<f64>,
}

impl DemonstrationSet {
    pub fn new(env: EnvId, generator: String, episodes: Vec<Vec<DemoPair>>, mean_return: Option<f64>) -> Result<Self> {
        let episodes: Vec<Vec<DemoPair>> = episodes.into_iter().filter(|e| !e.is_empty()).collect();
        if episodes.is_empty() {
            return Err(invalid_arg!("a demonstration set needs at least one pair"));
        }
        let dim = env.observation_dim();
        for pair in episodes.iter().flatten() {
            if pair.observation.len() != dim {
                return Err(invalid_arg!("observation of length {} for {env} (expects {dim})", pair.observation.len()));
            }
            if pair.action >= env.action_count() {
                return Err(invalid_arg!("action {} out of range for {env}", pair.action));
            }
            if pair.observation.iter().any(|v| !v.is_finite()) {
                return Err(invalid_arg!("non-finite observation in demonstrations"));
            }
        }
        if generator.contains(['\n', '\r', '\t']) {
            return Err(invalid_arg!("generator description must be a single line without tabs"));
        }
        Ok(DemonstrationSet { env, generator, episodes, mean_return })
    }

    pub fn env(&self) -> EnvId {
        self.env
    }

    pub fn generator(&self) -> &str {
        &self.generator
    }

    pub fn episodes(&self) -> &[Vec<DemoPair>] {
        &self.episodes
    }

    pub fn mean_return(&self) -> Option<f64> {
        self.mean_return
    }

    pub fn len(&self) -> usize {
        self.episodes.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pairs(&self) -> impl Iterator<Item = &DemoPair> {
        self.episodes.iter().flatten()
    }

    pub fn to_state_actions(&self) -> Vec<(Vec<f64>, usize)> {
        self.pairs().map(|p| (p.observation.clone(), p.action)).collect()
    }
}

/// Source of demonstration actions.
pub trait Demonstrator {
    fn act(&self, obs: &[f64], rng: &mut Rng) -> Result<usize>;
    fn describe(&self) -> String;
}

/// Acts with a learned policy, greedily or by sampling.
pub struct PolicyDemonstrator<'a, M: LogitModel> {
    pub model: &'a M,
    pub greedy: bool,
}

impl<M: LogitModel> Demonstrator for PolicyDemonstrator<'_, M> {
    fn act(&self, obs: &[f64], rng: &mut Rng) -> Result<usize> {
        let dist = self.model.distribution(obs)?;
        Ok(if self.greedy { dist.argmax() } else { dist.sample(rng) })
    }

    fn describe(&self) -> String {
        String::from(if self.greedy { "policy-greedy" } else { "policy-sampled" })
    }
}

/// Scripted pendulum swing-up: energy pumping far from upright, a
/// proportional-derivative catch near it, quantized to the torque table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwingUpController {
    pub kp: f64,
    pub kd: f64,
    pub energy_gain: f64,
    /// Switch to the catch controller once `cos(theta)` exceeds this.
    pub catch_cos: f64,
}

impl Default for SwingUpController {
    fn default() -> Self {
        SwingUpController { kp: 14.0, kd: 3.0, energy_gain: 1.0, catch_cos: 0.8 }
    }
}

impl SwingUpController {
    pub fn torque_for(&self, obs: &[f64]) -> f64 {
        let (c, s, w) = (obs[0], obs[1], obs[2]);
        let theta = libm::atan2(s, c);
        let u = if c > self.catch_cos {
            -(self.kp * theta + self.kd * w)
        } else {
            // with theta'' = a sin(theta) + b u, E = w^2/2 + a cos(theta) has dE/dt = b u w
            let a = 3.0 * envs::GRAVITY / (2.0 * envs::LENGTH);
            let energy = 0.5 * w * w + a * c;
            self.energy_gain * (a - energy) * w
        };
        u.clamp(-envs::MAX_TORQUE, envs::MAX_TORQUE)
    }
}

impl Demonstrator for SwingUpController {
    fn act(&self, obs: &[f64], _rng: &mut Rng) -> Result<usize> {
        if obs.len() != 3 {
            return Err(invalid_arg!("swing-up controller needs a pendulum observation"));
        }
        let u = self.torque_for(obs);
        let mut best = 0;
        for a in 1..envs::TORQUE_LEVELS {
            if (envs::torque(a) - u).abs() < (envs::torque(best) - u).abs() {
                best = a;
            }
        }
        Ok(best)
    }

    fn describe(&self) -> String {
        String::from("scripted-swingup")
    }
}

/// Record `n_transitions` pairs from `ac` on `env`, reseeded with `seed`.
pub fn record(
    ac: &ActorCritic,
    env: &mut Env,
    n_transitions: usize,
    seed: u64,
    greedy: bool,
) -> Result<DemonstrationSet> {
    record_with(&PolicyDemonstrator { model: ac, greedy }, env, n_transitions, seed)
}

pub fn record_with(
    demonstrator: &dyn Demonstrator,
    env: &mut Env,
    n_transitions: usize,
    seed: u64,
) -> Result<DemonstrationSet> {
    if n_transitions == 0 {
        return Err(invalid_arg!("n_transitions must be at least 1"));
    }
    let mut rng = rng_from_seed(seed ^ 0xD1B5_4A32_D192_ED03);
    let mut obs = env.reset(seed);
    let mut episodes = Vec::new();
    let mut current = Vec::new();
    let mut returns = Vec::new();
    let mut ret = 0.0;
    for _ in 0..n_transitions {
        let action = demonstrator.act(&obs, &mut rng)?;
        let step = env.step(action)?;
        current.push(DemoPair { observation: core::mem::take(&mut obs), action });
        ret += step.reward;
        if step.done {
            episodes.push(core::mem::take(&mut current));
            returns.push(ret);
            ret = 0.0;
            obs = env.reset_episode();
        } else {
            obs = step.observation;
        }
    }
    if !current.is_empty() {
        episodes.push(current);
    }
    let mean_return = if returns.is_empty() { None } else { Some(returns.iter().sum::<f64>() / returns.len() as f64) };
    DemonstrationSet::new(env.id(), demonstrator.describe(), episodes, mean_return)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcConfig {
    /// Full layer sizes including input and action count.
    pub layer_sizes: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub step_size: f64,
    pub seed: u64,
}

/// Mean negative log-likelihood of the demonstrated actions (dropout off).
pub fn bc_loss<M: LogitModel>(model: &M, pairs: &[DemoPair]) -> Result<f64> {
    let mut total = 0.0;
    for p in pairs {
        total -= model.distribution(&p.observation)?.log_prob(p.action)?;
    }
    Ok(total / pairs.len().max(1) as f64)
}

/// Fraction of pairs whose demonstrated action is the model's argmax.
pub fn agreement<M: LogitModel>(model: &M, pairs: &[DemoPair]) -> Result<f64> {
    let mut hits = 0usize;
    for p in pairs {
        if model.distribution(&p.observation)?.argmax() == p.action {
            hits += 1;
        }
    }
    Ok(hits as f64 / pairs.len().max(1) as f64)
}

/// Fit a categorical policy to the demonstrations by maximum likelihood with
/// adam over shuffled minibatches. Dropout is only active during training.
pub fn behavior_clone(set: &DemonstrationSet, cfg: &BcConfig) -> Result<ParamSet> {
    let pairs: Vec<&DemoPair> = set.pairs().collect();
    let sizes = &cfg.layer_sizes;
    if sizes.first() != Some(&set.env().observation_dim()) || sizes.last() != Some(&set.env().action_count()) {
        return Err(invalid_arg!("layer sizes {sizes:?} do not match {}", set.env()));
    }
    behavior_clone_pairs(&pairs, cfg)
}

pub(crate) fn behavior_clone_pairs(pairs: &[&DemoPair], cfg: &BcConfig) -> Result<ParamSet> {
    if pairs.is_empty() {
        return Err(invalid_arg!("no demonstrations to clone"));
    }
    if !(0.0..1.0).contains(&cfg.dropout) {
        return Err(invalid_arg!("dropout rate {} outside [0, 1)", cfg.dropout));
    }
    if cfg.batch_size == 0 {
        return Err(invalid_arg!("batch size must be at least 1"));
    }
    let mut params = ParamSet::init_mlp(&cfg.layer_sizes, cfg.seed)?;
    let mut opt = OptimizerState::adam(cfg.step_size, &params);
    let mut rng = rng_from_seed(cfg.seed.wrapping_add(0xB0C1));
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut grads = GradSet::zeros_like(&params);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            grads.zero();
            let n = chunk.len() as f64;
            for &i in chunk {
                let p = pairs[i];
                let (logits, tape) = params.forward_dropout(&p.observation, cfg.dropout, &mut rng)?;
                let dist = Categorical::from_logits(logits)?;
                // d(-log p_a)/dz = p - onehot(a)
                let g: Vec<f64> = dist.grad_log_prob(p.action).into_iter().map(|v| -v / n).collect();
                params.backward_into(&tape, &g, &mut grads)?;
            }
            apply_step(&mut params, &grads, &mut opt)?;
        }
    }
    Ok(params)
}

/// Split off every `k`-th pair as held-out data.
pub fn holdout_split(set: &DemonstrationSet, every: usize) -> (Vec<DemoPair>, Vec<DemoPair>) {
    let mut train = Vec::new();
    let mut held = Vec::new();
    for (i, p) in set.pairs().enumerate() {
        if every > 0 && i % every == every - 1 {
            held.push(p.clone());
        } else {
            train.push(p.clone());
        }
    }
    (train, held)
}

/// Behavior cloning on an explicit list of pairs.
pub fn behavior_clone_on(pairs: &[DemoPair], cfg: &BcConfig) -> Result<ParamSet> {
    let refs: Vec<&DemoPair> = pairs.iter().collect();
    behavior_clone_pairs(&refs, cfg)
}

/// Mean return of `n` episodes of `demonstrator` starting from `seed`.
pub fn rollout_returns(demonstrator: &dyn Demonstrator, id: EnvId, episodes: usize, seed: u64) -> Result<Vec<f64>> {
    let mut env = Env::new(id, seed);
    let mut rng = rng_from_seed(seed ^ 0xD1B5_4A32_D192_ED03);
    let mut out = Vec::with_capacity(episodes);
    let mut obs = env.reset(seed);
    for _ in 0..episodes {
        let mut ret = 0.0;
        loop {
            let a = demonstrator.act(&obs, &mut rng)?;
            let s = env.step(a)?;
            ret += s.reward;
            if s.done {
                obs = env.reset_episode();
                break;
            }
            obs = s.observation;
        }
        out.push(ret);
    }
    Ok(out)
}
