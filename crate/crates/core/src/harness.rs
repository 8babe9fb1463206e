//! The training loop: rollouts, preference critics, multiplier ascent and
//! evaluation, one epoch at a time. The whole [`Trainer`] is serializable so
//! a checkpoint carries every random stream.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::demos::{rollout_returns, PolicyDemonstrator};
use crate::diffnet::ParamSet;
use crate::envs::{Env, EnvId};
use crate::error::invalid_arg;
use crate::lagrange::{mpac_loss, LagrangeState};
use crate::policy::{AcOptimizer, ActorCritic, LogitModel};
use crate::preferences::{GailSubsystem, PreferenceKind, PreferenceSpec, StateAction};
use crate::rollout::{a2c_loss, collect, compute_returns, LossTerms};
use crate::{rng_from_seed, Error, Result, Rng};

/// SplitMix64 finalizer over `seed + stream * golden`, used to fan one run
/// seed out into independent streams.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_ENVS: u64 = 1 << 32;
const STREAM_ACTIONS: u64 = 2 << 32;
const STREAM_EVAL: u64 = 3 << 32;
const STREAM_EXPERT: u64 = 4;
const STREAM_NETS: u64 = 5;
const STREAM_GAIL: u64 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Actor-critic loss plus the Lagrangian preference terms.
    Mpac,
    /// Plain advantage actor-critic; preferences are not allowed.
    A2c,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Mpac => "mpac",
            Algorithm::A2c => "a2c",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mpac" => Ok(Algorithm::Mpac),
            "a2c" => Ok(Algorithm::A2c),
            other => Err(invalid_arg!("unknown algorithm {other:?} (expected mpac or a2c)")),
        }
    }
}

/// Numeric settings of a run. Preferences are passed separately as
/// [`PreferencePlan`]s because some of them carry data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub env: EnvId,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub steps_per_epoch: usize,
    pub parallel_envs: usize,
    pub n_steps: usize,
    pub gamma: f64,
    pub policy_lr: f64,
    pub lambda_lr: f64,
    pub beta: f64,
    pub value_coef: f64,
    /// Training rewards are multiplied by this; evaluation reports raw
    /// returns.
    pub reward_scale: f64,
    pub hidden: Vec<usize>,
    pub shared_trunk: bool,
    pub discriminator_lr: f64,
    pub eval_episodes: usize,
    pub greedy_eval: bool,
}

impl TrainSettings {
    /// Defaults for `env` taken from the pendulum hyperparameter table.
    pub fn defaults(env: EnvId) -> Self {
        TrainSettings {
            env,
            seed: 0,
            algorithm: Algorithm::Mpac,
            steps_per_epoch: 1000,
            parallel_envs: 8,
            n_steps: 5,
            gamma: 0.99,
            policy_lr: 1e-4,
            lambda_lr: 1e-4,
            beta: 0.1,
            value_coef: 0.5,
            reward_scale: 1.0,
            hidden: alloc::vec![512, 512],
            shared_trunk: false,
            discriminator_lr: 1e-3,
            eval_episodes: 10,
            greedy_eval: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("policy_lr", self.policy_lr),
            ("lambda_lr", self.lambda_lr),
            ("discriminator_lr", self.discriminator_lr),
            ("reward_scale", self.reward_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid_arg!("{name} must be positive, got {v}"));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(invalid_arg!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) || !(self.value_coef >= 0.0 && self.value_coef.is_finite()) {
            return Err(invalid_arg!("beta and value_coef must be finite and nonnegative"));
        }
        for (name, v) in [
            ("steps_per_epoch", self.steps_per_epoch),
            ("parallel_envs", self.parallel_envs),
            ("n_steps", self.n_steps),
            ("eval_episodes", self.eval_episodes),
        ] {
            if v == 0 {
                return Err(invalid_arg!("{name} must be at least 1"));
            }
        }
        if self.hidden.contains(&0) {
            return Err(invalid_arg!("hidden layer widths must be positive"));
        }
        Ok(())
    }

    /// Optimizer steps per epoch; the last batch may overshoot
    /// `steps_per_epoch`.
    pub fn iterations_per_epoch(&self) -> usize {
        let per = self.parallel_envs * self.n_steps;
        self.steps_per_epoch.div_ceil(per)
    }
}

/// A preference to activate, before it is bound to a live policy.
#[derive(Debug, Clone, PartialEq)]
pub enum PreferencePlan {
    Entropy { threshold: f64 },
    Conserve { threshold: f64, eta: f64 },
    Reference { threshold: f64, policy: ParamSet },
    Gail { threshold: f64, expert: Vec<StateAction>, hidden: Vec<usize> },
}

impl PreferencePlan {
    pub fn kind(&self) -> PreferenceKind {
        match self {
            PreferencePlan::Entropy { .. } => PreferenceKind::Entropy,
            PreferencePlan::Conserve { .. } => PreferenceKind::Conserve,
            PreferencePlan::Reference { .. } => PreferenceKind::Reference,
            PreferencePlan::Gail { .. } => PreferenceKind::Gail,
        }
    }
}

/// Mean, min and max of undiscounted episode returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub returns: Vec<f64>,
}

impl EvalStats {
    pub fn from_returns(returns: Vec<f64>) -> Result<Self> {
        if returns.is_empty() {
            return Err(invalid_arg!("no episode returns"));
        }
        let mean = returns.iter().sum::<f64>() / returns.len() as f64;
        let min = returns.iter().copied().fold(f64::INFINITY, f64::min);
        let max = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(EvalStats { mean, min, max, returns })
    }
}

/// Run `episodes` full episodes of `model` on `env` and summarize the
/// returns. Actions are sampled unless `greedy`.
pub fn evaluate<M: LogitModel>(model: &M, env: EnvId, episodes: usize, seed: u64, greedy: bool) -> Result<EvalStats> {
    if episodes == 0 {
        return Err(invalid_arg!("episodes must be at least 1"));
    }
    EvalStats::from_returns(rollout_returns(&PolicyDemonstrator { model, greedy }, env, episodes, seed)?)
}

/// Everything reported about one finished epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: u64,
    pub env_steps: u64,
    pub eval: EvalStats,
    pub kinds: Vec<PreferenceKind>,
    /// Epoch-mean of each preference metric, in `kinds` order.
    pub mean_d: Vec<f64>,
    /// Multipliers after this epoch's ascent step.
    pub lambdas: Vec<f64>,
    /// Actor-critic loss terms averaged over the epoch's batches.
    pub terms: LossTerms,
    pub loss: f64,
}

/// Complete state of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trainer {
    settings: TrainSettings,
    ac: ActorCritic,
    optimizer: AcOptimizer,
    prefs: Vec<PreferenceSpec>,
    lagrange: LagrangeState,
    envs: Vec<Env>,
    action_rngs: Vec<Rng>,
    expert: Vec<StateAction>,
    expert_rng: Rng,
    epoch: u64,
    env_steps: u64,
}

impl Trainer {
    pub fn new(settings: TrainSettings, plans: Vec<PreferencePlan>) -> Result<Self> {
        settings.validate()?;
        if settings.algorithm == Algorithm::A2c && !plans.is_empty() {
            return Err(invalid_arg!("a2c runs take no preferences"));
        }
        let id = settings.env;
        let ac = ActorCritic::new(
            id.observation_dim(),
            &settings.hidden,
            id.action_count(),
            derive_seed(settings.seed, STREAM_NETS),
            settings.shared_trunk,
        )?;
        let mut prefs = Vec::with_capacity(plans.len());
        let mut expert = Vec::new();
        for plan in plans {
            if prefs.iter().any(|p: &PreferenceSpec| p.kind() == plan.kind()) {
                return Err(invalid_arg!("duplicate {} preference", plan.kind()));
            }
            prefs.push(match plan {
                PreferencePlan::Entropy { threshold } => PreferenceSpec::entropy(threshold)?,
                PreferencePlan::Conserve { threshold, eta } => PreferenceSpec::conserve(threshold, eta, &ac)?,
                PreferencePlan::Reference { threshold, policy } => {
                    if policy.input_dim() != id.observation_dim() || policy.output_dim() != id.action_count() {
                        return Err(invalid_arg!("reference policy does not match {id}"));
                    }
                    PreferenceSpec::reference(threshold, policy)?
                }
                PreferencePlan::Gail { threshold, expert: pairs, hidden } => {
                    if pairs.is_empty() {
                        return Err(invalid_arg!("gail preference needs expert pairs"));
                    }
                    if pairs.iter().any(|(o, a)| o.len() != id.observation_dim() || *a >= id.action_count()) {
                        return Err(invalid_arg!("expert pairs do not match {id}"));
                    }
                    expert = pairs;
                    let gail = GailSubsystem::new(
                        id.observation_dim(),
                        id.action_count(),
                        &hidden,
                        settings.discriminator_lr,
                        derive_seed(settings.seed, STREAM_GAIL),
                    )?;
                    PreferenceSpec::gail(threshold, gail)?
                }
            });
        }
        let lagrange = LagrangeState::for_preferences(&prefs, settings.lambda_lr)?;
        let envs = (0..settings.parallel_envs as u64)
            .map(|i| Env::new(id, derive_seed(settings.seed, STREAM_ENVS + i)))
            .collect();
        let action_rngs = (0..settings.parallel_envs as u64)
            .map(|i| rng_from_seed(derive_seed(settings.seed, STREAM_ACTIONS + i)))
            .collect();
        let optimizer = AcOptimizer::adam(settings.policy_lr, &ac);
        let expert_rng = rng_from_seed(derive_seed(settings.seed, STREAM_EXPERT));
        Ok(Trainer {
            settings,
            ac,
            optimizer,
            prefs,
            lagrange,
            envs,
            action_rngs,
            expert,
            expert_rng,
            epoch: 0,
            env_steps: 0,
        })
    }

    pub fn settings(&self) -> &TrainSettings {
        &self.settings
    }

    pub fn actor_critic(&self) -> &ActorCritic {
        &self.ac
    }

    pub fn preferences(&self) -> &[PreferenceSpec] {
        &self.prefs
    }

    pub fn lagrange(&self) -> &LagrangeState {
        &self.lagrange
    }

    /// Lagrange multipliers can be pinned, e.g. for ablations.
    pub fn lagrange_mut(&mut self) -> &mut LagrangeState {
        &mut self.lagrange
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    /// Seed of the evaluation stream after epoch `epoch`.
    pub fn eval_seed(&self, epoch: u64) -> u64 {
        derive_seed(self.settings.seed, STREAM_EVAL + epoch)
    }

    /// Collect, update and evaluate for one epoch. On error the trainer may
    /// be partially updated; callers that need the last good state should
    /// keep a clone.
    pub fn run_epoch(&mut self) -> Result<EpochReport> {
        let iterations = self.settings.iterations_per_epoch();
        let k = self.prefs.len();
        let mut sum_d = alloc::vec![0.0; k];
        let mut terms = LossTerms::default();
        let mut loss = 0.0;
        for _ in 0..iterations {
            let it = self.iteration()?;
            for (s, d) in sum_d.iter_mut().zip(&it.mean_d) {
                *s += d;
            }
            terms.policy += it.terms.policy;
            terms.entropy += it.terms.entropy;
            terms.value += it.terms.value;
            loss += it.loss;
        }
        let n = iterations as f64;
        let mean_d: Vec<f64> = sum_d.iter().map(|s| s / n).collect();
        let thresholds: Vec<f64> = self.prefs.iter().map(|p| p.threshold()).collect();
        self.lagrange.step(&mean_d, &thresholds)?;
        self.lagrange.record(self.epoch, mean_d.clone());
        let eval = evaluate(
            &self.ac,
            self.settings.env,
            self.settings.eval_episodes,
            self.eval_seed(self.epoch),
            self.settings.greedy_eval,
        )?;
        let report = EpochReport {
            epoch: self.epoch,
            env_steps: self.env_steps,
            eval,
            kinds: self.lagrange.kinds().to_vec(),
            mean_d,
            lambdas: self.lagrange.multipliers().to_vec(),
            terms: LossTerms { policy: terms.policy / n, entropy: terms.entropy / n, value: terms.value / n },
            loss: loss / n,
        };
        self.epoch += 1;
        Ok(report)
    }

    fn iteration(&mut self) -> Result<Iteration> {
        let s = &self.settings;
        let mut batch = collect(&self.ac, &mut self.envs, s.n_steps, &mut self.action_rngs)?;
        self.env_steps += batch.len() as u64;
        if s.reward_scale != 1.0 {
            batch.scale_rewards(s.reward_scale)?;
        }
        let ac = &self.ac;
        compute_returns(&mut batch, |o| ac.value(o), s.gamma)?;

        let mut gail_advantages = None;
        if let Some(gail) = self.prefs.iter_mut().find_map(|p| p.gail_mut()) {
            let agent: Vec<StateAction> =
                batch.transitions().iter().map(|t| (t.observation.clone(), t.action)).collect();
            let expert: Vec<StateAction> = (0..agent.len())
                .map(|_| self.expert[self.expert_rng.gen_range(0..self.expert.len())].clone())
                .collect();
            gail.discriminator_step(&expert, &agent)?;
            gail_advantages = Some(gail.advantage_and_fit(&batch, s.gamma)?);
        }

        let (grads, terms, loss, mean_d) = match s.algorithm {
            Algorithm::A2c => {
                let out = a2c_loss(&batch, &self.ac, s.beta, s.value_coef)?;
                (out.grads, out.terms, out.loss, Vec::new())
            }
            Algorithm::Mpac => {
                let out = mpac_loss(
                    &batch,
                    &self.ac,
                    &self.prefs,
                    gail_advantages.as_deref(),
                    &self.lagrange,
                    s.beta,
                    s.value_coef,
                )?;
                (out.grads, out.terms, out.loss, out.mean_d)
            }
        };
        self.optimizer.apply(&mut self.ac, &grads)?;
        for p in &mut self.prefs {
            p.track(&self.ac)?;
        }
        Ok(Iteration { terms, loss, mean_d })
    }
}

struct Iteration {
    terms: LossTerms,
    loss: f64,
    mean_d: Vec<f64>,
}
