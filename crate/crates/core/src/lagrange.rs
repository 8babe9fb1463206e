//! Lagrangian relaxation of the preference constraints.
//!
//! The saddle-point objective is
//!
//! ```text
//! min_theta max_{lambda >= 0}  E[-A log pi] + sum_k lambda_k (mean d_k - l_k)
//! ```
//!
//! Multipliers are constants inside the policy loss and are updated by
//! projected gradient ascent: `lambda_k <- max(0, lambda_k + alpha (mean d_k - l_k))`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, invalid_state};
use crate::policy::ActorCritic;
use crate::preferences::{PreferenceKind, PreferenceSpec};
use crate::rollout::{actor_critic_loss, LossTerms, RolloutBatch};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaRecord {
    pub epoch: u64,
    pub multipliers: Vec<f64>,
    pub mean_d: Vec<f64>,
}

/// Nonnegative multipliers, one per active preference, in preference order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagrangeState {
    kinds: Vec<PreferenceKind>,
    multipliers: Vec<f64>,
    step_size: f64,
    history: Vec<LambdaRecord>,
}

impl LagrangeState {
    /// All multipliers start at zero.
    pub fn new(kinds: Vec<PreferenceKind>, step_size: f64) -> Result<Self> {
        if !(step_size > 0.0 && step_size.is_finite()) {
            return Err(invalid_arg!("multiplier step size must be positive, got {step_size}"));
        }
        for (i, k) in kinds.iter().enumerate() {
            if kinds[..i].contains(k) {
                return Err(invalid_arg!("preference {k} appears more than once"));
            }
        }
        let n = kinds.len();
        Ok(LagrangeState { kinds, multipliers: vec![0.0; n], step_size, history: Vec::new() })
    }

    pub fn for_preferences(prefs: &[PreferenceSpec], step_size: f64) -> Result<Self> {
        Self::new(prefs.iter().map(PreferenceSpec::kind).collect(), step_size)
    }

    pub fn kinds(&self) -> &[PreferenceKind] {
        &self.kinds
    }

    pub fn multipliers(&self) -> &[f64] {
        &self.multipliers
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn get(&self, kind: PreferenceKind) -> Option<f64> {
        self.kinds.iter().position(|&k| k == kind).map(|i| self.multipliers[i])
    }

    pub fn set(&mut self, kind: PreferenceKind, value: f64) -> Result<()> {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(invalid_arg!("multiplier must be finite and >= 0, got {value}"));
        }
        let i = self.kinds.iter().position(|&k| k == kind).ok_or_else(|| invalid_arg!("no multiplier for {kind}"))?;
        self.multipliers[i] = value;
        Ok(())
    }

    pub fn history(&self) -> &[LambdaRecord] {
        &self.history
    }

    /// Projected ascent step from per-preference batch means and thresholds.
    pub fn step(&mut self, mean_d: &[f64], thresholds: &[f64]) -> Result<()> {
        if mean_d.len() != self.kinds.len() || thresholds.len() != self.kinds.len() {
            return Err(invalid_arg!(
                "{} multipliers but {} means and {} thresholds",
                self.kinds.len(),
                mean_d.len(),
                thresholds.len()
            ));
        }
        if let Some(i) = mean_d.iter().position(|d| !d.is_finite()) {
            return Err(Error::NonFinite(format!("mean metric for {}; multiplier step rejected", self.kinds[i])));
        }
        for ((lam, d), l) in self.multipliers.iter_mut().zip(mean_d).zip(thresholds) {
            *lam = (*lam + self.step_size * (d - l)).max(0.0);
        }
        Ok(())
    }

    pub fn record(&mut self, epoch: u64, mean_d: Vec<f64>) {
        self.history.push(LambdaRecord { epoch, multipliers: self.multipliers.clone(), mean_d });
    }
}

/// `lambda <- max(0, lambda + alpha (mean_d - l))` for every preference.
pub fn lambda_step(lam: &mut LagrangeState, mean_d: &[f64], thresholds: &[f64]) -> Result<()> {
    lam.step(mean_d, thresholds)
}

#[derive(Debug, Clone)]
pub struct MpacLoss {
    /// Full saddle-point loss at the current multipliers.
    pub loss: f64,
    /// The actor-critic part alone.
    pub base_loss: f64,
    pub terms: LossTerms,
    pub grads: crate::policy::AcGrads,
    /// Batch mean of each preference metric, in preference order.
    pub mean_d: Vec<f64>,
}

/// Actor-critic loss plus `sum_k lambda_k (mean d_k - l_k)`, differentiated
/// with respect to the actor-critic parameters.
///
/// `beta` is the plain entropy bonus (zero disables it). `gail_advantages`
/// must be supplied when a gail preference is active.
pub fn mpac_loss(
    batch: &RolloutBatch,
    ac: &ActorCritic,
    prefs: &[PreferenceSpec],
    gail_advantages: Option<&[f64]>,
    lam: &LagrangeState,
    beta: f64,
    value_coef: f64,
) -> Result<MpacLoss> {
    if lam.kinds().len() != prefs.len() || lam.kinds().iter().zip(prefs).any(|(k, p)| *k != p.kind()) {
        return Err(invalid_arg!("multipliers do not line up with the active preferences"));
    }
    if let Some(a) = gail_advantages {
        if a.len() != batch.len() {
            return Err(invalid_arg!("{} gail advantages for {} transitions", a.len(), batch.len()));
        }
    }
    let n = batch.len() as f64;
    let mut sums = vec![0.0; prefs.len()];
    let transitions = batch.transitions();
    let lambdas = lam.multipliers();
    let mut hook = |i: usize, dist: &crate::policy::Categorical, dlogits: &mut [f64]| -> Result<()> {
        let t = &transitions[i];
        for (k, pref) in prefs.iter().enumerate() {
            let (d, g) = pref.sample_metric(dist, &t.observation, t.action, gail_advantages.map(|a| a[i]))?;
            sums[k] += d;
            let lam_k = lambdas[k];
            if lam_k != 0.0 {
                for (acc, gi) in dlogits.iter_mut().zip(&g) {
                    *acc += lam_k * gi / n;
                }
            }
        }
        Ok(())
    };
    let base = actor_critic_loss(batch, ac, beta, value_coef, &mut hook)?;
    let mean_d: Vec<f64> = sums.iter().map(|s| s / n).collect();
    let mut loss = base.loss;
    for (k, pref) in prefs.iter().enumerate() {
        let term = lambdas[k] * (mean_d[k] - pref.threshold());
        if !term.is_finite() {
            return Err(invalid_state!(
                "non-finite contribution from the {} preference (mean d = {}, lambda = {})",
                pref.kind(),
                mean_d[k],
                lambdas[k]
            ));
        }
        loss += term;
    }
    if !base.grads.is_finite() {
        return Err(invalid_state!("non-finite gradient in the multi-preference loss"));
    }
    Ok(MpacLoss { loss, base_loss: base.loss, terms: base.terms, grads: base.grads, mean_d })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Env, EnvId};
    use crate::rollout::{a2c_loss, collect, compute_returns};
    use crate::{rng_from_seed, Rng};

    fn lam(step: f64) -> LagrangeState {
        LagrangeState::new(vec![PreferenceKind::Entropy], step).unwrap()
    }

    #[test]
    fn step_arithmetic() {
        let mut l = lam(1e-4);
        lambda_step(&mut l, &[0.5], &[0.1]).unwrap();
        assert!((l.multipliers()[0] - 4e-5).abs() < 1e-18);

        let mut l = lam(1e-4);
        l.set(PreferenceKind::Entropy, 1e-5).unwrap();
        lambda_step(&mut l, &[0.0], &[2.0]).unwrap();
        assert_eq!(l.multipliers()[0], 0.0);
    }

    #[test]
    fn linear_accumulation() {
        let mut l = lam(1e-3);
        let c = 0.25;
        for _ in 0..40 {
            l.step(&[c + 0.1], &[0.1]).unwrap();
        }
        assert!((l.multipliers()[0] - 40.0 * 1e-3 * c).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let mut l = lam(1e-4);
        assert!(matches!(l.step(&[f64::NAN], &[0.1]), Err(Error::NonFinite(_))));
        assert!(l.step(&[0.1, 0.2], &[0.1]).is_err());
        assert!(LagrangeState::new(vec![PreferenceKind::Gail, PreferenceKind::Gail], 1e-4).is_err());
        assert!(LagrangeState::new(vec![], 0.0).is_err());
        assert!(l.set(PreferenceKind::Entropy, -1.0).is_err());
    }

    fn chain_batch(ac: &ActorCritic) -> RolloutBatch {
        let mut envs: Vec<Env> = (0..2).map(|i| Env::new(EnvId::Chain(8), i)).collect();
        let mut rngs: Vec<Rng> = (0..2).map(|i| rng_from_seed(100 + i)).collect();
        let mut b = collect(ac, &mut envs, 5, &mut rngs).unwrap();
        compute_returns(&mut b, |o| ac.value(o), 0.9).unwrap();
        b
    }

    #[test]
    fn reduces_to_a2c_exactly() {
        let ac = ActorCritic::new(8, &[6], 2, 3, false).unwrap();
        let b = chain_batch(&ac);
        let base = a2c_loss(&b, &ac, 0.1, 0.5).unwrap();
        let none = LagrangeState::new(vec![], 1e-4).unwrap();
        let m = mpac_loss(&b, &ac, &[], None, &none, 0.1, 0.5).unwrap();
        assert_eq!(m.loss.to_bits(), base.loss.to_bits());
        assert_eq!(m.grads, base.grads);

        // zero multipliers with active preferences also reduce exactly
        let prefs = vec![PreferenceSpec::entropy(2.0).unwrap()];
        let zero = LagrangeState::for_preferences(&prefs, 1e-4).unwrap();
        let m = mpac_loss(&b, &ac, &prefs, None, &zero, 0.1, 0.5).unwrap();
        assert_eq!(m.loss.to_bits(), base.loss.to_bits());
        assert_eq!(m.grads, base.grads);
    }

    #[test]
    fn entropy_contribution_arithmetic() {
        // lambda = 2, threshold 2.0: contribution is 2 (mean d - 2)
        let ac = ActorCritic::new(8, &[6], 2, 3, false).unwrap();
        let b = chain_batch(&ac);
        let prefs = vec![PreferenceSpec::entropy(2.0).unwrap()];
        let mut l = LagrangeState::for_preferences(&prefs, 1e-4).unwrap();
        l.set(PreferenceKind::Entropy, 2.0).unwrap();
        let m = mpac_loss(&b, &ac, &prefs, None, &l, 0.1, 0.5).unwrap();
        assert!((m.loss - m.base_loss - 2.0 * (m.mean_d[0] - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn misaligned_multipliers_rejected() {
        let ac = ActorCritic::new(8, &[6], 2, 3, false).unwrap();
        let b = chain_batch(&ac);
        let prefs = vec![PreferenceSpec::entropy(2.0).unwrap()];
        let l = LagrangeState::new(vec![PreferenceKind::Conserve], 1e-4).unwrap();
        assert!(mpac_loss(&b, &ac, &prefs, None, &l, 0.1, 0.5).is_err());
        let gail = crate::preferences::GailSubsystem::new(8, 2, &[4], 1e-3, 0).unwrap();
        let prefs = vec![PreferenceSpec::gail(0.1, gail).unwrap()];
        let l = LagrangeState::for_preferences(&prefs, 1e-4).unwrap();
        assert!(mpac_loss(&b, &ac, &prefs, None, &l, 0.1, 0.5).is_err());
    }
}
