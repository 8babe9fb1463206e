//! Small end-to-end checks of the learning signals.

mod common;

use mpac_core::demos::{agreement, bc_loss, behavior_clone, BcConfig, DemoPair, DemonstrationSet};
use mpac_core::envs::{Env, EnvId};
use mpac_core::lagrange::{mpac_loss, LagrangeState};
use mpac_core::policy::{AcOptimizer, ActorCritic};
use mpac_core::preferences::{metric_gradient, GailSubsystem, PreferenceKind, PreferenceSpec};
use mpac_core::rollout::{a2c_loss, collect, compute_returns, RolloutBatch};
use mpac_core::{rng_from_seed, Rng};
use rand::Rng as _;

fn chain_batch(ac: &ActorCritic, seed: u64) -> RolloutBatch {
    let mut envs: Vec<Env> = (0..4).map(|i| Env::new(EnvId::Chain(8), seed + i)).collect();
    let mut rngs: Vec<Rng> = (0..4).map(|i| rng_from_seed(seed * 31 + i)).collect();
    let mut b = collect(ac, &mut envs, 6, &mut rngs).unwrap();
    compute_returns(&mut b, |o| ac.value(o), 0.9).unwrap();
    b
}

#[test]
fn positive_advantage_for_right_raises_its_probability() {
    let mut ac = ActorCritic::new(8, &[16], 2, 1, false).unwrap();
    let mut b = chain_batch(&ac, 3);
    b.advantages = b.transitions().iter().map(|t| if t.action == 1 { 1.0 } else { -1.0 }).collect();
    let before: Vec<f64> = b.transitions().iter().map(|t| ac.action_dist(&t.observation).unwrap().probs()[1]).collect();
    let out = a2c_loss(&b, &ac, 0.0, 0.5).unwrap();
    let mut opt = AcOptimizer::sgd(0.05, &ac);
    opt.apply(&mut ac, &out.grads).unwrap();
    for (t, p0) in b.transitions().iter().zip(before) {
        let p1 = ac.action_dist(&t.observation).unwrap().probs()[1];
        assert!(p1 > p0, "{p1} <= {p0}");
    }
}

#[test]
fn advantages_are_detached_from_the_value_net() {
    let ac = ActorCritic::new(8, &[16], 2, 5, false).unwrap();
    let b = chain_batch(&ac, 7);
    let live = a2c_loss(&b, &ac, 0.1, 0.0).unwrap();
    let mut frozen = ac.clone();
    let perturbed: Vec<f64> = frozen.value_net().flatten().iter().map(|v| v + 0.3).collect();
    frozen.value_net_mut().assign_flat(&perturbed).unwrap();
    // recomputed advantages differ, but with the same advantages the policy gradient is unchanged
    let mut b2 = b.clone();
    compute_returns(&mut b2, |o| frozen.value(o), 0.9).unwrap();
    assert_ne!(b.advantages, b2.advantages);
    let other = a2c_loss(&b, &frozen, 0.1, 0.0).unwrap();
    assert_eq!(live.grads.policy, other.grads.policy);
}

#[test]
fn mpac_gradient_decomposes_term_by_term() {
    let ac = ActorCritic::new(8, &[12], 2, 2, false).unwrap();
    let other = ActorCritic::new(8, &[12], 2, 9, false).unwrap();
    let b = chain_batch(&ac, 11);
    let prefs = vec![
        PreferenceSpec::entropy(0.5).unwrap(),
        PreferenceSpec::reference(0.1, other.policy_net().clone()).unwrap(),
    ];
    let mut lam = LagrangeState::for_preferences(&prefs, 1e-4).unwrap();
    lam.set(PreferenceKind::Entropy, 0.7).unwrap();
    lam.set(PreferenceKind::Reference, 2.5).unwrap();
    let total = mpac_loss(&b, &ac, &prefs, None, &lam, 0.1, 0.5).unwrap();
    let mut expect = a2c_loss(&b, &ac, 0.1, 0.5).unwrap().grads;
    for (k, pref) in prefs.iter().enumerate() {
        let (mean, g) = metric_gradient(&ac, pref, &b, None).unwrap();
        assert!((mean - total.mean_d[k]).abs() < 1e-12);
        expect.add_scaled(&g, lam.multipliers()[k]);
    }
    for (a, e) in total.grads.flatten().iter().zip(expect.flatten()) {
        assert!((a - e).abs() < 1e-12, "{a} vs {e}");
    }
}

fn synthetic_set(n: usize, seed: u64) -> DemonstrationSet {
    // pendulum-shaped observations, action = quantized linear rule
    let mut rng = rng_from_seed(seed);
    let pairs = (0..n)
        .map(|_| {
            let o: Vec<f64> =
                vec![rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0];
            let s = o[0] + 0.5 * o[1] - o[2];
            let action = if s > 0.3 {
                8
            } else if s < -0.3 {
                0
            } else {
                4
            };
            DemoPair { observation: o, action }
        })
        .collect();
    DemonstrationSet::new(EnvId::PendulumDisc9, "synthetic".into(), vec![pairs], None).unwrap()
}

#[test]
fn behavior_cloning_fits_a_deterministic_rule() {
    let set = synthetic_set(2000, 1);
    let cfg = BcConfig {
        layer_sizes: vec![3, 64, 64, 9],
        epochs: 60,
        batch_size: 64,
        dropout: 0.2,
        step_size: 3e-3,
        seed: 2,
    };
    let p = behavior_clone(&set, &cfg).unwrap();
    let pairs: Vec<DemoPair> = set.pairs().cloned().collect();
    let acc = agreement(&p, &pairs).unwrap();
    assert!(acc >= 0.99, "agreement {acc}");
}

#[test]
fn full_batch_cloning_loss_never_increases() {
    let set = synthetic_set(64, 5);
    let pairs: Vec<DemoPair> = set.pairs().cloned().collect();
    let mut last = f64::INFINITY;
    for epochs in 0..15 {
        let cfg =
            BcConfig { layer_sizes: vec![3, 16, 9], epochs, batch_size: 64, dropout: 0.0, step_size: 1e-3, seed: 3 };
        let loss = bc_loss(&behavior_clone(&set, &cfg).unwrap(), &pairs).unwrap();
        assert!(loss <= last + 1e-6, "epoch {epochs}: {loss} > {last}");
        last = loss;
    }
}

fn cloud(rng: &mut Rng, n: usize, center: f64) -> Vec<(Vec<f64>, usize)> {
    (0..n).map(|_| (vec![center + rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5], rng.gen_range(0..3))).collect()
}

#[test]
fn discriminator_separates_separable_data() {
    let mut rng = rng_from_seed(8);
    let expert = cloud(&mut rng, 200, 1.0);
    let agent = cloud(&mut rng, 200, -1.0);
    let mut g = GailSubsystem::new(2, 3, &[32], 1e-2, 4).unwrap();
    for _ in 0..200 {
        g.discriminator_step(&expert, &agent).unwrap();
    }
    assert!(g.accuracy(&expert, &agent).unwrap() > 0.95);
}

#[test]
fn discriminator_cannot_separate_identical_data() {
    let mut rng = rng_from_seed(9);
    let expert = cloud(&mut rng, 500, 0.0);
    let agent = cloud(&mut rng, 500, 0.0);
    let mut g = GailSubsystem::new(2, 3, &[32], 1e-2, 4).unwrap();
    for _ in 0..500 {
        g.discriminator_step(&expert, &agent).unwrap();
    }
    let fresh_e = cloud(&mut rng, 2000, 0.0);
    let fresh_a = cloud(&mut rng, 2000, 0.0);
    let acc = g.accuracy(&fresh_e, &fresh_a).unwrap();
    assert!((0.4..=0.6).contains(&acc), "accuracy {acc}");
}

#[test]
fn reference_preference_pulls_policy_toward_reference() {
    // with a large multiplier, minimizing the loss shrinks KL to the reference
    let mut ac = ActorCritic::new(8, &[16], 2, 4, false).unwrap();
    let reference = ActorCritic::new(8, &[16], 2, 40, false).unwrap().policy_net().clone();
    let b = chain_batch(&ac, 2);
    let prefs = vec![PreferenceSpec::reference(0.0, reference).unwrap()];
    let mut lam = LagrangeState::for_preferences(&prefs, 1e-4).unwrap();
    lam.set(PreferenceKind::Reference, 50.0).unwrap();
    let mut opt = AcOptimizer::adam(1e-2, &ac);
    let first = mpac_loss(&b, &ac, &prefs, None, &lam, 0.0, 0.5).unwrap().mean_d[0];
    for _ in 0..50 {
        let out = mpac_loss(&b, &ac, &prefs, None, &lam, 0.0, 0.5).unwrap();
        opt.apply(&mut ac, &out.grads).unwrap();
    }
    let last = mpac_loss(&b, &ac, &prefs, None, &lam, 0.0, 0.5).unwrap().mean_d[0];
    assert!(last < 0.2 * first, "{first} -> {last}");
}
