mod common;

use std::f64::consts::PI;

use mpac_core::diffnet::ParamSet;
use mpac_core::envs::{transition, Env, EnvId, EnvState};
use mpac_core::lagrange::LagrangeState;
use mpac_core::policy::{ActorCritic, Categorical};
use mpac_core::preferences::{d_conserve, d_entropy, d_reference, polyak_update, PreferenceKind};
use mpac_core::rollout::discounted_returns;
use proptest::prelude::*;

fn logits(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    n.prop_flat_map(|k| prop::collection::vec(-30.0f64..30.0, k))
}

proptest! {
    #[test]
    fn kl_is_nonnegative_and_zero_on_self(p in logits(2..10), seed in any::<u64>()) {
        let n = p.len();
        let q: Vec<f64> = (0..n).map(|i| ((seed >> (i % 60)) & 0xff) as f64 / 16.0 - 8.0).collect();
        let dp = Categorical::from_logits(p).unwrap();
        let dq = Categorical::from_logits(q).unwrap();
        prop_assert!(dp.kl(&dq).unwrap() >= -1e-12);
        prop_assert!(dp.kl(&dp).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn entropy_equals_log_n_minus_kl_to_uniform(p in logits(2..10)) {
        let d = Categorical::from_logits(p).unwrap();
        let u = Categorical::uniform(d.len()).unwrap();
        let lhs = d.entropy();
        prop_assert!(lhs >= -1e-12 && lhs <= (d.len() as f64).ln() + 1e-12);
        prop_assert!((lhs - ((d.len() as f64).ln() - d.kl(&u).unwrap())).abs() <= 1e-9);
        let probs = d.probs();
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn log_prob_is_finite_for_huge_logits(p in prop::collection::vec(-1e6f64..1e6, 2..8)) {
        let d = Categorical::from_logits(p).unwrap();
        for a in 0..d.len() {
            let l = d.log_prob(a).unwrap();
            prop_assert!(l.is_finite() && l <= 0.0);
        }
    }

    #[test]
    fn multipliers_stay_nonnegative(steps in prop::collection::vec((0.0f64..5.0, 0.0f64..3.0), 1..60),
                                    alpha in 1e-5f64..1.0) {
        let mut lam = LagrangeState::new(vec![PreferenceKind::Entropy], alpha).unwrap();
        for (d, l) in steps {
            let before = lam.multipliers()[0];
            lam.step(&[d], &[l]).unwrap();
            let after = lam.multipliers()[0];
            prop_assert!(after >= 0.0 && after.is_finite());
            if d > l {
                prop_assert!(after > before);
            } else if d < l {
                prop_assert!(after < before || after == 0.0);
            }
        }
    }

    #[test]
    fn polyak_contracts_toward_live(seed in 0u64..1000, eta in 0.001f64..0.999) {
        let live = ParamSet::init_mlp(&[3, 5, 2], seed).unwrap();
        let mut old = ParamSet::init_mlp(&[3, 5, 2], seed + 1).unwrap();
        let before: Vec<f64> = old.flatten().iter().zip(live.flatten()).map(|(o, l)| (o - l).abs()).collect();
        polyak_update(&mut old, &live, eta).unwrap();
        for ((o, l), b) in old.flatten().iter().zip(live.flatten()).zip(before) {
            prop_assert!(((o - l).abs() - (1.0 - eta) * b).abs() <= 1e-12);
        }
    }

    #[test]
    fn pendulum_step_invariants(angle in -PI..=PI, velocity in -8.0f64..=8.0, action in 0usize..9, steps in 0u32..200) {
        let s = EnvState::Pendulum { angle, velocity, steps };
        let (next, r) = transition(EnvId::PendulumDisc9, &s, action).unwrap();
        let again = transition(EnvId::PendulumDisc9, &s, action).unwrap();
        prop_assert_eq!(&again.0, &next);
        prop_assert_eq!(&again.1, &r);
        let EnvState::Pendulum { angle: a, velocity: v, steps: n } = next else { unreachable!() };
        prop_assert!(a > -PI && a <= PI);
        prop_assert!((-8.0..=8.0).contains(&v));
        prop_assert!(r.reward <= 0.0 && r.reward >= -(PI * PI + 0.1 * 64.0 + 0.001 * 4.0));
        prop_assert_eq!(r.done, n == 200);
    }

    #[test]
    fn chain_rewards_are_binary(pos in 0usize..8, action in 0usize..2) {
        let (_, r) = transition(EnvId::Chain(8), &EnvState::Chain { position: pos, steps: 0 }, action).unwrap();
        prop_assert!(r.reward == 0.0 || r.reward == 1.0);
    }

    #[test]
    fn recursive_returns_equal_brute_force(rewards in prop::collection::vec(-20.0f64..20.0, 1..30),
                                           bootstrap in -100.0f64..100.0, gamma in 0.01f64..0.999) {
        let n = rewards.len();
        let got = discounted_returns(&rewards, &vec![false; n], bootstrap, gamma);
        for (t, g) in got.iter().enumerate() {
            let mut expect = 0.0;
            for (k, r) in rewards.iter().enumerate().skip(t) {
                expect += gamma.powi((k - t) as i32) * r;
            }
            expect += gamma.powi((n - t) as i32) * bootstrap;
            prop_assert!((g - expect).abs() <= 1e-10 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn kl_metrics_are_bounded(seed in 0u64..500) {
        let ac = ActorCritic::new(3, &[8], 9, seed, false).unwrap();
        let other = ActorCritic::new(3, &[8], 9, seed + 1, false).unwrap();
        let obs: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 * 0.3 - 0.6, 0.2, -1.0 + 0.5 * i as f64]).collect();
        for d in d_entropy(&ac, &obs).unwrap() {
            prop_assert!(d >= -1e-12 && d <= 9f64.ln() + 1e-9);
        }
        for d in d_conserve(&ac, &other.snapshot_policy(), &obs).unwrap() {
            prop_assert!(d >= -1e-12);
        }
        for d in d_reference(&ac, other.policy_net(), &obs).unwrap() {
            prop_assert!(d >= -1e-12);
        }
    }
}

#[test]
fn entropy_metric_plus_entropy_is_log_n() {
    let ac = ActorCritic::new(3, &[16], 9, 3, false).unwrap();
    let obs: Vec<Vec<f64>> = (0..20).map(|i| vec![(i as f64).cos(), (i as f64).sin(), 0.1 * i as f64]).collect();
    let d = d_entropy(&ac, &obs).unwrap();
    for (o, d) in obs.iter().zip(d) {
        let h = ac.action_dist(o).unwrap().entropy();
        assert!((d + h - 9f64.ln()).abs() < 1e-9);
    }
}

#[test]
fn pendulum_reset_angles_are_uniform() {
    // Kolmogorov-Smirnov distance against Uniform(-pi, pi]
    let mut env = Env::new(EnvId::PendulumDisc9, 0);
    let mut angles: Vec<f64> = (0..10_000u64)
        .map(|seed| {
            env.reset(seed);
            match *env.state() {
                EnvState::Pendulum { angle, velocity, .. } => {
                    assert!(angle > -PI && angle <= PI && velocity.abs() <= 1.0);
                    angle
                }
                _ => unreachable!(),
            }
        })
        .collect();
    angles.sort_by(f64::total_cmp);
    let n = angles.len() as f64;
    let ks = angles
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let cdf = (a + PI) / (2.0 * PI);
            (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 0.02, "KS statistic {ks}");
}
