#![allow(dead_code)]

use mpac_core::math::log_softmax;

/// Central differences of `f` at `x` with step `h`.
pub fn central_diff<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest entrywise relative error, with the denominator floored at 1e-4 so
/// entries that are zero on both sides compare by absolute error.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-4)).fold(0.0, f64::max)
}

pub fn ref_log_softmax(z: &[f64]) -> Vec<f64> {
    // independent of the library path: plain max-shift in f64
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
    let out: Vec<f64> = z.iter().map(|v| v - m - s.ln()).collect();
    debug_assert!(out.iter().zip(log_softmax(z)).all(|(a, b)| (a - b).abs() < 1e-9));
    out
}

pub fn kl_floored(p_logits: &[f64], q_logits: &[f64], floor: f64) -> f64 {
    let lp = ref_log_softmax(p_logits);
    let lq: Vec<f64> = ref_log_softmax(q_logits).into_iter().map(|l| l.max(floor.ln())).collect();
    lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum()
}

pub fn entropy(logits: &[f64]) -> f64 {
    -ref_log_softmax(logits).iter().map(|l| l.exp() * l).sum::<f64>()
}
