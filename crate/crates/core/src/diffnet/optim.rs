use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{GradSet, ParamSet};
use crate::error::invalid_arg;
use crate::{math, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first_moment: Option<GradSet>,
    second_moment: Option<GradSet>,
    step: u64,
}

impl OptimizerState {
    pub fn sgd(step_size: f64) -> Self {
        OptimizerState {
            kind: OptimizerKind::Sgd,
            step_size,
            beta1: 0.0,
            beta2: 0.0,
            epsilon: 0.0,
            first_moment: None,
            second_moment: None,
            step: 0,
        }
    }

    /// Adam with the usual `(0.9, 0.999, 1e-8)` constants.
    pub fn adam(step_size: f64, params: &ParamSet) -> Self {
        OptimizerState {
            kind: OptimizerKind::Adam,
            step_size,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first_moment: Some(GradSet::zeros_like(params)),
            second_moment: Some(GradSet::zeros_like(params)),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn is_finite(&self) -> bool {
        self.first_moment.as_ref().is_none_or(GradSet::is_finite)
            && self.second_moment.as_ref().is_none_or(GradSet::is_finite)
    }
}

/// One optimizer update. Nothing is modified when the gradient or the result
/// would contain a non-finite entry.
pub fn apply_step(params: &mut ParamSet, grads: &GradSet, opt: &mut OptimizerState) -> Result<()> {
    if !grads.congruent(params) {
        return Err(invalid_arg!("gradients are not shape-congruent with the parameters"));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient contains NaN or infinity; step rejected".into()));
    }
    if opt.step_size.is_nan() || opt.step_size <= 0.0 {
        return Err(invalid_arg!("step size must be positive, got {}", opt.step_size));
    }
    let flat_p = params.flatten();
    let flat_g = grads.flatten();
    let mut new_p: Vec<f64> = Vec::with_capacity(flat_p.len());
    let step = opt.step + 1;
    let mut moments = None;
    match opt.kind {
        OptimizerKind::Sgd => {
            new_p.extend(flat_p.iter().zip(&flat_g).map(|(p, g)| p - opt.step_size * g));
        }
        OptimizerKind::Adam => {
            let (m, v) = match (&opt.first_moment, &opt.second_moment) {
                (Some(m), Some(v)) if m.congruent(params) && v.congruent(params) => (m.flatten(), v.flatten()),
                _ => return Err(invalid_arg!("adam moments are not shape-congruent with the parameters")),
            };
            let (b1, b2) = (opt.beta1, opt.beta2);
            let c1 = 1.0 - libm::pow(b1, step as f64);
            let c2 = 1.0 - libm::pow(b2, step as f64);
            let mut m_new = Vec::with_capacity(m.len());
            let mut v_new = Vec::with_capacity(v.len());
            for i in 0..flat_p.len() {
                let g = flat_g[i];
                let mi = b1 * m[i] + (1.0 - b1) * g;
                let vi = b2 * v[i] + (1.0 - b2) * g * g;
                let m_hat = mi / c1;
                let v_hat = vi / c2;
                new_p.push(flat_p[i] - opt.step_size * m_hat / (math::sqrt(v_hat) + opt.epsilon));
                m_new.push(mi);
                v_new.push(vi);
            }
            moments = Some((m_new, v_new));
        }
    }
    if new_p.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("update would produce non-finite parameters; step rejected".into()));
    }
    if let Some((m_new, v_new)) = moments {
        assign_grad(opt.first_moment.as_mut().expect("adam state"), &m_new);
        assign_grad(opt.second_moment.as_mut().expect("adam state"), &v_new);
    }
    let mut rest = new_p.as_slice();
    for l in params.layers_raw_mut() {
        let (w, tail) = rest.split_at(l.weight.len());
        l.weight.copy_from_slice(w);
        let (b, tail) = tail.split_at(l.bias.len());
        l.bias.copy_from_slice(b);
        rest = tail;
    }
    params.bump_generation();
    opt.step = step;
    Ok(())
}

fn assign_grad(g: &mut GradSet, flat: &[f64]) {
    let mut rest = flat;
    for l in g.layers.iter_mut() {
        let (w, tail) = rest.split_at(l.weight.len());
        l.weight.copy_from_slice(w);
        let (b, tail) = tail.split_at(l.bias.len());
        l.bias.copy_from_slice(b);
        rest = tail;
    }
}
