use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, invalid_state};
use crate::{math, rng_from_seed, Result, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// One affine layer followed by an activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Layer { inputs, outputs, weight: vec![0.0; inputs * outputs], bias: vec![0.0; outputs], activation }
    }

    #[inline]
    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weight.chunks_exact(self.inputs).zip(&self.bias) {
            let mut acc = *b;
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            out.push(acc);
        }
    }
}

/// Parameters of one network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamSet {
    layers: Vec<Layer>,
    seed: u64,
    /// Bumped on every in-place update so stale tapes can be detected.
    #[serde(skip)]
    generation: u64,
}

impl PartialEq for ParamSet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.seed == other.seed
    }
}

/// Activation cache from one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    generation: u64,
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn output_dim(&self) -> usize {
        self.pre.last().map_or(0, Vec::len)
    }
}

impl ParamSet {
    /// Rectifier hidden layers, linear output. Weights are drawn uniformly with
    /// standard deviation `1/sqrt(fan_in)`; biases start at zero.
    pub fn init_mlp(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        Self::init_with_output(layer_sizes, seed, Activation::Identity)
    }

    /// Like [`ParamSet::init_mlp`] but with an explicit activation on the last
    /// layer (a shared trunk ends in a rectifier).
    pub fn init_with_output(layer_sizes: &[usize], seed: u64, output: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(invalid_arg!("need at least input and output sizes, got {} entries", layer_sizes.len()));
        }
        if let Some(i) = layer_sizes.iter().position(|&s| s == 0) {
            return Err(invalid_arg!("layer size {i} is zero"));
        }
        let mut rng = rng_from_seed(seed);
        let n = layer_sizes.len() - 1;
        let mut layers = Vec::with_capacity(n);
        for (i, pair) in layer_sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let activation = if i + 1 == n { output } else { Activation::Relu };
            let mut layer = Layer::zeros(fan_in, fan_out, activation);
            // uniform on [-a, a] has std a/sqrt(3)
            let half_width = math::sqrt(3.0) / math::sqrt(fan_in as f64);
            for w in layer.weight.iter_mut() {
                *w = half_width * (2.0 * rng.gen::<f64>() - 1.0);
            }
            layers.push(layer);
        }
        Ok(ParamSet { layers, seed, generation: 0 })
    }

    pub fn from_layers(layers: Vec<Layer>, seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid_arg!("network has no layers"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.inputs == 0 || l.outputs == 0 {
                return Err(invalid_arg!("layer {i} has a zero dimension"));
            }
            if l.weight.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(invalid_arg!("layer {i} arrays do not match {}x{}", l.outputs, l.inputs));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(invalid_arg!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].outputs,
                    i + 1,
                    pair[1].inputs
                ));
            }
        }
        Ok(ParamSet { layers, seed, generation: 0 })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access for hand-set weights; invalidates outstanding tapes.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.generation += 1;
        &mut self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(|l| l.outputs));
        sizes
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Same shapes, with every entry set to zero.
    pub fn zeros_like(&self) -> Self {
        let layers = self.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs, l.activation)).collect();
        ParamSet { layers, seed: self.seed, generation: 0 }
    }

    pub fn same_shape(&self, other: &ParamSet) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.inputs == b.inputs && a.outputs == b.outputs)
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            flat.extend_from_slice(&l.weight);
            flat.extend_from_slice(&l.bias);
        }
        flat
    }

    /// Inverse of [`ParamSet::flatten`].
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(invalid_arg!("expected {} values, got {}", self.num_params(), flat.len()));
        }
        let mut rest = flat;
        for l in self.layers.iter_mut() {
            let (w, tail) = rest.split_at(l.weight.len());
            l.weight.copy_from_slice(w);
            let (b, tail) = tail.split_at(l.bias.len());
            l.bias.copy_from_slice(b);
            rest = tail;
        }
        self.generation += 1;
        Ok(())
    }

    /// `(name, shape, row-major values)` for every array.
    pub fn entries(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layers.{i}.weight"), vec![l.outputs, l.inputs], l.weight.as_slice()));
            out.push((format!("layers.{i}.bias"), vec![l.outputs], l.bias.as_slice()));
        }
        out
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(invalid_arg!("input has {} entries, network expects {}", input.len(), self.input_dim()));
        }
        Ok(())
    }

    /// Output only; no tape is recorded.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        let mut z = Vec::new();
        for l in &self.layers {
            l.affine(&x, &mut z);
            x.clear();
            x.extend(z.iter().map(|&v| l.activation.apply(v)));
        }
        Ok(x)
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        self.forward_impl(input, None)
    }

    /// Training-mode forward pass with inverted dropout on every hidden layer.
    pub fn forward_dropout(&self, input: &[f64], rate: f64, rng: &mut Rng) -> Result<(Vec<f64>, Tape)> {
        if !(0.0..1.0).contains(&rate) {
            return Err(invalid_arg!("dropout rate {rate} outside [0, 1)"));
        }
        if rate == 0.0 {
            return self.forward_impl(input, None);
        }
        self.forward_impl(input, Some((rate, rng)))
    }

    fn forward_impl(&self, input: &[f64], mut dropout: Option<(f64, &mut Rng)>) -> Result<(Vec<f64>, Tape)> {
        self.check_input(input)?;
        let n = self.layers.len();
        let mut tape = Tape {
            generation: self.generation,
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            masks: Vec::with_capacity(n),
        };
        let mut x = input.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(l.outputs);
            l.affine(&x, &mut z);
            let mut a: Vec<f64> = z.iter().map(|&v| l.activation.apply(v)).collect();
            let mask = match dropout.as_mut() {
                Some((rate, rng)) if i + 1 < n => {
                    let keep = 1.0 / (1.0 - *rate);
                    let m: Vec<f64> =
                        (0..l.outputs).map(|_| if rng.gen::<f64>() < *rate { 0.0 } else { keep }).collect();
                    for (ai, mi) in a.iter_mut().zip(&m) {
                        *ai *= mi;
                    }
                    Some(m)
                }
                _ => None,
            };
            tape.inputs.push(core::mem::replace(&mut x, a));
            tape.pre.push(z);
            tape.masks.push(mask);
        }
        Ok((x, tape))
    }

    /// Parameter gradients given `d loss / d output`.
    pub fn backward(&self, tape: &Tape, output_grad: &[f64]) -> Result<GradSet> {
        let mut grads = GradSet::zeros_like(self);
        self.backward_into(tape, output_grad, &mut grads)?;
        Ok(grads)
    }

    /// Accumulates into `grads` and returns `d loss / d input`.
    pub fn backward_into(&self, tape: &Tape, output_grad: &[f64], grads: &mut GradSet) -> Result<Vec<f64>> {
        if tape.generation != self.generation {
            return Err(invalid_state!("tape was recorded before the parameters last changed"));
        }
        if tape.pre.len() != self.layers.len() || tape.pre.iter().zip(&self.layers).any(|(z, l)| z.len() != l.outputs) {
            return Err(invalid_state!("tape does not match this network's shapes"));
        }
        if !grads.congruent(self) {
            return Err(invalid_arg!("gradient set is not shape-congruent with the network"));
        }
        if output_grad.len() != self.output_dim() {
            return Err(invalid_arg!(
                "output gradient has {} entries, network outputs {}",
                output_grad.len(),
                self.output_dim()
            ));
        }
        let mut g = output_grad.to_vec();
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            if let Some(mask) = &tape.masks[i] {
                for (gi, mi) in g.iter_mut().zip(mask) {
                    *gi *= mi;
                }
            }
            for (gi, &z) in g.iter_mut().zip(&tape.pre[i]) {
                *gi *= l.activation.derivative(z);
            }
            let x = &tape.inputs[i];
            let lg = &mut grads.layers[i];
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                lg.bias[o] += go;
                let row = &mut lg.weight[o * l.inputs..(o + 1) * l.inputs];
                for (w, xi) in row.iter_mut().zip(x) {
                    *w += go * xi;
                }
            }
            let mut prev = vec![0.0; l.inputs];
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                let row = &l.weight[o * l.inputs..(o + 1) * l.inputs];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += go * w;
                }
            }
            g = prev;
        }
        Ok(g)
    }

    pub(crate) fn bump_generation(&mut self) {
        self.generation += 1;
    }

    pub(crate) fn layers_raw_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Accumulated partial derivatives, shape-congruent with one [`ParamSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradSet {
    pub layers: Vec<LayerGrad>,
}

impl GradSet {
    pub fn zeros_like(params: &ParamSet) -> Self {
        GradSet {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrad { weight: vec![0.0; l.weight.len()], bias: vec![0.0; l.bias.len()] })
                .collect(),
        }
    }

    pub fn congruent(&self, params: &ParamSet) -> bool {
        self.layers.len() == params.layers.len()
            && self
                .layers
                .iter()
                .zip(&params.layers)
                .all(|(g, l)| g.weight.len() == l.weight.len() && g.bias.len() == l.bias.len())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn zero(&mut self) {
        self.values_mut().for_each(|v| *v = 0.0);
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &GradSet, factor: f64) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += factor * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values().copied().collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f64, b: f64) -> ParamSet {
        let mut l = Layer::zeros(1, 1, Activation::Identity);
        l.weight[0] = w;
        l.bias[0] = b;
        ParamSet::from_layers(vec![l], 0).unwrap()
    }

    #[test]
    fn init_shapes_and_zero_bias() {
        let p = ParamSet::init_mlp(&[3, 2], 0).unwrap();
        assert_eq!(p.layers().len(), 1);
        assert_eq!(p.layers()[0].weight.len(), 6);
        assert_eq!((p.layers()[0].outputs, p.layers()[0].inputs), (2, 3));
        assert_eq!(p.layers()[0].bias, vec![0.0, 0.0]);
        assert_eq!(p, ParamSet::init_mlp(&[3, 2], 0).unwrap());
        assert_ne!(p, ParamSet::init_mlp(&[3, 2], 1).unwrap());
    }

    #[test]
    fn init_rejects_bad_sizes() {
        assert!(matches!(ParamSet::init_mlp(&[], 0), Err(crate::Error::InvalidArgument(_))));
        assert!(matches!(ParamSet::init_mlp(&[4], 0), Err(crate::Error::InvalidArgument(_))));
        assert!(matches!(ParamSet::init_mlp(&[4, 0, 2], 0), Err(crate::Error::InvalidArgument(_))));
    }

    #[test]
    fn init_weight_scale_matches_fan_in() {
        let p = ParamSet::init_mlp(&[4, 512, 512, 5], 11).unwrap();
        for l in p.layers() {
            let n = l.weight.len() as f64;
            let mean = l.weight.iter().sum::<f64>() / n;
            let var = l.weight.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / (n - 1.0);
            let target = 1.0 / math::sqrt(l.inputs as f64);
            let ratio = math::sqrt(var) / target;
            assert!((0.5..=2.0).contains(&ratio), "std ratio {ratio}");
        }
    }

    #[test]
    fn forward_simple_cases() {
        let p = single(2.0, 1.0);
        assert_eq!(p.predict(&[3.0]).unwrap(), vec![7.0]);
        let z = ParamSet::init_mlp(&[3, 4, 2], 5).unwrap().zeros_like();
        assert_eq!(z.predict(&[1.0, -2.0, 0.5]).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(p.predict(&[1.0, 2.0]), Err(crate::Error::InvalidArgument(_))));
    }

    #[test]
    fn forward_two_layer_by_hand() {
        // hidden = relu([[1, 2], [-1, 0.5]] x + [0.5, 0]), out = [3, -2] h + 1
        let mut l0 = Layer::zeros(2, 2, Activation::Relu);
        l0.weight = vec![1.0, 2.0, -1.0, 0.5];
        l0.bias = vec![0.5, 0.0];
        let mut l1 = Layer::zeros(2, 1, Activation::Identity);
        l1.weight = vec![3.0, -2.0];
        l1.bias = vec![1.0];
        let p = ParamSet::from_layers(vec![l0, l1], 0).unwrap();
        // x = [1, -1]: pre = [1 - 2 + 0.5, -1 - 0.5] = [-0.5, -1.5] -> h = [0, 0]
        assert_eq!(p.predict(&[1.0, -1.0]).unwrap(), vec![1.0]);
        // x = [2, -1]: pre = [0.5, -2.5] -> h = [0.5, 0] -> 2.5
        assert_eq!(p.predict(&[2.0, -1.0]).unwrap(), vec![2.5]);
    }

    #[test]
    fn backward_linear_and_zero_seed() {
        let p = single(1.5, 0.0);
        let (_, tape) = p.forward(&[3.0]).unwrap();
        let g = p.backward(&tape, &[1.0]).unwrap();
        assert_eq!(g.layers[0].weight, vec![3.0]);
        assert_eq!(g.layers[0].bias, vec![1.0]);

        let p = ParamSet::init_mlp(&[3, 8, 2], 2).unwrap();
        let (_, tape) = p.forward(&[0.1, 0.2, 0.3]).unwrap();
        let g = p.backward(&tape, &[0.0, 0.0]).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn stale_tape_is_rejected() {
        let mut p = ParamSet::init_mlp(&[2, 3, 1], 0).unwrap();
        let (_, tape) = p.forward(&[1.0, 1.0]).unwrap();
        p.layers_mut()[0].bias[0] = 0.1;
        assert!(matches!(p.backward(&tape, &[1.0]), Err(crate::Error::InvalidState(_))));
        let other = ParamSet::init_mlp(&[2, 4, 1], 0).unwrap();
        let (_, tape) = other.forward(&[1.0, 1.0]).unwrap();
        let fresh = ParamSet::init_mlp(&[2, 3, 1], 0).unwrap();
        assert!(matches!(fresh.backward(&tape, &[1.0]), Err(crate::Error::InvalidState(_))));
    }

    #[test]
    fn dropout_zero_rate_matches_eval_forward() {
        let p = ParamSet::init_mlp(&[3, 16, 4], 9).unwrap();
        let mut rng = rng_from_seed(1);
        let (a, _) = p.forward_dropout(&[0.3, -0.2, 1.0], 0.0, &mut rng).unwrap();
        assert_eq!(a, p.predict(&[0.3, -0.2, 1.0]).unwrap());
        assert!(p.forward_dropout(&[0.3, -0.2, 1.0], 1.0, &mut rng).is_err());
    }

    #[test]
    fn dropout_masks_hidden_units_with_inverted_scaling() {
        let p = ParamSet::init_mlp(&[2, 64, 1], 4).unwrap();
        let mut rng = rng_from_seed(3);
        let (_, tape) = p.forward_dropout(&[1.0, 0.5], 0.25, &mut rng).unwrap();
        let mask = tape.masks[0].as_ref().unwrap();
        assert!(mask.iter().all(|&m| m == 0.0 || (m - 1.0 / 0.75).abs() < 1e-15));
        assert!(mask.contains(&0.0));
        assert!(tape.masks[1].is_none());
    }

    #[test]
    fn flatten_roundtrip() {
        let p = ParamSet::init_mlp(&[3, 5, 2], 8).unwrap();
        let mut q = p.zeros_like();
        q.assign_flat(&p.flatten()).unwrap();
        assert_eq!(p, q);
        assert!(q.assign_flat(&[1.0]).is_err());
    }
}
