//! Feed-forward classifier with explicit forward and reverse passes.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::log_sum_exp;
use crate::rng::{self, standard_normal_vec};
use crate::schedule::Schedule;
use crate::synthdata::LabeledDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Softplus,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Softplus => {
                if z > 30.0 {
                    z
                } else {
                    z.exp().ln_1p()
                }
            }
        }
    }

    /// Derivative expressed through pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Softplus => 1.0 / (1.0 + (-z).exp()),
        }
    }
}

/// Scalar whose input gradient drives guidance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    LogSoftmax,
    RawLogit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    #[inline]
    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.biases)
                .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()),
        );
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpFile", into = "MlpFile")]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    layers: Vec<Layer>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MlpFile {
    layer_sizes: Vec<usize>,
    activation: Activation,
    layers: Vec<Layer>,
}

impl TryFrom<MlpFile> for Mlp {
    type Error = Error;
    fn try_from(f: MlpFile) -> Result<Self> {
        Mlp::from_layers(f.layer_sizes, f.activation, f.layers)
    }
}

impl From<Mlp> for MlpFile {
    fn from(m: Mlp) -> Self {
        MlpFile { layer_sizes: m.sizes, activation: m.activation, layers: m.layers }
    }
}

struct Trace {
    /// Layer inputs; `acts[0]` is `x`, the last entry the logits.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

/// Parameter gradients laid out like the layers.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl ParamGrads {
    fn zeros(m: &Mlp) -> Self {
        Self { layers: m.layers.iter().map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.biases.len()])).collect() }
    }
}

impl Mlp {
    pub fn from_layers(sizes: Vec<usize>, activation: Activation, layers: Vec<Layer>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidModel("need at least input and output sizes, all positive".into()));
        }
        if layers.len() != sizes.len() - 1 {
            return Err(Error::InvalidModel(format!("{} layers for {} sizes", layers.len(), sizes.len())));
        }
        for (i, l) in layers.iter().enumerate() {
            let (n_in, n_out) = (sizes[i], sizes[i + 1]);
            if l.inputs != n_in || l.outputs != n_out || l.weights.len() != n_in * n_out || l.biases.len() != n_out {
                return Err(Error::InvalidModel(format!("layer {i} shape does not match {n_in} -> {n_out}")));
            }
            if l.weights.iter().chain(&l.biases).any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(Self { sizes, activation, layers })
    }

    pub fn zeros(sizes: &[usize], activation: Activation) -> Result<Self> {
        let layers = sizes
            .windows(2)
            .map(|w| Layer { inputs: w[0], outputs: w[1], weights: vec![0.0; w[0] * w[1]], biases: vec![0.0; w[1]] })
            .collect();
        Self::from_layers(sizes.to_vec(), activation, layers)
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases.
    pub fn random(sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(sizes, activation)?;
        let mut rng = rng::stream(seed, "init", 0);
        for l in &mut m.layers {
            let bound = 1.0 / (l.inputs as f64).sqrt();
            for p in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(m)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.sizes.last().expect("validated")
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    /// Logits; hidden layers use the activation, the output layer is affine.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            l.affine(&cur, &mut next);
            if i < last {
                next.iter_mut().for_each(|z| *z = self.activation.apply(*z));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            l.affine(&acts[i], &mut z);
            let a = if i < last { z.iter().map(|v| self.activation.apply(*v)).collect() } else { z.clone() };
            pre.push(z);
            acts.push(a);
        }
        Trace { acts, pre }
    }

    /// Reverse pass from a logit cotangent; optionally accumulates parameter
    /// gradients scaled by `weight`. Returns the input cotangent.
    fn backward(&self, tr: &Trace, dlogits: &[f64], mut params: Option<(&mut ParamGrads, f64)>) -> Vec<f64> {
        let mut delta = dlogits.to_vec();
        let last = self.layers.len() - 1;
        for i in (0..=last).rev() {
            let l = &self.layers[i];
            if i < last {
                for ((dz, z), a) in delta.iter_mut().zip(&tr.pre[i]).zip(&tr.acts[i + 1]) {
                    *dz *= self.activation.derivative(*z, *a);
                }
            }
            let input = &tr.acts[i];
            if let Some((g, w)) = params.as_mut() {
                let (gw, gb) = &mut g.layers[i];
                for (o, dz) in delta.iter().enumerate() {
                    let s = dz * *w;
                    gb[o] += s;
                    for (gwi, xi) in gw[o * l.inputs..(o + 1) * l.inputs].iter_mut().zip(input) {
                        *gwi += s * xi;
                    }
                }
            }
            let mut prev = vec![0.0; l.inputs];
            for (row, dz) in l.weights.chunks_exact(l.inputs).zip(&delta) {
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += w * dz;
                }
            }
            delta = prev;
        }
        delta
    }

    /// Gradient of `logits . cotangent` with respect to `x`.
    pub fn vjp_input(&self, x: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        check_dim(self.num_classes(), cotangent.len())?;
        Ok(self.backward(&self.trace(x), cotangent, None))
    }

    /// `d/dx log_softmax(f(x))[y]`.
    pub fn input_gradient(&self, x: &[f64], y: usize) -> Result<Vec<f64>> {
        Ok(self.objective_gradient(x, y, Objective::LogSoftmax)?.1)
    }

    /// Objective value and its input gradient.
    pub fn objective_gradient(&self, x: &[f64], y: usize, objective: Objective) -> Result<(f64, Vec<f64>)> {
        check_dim(self.input_dim(), x.len())?;
        self.check_class(y)?;
        let tr = self.trace(x);
        let logits = tr.acts.last().expect("nonempty");
        let (value, cot) = objective_cotangent(logits, y, objective);
        Ok((value, self.backward(&tr, &cot, None)))
    }

    fn check_class(&self, y: usize) -> Result<()> {
        if y >= self.num_classes() {
            Err(Error::ClassOutOfRange { class: y, classes: self.num_classes() })
        } else {
            Ok(())
        }
    }

    /// Cross-entropy loss at `(x, y)`; adds `weight * d loss / d params` into `grads`.
    pub fn accumulate_loss_gradient(&self, x: &[f64], y: usize, weight: f64, grads: &mut ParamGrads) -> f64 {
        let tr = self.trace(x);
        let logits = tr.acts.last().expect("nonempty");
        let lse = log_sum_exp(logits);
        let cot: Vec<f64> = logits
            .iter()
            .enumerate()
            .map(|(j, l)| (l - lse).exp() - if j == y { 1.0 } else { 0.0 })
            .collect();
        self.backward(&tr, &cot, Some((grads, weight)));
        lse - logits[y]
    }

    pub fn param_gradient(&self, x: &[f64], y: usize) -> Result<(f64, ParamGrads)> {
        check_dim(self.input_dim(), x.len())?;
        self.check_class(y)?;
        let mut g = ParamGrads::zeros(self);
        let loss = self.accumulate_loss_gradient(x, y, 1.0, &mut g);
        Ok((loss, g))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Value and logit cotangent of the chosen objective.
pub(crate) fn objective_cotangent(logits: &[f64], y: usize, objective: Objective) -> (f64, Vec<f64>) {
    match objective {
        Objective::LogSoftmax => {
            let lse = log_sum_exp(logits);
            let cot = logits
                .iter()
                .enumerate()
                .map(|(j, l)| if j == y { 1.0 } else { 0.0 } - (l - lse).exp())
                .collect();
            (logits[y] - lse, cot)
        }
        Objective::RawLogit => {
            let mut cot = vec![0.0; logits.len()];
            cot[y] = 1.0;
            (logits[y], cot)
        }
    }
}

/// `logits[y] - log sum_j exp(logits[j])` with max subtraction.
pub fn log_softmax_target(logits: &[f64], y: usize) -> f64 {
    logits[y] - log_sum_exp(logits)
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy)]
pub enum NoiseMode<'a> {
    Clean,
    /// Each point is replaced by `forward_sample(x, t, eps)` with `t ~ U{0..T}`.
    ForwardNoised(&'a Schedule),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 100, batch_size: 128, learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size > 0
            && self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid training configuration {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Mlp,
    /// Mean cross-entropy per epoch.
    pub losses: Vec<f64>,
}

/// Mini-batch Adam (with bias correction) on cross-entropy.
///
/// Shuffling and noise come from separate streams, so a zero-variance
/// schedule reproduces clean training bit for bit.
pub fn train(model: &Mlp, data: &LabeledDataset, mode: NoiseMode<'_>, cfg: &TrainConfig, seed: u64) -> Result<Trained> {
    cfg.validate()?;
    check_dim(model.input_dim(), data.dim())?;
    if data.num_classes() > model.num_classes() {
        return Err(Error::ClassOutOfRange { class: data.num_classes() - 1, classes: model.num_classes() });
    }
    let mut model = model.clone();
    let mut shuffle_rng = rng::stream(seed, "shuffle", 0);
    let mut noise_rng = rng::stream(seed, "noise", 0);
    let mut m = ParamGrads::zeros(&model);
    let mut v = ParamGrads::zeros(&model);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0i32;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = ParamGrads::zeros(&model);
            let w = 1.0 / idx.len() as f64;
            let mut loss = 0.0;
            for &i in idx {
                let x0 = data.point(i);
                let y = data.label(i);
                loss += match mode {
                    NoiseMode::Clean => model.accumulate_loss_gradient(x0, y, w, &mut grads),
                    NoiseMode::ForwardNoised(s) => {
                        let t = noise_rng.random_range(0..=s.steps());
                        let eps = standard_normal_vec(&mut noise_rng, x0.len());
                        let xt = s.forward_unchecked(x0, t, &eps);
                        model.accumulate_loss_gradient(&xt, y, w, &mut grads)
                    }
                };
            }
            if !loss.is_finite() {
                return Err(Error::TrainingDivergence { epoch, batch, loss });
            }
            epoch_loss += loss;
            step += 1;
            let c1 = 1.0 - cfg.beta1.powi(step);
            let c2 = 1.0 - cfg.beta2.powi(step);
            for (li, layer) in model.layers.iter_mut().enumerate() {
                let params = layer.weights.iter_mut().chain(layer.biases.iter_mut());
                let (gw, gb) = &grads.layers[li];
                let (mw, mb) = &mut m.layers[li];
                let (vw, vb) = &mut v.layers[li];
                let g = gw.iter().chain(gb.iter());
                let mm = mw.iter_mut().chain(mb.iter_mut());
                let vv = vw.iter_mut().chain(vb.iter_mut());
                for (((p, g), m1), v2) in params.zip(g).zip(mm).zip(vv) {
                    *m1 = cfg.beta1 * *m1 + (1.0 - cfg.beta1) * g;
                    *v2 = cfg.beta2 * *v2 + (1.0 - cfg.beta2) * g * g;
                    *p -= cfg.learning_rate * (*m1 / c1) / ((*v2 / c2).sqrt() + cfg.eps);
                }
            }
            if !model.is_finite() {
                return Err(Error::TrainingDivergence { epoch, batch, loss: f64::NAN });
            }
        }
        losses.push(epoch_loss / data.len() as f64);
    }
    Ok(Trained { model, losses })
}
