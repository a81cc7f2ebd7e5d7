//! Feedforward classifier: inference, input gradients, SGD training, and the
//! model file format.

use std::path::Path;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::io::{Reader, Writer};
use crate::rng::Rng;
use crate::tensor::Tensor;

const MODEL_MAGIC: &str = "UAPM";
const MODEL_VERSION: u8 = 1;

/// Lower bound on stored normalization std, keeping division well defined
/// for constant features.
const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// `weights` is [out × in], `bias` is [out].
    Affine {
        weights: Tensor,
        bias: Tensor,
    },
    Relu,
}

/// Affine/ReLU stack ending in raw class scores, with per-feature input
/// normalization stored inside the model so gradients are taken in raw
/// input space.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: Vec<Layer>,
    norm_mean: Tensor,
    norm_std: Tensor,
}

impl Model {
    /// Validates dimension chaining, the final-affine rule, and positive std.
    pub fn new(layers: Vec<Layer>, norm_mean: Tensor, norm_std: Tensor) -> Result<Self> {
        if norm_mean.shape().len() != 1 || norm_std.shape().len() != 1 {
            return Err(Error::InvalidParameter(
                "normalization mean and std must be 1-dimensional".into(),
            ));
        }
        if norm_mean.shape() != norm_std.shape() {
            return Err(Error::ShapeMismatch {
                left: norm_mean.shape().to_vec(),
                right: norm_std.shape().to_vec(),
            });
        }
        if norm_std.data().iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidParameter(
                "normalization std must be strictly positive".into(),
            ));
        }
        let input_dim = norm_mean.len();
        if input_dim == 0 {
            return Err(Error::EmptyTensor);
        }
        let mut current = input_dim;
        for layer in &layers {
            match layer {
                Layer::Affine { weights, bias } => {
                    let ws = weights.shape();
                    if ws.len() != 2 {
                        return Err(Error::InvalidParameter(format!(
                            "affine weights must be 2-dimensional, got shape {ws:?}"
                        )));
                    }
                    let (out, inp) = (ws[0], ws[1]);
                    if inp != current {
                        return Err(Error::DimensionMismatch {
                            expected: current,
                            got: inp,
                        });
                    }
                    if bias.shape() != [out] {
                        return Err(Error::ShapeMismatch {
                            left: vec![out],
                            right: bias.shape().to_vec(),
                        });
                    }
                    if out == 0 {
                        return Err(Error::EmptyTensor);
                    }
                    current = out;
                }
                Layer::Relu => {}
            }
        }
        match layers.last() {
            Some(Layer::Affine { .. }) => {}
            _ => {
                return Err(Error::InvalidParameter(
                    "model must end with an affine layer producing class scores".into(),
                ))
            }
        }
        if current < 2 {
            return Err(Error::InvalidParameter(format!(
                "model must produce at least 2 class scores, got {current}"
            )));
        }
        Ok(Self {
            layers,
            norm_mean,
            norm_std,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.norm_mean.len()
    }

    pub fn num_classes(&self) -> usize {
        match self.layers.last() {
            Some(Layer::Affine { bias, .. }) => bias.len(),
            _ => unreachable!("validated at construction"),
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn normalization(&self) -> (&Tensor, &Tensor) {
        (&self.norm_mean, &self.norm_std)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Class scores accumulated and returned in f64, for callers that cannot
    /// afford the f32 rounding of `forward` (score differences near a
    /// decision boundary, small-step numeric checks).
    pub fn scores_f64(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.scores_f64_slice(x.data()))
    }

    /// `(x - mean) / std`, then the layer stack, all in f64.
    fn scores_f64_slice(&self, x: &[f32]) -> Vec<f64> {
        let mut z: Vec<f64> = x
            .iter()
            .zip(self.norm_mean.data())
            .zip(self.norm_std.data())
            .map(|((&xi, &m), &s)| (xi as f64 - m as f64) / s as f64)
            .collect();
        for layer in &self.layers {
            match layer {
                Layer::Affine { weights, bias } => {
                    let (out, inp) = (weights.shape()[0], weights.shape()[1]);
                    let w = weights.data();
                    let mut next = Vec::with_capacity(out);
                    for o in 0..out {
                        let row = &w[o * inp..(o + 1) * inp];
                        let mut acc = bias.data()[o] as f64;
                        for (wi, zi) in row.iter().zip(&z) {
                            acc += *wi as f64 * zi;
                        }
                        next.push(acc);
                    }
                    z = next;
                }
                Layer::Relu => {
                    for v in &mut z {
                        *v = v.max(0.0);
                    }
                }
            }
        }
        z
    }

    /// Raw class scores for `x`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let scores: Vec<f32> = self
            .scores_f64_slice(x.data())
            .iter()
            .map(|&v| v as f32)
            .collect();
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "forward" });
        }
        Ok(Tensor::from_vec(scores))
    }

    /// Argmax label; ties break to the lowest index.
    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        self.check_input(x)?;
        Ok(argmax(&self.scores_f64_slice(x.data())))
    }

    /// Argmax over a borrowed row, for batch evaluation without copies.
    pub(crate) fn predict_slice(&self, x: &[f32]) -> usize {
        argmax(&self.scores_f64_slice(x))
    }

    /// Gradient of score `class_index` with respect to the raw input, by
    /// backpropagation through every layer and the normalization.
    /// The ReLU subgradient at exactly 0 is 0.
    pub fn input_gradient(&self, x: &Tensor, class_index: usize) -> Result<Tensor> {
        self.check_input(x)?;
        if class_index >= self.num_classes() {
            return Err(Error::LabelOutOfRange {
                label: class_index,
                num_classes: self.num_classes(),
            });
        }

        // Forward pass, keeping each layer's input.
        let mut z: Vec<f64> = x
            .data()
            .iter()
            .zip(self.norm_mean.data())
            .zip(self.norm_std.data())
            .map(|((&xi, &m), &s)| (xi as f64 - m as f64) / s as f64)
            .collect();
        let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            inputs.push(z.clone());
            match layer {
                Layer::Affine { weights, bias } => {
                    let (out, inp) = (weights.shape()[0], weights.shape()[1]);
                    let w = weights.data();
                    let mut next = Vec::with_capacity(out);
                    for o in 0..out {
                        let row = &w[o * inp..(o + 1) * inp];
                        let mut acc = bias.data()[o] as f64;
                        for (wi, zi) in row.iter().zip(&z) {
                            acc += *wi as f64 * zi;
                        }
                        next.push(acc);
                    }
                    z = next;
                }
                Layer::Relu => {
                    for v in &mut z {
                        *v = v.max(0.0);
                    }
                }
            }
        }

        // Backward pass from a one-hot at the chosen class.
        let mut grad = vec![0.0f64; z.len()];
        grad[class_index] = 1.0;
        for (layer, input) in self.layers.iter().zip(&inputs).rev() {
            match layer {
                Layer::Affine { weights, .. } => {
                    let (out, inp) = (weights.shape()[0], weights.shape()[1]);
                    let w = weights.data();
                    let mut prev = vec![0.0f64; inp];
                    for o in 0..out {
                        let row = &w[o * inp..(o + 1) * inp];
                        let g = grad[o];
                        if g != 0.0 {
                            for (pi, wi) in prev.iter_mut().zip(row) {
                                *pi += g * *wi as f64;
                            }
                        }
                    }
                    grad = prev;
                }
                Layer::Relu => {
                    for (g, &zi) in grad.iter_mut().zip(input) {
                        if zi <= 0.0 {
                            *g = 0.0;
                        }
                    }
                }
            }
        }

        let out: Vec<f32> = grad
            .iter()
            .zip(self.norm_std.data())
            .map(|(&g, &s)| (g / s as f64) as f32)
            .collect();
        Ok(Tensor::from_vec(out))
    }
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate().skip(1) {
        if v > scores[best] {
            best = i;
        }
    }
    best
}

/// Fraction of the dataset the model labels identically to the stored labels.
pub fn accuracy(model: &Model, dataset: &Dataset) -> Result<f64> {
    if dataset.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            got: dataset.dim(),
        });
    }
    let hits = (0..dataset.num_images())
        .filter(|&i| model.predict_slice(dataset.row(i)) == dataset.label(i))
        .count();
    Ok(hits as f64 / dataset.num_images() as f64)
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// 0 is allowed and returns the freshly initialized model.
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub weight_init_scale: f64,
    /// Hidden layer widths; empty means a single affine map.
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 0.1,
            seed: 0,
            weight_init_scale: 1.0,
            hidden: vec![64],
        }
    }
}

/// f64 working copy of one affine layer during training.
struct AffineF64 {
    w: Vec<f64>,
    b: Vec<f64>,
    out: usize,
    inp: usize,
}

/// Trains an MLP (affine + ReLU per hidden width, then a bare affine) by
/// mini-batch SGD on softmax cross-entropy. Deterministic given the config.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<Model> {
    if cfg.batch_size == 0 {
        return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
    }
    if !(cfg.learning_rate > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "learning_rate must be positive, got {}",
            cfg.learning_rate
        )));
    }
    if !(cfg.weight_init_scale > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "weight_init_scale must be positive, got {}",
            cfg.weight_init_scale
        )));
    }
    if cfg.hidden.contains(&0) {
        return Err(Error::InvalidParameter(
            "hidden layer widths must be >= 1".into(),
        ));
    }

    let n = dataset.num_images();
    let d = dataset.dim();
    let num_classes = dataset.num_classes();

    // Per-feature population mean/std from the training data.
    let mut mean = vec![0.0f64; d];
    for i in 0..n {
        for (m, &x) in mean.iter_mut().zip(dataset.row(i)) {
            *m += x as f64;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0f64; d];
    for i in 0..n {
        for ((v, &m), &x) in var.iter_mut().zip(&mean).zip(dataset.row(i)) {
            let diff = x as f64 - m;
            *v += diff * diff;
        }
    }
    let std: Vec<f64> = var
        .iter()
        .map(|&v| (v / n as f64).sqrt().max(STD_FLOOR))
        .collect();

    let mut rng = Rng::new(cfg.seed);
    let mut dims = vec![d];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(num_classes);
    let mut net: Vec<AffineF64> = Vec::with_capacity(dims.len() - 1);
    for pair in dims.windows(2) {
        let (inp, out) = (pair[0], pair[1]);
        let s = (cfg.weight_init_scale / (inp as f64).sqrt()) as f32;
        let w: Vec<f64> = (0..out * inp).map(|_| rng.uniform(-s, s) as f64).collect();
        net.push(AffineF64 {
            w,
            b: vec![0.0; out],
            out,
            inp,
        });
    }

    let normalized: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            dataset
                .row(i)
                .iter()
                .zip(&mean)
                .zip(&std)
                .map(|((&x, &m), &s)| (x as f64 - m) / s)
                .collect()
        })
        .collect();

    let num_layers = net.len();
    let mut indices: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut indices);
        for batch in indices.chunks(cfg.batch_size) {
            let mut grad_w: Vec<Vec<f64>> = net.iter().map(|l| vec![0.0; l.w.len()]).collect();
            let mut grad_b: Vec<Vec<f64>> = net.iter().map(|l| vec![0.0; l.out]).collect();
            let mut batch_loss = 0.0f64;

            for &i in batch {
                // Forward, keeping each affine layer's input.
                let mut z = normalized[i].clone();
                let mut layer_inputs: Vec<Vec<f64>> = Vec::with_capacity(num_layers);
                for (li, layer) in net.iter().enumerate() {
                    layer_inputs.push(z.clone());
                    let mut next = Vec::with_capacity(layer.out);
                    for o in 0..layer.out {
                        let row = &layer.w[o * layer.inp..(o + 1) * layer.inp];
                        let mut acc = layer.b[o];
                        for (wi, zi) in row.iter().zip(&z) {
                            acc += wi * zi;
                        }
                        next.push(acc);
                    }
                    if li + 1 < num_layers {
                        for v in &mut next {
                            *v = v.max(0.0);
                        }
                    }
                    z = next;
                }

                // Softmax cross-entropy gradient: p - onehot(label).
                let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                let label = dataset.label(i);
                batch_loss -= (exps[label] / sum).max(f64::MIN_POSITIVE).ln();
                let mut delta: Vec<f64> = exps.iter().map(|&e| e / sum).collect();
                delta[label] -= 1.0;

                for li in (0..num_layers).rev() {
                    let layer = &net[li];
                    let input = &layer_inputs[li];
                    for o in 0..layer.out {
                        let g = delta[o];
                        if g != 0.0 {
                            grad_b[li][o] += g;
                            let row = &mut grad_w[li][o * layer.inp..(o + 1) * layer.inp];
                            for (gw, &zi) in row.iter_mut().zip(input) {
                                *gw += g * zi;
                            }
                        }
                    }
                    if li > 0 {
                        let mut prev = vec![0.0f64; layer.inp];
                        for o in 0..layer.out {
                            let g = delta[o];
                            if g != 0.0 {
                                let row = &layer.w[o * layer.inp..(o + 1) * layer.inp];
                                for (pi, wi) in prev.iter_mut().zip(row) {
                                    *pi += g * wi;
                                }
                            }
                        }
                        // ReLU mask: the stored input is pre-activation of
                        // the next layer only after max(0, .), so reuse the
                        // post-activation values (they are layer_inputs[li]).
                        for (p, &zi) in prev.iter_mut().zip(input) {
                            if zi <= 0.0 {
                                *p = 0.0;
                            }
                        }
                        delta = prev;
                    }
                }
            }

            if !batch_loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            let scale = cfg.learning_rate / batch.len() as f64;
            for li in 0..num_layers {
                for (w, g) in net[li].w.iter_mut().zip(&grad_w[li]) {
                    *w -= scale * g;
                }
                for (b, g) in net[li].b.iter_mut().zip(&grad_b[li]) {
                    *b -= scale * g;
                }
            }
        }
    }

    if net
        .iter()
        .any(|l| l.w.iter().chain(&l.b).any(|v| !v.is_finite()))
    {
        return Err(Error::Diverged {
            epoch: cfg.epochs.saturating_sub(1),
        });
    }

    let mut layers = Vec::with_capacity(2 * num_layers - 1);
    for (li, layer) in net.iter().enumerate() {
        let weights = Tensor::new(
            vec![layer.out, layer.inp],
            layer.w.iter().map(|&v| v as f32).collect(),
        )?;
        let bias = Tensor::from_vec(layer.b.iter().map(|&v| v as f32).collect());
        layers.push(Layer::Affine { weights, bias });
        if li + 1 < num_layers {
            layers.push(Layer::Relu);
        }
    }
    Model::new(
        layers,
        Tensor::from_vec(mean.iter().map(|&v| v as f32).collect()),
        Tensor::from_vec(std.iter().map(|&v| v as f32).collect()),
    )
}

pub fn model_to_bytes(model: &Model) -> Vec<u8> {
    let mut w = Writer::new();
    w.magic(MODEL_MAGIC);
    w.u8(MODEL_VERSION);
    w.u16(model.layers().len() as u16);
    for layer in model.layers() {
        match layer {
            Layer::Affine { weights, bias } => {
                w.u8(0);
                w.tensor(weights);
                w.tensor(bias);
            }
            Layer::Relu => w.u8(1),
        }
    }
    let (mean, std) = model.normalization();
    w.tensor(mean);
    w.tensor(std);
    w.into_bytes()
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader::new(bytes);
    r.expect_magic(MODEL_MAGIC)?;
    let version = r.u8("version")?;
    if version != MODEL_VERSION {
        return Err(Error::Parse {
            offset: r.offset() - 1,
            what: format!("unsupported model version {version}"),
        });
    }
    let num_layers = r.u16("layer count")? as usize;
    let mut layers = Vec::with_capacity(num_layers);
    for i in 0..num_layers {
        let at = r.offset();
        match r.u8("layer kind")? {
            0 => {
                let weights = r.tensor(&format!("layer {i} weights"))?;
                let bias = r.tensor(&format!("layer {i} bias"))?;
                layers.push(Layer::Affine { weights, bias });
            }
            1 => layers.push(Layer::Relu),
            k => {
                return Err(Error::Parse {
                    offset: at,
                    what: format!("unknown layer kind {k}"),
                })
            }
        }
    }
    let mean = r.tensor("normalization mean")?;
    let std = r.tensor("normalization std")?;
    r.finish("model")?;
    Model::new(layers, mean, std)
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    model_from_bytes(&std::fs::read(path)?)
}
