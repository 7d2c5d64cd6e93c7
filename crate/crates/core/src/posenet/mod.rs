//! Fully convolutional azimuth classifier over normal-image crops.
//!
//! Each category owns a slice of `n_posebin + 1` output logits: one per
//! azimuth bin and a final background bin. Lower layers are shared.

mod io;
mod layers;
mod tensor;
mod train;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::NormalImage;
use crate::rng::substream;
use crate::synthgen::bin_center;

pub use io::{load_weights, save_weights, write_training_log, WEIGHTS_MAGIC};
pub use layers::Layer;
pub use tensor::{FeatureMap, Tensor};
pub use train::{train, train_from, EpochLog, TrainConfig, TrainExample, TrainOutput};

use layers::{Cache, ConvParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<Layer>,
    pub n_posebin: usize,
    /// Category names; the index is the category id.
    pub categories: Vec<String>,
    pub in_channels: usize,
    /// Input crops are `input_side × input_side`.
    pub input_side: usize,
}

impl NetworkSpec {
    /// C(7,96,4)−RL−Pmax(3,2)−D(0.5)−N−C(5,128,2)−RL−Pmax(3,2)−N−C(3,(N+1)·K,1)−RL−global average,
    /// with pads 0/2/1.
    pub fn standard(n_posebin: usize, categories: Vec<String>, input_side: usize) -> Self {
        let out = (n_posebin + 1) * categories.len();
        Self {
            layers: vec![
                Layer::Conv { k: 7, filters: 96, stride: 4, pad: 0 },
                Layer::Relu,
                Layer::MaxPool { k: 3, stride: 2 },
                Layer::Dropout { rate: 0.5 },
                Layer::lrn_default(),
                Layer::Conv { k: 5, filters: 128, stride: 2, pad: 2 },
                Layer::Relu,
                Layer::MaxPool { k: 3, stride: 2 },
                Layer::lrn_default(),
                Layer::Conv { k: 3, filters: out, stride: 1, pad: 1 },
                Layer::Relu,
                Layer::AvgPoolGlobal,
            ],
            n_posebin,
            categories,
            in_channels: 3,
            input_side,
        }
    }

    pub fn n_class(&self) -> usize {
        self.categories.len()
    }

    /// Logit count, `(n_posebin + 1) · n_class`.
    pub fn output_len(&self) -> usize {
        (self.n_posebin + 1) * self.n_class()
    }

    pub fn category_id(&self, name: &str) -> Result<usize> {
        self.categories.iter().position(|c| c == name).ok_or_else(|| Error::UnknownCategory(name.to_string()))
    }

    /// Checks that the layers map the configured input to one logit per output.
    pub fn validate(&self) -> Result<()> {
        if self.n_posebin < 1 || self.categories.is_empty() || self.in_channels < 1 {
            return Err(Error::InvalidArgument("network needs bins, categories and input channels".into()));
        }
        let mut d = (self.in_channels, self.input_side, self.input_side);
        for l in &self.layers {
            d = l.out_dims(d)?;
        }
        if d != (self.output_len(), 1, 1) {
            return Err(Error::ShapeMismatch { expected: format!("({}, 1, 1) logits", self.output_len()), got: format!("{d:?}") });
        }
        Ok(())
    }

    /// Shapes of the learnable tensors in order, with their names.
    fn param_layout(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let mut out = Vec::new();
        let mut d = (self.in_channels, self.input_side, self.input_side);
        for (i, l) in self.layers.iter().enumerate() {
            if let Some((w, b)) = l.param_shapes(d.0) {
                out.push((format!("layer{i}.weight"), w));
                out.push((format!("layer{i}.bias"), b));
            }
            d = l.out_dims(d)?;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Learnable parameters, two tensors (kernel, bias) per conv layer in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub tensors: Vec<NamedTensor>,
}

impl Weights {
    /// Gaussian kernels with standard deviation `std`, zero biases.
    pub fn init(spec: &NetworkSpec, std: f64, seed: u64) -> Result<Self> {
        spec.validate()?;
        let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut rng = substream(seed, "posenet-init", &[]);
        let tensors = spec
            .param_layout()?
            .into_iter()
            .map(|(name, shape)| {
                let n = shape.iter().product();
                let data = if name.ends_with(".weight") { (0..n).map(|_| normal.sample(&mut rng)).collect() } else { vec![0.0; n] };
                NamedTensor { name, shape, data }
            })
            .collect();
        Ok(Self { tensors })
    }

    /// Same layout, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| NamedTensor { name: t.name.clone(), shape: t.shape.clone(), data: vec![0.0; t.data.len()] })
                .collect(),
        }
    }

    /// Checks names and shapes against the network.
    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        let layout = spec.param_layout()?;
        if layout.len() != self.tensors.len() {
            return Err(Error::ShapeMismatch { expected: format!("{} tensors", layout.len()), got: self.tensors.len().to_string() });
        }
        for ((name, shape), t) in layout.iter().zip(&self.tensors) {
            if *shape != t.shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::ShapeMismatch { expected: format!("{name} {shape:?}"), got: format!("{} {:?}", t.name, t.shape) });
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// `self += a · other`.
    fn axpy(&mut self, a: f64, other: &Weights) {
        for (t, o) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in t.data.iter_mut().zip(&o.data) {
                *x += a * y;
            }
        }
    }

    fn conv_params(&self, conv_index: usize) -> ConvParams<'_> {
        ConvParams { w: &self.tensors[2 * conv_index].data, b: &self.tensors[2 * conv_index + 1].data }
    }
}

/// Network description plus trained weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseNet {
    pub spec: NetworkSpec,
    pub weights: Weights,
}

impl PoseNet {
    pub fn new(spec: NetworkSpec, weights: Weights) -> Result<Self> {
        spec.validate()?;
        weights.check(&spec)?;
        Ok(Self { spec, weights })
    }

    /// Loads `<stem>.json` (network description) and the weights file.
    pub fn load(spec_path: &std::path::Path, weights_path: &std::path::Path) -> Result<Self> {
        let spec: NetworkSpec = crate::io::read_json(spec_path)?;
        Self::new(spec, load_weights(weights_path)?)
    }

    pub fn save(&self, spec_path: &std::path::Path, weights_path: &std::path::Path) -> Result<()> {
        crate::io::write_json(spec_path, &self.spec)?;
        save_weights(&self.weights, weights_path)
    }
}

/// Network input for a normal-image crop: bytes mapped to [−1, 1), invalid pixels 0.
pub fn encode_input(img: &NormalImage) -> FeatureMap {
    let (h, w) = (img.height, img.width);
    let mut out = FeatureMap::zeros(3, h, w);
    for i in 0..h * w {
        if img.valid[i] {
            for c in 0..3 {
                out.data[c * h * w + i] = (img.data[i][c] as f64 - 128.0) / 128.0;
            }
        }
    }
    out
}

/// Key of a dropout mask stream: `(seed, indices...)`.
pub(crate) type DropoutKey<'a> = Option<(u64, &'a [u64])>;

/// Forward pass of one example, keeping the per-layer caches.
fn forward_example(spec: &NetworkSpec, w: &Weights, x: &FeatureMap, dropout: DropoutKey<'_>) -> Result<(Vec<f64>, Vec<Cache>)> {
    let want = (spec.in_channels, spec.input_side, spec.input_side);
    if x.dims() != want {
        return Err(Error::ShapeMismatch { expected: format!("{want:?}"), got: format!("{:?}", x.dims()) });
    }
    let mut caches = Vec::with_capacity(spec.layers.len());
    let mut act = x.clone();
    let mut conv = 0;
    for (li, layer) in spec.layers.iter().enumerate() {
        let params = matches!(layer, Layer::Conv { .. }).then(|| w.conv_params(conv));
        let mut draw = dropout.map(|(seed, key)| {
            let mut idx = key.to_vec();
            idx.push(li as u64);
            let keep = 1.0 - if let Layer::Dropout { rate } = layer { *rate } else { 0.0 };
            move |n: usize| {
                let mut rng = substream(seed, "dropout", &idx);
                (0..n).map(|_| rng.random::<f64>() < keep).collect::<Vec<bool>>()
            }
        });
        let mask = draw.as_mut().map(|d| d as &mut dyn FnMut(usize) -> Vec<bool>);
        let (out, cache) = layers::forward(layer, &act, params, mask)?;
        if params.is_some() {
            conv += 1;
        }
        caches.push(cache);
        act = out;
    }
    Ok((act.data, caches))
}

/// Per-example logits. `dropout_seed` switches on training mode, with
/// example `i` drawing its masks from a stream keyed by `(seed, i)`.
pub fn forward(spec: &NetworkSpec, w: &Weights, batch: &Tensor, dropout_seed: Option<u64>) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    w.check(spec)?;
    (0..batch.shape()[0])
        .into_par_iter()
        .map(|i| {
            let key = [i as u64];
            forward_example(spec, w, &batch.example(i), dropout_seed.map(|s| (s, &key[..]))).map(|r| r.0)
        })
        .collect()
}

/// `(loss, d loss / d logits slice)` of softmax cross-entropy on one category slice.
fn softmax_xent(slice: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = slice.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = slice.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = max + sum.ln() - slice[label];
    let grad = exps.iter().enumerate().map(|(j, e)| e / sum - if j == label { 1.0 } else { 0.0 }).collect();
    (loss, grad)
}

/// Softmax over a logit slice.
pub fn softmax(slice: &[f64]) -> Vec<f64> {
    let max = slice.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = slice.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Loss, parameter gradients and whether the slice's argmax hits the label.
pub(crate) fn example_loss_grad(
    spec: &NetworkSpec,
    w: &Weights,
    x: &FeatureMap,
    label: usize,
    category: usize,
    dropout: DropoutKey<'_>,
) -> Result<(f64, Weights, bool)> {
    let bins = spec.n_posebin + 1;
    if category >= spec.n_class() {
        return Err(Error::InvalidArgument(format!("category id {category} out of range")));
    }
    if label >= bins {
        return Err(Error::InvalidArgument(format!("label {label} out of range")));
    }
    let (logits, caches) = forward_example(spec, w, x, dropout)?;
    let slice = &logits[category * bins..(category + 1) * bins];
    let (loss, dslice) = softmax_xent(slice, label);
    let correct = argmax_first(slice) == label;

    let mut grad = FeatureMap::zeros(logits.len(), 1, 1);
    grad.data[category * bins..(category + 1) * bins].copy_from_slice(&dslice);
    let mut grads = w.zeros_like();
    let n_conv = spec.layers.iter().filter(|l| matches!(l, Layer::Conv { .. })).count();
    let mut conv = n_conv;
    for (li, layer) in spec.layers.iter().enumerate().rev() {
        let is_conv = matches!(layer, Layer::Conv { .. });
        if is_conv {
            conv -= 1;
        }
        let params = is_conv.then(|| w.conv_params(conv));
        let (dx, dparams) = layers::backward(layer, &grad, &caches[li], params, li > 0);
        if let Some((dw, db)) = dparams {
            grads.tensors[2 * conv].data = dw;
            grads.tensors[2 * conv + 1].data = db;
        }
        match dx {
            Some(d) => grad = d,
            None => break,
        }
    }
    Ok((loss, grads, correct))
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Mean softmax loss over the batch and its exact gradient. Example `i`
/// uses `labels[i]` within the logit slice of `categories[i]`.
pub fn loss_and_grad(
    spec: &NetworkSpec,
    w: &Weights,
    batch: &Tensor,
    labels: &[usize],
    categories: &[usize],
    dropout_seed: Option<u64>,
) -> Result<(f64, Weights)> {
    spec.validate()?;
    w.check(spec)?;
    let n = batch.shape()[0];
    if labels.len() != n || categories.len() != n || n == 0 {
        return Err(Error::InvalidArgument(format!("{n} examples, {} labels, {} categories", labels.len(), categories.len())));
    }
    let per: Vec<(f64, Weights, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let key = [i as u64];
            example_loss_grad(spec, w, &batch.example(i), labels[i], categories[i], dropout_seed.map(|s| (s, &key[..])))
        })
        .collect::<Result<_>>()?;
    // reduce in example order so results do not depend on scheduling
    let mut total = w.zeros_like();
    let mut loss = 0.0;
    for (l, g, _) in &per {
        loss += l;
        total.axpy(1.0, g);
    }
    let inv = 1.0 / n as f64;
    for t in &mut total.tensors {
        t.data.iter_mut().for_each(|v| *v *= inv);
    }
    Ok((loss * inv, total))
}

/// A ranked azimuth hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseScore {
    pub bin: usize,
    pub score: f64,
    /// Bin center yaw in radians.
    pub yaw: f64,
}

/// Top-`k` azimuth bins from logits of one category, background excluded.
pub fn rank_bins(logits: &[f64], spec: &NetworkSpec, category: usize, k: usize) -> Result<Vec<PoseScore>> {
    let n = spec.n_posebin;
    if k < 1 || k > n {
        return Err(Error::InvalidArgument(format!("k = {k} outside 1..={n}")));
    }
    let bins = n + 1;
    let scores = softmax(&logits[category * bins..category * bins + n]);
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps lower bins first among equal scores
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    Ok(order.into_iter().take(k).map(|b| PoseScore { bin: b, score: scores[b], yaw: bin_center(b, n) }).collect())
}

/// Ranked azimuth bins for a normal-image crop of `category`.
pub fn predict_pose(net: &PoseNet, crop: &NormalImage, category: &str, k: usize) -> Result<Vec<PoseScore>> {
    let c = net.spec.category_id(category)?;
    let (logits, _) = forward_example(&net.spec, &net.weights, &encode_input(crop), None)?;
    rank_bins(&logits, &net.spec, c, k)
}
