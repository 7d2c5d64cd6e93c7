use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;

use super::{example_loss_grad, FeatureMap, NetworkSpec, Weights};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// L2 penalty on conv kernels (biases are not decayed).
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub input_side: usize,
    /// Multiply the learning rate by `lr_gamma` every `lr_step` epochs; 0 disables.
    pub lr_step: usize,
    pub lr_gamma: f64,
    /// Standard deviation of the initial kernels.
    pub init_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 32,
            epochs: 30,
            seed: 0,
            input_side: 227,
            lr_step: 10,
            lr_gamma: 0.1,
            init_std: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.momentum)
            && self.weight_decay >= 0.0
            && self.batch_size > 0
            && self.input_side > 0
            && self.lr_gamma > 0.0
            && self.init_std > 0.0;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid training configuration {self:?}")));
        }
        Ok(())
    }

    /// Learning rate used during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match epoch.checked_div(self.lr_step) {
            None => self.learning_rate,
            Some(steps) => self.learning_rate * self.lr_gamma.powi(steps as i32),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub input: FeatureMap,
    pub category: usize,
    /// Azimuth bin, or `n_posebin` for background.
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean loss over the epoch's examples, each at the weights it was seen with.
    pub loss: f64,
    /// Fraction of examples whose category-slice argmax matched the label.
    pub train_top1: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub weights: Weights,
    pub log: Vec<EpochLog>,
}

/// Trains from a seeded Gaussian initialization.
pub fn train(spec: &NetworkSpec, data: &[TrainExample], cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let w = Weights::init(spec, cfg.init_std, cfg.seed)?;
    train_from(spec, w, data, cfg)
}

/// Minibatch SGD with momentum starting at `weights`.
///
/// Examples are shuffled per epoch and dropout masks are keyed by
/// `(epoch, example index)`, so the run depends only on the seed.
/// Per-example gradients are computed in parallel and summed in batch order.
pub fn train_from(spec: &NetworkSpec, mut weights: Weights, data: &[TrainExample], cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    spec.validate()?;
    weights.check(spec)?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if cfg.input_side != spec.input_side {
        return Err(Error::InvalidArgument(format!("input side {} vs network {}", cfg.input_side, spec.input_side)));
    }
    let decay: Vec<bool> = weights.tensors.iter().map(|t| t.name.ends_with(".weight")).collect();
    let mut velocity = weights.zeros_like();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut substream(cfg.seed, "shuffle", &[epoch as u64]));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let w = &weights;
            let per: Vec<(f64, Weights, bool)> = batch
                .par_iter()
                .map(|&i| {
                    let ex = &data[i];
                    let key = [epoch as u64, i as u64];
                    example_loss_grad(spec, w, &ex.input, ex.label, ex.category, Some((cfg.seed, &key[..])))
                })
                .collect::<Result<_>>()?;
            let mut grad = weights.zeros_like();
            for (l, g, hit) in &per {
                if !l.is_finite() {
                    return Err(Error::Diverged { epoch, loss: *l });
                }
                loss_sum += l;
                correct += *hit as usize;
                grad.axpy(1.0, g);
            }
            let inv = 1.0 / batch.len() as f64;
            for (ti, ((wt, vt), gt)) in weights.tensors.iter_mut().zip(&mut velocity.tensors).zip(&grad.tensors).enumerate() {
                let wd = if decay[ti] { cfg.weight_decay } else { 0.0 };
                for ((w, v), g) in wt.data.iter_mut().zip(&mut vt.data).zip(&gt.data) {
                    *v = cfg.momentum * *v - lr * (g * inv + wd * *w);
                    *w += *v;
                }
            }
        }
        let loss = loss_sum / data.len() as f64;
        if !loss.is_finite() || weights.tensors.iter().any(|t| t.data.iter().any(|v| !v.is_finite())) {
            return Err(Error::Diverged { epoch, loss });
        }
        log.push(EpochLog { epoch, loss, train_top1: correct as f64 / data.len() as f64, lr });
    }
    Ok(TrainOutput { weights, log })
}
