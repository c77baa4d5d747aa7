//! SGD training loop with momentum, classic weight decay, and a step
//! learning-rate schedule, plus Kaiming weight initialization and
//! evaluation.
//!
//! Everything is deterministic: the init seed fixes the weights, the config
//! seed fixes the epoch shuffles, and single-threaded execution fixes the
//! result bit for bit.

use crate::autodiff::{self, Mode, Var};
use crate::dashes::DashDataset;
use crate::error::{Error, Result};
use crate::math;
use crate::models::{Model, ParamKind};
use crate::rng::Rng;
use crate::tensor::Tensor;
use alloc::format;
use alloc::vec::Vec;

/// Hyperparameters of one training run.
///
/// The documented defaults are the full-scale recipe (learning rate 0.1
/// dropped by 10x every 30 epochs, momentum 0.9, weight decay 1e-4); toy
/// runs typically override them via [`TrainConfig::toy`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub lr_step: usize,
    pub lr_gamma: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 90,
            lr_step: 30,
            lr_gamma: 0.1,
            batch_size: 48,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults for the toy problems: lr 0.05, 50 epochs, batch 64.
    pub fn toy(seed: u64) -> Self {
        Self {
            lr0: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 50,
            lr_step: 30,
            lr_gamma: 0.1,
            batch_size: 64,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr0 <= 0.0
            || self.epochs == 0
            || self.lr_step == 0
            || self.batch_size == 0
            || self.momentum < 0.0
            || self.weight_decay < 0.0
        {
            return Err(Error::Invalid(
                "training config fields must be positive".into(),
            ));
        }
        if !(0.0 < self.lr_gamma && self.lr_gamma <= 1.0) {
            return Err(Error::Invalid(format!(
                "lr_gamma must lie in (0, 1], got {}",
                self.lr_gamma
            )));
        }
        Ok(())
    }

    /// The stepped learning rate for a 0-based epoch.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let mut lr = self.lr0;
        for _ in 0..epoch / self.lr_step {
            lr *= self.lr_gamma;
        }
        lr
    }
}

/// One epoch of metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub wall_ms: u64,
}

/// Draws fresh values for every registered parameter: weights from
/// Kaiming-normal with their registered fan-in, biases and BN betas to
/// zero, BN gammas to one, and depthwise filters back to their bank values.
pub fn kaiming_init(model: &Model, seed: u64) {
    let mut rng = Rng::new(seed);
    for p in model.params() {
        match p.kind {
            ParamKind::Weight { fan_in } => {
                let std = math::sqrt(2.0 / fan_in as f64);
                let shape = p.var.shape().to_vec();
                let numel = p.var.numel();
                p.var.set_value(Tensor::new(
                    shape,
                    (0..numel).map(|_| rng.normal() * std).collect(),
                ));
            }
            ParamKind::Bias | ParamKind::BnBeta => {
                p.var.set_value(Tensor::zeros(p.var.shape().to_vec()));
            }
            ParamKind::BnGamma => {
                p.var.set_value(Tensor::ones(p.var.shape().to_vec()));
            }
            ParamKind::DepthwiseFilters => {
                let bank = model
                    .spec()
                    .bank
                    .as_ref()
                    .expect("models with trainable filters carry a bank");
                let mut t = Tensor::zeros(p.var.shape().to_vec());
                t.data_mut().copy_from_slice(&bank.as_matrix());
                p.var.set_value(t);
            }
        }
    }
}

/// SGD with momentum and classic (gradient-added) weight decay.
pub struct Sgd {
    velocity: Vec<Tensor>,
    momentum: f64,
    weight_decay: f64,
}

impl Sgd {
    pub fn new(model: &Model, momentum: f64, weight_decay: f64) -> Self {
        Self {
            velocity: model
                .params()
                .iter()
                .map(|p| Tensor::zeros(p.var.shape().to_vec()))
                .collect(),
            momentum,
            weight_decay,
        }
    }

    /// Applies one update from the gradients currently stored on the
    /// parameters. Parameters without a gradient are left untouched.
    pub fn step(&mut self, model: &Model, lr: f64) {
        for (p, vel) in model.params().iter().zip(self.velocity.iter_mut()) {
            let Some(grad) = p.var.grad() else { continue };
            p.var.update_value(|value| {
                let v = vel.data_mut();
                let g = grad.data();
                let x = value.data_mut();
                for i in 0..x.len() {
                    let d = g[i] + self.weight_decay * x[i];
                    v[i] = self.momentum * v[i] + d;
                    x[i] -= lr * v[i];
                }
            });
        }
    }
}

#[cfg(feature = "std")]
fn now_ms_since(start: std::time::Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

/// Argmax with ties broken toward the lower class index.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Accuracy of the model on a dataset, evaluated in eval mode.
pub fn evaluate(model: &mut Model, dataset: &DashDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Invalid("cannot evaluate on an empty dataset".into()));
    }
    let classes = model.spec().head_classes;
    let mut correct = 0usize;
    let chunk = 128;
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for batch in indices.chunks(chunk) {
        let (x, labels) = dataset.batch(batch);
        let logits = model.forward(&Var::leaf(x), Mode::Eval)?;
        let lv = logits.value();
        for (i, &label) in labels.iter().enumerate() {
            if argmax(&lv.data()[i * classes..(i + 1) * classes]) == label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Runs the full training loop, returning one record per epoch.
///
/// When `test` is absent, the record's `test_acc` repeats the train-set
/// accuracy. Aborts with [`Error::Diverged`] as soon as a batch loss stops
/// being finite.
pub fn train(
    model: &mut Model,
    dataset: &DashDataset,
    test: Option<&DashDataset>,
    cfg: &TrainConfig,
) -> Result<Vec<MetricsRecord>> {
    train_impl(model, dataset, test, cfg, None)
}

/// Like [`train`], but returns early once the train-set accuracy reaches
/// `stop_at_train_acc`. The records still cover every epoch that ran.
pub fn train_until(
    model: &mut Model,
    dataset: &DashDataset,
    test: Option<&DashDataset>,
    cfg: &TrainConfig,
    stop_at_train_acc: f64,
) -> Result<Vec<MetricsRecord>> {
    train_impl(model, dataset, test, cfg, Some(stop_at_train_acc))
}

fn train_impl(
    model: &mut Model,
    dataset: &DashDataset,
    test: Option<&DashDataset>,
    cfg: &TrainConfig,
    stop_at_train_acc: Option<f64>,
) -> Result<Vec<MetricsRecord>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Invalid("cannot train on an empty dataset".into()));
    }

    let mut optimizer = Sgd::new(model, cfg.momentum, cfg.weight_decay);
    let mut shuffle_rng = Rng::new(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        #[cfg(feature = "std")]
        let start = std::time::Instant::now();
        let lr = cfg.learning_rate(epoch);
        shuffle_rng.shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let (x, labels) = dataset.batch(batch);
            model.zero_grads();
            let logits = model.forward(&Var::leaf(x), Mode::Train)?;
            let loss = autodiff::softmax_cross_entropy(&logits, &labels)?;
            let loss_value = loss.value().item();
            if !loss_value.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            autodiff::backward(&loss)?;
            optimizer.step(model, lr);
            loss_sum += loss_value * batch.len() as f64;
            seen += batch.len();
        }

        let train_acc = evaluate(model, dataset)?;
        let test_acc = match test {
            Some(ds) => evaluate(model, ds)?,
            None => train_acc,
        };
        #[cfg(feature = "std")]
        let wall_ms = now_ms_since(start);
        #[cfg(not(feature = "std"))]
        let wall_ms = 0;
        records.push(MetricsRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_acc,
            test_acc,
            wall_ms,
        });
        if let Some(target) = stop_at_train_acc {
            if train_acc >= target {
                break;
            }
        }
    }
    Ok(records)
}
