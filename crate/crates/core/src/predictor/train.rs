//! Minibatch SGD with momentum and best-validation model selection.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cnn::{Network, PredictMode};
use crate::error::{Error, Result};
use crate::num::{cast, Real};
use crate::polar::{ContourPair, PolarPatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Rescale the batch gradient to at most this L2 norm; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 20, learning_rate: 3e-4, momentum: 0.9, batch_size: 8, clip_norm: 50.0, seed: 3 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.clip_norm < 0.0 {
            return bad("momentum must lie in [0, 1) and clip_norm be non-negative".into());
        }
        Ok(())
    }
}

/// A patch and its target `[radii..., widths...]`.
#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub patch: PolarPatch<T>,
    pub target: Vec<T>,
}

impl<T: Real> Sample<T> {
    pub fn new<U: Real>(patch: PolarPatch<T>, target: &ContourPair<U>) -> Self {
        let target = target.lumen_radii().iter().chain(target.wall_widths()).map(|&v| cast(v)).collect();
        Self { patch, target }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Snapshot with the lowest end-of-epoch validation loss.
    pub network: Network<T>,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

/// Deterministic (no dropout) mean squared error over `samples`.
pub fn evaluate<T: Real>(net: &Network<T>, samples: &[Sample<T>]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let out = net.forward(&s.patch, PredictMode::Deterministic)?;
        if out.len() != s.target.len() {
            return Err(Error::DimensionMismatch { expected: out.len(), found: s.target.len() });
        }
        let se: f64 = out.iter().zip(&s.target).map(|(&o, &t)| (o - t).f64().powi(2)).sum();
        total += se / out.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Trains `net` on `train`, selecting the epoch with the lowest validation MSE.
///
/// Dropout is active on training batches. Sample order and dropout masks come
/// from one generator seeded by `cfg.seed`, so runs are reproducible.
pub fn train<T: Real>(
    mut net: Network<T>,
    train: &[Sample<T>],
    validation: &[Sample<T>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::EmptyDataset { train: train.len(), validation: validation.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut velocity = net.zeros_like();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let lr = T::of(cfg.learning_rate);
    let mu = T::of(cfg.momentum);
    let mut best: Option<(f64, usize, Network<T>)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut last_finite = f64::NAN;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let mut grad = net.zeros_like();
            let mut batch_loss = 0.0;
            for &i in idx {
                let s = &train[i];
                batch_loss += net.loss_and_grad(&s.patch, &s.target, Some(&mut rng), &mut grad)?.f64();
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch, last_finite });
            }
            last_finite = batch_loss / idx.len() as f64;
            epoch_loss += batch_loss;

            let mut scale = 1.0 / idx.len() as f64;
            if cfg.clip_norm > 0.0 {
                let norm = grad.params().flatten().map(|g| g.f64().powi(2)).sum::<f64>().sqrt() * scale;
                if norm > cfg.clip_norm {
                    scale *= cfg.clip_norm / norm;
                }
            }
            let scale = T::of(scale);
            for ((w, v), g) in net.params_mut().zip(velocity.params_mut()).zip(grad.params()) {
                for ((w, v), &g) in w.iter_mut().zip(v.iter_mut()).zip(g) {
                    *v = mu * *v + g * scale;
                    *w -= lr * *v;
                }
            }
        }
        let val_mse = evaluate(&net, validation)?;
        if !val_mse.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: usize::MAX, last_finite });
        }
        log.push(EpochLog { epoch, train_mse: epoch_loss / train.len() as f64, val_mse });
        if best.as_ref().is_none_or(|(b, _, _)| val_mse < *b) {
            best = Some((val_mse, epoch, net.clone()));
        }
    }
    let (_, best_epoch, network) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { network, best_epoch, log })
}

/// Writes the per-epoch log as `epoch,train_mse,val_mse`.
pub fn write_training_log(log: &[EpochLog], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{other:?}")),
    })?;
    for row in log {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
