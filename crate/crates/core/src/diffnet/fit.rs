//! Minibatch supervised training loop shared by the sequence models.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{clip_grad_norm, Adam, Optimizer, Parameterized, Sgd};
use crate::error::{Error, Result};
use crate::rng::{self, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm cap per batch.
    pub clip_norm: Option<f64>,
    pub train_fraction: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            lr: 0.01,
            momentum: 0.9,
            optimizer: OptimizerKind::Sgd,
            clip_norm: Some(5.0),
            train_fraction: 0.8,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be positive"));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("need lr > 0 and momentum in [0, 1)"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config("train_fraction must be in (0, 1)"));
        }
        Ok(())
    }

    fn optimizer(&self) -> Box<dyn Optimizer> {
        match self.optimizer {
            OptimizerKind::Sgd => Box::new(Sgd::new(self.lr, self.momentum)),
            OptimizerKind::Adam => Box::new(Adam::new(self.lr)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
}

/// Seeded shuffle of `0..n` cut into train and test index sets.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::rng(rng::derive(seed, tag::SPLIT)));
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let n_train = if n < 2 { n } else { n_train.clamp(1, n - 1) };
    let test = idx.split_off(n_train);
    (idx, test)
}

/// Runs `cfg.epochs` passes over `train`. `sample` must accumulate the
/// gradient of one sample's loss into the model and return that loss;
/// gradients are averaged over the batch. `evaluate` reports held-out loss
/// after each epoch.
pub fn fit<M, S, E>(
    model: &mut M,
    train: &[usize],
    cfg: &FitConfig,
    seed: u64,
    mut sample: S,
    mut evaluate: E,
) -> Result<Vec<EpochLoss>>
where
    M: Parameterized,
    S: FnMut(&mut M, usize) -> Result<f64>,
    E: FnMut(&M) -> Result<f64>,
{
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut opt = cfg.optimizer();
    let mut order = train.to_vec();
    let mut shuffler = rng::rng(rng::derive(seed, tag::EPOCH));
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffler);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            model.zero_grad();
            for &i in batch {
                total += sample(model, i)?;
            }
            model.scale_grad(1.0 / batch.len() as f64);
            let mut params = model.params_mut();
            if let Some(c) = cfg.clip_norm {
                clip_grad_norm(&mut params, c);
            }
            opt.step(&mut params);
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Diverged(format!(
                    "non-finite parameters in epoch {epoch}"
                )));
            }
        }
        curve.push(EpochLoss {
            epoch,
            train_loss: total / order.len() as f64,
            test_loss: evaluate(model)?,
        });
    }
    Ok(curve)
}
