//! Small differentiable kernel: dense, 1-D convolution and LSTM layers with
//! hand-written backward passes, softmax/KL/BCE losses, and first-order
//! optimizers.
//!
//! Layers keep no activation state of their own. `forward` returns whatever
//! cache `backward` needs, and `backward` accumulates into [`Param::grad`], so a
//! batch is processed by calling `backward` once per sample before a single
//! optimizer step.

mod checkpoint;
mod conv;
mod dense;
mod fit;
mod lstm;
mod optim;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, NamedParam, CHECKPOINT_FORMAT};
pub use conv::Conv1d;
pub use dense::Dense;
pub use fit::{fit, split_indices, EpochLoss, FitConfig, OptimizerKind};
pub use lstm::{Lstm, LstmState, LstmStepCache, LstmTrace};
pub use optim::{clip_grad_norm, grad_norm, sgd_step, Adam, Optimizer, Sgd};

/// A trainable tensor with its accumulated gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    #[serde(skip)]
    pub grad: Vec<f64>,
}

impl Param {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            value: vec![0.0; n],
            grad: vec![0.0; n],
        }
    }

    /// Uniform in `(-1/√fan_in, 1/√fan_in)`.
    pub fn init_uniform<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut p = Self::zeros(shape);
        for v in &mut p.value {
            *v = rng.random_range(-bound..bound);
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        if self.grad.len() != self.value.len() {
            self.grad = vec![0.0; self.value.len()];
        } else {
            self.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.value.iter().chain(&self.grad).all(|v| v.is_finite())
    }
}

/// Anything that owns trainable parameters, in a fixed order.
pub trait Parameterized {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn scale_grad(&mut self, s: f64) {
        for p in self.params_mut() {
            p.grad.iter_mut().for_each(|g| *g *= s);
        }
    }
}

/// Shape description of one layer, stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    Conv1d {
        in_dim: usize,
        out_dim: usize,
        kernel: usize,
    },
    Lstm {
        in_dim: usize,
        hidden_dim: usize,
    },
}

impl LayerSpec {
    pub fn validate(&self) -> crate::Result<()> {
        let ok = match *self {
            LayerSpec::Dense { in_dim, out_dim } => in_dim > 0 && out_dim > 0,
            LayerSpec::Conv1d {
                in_dim,
                out_dim,
                kernel,
            } => in_dim > 0 && out_dim > 0 && kernel > 0,
            LayerSpec::Lstm { in_dim, hidden_dim } => in_dim > 0 && hidden_dim > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(crate::Error::config(format!(
                "layer dimensions must be positive: {self:?}"
            )))
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= s);
    out
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Which way round the KL training loss is taken.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(target ‖ softmax(logits))`, mass-covering.
    #[default]
    TargetToPrediction,
    /// `KL(softmax(logits) ‖ target)`, with the target floored.
    PredictionToTarget,
}

/// KL loss on logits with its analytic gradient. Target entries are floored at
/// [`crate::metrics::KL_FLOOR`] only where a log of the target is needed in the
/// reverse direction.
pub fn kl_loss(logits: &[f64], target: &[f64], direction: KlDirection) -> (f64, Vec<f64>) {
    assert_eq!(logits.len(), target.len());
    let logp = log_softmax(logits);
    let p: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    match direction {
        KlDirection::TargetToPrediction => {
            let mut loss = 0.0;
            for (t, lp) in target.iter().zip(&logp) {
                if *t > 0.0 {
                    loss += t * (t.ln() - lp);
                }
            }
            let tsum: f64 = target.iter().sum();
            let grad = p
                .iter()
                .zip(target)
                .map(|(pi, ti)| pi * tsum - ti)
                .collect();
            (loss, grad)
        }
        KlDirection::PredictionToTarget => {
            let ell: Vec<f64> = logp
                .iter()
                .zip(target)
                .map(|(lp, t)| lp - t.max(crate::metrics::KL_FLOOR).ln())
                .collect();
            let loss: f64 = p.iter().zip(&ell).map(|(a, b)| a * b).sum();
            let grad = p
                .iter()
                .zip(&ell)
                .map(|(pj, lj)| pj * (lj - loss))
                .collect();
            (loss, grad)
        }
    }
}

/// Binary cross-entropy on a single logit: `(loss, dloss/dlogit)`.
pub fn bce_with_logit(logit: f64, label: f64) -> (f64, f64) {
    // log(1 + e^z) computed stably
    let softplus = if logit > 0.0 {
        logit + (-logit).exp().ln_1p()
    } else {
        logit.exp().ln_1p()
    };
    let loss = softplus - label * logit;
    (loss, sigmoid(logit) - label)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inner product of two equal-length slices.
pub fn dot_product(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    dot(a, b)
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_uniform_and_shift_invariant() {
        let p = softmax(&[2.0, 2.0, 2.0, 2.0]);
        assert!(p.iter().all(|v| (v - 0.25).abs() < 1e-15));
        let a = softmax(&[0.3, -1.2, 4.0]);
        let b = softmax(&[100.3, 98.8, 104.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kl_loss_zero_at_target() {
        let target = softmax(&[0.1, 0.5, -0.3]);
        let logits: Vec<f64> = target.iter().map(|t| t.ln() + 7.0).collect();
        for dir in [
            KlDirection::TargetToPrediction,
            KlDirection::PredictionToTarget,
        ] {
            let (l, g) = kl_loss(&logits, &target, dir);
            assert!(l.abs() < 1e-12, "{dir:?} {l}");
            assert!(g.iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn kl_loss_uniform_target_closed_form() {
        // KL(u ‖ softmax(c·e_j)) = -ln K - c/K + ln(K - 1 + e^c)
        let k = 6;
        let c = 2.5;
        let mut logits = vec![0.0; k];
        logits[2] = c;
        let target = vec![1.0 / k as f64; k];
        let (l, _) = kl_loss(&logits, &target, KlDirection::TargetToPrediction);
        let kf = k as f64;
        let closed = -kf.ln() - c / kf + (kf - 1.0 + c.exp()).ln();
        assert!((l - closed).abs() < 1e-12);
    }

    #[test]
    fn bce_matches_definition() {
        let (l, g) = bce_with_logit(0.7, 1.0);
        let s = sigmoid(0.7);
        assert!((l + s.ln()).abs() < 1e-12);
        assert!((g - (s - 1.0)).abs() < 1e-12);
        let (l0, _) = bce_with_logit(-40.0, 0.0);
        assert!(l0 >= 0.0 && l0 < 1e-15);
    }
}
