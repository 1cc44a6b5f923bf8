//! Privacy and utility quantities over recommended-class distributions.
//!
//! All logarithms are natural, so raw divergences are in nats. The normalized
//! metrics (`privacy_norm`, `utility_gain_norm`) are ratios of divergences and
//! therefore independent of the log base.

mod mi;
mod norms;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use mi::{JointTable, Outcome};
pub use norms::{crawl_seed, estimate_norms, NormEstimateConfig};

/// Entries below this are raised to it before taking logs. The floored
/// vector is not renormalized.
pub const KL_FLOOR: f64 = 1e-4;

const SUM_TOL: f64 = 1e-6;

/// Length-K vector of recommended-class mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ClassDistribution(Vec<f64>);

impl ClassDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("class distribution"));
        }
        if let Some(bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::Distribution(format!(
                "entry {bad} is negative or not finite"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::Distribution(format!("entries sum to {sum}")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k > 0);
        Self(vec![1.0 / k as f64; k])
    }

    pub fn one_hot(k: usize, class: usize) -> Self {
        let mut v = vec![0.0; k];
        v[class] = 1.0;
        Self(v)
    }

    /// Normalizes non-negative counts. All-zero counts are an error.
    pub fn from_counts(counts: &[f64]) -> Result<Self> {
        let total: f64 = counts.iter().sum();
        if !(total > 0.0) || counts.iter().any(|c| *c < 0.0 || !c.is_finite()) {
            return Err(Error::Distribution(
                "counts must be non-negative with positive sum".into(),
            ));
        }
        Ok(Self(counts.iter().map(|c| c / total).collect()))
    }

    /// Softmax of logits.
    pub fn from_logits(logits: &[f64]) -> Self {
        Self(crate::diffnet::softmax(logits))
    }

    /// Mean of several distributions of equal length.
    pub fn mean<'a, I>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a ClassDistribution>,
    {
        let mut acc: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for d in items {
            if acc.is_empty() {
                acc = vec![0.0; d.len()];
            } else if acc.len() != d.len() {
                return Err(Error::Dimension {
                    expected: acc.len(),
                    got: d.len(),
                });
            }
            for (a, p) in acc.iter_mut().zip(&d.0) {
                *a += p;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::Empty("distributions to average"));
        }
        Ok(Self(acc.into_iter().map(|a| a / n as f64).collect()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, p) in self.0.iter().enumerate() {
            if *p > self.0[best] {
                best = k;
            }
        }
        best
    }

    pub fn floored(&self, eps: f64) -> Vec<f64> {
        self.0.iter().map(|p| p.max(eps)).collect()
    }

    /// Total-variation distance.
    pub fn tv_distance(&self, other: &Self) -> f64 {
        0.5 * self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

impl TryFrom<Vec<f64>> for ClassDistribution {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ClassDistribution> for Vec<f64> {
    fn from(d: ClassDistribution) -> Self {
        d.0
    }
}

impl std::ops::Index<usize> for ClassDistribution {
    type Output = f64;
    fn index(&self, k: usize) -> &f64 {
        &self.0[k]
    }
}

/// `Σ p̃ ln(p̃/q̃)` over floored slices. No length check.
pub(crate) fn kl_floored(p: &[f64], q: &[f64], eps: f64) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            let a = a.max(eps);
            let b = b.max(eps);
            a * (a / b).ln()
        })
        .sum()
}

/// `D_KL(p ‖ q)` in nats with both arguments floored at [`KL_FLOOR`].
pub fn kl_divergence(p: &ClassDistribution, q: &ClassDistribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension {
            expected: p.len(),
            got: q.len(),
        });
    }
    Ok(kl_floored(&p.0, &q.0, KL_FLOOR))
}

/// Mean, standard error and count of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl SampleStats {
    pub fn of(xs: &[f64]) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::Empty("sample"));
        }
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Ok(Self { mean, stderr, n })
    }
}

fn paired_kls(a: &[ClassDistribution], b: &[ClassDistribution]) -> Result<Vec<f64>> {
    if a.is_empty() {
        return Err(Error::Empty("sample set"));
    }
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    a.iter().zip(b).map(|(x, y)| kl_divergence(x, y)).collect()
}

/// `P = E[D_KL(C^o ‖ C^u)]` over paired samples.
pub fn privacy(c_o: &[ClassDistribution], c_u: &[ClassDistribution]) -> Result<f64> {
    Ok(privacy_stats(c_o, c_u)?.mean)
}

pub fn privacy_stats(c_o: &[ClassDistribution], c_u: &[ClassDistribution]) -> Result<SampleStats> {
    SampleStats::of(&paired_kls(c_o, c_u)?)
}

/// `(P − d_min) / (d_max − d_min)`, unclamped.
pub fn privacy_norm(p: f64, norms: &NormalizationConstants) -> f64 {
    (p - norms.d_min) / (norms.d_max - norms.d_min)
}

/// `U_Loss = E[D_KL(Ĉ^u ‖ C^u)]`.
pub fn utility_loss(c_hat: &[ClassDistribution], c_u: &[ClassDistribution]) -> Result<f64> {
    Ok(SampleStats::of(&paired_kls(c_hat, c_u)?)?.mean)
}

/// `(P − U_Loss) / (P − d_min)`.
pub fn utility_gain_norm(p: f64, u_loss: f64, d_min: f64) -> f64 {
    (p - u_loss) / (p - d_min)
}

/// Randomness floor and random-user ceiling used to normalize `P`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationConstants {
    pub d_min: f64,
    pub d_max: f64,
    #[serde(default)]
    pub d_min_stderr: f64,
    #[serde(default)]
    pub d_max_stderr: f64,
    #[serde(default)]
    pub n_samples_min: usize,
    #[serde(default)]
    pub n_samples_max: usize,
}

impl NormalizationConstants {
    pub fn new(d_min: f64, d_max: f64) -> Result<Self> {
        let n = Self {
            d_min,
            d_max,
            d_min_stderr: 0.0,
            d_max_stderr: 0.0,
            n_samples_min: 0,
            n_samples_max: 0,
        };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_min >= 0.0 && self.d_max > self.d_min) {
            return Err(Error::config(format!(
                "normalization needs d_max > d_min >= 0 (got d_min={}, d_max={})",
                self.d_min, self.d_max
            )));
        }
        Ok(())
    }
}

/// Classes the user wants suppressed after obfuscation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersonalizationSpec {
    pub sensitive_classes: BTreeSet<usize>,
    pub lambda: f64,
    #[serde(default = "default_personal_eps")]
    pub epsilon: f64,
}

fn default_personal_eps() -> f64 {
    1e-4
}

impl PersonalizationSpec {
    pub fn new(sensitive_classes: BTreeSet<usize>, lambda: f64) -> Self {
        Self {
            sensitive_classes,
            lambda,
            epsilon: default_personal_eps(),
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.sensitive_classes.len() >= k || self.sensitive_classes.iter().any(|c| *c >= k) {
            return Err(Error::config(
                "sensitive classes must be a proper subset of the classes",
            ));
        }
        if !(self.lambda >= 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::config("lambda must be >= 0 and epsilon > 0"));
        }
        Ok(())
    }
}

/// Split divergence: the non-sensitive part and the sensitive part.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersonalizedPrivacy {
    pub value: f64,
    pub d_nonsens: f64,
    pub d_sens: f64,
}

/// `D_nonsens − λ·D_sens`, where neither restricted vector is renormalized.
pub fn personalized_privacy(
    c_o: &ClassDistribution,
    c_u: &ClassDistribution,
    spec: &PersonalizationSpec,
) -> Result<PersonalizedPrivacy> {
    if c_o.len() != c_u.len() {
        return Err(Error::Dimension {
            expected: c_o.len(),
            got: c_u.len(),
        });
    }
    spec.validate(c_o.len())?;
    let mut d_nonsens = 0.0;
    let mut d_sens = 0.0;
    for k in 0..c_o.len() {
        let o = c_o[k].max(KL_FLOOR);
        if spec.sensitive_classes.contains(&k) {
            d_sens += o * (o / spec.epsilon).ln();
        } else {
            let u = c_u[k].max(KL_FLOOR);
            d_nonsens += o * (o / u).ln();
        }
    }
    Ok(PersonalizedPrivacy {
        value: d_nonsens - spec.lambda * d_sens,
        d_nonsens,
        d_sens,
    })
}

/// `I(X;Y)` of a two-variable joint table.
pub fn discrete_mutual_information(joint: &JointTable) -> Result<f64> {
    joint.validate()?;
    if joint.n_vars() != 2 {
        return Err(Error::Dimension {
            expected: 2,
            got: joint.n_vars(),
        });
    }
    Ok(joint.mutual_information(&[0], &[1]))
}
