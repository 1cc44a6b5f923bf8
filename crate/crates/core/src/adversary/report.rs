use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

fn ratio(a: u64, b: u64) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    /// `None` when nothing was flagged.
    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `None` when there are no positives.
    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.positives())
    }

    pub fn false_positive_rate(&self) -> Option<f64> {
        ratio(self.fp, self.fp + self.tn)
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.total())
    }
}

/// Detector quality at one threshold. Undefined ratios are `None` and print
/// as `n/a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub confusion: Confusion,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub false_positive_rate: Option<f64>,
    pub accuracy: Option<f64>,
    /// Share of positives in the evaluated population.
    pub prevalence: Option<f64>,
}

impl EvalReport {
    pub fn from_confusion(confusion: Confusion, threshold: f64) -> Self {
        Self {
            threshold,
            precision: confusion.precision(),
            recall: confusion.recall(),
            false_positive_rate: confusion.false_positive_rate(),
            accuracy: confusion.accuracy(),
            prevalence: ratio(confusion.positives(), confusion.total()),
            confusion,
        }
    }

    /// Scores at or above `threshold` are flagged positive.
    pub fn from_scores(scores: &[f64], labels: &[bool], threshold: f64) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Dimension {
                expected: labels.len(),
                got: scores.len(),
            });
        }
        let mut c = Confusion::default();
        for (s, y) in scores.iter().zip(labels) {
            match (*s >= threshold, *y) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(Self::from_confusion(c, threshold))
    }

    pub fn fmt_ratio(v: Option<f64>) -> String {
        v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "n/a".into())
    }
}

/// Precision of a detector with the given rates on a population where a
/// share `prevalence` is positive.
pub fn precision_at_prevalence(tpr: f64, fpr: f64, prevalence: f64) -> Option<f64> {
    let num = tpr * prevalence;
    let den = num + fpr * (1.0 - prevalence);
    (den > 0.0).then(|| num / den)
}

pub fn prevalence_curve(tpr: f64, fpr: f64, prevalences: &[f64]) -> Vec<(f64, Option<f64>)> {
    prevalences
        .iter()
        .map(|&p| (p, precision_at_prevalence(tpr, fpr, p)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// One point per distinct score, thresholds descending, plus the
/// flag-nothing corner.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    let pos = labels.iter().filter(|l| **l).count() as f64;
    let neg = labels.len() as f64 - pos;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = vec![RocPoint {
        threshold: f64::INFINITY,
        tpr: 0.0,
        fpr: 0.0,
    }];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        out.push(RocPoint {
            threshold: t,
            tpr: if pos > 0.0 { tp / pos } else { 0.0 },
            fpr: if neg > 0.0 { fp / neg } else { 0.0 },
        });
    }
    Ok(out)
}
