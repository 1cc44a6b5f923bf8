//! The platform's side: a persona-level detector of obfuscation usage and a
//! per-video tagger that tries to strip injected videos.
//!
//! Detectors only ever see video ids. Source labels enter through the
//! training and evaluation functions, never through inference.

mod report;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, VideoId};
use crate::diffnet::{
    bce_with_logit, fit, sigmoid, split_indices, Checkpoint, Dense, EpochLoss, FitConfig, Lstm,
    LstmTrace, Param, Parameterized,
};
use crate::error::{Error, Result};
use crate::rng::{self, tag};

pub use report::{
    precision_at_prevalence, prevalence_curve, roc_curve, Confusion, EvalReport, RocPoint,
};

pub const STEALTH_KIND: &str = "stealth_detector";
pub const DEOBF_KIND: &str = "deobf_detector";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorShape {
    pub d_emb: usize,
    pub hidden: usize,
}

/// LSTM over the persona, dense layer on the last hidden state.
#[derive(Clone, Debug)]
pub struct StealthDetector {
    pub lstm: Lstm,
    pub dense: Dense,
    shape: DetectorShape,
    tape: Option<(LstmTrace, Vec<f64>)>,
}

impl PartialEq for StealthDetector {
    fn eq(&self, o: &Self) -> bool {
        self.shape == o.shape && self.lstm == o.lstm && self.dense == o.dense
    }
}

impl StealthDetector {
    pub fn new<R: Rng>(shape: DetectorShape, rng: &mut R) -> Self {
        Self {
            lstm: Lstm::new(shape.d_emb, shape.hidden, rng),
            dense: Dense::new(shape.hidden, 1, rng),
            shape,
            tape: None,
        }
    }

    pub fn shape(&self) -> DetectorShape {
        self.shape
    }

    /// Probability that the persona contains at least one injected video.
    pub fn score(&self, corpus: &Corpus, ids: &[VideoId]) -> Result<f64> {
        if ids.is_empty() {
            return Err(Error::Empty("persona"));
        }
        let h = self.lstm.encode(&corpus.embed_seq(ids));
        Ok(sigmoid(self.dense.forward(&h)[0]))
    }

    fn forward_train(&mut self, embs: &[&[f64]]) -> f64 {
        let trace = self.lstm.forward_seq(embs);
        let h = trace
            .last_hidden()
            .map(|h| h.to_vec())
            .unwrap_or_else(|| vec![0.0; self.shape.hidden]);
        let z = self.dense.forward(&h)[0];
        self.tape = Some((trace, h));
        z
    }

    fn backward(&mut self, dz: f64) -> Result<()> {
        let (trace, h) = self.tape.take().ok_or(Error::NoForward)?;
        let dh = self.dense.backward(&h, &[dz]);
        self.lstm.backward_last(&trace, &dh);
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::capture(
            STEALTH_KIND,
            vec![self.lstm.spec(), self.dense.spec()],
            &self.shape,
            self,
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let shape: DetectorShape = ck.config(STEALTH_KIND)?;
        let mut m = Self::new(shape, &mut rng::rng(0));
        ck.restore_into(&mut m)?;
        Ok(m)
    }
}

impl Parameterized for StealthDetector {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.lstm.params();
        v.extend(self.dense.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.lstm.params_mut();
        v.extend(self.dense.params_mut());
        v
    }
}

/// LSTM tagger with one obfuscation probability per persona entry.
#[derive(Clone, Debug)]
pub struct DeobfDetector {
    pub lstm: Lstm,
    pub dense: Dense,
    shape: DetectorShape,
    tape: Option<LstmTrace>,
}

impl PartialEq for DeobfDetector {
    fn eq(&self, o: &Self) -> bool {
        self.shape == o.shape && self.lstm == o.lstm && self.dense == o.dense
    }
}

impl DeobfDetector {
    pub fn new<R: Rng>(shape: DetectorShape, rng: &mut R) -> Self {
        Self {
            lstm: Lstm::new(shape.d_emb, shape.hidden, rng),
            dense: Dense::new(shape.hidden, 1, rng),
            shape,
            tape: None,
        }
    }

    pub fn shape(&self) -> DetectorShape {
        self.shape
    }

    fn forward_train(&mut self, embs: &[&[f64]]) -> Vec<f64> {
        let trace = self.lstm.forward_seq(embs);
        let z = trace.hs.iter().map(|h| self.dense.forward(h)[0]).collect();
        self.tape = Some(trace);
        z
    }

    fn backward(&mut self, dz: &[f64]) -> Result<()> {
        let trace = self.tape.take().ok_or(Error::NoForward)?;
        let dh: Vec<Vec<f64>> = trace
            .hs
            .iter()
            .zip(dz)
            .map(|(h, g)| self.dense.backward(h, &[*g]))
            .collect();
        self.lstm.backward_seq(&trace, &dh);
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::capture(
            DEOBF_KIND,
            vec![self.lstm.spec(), self.dense.spec()],
            &self.shape,
            self,
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let shape: DetectorShape = ck.config(DEOBF_KIND)?;
        let mut m = Self::new(shape, &mut rng::rng(0));
        ck.restore_into(&mut m)?;
        Ok(m)
    }
}

impl Parameterized for DeobfDetector {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.lstm.params();
        v.extend(self.dense.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.lstm.params_mut();
        v.extend(self.dense.params_mut());
        v
    }
}

/// Anything that scores each entry of a persona from ids alone.
pub trait Tagger {
    fn tag_scores(&self, corpus: &Corpus, ids: &[VideoId]) -> Result<Vec<f64>>;
}

impl Tagger for DeobfDetector {
    fn tag_scores(&self, corpus: &Corpus, ids: &[VideoId]) -> Result<Vec<f64>> {
        let mut state = self.lstm.initial_state();
        let mut out = Vec::with_capacity(ids.len());
        for &id in ids {
            if !corpus.contains(id) {
                return Err(Error::config(format!("unknown video {id}")));
            }
            state = self.lstm.step(corpus.embedding(id), &state);
            out.push(sigmoid(self.dense.forward(&state.h)[0]));
        }
        Ok(out)
    }
}

impl<F: Fn(&[VideoId]) -> Vec<f64>> Tagger for F {
    fn tag_scores(&self, _: &Corpus, ids: &[VideoId]) -> Result<Vec<f64>> {
        let s = self(ids);
        if s.len() != ids.len() {
            return Err(Error::Dimension {
                expected: ids.len(),
                got: s.len(),
            });
        }
        Ok(s)
    }
}

/// Result of stripping flagged entries from a persona.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deobfuscated {
    pub kept: Vec<VideoId>,
    pub flags: Vec<bool>,
}

impl Deobfuscated {
    /// User videos removed over user videos total, given the true labels
    /// (`true` = injected). `None` when the persona has no user videos.
    pub fn collateral_damage(&self, labels: &[bool]) -> Result<Option<f64>> {
        if labels.len() != self.flags.len() {
            return Err(Error::Dimension {
                expected: self.flags.len(),
                got: labels.len(),
            });
        }
        let users = labels.iter().filter(|l| !**l).count();
        let removed = labels
            .iter()
            .zip(&self.flags)
            .filter(|(l, f)| !**l && **f)
            .count();
        Ok((users > 0).then(|| removed as f64 / users as f64))
    }
}

/// Removes entries scored at or above `threshold`.
pub fn deobfuscate<T: Tagger>(
    tagger: &T,
    corpus: &Corpus,
    ids: &[VideoId],
    threshold: f64,
) -> Result<Deobfuscated> {
    let scores = tagger.tag_scores(corpus, ids)?;
    let flags: Vec<bool> = scores.iter().map(|s| *s >= threshold).collect();
    let kept = ids
        .iter()
        .zip(&flags)
        .filter(|(_, f)| !**f)
        .map(|(id, _)| *id)
        .collect();
    Ok(Deobfuscated { kept, flags })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorTrainConfig {
    pub hidden: usize,
    pub fit: FitConfig,
    pub threshold: f64,
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            fit: FitConfig::default(),
            threshold: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorReport {
    pub curve: Vec<EpochLoss>,
    /// Held-out report at the configured threshold.
    pub test: EvalReport,
    pub test_indices: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StealthSample {
    pub persona: Vec<VideoId>,
    pub obfuscated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeobfSample {
    pub persona: Vec<VideoId>,
    /// `true` marks an injected entry.
    pub labels: Vec<bool>,
}

fn label(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

pub fn train_stealth_detector(
    corpus: &Corpus,
    data: &[StealthSample],
    cfg: &DetectorTrainConfig,
    seed: u64,
) -> Result<(StealthDetector, DetectorReport)> {
    if data.len() < 10 {
        return Err(Error::config("stealth detector needs at least 10 samples"));
    }
    if data.iter().any(|s| s.persona.is_empty()) {
        return Err(Error::Empty("persona"));
    }
    let shape = DetectorShape {
        d_emb: corpus.embedding_dim(),
        hidden: cfg.hidden,
    };
    let mut model = StealthDetector::new(shape, &mut rng::rng(rng::derive(seed, tag::INIT)));
    let (train, test) = split_indices(data.len(), cfg.fit.train_fraction, seed);
    let curve = fit(
        &mut model,
        &train,
        &cfg.fit,
        seed,
        |m, i| {
            let z = m.forward_train(&corpus.embed_seq(&data[i].persona));
            let (loss, g) = bce_with_logit(z, label(data[i].obfuscated));
            m.backward(g)?;
            Ok(loss)
        },
        |m| {
            let mut l = 0.0;
            for &i in &test {
                let p = m.score(corpus, &data[i].persona)?;
                let y = data[i].obfuscated;
                l -= if y {
                    p.max(1e-12).ln()
                } else {
                    (1.0 - p).max(1e-12).ln()
                };
            }
            Ok(l / test.len() as f64)
        },
    )?;
    let mut scores = Vec::with_capacity(test.len());
    let mut labels = Vec::with_capacity(test.len());
    for &i in &test {
        scores.push(model.score(corpus, &data[i].persona)?);
        labels.push(data[i].obfuscated);
    }
    let test_report = EvalReport::from_scores(&scores, &labels, cfg.threshold)?;
    Ok((
        model,
        DetectorReport {
            curve,
            test: test_report,
            test_indices: test,
        },
    ))
}

pub fn train_deobf_detector(
    corpus: &Corpus,
    data: &[DeobfSample],
    cfg: &DetectorTrainConfig,
    seed: u64,
) -> Result<(DeobfDetector, DetectorReport)> {
    if data.len() < 10 {
        return Err(Error::config(
            "de-obfuscation detector needs at least 10 samples",
        ));
    }
    if data
        .iter()
        .any(|s| s.persona.is_empty() || s.persona.len() != s.labels.len())
    {
        return Err(Error::config(
            "each sample needs one label per persona entry",
        ));
    }
    let shape = DetectorShape {
        d_emb: corpus.embedding_dim(),
        hidden: cfg.hidden,
    };
    let mut model = DeobfDetector::new(shape, &mut rng::rng(rng::derive(seed, tag::INIT)));
    let (train, test) = split_indices(data.len(), cfg.fit.train_fraction, seed);
    let curve = fit(
        &mut model,
        &train,
        &cfg.fit,
        seed,
        |m, i| {
            let s = &data[i];
            let z = m.forward_train(&corpus.embed_seq(&s.persona));
            let n = z.len() as f64;
            let mut loss = 0.0;
            let mut dz = Vec::with_capacity(z.len());
            for (zt, y) in z.iter().zip(&s.labels) {
                let (l, g) = bce_with_logit(*zt, label(*y));
                loss += l / n;
                dz.push(g / n);
            }
            m.backward(&dz)?;
            Ok(loss)
        },
        |m| {
            let mut l = 0.0;
            for &i in &test {
                let s = &data[i];
                let p = m.tag_scores(corpus, &s.persona)?;
                let n = p.len() as f64;
                for (pt, y) in p.iter().zip(&s.labels) {
                    l -= if *y {
                        pt.max(1e-12).ln()
                    } else {
                        (1.0 - pt).max(1e-12).ln()
                    } / n;
                }
            }
            Ok(l / test.len() as f64)
        },
    )?;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for &i in &test {
        scores.extend(model.tag_scores(corpus, &data[i].persona)?);
        labels.extend_from_slice(&data[i].labels);
    }
    let test_report = EvalReport::from_scores(&scores, &labels, cfg.threshold)?;
    Ok((
        model,
        DetectorReport {
            curve,
            test: test_report,
            test_indices: test,
        },
    ))
}

#[cfg(test)]
mod tests;
