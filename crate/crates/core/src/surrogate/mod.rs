//! Trainable replica of the oracle: an LSTM over the watch history and a
//! dense softmax head predicting the recommended class distribution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, VideoId};
use crate::diffnet::{
    fit, kl_loss, split_indices, Checkpoint, Dense, EpochLoss, FitConfig, KlDirection, Lstm,
    LstmState, LstmTrace, Param, Parameterized,
};
use crate::error::{Error, Result};
use crate::metrics::{kl_divergence, ClassDistribution};
use crate::rng::{self, tag};

pub const CHECKPOINT_KIND: &str = "surrogate";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurrogateShape {
    pub d_emb: usize,
    pub hidden: usize,
    pub n_classes: usize,
}

#[derive(Clone, Debug)]
pub struct SurrogateNetwork {
    pub lstm: Lstm,
    pub head: Dense,
    tape: Option<(LstmTrace, Vec<f64>)>,
}

impl SurrogateNetwork {
    pub fn new<R: Rng>(shape: SurrogateShape, rng: &mut R) -> Self {
        Self {
            lstm: Lstm::new(shape.d_emb, shape.hidden, rng),
            head: Dense::new(shape.hidden, shape.n_classes, rng),
            tape: None,
        }
    }

    /// All-zero parameters; predicts the uniform distribution.
    pub fn zeros(shape: SurrogateShape) -> Self {
        Self {
            lstm: Lstm::zeros(shape.d_emb, shape.hidden),
            head: Dense::zeros(shape.hidden, shape.n_classes),
            tape: None,
        }
    }

    pub fn shape(&self) -> SurrogateShape {
        SurrogateShape {
            d_emb: self.lstm.in_dim(),
            hidden: self.lstm.hidden(),
            n_classes: self.head.out_dim(),
        }
    }

    pub fn logits(&self, embs: &[&[f64]]) -> Vec<f64> {
        self.head.forward(&self.lstm.encode(embs))
    }

    pub fn predict(&self, embs: &[&[f64]]) -> Result<ClassDistribution> {
        if embs.is_empty() {
            return Err(Error::Empty("persona"));
        }
        Ok(ClassDistribution::from_logits(&self.logits(embs)))
    }

    pub fn predict_ids(&self, corpus: &Corpus, ids: &[VideoId]) -> Result<ClassDistribution> {
        self.predict(&corpus.embed_seq(ids))
    }

    /// Forward pass that records what [`Self::backward`] needs.
    pub fn forward_train(&mut self, embs: &[&[f64]]) -> Vec<f64> {
        let trace = self.lstm.forward_seq(embs);
        let h = trace
            .last_hidden()
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; self.lstm.hidden()]);
        let logits = self.head.forward(&h);
        self.tape = Some((trace, h));
        logits
    }

    /// Accumulates parameter gradients for `dL/dlogits` of the last
    /// [`Self::forward_train`] call.
    pub fn backward(&mut self, dlogits: &[f64]) -> Result<()> {
        let (trace, h) = self.tape.take().ok_or(Error::NoForward)?;
        let dh = self.head.backward(&h, dlogits);
        self.lstm.backward_last(&trace, &dh);
        Ok(())
    }

    pub fn cursor(&self) -> SurrogateCursor {
        SurrogateCursor {
            state: self.lstm.initial_state(),
            len: 0,
        }
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::capture(
            CHECKPOINT_KIND,
            vec![self.lstm.spec(), self.head.spec()],
            &self.shape(),
            self,
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let shape: SurrogateShape = ck.config(CHECKPOINT_KIND)?;
        let mut m = Self::zeros(shape);
        ck.restore_into(&mut m)?;
        Ok(m)
    }
}

impl Parameterized for SurrogateNetwork {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.lstm.params();
        v.extend(self.head.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.lstm.params_mut();
        v.extend(self.head.params_mut());
        v
    }
}

/// Incremental prediction along a growing history.
#[derive(Clone, Debug)]
pub struct SurrogateCursor {
    state: LstmState,
    len: usize,
}

impl SurrogateCursor {
    pub fn push(&mut self, model: &SurrogateNetwork, emb: &[f64]) {
        self.state = model.lstm.step(emb, &self.state);
        self.len += 1;
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn distribution(&self, model: &SurrogateNetwork) -> ClassDistribution {
        ClassDistribution::from_logits(&model.head.forward(&self.state.h))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSample {
    pub persona: Vec<VideoId>,
    pub target: ClassDistribution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateTrainConfig {
    pub hidden: usize,
    pub fit: FitConfig,
    pub kl_direction: KlDirection,
}

impl Default for SurrogateTrainConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            fit: FitConfig::default(),
            kl_direction: KlDirection::TargetToPrediction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateReport {
    pub curve: Vec<EpochLoss>,
    /// Held-out mean `KL(C^u ‖ prediction)`.
    pub test_loss: f64,
    /// Same split, predicting the mean training target everywhere.
    pub mean_baseline_loss: f64,
    pub uniform_baseline_loss: f64,
    pub n_train: usize,
    pub n_test: usize,
}

fn mean_kl<F: Fn(usize) -> Result<ClassDistribution>>(
    data: &[SurrogateSample],
    idx: &[usize],
    pred: F,
) -> Result<f64> {
    let mut s = 0.0;
    for &i in idx {
        s += kl_divergence(&data[i].target, &pred(i)?)?;
    }
    Ok(s / idx.len() as f64)
}

/// Supervised training on `(persona, C^u)` pairs with an 80/20 split.
pub fn train_surrogate(
    corpus: &Corpus,
    data: &[SurrogateSample],
    cfg: &SurrogateTrainConfig,
    seed: u64,
) -> Result<(SurrogateNetwork, SurrogateReport)> {
    if data.len() < 10 {
        return Err(Error::config(format!(
            "surrogate needs at least 10 samples, got {}",
            data.len()
        )));
    }
    let k = corpus.n_classes();
    if let Some(bad) = data
        .iter()
        .find(|s| s.persona.is_empty() || s.target.len() != k)
    {
        return Err(Error::config(format!(
            "malformed sample (persona len {}, K {})",
            bad.persona.len(),
            bad.target.len()
        )));
    }
    let shape = SurrogateShape {
        d_emb: corpus.embedding_dim(),
        hidden: cfg.hidden,
        n_classes: k,
    };
    let mut model = SurrogateNetwork::new(shape, &mut rng::rng(rng::derive(seed, tag::INIT)));
    let (train, test) = split_indices(data.len(), cfg.fit.train_fraction, seed);

    let dir = cfg.kl_direction;
    let eval =
        |m: &SurrogateNetwork| mean_kl(data, &test, |i| m.predict_ids(corpus, &data[i].persona));
    let curve = fit(
        &mut model,
        &train,
        &cfg.fit,
        seed,
        |m, i| {
            let logits = m.forward_train(&corpus.embed_seq(&data[i].persona));
            let (loss, g) = kl_loss(&logits, data[i].target.as_slice(), dir);
            m.backward(&g)?;
            Ok(loss)
        },
        eval,
    )?;

    let mean_target = ClassDistribution::mean(train.iter().map(|&i| &data[i].target))?;
    let report = SurrogateReport {
        test_loss: curve.last().map(|c| c.test_loss).unwrap_or(f64::NAN),
        curve,
        mean_baseline_loss: mean_kl(data, &test, |_| Ok(mean_target.clone()))?,
        uniform_baseline_loss: mean_kl(data, &test, |_| Ok(ClassDistribution::uniform(k)))?,
        n_train: train.len(),
        n_test: test.len(),
    };
    Ok((model, report))
}
