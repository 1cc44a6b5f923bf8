//! Local denoiser: recovers `C^u` from the user history, the obfuscated history
//! and the recommendations served for it.

mod repopulate;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, VideoId};
use crate::diffnet::{
    fit, kl_loss, split_indices, Checkpoint, Dense, EpochLoss, FitConfig, KlDirection, Lstm,
    LstmTrace, Param, Parameterized,
};
use crate::error::{Error, Result};
use crate::metrics::{kl_divergence, utility_gain_norm, ClassDistribution, KL_FLOOR};
use crate::rng::{self, tag};
use crate::surrogate::SurrogateNetwork;

pub use repopulate::{repopulate, Repopulation};

pub const CHECKPOINT_KIND: &str = "denoiser";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserShape {
    pub d_emb: usize,
    pub hidden: usize,
    pub n_classes: usize,
}

/// `C^o` enters as floored log-probabilities.
pub fn encode_c_o(c_o: &ClassDistribution) -> Vec<f64> {
    c_o.as_slice()
        .iter()
        .map(|p| p.max(KL_FLOOR).ln())
        .collect()
}

/// LSTM over `V^u`, LSTM over `V^o`, dense layer over `C^o`, concatenated
/// into a softmax head.
#[derive(Clone, Debug)]
pub struct DenoiserNetwork {
    pub lstm_u: Lstm,
    pub lstm_o: Lstm,
    pub fc_c: Dense,
    pub head: Dense,
    shape: DenoiserShape,
    tape: Option<Tape>,
}

#[derive(Clone, Debug)]
struct Tape {
    trace_u: LstmTrace,
    trace_o: LstmTrace,
    c_in: Vec<f64>,
    features: Vec<f64>,
}

impl DenoiserNetwork {
    pub fn new<R: Rng>(shape: DenoiserShape, rng: &mut R) -> Self {
        let n = shape.hidden;
        Self {
            lstm_u: Lstm::new(shape.d_emb, n, rng),
            lstm_o: Lstm::new(shape.d_emb, n, rng),
            fc_c: Dense::new(shape.n_classes, n, rng),
            head: Dense::new(3 * n, shape.n_classes, rng),
            shape,
            tape: None,
        }
    }

    pub fn zeros(shape: DenoiserShape) -> Self {
        let n = shape.hidden;
        Self {
            lstm_u: Lstm::zeros(shape.d_emb, n),
            lstm_o: Lstm::zeros(shape.d_emb, n),
            fc_c: Dense::zeros(shape.n_classes, n),
            head: Dense::zeros(3 * n, shape.n_classes),
            shape,
            tape: None,
        }
    }

    pub fn shape(&self) -> DenoiserShape {
        self.shape
    }

    fn check(&self, v_u: &[&[f64]], v_o: &[&[f64]], c_o: &ClassDistribution) -> Result<()> {
        if v_o.is_empty() {
            return Err(Error::Empty("obfuscated persona"));
        }
        if c_o.len() != self.shape.n_classes {
            return Err(Error::Dimension {
                expected: self.shape.n_classes,
                got: c_o.len(),
            });
        }
        if let Some(e) = v_u.iter().chain(v_o).find(|e| e.len() != self.shape.d_emb) {
            return Err(Error::Dimension {
                expected: self.shape.d_emb,
                got: e.len(),
            });
        }
        Ok(())
    }

    fn features(&self, v_u: &[&[f64]], v_o: &[&[f64]], c_in: &[f64]) -> Vec<f64> {
        let mut f = self.lstm_u.encode(v_u);
        f.extend(self.lstm_o.encode(v_o));
        f.extend(self.fc_c.forward(c_in));
        f
    }

    pub fn logits(
        &self,
        v_u: &[&[f64]],
        v_o: &[&[f64]],
        c_o: &ClassDistribution,
    ) -> Result<Vec<f64>> {
        self.check(v_u, v_o, c_o)?;
        Ok(self
            .head
            .forward(&self.features(v_u, v_o, &encode_c_o(c_o))))
    }

    pub fn predict(
        &self,
        v_u: &[&[f64]],
        v_o: &[&[f64]],
        c_o: &ClassDistribution,
    ) -> Result<ClassDistribution> {
        Ok(ClassDistribution::from_logits(&self.logits(v_u, v_o, c_o)?))
    }

    pub fn forward_train(
        &mut self,
        v_u: &[&[f64]],
        v_o: &[&[f64]],
        c_o: &ClassDistribution,
    ) -> Result<Vec<f64>> {
        self.check(v_u, v_o, c_o)?;
        let c_in = encode_c_o(c_o);
        let trace_u = self.lstm_u.forward_seq(v_u);
        let trace_o = self.lstm_o.forward_seq(v_o);
        let zeros = vec![0.0; self.shape.hidden];
        let mut features = trace_u.last_hidden().unwrap_or(&zeros).to_vec();
        features.extend_from_slice(trace_o.last_hidden().unwrap_or(&zeros));
        features.extend(self.fc_c.forward(&c_in));
        let logits = self.head.forward(&features);
        self.tape = Some(Tape {
            trace_u,
            trace_o,
            c_in,
            features,
        });
        Ok(logits)
    }

    pub fn backward(&mut self, dlogits: &[f64]) -> Result<()> {
        let tape = self.tape.take().ok_or(Error::NoForward)?;
        let n = self.shape.hidden;
        let df = self.head.backward(&tape.features, dlogits);
        if !tape.trace_u.is_empty() {
            self.lstm_u.backward_last(&tape.trace_u, &df[..n]);
        }
        self.lstm_o.backward_last(&tape.trace_o, &df[n..2 * n]);
        self.fc_c.backward(&tape.c_in, &df[2 * n..]);
        Ok(())
    }

    fn specs(&self) -> Vec<crate::diffnet::LayerSpec> {
        vec![
            self.lstm_u.spec(),
            self.lstm_o.spec(),
            self.fc_c.spec(),
            self.head.spec(),
        ]
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::capture(CHECKPOINT_KIND, self.specs(), &self.shape, self)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let shape: DenoiserShape = ck.config(CHECKPOINT_KIND)?;
        let mut m = Self::zeros(shape);
        ck.restore_into(&mut m)?;
        Ok(m)
    }
}

impl PartialEq for DenoiserNetwork {
    fn eq(&self, o: &Self) -> bool {
        self.shape == o.shape
            && self.lstm_u == o.lstm_u
            && self.lstm_o == o.lstm_o
            && self.fc_c == o.fc_c
            && self.head == o.head
    }
}

impl Parameterized for DenoiserNetwork {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.lstm_u.params();
        v.extend(self.lstm_o.params());
        v.extend(self.fc_c.params());
        v.extend(self.head.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.lstm_u.params_mut();
        v.extend(self.lstm_o.params_mut());
        v.extend(self.fc_c.params_mut());
        v.extend(self.head.params_mut());
        v
    }
}

/// True when `user` is the subsequence of `obfuscated` left after deleting
/// entries.
pub fn is_subsequence(user: &[VideoId], obfuscated: &[VideoId]) -> bool {
    let mut it = obfuscated.iter();
    user.iter().all(|u| it.any(|o| o == u))
}

/// `Ĉ^u` for one obfuscated persona. `v_u` must be a subsequence of `v_o`.
pub fn denoise(
    model: &DenoiserNetwork,
    corpus: &Corpus,
    v_u: &[VideoId],
    v_o: &[VideoId],
    c_o: &ClassDistribution,
) -> Result<ClassDistribution> {
    if !is_subsequence(v_u, v_o) {
        return Err(Error::config(
            "user persona is not a subsequence of the obfuscated persona",
        ));
    }
    model.predict(&corpus.embed_seq(v_u), &corpus.embed_seq(v_o), c_o)
}

/// Surrogate prediction from `V^u` alone.
pub fn surro_den(
    surrogate: &SurrogateNetwork,
    corpus: &Corpus,
    v_u: &[VideoId],
) -> Result<ClassDistribution> {
    surrogate.predict_ids(corpus, v_u)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserSample {
    pub user: Vec<VideoId>,
    pub obfuscated: Vec<VideoId>,
    pub c_o: ClassDistribution,
    pub c_u: ClassDistribution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserTrainConfig {
    pub hidden: usize,
    pub fit: FitConfig,
    pub kl_direction: KlDirection,
}

impl Default for DenoiserTrainConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            fit: FitConfig::default(),
            kl_direction: KlDirection::TargetToPrediction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserReport {
    pub curve: Vec<EpochLoss>,
    /// Held-out `E KL(Ĉ^u ‖ C^u)`.
    pub utility_loss: f64,
    /// Held-out `E KL(C^o ‖ C^u)`.
    pub privacy: f64,
    pub utility_gain_norm: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub test_indices: Vec<usize>,
}

/// Mean `KL(Ĉ ‖ C^u)` and `KL(C^o ‖ C^u)` over `idx`.
pub fn utility_on<F: Fn(&DenoiserSample) -> Result<ClassDistribution>>(
    data: &[DenoiserSample],
    idx: &[usize],
    pred: F,
) -> Result<(f64, f64)> {
    if idx.is_empty() {
        return Err(Error::Empty("evaluation samples"));
    }
    let (mut u, mut p) = (0.0, 0.0);
    for &i in idx {
        let s = &data[i];
        u += kl_divergence(&pred(s)?, &s.c_u)?;
        p += kl_divergence(&s.c_o, &s.c_u)?;
    }
    let n = idx.len() as f64;
    Ok((u / n, p / n))
}

/// Supervised training with an 80/20 split; `d_min` normalizes the gain.
pub fn train_denoiser(
    corpus: &Corpus,
    data: &[DenoiserSample],
    cfg: &DenoiserTrainConfig,
    d_min: f64,
    seed: u64,
) -> Result<(DenoiserNetwork, DenoiserReport)> {
    if data.len() < 10 {
        return Err(Error::config(format!(
            "denoiser needs at least 10 samples, got {}",
            data.len()
        )));
    }
    let k = corpus.n_classes();
    for s in data {
        if s.c_o.len() != k || s.c_u.len() != k || s.obfuscated.is_empty() {
            return Err(Error::config("malformed denoiser sample"));
        }
        if !is_subsequence(&s.user, &s.obfuscated) {
            return Err(Error::config(
                "denoiser sample violates the subsequence invariant",
            ));
        }
    }
    let shape = DenoiserShape {
        d_emb: corpus.embedding_dim(),
        hidden: cfg.hidden,
        n_classes: k,
    };
    let mut model = DenoiserNetwork::new(shape, &mut rng::rng(rng::derive(seed, tag::INIT)));
    let (train, test) = split_indices(data.len(), cfg.fit.train_fraction, seed);
    let dir = cfg.kl_direction;
    let predict = |m: &DenoiserNetwork, s: &DenoiserSample| {
        denoise(m, corpus, &s.user, &s.obfuscated, &s.c_o)
    };

    let curve = fit(
        &mut model,
        &train,
        &cfg.fit,
        seed,
        |m, i| {
            let s = &data[i];
            let logits = m.forward_train(
                &corpus.embed_seq(&s.user),
                &corpus.embed_seq(&s.obfuscated),
                &s.c_o,
            )?;
            let (loss, g) = kl_loss(&logits, s.c_u.as_slice(), dir);
            m.backward(&g)?;
            Ok(loss)
        },
        |m| {
            let mut l = 0.0;
            for &i in &test {
                l += kl_divergence(&data[i].c_u, &predict(m, &data[i])?)?;
            }
            Ok(l / test.len() as f64)
        },
    )?;

    let (utility_loss, privacy) = utility_on(data, &test, |s| predict(&model, s))?;
    let report = DenoiserReport {
        curve,
        utility_loss,
        privacy,
        utility_gain_norm: utility_gain_norm(privacy, utility_loss, d_min),
        n_train: train.len(),
        n_test: test.len(),
        test_indices: test,
    };
    Ok((model, report))
}
