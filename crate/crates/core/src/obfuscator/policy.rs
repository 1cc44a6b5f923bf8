//! Conv + LSTM trunk shared by the actor and the critic.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, VideoId};
use crate::diffnet::{
    Checkpoint, Conv1d, Dense, LayerSpec, Lstm, LstmState, LstmTrace, Param, Parameterized,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Similarity {
    /// `⟨e_t, e_i⟩`.
    InnerProduct,
    /// `scale · cos(e_t, e_i)`.
    Cosine { scale: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    /// Most recent videos fed to the convolution, zero-padded at the front.
    pub window: usize,
    pub kernel: usize,
    /// `m1`.
    pub conv_channels: usize,
    /// `m2 = m3`.
    pub hidden: usize,
    pub similarity: Similarity,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            window: 40,
            kernel: 3,
            conv_channels: 128,
            hidden: 128,
            similarity: Similarity::InnerProduct,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0
            || self.window < self.kernel
            || self.conv_channels == 0
            || self.hidden == 0
        {
            return Err(Error::config(
                "policy needs window >= kernel >= 1 and positive widths",
            ));
        }
        if let Similarity::Cosine { scale } = self.similarity {
            if !(scale > 0.0) {
                return Err(Error::config("cosine scale must be positive"));
            }
        }
        Ok(())
    }
}

/// Flattened `[window, d_emb]` input of the most recent played videos.
pub fn history_window(corpus: &Corpus, played: &[VideoId], window: usize) -> Vec<f64> {
    let d = corpus.embedding_dim();
    let mut x = vec![0.0; window * d];
    let recent = &played[played.len().saturating_sub(window)..];
    let offset = window - recent.len();
    for (j, &id) in recent.iter().enumerate() {
        x[(offset + j) * d..(offset + j + 1) * d].copy_from_slice(corpus.embedding(id));
    }
    x
}

/// Conv1d → ReLU → mean-pool (`φ¹`), LSTM cell carried across obfuscation
/// steps (`φ²`, `h`), dense output.
#[derive(Clone, Debug, PartialEq)]
pub struct Trunk {
    pub conv: Conv1d,
    pub lstm: Lstm,
    pub fc: Dense,
    window: usize,
}

/// Per-step intermediates kept for backpropagation.
#[derive(Clone, Debug)]
pub struct TrunkTape {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    trace: LstmTrace,
}

impl TrunkTape {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn hidden(&self, t: usize) -> &[f64] {
        &self.trace.hs[t]
    }
}

impl Trunk {
    pub fn new<R: Rng>(d_emb: usize, out_dim: usize, cfg: &PolicyConfig, rng: &mut R) -> Self {
        Self {
            conv: Conv1d::new(d_emb, cfg.conv_channels, cfg.kernel, rng),
            lstm: Lstm::new(cfg.conv_channels, cfg.hidden, rng),
            fc: Dense::new(cfg.hidden, out_dim, rng),
            window: cfg.window,
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        vec![self.conv.spec(), self.lstm.spec(), self.fc.spec()]
    }

    fn features(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let pre = self.conv.forward(x, self.window);
        let c = self.conv.out_dim();
        let positions = pre.len() / c;
        let mut phi = vec![0.0; c];
        for row in pre.chunks_exact(c) {
            for (p, v) in phi.iter_mut().zip(row) {
                *p += v.max(0.0);
            }
        }
        phi.iter_mut().for_each(|p| *p /= positions as f64);
        (pre, phi)
    }

    /// One inference step.
    pub fn step(&self, x: &[f64], state: &LstmState) -> (Vec<f64>, LstmState) {
        let (_, phi) = self.features(x);
        let next = self.lstm.step(&phi, state);
        (self.fc.forward(&next.h), next)
    }

    /// Runs a whole sequence of step inputs from a zero state, recording a tape.
    pub fn forward_tape(&self, xs: &[Vec<f64>]) -> (Vec<Vec<f64>>, TrunkTape) {
        let mut state = self.lstm.initial_state();
        let mut tape = TrunkTape {
            inputs: xs.to_vec(),
            pre: Vec::with_capacity(xs.len()),
            trace: LstmTrace::default(),
        };
        let mut outs = Vec::with_capacity(xs.len());
        for x in xs {
            let (pre, phi) = self.features(x);
            let (next, cache) = self.lstm.step_cached(&phi, &state);
            outs.push(self.fc.forward(&next.h));
            tape.trace.push(cache, next.h.clone());
            tape.pre.push(pre);
            state = next;
        }
        (outs, tape)
    }

    /// Accumulates gradients given `dL/d(output)` for every step of a tape.
    pub fn backward_tape(&mut self, tape: &TrunkTape, douts: &[Vec<f64>]) {
        assert_eq!(tape.len(), douts.len());
        let dh: Vec<Vec<f64>> = (0..tape.len())
            .map(|t| self.fc.backward(&tape.trace.hs[t], &douts[t]))
            .collect();
        let dphis = self.lstm.backward_seq(&tape.trace, &dh);
        let c = self.conv.out_dim();
        for (t, dphi) in dphis.iter().enumerate() {
            let pre = &tape.pre[t];
            let positions = pre.len() / c;
            let mut dpre = vec![0.0; pre.len()];
            for (p, (dp, v)) in dpre.iter_mut().zip(pre).enumerate() {
                if *v > 0.0 {
                    *dp = dphi[p % c] / positions as f64;
                }
            }
            self.conv.backward(&tape.inputs[t], self.window, &dpre);
        }
    }
}

impl Parameterized for Trunk {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.conv.params();
        v.extend(self.lstm.params());
        v.extend(self.fc.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.conv.params_mut();
        v.extend(self.lstm.params_mut());
        v.extend(self.fc.params_mut());
        v
    }
}

/// Actor: the trunk emits a target embedding `e_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNetwork {
    pub trunk: Trunk,
    pub config: PolicyConfig,
    d_emb: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct NetMeta {
    d_emb: usize,
    policy: PolicyConfig,
}

impl PolicyNetwork {
    pub const KIND: &'static str = "policy";

    pub fn new<R: Rng>(d_emb: usize, cfg: &PolicyConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            trunk: Trunk::new(d_emb, d_emb, cfg, rng),
            config: cfg.clone(),
            d_emb,
        })
    }

    pub fn d_emb(&self) -> usize {
        self.d_emb
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = NetMeta {
            d_emb: self.d_emb,
            policy: self.config.clone(),
        };
        Checkpoint::capture(Self::KIND, self.trunk.specs(), &meta, &self.trunk)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: NetMeta = ck.config(Self::KIND)?;
        let mut m = Self::new(meta.d_emb, &meta.policy, &mut crate::rng::rng(0))?;
        ck.restore_into(&mut m.trunk)?;
        Ok(m)
    }
}

/// Critic: the same trunk shape with a scalar value head.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticNetwork {
    pub trunk: Trunk,
    pub config: PolicyConfig,
    d_emb: usize,
}

impl CriticNetwork {
    pub const KIND: &'static str = "critic";

    pub fn new<R: Rng>(d_emb: usize, cfg: &PolicyConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            trunk: Trunk::new(d_emb, 1, cfg, rng),
            config: cfg.clone(),
            d_emb,
        })
    }

    /// `V(s_t)` for each step input of one episode.
    pub fn values(&self, xs: &[Vec<f64>]) -> Vec<f64> {
        self.trunk
            .forward_tape(xs)
            .0
            .into_iter()
            .map(|v| v[0])
            .collect()
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = NetMeta {
            d_emb: self.d_emb,
            policy: self.config.clone(),
        };
        Checkpoint::capture(Self::KIND, self.trunk.specs(), &meta, &self.trunk)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: NetMeta = ck.config(Self::KIND)?;
        let mut m = Self::new(meta.d_emb, &meta.policy, &mut crate::rng::rng(0))?;
        ck.restore_into(&mut m.trunk)?;
        Ok(m)
    }
}

/// Action logits for target embedding `e_t` against candidate embeddings.
pub fn action_logits(e_t: &[f64], candidates: &[&[f64]], sim: Similarity) -> Vec<f64> {
    match sim {
        Similarity::InnerProduct => candidates
            .iter()
            .map(|e| crate::diffnet::dot_product(e_t, e))
            .collect(),
        Similarity::Cosine { scale } => {
            let nt = norm(e_t).max(1e-12);
            candidates
                .iter()
                .map(|e| scale * crate::diffnet::dot_product(e_t, e) / (nt * norm(e).max(1e-12)))
                .collect()
        }
    }
}

/// `dL/de_t` from `dL/dlogits`.
pub fn action_logits_backward(
    e_t: &[f64],
    candidates: &[&[f64]],
    dlogits: &[f64],
    sim: Similarity,
) -> Vec<f64> {
    let mut de = vec![0.0; e_t.len()];
    match sim {
        Similarity::InnerProduct => {
            for (e, g) in candidates.iter().zip(dlogits) {
                for (d, x) in de.iter_mut().zip(e.iter()) {
                    *d += g * x;
                }
            }
        }
        Similarity::Cosine { scale } => {
            // d/de [⟨u, v̂⟩], u = e/|e|: (v̂ − (u·v̂) u) / |e|
            let nt = norm(e_t).max(1e-12);
            let u: Vec<f64> = e_t.iter().map(|x| x / nt).collect();
            for (e, g) in candidates.iter().zip(dlogits) {
                let ne = norm(e).max(1e-12);
                let c = crate::diffnet::dot_product(&u, e) / ne;
                for j in 0..de.len() {
                    de[j] += g * scale * (e[j] / ne - c * u[j]) / nt;
                }
            }
        }
    }
    de
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl Parameterized for PolicyNetwork {
    fn params(&self) -> Vec<&Param> {
        self.trunk.params()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.trunk.params_mut()
    }
}

impl Parameterized for CriticNetwork {
    fn params(&self) -> Vec<&Param> {
        self.trunk.params()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.trunk.params_mut()
    }
}
