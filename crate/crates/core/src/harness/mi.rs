//! Exact information accounting on a world small enough to enumerate.
//!
//! Each video belongs to one class. A persona is a uniform random sequence of
//! `persona_len` videos. Before each user video the obfuscator injects, with
//! probability α, one video drawn uniformly from `obfuscation_videos`. The
//! recommender returns the single class maximizing
//! `share_k(V) + e_k + q_k`, ties to the lower index, where `e_k ∈ {0, a}` is
//! epoch noise shared by the `V^u` and `V^o` crawls and `q_k ∈ {0, b}` is
//! per-crawl query noise, each a fair coin per class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::JointTable;

pub const MAX_VIDEOS: usize = 4;
pub const MAX_CLASSES: usize = 3;
pub const MAX_PERSONA_LEN: usize = 3;

// Variable order in the joint table.
const VU: usize = 0;
const VO: usize = 1;
const CO: usize = 2;
const CU: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TinyWorldConfig {
    /// Class of each video.
    pub video_classes: Vec<usize>,
    pub n_classes: usize,
    pub persona_len: usize,
    pub alpha: f64,
    pub obfuscation_videos: Vec<usize>,
    /// `a`: magnitude of the shared epoch noise.
    pub epoch_noise: f64,
    /// `b`: magnitude of the per-crawl query noise.
    pub query_noise: f64,
}

impl Default for TinyWorldConfig {
    fn default() -> Self {
        Self {
            video_classes: vec![0, 1, 2, 0],
            n_classes: 3,
            persona_len: 3,
            alpha: 0.3,
            obfuscation_videos: vec![0, 1, 2, 3],
            epoch_noise: 0.4,
            query_noise: 0.4,
        }
    }
}

impl TinyWorldConfig {
    /// No noise and no injections.
    pub fn deterministic() -> Self {
        Self {
            alpha: 0.0,
            epoch_noise: 0.0,
            query_noise: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.video_classes.len();
        if n == 0 || n > MAX_VIDEOS {
            return Err(Error::config(format!(
                "tiny world needs 1..={MAX_VIDEOS} videos"
            )));
        }
        if self.n_classes == 0 || self.n_classes > MAX_CLASSES {
            return Err(Error::config(format!(
                "tiny world needs 1..={MAX_CLASSES} classes"
            )));
        }
        if self.persona_len == 0 || self.persona_len > MAX_PERSONA_LEN {
            return Err(Error::config(format!(
                "persona length must be in 1..={MAX_PERSONA_LEN}"
            )));
        }
        if self.video_classes.iter().any(|c| *c >= self.n_classes) {
            return Err(Error::config("video class out of range"));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::config("alpha must be in [0, 1)"));
        }
        if self.alpha > 0.0
            && (self.obfuscation_videos.is_empty()
                || self.obfuscation_videos.iter().any(|v| *v >= n))
        {
            return Err(Error::config(
                "obfuscation videos must be a nonempty subset",
            ));
        }
        if !(self.epoch_noise >= 0.0 && self.query_noise >= 0.0) {
            return Err(Error::config("noise magnitudes must be >= 0"));
        }
        Ok(())
    }

    fn shares(&self, seq: &[usize]) -> Vec<f64> {
        let mut s = vec![0.0; self.n_classes];
        for &v in seq {
            s[self.video_classes[v]] += 1.0 / seq.len() as f64;
        }
        s
    }
}

/// Every pattern of independent fair coins per class, each worth `mag`.
fn coin_patterns(k: usize, mag: f64) -> Vec<Vec<f64>> {
    if mag == 0.0 {
        return vec![vec![0.0; k]];
    }
    (0..1u32 << k)
        .map(|bits| {
            (0..k)
                .map(|c| if bits >> c & 1 == 1 { mag } else { 0.0 })
                .collect()
        })
        .collect()
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

fn encode(seq: &[usize], base: usize) -> u32 {
    seq.iter()
        .rev()
        .fold(0u32, |acc, &v| acc * (base as u32 + 1) + v as u32 + 1)
}

/// Information quantities in nats, plus the identity residuals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiReport {
    pub config: TinyWorldConfig,
    pub cells: usize,
    pub h_c_u: f64,
    /// `I(C^o,V^o,V^u;C^u)`.
    pub i_all: f64,
    /// `I(C^o,V^o;C^u)`.
    pub i_co_vo: f64,
    /// `I(V^u;C^u|C^o,V^o)`.
    pub i_vu_given_co_vo: f64,
    /// `|I(C^o,V^o,V^u;C^u) − I(C^o,V^o;C^u) − I(V^u;C^u|C^o,V^o)|`.
    pub chain_residual: f64,
    /// `I(V^u;C^u)`.
    pub i_vu: f64,
    /// `I(C^o;C^u|V^u)`.
    pub i_co_given_vu: f64,
    /// `I(V^o;C^u|C^o,V^u)`.
    pub i_vo_given_co_vu: f64,
    /// `|I(V^u,V^o,C^o;C^u) − I(V^u;C^u) − I(C^o;C^u|V^u) − I(V^o;C^u|C^o,V^u)|`.
    pub expanded_chain_residual: f64,
    /// Expected log loss of the Bayes predictor of `C^u` from `(C^o,V^o,V^u)`.
    pub bayes_loss_with_user: f64,
    /// The same from `(C^o,V^o)` only.
    pub bayes_loss_without_user: f64,
}

impl MiReport {
    /// The secret input strictly adds information.
    pub fn user_history_helps(&self, tol: f64) -> bool {
        self.i_all - self.i_co_vo > tol
    }

    /// The obfuscated side strictly adds information beyond `V^u`.
    pub fn obfuscated_side_helps(&self, tol: f64) -> bool {
        self.i_all - self.i_vu > tol
    }
}

/// Exact joint distribution of `(V^u, V^o, C^o, C^u)`.
pub fn tiny_world_joint(cfg: &TinyWorldConfig) -> Result<JointTable> {
    cfg.validate()?;
    let n = cfg.video_classes.len();
    let len = cfg.persona_len;
    let k = cfg.n_classes;
    let epochs = coin_patterns(k, cfg.epoch_noise);
    let queries = coin_patterns(k, cfg.query_noise);
    let p_noise = 1.0 / (epochs.len() * queries.len() * queries.len()) as f64;
    let p_user = 1.0 / (n as f64).powi(len as i32);
    // Per-slot options: no injection, or one of the obfuscation videos.
    let mut options: Vec<(Option<usize>, f64)> = vec![(None, 1.0 - cfg.alpha)];
    if cfg.alpha > 0.0 {
        let m = cfg.obfuscation_videos.len() as f64;
        options.extend(
            cfg.obfuscation_videos
                .iter()
                .map(|&v| (Some(v), cfg.alpha / m)),
        );
    }

    let mut table = JointTable::new(4);
    let mut v_u = vec![0usize; len];
    for u_code in 0..n.pow(len as u32) {
        let mut c = u_code;
        for slot in v_u.iter_mut() {
            *slot = c % n;
            c /= n;
        }
        let s_u = cfg.shares(&v_u);
        for inj_code in 0..options.len().pow(len as u32) {
            let mut c = inj_code;
            let mut p_inj = 1.0;
            let mut v_o = Vec::with_capacity(2 * len);
            for &u in &v_u {
                let (opt, p) = options[c % options.len()];
                c /= options.len();
                p_inj *= p;
                if let Some(v) = opt {
                    v_o.push(v);
                }
                v_o.push(u);
            }
            if p_inj == 0.0 {
                continue;
            }
            let s_o = cfg.shares(&v_o);
            let mut pair = vec![0.0; k * k];
            for e in &epochs {
                for qu in &queries {
                    let cu = argmax(&(0..k).map(|j| s_u[j] + e[j] + qu[j]).collect::<Vec<_>>());
                    for qo in &queries {
                        let co = argmax(&(0..k).map(|j| s_o[j] + e[j] + qo[j]).collect::<Vec<_>>());
                        pair[co * k + cu] += p_noise;
                    }
                }
            }
            let (vu_code, vo_code) = (encode(&v_u, n), encode(&v_o, n));
            for co in 0..k {
                for cu in 0..k {
                    let p = pair[co * k + cu];
                    if p > 0.0 {
                        table.add(
                            vec![vu_code, vo_code, co as u32, cu as u32],
                            p_user * p_inj * p,
                        );
                    }
                }
            }
        }
    }
    table.validate()?;
    Ok(table)
}

/// Enumerates the tiny world and evaluates both chain-rule decompositions.
pub fn mi_tiny_world_study(cfg: &TinyWorldConfig) -> Result<MiReport> {
    let t = tiny_world_joint(cfg)?;
    let i_all = t.mutual_information(&[CO, VO, VU], &[CU]);
    let i_co_vo = t.mutual_information(&[CO, VO], &[CU]);
    let i_vu_given_co_vo = t.conditional_mutual_information(&[VU], &[CU], &[CO, VO]);
    let i_vu = t.mutual_information(&[VU], &[CU]);
    let i_co_given_vu = t.conditional_mutual_information(&[CO], &[CU], &[VU]);
    let i_vo_given_co_vu = t.conditional_mutual_information(&[VO], &[CU], &[CO, VU]);
    Ok(MiReport {
        config: cfg.clone(),
        cells: t.len(),
        h_c_u: t.entropy(&[CU]),
        i_all,
        i_co_vo,
        i_vu_given_co_vo,
        chain_residual: (i_all - i_co_vo - i_vu_given_co_vo).abs(),
        i_vu,
        i_co_given_vu,
        i_vo_given_co_vu,
        expanded_chain_residual: (i_all - i_vu - i_co_given_vu - i_vo_given_co_vu).abs(),
        bayes_loss_with_user: t.bayes_log_loss(&[CU], &[CO, VO, VU]),
        bayes_loss_without_user: t.bayes_log_loss(&[CU], &[CO, VO]),
    })
}
