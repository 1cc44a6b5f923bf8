//! Synthetic recommendation oracle and persona generators.
//!
//! Class scores are a recency-weighted affinity over the watched videos' class
//! memberships plus a log popularity prior, perturbed by Gumbel noise. The
//! noise has two parts: an epoch part that depends only on the query seed, so
//! two personas queried in the same epoch see the same system state, and a
//! query part keyed on the persona itself. The slot budget is apportioned to
//! classes by largest remainder and filled with each class's most popular
//! unused videos.

mod calibrate;
mod persona;
mod puppet;
mod traces;

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gumbel};
use serde::{Deserialize, Serialize};

use crate::apportion::largest_remainder;
use crate::corpus::{Corpus, VideoId};
use crate::error::{Error, Result};
use crate::metrics::ClassDistribution;
use crate::rng::{self, tag};

pub use calibrate::{calibrate_world, CalibrationConfig, CalibrationReport};
pub use persona::{Persona, PersonaEntry, Source};
pub use puppet::{generate_sock_puppet, generate_sock_puppets, SockPuppetConfig};
pub use traces::{export_personas, import_personas, ImportReport, TraceRecord, PERSONA_FORMAT};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    /// Per-step decay of older videos' weight in the affinity, in (0, 1].
    pub affinity_decay: f64,
    /// Scale applied to the affinity vector before the softmax.
    pub affinity_sharpness: f64,
    /// Gumbel noise scale; 0 makes the oracle deterministic.
    pub noise_temperature: f64,
    /// Fraction of the noise variance shared by all queries in one epoch.
    pub epoch_noise_share: f64,
    /// Weight of the log class-popularity prior.
    pub popularity_weight: f64,
    pub recs_per_refresh: usize,
    pub refreshes: usize,
    /// Videos above this popularity quantile are never recommended.
    pub popular_filter_quantile: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            affinity_decay: 0.95,
            affinity_sharpness: 6.0,
            noise_temperature: 1.0,
            epoch_noise_share: 0.5,
            popularity_weight: 1.0,
            recs_per_refresh: 20,
            refreshes: 50,
            popular_filter_quantile: 0.99,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.affinity_decay > 0.0 && self.affinity_decay <= 1.0) {
            return Err(Error::config("affinity_decay must be in (0, 1]"));
        }
        if !(self.affinity_sharpness >= 0.0 && self.affinity_sharpness.is_finite()) {
            return Err(Error::config("affinity_sharpness must be finite and >= 0"));
        }
        if !(self.noise_temperature >= 0.0 && self.noise_temperature.is_finite()) {
            return Err(Error::config("noise_temperature must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.epoch_noise_share) {
            return Err(Error::config("epoch_noise_share must be in [0, 1]"));
        }
        if !(self.popularity_weight >= 0.0 && self.popularity_weight.is_finite()) {
            return Err(Error::config("popularity_weight must be finite and >= 0"));
        }
        if self.recs_per_refresh == 0 || self.refreshes == 0 {
            return Err(Error::config(
                "recs_per_refresh and refreshes must be positive",
            ));
        }
        if !(self.popular_filter_quantile > 0.0 && self.popular_filter_quantile <= 1.0) {
            return Err(Error::config("popular_filter_quantile must be in (0, 1]"));
        }
        Ok(())
    }

    pub fn budget(&self) -> usize {
        self.recs_per_refresh * self.refreshes
    }
}

/// One homepage crawl: the recommended videos in display order and the class
/// distribution they induce.
#[derive(Clone, Debug, PartialEq)]
pub struct Recommendation {
    pub videos: Vec<VideoId>,
    pub distribution: ClassDistribution,
}

/// Incremental watch-history summary. Pushing videos one at a time gives the
/// same scores as a fresh query on the whole prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryState {
    acc: Vec<f64>,
    weight: f64,
    len: usize,
    hash: u64,
}

impl HistoryState {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

#[derive(Clone, Debug)]
pub struct World {
    corpus: Arc<Corpus>,
    config: WorldConfig,
    /// Per class: recommendable videos, most popular first.
    ranked: Vec<Vec<VideoId>>,
    log_prior: Vec<f64>,
    prior: ClassDistribution,
    popularity_cut: f64,
}

impl World {
    pub fn new(corpus: Arc<Corpus>, config: WorldConfig) -> Result<Self> {
        config.validate()?;
        if corpus.is_empty() {
            return Err(Error::Empty("corpus"));
        }
        let k = corpus.n_classes();
        let mut pops: Vec<f64> = corpus.videos.iter().map(|v| v.popularity).collect();
        pops.sort_by(f64::total_cmp);
        let cut = if config.popular_filter_quantile >= 1.0 {
            f64::INFINITY
        } else {
            let idx = ((pops.len() as f64) * config.popular_filter_quantile).ceil() as usize;
            pops[idx.clamp(1, pops.len()) - 1]
        };

        let mut ranked: Vec<Vec<VideoId>> = vec![Vec::new(); k];
        let mut mass = vec![0.0; k];
        for v in &corpus.videos {
            for &c in &v.class_memberships {
                mass[c] += v.popularity;
                if v.popularity <= cut {
                    ranked[c].push(v.video_id);
                }
            }
        }
        for list in &mut ranked {
            list.sort_by(|a, b| {
                corpus
                    .video(*b)
                    .popularity
                    .total_cmp(&corpus.video(*a).popularity)
                    .then(a.cmp(b))
            });
        }
        let prior = ClassDistribution::from_counts(&mass)?;
        let log_prior = prior.as_slice().iter().map(|p| p.max(1e-12).ln()).collect();
        Ok(Self {
            corpus,
            config,
            ranked,
            log_prior,
            prior,
            popularity_cut: cut,
        })
    }

    pub fn corpus(&self) -> &Arc<Corpus> {
        &self.corpus
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn n_classes(&self) -> usize {
        self.corpus.n_classes()
    }

    /// Popularity mass per class; the answer for an empty history.
    pub fn class_prior(&self) -> &ClassDistribution {
        &self.prior
    }

    /// False for unknown ids and for videos removed by the popular filter.
    pub fn is_recommendable(&self, id: VideoId) -> bool {
        self.corpus.contains(id) && self.corpus.video(id).popularity <= self.popularity_cut
    }

    pub fn empty_state(&self) -> HistoryState {
        HistoryState {
            acc: vec![0.0; self.n_classes()],
            weight: 0.0,
            len: 0,
            hash: rng::hash_ids(std::iter::empty()),
        }
    }

    pub fn push(&self, state: &mut HistoryState, id: VideoId) -> Result<()> {
        if !self.corpus.contains(id) {
            return Err(Error::config(format!("unknown video id {id}")));
        }
        let d = self.config.affinity_decay;
        state.acc.iter_mut().for_each(|a| *a *= d);
        state.weight = state.weight * d + 1.0;
        let m = &self.corpus.video(id).class_memberships;
        let share = 1.0 / m.len() as f64;
        for &c in m {
            state.acc[c] += share;
        }
        state.len += 1;
        state.hash = rng::mix64(state.hash.rotate_left(5) ^ id as u64);
        Ok(())
    }

    pub fn state_for(&self, ids: &[VideoId]) -> Result<HistoryState> {
        let mut s = self.empty_state();
        for &id in ids {
            self.push(&mut s, id)?;
        }
        Ok(s)
    }

    /// Recency-weighted class affinity of a history, on the simplex.
    pub fn affinity(&self, state: &HistoryState) -> Vec<f64> {
        if state.weight == 0.0 {
            return vec![0.0; self.n_classes()];
        }
        state.acc.iter().map(|a| a / state.weight).collect()
    }

    fn noisy_scores(&self, state: &HistoryState, seed: u64, session: u64) -> (Vec<f64>, rng::Rng) {
        let k = self.n_classes();
        let cfg = &self.config;
        let aff = self.affinity(state);
        let mut scores: Vec<f64> = (0..k)
            .map(|c| cfg.affinity_sharpness * aff[c] + cfg.popularity_weight * self.log_prior[c])
            .collect();
        let key = if session == 0 {
            rng::derive_path(seed, &[tag::QUERY, state.hash])
        } else {
            rng::derive_path(seed, &[tag::QUERY, state.hash, session])
        };
        let mut query_rng = rng::rng(key);
        if cfg.noise_temperature > 0.0 {
            let gumbel = Gumbel::new(0.0, 1.0).expect("unit scale");
            let mut epoch_rng = rng::rng(rng::derive(seed, tag::EPOCH));
            let we = cfg.epoch_noise_share.sqrt();
            let wq = (1.0 - cfg.epoch_noise_share).sqrt();
            for s in scores.iter_mut() {
                let ge: f64 = gumbel.sample(&mut epoch_rng);
                let gq: f64 = gumbel.sample(&mut query_rng);
                *s += cfg.noise_temperature * (we * ge + wq * gq);
            }
        }
        (scores, query_rng)
    }

    /// Core oracle on a history summary. Source tags are not part of the
    /// input, so user and obfuscation videos are indistinguishable here.
    pub fn recommend_state(&self, state: &HistoryState, seed: u64) -> Result<Recommendation> {
        self.recommend_session(state, seed, 0)
    }

    /// Like [`World::recommend_state`], but a nonzero `session` redraws the
    /// per-query noise while keeping the epoch noise of `seed`, so the same
    /// history can be crawled twice in one epoch.
    pub fn recommend_session(
        &self,
        state: &HistoryState,
        seed: u64,
        session: u64,
    ) -> Result<Recommendation> {
        if state.is_empty() {
            return Err(Error::Empty("persona"));
        }
        let (scores, mut query_rng) = self.noisy_scores(state, seed, session);
        let q = crate::diffnet::softmax(&scores);
        let mut videos = self.fill_slots(&q);
        videos.shuffle(&mut query_rng);
        let distribution = self.membership_distribution(&videos)?;
        Ok(Recommendation {
            videos,
            distribution,
        })
    }

    /// Class distribution only; the empty history maps to the class prior.
    pub fn distribution_state(&self, state: &HistoryState, seed: u64) -> Result<ClassDistribution> {
        self.distribution_session(state, seed, 0)
    }

    pub fn distribution_session(
        &self,
        state: &HistoryState,
        seed: u64,
        session: u64,
    ) -> Result<ClassDistribution> {
        if state.is_empty() {
            return Ok(self.prior.clone());
        }
        let (scores, _) = self.noisy_scores(state, seed, session);
        let q = crate::diffnet::softmax(&scores);
        self.membership_distribution(&self.fill_slots(&q))
    }

    pub fn recommend_ids(&self, ids: &[VideoId], seed: u64) -> Result<Recommendation> {
        self.recommend_state(&self.state_for(ids)?, seed)
    }

    pub fn recommend(&self, persona: &Persona, seed: u64) -> Result<Recommendation> {
        self.recommend_ids(&persona.video_ids(), seed)
    }

    pub fn distribution(&self, ids: &[VideoId], seed: u64) -> Result<ClassDistribution> {
        self.distribution_state(&self.state_for(ids)?, seed)
    }

    fn fill_slots(&self, q: &[f64]) -> Vec<VideoId> {
        let budget = self.config.budget();
        let alloc = largest_remainder(q, budget);
        let mut order: Vec<usize> = (0..q.len()).collect();
        order.sort_by(|&a, &b| q[b].total_cmp(&q[a]).then(a.cmp(&b)));

        let mut used = vec![false; self.corpus.len()];
        let mut cursor = vec![0usize; q.len()];
        let mut out = Vec::with_capacity(budget);
        let mut take =
            |c: usize, n: usize, out: &mut Vec<VideoId>, used: &mut Vec<bool>| -> usize {
                let list = &self.ranked[c];
                let mut got = 0;
                while got < n && cursor[c] < list.len() {
                    let id = list[cursor[c]];
                    cursor[c] += 1;
                    if !used[id as usize] {
                        used[id as usize] = true;
                        out.push(id);
                        got += 1;
                    }
                }
                got
            };
        let mut spill = 0;
        for &c in &order {
            spill += alloc[c] - take(c, alloc[c], &mut out, &mut used);
        }
        for &c in &order {
            if spill == 0 {
                break;
            }
            spill -= take(c, spill, &mut out, &mut used);
        }
        out
    }

    fn membership_distribution(&self, videos: &[VideoId]) -> Result<ClassDistribution> {
        let mut counts = vec![0.0; self.n_classes()];
        for &id in videos {
            for &c in &self.corpus.video(id).class_memberships {
                counts[c] += 1.0;
            }
        }
        ClassDistribution::from_counts(&counts)
    }
}
