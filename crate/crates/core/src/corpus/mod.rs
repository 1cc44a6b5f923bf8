//! Synthetic video universe and its fixed-dimension embeddings.
//!
//! Every video has a primary class drawn from the configured class prior and,
//! with some probability, one secondary class. Its synthetic transcript mixes
//! the topic vocabularies of its classes with Dirichlet weights, so videos that
//! share classes share tokens and land close together after feature hashing.

mod bank;
mod embed;
mod io;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Dirichlet, Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, derive};

pub use bank::{build_bank, BankBuild, BankConfig, VideoBank};
pub use embed::{embed_video, hash_bucket, Embedding, EmbeddingTable, D_META, N_CATEGORIES};
pub use io::{load_corpus, save_corpus, CORPUS_FORMAT};

pub type VideoId = u32;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoClass {
    pub class_id: usize,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: VideoId,
    pub primary_class: usize,
    /// Sorted, non-empty, contains `primary_class`.
    pub class_memberships: Vec<usize>,
    pub category_id: u8,
    pub popularity: f64,
    pub rating: f64,
    pub tokens: Vec<u32>,
}

impl VideoRecord {
    pub fn in_class(&self, k: usize) -> bool {
        self.class_memberships.binary_search(&k).is_ok()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub n_videos: usize,
    pub n_classes: usize,
    /// Primary-class prior; uniform when absent.
    pub class_prior: Option<Vec<f64>>,
    pub secondary_membership_prob: f64,
    pub vocab_size: u32,
    pub topic_words: usize,
    pub tokens_min: usize,
    pub tokens_max: usize,
    /// Fraction of tokens drawn from class topics rather than background.
    pub topic_strength: f64,
    pub popularity_log_sigma: f64,
    pub d_content: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_videos: 10_000,
            n_classes: 16,
            class_prior: None,
            secondary_membership_prob: 0.3,
            vocab_size: 4096,
            topic_words: 48,
            tokens_min: 30,
            tokens_max: 90,
            topic_strength: 0.75,
            popularity_log_sigma: 0.8,
            d_content: 32,
        }
    }
}

impl CorpusConfig {
    pub fn prior(&self) -> Result<Vec<f64>> {
        let k = self.n_classes;
        match &self.class_prior {
            None => Ok(vec![1.0 / k as f64; k]),
            Some(p) => {
                if p.len() != k {
                    return Err(Error::config(format!(
                        "class_prior has {} entries, need {k}",
                        p.len()
                    )));
                }
                let s: f64 = p.iter().sum();
                if p.iter().any(|v| !(*v >= 0.0)) || !(s > 0.0) {
                    return Err(Error::config(
                        "class_prior must be non-negative with positive sum",
                    ));
                }
                Ok(p.iter().map(|v| v / s).collect())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::config("need at least 2 classes"));
        }
        if self.n_videos < self.n_classes {
            return Err(Error::config(format!(
                "n_videos ({}) must be at least the class count ({})",
                self.n_videos, self.n_classes
            )));
        }
        self.prior()?;
        if self.tokens_min == 0 || self.tokens_max < self.tokens_min {
            return Err(Error::config(
                "token length range must satisfy 1 <= min <= max",
            ));
        }
        if self.vocab_size == 0
            || self.topic_words == 0
            || self.topic_words as u32 > self.vocab_size
        {
            return Err(Error::config("topic_words must be in 1..=vocab_size"));
        }
        if self.d_content == 0 {
            return Err(Error::config("d_content must be positive"));
        }
        if !(0.0..=1.0).contains(&self.secondary_membership_prob)
            || !(0.0..=1.0).contains(&self.topic_strength)
        {
            return Err(Error::config("probabilities must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Mean and population standard deviation of the standardized metadata.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub popularity_mean: f64,
    pub popularity_std: f64,
    pub rating_mean: f64,
    pub rating_std: f64,
}

impl CorpusStats {
    pub fn compute(videos: &[VideoRecord]) -> Result<Self> {
        if videos.is_empty() {
            return Err(Error::Empty("corpus"));
        }
        let n = videos.len() as f64;
        let mean = |f: &dyn Fn(&VideoRecord) -> f64| videos.iter().map(f).sum::<f64>() / n;
        let pm = mean(&|v| v.popularity);
        let rm = mean(&|v| v.rating);
        let ps = (videos
            .iter()
            .map(|v| (v.popularity - pm).powi(2))
            .sum::<f64>()
            / n)
            .sqrt();
        let rs = (videos.iter().map(|v| (v.rating - rm).powi(2)).sum::<f64>() / n).sqrt();
        let s = Self {
            popularity_mean: pm,
            popularity_std: ps,
            rating_mean: rm,
            rating_std: rs,
        };
        s.check()?;
        Ok(s)
    }

    pub(crate) fn check(&self) -> Result<()> {
        if !(self.popularity_std > 0.0) {
            return Err(Error::Degenerate("popularity has zero spread"));
        }
        if !(self.rating_std > 0.0) {
            return Err(Error::Degenerate("rating has zero spread"));
        }
        Ok(())
    }
}

/// The generated universe: records, their statistics and embeddings.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub seed: u64,
    pub classes: Vec<VideoClass>,
    pub videos: Vec<VideoRecord>,
    pub stats: CorpusStats,
    pub embeddings: EmbeddingTable,
}

impl Corpus {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn video(&self, id: VideoId) -> &VideoRecord {
        &self.videos[id as usize]
    }

    pub fn contains(&self, id: VideoId) -> bool {
        (id as usize) < self.videos.len()
    }

    pub fn embedding(&self, id: VideoId) -> &[f64] {
        self.embeddings.row(id)
    }

    pub fn embedding_dim(&self) -> usize {
        self.embeddings.dim()
    }

    /// Embedding rows for a sequence of videos.
    pub fn embed_seq(&self, ids: &[VideoId]) -> Vec<&[f64]> {
        ids.iter().map(|&id| self.embedding(id)).collect()
    }

    /// Assembles a corpus from records, recomputing statistics and embeddings.
    pub fn from_records(config: CorpusConfig, seed: u64, videos: Vec<VideoRecord>) -> Result<Self> {
        config.validate()?;
        for (i, v) in videos.iter().enumerate() {
            if v.video_id as usize != i {
                return Err(Error::config(format!(
                    "video ids must be dense; record {i} has id {}",
                    v.video_id
                )));
            }
            if v.class_memberships.is_empty()
                || v.class_memberships.iter().any(|k| *k >= config.n_classes)
            {
                return Err(Error::config(format!(
                    "video {i} has invalid class memberships"
                )));
            }
        }
        let stats = CorpusStats::compute(&videos)?;
        let embeddings = EmbeddingTable::build(&videos, &stats, config.d_content)?;
        let classes = (0..config.n_classes)
            .map(|k| VideoClass {
                class_id: k,
                label: format!("class-{k:03}"),
            })
            .collect();
        Ok(Self {
            config,
            seed,
            classes,
            videos,
            stats,
            embeddings,
        })
    }
}

/// Topic vocabulary of each class.
fn class_topics(cfg: &CorpusConfig, seed: u64) -> Vec<Vec<u32>> {
    let mut r = rng::rng(derive(seed, 0x7091c));
    (0..cfg.n_classes)
        .map(|_| {
            sample(&mut r, cfg.vocab_size as usize, cfg.topic_words)
                .into_iter()
                .map(|w| w as u32)
                .collect()
        })
        .collect()
}

fn sample_categorical<R: Rng>(weights: &[f64], r: &mut R) -> usize {
    let u: f64 = r.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

fn generate_video(
    id: usize,
    cfg: &CorpusConfig,
    prior: &[f64],
    topics: &[Vec<u32>],
    seed: u64,
) -> VideoRecord {
    let mut r = rng::rng(derive(seed, id as u64));
    let primary = sample_categorical(prior, &mut r);
    let mut members = vec![primary];
    if r.random::<f64>() < cfg.secondary_membership_prob {
        let s = sample_categorical(prior, &mut r);
        if s != primary {
            members.push(s);
        }
    }

    let mix: Vec<f64> = if members.len() == 1 {
        vec![1.0]
    } else {
        Dirichlet::new([3.0_f64, 1.0])
            .expect("valid alpha")
            .sample(&mut r)
            .to_vec()
    };

    let len = r.random_range(cfg.tokens_min..=cfg.tokens_max);
    let tokens = (0..len)
        .map(|_| {
            if r.random::<f64>() < cfg.topic_strength {
                let c = members[sample_categorical(&mix, &mut r)];
                let t = &topics[c];
                t[r.random_range(0..t.len())]
            } else {
                r.random_range(0..cfg.vocab_size)
            }
        })
        .collect();

    let u: f64 = r.random();
    let category_id = if u < 0.1 {
        (N_CATEGORIES - 1) as u8
    } else if u < 0.2 {
        r.random_range(0..N_CATEGORIES as u8 - 1)
    } else {
        (primary % (N_CATEGORIES - 1)) as u8
    };

    let popularity = LogNormal::new(0.0, cfg.popularity_log_sigma)
        .expect("sigma > 0")
        .sample(&mut r);
    let rating = Normal::new(3.8_f64, 0.6)
        .expect("sd > 0")
        .sample(&mut r)
        .clamp(0.0, 5.0);

    members.sort_unstable();
    VideoRecord {
        video_id: id as VideoId,
        primary_class: primary,
        class_memberships: members,
        category_id,
        popularity,
        rating,
        tokens,
    }
}

/// Generates `n_videos` records. Identical `(config, seed)` gives an identical
/// corpus; each video draws from its own child stream.
pub fn generate_corpus(config: &CorpusConfig, seed: u64) -> Result<Corpus> {
    config.validate()?;
    let prior = config.prior()?;
    let topics = class_topics(config, seed);
    let mut videos: Vec<VideoRecord> = (0..config.n_videos)
        .map(|i| generate_video(i, config, &prior, &topics, seed))
        .collect();
    ensure_class_coverage(&mut videos, config.n_classes);
    Corpus::from_records(config.clone(), seed, videos)
}

/// Reassigns the primary class of a few videos so every class has at least
/// one primary member. Donors come from the most populous class, highest id
/// first.
fn ensure_class_coverage(videos: &mut [VideoRecord], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for v in videos.iter() {
            counts[v.primary_class] += 1;
        }
        let Some(missing) = counts.iter().position(|c| *c == 0) else {
            return;
        };
        let donor_class = (0..k)
            .max_by_key(|c| (counts[*c], std::cmp::Reverse(*c)))
            .expect("k > 0");
        let donor = videos
            .iter_mut()
            .rev()
            .find(|v| v.primary_class == donor_class)
            .expect("donor class is non-empty");
        donor.primary_class = missing;
        donor.class_memberships.retain(|c| *c != donor_class);
        donor.class_memberships.push(missing);
        donor.class_memberships.sort_unstable();
        donor.class_memberships.dedup();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(k: usize, n: usize) -> CorpusConfig {
        CorpusConfig {
            n_videos: n,
            n_classes: k,
            ..Default::default()
        }
    }

    #[test]
    fn minimal_corpus_covers_both_classes() {
        let c = generate_corpus(&small(2, 2), 7).unwrap();
        assert_eq!(c.len(), 2);
        let mut primaries: Vec<_> = c.videos.iter().map(|v| v.primary_class).collect();
        primaries.sort();
        assert_eq!(primaries, vec![0, 1]);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(generate_corpus(&small(16, 10), 1).is_err());
        let mut bad = small(3, 30);
        bad.class_prior = Some(vec![0.0, 0.0, 0.0]);
        assert!(generate_corpus(&bad, 1).is_err());
        bad.class_prior = Some(vec![1.0]);
        assert!(generate_corpus(&bad, 1).is_err());
    }

    #[test]
    fn records_satisfy_invariants() {
        let c = generate_corpus(&small(8, 500), 3).unwrap();
        for v in &c.videos {
            assert!(!v.class_memberships.is_empty());
            assert!(v.in_class(v.primary_class));
            assert!((v.category_id as usize) < N_CATEGORIES);
            assert!(v.popularity.is_finite() && v.popularity >= 0.0);
            assert!((0.0..=5.0).contains(&v.rating));
            assert!(!v.tokens.is_empty());
        }
    }
}
