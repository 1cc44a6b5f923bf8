use serde::{Deserialize, Serialize};

use super::{CorpusStats, VideoId, VideoRecord};
use crate::error::{Error, Result};
use crate::rng::mix64;

/// 17 platform categories plus "none".
pub const N_CATEGORIES: usize = 18;
/// Category one-hot, standardized popularity, standardized rating.
pub const D_META: usize = N_CATEGORIES + 2;

const HASH_SALT: u64 = 0x0c0f_fee5_eed5_a17e;

/// Bucket and sign of a token under the feature hash.
#[inline]
pub fn hash_bucket(token: u32, dim: usize) -> (usize, f64) {
    let h = mix64(token as u64 ^ HASH_SALT);
    let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
    ((h % dim as u64) as usize, sign)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub meta: Vec<f64>,
    pub content: Vec<f64>,
}

impl Embedding {
    pub fn dim(&self) -> usize {
        self.meta.len() + self.content.len()
    }

    pub fn combined(&self) -> Vec<f64> {
        let mut v = self.meta.clone();
        v.extend_from_slice(&self.content);
        v
    }
}

/// Metadata block plus an L2-normalized signed bag-of-tokens hash.
pub fn embed_video(v: &VideoRecord, stats: &CorpusStats, d_content: usize) -> Result<Embedding> {
    stats.check()?;
    if v.tokens.is_empty() {
        return Err(Error::Empty("video tokens"));
    }
    if (v.category_id as usize) >= N_CATEGORIES {
        return Err(Error::config(format!(
            "category {} out of range",
            v.category_id
        )));
    }
    let mut meta = vec![0.0; D_META];
    meta[v.category_id as usize] = 1.0;
    meta[N_CATEGORIES] = (v.popularity - stats.popularity_mean) / stats.popularity_std;
    meta[N_CATEGORIES + 1] = (v.rating - stats.rating_mean) / stats.rating_std;

    let mut content = vec![0.0; d_content];
    for &t in &v.tokens {
        let (b, s) = hash_bucket(t, d_content);
        content[b] += s;
    }
    let norm = content.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Degenerate(
            "token hashes cancel to a zero content vector",
        ));
    }
    content.iter_mut().for_each(|x| *x /= norm);
    Ok(Embedding { meta, content })
}

/// Row-major `[n_videos, D_META + d_content]` embedding matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub d_meta: usize,
    pub d_content: usize,
    pub data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn build(videos: &[VideoRecord], stats: &CorpusStats, d_content: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(videos.len() * (D_META + d_content));
        for v in videos {
            let e = embed_video(v, stats, d_content)?;
            data.extend_from_slice(&e.meta);
            data.extend_from_slice(&e.content);
        }
        Ok(Self {
            d_meta: D_META,
            d_content,
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.d_meta + self.d_content
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, id: VideoId) -> &[f64] {
        let d = self.dim();
        &self.data[id as usize * d..(id as usize + 1) * d]
    }
}
