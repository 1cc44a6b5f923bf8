use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Corpus, VideoId};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BankConfig {
    /// Classes with fewer entries than this are reported as short.
    pub bank_min: usize,
    /// Per-class cap; `None` keeps every member.
    pub bank_size: Option<usize>,
    /// Hand removed noisy recommendations back to the obfuscation set.
    pub recycle_noisy: bool,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self {
            bank_min: 50,
            bank_size: Some(400),
            recycle_noisy: true,
        }
    }
}

/// Per-class cache of videos used to materialize recommendation lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoBank {
    pub per_class: Vec<Vec<VideoId>>,
    pub refresh_generation: u64,
}

impl VideoBank {
    pub fn class(&self, k: usize) -> &[VideoId] {
        &self.per_class[k]
    }

    pub fn n_classes(&self) -> usize {
        self.per_class.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BankBuild {
    pub bank: VideoBank,
    /// Removed recommendations to add to the obfuscation set (sorted, unique).
    pub obfuscation_additions: Vec<VideoId>,
    /// `(class, depth)` for classes below `bank_min`.
    pub short_classes: Vec<(usize, usize)>,
}

impl BankBuild {
    pub fn is_complete(&self) -> bool {
        self.short_classes.is_empty()
    }
}

/// Builds the bank from the corpus. Lists are ordered by popularity descending,
/// ties by ascending id. `recommendations_log` holds noisy recommendations that
/// were swapped out during repopulation.
pub fn build_bank(
    corpus: &Corpus,
    recommendations_log: &[VideoId],
    cfg: &BankConfig,
) -> Result<BankBuild> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let k = corpus.n_classes();
    let mut per_class: Vec<Vec<VideoId>> = vec![Vec::new(); k];
    for v in &corpus.videos {
        for &c in &v.class_memberships {
            per_class[c].push(v.video_id);
        }
    }
    for list in &mut per_class {
        list.sort_by(|a, b| {
            let (pa, pb) = (corpus.video(*a).popularity, corpus.video(*b).popularity);
            pb.total_cmp(&pa).then(a.cmp(b))
        });
        if let Some(cap) = cfg.bank_size {
            list.truncate(cap);
        }
    }
    let short_classes = per_class
        .iter()
        .enumerate()
        .filter(|(_, l)| l.len() < cfg.bank_min)
        .map(|(c, l)| (c, l.len()))
        .collect();

    let obfuscation_additions = if cfg.recycle_noisy {
        let set: BTreeSet<VideoId> = recommendations_log
            .iter()
            .copied()
            .filter(|id| corpus.contains(*id))
            .collect();
        set.into_iter().collect()
    } else {
        Vec::new()
    };

    Ok(BankBuild {
        bank: VideoBank {
            per_class,
            refresh_generation: 0,
        },
        obfuscation_additions,
        short_classes,
    })
}
