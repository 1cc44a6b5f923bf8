use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{kl_divergence, ClassDistribution, NormalizationConstants, SampleStats};
use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::world::{Persona, World};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormEstimateConfig {
    /// Independent crawls averaged into `C̄^u`.
    pub refresh_samples: usize,
    /// Cap on persona pairs used for `d_max`; all ordered pairs when fewer.
    pub max_pairs: usize,
}

impl Default for NormEstimateConfig {
    fn default() -> Self {
        Self {
            refresh_samples: 10,
            max_pairs: 5000,
        }
    }
}

/// Epoch seed for crawl `r` of persona `i`.
pub fn crawl_seed(seed: u64, i: usize, r: usize) -> u64 {
    rng::derive_path(seed, &[tag::EVAL, i as u64, r as u64])
}

/// Monte-Carlo `D^Min` and `D^Max`.
///
/// `d_min` is the mean over personas of `KL(C̄^u ‖ C^u)`, where `C̄^u` averages
/// `refresh_samples` crawls and `C^u` is one more independent crawl. `d_max`
/// is the mean KL between single crawls of two different personas. The result
/// is not validated, so a degenerate population can report `d_max <= d_min`.
pub fn estimate_norms(
    personas: &[Persona],
    world: &World,
    cfg: &NormEstimateConfig,
    seed: u64,
) -> Result<NormalizationConstants> {
    if personas.len() < 2 {
        return Err(Error::Empty("need at least two personas"));
    }
    if cfg.refresh_samples == 0 || cfg.max_pairs == 0 {
        return Err(Error::config(
            "refresh_samples and max_pairs must be positive",
        ));
    }
    let r = cfg.refresh_samples;
    let mut mins = Vec::with_capacity(personas.len());
    let mut single = Vec::with_capacity(personas.len());
    for (i, p) in personas.iter().enumerate() {
        let state = world.state_for(&p.video_ids())?;
        if state.is_empty() {
            return Err(Error::Empty("persona"));
        }
        let crawls: Vec<ClassDistribution> = (0..=r)
            .map(|j| world.distribution_state(&state, crawl_seed(seed, i, j)))
            .collect::<Result<_>>()?;
        let bar = ClassDistribution::mean(&crawls[..r])?;
        mins.push(kl_divergence(&bar, &crawls[r])?);
        single.push(crawls[r].clone());
    }

    let n = personas.len();
    let mut maxs = Vec::new();
    if n * (n - 1) <= cfg.max_pairs {
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    maxs.push(kl_divergence(&single[i], &single[j])?);
                }
            }
        }
    } else {
        let mut g = rng::rng(rng::derive(seed, tag::SPLIT));
        while maxs.len() < cfg.max_pairs {
            let i = g.random_range(0..n);
            let j = g.random_range(0..n);
            if i != j {
                maxs.push(kl_divergence(&single[i], &single[j])?);
            }
        }
    }
    let lo = SampleStats::of(&mins)?;
    let hi = SampleStats::of(&maxs)?;
    Ok(NormalizationConstants {
        d_min: lo.mean,
        d_max: hi.mean,
        d_min_stderr: lo.stderr,
        d_max_stderr: hi.stderr,
        n_samples_min: lo.n,
        n_samples_max: hi.n,
    })
}
