use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{run_episode, Environment, EpisodeConfig, ObfuscationSet, Obfuscator, StepContext};
use crate::corpus::VideoId;
use crate::error::{Error, Result};
use crate::rng::derive_path;

/// Uniform over the obfuscation set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RandObfuscator;

impl Obfuscator for RandObfuscator {
    fn select<E: Environment, R: Rng>(
        &mut self,
        ctx: &StepContext<'_, E>,
        rng: &mut R,
    ) -> Result<usize> {
        if ctx.set.is_empty() {
            return Err(Error::Empty("obfuscation set"));
        }
        Ok(rng.random_range(0..ctx.set.len()))
    }
}

/// Sampling proportional to a reward profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasObfuscator {
    probs: Vec<f64>,
}

impl BiasObfuscator {
    /// Negative entries are clamped to zero; an all-zero profile falls back
    /// to uniform.
    pub fn new(profile: &[f64]) -> Result<Self> {
        if profile.is_empty() {
            return Err(Error::Empty("reward profile"));
        }
        let clamped: Vec<f64> = profile
            .iter()
            .map(|r| if r.is_finite() { r.max(0.0) } else { 0.0 })
            .collect();
        let total: f64 = clamped.iter().sum();
        let probs = if total > 0.0 {
            clamped.iter().map(|r| r / total).collect()
        } else {
            vec![1.0 / profile.len() as f64; profile.len()]
        };
        Ok(Self { probs })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }
}

impl Obfuscator for BiasObfuscator {
    fn select<E: Environment, R: Rng>(
        &mut self,
        ctx: &StepContext<'_, E>,
        rng: &mut R,
    ) -> Result<usize> {
        if self.probs.len() != ctx.set.len() {
            return Err(Error::Dimension {
                expected: ctx.set.len(),
                got: self.probs.len(),
            });
        }
        Ok(super::sample_index(&self.probs, rng))
    }
}

/// Accumulated per-video reward of random obfuscation over `epochs` passes
/// through `personas`.
pub fn bias_profile<E: Environment>(
    env: &E,
    personas: &[Vec<VideoId>],
    set: &ObfuscationSet,
    cfg: &EpisodeConfig,
    epochs: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut profile = vec![0.0; set.len()];
    let mut rand = RandObfuscator;
    for epoch in 0..epochs {
        for (i, user) in personas.iter().enumerate() {
            let ep = run_episode(
                &mut rand,
                user,
                env,
                set,
                cfg,
                derive_path(seed, &[epoch as u64, i as u64]),
            )?;
            for s in &ep.trajectory.steps {
                profile[s.set_index] += s.reward;
            }
        }
    }
    Ok(profile)
}

/// Greedy one-step maximizer of the objective over a candidate subsample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PBoosterObfuscator {
    pub candidates: usize,
}

impl Default for PBoosterObfuscator {
    fn default() -> Self {
        Self { candidates: 64 }
    }
}

impl Obfuscator for PBoosterObfuscator {
    fn select<E: Environment, R: Rng>(
        &mut self,
        ctx: &StepContext<'_, E>,
        rng: &mut R,
    ) -> Result<usize> {
        let m = ctx.set.len();
        if m == 0 {
            return Err(Error::Empty("obfuscation set"));
        }
        if self.candidates == 0 {
            return Err(Error::config("pbooster needs at least one candidate"));
        }
        let pool: Vec<usize> = if self.candidates >= m {
            (0..m).collect()
        } else {
            rand::seq::index::sample(rng, m, self.candidates).into_vec()
        };
        let mut best: Option<(f64, VideoId, usize)> = None;
        for i in pool {
            let mut cursor = ctx.cursor.clone();
            ctx.env.push(&mut cursor, ctx.set.id(i))?;
            let gain = ctx
                .objective
                .score(&ctx.env.distribution(&cursor)?, ctx.c_u)?
                - ctx.current;
            let id = ctx.set.id(i);
            let better = match best {
                None => true,
                Some((g, bid, _)) => gain > g || (gain == g && id < bid),
            };
            if better {
                best = Some((gain, id, i));
            }
        }
        Ok(best.map(|b| b.2).unwrap_or(0))
    }
}
