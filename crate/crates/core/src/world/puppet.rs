use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Persona, Source, World};
use crate::corpus::VideoId;
use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// Random recommendation trails `G(D, T)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SockPuppetConfig {
    /// Trail depth before restarting from a fresh seed video.
    pub depth: usize,
    /// Total videos watched.
    pub total: usize,
    /// Up-next candidates shown after each video.
    pub upnext_count: usize,
    /// Top fraction of the corpus by popularity that seed videos come from.
    pub seed_pool_fraction: f64,
}

impl Default for SockPuppetConfig {
    fn default() -> Self {
        Self {
            depth: 40,
            total: 40,
            upnext_count: 20,
            seed_pool_fraction: 0.1,
        }
    }
}

impl SockPuppetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.total == 0 || self.upnext_count == 0 {
            return Err(Error::config(
                "sock puppet depth, total and upnext_count must be positive",
            ));
        }
        if !(self.seed_pool_fraction > 0.0 && self.seed_pool_fraction <= 1.0) {
            return Err(Error::config("seed_pool_fraction must be in (0, 1]"));
        }
        Ok(())
    }
}

fn seed_pool(world: &World, fraction: f64) -> Vec<VideoId> {
    let corpus = world.corpus();
    let mut ids: Vec<VideoId> = corpus.videos.iter().map(|v| v.video_id).collect();
    ids.sort_by(|a, b| {
        corpus
            .video(*b)
            .popularity
            .total_cmp(&corpus.video(*a).popularity)
            .then(a.cmp(b))
    });
    let n = ((ids.len() as f64 * fraction).ceil() as usize).clamp(1, ids.len());
    ids.truncate(n);
    ids
}

fn walk(cfg: &SockPuppetConfig, world: &World, pool: &[VideoId], seed: u64) -> Result<Persona> {
    let mut r = rng::rng(seed);
    let mut persona = Persona::default();
    let mut state = world.empty_state();
    let mut trail = 0;
    while persona.len() < cfg.total {
        let next = if trail == 0 || trail >= cfg.depth {
            trail = 0;
            pool[r.random_range(0..pool.len())]
        } else {
            let step_seed = rng::derive_path(seed, &[tag::QUERY, persona.len() as u64]);
            let rec = world.recommend_state(&state, step_seed)?;
            let watched = persona.video_ids();
            let fresh: Vec<VideoId> = rec
                .videos
                .iter()
                .copied()
                .filter(|id| !watched.contains(id))
                .collect();
            let shown = if fresh.is_empty() {
                &rec.videos
            } else {
                &fresh
            };
            let upnext = &shown[..cfg.upnext_count.min(shown.len())];
            upnext[r.random_range(0..upnext.len())]
        };
        world.push(&mut state, next)?;
        persona.push(next, Source::User);
        trail += 1;
    }
    Ok(persona)
}

/// One sock-puppet persona: start at a popular seed video and keep playing a
/// uniformly chosen up-next recommendation, reseeding every `depth` videos.
pub fn generate_sock_puppet(cfg: &SockPuppetConfig, world: &World, seed: u64) -> Result<Persona> {
    cfg.validate()?;
    walk(cfg, world, &seed_pool(world, cfg.seed_pool_fraction), seed)
}

/// `count` personas with independent per-index seed streams.
pub fn generate_sock_puppets(
    cfg: &SockPuppetConfig,
    world: &World,
    count: usize,
    seed: u64,
) -> Result<Vec<Persona>> {
    cfg.validate()?;
    let pool = seed_pool(world, cfg.seed_pool_fraction);
    (0..count)
        .map(|i| {
            walk(
                cfg,
                world,
                &pool,
                rng::derive_path(seed, &[tag::PERSONAS, i as u64]),
            )
        })
        .collect()
}
