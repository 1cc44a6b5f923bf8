//! Advantage actor-critic over recorded episodes.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::policy::{action_logits, action_logits_backward};
use super::{
    run_episode, CriticNetwork, Environment, EpisodeConfig, ObfuscationSet, PolicyNetwork,
    PolicyObfuscator, StepRecord,
};
use crate::corpus::VideoId;
use crate::diffnet::{clip_grad_norm, log_softmax, Adam, Optimizer, Parameterized};
use crate::error::{Error, Result};
use crate::rng::{self, derive_path};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct A2cConfig {
    pub epochs: usize,
    pub gamma: f64,
    pub entropy_weight: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub episodes_per_update: usize,
    pub clip_norm: Option<f64>,
    pub episode: EpisodeConfig,
    /// Abort when the mean absolute advantage of an update exceeds this.
    pub advantage_guard: f64,
}

impl Default for A2cConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            gamma: 0.99,
            entropy_weight: 0.0005,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            episodes_per_update: 8,
            clip_norm: Some(5.0),
            episode: EpisodeConfig::default(),
            advantage_guard: 1e3,
        }
    }
}

impl A2cConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.episodes_per_update == 0 {
            return Err(Error::config(
                "a2c needs epochs and episodes_per_update >= 1",
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(self.entropy_weight >= 0.0) {
            return Err(Error::config(
                "gamma must lie in [0, 1] and the entropy weight be >= 0",
            ));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0 && self.advantage_guard > 0.0) {
            return Err(Error::config(
                "learning rates and the advantage guard must be positive",
            ));
        }
        self.episode.validate()
    }
}

/// Sums over the steps of one gradient accumulation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub steps: usize,
    pub abs_advantage: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
}

impl UpdateStats {
    fn add(&mut self, o: &UpdateStats) {
        self.steps += o.steps;
        self.abs_advantage += o.abs_advantage;
        self.actor_loss += o.actor_loss;
        self.critic_loss += o.critic_loss;
        self.entropy += o.entropy;
    }

    pub fn mean_abs_advantage(&self) -> f64 {
        self.abs_advantage / self.steps.max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct A2cEpoch {
    pub epoch: usize,
    /// Mean `Σ r_t` per episode.
    pub mean_return: f64,
    pub mean_final_score: f64,
    pub mean_abs_advantage: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct A2cReport {
    pub curve: Vec<A2cEpoch>,
    pub updates: usize,
}

/// Discounted returns `G_t = Σ_k γ^k r_{t+k}`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut g = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        g[t] = acc;
    }
    g
}

/// Accumulates actor and critic gradients for one episode, unscaled.
///
/// Actor loss per step is `−log π(a|s)·A − β·H(π)`, critic loss `A²`, with
/// `A = G − V(s)` treated as a constant in the actor term.
pub fn accumulate_a2c_gradients(
    policy: &mut PolicyNetwork,
    critic: &mut CriticNetwork,
    set: &ObfuscationSet,
    records: &[StepRecord],
    rewards: &[f64],
    cfg: &A2cConfig,
) -> Result<UpdateStats> {
    if records.len() != rewards.len() {
        return Err(Error::Dimension {
            expected: records.len(),
            got: rewards.len(),
        });
    }
    if records.is_empty() {
        return Ok(UpdateStats::default());
    }
    let xs: Vec<Vec<f64>> = records.iter().map(|r| r.window.clone()).collect();
    let returns = discounted_returns(rewards, cfg.gamma);

    let (values, ctape) = critic.trunk.forward_tape(&xs);
    let adv: Vec<f64> = returns.iter().zip(&values).map(|(g, v)| g - v[0]).collect();
    let dv: Vec<Vec<f64>> = adv.iter().map(|a| vec![-2.0 * a]).collect();
    critic.trunk.backward_tape(&ctape, &dv);

    let cands = set.embedding_refs();
    let sim = policy.config.similarity;
    let (es, ptape) = policy.trunk.forward_tape(&xs);
    let mut stats = UpdateStats {
        steps: records.len(),
        ..Default::default()
    };
    let mut des = Vec::with_capacity(es.len());
    for (t, e_t) in es.iter().enumerate() {
        let logp = log_softmax(&action_logits(e_t, &cands, sim));
        let p: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let h: f64 = -p.iter().zip(&logp).map(|(a, b)| a * b).sum::<f64>();
        let a = records[t].action;
        let dlogits: Vec<f64> = (0..p.len())
            .map(|j| {
                let pg = adv[t] * (p[j] - if j == a { 1.0 } else { 0.0 });
                pg + cfg.entropy_weight * p[j] * (logp[j] + h)
            })
            .collect();
        des.push(action_logits_backward(e_t, &cands, &dlogits, sim));
        stats.abs_advantage += adv[t].abs();
        stats.actor_loss += -logp[a] * adv[t] - cfg.entropy_weight * h;
        stats.critic_loss += adv[t] * adv[t];
        stats.entropy += h;
    }
    policy.trunk.backward_tape(&ptape, &des);
    Ok(stats)
}

/// Trains with on-policy rollouts against `env`; every persona is used once
/// per epoch, in a seeded shuffled order.
pub fn train_a2c<E: Environment>(
    policy: &mut PolicyNetwork,
    critic: &mut CriticNetwork,
    env: &E,
    personas: &[Vec<VideoId>],
    set: &ObfuscationSet,
    cfg: &A2cConfig,
    seed: u64,
) -> Result<A2cReport> {
    cfg.validate()?;
    if personas.is_empty() {
        return Err(Error::Empty("training personas"));
    }
    let mut obf = PolicyObfuscator::new(policy.clone()).recording(true);
    let mut actor_opt = Adam::new(cfg.actor_lr);
    let mut critic_opt = Adam::new(cfg.critic_lr);
    let mut report = A2cReport::default();
    let mut order: Vec<usize> = (0..personas.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::rng(derive_path(
            seed,
            &[crate::rng::tag::EPOCH, epoch as u64],
        )));
        let mut epoch_stats = UpdateStats::default();
        let (mut ret, mut fin) = (0.0, 0.0);
        for batch in order.chunks(cfg.episodes_per_update) {
            obf.policy.zero_grad();
            critic.zero_grad();
            let mut stats = UpdateStats::default();
            for &i in batch {
                let ep = run_episode(
                    &mut obf,
                    &personas[i],
                    env,
                    set,
                    &cfg.episode,
                    derive_path(seed, &[epoch as u64, i as u64]),
                )?;
                ret += ep.trajectory.p_final - ep.trajectory.p_0;
                fin += ep.trajectory.p_final;
                let records = obf.take_records();
                let s = accumulate_a2c_gradients(
                    &mut obf.policy,
                    critic,
                    set,
                    &records,
                    &ep.trajectory.rewards(),
                    cfg,
                )?;
                stats.add(&s);
            }
            if stats.steps == 0 {
                continue;
            }
            if stats.mean_abs_advantage() > cfg.advantage_guard || !stats.abs_advantage.is_finite()
            {
                return Err(Error::Diverged(format!(
                    "mean |advantage| {} exceeds {} at epoch {epoch}",
                    stats.mean_abs_advantage(),
                    cfg.advantage_guard
                )));
            }
            apply(
                &mut obf.policy.trunk,
                &mut actor_opt,
                stats.steps,
                cfg.clip_norm,
            )?;
            apply(
                &mut critic.trunk,
                &mut critic_opt,
                stats.steps,
                cfg.clip_norm,
            )?;
            report.updates += 1;
            epoch_stats.add(&stats);
        }
        let n = personas.len() as f64;
        let steps = epoch_stats.steps.max(1) as f64;
        report.curve.push(A2cEpoch {
            epoch,
            mean_return: ret / n,
            mean_final_score: fin / n,
            mean_abs_advantage: epoch_stats.abs_advantage / steps,
            actor_loss: epoch_stats.actor_loss / steps,
            critic_loss: epoch_stats.critic_loss / steps,
            entropy: epoch_stats.entropy / steps,
        });
    }
    *policy = obf.policy;
    Ok(report)
}

pub(crate) fn apply<M: Parameterized, O: Optimizer>(
    model: &mut M,
    opt: &mut O,
    steps: usize,
    clip: Option<f64>,
) -> Result<()> {
    model.scale_grad(1.0 / steps as f64);
    let mut params = model.params_mut();
    if let Some(c) = clip {
        clip_grad_norm(&mut params, c);
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Diverged("non-finite gradient".into()));
    }
    opt.step(&mut params);
    Ok(())
}
