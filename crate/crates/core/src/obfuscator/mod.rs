//! Obfuscation MDP: injection scheduling, episode rollout against an
//! environment, the learned policy and the three baselines.
//!
//! Episodes interleave the user's videos with injected ones. Before each user
//! video the scheduler flips Bernoulli(α) coins until one comes up tails; every
//! head is an obfuscation step. The schedule comes from its own RNG stream, so
//! every obfuscator sees the same injection positions for a given seed.

mod a2c;
mod baselines;
pub mod policy;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, VideoId};
use crate::diffnet::softmax;
use crate::error::{Error, Result};
use crate::metrics::{kl_divergence, personalized_privacy, ClassDistribution, PersonalizationSpec};
use crate::rng::{self, derive};
use crate::surrogate::{SurrogateCursor, SurrogateNetwork};
use crate::world::{HistoryState, Persona, Source, World};

pub use a2c::{
    accumulate_a2c_gradients, discounted_returns, train_a2c, A2cConfig, A2cEpoch, A2cReport,
    UpdateStats,
};
pub use baselines::{bias_profile, BiasObfuscator, PBoosterObfuscator, RandObfuscator};
pub use policy::{
    action_logits, action_logits_backward, history_window, CriticNetwork, PolicyConfig,
    PolicyNetwork, Similarity, Trunk, TrunkTape,
};

const SCHEDULE: u64 = 1;
const ACTIONS: u64 = 2;

/// One Bernoulli(α) draw: true means the next played video is an injection.
pub fn schedule_injection<R: Rng>(alpha: f64, rng: &mut R) -> bool {
    alpha > 0.0 && rng.random::<f64>() < alpha
}

/// Mean number of injections around `n` user videos.
pub fn expected_injections(n: usize, alpha: f64) -> f64 {
    n as f64 * alpha / (1.0 - alpha)
}

/// Poisson rate of injected plays for a user playing at `user_rate`.
pub fn live_injection_rate(alpha: f64, user_rate: f64) -> f64 {
    user_rate * alpha / (1.0 - alpha)
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::config(format!(
            "alpha must lie in [0, 1), got {alpha}"
        )));
    }
    Ok(())
}

/// Candidate videos the obfuscator may inject, with cached embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObfuscationSet {
    ids: Vec<VideoId>,
    #[serde(skip)]
    embeddings: Vec<Vec<f64>>,
}

impl ObfuscationSet {
    pub fn new(corpus: &Corpus, ids: Vec<VideoId>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Empty("obfuscation set"));
        }
        if let Some(bad) = ids.iter().find(|id| !corpus.contains(**id)) {
            return Err(Error::config(format!(
                "obfuscation video {bad} is not in the corpus"
            )));
        }
        let embeddings = ids
            .iter()
            .map(|&id| corpus.embedding(id).to_vec())
            .collect();
        Ok(Self { ids, embeddings })
    }

    /// `per_class` recommendable videos sampled from each primary class.
    pub fn stratified(world: &World, per_class: usize, seed: u64) -> Result<Self> {
        let corpus = world.corpus();
        let mut rng = rng::rng(seed);
        let mut ids = Vec::new();
        for k in 0..corpus.n_classes() {
            let pool: Vec<VideoId> = (0..corpus.len() as VideoId)
                .filter(|&id| corpus.video(id).primary_class == k && world.is_recommendable(id))
                .collect();
            let take = per_class.min(pool.len());
            let mut picked: Vec<VideoId> = rand::seq::index::sample(&mut rng, pool.len(), take)
                .into_iter()
                .map(|i| pool[i])
                .collect();
            picked.sort_unstable();
            ids.extend(picked);
        }
        Self::new(corpus, ids)
    }

    /// Adds ids not already present, e.g. noisy recommendations recycled by the bank.
    pub fn extend(&mut self, corpus: &Corpus, extra: &[VideoId]) {
        for &id in extra {
            if corpus.contains(id) && !self.ids.contains(&id) {
                self.ids.push(id);
                self.embeddings.push(corpus.embedding(id).to_vec());
            }
        }
    }

    /// Re-attaches embeddings after deserialization.
    pub fn rebind(&mut self, corpus: &Corpus) -> Result<()> {
        *self = Self::new(corpus, std::mem::take(&mut self.ids))?;
        Ok(())
    }

    pub fn ids(&self) -> &[VideoId] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> VideoId {
        self.ids[i]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        &self.embeddings[i]
    }

    pub fn embedding_refs(&self) -> Vec<&[f64]> {
        self.embeddings.iter().map(|e| e.as_slice()).collect()
    }
}

/// Action probabilities over the obfuscation set for target embedding `e_t`.
pub fn policy_distribution(e_t: &[f64], set: &[&[f64]], sim: Similarity) -> Result<Vec<f64>> {
    if set.is_empty() {
        return Err(Error::Empty("obfuscation set"));
    }
    if let Some(e) = set.iter().find(|e| e.len() != e_t.len()) {
        return Err(Error::Dimension {
            expected: e_t.len(),
            got: e.len(),
        });
    }
    Ok(softmax(&action_logits(e_t, set, sim)))
}

/// Anything that maps a growing watch history to `C`.
pub trait Environment {
    type Cursor: Clone;

    fn corpus(&self) -> &Corpus;
    fn start(&self) -> Self::Cursor;
    fn push(&self, cursor: &mut Self::Cursor, id: VideoId) -> Result<()>;
    fn distribution(&self, cursor: &Self::Cursor) -> Result<ClassDistribution>;

    fn distribution_of(&self, ids: &[VideoId]) -> Result<ClassDistribution> {
        let mut c = self.start();
        for &id in ids {
            self.push(&mut c, id)?;
        }
        self.distribution(&c)
    }
}

/// The trained surrogate as an environment.
#[derive(Clone, Copy)]
pub struct SurrogateEnv<'a> {
    pub model: &'a SurrogateNetwork,
    pub corpus: &'a Corpus,
}

impl Environment for SurrogateEnv<'_> {
    type Cursor = SurrogateCursor;

    fn corpus(&self) -> &Corpus {
        self.corpus
    }

    fn start(&self) -> SurrogateCursor {
        self.model.cursor()
    }

    fn push(&self, cursor: &mut SurrogateCursor, id: VideoId) -> Result<()> {
        if !self.corpus.contains(id) {
            return Err(Error::config(format!("unknown video {id}")));
        }
        cursor.push(self.model, self.corpus.embedding(id));
        Ok(())
    }

    fn distribution(&self, cursor: &SurrogateCursor) -> Result<ClassDistribution> {
        Ok(cursor.distribution(self.model))
    }
}

/// The world oracle as an environment, crawled with a fixed query seed.
#[derive(Clone, Copy)]
pub struct WorldEnv<'a> {
    pub world: &'a World,
    pub seed: u64,
}

impl Environment for WorldEnv<'_> {
    type Cursor = HistoryState;

    fn corpus(&self) -> &Corpus {
        self.world.corpus()
    }

    fn start(&self) -> HistoryState {
        self.world.empty_state()
    }

    fn push(&self, cursor: &mut HistoryState, id: VideoId) -> Result<()> {
        self.world.push(cursor, id)
    }

    fn distribution(&self, cursor: &HistoryState) -> Result<ClassDistribution> {
        self.world.distribution_state(cursor, self.seed)
    }
}

/// What the obfuscator maximizes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    /// `KL(C^o ‖ C^u)`.
    #[default]
    Privacy,
    /// `D_nonsens − λ·D_sens`.
    Personalized(PersonalizationSpec),
}

impl Objective {
    pub fn score(&self, c_o: &ClassDistribution, c_u: &ClassDistribution) -> Result<f64> {
        match self {
            Objective::Privacy => kl_divergence(c_o, c_u),
            Objective::Personalized(spec) => Ok(personalized_privacy(c_o, c_u, spec)?.value),
        }
    }
}

/// Everything an obfuscator may look at when picking an injection.
pub struct StepContext<'a, E: Environment> {
    pub env: &'a E,
    /// Videos played so far, user and injected.
    pub played: &'a [VideoId],
    pub cursor: &'a E::Cursor,
    pub c_u: &'a ClassDistribution,
    /// Objective value of the current history.
    pub current: f64,
    pub objective: &'a Objective,
    pub set: &'a ObfuscationSet,
}

pub trait Obfuscator {
    /// Called before each episode.
    fn reset(&mut self) {}

    /// Index into the obfuscation set.
    fn select<E: Environment, R: Rng>(
        &mut self,
        ctx: &StepContext<'_, E>,
        rng: &mut R,
    ) -> Result<usize>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    /// Position of the injected video in `V^o`.
    pub position: usize,
    pub set_index: usize,
    pub video_id: VideoId,
    /// Objective value right after the injection.
    pub score: f64,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    /// Objective value before the first injection.
    pub p_0: f64,
    /// Objective value of the complete obfuscated persona.
    pub p_final: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Episode {
    pub persona: Persona,
    pub trajectory: Trajectory,
    pub c_u: ClassDistribution,
    pub c_o: ClassDistribution,
}

/// What `P_t` is measured against during an episode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardReference {
    /// `C` of the user videos played so far, so user videos move both sides.
    #[default]
    UserPrefix,
    /// `C^u` of the complete user persona, fixed for the whole episode.
    FullPersona,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    pub alpha: f64,
    pub objective: Objective,
    pub reference: RewardReference,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            objective: Objective::Privacy,
            reference: RewardReference::UserPrefix,
        }
    }
}

impl EpisodeConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)
    }
}

/// Rolls out one episode. Rewards are `P_t − P_{t−1}` between consecutive
/// obfuscation steps; the last one also absorbs the trailing user videos, so
/// the rewards sum to `p_final − p_0`, and `p_final` is always measured
/// against the full `C^u`.
pub fn run_episode<E: Environment, O: Obfuscator>(
    obfuscator: &mut O,
    user: &[VideoId],
    env: &E,
    set: &ObfuscationSet,
    cfg: &EpisodeConfig,
    seed: u64,
) -> Result<Episode> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::Empty("obfuscation set"));
    }
    let objective = &cfg.objective;
    let mut schedule = rng::rng(derive(seed, SCHEDULE));
    let mut actions = rng::rng(derive(seed, ACTIONS));
    let c_u = env.distribution_of(user)?;
    obfuscator.reset();

    let mut persona = Persona::default();
    let mut played: Vec<VideoId> = Vec::with_capacity(user.len() * 2);
    let mut cursor = env.start();
    let mut user_cursor = env.start();
    let mut steps: Vec<Step> = Vec::new();
    let mut p_0 = None;
    let mut prev = 0.0;

    for &u in user {
        let mut reference: Option<ClassDistribution> = None;
        while schedule_injection(cfg.alpha, &mut schedule) {
            let c_ref = match (&reference, cfg.reference) {
                (Some(r), _) => r.clone(),
                (None, RewardReference::FullPersona) => c_u.clone(),
                (None, RewardReference::UserPrefix) => env.distribution(&user_cursor)?,
            };
            let current = objective.score(&env.distribution(&cursor)?, &c_ref)?;
            if p_0.is_none() {
                p_0 = Some(current);
                prev = current;
            }
            let ctx = StepContext {
                env,
                played: &played,
                cursor: &cursor,
                c_u: &c_ref,
                current,
                objective,
                set,
            };
            let idx = obfuscator.select(&ctx, &mut actions)?;
            let id = set.id(idx);
            env.push(&mut cursor, id)?;
            played.push(id);
            persona.push(id, Source::Obfuscation);
            let score = objective.score(&env.distribution(&cursor)?, &c_ref)?;
            steps.push(Step {
                position: played.len() - 1,
                set_index: idx,
                video_id: id,
                score,
                reward: score - prev,
            });
            prev = score;
            reference = Some(c_ref);
        }
        env.push(&mut cursor, u)?;
        if cfg.reference == RewardReference::UserPrefix {
            env.push(&mut user_cursor, u)?;
        }
        played.push(u);
        persona.push(u, Source::User);
    }

    let c_o = env.distribution(&cursor)?;
    let p_final = objective.score(&c_o, &c_u)?;
    if let Some(last) = steps.last_mut() {
        last.reward += p_final - prev;
    }
    let trajectory = Trajectory {
        steps,
        p_0: p_0.unwrap_or(p_final),
        p_final,
    };
    Ok(Episode {
        persona,
        trajectory,
        c_u,
        c_o,
    })
}

/// A policy network acting as an obfuscator.
#[derive(Clone, Debug)]
pub struct PolicyObfuscator {
    pub policy: PolicyNetwork,
    /// Take the arg-max action instead of sampling.
    pub greedy: bool,
    state: crate::diffnet::LstmState,
    records: Vec<StepRecord>,
    record: bool,
}

/// Input and chosen action of one obfuscation step, replayed by the trainer.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub window: Vec<f64>,
    pub action: usize,
}

impl PolicyObfuscator {
    pub fn new(policy: PolicyNetwork) -> Self {
        let state = policy.trunk.lstm.initial_state();
        Self {
            policy,
            greedy: false,
            state,
            records: Vec::new(),
            record: false,
        }
    }

    pub fn recording(mut self, on: bool) -> Self {
        self.record = on;
        self
    }

    pub fn take_records(&mut self) -> Vec<StepRecord> {
        std::mem::take(&mut self.records)
    }

    /// Action probabilities for the next step without advancing the state.
    pub fn probabilities(
        &self,
        corpus: &Corpus,
        played: &[VideoId],
        set: &ObfuscationSet,
    ) -> Result<Vec<f64>> {
        let x = history_window(corpus, played, self.policy.trunk.window());
        let (e_t, _) = self.policy.trunk.step(&x, &self.state);
        policy_distribution(&e_t, &set.embedding_refs(), self.policy.config.similarity)
    }
}

impl Obfuscator for PolicyObfuscator {
    fn reset(&mut self) {
        self.state = self.policy.trunk.lstm.initial_state();
        self.records.clear();
    }

    fn select<E: Environment, R: Rng>(
        &mut self,
        ctx: &StepContext<'_, E>,
        rng: &mut R,
    ) -> Result<usize> {
        let x = history_window(ctx.env.corpus(), ctx.played, self.policy.trunk.window());
        let (e_t, next) = self.policy.trunk.step(&x, &self.state);
        if e_t.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged(
                "policy emitted a non-finite target embedding".into(),
            ));
        }
        self.state = next;
        let probs = policy_distribution(
            &e_t,
            &ctx.set.embedding_refs(),
            self.policy.config.similarity,
        )?;
        let action = if self.greedy {
            probs
                .iter()
                .enumerate()
                .fold(0, |b, (i, p)| if *p > probs[b] { i } else { b })
        } else {
            sample_index(&probs, rng)
        };
        if self.record {
            self.records.push(StepRecord { window: x, action });
        }
        Ok(action)
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// The four obfuscators behind one type.
#[derive(Clone, Debug)]
pub enum AnyObfuscator {
    Policy(PolicyObfuscator),
    Rand(RandObfuscator),
    Bias(BiasObfuscator),
    PBooster(PBoosterObfuscator),
}

impl AnyObfuscator {
    pub fn name(&self) -> &'static str {
        match self {
            AnyObfuscator::Policy(_) => "de_harpo",
            AnyObfuscator::Rand(_) => "rand",
            AnyObfuscator::Bias(_) => "bias",
            AnyObfuscator::PBooster(_) => "pbooster",
        }
    }
}

impl Obfuscator for AnyObfuscator {
    fn reset(&mut self) {
        match self {
            AnyObfuscator::Policy(o) => o.reset(),
            AnyObfuscator::Rand(o) => o.reset(),
            AnyObfuscator::Bias(o) => o.reset(),
            AnyObfuscator::PBooster(o) => o.reset(),
        }
    }

    fn select<E: Environment, R: Rng>(
        &mut self,
        ctx: &StepContext<'_, E>,
        rng: &mut R,
    ) -> Result<usize> {
        match self {
            AnyObfuscator::Policy(o) => o.select(ctx, rng),
            AnyObfuscator::Rand(o) => o.select(ctx, rng),
            AnyObfuscator::Bias(o) => o.select(ctx, rng),
            AnyObfuscator::PBooster(o) => o.select(ctx, rng),
        }
    }
}

#[cfg(test)]
mod tests;
