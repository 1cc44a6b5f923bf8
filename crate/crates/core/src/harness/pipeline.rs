use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::artifacts::{MetricRow, RunArtifacts, Table};
use super::config::ExperimentConfig;
use crate::adversary::{
    precision_at_prevalence, train_deobf_detector, train_stealth_detector, DeobfSample,
    DetectorReport, StealthSample,
};
use crate::corpus::{build_bank, generate_corpus, load_corpus, save_corpus, Corpus, VideoId};
use crate::denoiser::{
    denoise, is_subsequence, repopulate, surro_den, train_denoiser, DenoiserNetwork,
    DenoiserReport, DenoiserSample,
};
use crate::diffnet::Checkpoint;
use crate::error::{Error, Result};
use crate::metrics::{
    crawl_seed, estimate_norms, kl_divergence, privacy_norm, utility_gain_norm, ClassDistribution,
    NormalizationConstants, SampleStats,
};
use crate::obfuscator::{
    bias_profile, run_episode, train_a2c, A2cReport, AnyObfuscator, BiasObfuscator, CriticNetwork,
    EpisodeConfig, ObfuscationSet, PBoosterObfuscator, PolicyNetwork, PolicyObfuscator,
    RandObfuscator, SurrogateEnv,
};
use crate::rng::{self, derive, derive_path, tag};
use crate::surrogate::{train_surrogate, SurrogateNetwork, SurrogateReport, SurrogateSample};
use crate::world::{calibrate_world, generate_sock_puppets, Persona, World, WorldConfig};

/// Obfuscators in report order.
pub const OBFUSCATORS: [&str; 4] = ["de_harpo", "pbooster", "bias", "rand"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Corpus,
    World,
    Personas,
    Surrogate,
    Obfuscators,
    Evaluate,
    Denoiser,
    Adversary,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Corpus,
        Stage::World,
        Stage::Personas,
        Stage::Surrogate,
        Stage::Obfuscators,
        Stage::Evaluate,
        Stage::Denoiser,
        Stage::Adversary,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Corpus => "corpus",
            Stage::World => "world",
            Stage::Personas => "personas",
            Stage::Surrogate => "surrogate",
            Stage::Obfuscators => "obfuscators",
            Stage::Evaluate => "evaluate",
            Stage::Denoiser => "denoiser",
            Stage::Adversary => "adversary",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::config(format!("unknown stage `{s}`")))
    }
}

/// Training and evaluation personas plus the world's normalization constants,
/// estimated on the evaluation personas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersonaSplit {
    pub train: Vec<Persona>,
    pub eval: Vec<Persona>,
    pub norms: NormalizationConstants,
}

impl PersonaSplit {
    pub fn train_ids(&self) -> Vec<Vec<VideoId>> {
        self.train.iter().map(|p| p.video_ids()).collect()
    }

    pub fn eval_ids(&self) -> Vec<Vec<VideoId>> {
        self.eval.iter().map(|p| p.video_ids()).collect()
    }
}

/// The learned policy and the inputs of the three baselines.
#[derive(Clone, Debug)]
pub struct ObfuscatorSuite {
    pub set: ObfuscationSet,
    pub policy: PolicyNetwork,
    pub bias_profile: Vec<f64>,
    pub pbooster_candidates: usize,
    pub report: A2cReport,
}

impl ObfuscatorSuite {
    pub fn build(&self, name: &str) -> Result<AnyObfuscator> {
        Ok(match name {
            "de_harpo" => AnyObfuscator::Policy(PolicyObfuscator::new(self.policy.clone())),
            "pbooster" => AnyObfuscator::PBooster(PBoosterObfuscator {
                candidates: self.pbooster_candidates,
            }),
            "bias" => AnyObfuscator::Bias(BiasObfuscator::new(&self.bias_profile)?),
            "rand" => AnyObfuscator::Rand(RandObfuscator),
            other => return Err(Error::config(format!("unknown obfuscator `{other}`"))),
        })
    }
}

/// One obfuscated persona with its crawls. `c_u`/`c_o` come from the world,
/// `c_u_surrogate`/`c_o_surrogate` from the surrogate the rollout ran in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub persona: usize,
    pub obfuscator: String,
    pub alpha: f64,
    pub v_u: Vec<VideoId>,
    pub v_o: Vec<VideoId>,
    pub labels: Vec<bool>,
    pub c_u_surrogate: ClassDistribution,
    pub c_o_surrogate: ClassDistribution,
    pub c_u: ClassDistribution,
    pub c_o: ClassDistribution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_hat: Option<ClassDistribution>,
}

impl EvalRecord {
    pub fn p_surrogate(&self) -> Result<f64> {
        kl_divergence(&self.c_o_surrogate, &self.c_u_surrogate)
    }

    pub fn p_world(&self) -> Result<f64> {
        kl_divergence(&self.c_o, &self.c_u)
    }

    pub fn denoiser_sample(&self) -> DenoiserSample {
        DenoiserSample {
            user: self.v_u.clone(),
            obfuscated: self.v_o.clone(),
            c_o: self.c_o.clone(),
            c_u: self.c_u.clone(),
        }
    }
}

/// Evaluation rollouts per obfuscator, in [`OBFUSCATORS`] order.
pub type Evaluation = BTreeMap<String, Vec<EvalRecord>>;

/// Seeds for a batch of rollouts: episode schedule/actions and world epochs.
#[derive(Clone, Copy, Debug)]
pub struct RolloutSeeds {
    pub episode: u64,
    pub crawl: u64,
}

impl RolloutSeeds {
    pub fn new(seed: u64, stage_tag: u64) -> Self {
        Self {
            episode: derive_path(seed, &[stage_tag, 1]),
            crawl: derive_path(seed, &[stage_tag, 2]),
        }
    }
}

/// World sessions used for the two sides of a paired crawl. They share the
/// epoch noise of one seed and draw fresh query noise each.
pub const SESSION_USER: u64 = 1;
pub const SESSION_OBFUSCATED: u64 = 2;

#[derive(Serialize, Deserialize)]
struct Trained<R> {
    checkpoint: Checkpoint,
    report: R,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// One-sided paired t-test of `a > b`; returns the p-value.
pub fn paired_t_p_value(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::Empty("paired sample"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let s = SampleStats::of(&d)?;
    if s.stderr == 0.0 {
        return Ok(if s.mean > 0.0 { 0.0 } else { 1.0 });
    }
    let t = StudentsT::new(0.0, 1.0, (d.len() - 1) as f64)
        .map_err(|e| Error::config(format!("t distribution: {e}")))?;
    Ok(1.0 - t.cdf(s.mean / s.stderr))
}

/// Runs the stages in order, memoizing each. Model stages persist a checkpoint
/// and report, and reload them on a rerun under the same config hash.
pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub art: RunArtifacts,
    timings: BTreeMap<String, f64>,
    corpus: Option<Arc<Corpus>>,
    world: Option<Arc<World>>,
    personas: Option<Arc<PersonaSplit>>,
    surrogate: Option<Arc<SurrogateNetwork>>,
    suite: Option<Arc<ObfuscatorSuite>>,
    evaluation: Option<Arc<Evaluation>>,
    denoiser: Option<Arc<DenoiserNetwork>>,
    adversary: bool,
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let hash = cfg.content_hash()?;
        let art = RunArtifacts::open(&cfg.output_dir, &hash)?;
        std::fs::write(art.path("config.toml"), cfg.to_toml_string()?)?;
        Ok(Self {
            cfg,
            art,
            timings: BTreeMap::new(),
            corpus: None,
            world: None,
            personas: None,
            surrogate: None,
            suite: None,
            evaluation: None,
            denoiser: None,
            adversary: false,
        })
    }

    /// Wall-clock seconds per stage. Kept out of the CSVs.
    pub fn timings(&self) -> &BTreeMap<String, f64> {
        &self.timings
    }

    pub fn run_until(&mut self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Corpus => self.corpus().map(drop),
            Stage::World => self.world().map(drop),
            Stage::Personas => self.personas().map(drop),
            Stage::Surrogate => self.surrogate().map(drop),
            Stage::Obfuscators => self.suite().map(drop),
            Stage::Evaluate => self.evaluation().map(drop),
            Stage::Denoiser => self.denoiser().map(drop),
            Stage::Adversary => self.adversary(),
        }
    }

    pub(crate) fn timed<T>(
        &mut self,
        name: &'static str,
        f: impl FnOnce(&mut Self) -> Result<T>,
    ) -> Result<T> {
        let t = Instant::now();
        let out = f(self).map_err(|e| match e {
            e @ Error::Stage { .. } => e,
            e => e.in_stage(name),
        })?;
        *self.timings.entry(name.to_string()).or_default() += t.elapsed().as_secs_f64();
        self.art
            .write_json("timings.json", &self.timings)
            .map_err(|e| e.in_stage(name))?;
        Ok(out)
    }

    /// Loads `checkpoints/<key>.json` when the manifest lists it, otherwise
    /// computes and persists it.
    pub(crate) fn cached<T: Serialize + DeserializeOwned>(
        &mut self,
        key: &str,
        f: impl FnOnce(&mut Self) -> Result<T>,
    ) -> Result<T> {
        let path = self.art.checkpoint(key);
        if self.art.is_done(key) && path.exists() {
            return Ok(serde_json::from_slice(&std::fs::read(&path)?)?);
        }
        let value = f(self)?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
        serde_json::to_writer(&mut w, &value)?;
        std::io::Write::flush(&mut w)?;
        self.art.mark_done(key)?;
        Ok(value)
    }

    pub fn corpus(&mut self) -> Result<Arc<Corpus>> {
        if let Some(c) = &self.corpus {
            return Ok(c.clone());
        }
        let c = self.timed("corpus", |p| {
            let corpus = match &p.cfg.corpus_path {
                Some(path) => load_corpus(path).map_err(|e| match e {
                    Error::Io(io) => Error::config(format!("{}: {io}", path.display())),
                    e => e,
                })?,
                None => generate_corpus(&p.cfg.corpus, derive(p.cfg.seed, tag::CORPUS))?,
            };
            save_corpus(&corpus, &p.art.path("corpus"))?;
            Ok(Arc::new(corpus))
        })?;
        self.corpus = Some(c.clone());
        Ok(c)
    }

    pub fn world(&mut self) -> Result<Arc<World>> {
        if let Some(w) = &self.world {
            return Ok(w.clone());
        }
        let corpus = self.corpus()?;
        let w = self.timed("world", |p| {
            let cfg: WorldConfig = p.cached("world", |p| match &p.cfg.calibration {
                Some(cal) => Ok(calibrate_world(
                    corpus.clone(),
                    &p.cfg.world,
                    cal,
                    derive(p.cfg.seed, tag::WORLD),
                )?
                .config),
                None => Ok(p.cfg.world.clone()),
            })?;
            let mut t = Table::new("world");
            t.push(MetricRow::new(
                "noise_temperature",
                cfg.noise_temperature,
                1,
            ));
            t.push(MetricRow::new(
                "affinity_sharpness",
                cfg.affinity_sharpness,
                1,
            ));
            p.art.write_table(t)?;
            Ok(Arc::new(World::new(corpus.clone(), cfg)?))
        })?;
        self.world = Some(w.clone());
        Ok(w)
    }

    pub fn personas(&mut self) -> Result<Arc<PersonaSplit>> {
        if let Some(s) = &self.personas {
            return Ok(s.clone());
        }
        let world = self.world()?;
        let s = self.timed("personas", |p| {
            let seed = derive(p.cfg.seed, tag::PERSONAS);
            let n = &p.cfg.personas;
            let train = generate_sock_puppets(&p.cfg.puppets, &world, n.train, derive(seed, 1))?;
            let eval = generate_sock_puppets(&p.cfg.puppets, &world, n.eval, derive(seed, 2))?;
            let norms = estimate_norms(&eval, &world, &p.cfg.norms, derive(seed, 3))?;
            norms.validate()?;
            let mut t = Table::new("norms");
            t.push(MetricRow {
                metric: "world.d_min".into(),
                value: norms.d_min,
                stderr: Some(norms.d_min_stderr),
                n: norms.n_samples_min,
            });
            t.push(MetricRow {
                metric: "world.d_max".into(),
                value: norms.d_max,
                stderr: Some(norms.d_max_stderr),
                n: norms.n_samples_max,
            });
            p.art.write_table(t)?;
            let split = PersonaSplit { train, eval, norms };
            p.art.write_json("personas.json", &split)?;
            Ok(Arc::new(split))
        })?;
        self.personas = Some(s.clone());
        Ok(s)
    }

    pub fn surrogate(&mut self) -> Result<Arc<SurrogateNetwork>> {
        if let Some(s) = &self.surrogate {
            return Ok(s.clone());
        }
        let corpus = self.corpus()?;
        let world = self.world()?;
        let split = self.personas()?;
        let s = self.timed("surrogate", |p| {
            let trained: Trained<SurrogateReport> = p.cached("surrogate", |p| {
                let seed = derive(p.cfg.seed, tag::SURROGATE);
                let data: Vec<SurrogateSample> = split
                    .train
                    .iter()
                    .enumerate()
                    .map(|(i, persona)| {
                        Ok(SurrogateSample {
                            persona: persona.video_ids(),
                            target: world
                                .recommend(persona, crawl_seed(seed, i, 0))?
                                .distribution,
                        })
                    })
                    .collect::<Result<_>>()?;
                let (model, report) = train_surrogate(&corpus, &data, &p.cfg.surrogate, seed)?;
                Ok(Trained {
                    checkpoint: model.to_checkpoint()?,
                    report,
                })
            })?;
            let r = &trained.report;
            let mut t = Table::new("surrogate");
            t.push(MetricRow::new("test_kl", r.test_loss, r.n_test));
            t.push(MetricRow::new(
                "mean_baseline_kl",
                r.mean_baseline_loss,
                r.n_test,
            ));
            t.push(MetricRow::new(
                "uniform_baseline_kl",
                r.uniform_baseline_loss,
                r.n_test,
            ));
            p.art.write_table(t)?;
            Ok(Arc::new(SurrogateNetwork::from_checkpoint(
                &trained.checkpoint,
            )?))
        })?;
        self.surrogate = Some(s.clone());
        Ok(s)
    }

    /// Trains a policy with `episode` as the objective, starting from the
    /// same initialization as the main one.
    pub fn train_policy(
        &mut self,
        key: &str,
        episode: EpisodeConfig,
    ) -> Result<(PolicyNetwork, A2cReport)> {
        let corpus = self.corpus()?;
        let surrogate = self.surrogate()?;
        let split = self.personas()?;
        let set = self.obfuscation_set()?;
        let trained: Trained<A2cReport> = self.cached(key, |p| {
            let seed = derive(p.cfg.seed, tag::OBFUSCATOR);
            let mut init = rng::rng(derive(seed, tag::INIT));
            let d = corpus.embedding_dim();
            let mut policy = PolicyNetwork::new(d, &p.cfg.policy, &mut init)?;
            let mut critic = CriticNetwork::new(d, &p.cfg.policy, &mut init)?;
            let env = SurrogateEnv {
                model: &surrogate,
                corpus: &corpus,
            };
            let cfg = crate::obfuscator::A2cConfig {
                episode,
                ..p.cfg.a2c.clone()
            };
            let report = train_a2c(
                &mut policy,
                &mut critic,
                &env,
                &split.train_ids(),
                &set,
                &cfg,
                derive(seed, tag::EPOCH),
            )?;
            Ok(Trained {
                checkpoint: policy.to_checkpoint()?,
                report,
            })
        })?;
        Ok((
            PolicyNetwork::from_checkpoint(&trained.checkpoint)?,
            trained.report,
        ))
    }

    pub fn obfuscation_set(&mut self) -> Result<ObfuscationSet> {
        let world = self.world()?;
        let mut set: ObfuscationSet = self.cached("obfuscation_set", |p| {
            ObfuscationSet::stratified(
                &world,
                p.cfg.obfuscation.per_class,
                derive_path(p.cfg.seed, &[tag::OBFUSCATOR, 1]),
            )
        })?;
        set.rebind(world.corpus())?;
        Ok(set)
    }

    pub fn suite(&mut self) -> Result<Arc<ObfuscatorSuite>> {
        if let Some(s) = &self.suite {
            return Ok(s.clone());
        }
        let corpus = self.corpus()?;
        let surrogate = self.surrogate()?;
        let split = self.personas()?;
        let s = self.timed("obfuscators", |p| {
            let set = p.obfuscation_set()?;
            let episode = p.cfg.a2c.episode.clone();
            let (policy, report) = p.train_policy("policy", episode.clone())?;
            let bias: Vec<f64> = p.cached("bias_profile", |p| {
                let env = SurrogateEnv {
                    model: &surrogate,
                    corpus: &corpus,
                };
                bias_profile(
                    &env,
                    &split.train_ids(),
                    &set,
                    &episode,
                    p.cfg.obfuscation.bias_epochs,
                    derive_path(p.cfg.seed, &[tag::OBFUSCATOR, 2]),
                )
            })?;
            let mut t = Table::new("a2c");
            for e in &report.curve {
                let n = split.train.len();
                t.push(MetricRow::new(
                    format!("epoch_{}.mean_return", e.epoch),
                    e.mean_return,
                    n,
                ));
                t.push(MetricRow::new(
                    format!("epoch_{}.mean_final_score", e.epoch),
                    e.mean_final_score,
                    n,
                ));
                t.push(MetricRow::new(
                    format!("epoch_{}.entropy", e.epoch),
                    e.entropy,
                    n,
                ));
            }
            p.art.write_table(t)?;
            Ok(Arc::new(ObfuscatorSuite {
                set,
                policy,
                bias_profile: bias,
                pbooster_candidates: p.cfg.obfuscation.pbooster_candidates,
                report,
            }))
        })?;
        self.suite = Some(s.clone());
        Ok(s)
    }

    /// Rolls `obfuscator` out in the surrogate over `personas`, then crawls
    /// `V^u` and `V^o` in the world under one shared epoch per persona.
    pub fn rollouts(
        &mut self,
        obfuscator: &mut AnyObfuscator,
        personas: &[Persona],
        episode: &EpisodeConfig,
        seeds: RolloutSeeds,
        crawl_world: bool,
    ) -> Result<Vec<EvalRecord>> {
        let corpus = self.corpus()?;
        let world = self.world()?;
        let surrogate = self.surrogate()?;
        let suite = self.suite()?;
        let env = SurrogateEnv {
            model: &surrogate,
            corpus: &corpus,
        };
        let name = obfuscator.name().to_string();
        personas
            .iter()
            .enumerate()
            .map(|(i, persona)| {
                let v_u = persona.video_ids();
                let ep = run_episode(
                    obfuscator,
                    &v_u,
                    &env,
                    &suite.set,
                    episode,
                    derive(seeds.episode, i as u64),
                )?;
                let v_o = ep.persona.video_ids();
                if !is_subsequence(&v_u, &v_o) || ep.persona.user_videos() != v_u {
                    return Err(Error::config("obfuscated persona dropped user videos"));
                }
                let (c_u, c_o) = if crawl_world {
                    let epoch = crawl_seed(seeds.crawl, i, 0);
                    (
                        world.distribution_session(&world.state_for(&v_u)?, epoch, SESSION_USER)?,
                        world.distribution_session(
                            &world.state_for(&v_o)?,
                            epoch,
                            SESSION_OBFUSCATED,
                        )?,
                    )
                } else {
                    (ep.c_u.clone(), ep.c_o.clone())
                };
                Ok(EvalRecord {
                    persona: i,
                    obfuscator: name.clone(),
                    alpha: episode.alpha,
                    labels: ep.persona.labels(),
                    v_u,
                    v_o,
                    c_u_surrogate: ep.c_u,
                    c_o_surrogate: ep.c_o,
                    c_u,
                    c_o,
                    c_hat: None,
                })
            })
            .collect()
    }

    /// Evaluation rollouts of every obfuscator at `alpha`, paired by seed.
    pub fn evaluate_at(&mut self, alpha: f64) -> Result<Evaluation> {
        let suite = self.suite()?;
        let split = self.personas()?;
        let episode = self.cfg.episode(alpha);
        let seeds = RolloutSeeds::new(self.cfg.seed, tag::EVAL);
        let mut out = Evaluation::new();
        for name in OBFUSCATORS {
            let mut o = suite.build(name)?;
            let recs = self.rollouts(&mut o, &split.eval, &episode, seeds, true)?;
            out.insert(name.to_string(), recs);
        }
        Ok(out)
    }

    /// Mean KL between surrogate predictions for distinct evaluation personas;
    /// the surrogate is deterministic, so its `D^Min` is zero.
    pub fn surrogate_norms(&mut self) -> Result<NormalizationConstants> {
        let corpus = self.corpus()?;
        let surrogate = self.surrogate()?;
        let split = self.personas()?;
        let preds: Vec<ClassDistribution> = split
            .eval
            .iter()
            .map(|p| surrogate.predict_ids(&corpus, &p.video_ids()))
            .collect::<Result<_>>()?;
        let n = preds.len();
        let mut kls = Vec::with_capacity(n * (n - 1));
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    kls.push(kl_divergence(&preds[i], &preds[j])?);
                }
            }
        }
        let s = SampleStats::of(&kls)?;
        Ok(NormalizationConstants {
            d_min: 0.0,
            d_max: s.mean,
            d_min_stderr: 0.0,
            d_max_stderr: s.stderr,
            n_samples_min: n,
            n_samples_max: s.n,
        })
    }

    pub fn evaluation(&mut self) -> Result<Arc<Evaluation>> {
        if let Some(e) = &self.evaluation {
            return Ok(e.clone());
        }
        self.suite()?;
        let split = self.personas()?;
        let e = self.timed("evaluate", |p| {
            let alpha = p.cfg.eval_alpha;
            let ev = p.evaluate_at(alpha)?;
            for (name, recs) in &ev {
                p.art.write_jsonl(&format!("raw/eval_{name}.jsonl"), recs)?;
            }
            let s_norms = p.surrogate_norms()?;
            let w_norms = split.norms.clone();

            let mut ts = Table::new("privacy_surrogate");
            ts.push(MetricRow::new(
                "d_min",
                s_norms.d_min,
                s_norms.n_samples_min,
            ));
            ts.push(MetricRow {
                metric: "d_max".into(),
                value: s_norms.d_max,
                stderr: Some(s_norms.d_max_stderr),
                n: s_norms.n_samples_max,
            });
            let mut tw = Table::new("privacy_world");
            tw.push(MetricRow::new("alpha", alpha, 1));
            let mut ps = BTreeMap::new();
            for name in OBFUSCATORS {
                let recs = &ev[name];
                let s: Vec<f64> = recs
                    .iter()
                    .map(|r| r.p_surrogate())
                    .collect::<Result<_>>()?;
                let w: Vec<f64> = recs.iter().map(|r| r.p_world()).collect::<Result<_>>()?;
                let (ss, sw) = (SampleStats::of(&s)?, SampleStats::of(&w)?);
                ts.push(MetricRow::stats(format!("{name}.p"), &ss));
                ts.push(MetricRow::new(
                    format!("{name}.p_norm"),
                    privacy_norm(ss.mean, &s_norms),
                    ss.n,
                ));
                tw.push(MetricRow::stats(format!("{name}.p"), &sw));
                tw.push(MetricRow::new(
                    format!("{name}.p_norm"),
                    privacy_norm(sw.mean, &w_norms),
                    sw.n,
                ));
                ps.insert(name, s);
            }
            let n = ps["de_harpo"].len();
            ts.push(MetricRow::new(
                "de_harpo_vs_pbooster.paired_t_p",
                paired_t_p_value(&ps["de_harpo"], &ps["pbooster"])?,
                n,
            ));
            ts.push(MetricRow::new(
                "pbooster_vs_rand.paired_t_p",
                paired_t_p_value(&ps["pbooster"], &ps["rand"])?,
                n,
            ));
            let ratio = privacy_norm(mean(&ps["de_harpo"]), &s_norms)
                / privacy_norm(mean(&ps["rand"]), &s_norms);
            ts.push(MetricRow::new("de_harpo_over_rand.p_norm_ratio", ratio, n));
            p.art.write_table(ts)?;
            p.art.write_table(tw)?;
            Ok(Arc::new(ev))
        })?;
        self.evaluation = Some(e.clone());
        Ok(e)
    }

    /// Denoiser trained on rollouts of all four obfuscators over the training personas at
    /// `alpha`.
    pub fn train_denoiser_at(&mut self, alpha: f64) -> Result<(DenoiserNetwork, DenoiserReport)> {
        let corpus = self.corpus()?;
        let suite = self.suite()?;
        let split = self.personas()?;
        let key = format!("denoiser_alpha_{alpha}");
        let trained: Trained<DenoiserReport> = self.cached(&key, |p| {
            // Training personas are dealt round-robin to the four obfuscators.
            let mut data: Vec<DenoiserSample> = Vec::with_capacity(split.train.len());
            for (j, name) in OBFUSCATORS.iter().enumerate() {
                let personas: Vec<Persona> = split
                    .train
                    .iter()
                    .skip(j)
                    .step_by(OBFUSCATORS.len())
                    .cloned()
                    .collect();
                if personas.is_empty() {
                    continue;
                }
                let mut o = suite.build(name)?;
                let recs = p.rollouts(
                    &mut o,
                    &personas,
                    &p.cfg.episode(alpha),
                    RolloutSeeds::new(derive(p.cfg.seed, tag::DENOISER), j as u64),
                    true,
                )?;
                data.extend(recs.iter().map(|r| r.denoiser_sample()));
            }
            let (model, report) = train_denoiser(
                &corpus,
                &data,
                &p.cfg.denoiser,
                split.norms.d_min,
                derive(p.cfg.seed, tag::DENOISER),
            )?;
            Ok(Trained {
                checkpoint: model.to_checkpoint()?,
                report,
            })
        })?;
        Ok((
            DenoiserNetwork::from_checkpoint(&trained.checkpoint)?,
            trained.report,
        ))
    }

    pub fn denoiser(&mut self) -> Result<Arc<DenoiserNetwork>> {
        if let Some(d) = &self.denoiser {
            return Ok(d.clone());
        }
        let corpus = self.corpus()?;
        let world = self.world()?;
        let surrogate = self.surrogate()?;
        let split = self.personas()?;
        let ev = self.evaluation()?;
        let d = self.timed("denoiser", |p| {
            let (model, report) = p.train_denoiser_at(p.cfg.eval_alpha)?;
            let d_min = split.norms.d_min;
            let mut t = Table::new("utility");
            t.push(MetricRow::new("d_min", d_min, split.norms.n_samples_min));
            t.push(MetricRow::new(
                "train.held_out_u_loss",
                report.utility_loss,
                report.n_test,
            ));
            let bank = build_bank(&corpus, &[], &p.cfg.bank)?.bank;
            let slots = world.config().recs_per_refresh;
            let mut losses = Vec::new();
            for name in OBFUSCATORS {
                let mut recs = ev[name].clone();
                for r in &mut recs {
                    r.c_hat = Some(denoise(&model, &corpus, &r.v_u, &r.v_o, &r.c_o)?);
                }
                let u: Vec<f64> = recs
                    .iter()
                    .map(|r| kl_divergence(r.c_hat.as_ref().expect("set above"), &r.c_u))
                    .collect::<Result<_>>()?;
                let pw: Vec<f64> = recs.iter().map(|r| r.p_world()).collect::<Result<_>>()?;
                let (su, sp) = (SampleStats::of(&u)?, SampleStats::of(&pw)?);
                t.push(MetricRow::stats(format!("{name}.none.u_loss"), &sp));
                t.push(MetricRow::stats(format!("{name}.de_harpo_den.u_loss"), &su));
                t.push(MetricRow::new(
                    format!("{name}.de_harpo_den.u_gain_norm"),
                    utility_gain_norm(sp.mean, su.mean, d_min),
                    su.n,
                ));
                losses.push(su.mean);
                if name == "de_harpo" {
                    let s: Vec<f64> = recs
                        .iter()
                        .map(|r| kl_divergence(&surro_den(&surrogate, &corpus, &r.v_u)?, &r.c_u))
                        .collect::<Result<_>>()?;
                    let ss = SampleStats::of(&s)?;
                    t.push(MetricRow::stats("de_harpo.surro_den.u_loss", &ss));
                    t.push(MetricRow::new(
                        "de_harpo.surro_den.u_gain_norm",
                        utility_gain_norm(sp.mean, ss.mean, d_min),
                        ss.n,
                    ));
                    let gaps: Vec<f64> = recs
                        .iter()
                        .map(|r| {
                            Ok(
                                repopulate(&bank, r.c_hat.as_ref().expect("set above"), slots)?
                                    .tv_gap,
                            )
                        })
                        .collect::<Result<_>>()?;
                    t.push(MetricRow::stats(
                        "de_harpo.repopulation.tv_gap",
                        &SampleStats::of(&gaps)?,
                    ));
                }
                p.art
                    .write_jsonl(&format!("raw/denoise_{name}.jsonl"), &recs)?;
            }
            let spread = losses.iter().cloned().fold(f64::MIN, f64::max)
                - losses.iter().cloned().fold(f64::MAX, f64::min);
            t.push(MetricRow::new(
                "de_harpo_den.u_loss_spread",
                spread,
                losses.len(),
            ));
            p.art.write_table(t)?;
            Ok(Arc::new(model))
        })?;
        self.denoiser = Some(d.clone());
        Ok(d)
    }

    pub fn adversary(&mut self) -> Result<()> {
        if self.adversary {
            return Ok(());
        }
        let corpus = self.corpus()?;
        let suite = self.suite()?;
        let split = self.personas()?;
        self.denoiser()?;
        self.timed("adversary", |p| {
            let mut t = Table::new("adversary");
            let episode = p.cfg.episode(p.cfg.eval_alpha);
            let seeds = RolloutSeeds::new(p.cfg.seed, tag::ADVERSARY);
            for name in OBFUSCATORS {
                let (stealth, deobf): (Trained<DetectorReport>, Trained<DetectorReport>) = p
                    .cached(&format!("adversary_{name}"), |p| {
                        let mut o = suite.build(name)?;
                        let recs = p.rollouts(&mut o, &split.train, &episode, seeds, false)?;
                        let data: Vec<StealthSample> = recs
                            .iter()
                            .flat_map(|r| {
                                [
                                    StealthSample {
                                        persona: r.v_u.clone(),
                                        obfuscated: false,
                                    },
                                    StealthSample {
                                        persona: r.v_o.clone(),
                                        obfuscated: true,
                                    },
                                ]
                            })
                            .collect();
                        let (m, report) = train_stealth_detector(
                            &corpus,
                            &data,
                            &p.cfg.detector,
                            derive_path(p.cfg.seed, &[tag::ADVERSARY, 1]),
                        )?;
                        let stealth = Trained {
                            checkpoint: m.to_checkpoint()?,
                            report,
                        };
                        let data: Vec<DeobfSample> = recs
                            .iter()
                            .map(|r| DeobfSample {
                                persona: r.v_o.clone(),
                                labels: r.labels.clone(),
                            })
                            .collect();
                        let (m, report) = train_deobf_detector(
                            &corpus,
                            &data,
                            &p.cfg.detector,
                            derive_path(p.cfg.seed, &[tag::ADVERSARY, 2]),
                        )?;
                        let deobf = Trained {
                            checkpoint: m.to_checkpoint()?,
                            report,
                        };
                        Ok((stealth, deobf))
                    })?;
                let s = &stealth.report.test;
                let n = s.confusion.total() as usize;
                let opt = |v: Option<f64>| v.unwrap_or(f64::NAN);
                t.push(MetricRow::new(
                    format!("{name}.stealth.precision"),
                    opt(s.precision),
                    n,
                ));
                t.push(MetricRow::new(
                    format!("{name}.stealth.recall"),
                    opt(s.recall),
                    n,
                ));
                t.push(MetricRow::new(
                    format!("{name}.stealth.false_positive_rate"),
                    opt(s.false_positive_rate),
                    n,
                ));
                t.push(MetricRow::new(
                    format!("{name}.stealth.accuracy"),
                    opt(s.accuracy),
                    n,
                ));
                if let (Some(tpr), Some(fpr)) = (s.recall, s.false_positive_rate) {
                    for &prev in &p.cfg.prevalences {
                        t.push(MetricRow::new(
                            format!("{name}.stealth.precision_at_{prev}"),
                            opt(precision_at_prevalence(tpr, fpr, prev)),
                            n,
                        ));
                    }
                }
                let d = &deobf.report.test;
                let n = d.confusion.total() as usize;
                t.push(MetricRow::new(
                    format!("{name}.deobf.precision"),
                    opt(d.precision),
                    n,
                ));
                t.push(MetricRow::new(
                    format!("{name}.deobf.recall"),
                    opt(d.recall),
                    n,
                ));
                t.push(MetricRow::new(
                    format!("{name}.deobf.accuracy"),
                    opt(d.accuracy),
                    n,
                ));
            }
            p.art.write_table(t)?;
            Ok(())
        })?;
        self.adversary = true;
        Ok(())
    }
}

/// Runs every stage of the main pipeline.
pub fn run_pipeline(cfg: ExperimentConfig) -> Result<Pipeline> {
    let mut p = Pipeline::new(cfg)?;
    p.run_until(Stage::Adversary)?;
    Ok(p)
}
