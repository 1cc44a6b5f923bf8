use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adversary::DetectorTrainConfig;
use crate::corpus::{BankConfig, CorpusConfig};
use crate::denoiser::DenoiserTrainConfig;
use crate::diffnet::{FitConfig, OptimizerKind};
use crate::error::{Error, Result};
use crate::metrics::NormEstimateConfig;
use crate::obfuscator::{check_alpha, A2cConfig, EpisodeConfig, PolicyConfig};
use crate::surrogate::SurrogateTrainConfig;
use crate::world::{CalibrationConfig, SockPuppetConfig, WorldConfig};

pub const CONFIG_VERSION: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PersonaCounts {
    /// Surrogate, A2C, bias profile, denoiser and detector training.
    pub train: usize,
    /// Held out for every reported metric.
    pub eval: usize,
}

impl Default for PersonaCounts {
    fn default() -> Self {
        Self {
            train: 2000,
            eval: 400,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObfuscationSettings {
    /// Obfuscation-set videos drawn per primary class.
    pub per_class: usize,
    pub pbooster_candidates: usize,
    /// Passes over the training personas when building the bias profile.
    pub bias_epochs: usize,
}

impl Default for ObfuscationSettings {
    fn default() -> Self {
        Self {
            per_class: 16,
            pbooster_candidates: 64,
            bias_epochs: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PersonalizationSettings {
    /// Sensitive classes are the `n_sensitive` classes with the lowest prior,
    /// lower index first on ties.
    pub n_sensitive: usize,
    pub lambdas: Vec<f64>,
    /// The λ whose policy is compared against the standard one.
    pub headline_lambda: f64,
    pub epsilon: f64,
}

impl Default for PersonalizationSettings {
    fn default() -> Self {
        Self {
            n_sensitive: 2,
            lambdas: vec![0.5, 1.0, 2.0],
            headline_lambda: 1.0,
            epsilon: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub config_version: u64,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub corpus: CorpusConfig,
    /// Load the corpus from this directory instead of generating it.
    pub corpus_path: Option<PathBuf>,
    pub world: WorldConfig,
    /// When set, the world stage tunes `world` before use.
    pub calibration: Option<CalibrationConfig>,
    pub puppets: SockPuppetConfig,
    pub norms: NormEstimateConfig,
    pub personas: PersonaCounts,
    pub surrogate: SurrogateTrainConfig,
    pub obfuscation: ObfuscationSettings,
    pub policy: PolicyConfig,
    pub a2c: A2cConfig,
    pub denoiser: DenoiserTrainConfig,
    pub detector: DetectorTrainConfig,
    pub bank: BankConfig,
    /// Budgets swept by `sweep_alpha`; α = 0 is always added.
    pub alphas: Vec<f64>,
    /// Budget for the main privacy, utility and adversary tables.
    pub eval_alpha: f64,
    pub prevalences: Vec<f64>,
    pub personalization: PersonalizationSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            config_version: CONFIG_VERSION,
            seed: 20_240_501,
            output_dir: PathBuf::from("runs/default"),
            corpus: CorpusConfig::default(),
            corpus_path: None,
            world: WorldConfig::default(),
            calibration: None,
            puppets: SockPuppetConfig::default(),
            norms: NormEstimateConfig::default(),
            personas: PersonaCounts::default(),
            surrogate: SurrogateTrainConfig::default(),
            obfuscation: ObfuscationSettings::default(),
            policy: PolicyConfig::default(),
            a2c: A2cConfig::default(),
            denoiser: DenoiserTrainConfig::default(),
            detector: DetectorTrainConfig::default(),
            bank: BankConfig::default(),
            alphas: vec![0.2, 0.3, 0.5, 0.7],
            eval_alpha: 0.2,
            prevalences: vec![0.01, 0.05, 0.1, 0.25, 0.5],
            personalization: PersonalizationSettings::default(),
        }
    }
}

fn adam(lr: f64, epochs: usize) -> FitConfig {
    FitConfig {
        epochs,
        lr,
        optimizer: OptimizerKind::Adam,
        ..Default::default()
    }
}

impl ExperimentConfig {
    /// Minutes-scale defaults: K=16, 1,000 training and 200 evaluation
    /// personas of length 40, on a world pre-tuned to `D^Min ≈ 0.49` and
    /// `D^Max ≈ 1.49`.
    pub fn desk() -> Self {
        Self {
            output_dir: PathBuf::from("runs/desk"),
            personas: PersonaCounts {
                train: 1000,
                eval: 200,
            },
            world: WorldConfig {
                noise_temperature: 1.95,
                affinity_sharpness: 14.4,
                ..Default::default()
            },
            surrogate: SurrogateTrainConfig {
                hidden: 32,
                fit: adam(3e-3, 9),
                ..Default::default()
            },
            policy: PolicyConfig {
                conv_channels: 32,
                hidden: 32,
                ..Default::default()
            },
            a2c: A2cConfig {
                epochs: 12,
                actor_lr: 3e-3,
                critic_lr: 3e-3,
                entropy_weight: 0.001,
                ..Default::default()
            },
            denoiser: DenoiserTrainConfig {
                hidden: 32,
                fit: adam(3e-3, 12),
                ..Default::default()
            },
            detector: DetectorTrainConfig {
                hidden: 32,
                fit: adam(3e-3, 10),
                ..Default::default()
            },
            ..Default::default()
        }
    }

    /// Small end-to-end run: K=8 and 200 personas.
    pub fn smoke() -> Self {
        let mut c = Self::desk();
        c.output_dir = PathBuf::from("runs/smoke");
        c.corpus = CorpusConfig {
            n_videos: 2000,
            n_classes: 8,
            ..Default::default()
        };
        c.personas = PersonaCounts {
            train: 150,
            eval: 50,
        };
        c.norms.max_pairs = 2000;
        c.obfuscation.per_class = 8;
        c.obfuscation.pbooster_candidates = 16;
        c.a2c.epochs = 3;
        c.surrogate.fit.epochs = 5;
        c.denoiser.fit.epochs = 5;
        c.detector.fit.epochs = 4;
        c.personalization.lambdas = vec![1.0];
        c.bank.bank_min = 20;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "smoke" => Ok(Self::smoke()),
            "default" => Ok(Self::default()),
            other => Err(Error::config(format!(
                "unknown preset `{other}` (expected desk, smoke or default)"
            ))),
        }
    }

    /// Parses TOML. `config_version` must be present and current; every other
    /// key falls back to the default, and unknown keys are rejected.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| Error::config(format!("toml: {e}")))?;
        match table.get("config_version") {
            None => return Err(Error::config("missing `config_version` header")),
            Some(toml::Value::Integer(v)) if *v as u64 == CONFIG_VERSION => {}
            Some(v) => {
                return Err(Error::config(format!(
                    "unsupported config_version {v} (expected {CONFIG_VERSION})"
                )))
            }
        }
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(format!("toml: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("toml: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.config_version != CONFIG_VERSION {
            return Err(Error::config(format!(
                "unsupported config_version {} (expected {CONFIG_VERSION})",
                self.config_version
            )));
        }
        self.corpus.validate()?;
        self.world.validate()?;
        self.puppets.validate()?;
        self.policy.validate()?;
        self.a2c.validate()?;
        self.surrogate.fit.validate()?;
        self.denoiser.fit.validate()?;
        self.detector.fit.validate()?;
        if self.personas.train < 10 || self.personas.eval < 2 {
            return Err(Error::config(
                "need at least 10 training and 2 evaluation personas",
            ));
        }
        if self.surrogate.hidden == 0 || self.denoiser.hidden == 0 || self.detector.hidden == 0 {
            return Err(Error::config("hidden sizes must be positive"));
        }
        if self.obfuscation.per_class == 0
            || self.obfuscation.pbooster_candidates == 0
            || self.obfuscation.bias_epochs == 0
        {
            return Err(Error::config("obfuscation settings must be positive"));
        }
        for &a in self.alphas.iter().chain([&self.eval_alpha]) {
            check_alpha(a)?;
        }
        if self.prevalences.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(Error::config("prevalences must be in (0, 1)"));
        }
        let ps = &self.personalization;
        if ps.n_sensitive == 0 || ps.n_sensitive >= self.corpus.n_classes {
            return Err(Error::config("n_sensitive must be in [1, K)"));
        }
        if ps
            .lambdas
            .iter()
            .chain([&ps.headline_lambda])
            .any(|l| !(*l >= 0.0))
            || !(ps.epsilon > 0.0)
        {
            return Err(Error::config("personalization needs λ >= 0 and ε > 0"));
        }
        Ok(())
    }

    /// Episode settings at budget `alpha`, otherwise as used for training.
    pub fn episode(&self, alpha: f64) -> EpisodeConfig {
        EpisodeConfig {
            alpha,
            ..self.a2c.episode.clone()
        }
    }

    /// Hex SHA-256 of the canonical JSON form. `output_dir` is excluded so a
    /// run can be repeated elsewhere with the same hash.
    pub fn content_hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_string(&serde_json::to_value(&c)?)?;
        Ok(hex::encode(Sha256::digest(json.as_bytes())))
    }
}
