use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{generate_sock_puppets, SockPuppetConfig, World, WorldConfig};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::metrics::{estimate_norms, NormEstimateConfig, NormalizationConstants};
use crate::rng::{self, tag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub target_d_min: f64,
    /// When set, `affinity_sharpness` is tuned as well.
    pub target_d_max: Option<f64>,
    pub n_personas: usize,
    pub norms: NormEstimateConfig,
    pub puppets: SockPuppetConfig,
    pub temperature_range: (f64, f64),
    pub sharpness_range: (f64, f64),
    pub bisection_steps: usize,
    pub rounds: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            target_d_min: 0.49,
            target_d_max: Some(1.51),
            n_personas: 200,
            norms: NormEstimateConfig::default(),
            puppets: SockPuppetConfig::default(),
            temperature_range: (0.0, 8.0),
            sharpness_range: (0.5, 40.0),
            bisection_steps: 22,
            rounds: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub config: WorldConfig,
    pub norms: NormalizationConstants,
    pub evaluations: usize,
    /// False when a target lay outside its search range.
    pub bracketed: bool,
}

struct Evaluator<'a> {
    corpus: &'a Arc<Corpus>,
    cal: &'a CalibrationConfig,
    seed: u64,
    count: usize,
}

impl Evaluator<'_> {
    fn eval(&mut self, cfg: &WorldConfig) -> Result<NormalizationConstants> {
        self.count += 1;
        let world = World::new(self.corpus.clone(), cfg.clone())?;
        let personas =
            generate_sock_puppets(&self.cal.puppets, &world, self.cal.n_personas, self.seed)?;
        estimate_norms(
            &personas,
            &world,
            &self.cal.norms,
            rng::derive(self.seed, tag::EVAL),
        )
    }

    /// Bisects `set(cfg, x)` on `[lo, hi]` so that `pick(norms)` meets `target`,
    /// assuming the measured quantity increases with `x`.
    fn bisect(
        &mut self,
        cfg: &mut WorldConfig,
        (mut lo, mut hi): (f64, f64),
        target: f64,
        steps: usize,
        set: fn(&mut WorldConfig, f64),
        pick: fn(&NormalizationConstants) -> f64,
    ) -> Result<bool> {
        let at = |x: f64, me: &mut Self, cfg: &mut WorldConfig| -> Result<f64> {
            set(cfg, x);
            Ok(pick(&me.eval(cfg)?))
        };
        if at(lo, self, cfg)? >= target {
            set(cfg, lo);
            return Ok(false);
        }
        if at(hi, self, cfg)? <= target {
            set(cfg, hi);
            return Ok(false);
        }
        for _ in 0..steps {
            let mid = 0.5 * (lo + hi);
            if at(mid, self, cfg)? < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        set(cfg, 0.5 * (lo + hi));
        Ok(true)
    }
}

/// Tunes `noise_temperature` (and optionally `affinity_sharpness`) so that
/// sock-puppet personas reproduce the target `D^Min` (and `D^Max`).
/// Alternates one bisection per knob for `rounds` rounds.
pub fn calibrate_world(
    corpus: Arc<Corpus>,
    base: &WorldConfig,
    cal: &CalibrationConfig,
    seed: u64,
) -> Result<CalibrationReport> {
    base.validate()?;
    cal.puppets.validate()?;
    if cal.n_personas < 2 || cal.rounds == 0 {
        return Err(Error::config(
            "calibration needs n_personas >= 2 and rounds >= 1",
        ));
    }
    if !(cal.target_d_min > 0.0) {
        return Err(Error::config("target_d_min must be positive"));
    }
    let mut ev = Evaluator {
        corpus: &corpus,
        cal,
        seed,
        count: 0,
    };
    let mut cfg = base.clone();
    let mut bracketed = true;
    for _ in 0..cal.rounds {
        if let Some(t) = cal.target_d_max {
            bracketed &= ev.bisect(
                &mut cfg,
                cal.sharpness_range,
                t,
                cal.bisection_steps,
                |c, x| c.affinity_sharpness = x,
                |n| n.d_max,
            )?;
        }
        bracketed &= ev.bisect(
            &mut cfg,
            cal.temperature_range,
            cal.target_d_min,
            cal.bisection_steps,
            |c, x| c.noise_temperature = x,
            |n| n.d_min,
        )?;
        if cal.target_d_max.is_none() {
            break;
        }
    }
    let norms = ev.eval(&cfg)?;
    Ok(CalibrationReport {
        config: cfg,
        norms,
        evaluations: ev.count,
        bracketed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusConfig};

    #[test]
    fn hits_floor_target_on_small_world() {
        let c = generate_corpus(
            &CorpusConfig {
                n_videos: 1500,
                n_classes: 6,
                d_content: 8,
                ..Default::default()
            },
            5,
        )
        .unwrap();
        let base = WorldConfig {
            refreshes: 10,
            ..Default::default()
        };
        let cal = CalibrationConfig {
            target_d_min: 0.3,
            target_d_max: None,
            n_personas: 30,
            puppets: SockPuppetConfig {
                total: 15,
                ..Default::default()
            },
            bisection_steps: 14,
            ..Default::default()
        };
        let rep = calibrate_world(Arc::new(c), &base, &cal, 3).unwrap();
        assert!(rep.bracketed);
        assert!((rep.norms.d_min - 0.3).abs() < 0.03, "{:?}", rep.norms);
    }
}
