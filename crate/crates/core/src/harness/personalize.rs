use std::collections::BTreeSet;

use super::artifacts::{MetricRow, Table};
use super::pipeline::{EvalRecord, Pipeline, RolloutSeeds};
use crate::error::Result;
use crate::metrics::{personalized_privacy, ClassDistribution, PersonalizationSpec, SampleStats};
use crate::obfuscator::{AnyObfuscator, EpisodeConfig, Objective, PolicyNetwork, PolicyObfuscator};
use crate::rng::tag;

/// The `n` classes with the lowest prior mass, lower index first on ties.
pub fn sensitive_classes(prior: &[f64], n: usize) -> BTreeSet<usize> {
    let mut idx: Vec<usize> = (0..prior.len()).collect();
    idx.sort_by(|&a, &b| prior[a].total_cmp(&prior[b]).then(a.cmp(&b)));
    idx.into_iter().take(n).collect()
}

fn split_stats(
    recs: &[EvalRecord],
    spec: &PersonalizationSpec,
    pick: impl Fn(&EvalRecord) -> (&ClassDistribution, &ClassDistribution),
) -> Result<(SampleStats, SampleStats)> {
    let (mut sens, mut nonsens) = (Vec::new(), Vec::new());
    for r in recs {
        let (c_o, c_u) = pick(r);
        let v = personalized_privacy(c_o, c_u, spec)?;
        sens.push(v.d_sens);
        nonsens.push(v.d_nonsens);
    }
    Ok((SampleStats::of(&sens)?, SampleStats::of(&nonsens)?))
}

/// Trains one policy per λ with the personalized objective and compares the
/// sensitive and non-sensitive divergences of its obfuscated personas with
/// those of the standard policy. Writes `personalization.csv`.
pub fn personalization_study(p: &mut Pipeline) -> Result<Table> {
    let world = p.world()?;
    let split = p.personas()?;
    let suite = p.suite()?;
    let settings = p.cfg.personalization.clone();
    let mut spec = PersonalizationSpec::new(
        sensitive_classes(world.class_prior().as_slice(), settings.n_sensitive),
        settings.headline_lambda,
    );
    spec.epsilon = settings.epsilon;
    spec.validate(world.n_classes())?;
    let mut lambdas = settings.lambdas.clone();
    lambdas.push(settings.headline_lambda);
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();

    p.timed("personalize", |p| {
        let mut t = Table::new("personalization");
        for &k in &spec.sensitive_classes {
            t.push(MetricRow::new(
                format!("sensitive_class.{k}.prior"),
                world.class_prior()[k],
                1,
            ));
        }
        let eval_episode = p.cfg.episode(p.cfg.eval_alpha);
        let seeds = RolloutSeeds::new(p.cfg.seed, tag::EVAL);
        let evaluate = |p: &mut Pipeline,
                        t: &mut Table,
                        key: &str,
                        policy: PolicyNetwork|
         -> Result<(f64, f64)> {
            let mut o = AnyObfuscator::Policy(PolicyObfuscator::new(policy));
            let recs = p.rollouts(&mut o, &split.eval, &eval_episode, seeds, true)?;
            let (ws, wn) = split_stats(&recs, &spec, |r| (&r.c_o, &r.c_u))?;
            let (ss, sn) = split_stats(&recs, &spec, |r| (&r.c_o_surrogate, &r.c_u_surrogate))?;
            t.push(MetricRow::stats(format!("{key}.d_sens"), &ws));
            t.push(MetricRow::stats(format!("{key}.d_nonsens"), &wn));
            t.push(MetricRow::stats(format!("{key}.d_sens_surrogate"), &ss));
            t.push(MetricRow::stats(format!("{key}.d_nonsens_surrogate"), &sn));
            p.art
                .write_jsonl(&format!("raw/personalize_{key}.jsonl"), &recs)?;
            Ok((ws.mean, ss.mean))
        };
        let n = split.eval.len();
        let (base_w, base_s) = evaluate(p, &mut t, "standard", suite.policy.clone())?;
        for &lambda in &lambdas {
            let objective = Objective::Personalized(PersonalizationSpec {
                lambda,
                ..spec.clone()
            });
            let episode = EpisodeConfig {
                objective,
                ..p.cfg.a2c.episode.clone()
            };
            let (policy, _) = p.train_policy(&format!("policy_lambda_{lambda}"), episode)?;
            let key = format!("lambda_{lambda}");
            let (w, s) = evaluate(p, &mut t, &key, policy)?;
            t.push(MetricRow::new(
                format!("{key}.d_sens_reduction"),
                1.0 - w / base_w,
                n,
            ));
            t.push(MetricRow::new(
                format!("{key}.d_sens_reduction_surrogate"),
                1.0 - s / base_s,
                n,
            ));
        }
        p.art.write_table(t.clone())?;
        Ok(t)
    })
}
