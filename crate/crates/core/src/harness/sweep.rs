use super::artifacts::{MetricRow, Table};
use super::pipeline::{Pipeline, OBFUSCATORS};
use crate::denoiser::denoise;
use crate::error::Result;
use crate::metrics::{kl_divergence, privacy_norm, SampleStats};

/// Budgets of the sweep: α = 0 plus the configured list, ascending.
pub fn sweep_alphas(configured: &[f64]) -> Vec<f64> {
    let mut a: Vec<f64> = std::iter::once(0.0)
        .chain(configured.iter().copied())
        .collect();
    a.sort_by(f64::total_cmp);
    a.dedup();
    a
}

/// Privacy and utility of every obfuscator across budgets. The policy is the
/// one trained at the configured training budget; a denoiser is trained per
/// budget on rollouts of every obfuscator. Writes `sweep.csv`.
pub fn sweep_alpha(p: &mut Pipeline) -> Result<Table> {
    let corpus = p.corpus()?;
    let split = p.personas()?;
    p.suite()?;
    let s_norms = p.surrogate_norms()?;
    let alphas = sweep_alphas(&p.cfg.alphas);
    p.timed("sweep", |p| {
        let mut t = Table::new("sweep");
        for &alpha in &alphas {
            let ev = p.evaluate_at(alpha)?;
            let (model, _) = p.train_denoiser_at(alpha)?;
            for name in OBFUSCATORS {
                let mut recs = ev[name].clone();
                let (mut pw, mut ps, mut u) = (Vec::new(), Vec::new(), Vec::new());
                for r in &mut recs {
                    let c_hat = denoise(&model, &corpus, &r.v_u, &r.v_o, &r.c_o)?;
                    u.push(kl_divergence(&c_hat, &r.c_u)?);
                    pw.push(r.p_world()?);
                    ps.push(r.p_surrogate()?);
                    r.c_hat = Some(c_hat);
                }
                let key = format!("alpha_{alpha}.{name}");
                let (spw, sps, su) = (
                    SampleStats::of(&pw)?,
                    SampleStats::of(&ps)?,
                    SampleStats::of(&u)?,
                );
                t.push(MetricRow::stats(format!("{key}.p"), &spw));
                t.push(MetricRow::new(
                    format!("{key}.p_norm"),
                    privacy_norm(spw.mean, &split.norms),
                    spw.n,
                ));
                t.push(MetricRow::new(
                    format!("{key}.p_norm_surrogate"),
                    privacy_norm(sps.mean, &s_norms),
                    sps.n,
                ));
                t.push(MetricRow::stats(format!("{key}.none.u_loss"), &spw));
                t.push(MetricRow::stats(format!("{key}.de_harpo_den.u_loss"), &su));
                p.art
                    .write_jsonl(&format!("raw/sweep_alpha_{alpha}_{name}.jsonl"), &recs)?;
            }
        }
        p.art.write_table(t.clone())?;
        Ok(t)
    })
}
