//! Denoises obfuscated recommendations and materializes a recommendation
//! list for the estimate.

use recobf::corpus::build_bank;
use recobf::denoiser::{denoise, repopulate};
use recobf::harness::{ExperimentConfig, Pipeline};
use recobf::metrics::kl_divergence;

fn main() -> recobf::Result<()> {
    let mut cfg = ExperimentConfig::smoke();
    cfg.output_dir = std::env::temp_dir().join("recobf-example-denoise");
    let mut p = Pipeline::new(cfg)?;
    let corpus = p.corpus()?;
    let model = p.denoiser()?;
    let ev = p.evaluation()?;
    let bank = build_bank(&corpus, &[], &p.cfg.bank)?.bank;

    for r in ev["de_harpo"].iter().take(5) {
        let c_hat = denoise(&model, &corpus, &r.v_u, &r.v_o, &r.c_o)?;
        let list = repopulate(&bank, &c_hat, 20)?;
        println!(
            "persona {:3}: KL(C^o‖C^u) {:.3}  KL(Ĉ^u‖C^u) {:.3}  repopulated TV gap {:.3}",
            r.persona,
            kl_divergence(&r.c_o, &r.c_u)?,
            kl_divergence(&c_hat, &r.c_u)?,
            list.tv_gap
        );
    }
    Ok(())
}
