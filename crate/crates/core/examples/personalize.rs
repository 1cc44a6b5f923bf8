//! Trains personalized policies that keep sensitive classes out of the
//! obfuscated recommendations.

use recobf::harness::{personalization_study, ExperimentConfig, Pipeline};

fn main() -> recobf::Result<()> {
    let mut cfg = ExperimentConfig::smoke();
    cfg.output_dir = std::env::temp_dir().join("recobf-example-personalize");
    let mut p = Pipeline::new(cfg)?;
    for r in &personalization_study(&mut p)?.rows {
        println!("{:<40} {:.4}", r.metric, r.value);
    }
    Ok(())
}
