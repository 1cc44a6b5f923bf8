//! Trains the stealth and de-obfuscation detectors against the obfuscators.

use recobf::harness::{ExperimentConfig, Pipeline, Stage};

fn main() -> recobf::Result<()> {
    let mut cfg = ExperimentConfig::smoke();
    cfg.output_dir = std::env::temp_dir().join("recobf-example-adversary");
    let mut p = Pipeline::new(cfg)?;
    p.run_until(Stage::Adversary)?;
    for r in &p
        .art
        .table("adversary")
        .expect("written by the adversary stage")
        .rows
    {
        println!("{:<40} {:.4}", r.metric, r.value);
    }
    Ok(())
}
