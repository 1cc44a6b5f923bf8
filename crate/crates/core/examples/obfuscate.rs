//! Trains the policy and the baselines on the smoke configuration and prints
//! their privacy against the surrogate and the world.

use recobf::harness::{ExperimentConfig, Pipeline, Stage};

fn main() -> recobf::Result<()> {
    let mut cfg = ExperimentConfig::smoke();
    cfg.output_dir = std::env::temp_dir().join("recobf-example-obfuscate");
    let mut p = Pipeline::new(cfg)?;
    p.run_until(Stage::Evaluate)?;
    for name in ["privacy_surrogate", "privacy_world"] {
        for r in &p
            .art
            .table(name)
            .expect("written by the evaluate stage")
            .rows
        {
            println!("{name}.{:<36} {:.4}", r.metric, r.value);
        }
    }
    Ok(())
}
