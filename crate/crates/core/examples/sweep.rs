//! Privacy and utility across obfuscation budgets.

use recobf::harness::{sweep_alpha, ExperimentConfig, Pipeline};

fn main() -> recobf::Result<()> {
    let mut cfg = ExperimentConfig::smoke();
    cfg.output_dir = std::env::temp_dir().join("recobf-example-sweep");
    let mut p = Pipeline::new(cfg)?;
    let t = sweep_alpha(&mut p)?;
    for r in t.rows.iter().filter(|r| r.metric.contains(".de_harpo.")) {
        println!("{:<42} {:.4}", r.metric, r.value);
    }
    Ok(())
}
