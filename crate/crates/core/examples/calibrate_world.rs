//! Calibrates the oracle's noise and sharpness against sock-puppet personas.

use std::sync::Arc;
use std::time::Instant;

use recobf::corpus::{generate_corpus, CorpusConfig};
use recobf::world::{calibrate_world, CalibrationConfig, WorldConfig};

fn main() -> recobf::Result<()> {
    let corpus = Arc::new(generate_corpus(&CorpusConfig::default(), 7)?);
    let t = Instant::now();
    let rep = calibrate_world(
        corpus,
        &WorldConfig::default(),
        &CalibrationConfig::default(),
        11,
    )?;
    println!("noise_temperature  {:.4}", rep.config.noise_temperature);
    println!("affinity_sharpness {:.4}", rep.config.affinity_sharpness);
    println!(
        "d_min {:.4} ± {:.4}",
        rep.norms.d_min, rep.norms.d_min_stderr
    );
    println!(
        "d_max {:.4} ± {:.4}",
        rep.norms.d_max, rep.norms.d_max_stderr
    );
    println!(
        "{} evaluations, bracketed={}, {:.1?}",
        rep.evaluations,
        rep.bracketed,
        t.elapsed()
    );
    Ok(())
}
