//! Trains the surrogate on sock-puppet personas crawled from the world.
//!
//! Arguments: persona count, epochs, hidden size.

use std::sync::Arc;
use std::time::Instant;

use recobf::corpus::{generate_corpus, CorpusConfig};
use recobf::diffnet::{FitConfig, OptimizerKind};
use recobf::metrics::crawl_seed;
use recobf::surrogate::{train_surrogate, SurrogateSample, SurrogateTrainConfig};
use recobf::world::{generate_sock_puppets, SockPuppetConfig, World, WorldConfig};

fn main() -> recobf::Result<()> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let n = args.first().copied().unwrap_or(600);
    let epochs = args.get(1).copied().unwrap_or(20);
    let hidden = args.get(2).copied().unwrap_or(32);

    let corpus = Arc::new(generate_corpus(&CorpusConfig::default(), 7)?);
    let world = World::new(
        corpus.clone(),
        WorldConfig {
            noise_temperature: 1.95,
            affinity_sharpness: 14.4,
            ..Default::default()
        },
    )?;
    let t = Instant::now();
    let personas = generate_sock_puppets(&SockPuppetConfig::default(), &world, n, 1)?;
    let data: Vec<SurrogateSample> = personas
        .iter()
        .enumerate()
        .map(|(i, p)| {
            Ok(SurrogateSample {
                persona: p.video_ids(),
                target: world.recommend(p, crawl_seed(2, i, 0))?.distribution,
            })
        })
        .collect::<recobf::Result<_>>()?;
    println!("{n} personas crawled in {:.1?}", t.elapsed());

    let fit = FitConfig {
        epochs,
        optimizer: OptimizerKind::Adam,
        lr: 3e-3,
        ..Default::default()
    };
    let cfg = SurrogateTrainConfig {
        hidden,
        fit,
        ..Default::default()
    };
    let t = Instant::now();
    let (_, rep) = train_surrogate(&corpus, &data, &cfg, 3)?;
    for c in rep.curve.iter().step_by((epochs / 10).max(1)) {
        println!(
            "epoch {:3}  train {:.4}  test {:.4}",
            c.epoch, c.train_loss, c.test_loss
        );
    }
    println!(
        "test {:.4}  mean-baseline {:.4}  uniform-baseline {:.4}  ({:.1?})",
        rep.test_loss,
        rep.mean_baseline_loss,
        rep.uniform_baseline_loss,
        t.elapsed()
    );
    Ok(())
}
