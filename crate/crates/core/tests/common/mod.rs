//! Helpers shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use recobf::diffnet::{bce_with_logit, kl_loss, Conv1d, Dense, KlDirection, Lstm, Parameterized};

const H: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, 1e-3)`; the floor keeps near-zero gradients from
/// turning rounding noise into huge ratios.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

fn vec_in<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn central<F: FnMut(f64) -> f64>(mut f: F, x: f64) -> f64 {
    (f(x + H) - f(x - H)) / (2.0 * H)
}

/// Checks every parameter and input coordinate of a model whose scalar loss
/// is `loss(model, input)` and whose analytic pass fills parameter gradients
/// and returns `dL/dinput`.
fn check_model<M: Parameterized + Clone>(
    model: &M,
    input: &[f64],
    loss: &dyn Fn(&M, &[f64]) -> f64,
    analytic: &dyn Fn(&mut M, &[f64]) -> Vec<f64>,
) -> f64 {
    let mut m = model.clone();
    m.zero_grad();
    let dx = analytic(&mut m, input);
    let mut worst: f64 = 0.0;
    let n_params = m.params().len();
    for pi in 0..n_params {
        let len = m.params()[pi].len();
        for j in 0..len {
            let g = m.params()[pi].grad[j];
            let base = model.params()[pi].value[j];
            let num = central(
                |v| {
                    let mut probe = model.clone();
                    probe.params_mut()[pi].value[j] = v;
                    loss(&probe, input)
                },
                base,
            );
            worst = worst.max(rel_err(g, num));
        }
    }
    for j in 0..input.len() {
        let num = central(
            |v| {
                let mut x = input.to_vec();
                x[j] = v;
                loss(model, &x)
            },
            input[j],
        );
        worst = worst.max(rel_err(dx[j], num));
    }
    worst
}

pub fn dense_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (i, o) = (rng.random_range(1..7), rng.random_range(1..7));
    let layer = Dense::new(i, o, &mut rng);
    let x = vec_in(&mut rng, i);
    let r = vec_in(&mut rng, o);
    let loss = |m: &Dense, x: &[f64]| m.forward(x).iter().zip(&r).map(|(a, b)| a * b).sum();
    check_model(&layer, &x, &loss, &|m, x| m.backward(x, &r))
}

pub fn conv_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (i, o, k) = (
        rng.random_range(1..5),
        rng.random_range(1..5),
        rng.random_range(1..4),
    );
    let len = k + rng.random_range(0..4);
    let layer = Conv1d::new(i, o, k, &mut rng);
    let x = vec_in(&mut rng, len * i);
    let r = vec_in(&mut rng, layer.out_len(len) * o);
    let loss = |m: &Conv1d, x: &[f64]| m.forward(x, len).iter().zip(&r).map(|(a, b)| a * b).sum();
    check_model(&layer, &x, &loss, &|m, x| m.backward(x, len, &r))
}

pub fn lstm_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (i, h, len) = (
        rng.random_range(1..5),
        rng.random_range(1..5),
        rng.random_range(1..6),
    );
    let layer = Lstm::new(i, h, &mut rng);
    let x = vec_in(&mut rng, len * i);
    // Every step's hidden output feeds the loss.
    let r: Vec<Vec<f64>> = (0..len).map(|_| vec_in(&mut rng, h)).collect();
    let loss = |m: &Lstm, x: &[f64]| {
        let steps: Vec<&[f64]> = x.chunks(i).collect();
        let trace = m.forward_seq(&steps);
        trace
            .hs
            .iter()
            .zip(&r)
            .map(|(hs, rs)| hs.iter().zip(rs).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    };
    check_model(&layer, &x, &loss, &|m, x| {
        let steps: Vec<&[f64]> = x.chunks(i).collect();
        let trace = m.forward_seq(&steps);
        m.backward_seq(&trace, &r).concat()
    })
}

/// Both KL directions and the logistic loss, with respect to the logits.
pub fn loss_head_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(2..7);
    let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let target: Vec<f64> = raw.iter().map(|v| v / s).collect();
    let mut worst: f64 = 0.0;
    for dir in [
        KlDirection::TargetToPrediction,
        KlDirection::PredictionToTarget,
    ] {
        let (_, g) = kl_loss(&logits, &target, dir);
        for j in 0..k {
            let num = central(
                |v| {
                    let mut z = logits.clone();
                    z[j] = v;
                    kl_loss(&z, &target, dir).0
                },
                logits[j],
            );
            worst = worst.max(rel_err(g[j], num));
        }
    }
    let label = if rng.random::<bool>() { 1.0 } else { 0.0 };
    let (_, g) = bce_with_logit(logits[0], label);
    let num = central(|v| bce_with_logit(v, label).0, logits[0]);
    worst.max(rel_err(g, num))
}

/// Worst relative error over `n` random configurations of every layer.
pub fn gradient_suite(n: u64) -> f64 {
    (0..n)
        .map(|s| {
            dense_error(s)
                .max(conv_error(1000 + s))
                .max(lstm_error(2000 + s))
                .max(loss_head_error(3000 + s))
        })
        .fold(0.0, f64::max)
}

pub mod episodes {
    use std::sync::Arc;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use recobf::corpus::{generate_corpus, Corpus, CorpusConfig, VideoId};
    use recobf::obfuscator::{
        run_episode, AnyObfuscator, BiasObfuscator, EpisodeConfig, ObfuscationSet,
        PBoosterObfuscator, PolicyConfig, PolicyNetwork, PolicyObfuscator, RandObfuscator,
        SurrogateEnv,
    };
    use recobf::surrogate::{SurrogateNetwork, SurrogateShape};
    use recobf::world::Persona;

    /// A small corpus, an untrained surrogate and one of each obfuscator.
    pub struct Fixture {
        pub corpus: Arc<Corpus>,
        pub surrogate: SurrogateNetwork,
        pub set: ObfuscationSet,
        pub obfuscators: Vec<AnyObfuscator>,
    }

    impl Fixture {
        pub fn new(seed: u64) -> Self {
            let corpus = Arc::new(
                generate_corpus(
                    &CorpusConfig {
                        n_videos: 400,
                        n_classes: 5,
                        ..Default::default()
                    },
                    seed,
                )
                .unwrap(),
            );
            let d = corpus.embedding_dim();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let surrogate = SurrogateNetwork::new(
                SurrogateShape {
                    d_emb: d,
                    hidden: 8,
                    n_classes: 5,
                },
                &mut rng,
            );
            let ids: Vec<VideoId> = (0..40).map(|i| i * 9).collect();
            let set = ObfuscationSet::new(&corpus, ids).unwrap();
            let policy_cfg = PolicyConfig {
                window: 8,
                kernel: 3,
                conv_channels: 6,
                hidden: 6,
                ..Default::default()
            };
            let policy = PolicyNetwork::new(d, &policy_cfg, &mut rng).unwrap();
            let profile: Vec<f64> = (0..set.len()).map(|_| rng.random_range(0.0..1.0)).collect();
            let obfuscators = vec![
                AnyObfuscator::Policy(PolicyObfuscator::new(policy)),
                AnyObfuscator::PBooster(PBoosterObfuscator { candidates: 4 }),
                AnyObfuscator::Bias(BiasObfuscator::new(&profile).unwrap()),
                AnyObfuscator::Rand(RandObfuscator),
            ];
            Self {
                corpus,
                surrogate,
                set,
                obfuscators,
            }
        }

        pub fn random_user<R: Rng>(&self, rng: &mut R, len: usize) -> Vec<VideoId> {
            (0..len)
                .map(|_| rng.random_range(0..self.corpus.len() as VideoId))
                .collect()
        }

        pub fn episode(
            &mut self,
            which: usize,
            user: &[VideoId],
            alpha: f64,
            seed: u64,
        ) -> Persona {
            let env = SurrogateEnv {
                model: &self.surrogate,
                corpus: &self.corpus,
            };
            let cfg = EpisodeConfig::with_alpha(alpha);
            run_episode(
                &mut self.obfuscators[which],
                user,
                &env,
                &self.set,
                &cfg,
                seed,
            )
            .unwrap()
            .persona
        }
    }
}
