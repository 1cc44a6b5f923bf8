use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::*;
use crate::corpus::{generate_corpus, CorpusConfig};
use crate::diffnet::Parameterized;
use crate::world::{World, WorldConfig};

fn tiny_corpus() -> Arc<Corpus> {
    Arc::new(
        generate_corpus(
            &CorpusConfig {
                n_videos: 300,
                n_classes: 4,
                d_content: 4,
                ..Default::default()
            },
            11,
        )
        .unwrap(),
    )
}

fn small_policy(d: usize, seed: u64) -> (PolicyNetwork, CriticNetwork) {
    let cfg = PolicyConfig {
        window: 8,
        kernel: 3,
        conv_channels: 6,
        hidden: 5,
        similarity: Similarity::InnerProduct,
    };
    let mut r = rng::rng(seed);
    (
        PolicyNetwork::new(d, &cfg, &mut r).unwrap(),
        CriticNetwork::new(d, &cfg, &mut r).unwrap(),
    )
}

/// Distribution is looked up from the most recently pushed video.
struct TableEnv {
    corpus: Arc<Corpus>,
    table: HashMap<VideoId, ClassDistribution>,
    fallback: ClassDistribution,
}

impl Environment for TableEnv {
    type Cursor = Option<VideoId>;
    fn corpus(&self) -> &Corpus {
        &self.corpus
    }
    fn start(&self) -> Option<VideoId> {
        None
    }
    fn push(&self, c: &mut Option<VideoId>, id: VideoId) -> Result<()> {
        *c = Some(id);
        Ok(())
    }
    fn distribution(&self, c: &Option<VideoId>) -> Result<ClassDistribution> {
        Ok(c.and_then(|id| self.table.get(&id))
            .unwrap_or(&self.fallback)
            .clone())
    }
}

/// Two-class distribution whose KL to uniform equals `g`.
fn with_kl_to_uniform(g: f64) -> ClassDistribution {
    let u = ClassDistribution::uniform(2);
    let (mut lo, mut hi) = (0.5, 1.0 - 1e-4);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let d = ClassDistribution::new(vec![mid, 1.0 - mid]).unwrap();
        if kl_divergence(&d, &u).unwrap() < g {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    ClassDistribution::new(vec![lo, 1.0 - lo]).unwrap()
}

#[test]
fn zero_alpha_never_injects() {
    let mut r = rng::rng(1);
    assert!((0..10_000).all(|_| !schedule_injection(0.0, &mut r)));
}

#[test]
fn injection_fraction_concentrates() {
    let mut r = rng::rng(2);
    let hits = (0..10_000)
        .filter(|_| schedule_injection(0.2, &mut r))
        .count();
    let f = hits as f64 / 10_000.0;
    assert!((0.17..=0.23).contains(&f), "{f}");
}

#[test]
fn live_rate_and_expected_count() {
    assert!((live_injection_rate(0.2, 1.0) - 0.25).abs() < 1e-15);
    assert!((expected_injections(40, 0.2) - 10.0).abs() < 1e-12);
    assert!(check_alpha(1.0).is_err() && check_alpha(-0.1).is_err());
}

#[test]
fn identical_candidates_give_uniform() {
    let e = [0.3, -1.0, 2.0];
    let set = vec![&e[..]; 5];
    let p = policy_distribution(&[1.0, 2.0, 3.0], &set, Similarity::InnerProduct).unwrap();
    assert!(p.iter().all(|v| (v - 0.2).abs() < 1e-15));
}

#[test]
fn aligned_candidate_takes_all_mass() {
    let e1 = [1.0, 0.0, 0.0];
    let e2 = [0.0, 1.0, 0.0];
    let e3 = [0.0, 0.0, 1.0];
    let p = policy_distribution(
        &[100.0, 0.0, 0.0],
        &[&e1, &e2, &e3],
        Similarity::InnerProduct,
    )
    .unwrap();
    assert!(p[0] > 1.0 - 1e-12 && p[1] < 1e-40 && p[2] < 1e-40);
}

#[test]
fn three_way_softmax_by_hand() {
    let e_t = [0.5, -0.2];
    let cands = [[1.0, 2.0], [-0.3, 0.7], [0.0, -1.5]];
    let refs: Vec<&[f64]> = cands.iter().map(|c| &c[..]).collect();
    let z: Vec<f64> = cands
        .iter()
        .map(|c| (0.5 * c[0] - 0.2 * c[1] as f64).exp())
        .collect();
    let s: f64 = z.iter().sum();
    let p = policy_distribution(&e_t, &refs, Similarity::InnerProduct).unwrap();
    for (a, b) in p.iter().zip(&z) {
        assert!((a - b / s).abs() < 1e-15);
    }
    assert!(policy_distribution(&e_t, &[], Similarity::InnerProduct).is_err());
}

#[test]
fn probabilities_depend_only_on_inner_products() {
    let e_t = [1.0, 0.0, 0.0];
    let a = [[0.4, 1.0, -2.0], [0.1, 0.3, 0.9]];
    // shifting along a direction orthogonal to e_t leaves ⟨e_t, e_i⟩ unchanged
    let b: Vec<[f64; 3]> = a.iter().map(|v| [v[0], v[1] + 5.0, v[2] - 7.0]).collect();
    let pa = policy_distribution(&e_t, &[&a[0], &a[1]], Similarity::InnerProduct).unwrap();
    let pb = policy_distribution(&e_t, &[&b[0], &b[1]], Similarity::InnerProduct).unwrap();
    assert_eq!(pa, pb);
}

#[test]
fn cosine_logits_ignore_scale() {
    let e_t = [2.0, -1.0];
    let c = [[1.0, 1.0], [10.0, 10.0]];
    let z = action_logits(&e_t, &[&c[0], &c[1]], Similarity::Cosine { scale: 3.0 });
    assert!((z[0] - z[1]).abs() < 1e-12);
}

#[test]
fn logit_backward_matches_finite_differences() {
    let mut r = rng::rng(3);
    for sim in [Similarity::InnerProduct, Similarity::Cosine { scale: 2.5 }] {
        let e: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
        let cands: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..4).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = cands.iter().map(|c| c.as_slice()).collect();
        let w: Vec<f64> = (0..5).map(|_| r.random_range(-1.0..1.0)).collect();
        let f = |e: &[f64]| {
            action_logits(e, &refs, sim)
                .iter()
                .zip(&w)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let g = action_logits_backward(&e, &refs, &w, sim);
        for j in 0..4 {
            let (mut p, mut m) = (e.clone(), e.clone());
            p[j] += 1e-6;
            m[j] -= 1e-6;
            let fd = (f(&p) - f(&m)) / 2e-6;
            assert!(
                (fd - g[j]).abs() < 1e-7 * (1.0 + fd.abs()),
                "{sim:?} {fd} {}",
                g[j]
            );
        }
    }
}

#[test]
fn history_window_pads_at_front() {
    let c = tiny_corpus();
    let d = c.embedding_dim();
    let x = history_window(&c, &[7, 9], 4);
    assert!(x[..2 * d].iter().all(|v| *v == 0.0));
    assert_eq!(&x[2 * d..3 * d], c.embedding(7));
    assert_eq!(&x[3 * d..], c.embedding(9));
    let long: Vec<VideoId> = (0..10).collect();
    assert_eq!(&history_window(&c, &long, 4)[..d], c.embedding(6));
}

fn table_env(c: &Arc<Corpus>) -> TableEnv {
    TableEnv {
        corpus: c.clone(),
        table: HashMap::new(),
        fallback: ClassDistribution::uniform(2),
    }
}

#[test]
fn zero_alpha_episode_is_identity() {
    let c = tiny_corpus();
    let env = table_env(&c);
    let set = ObfuscationSet::new(&c, vec![1, 2, 3]).unwrap();
    let user: Vec<VideoId> = (10..50).collect();
    let ep = run_episode(
        &mut RandObfuscator,
        &user,
        &env,
        &set,
        &EpisodeConfig::with_alpha(0.0),
        4,
    )
    .unwrap();
    assert_eq!(ep.persona, Persona::from_user(&user));
    assert!(ep.trajectory.is_empty());
}

#[test]
fn rewards_telescope_and_subsequence_holds() {
    let c = tiny_corpus();
    let w = World::new(
        c.clone(),
        WorldConfig {
            refreshes: 5,
            ..Default::default()
        },
    )
    .unwrap();
    let env = WorldEnv { world: &w, seed: 8 };
    let set = ObfuscationSet::stratified(&w, 4, 1).unwrap();
    let user: Vec<VideoId> = (0..40).map(|i| i * 7 % 300).collect();
    for reference in [RewardReference::UserPrefix, RewardReference::FullPersona] {
        let cfg = EpisodeConfig {
            alpha: 0.3,
            reference,
            ..Default::default()
        };
        let ep = run_episode(&mut RandObfuscator, &user, &env, &set, &cfg, 5).unwrap();
        let t = &ep.trajectory;
        if reference == RewardReference::UserPrefix {
            assert_eq!(t.p_0, 0.0);
        }
        assert!(!t.is_empty());
        let sum: f64 = t.rewards().iter().sum();
        assert!((sum - (t.p_final - t.p_0)).abs() < 1e-12);
        assert!(ep.persona.preserves_user(&user));
        assert_eq!(ep.persona.obfuscation_count(), t.len());
        assert!((t.p_final - kl_divergence(&ep.c_o, &ep.c_u).unwrap()).abs() < 1e-15);
        for s in &t.steps {
            assert_eq!(ep.persona.entries[s.position].source, Source::Obfuscation);
        }
    }
}

#[test]
fn mean_injection_count_matches_budget() {
    let c = tiny_corpus();
    let env = table_env(&c);
    let set = ObfuscationSet::new(&c, vec![1]).unwrap();
    let user: Vec<VideoId> = (10..50).collect();
    let n = 2000;
    let total: usize = (0..n)
        .map(|s| {
            run_episode(
                &mut RandObfuscator,
                &user,
                &env,
                &set,
                &EpisodeConfig::with_alpha(0.2),
                s,
            )
            .unwrap()
            .trajectory
            .len()
        })
        .sum();
    let mean = total as f64 / n as f64;
    // per-persona count has variance 40·α/(1−α)² = 12.5
    assert!(
        (mean - 10.0).abs() < 4.0 * (12.5f64 / n as f64).sqrt(),
        "{mean}"
    );
}

#[test]
fn schedule_is_shared_across_obfuscators() {
    let c = tiny_corpus();
    let env = table_env(&c);
    let set = ObfuscationSet::new(&c, vec![1, 2, 3, 4]).unwrap();
    let user: Vec<VideoId> = (10..50).collect();
    let a = run_episode(
        &mut RandObfuscator,
        &user,
        &env,
        &set,
        &EpisodeConfig::with_alpha(0.4),
        9,
    )
    .unwrap();
    let mut bias = BiasObfuscator::new(&[0.0, 1.0, 0.0, 0.0]).unwrap();
    let b = run_episode(
        &mut bias,
        &user,
        &env,
        &set,
        &EpisodeConfig::with_alpha(0.4),
        9,
    )
    .unwrap();
    assert_eq!(a.persona.labels(), b.persona.labels());
    assert!(b.trajectory.steps.iter().all(|s| s.video_id == 2));
}

#[test]
fn rand_single_and_empty_sets() {
    let c = tiny_corpus();
    let env = table_env(&c);
    let set = ObfuscationSet::new(&c, vec![42]).unwrap();
    let ep = run_episode(
        &mut RandObfuscator,
        &[5, 6, 7],
        &env,
        &set,
        &EpisodeConfig::with_alpha(0.5),
        1,
    )
    .unwrap();
    assert!(ep.trajectory.steps.iter().all(|s| s.video_id == 42));
    assert!(ObfuscationSet::new(&c, vec![]).is_err());
}

#[test]
fn rand_is_uniform_by_chi_squared() {
    let c = tiny_corpus();
    let env = table_env(&c);
    let set = ObfuscationSet::new(&c, (0..8).collect()).unwrap();
    let cursor = None;
    let cu = ClassDistribution::uniform(2);
    let ctx = StepContext {
        env: &env,
        played: &[],
        cursor: &cursor,
        c_u: &cu,
        current: 0.0,
        objective: &Objective::Privacy,
        set: &set,
    };
    let mut r = rng::rng(6);
    let mut counts = [0.0f64; 8];
    for _ in 0..10_000 {
        counts[RandObfuscator.select(&ctx, &mut r).unwrap()] += 1.0;
    }
    let e = 10_000.0 / 8.0;
    let chi2: f64 = counts.iter().map(|o| (o - e).powi(2) / e).sum();
    let p = 1.0 - ChiSquared::new(7.0).unwrap().cdf(chi2);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn bias_normalization_and_fallbacks() {
    assert_eq!(
        BiasObfuscator::new(&[3.0, 1.0]).unwrap().probabilities(),
        &[0.75, 0.25]
    );
    assert_eq!(
        BiasObfuscator::new(&[2.0, 2.0]).unwrap().probabilities(),
        &[0.5, 0.5]
    );
    assert_eq!(
        BiasObfuscator::new(&[0.0, 0.0, 0.0, 0.0])
            .unwrap()
            .probabilities(),
        &[0.25; 4]
    );
    assert_eq!(
        BiasObfuscator::new(&[-1.0, 2.0]).unwrap().probabilities(),
        &[0.0, 1.0]
    );
    assert_eq!(
        BiasObfuscator::new(&[-1.0, -2.0]).unwrap().probabilities(),
        &[0.5, 0.5]
    );
    assert!(BiasObfuscator::new(&[]).is_err());
}

#[test]
fn bias_profile_accumulates_rewards() {
    let c = tiny_corpus();
    let mut env = table_env(&c);
    env.table.insert(1, with_kl_to_uniform(0.3));
    let set = ObfuscationSet::new(&c, vec![1, 2]).unwrap();
    let personas = vec![vec![]; 0];
    assert_eq!(
        bias_profile(&env, &personas, &set, &EpisodeConfig::with_alpha(0.3), 3, 1).unwrap(),
        vec![0.0, 0.0]
    );
    let personas: Vec<Vec<VideoId>> = vec![(10..30).collect(); 4];
    let prof = bias_profile(&env, &personas, &set, &EpisodeConfig::with_alpha(0.3), 2, 1).unwrap();
    // video 1 raises KL when played last before a user video; the user video resets it
    assert!(prof[0] > 0.0, "{prof:?}");
}

#[test]
fn pbooster_picks_larger_gain_and_breaks_ties_low() {
    let c = tiny_corpus();
    let mut env = table_env(&c);
    env.table.insert(20, with_kl_to_uniform(0.1));
    env.table.insert(10, with_kl_to_uniform(0.2));
    let cu = ClassDistribution::uniform(2);
    let cursor = None;
    let mut r = rng::rng(1);
    let mut pb = PBoosterObfuscator::default();

    let set = ObfuscationSet::new(&c, vec![20, 10]).unwrap();
    let ctx = StepContext {
        env: &env,
        played: &[],
        cursor: &cursor,
        c_u: &cu,
        current: 0.0,
        objective: &Objective::Privacy,
        set: &set,
    };
    assert_eq!(pb.select(&ctx, &mut r).unwrap(), 1);

    let single = ObfuscationSet::new(&c, vec![20]).unwrap();
    let ctx = StepContext {
        set: &single,
        ..ctx
    };
    assert_eq!(pb.select(&ctx, &mut r).unwrap(), 0);

    // videos 30 and 31 both fall back to the uniform table entry
    let tie = ObfuscationSet::new(&c, vec![31, 30]).unwrap();
    let ctx = StepContext { set: &tie, ..ctx };
    assert_eq!(pb.select(&ctx, &mut r).unwrap(), 1);
}

#[test]
fn bandit_policy_concentrates_on_rewarded_video() {
    let c = tiny_corpus();
    let d = c.embedding_dim();
    let (mut policy, mut critic) = small_policy(d, 3);
    let set = ObfuscationSet::new(&c, vec![0, 50, 100, 150, 200]).unwrap();
    let cfg = A2cConfig {
        entropy_weight: 0.0,
        actor_lr: 0.01,
        critic_lr: 0.01,
        ..Default::default()
    };
    let mut actor_opt = crate::diffnet::Adam::new(cfg.actor_lr);
    let mut critic_opt = crate::diffnet::Adam::new(cfg.critic_lr);
    let played: Vec<VideoId> = vec![7, 8, 9];
    let window = history_window(&c, &played, policy.trunk.window());
    let mut r = rng::rng(4);
    let mass = |p: &PolicyNetwork| {
        let (e, _) = p.trunk.step(&window, &p.trunk.lstm.initial_state());
        policy_distribution(&e, &set.embedding_refs(), p.config.similarity).unwrap()[0]
    };
    let before = mass(&policy);
    for _ in 0..200 {
        policy.zero_grad();
        critic.zero_grad();
        let mut steps = 0;
        for _ in 0..cfg.episodes_per_update {
            let (e, _) = policy
                .trunk
                .step(&window, &policy.trunk.lstm.initial_state());
            let probs =
                policy_distribution(&e, &set.embedding_refs(), policy.config.similarity).unwrap();
            let action = sample_index(&probs, &mut r);
            let reward = if set.id(action) == 0 { 1.0 } else { 0.0 };
            let rec = [StepRecord {
                window: window.clone(),
                action,
            }];
            steps +=
                accumulate_a2c_gradients(&mut policy, &mut critic, &set, &rec, &[reward], &cfg)
                    .unwrap()
                    .steps;
        }
        a2c::apply(&mut policy.trunk, &mut actor_opt, steps, cfg.clip_norm).unwrap();
        a2c::apply(&mut critic.trunk, &mut critic_opt, steps, cfg.clip_norm).unwrap();
    }
    let after = mass(&policy);
    assert!(after > 0.9, "{before} -> {after}");
}

#[test]
fn a2c_gradients_match_finite_differences() {
    // With fixed advantages the actor loss is a smooth function of the weights.
    let c = tiny_corpus();
    let d = c.embedding_dim();
    let (policy, critic) = small_policy(d, 9);
    let set = ObfuscationSet::new(&c, vec![0, 50, 100]).unwrap();
    let records: Vec<StepRecord> = (0..3)
        .map(|t| StepRecord {
            window: history_window(&c, &[(t * 13) as VideoId, 40, 41], 8),
            action: t % 3,
        })
        .collect();
    let rewards = [0.3, -0.1, 0.5];
    let cfg = A2cConfig {
        entropy_weight: 0.05,
        ..Default::default()
    };
    // advantages depend only on the critic, which is not perturbed here
    let values = critic.values(&records.iter().map(|r| r.window.clone()).collect::<Vec<_>>());
    let returns = a2c::discounted_returns(&rewards, cfg.gamma);
    let adv: Vec<f64> = returns.iter().zip(&values).map(|(g, v)| g - v).collect();
    let loss = |p: &PolicyNetwork| {
        let xs: Vec<Vec<f64>> = records.iter().map(|r| r.window.clone()).collect();
        let (es, _) = p.trunk.forward_tape(&xs);
        es.iter()
            .enumerate()
            .map(|(t, e)| {
                let logp = crate::diffnet::log_softmax(&action_logits(
                    e,
                    &set.embedding_refs(),
                    p.config.similarity,
                ));
                let h: f64 = -logp.iter().map(|l| l.exp() * l).sum::<f64>();
                -logp[records[t].action] * adv[t] - cfg.entropy_weight * h
            })
            .sum::<f64>()
    };
    let mut p = policy.clone();
    let mut cr = critic.clone();
    p.zero_grad();
    cr.zero_grad();
    accumulate_a2c_gradients(&mut p, &mut cr, &set, &records, &rewards, &cfg).unwrap();
    let analytic: Vec<f64> = p.params().iter().flat_map(|q| q.grad.clone()).collect();
    let mut probe = policy.clone();
    let n = probe.num_params();
    let mut r = rng::rng(2);
    for _ in 0..40 {
        let k = r.random_range(0..n);
        let (pi, off) = locate(&probe, k);
        let orig = probe.params()[pi].value[off];
        probe.params_mut()[pi].value[off] = orig + 1e-5;
        let lp = loss(&probe);
        probe.params_mut()[pi].value[off] = orig - 1e-5;
        let lm = loss(&probe);
        probe.params_mut()[pi].value[off] = orig;
        let fd = (lp - lm) / 2e-5;
        assert!(
            (fd - analytic[k]).abs() < 1e-6 * (1.0 + fd.abs()),
            "param {k}: fd {fd} vs {}",
            analytic[k]
        );
    }
}

fn locate<M: Parameterized>(m: &M, mut k: usize) -> (usize, usize) {
    for (i, p) in m.params().iter().enumerate() {
        if k < p.len() {
            return (i, k);
        }
        k -= p.len();
    }
    unreachable!()
}

#[test]
fn a2c_training_is_seeded_and_improves_on_surrogate_env() {
    let c = tiny_corpus();
    let d = c.embedding_dim();
    let shape = crate::surrogate::SurrogateShape {
        d_emb: d,
        hidden: 6,
        n_classes: 4,
    };
    let model = SurrogateNetwork::new(shape, &mut rng::rng(1));
    let env = SurrogateEnv {
        model: &model,
        corpus: &c,
    };
    let set = ObfuscationSet::new(&c, (0..30).map(|i| i * 9).collect()).unwrap();
    let personas: Vec<Vec<VideoId>> = (0..8)
        .map(|p| {
            (0..10)
                .map(|i| ((p * 31 + i * 17) % 300) as VideoId)
                .collect()
        })
        .collect();
    let cfg = A2cConfig {
        epochs: 3,
        episode: EpisodeConfig::with_alpha(0.3),
        episodes_per_update: 4,
        ..Default::default()
    };
    let run = || {
        let (mut p, mut cr) = small_policy(d, 5);
        let rep = train_a2c(&mut p, &mut cr, &env, &personas, &set, &cfg, 77).unwrap();
        (p, rep)
    };
    let (p1, r1) = run();
    let (p2, r2) = run();
    assert_eq!(p1, p2);
    assert_eq!(r1, r2);
    assert_eq!(r1.curve.len(), 3);
    assert_eq!(r1.updates, 6);
}

#[test]
fn divergence_guard_trips() {
    let c = tiny_corpus();
    let d = c.embedding_dim();
    let (mut p, mut cr) = small_policy(d, 5);
    let set = ObfuscationSet::new(&c, vec![0, 1]).unwrap();
    let mut env = table_env(&c);
    env.table.insert(0, with_kl_to_uniform(0.5));
    env.table.insert(1, with_kl_to_uniform(0.5));
    let personas = vec![(10..40).collect::<Vec<VideoId>>()];
    let cfg = A2cConfig {
        epochs: 1,
        episode: EpisodeConfig::with_alpha(0.5),
        advantage_guard: 1e-9,
        ..Default::default()
    };
    assert!(matches!(
        train_a2c(&mut p, &mut cr, &env, &personas, &set, &cfg, 1),
        Err(Error::Diverged(_))
    ));
}

#[test]
fn policy_checkpoint_round_trips() {
    let c = tiny_corpus();
    let (p, cr) = small_policy(c.embedding_dim(), 2);
    assert_eq!(
        PolicyNetwork::from_checkpoint(&p.to_checkpoint().unwrap()).unwrap(),
        p
    );
    assert_eq!(
        CriticNetwork::from_checkpoint(&cr.to_checkpoint().unwrap()).unwrap(),
        cr
    );
    assert!(CriticNetwork::from_checkpoint(&p.to_checkpoint().unwrap()).is_err());
}

#[test]
fn stratified_set_covers_classes() {
    let c = tiny_corpus();
    let w = World::new(c.clone(), WorldConfig::default()).unwrap();
    let s = ObfuscationSet::stratified(&w, 3, 4).unwrap();
    assert_eq!(s.len(), 12);
    for k in 0..4 {
        assert_eq!(
            s.ids()
                .iter()
                .filter(|id| c.video(**id).primary_class == k)
                .count(),
            3
        );
    }
    assert!(s.ids().iter().all(|id| w.is_recommendable(*id)));
}
