mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::episodes::Fixture;
use recobf::metrics::{
    kl_divergence, privacy_norm, utility_gain_norm, ClassDistribution, NormalizationConstants,
    KL_FLOOR,
};
use recobf::obfuscator::{
    expected_injections, policy_distribution, schedule_injection, Similarity,
};

fn simplex(k: usize) -> impl Strategy<Value = ClassDistribution> {
    // Some entries are exactly zero so the floor is exercised.
    prop::collection::vec(prop_oneof![1 => Just(0.0), 4 => 0.0..1.0f64], k).prop_filter_map(
        "all zero",
        |w| {
            let s: f64 = w.iter().sum();
            (s > 0.0).then(|| ClassDistribution::new(w.iter().map(|x| x / s).collect()).ok())?
        },
    )
}

fn pair() -> impl Strategy<Value = (ClassDistribution, ClassDistribution)> {
    (2usize..12).prop_flat_map(|k| (simplex(k), simplex(k)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn kl_is_finite_and_nonnegative_up_to_the_floor((p, q) in pair()) {
        let d = kl_divergence(&p, &q).unwrap();
        prop_assert!(d.is_finite());
        // Flooring without renormalizing can lift each side's mass to at most
        // 1 + Kε; the log-sum inequality then bounds the deficit by Kε.
        prop_assert!(d >= -(p.len() as f64) * KL_FLOOR, "{d}");
    }

    #[test]
    fn kl_of_identical_distributions_is_zero((p, _) in pair()) {
        prop_assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn normalized_metrics_do_not_depend_on_the_log_base(
        (p, q) in pair(),
        lo in 0.0..0.5f64,
        width in 0.1..2.0f64,
        u_frac in 0.0..1.0f64,
    ) {
        let to_bits = std::f64::consts::LN_2.recip();
        let pv = kl_divergence(&p, &q).unwrap();
        let nats = NormalizationConstants::new(lo, lo + width).unwrap();
        let bits = NormalizationConstants::new(lo * to_bits, (lo + width) * to_bits).unwrap();
        let a = privacy_norm(pv, &nats);
        let b = privacy_norm(pv * to_bits, &bits);
        prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));

        let p_hi = lo + width;
        let u = lo + u_frac * width;
        let a = utility_gain_norm(p_hi, u, lo);
        let b = utility_gain_norm(p_hi * to_bits, u * to_bits, lo * to_bits);
        prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn action_probabilities_form_a_distribution(
        e in prop::collection::vec(-3.0..3.0f64, 4),
        set in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 4), 1..20),
        cosine in any::<bool>(),
    ) {
        let refs: Vec<&[f64]> = set.iter().map(|v| v.as_slice()).collect();
        let sim = if cosine { Similarity::Cosine { scale: 5.0 } } else { Similarity::InnerProduct };
        let probs = policy_distribution(&e, &refs, sim).unwrap();
        prop_assert_eq!(probs.len(), set.len());
        prop_assert!(probs.iter().all(|p| *p >= 0.0 && p.is_finite()));
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn scheduled_fraction_tracks_the_budget() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 10_000;
    let hits = (0..n).filter(|_| schedule_injection(0.2, &mut rng)).count();
    let frac = hits as f64 / n as f64;
    assert!((0.17..=0.23).contains(&frac), "{frac}");
    assert!((expected_injections(40, 0.2) - 10.0).abs() < 1e-12);
}

#[test]
fn episodes_realize_the_budget() {
    let mut fx = Fixture::new(3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut injected, mut total) = (0, 0);
    for i in 0..300 {
        let user = fx.random_user(&mut rng, 40);
        let persona = fx.episode(3, &user, 0.2, i);
        injected += persona.obfuscation_count();
        total += persona.len();
    }
    let frac = injected as f64 / total as f64;
    assert!((0.17..=0.23).contains(&frac), "{frac}");
    let per_persona = injected as f64 / 300.0;
    assert!((per_persona - 10.0).abs() < 1.0, "{per_persona}");
}

#[test]
fn user_subsequence_survives_every_obfuscator() {
    let mut fx = Fixture::new(5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 0..1000u64 {
        let len = 1 + (i as usize * 7) % 40;
        let user = fx.random_user(&mut rng, len);
        let alpha = [0.0, 0.2, 0.5, 0.9][(i / 4) as usize % 4];
        let persona = fx.episode((i % 4) as usize, &user, alpha, i);
        assert_eq!(persona.user_videos(), user, "episode {i}");
    }
}
