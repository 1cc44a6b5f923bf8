use super::*;
use crate::corpus::{generate_corpus, CorpusConfig};
use crate::diffnet::{OptimizerKind, Parameterized};
use rand::Rng;

fn corpus() -> Corpus {
    generate_corpus(
        &CorpusConfig {
            n_videos: 400,
            n_classes: 4,
            d_content: 6,
            ..Default::default()
        },
        3,
    )
    .unwrap()
}

#[test]
fn confusion_ratios_by_hand() {
    let c = Confusion {
        tp: 3,
        fp: 1,
        tn: 12,
        fn_: 4,
    };
    let r = EvalReport::from_confusion(c, 0.5);
    assert_eq!(r.precision, Some(3.0 / 4.0));
    assert_eq!(r.recall, Some(3.0 / 7.0));
    assert_eq!(r.false_positive_rate, Some(1.0 / 13.0));
    assert_eq!(r.accuracy, Some(15.0 / 20.0));
    assert_eq!(r.prevalence, Some(7.0 / 20.0));
    let none = EvalReport::from_confusion(
        Confusion {
            tp: 0,
            fp: 0,
            tn: 5,
            fn_: 0,
        },
        0.5,
    );
    assert_eq!(none.precision, None);
    assert_eq!(none.recall, None);
    assert_eq!(EvalReport::fmt_ratio(none.recall), "n/a");
}

#[test]
fn perfect_detector_scores_one() {
    for prevalence in [0.01, 0.05, 0.5] {
        let n = 200;
        let pos = (prevalence * n as f64) as usize;
        let labels: Vec<bool> = (0..n).map(|i| i < pos).collect();
        let scores: Vec<f64> = labels.iter().map(|l| if *l { 0.9 } else { 0.1 }).collect();
        let r = EvalReport::from_scores(&scores, &labels, 0.5).unwrap();
        assert_eq!((r.precision, r.recall), (Some(1.0), Some(1.0)));
    }
    assert_eq!(precision_at_prevalence(1.0, 0.0, 0.03), Some(1.0));
}

#[test]
fn bayes_precision_example() {
    let p = precision_at_prevalence(0.98, 0.36, 0.05).unwrap();
    assert!((p - 0.049 / 0.391).abs() < 1e-15);
    assert!((p - 0.125).abs() < 5e-4);
    assert!((precision_at_prevalence(0.98, 0.36, 1.0).unwrap() - 1.0).abs() < 1e-15);
    assert_eq!(precision_at_prevalence(0.0, 0.0, 0.5), None);
}

#[test]
fn precision_grows_with_prevalence() {
    let curve = prevalence_curve(0.9, 0.2, &[0.01, 0.05, 0.10, 0.25, 0.50]);
    for w in curve.windows(2) {
        assert!(w[1].1.unwrap() >= w[0].1.unwrap());
    }
}

#[test]
fn roc_corners() {
    let roc = roc_curve(&[0.9, 0.8, 0.3, 0.1], &[true, false, true, false]).unwrap();
    assert_eq!(roc.first().map(|p| (p.tpr, p.fpr)), Some((0.0, 0.0)));
    assert_eq!(roc.last().map(|p| (p.tpr, p.fpr)), Some((1.0, 1.0)));
    assert_eq!((roc[2].tpr, roc[2].fpr), (0.5, 0.5));
}

#[test]
fn zero_flag_and_oracle_taggers() {
    let c = corpus();
    let ids: Vec<VideoId> = vec![5, 100, 6, 101, 7];
    let labels = [false, true, false, true, false];
    let none = |ids: &[VideoId]| vec![0.0; ids.len()];
    let d = deobfuscate(&none, &c, &ids, 0.5).unwrap();
    assert_eq!(d.kept, ids);
    assert_eq!(d.collateral_damage(&labels).unwrap(), Some(0.0));
    let oracle = |ids: &[VideoId]| {
        ids.iter()
            .map(|id| if *id >= 100 { 1.0 } else { 0.0 })
            .collect::<Vec<_>>()
    };
    let d = deobfuscate(&oracle, &c, &ids, 0.5).unwrap();
    assert_eq!(d.kept, vec![5, 6, 7]);
}

#[test]
fn collateral_damage_arithmetic() {
    let c = corpus();
    // flags: positions 0, 1, 3; user entries at 0, 2, 3, 4
    let ids: Vec<VideoId> = vec![1, 2, 3, 4, 5];
    let labels = [false, true, false, false, false];
    let tagger = |_: &[VideoId]| vec![0.9, 0.9, 0.1, 0.7, 0.2];
    let d = deobfuscate(&tagger, &c, &ids, 0.5).unwrap();
    assert_eq!(d.collateral_damage(&labels).unwrap(), Some(2.0 / 4.0));
    assert_eq!(d.collateral_damage(&[true; 5]).unwrap(), None);
    assert!(d.collateral_damage(&[true; 4]).is_err());
}

fn separable(c: &Corpus, n: usize) -> Vec<StealthSample> {
    // injected personas contain class-0 videos, the others never do
    let zero: Vec<VideoId> = c
        .videos
        .iter()
        .filter(|v| v.class_memberships == [0])
        .map(|v| v.video_id)
        .collect();
    let rest: Vec<VideoId> = c
        .videos
        .iter()
        .filter(|v| !v.in_class(0))
        .map(|v| v.video_id)
        .collect();
    let mut r = rng::rng(8);
    (0..n)
        .map(|i| {
            let obf = i % 2 == 0;
            let mut p: Vec<VideoId> = (0..8)
                .map(|_| rest[r.random_range(0..rest.len())])
                .collect();
            if obf {
                for j in [2, 5] {
                    p[j] = zero[r.random_range(0..zero.len())];
                }
            }
            StealthSample {
                persona: p,
                obfuscated: obf,
            }
        })
        .collect()
}

#[test]
fn stealth_detector_separates_trivial_labels() {
    let c = corpus();
    let data = separable(&c, 300);
    let cfg = DetectorTrainConfig {
        hidden: 8,
        fit: FitConfig {
            epochs: 20,
            optimizer: OptimizerKind::Adam,
            lr: 0.01,
            ..Default::default()
        },
        ..Default::default()
    };
    let (mut m, rep) = train_stealth_detector(&c, &data, &cfg, 4).unwrap();
    m.zero_grad();
    assert!(rep.test.accuracy.unwrap() > 0.99, "{:?}", rep.test);
    let (mut m2, _) = train_stealth_detector(&c, &data, &cfg, 4).unwrap();
    m2.zero_grad();
    assert_eq!(m, m2);
    let back = StealthDetector::from_checkpoint(&m.to_checkpoint().unwrap()).unwrap();
    assert_eq!(back, m);
}

#[test]
fn deobf_detector_tags_positions() {
    let c = corpus();
    let data: Vec<DeobfSample> = separable(&c, 200)
        .into_iter()
        .map(|s| {
            let labels = s
                .persona
                .iter()
                .map(|id| c.video(*id).in_class(0))
                .collect();
            DeobfSample {
                persona: s.persona,
                labels,
            }
        })
        .collect();
    let cfg = DetectorTrainConfig {
        hidden: 8,
        fit: FitConfig {
            epochs: 30,
            optimizer: OptimizerKind::Adam,
            lr: 0.01,
            ..Default::default()
        },
        ..Default::default()
    };
    let (m, rep) = train_deobf_detector(&c, &data, &cfg, 5).unwrap();
    assert!(
        rep.test.recall.unwrap() > 0.9 && rep.test.precision.unwrap() > 0.9,
        "{:?}",
        rep.test
    );
    let (m2, rep2) = train_deobf_detector(&c, &data, &cfg, 5).unwrap();
    assert_eq!((m.clone(), rep.clone()), (m2, rep2));
    assert_eq!(
        m.tag_scores(&c, &data[0].persona).unwrap().len(),
        data[0].persona.len()
    );
    let mut m = m;
    m.zero_grad();
    let back = DeobfDetector::from_checkpoint(&m.to_checkpoint().unwrap()).unwrap();
    assert_eq!(back, m);
}

#[test]
fn all_user_population_has_no_recall() {
    let r = EvalReport::from_scores(&[0.2, 0.7, 0.1], &[false, false, false], 0.5).unwrap();
    assert_eq!(r.recall, None);
    assert_eq!(r.confusion.positives(), 0);
    assert_eq!(r.precision, Some(0.0));
}
