use std::collections::HashSet;
use std::net::Ipv4Addr;

use examagent_core::encoding::{
    encode, expected_duration, label, BehaviorLabel, FeatureVector, SpeedCategory, SpeedModel, FEATURE_LEN,
};
use examagent_core::harness::{auc, roc_curve, split, Confusion, EvalReport};
use examagent_core::ipagent::{DecisionKind, IpRegistry};
use examagent_core::records::{Answer, ExamRecord, ExamSpec, QUESTION_COUNT};
use examagent_core::synth::{augment, generate, CohortConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn record_strategy() -> impl Strategy<Value = ExamRecord> {
    let spec = ExamSpec::standard();
    let maxes: Vec<u32> = spec.max_scores().to_vec();
    (
        prop::collection::vec((1u8..=5, any::<bool>()), QUESTION_COUNT),
        1u32..=60,
        any::<u32>(),
    )
        .prop_map(move |(answers, minutes, ip)| {
            let mut arr = [Answer::new(1, 0); QUESTION_COUNT];
            for (q, (option, right)) in answers.into_iter().enumerate() {
                arr[q] = Answer::new(option, if right { maxes[q] } else { 0 });
            }
            ExamRecord::with_computed_grade("2000001", arr, minutes, Ipv4Addr::from(ip))
        })
}

fn labels_strategy(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<BehaviorLabel>> {
    prop::collection::vec(
        prop_oneof![Just(BehaviorLabel::Normal), Just(BehaviorLabel::Abnormal)],
        len,
    )
}

proptest! {
    #[test]
    fn encoding_matches_record(record in record_strategy()) {
        let spec = ExamSpec::standard();
        let model = SpeedModel::default();
        let fv = encode(&record, &spec, &model);
        prop_assert_eq!(fv.bits().len(), FEATURE_LEN);
        for (q, a) in record.answers.iter().enumerate() {
            prop_assert_eq!(fv.bits()[q] == 1, a.score > 0);
        }
        prop_assert_eq!(fv.bits()[QUESTION_COUNT..].iter().filter(|&&b| b == 1).count(), 1);

        let seconds = f64::from(record.duration_minutes) * 60.0;
        let expected = f64::from(expected_duration(&spec, &model));
        let speed = if seconds < 0.5 * expected {
            SpeedCategory::Fast
        } else if seconds > 2.0 * expected {
            SpeedCategory::Slow
        } else {
            SpeedCategory::Normal
        };
        prop_assert_eq!(fv.speed(), speed);
        let correct = record.answers.iter().filter(|a| a.score > 0).count();
        let want = if correct >= 18 && speed != SpeedCategory::Normal {
            BehaviorLabel::Abnormal
        } else {
            BehaviorLabel::Normal
        };
        prop_assert_eq!(label(&record, &spec, &model), want);
        prop_assert_eq!(fv.label(), want);
    }

    #[test]
    fn bits_round_trip(correct in prop::array::uniform20(any::<bool>()), speed in 0usize..3) {
        let speed = [SpeedCategory::Fast, SpeedCategory::Normal, SpeedCategory::Slow][speed];
        let fv = FeatureVector::from_parts(correct, speed);
        prop_assert_eq!(FeatureVector::from_bits(*fv.bits()).unwrap(), fv);
    }

    #[test]
    fn registry_rules(
        seed in any::<u64>(),
        ops in prop::collection::vec((0u8..4, 0u8..12), 1..120),
    ) {
        let spec = ExamSpec::standard();
        let mut reg = IpRegistry::for_exam(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = HashSet::new();
        let mut flagged = HashSet::new();
        let mut sessions = Vec::new();
        for (op, host) in ops {
            let ip = Ipv4Addr::new(192, 0, 2, host);
            if op == 0 && !sessions.is_empty() {
                let (sid, ip) = sessions[usize::from(host) % sessions.len()];
                let before = reg.current_set(sid).cloned().unwrap();
                let d = reg.flag_abnormal(sid, &mut rng).unwrap();
                prop_assert_eq!(d.kind, DecisionKind::Reassignment);
                prop_assert_ne!(&d.set_id, &before);
                prop_assert_eq!(reg.current_set(sid), Some(&d.set_id));
                flagged.insert(ip);
            } else {
                let d = reg.register(ip, &mut rng);
                let want = if seen.insert(ip) {
                    DecisionKind::RandomAssignment
                } else {
                    DecisionKind::SpecificAssignment
                };
                prop_assert_eq!(d.kind, want);
                prop_assert!(spec.set_pool().contains(&d.set_id));
                prop_assert_eq!(reg.session_ip(d.session_id), Some(ip));
                sessions.push((d.session_id, ip));
            }
            for ip in &flagged {
                prop_assert!(reg.lookup(*ip).unwrap().suspicious);
            }
        }
        prop_assert_eq!(reg.len(), seen.len());
    }

    #[test]
    fn split_is_partition(labels in labels_strategy(1..200), ratio in 0.0f64..=1.0, seed in any::<u64>()) {
        let s = split(&labels, ratio, seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
    }

    #[test]
    fn roc_shape_and_inversion(
        pairs in prop::collection::vec((0u8..=20, any::<bool>()), 2..60),
    ) {
        let scores: Vec<f64> = pairs.iter().map(|p| f64::from(p.0) / 20.0).collect();
        let actual: Vec<BehaviorLabel> = pairs
            .iter()
            .map(|p| if p.1 { BehaviorLabel::Abnormal } else { BehaviorLabel::Normal })
            .collect();
        let pos = actual.iter().filter(|l| **l == BehaviorLabel::Abnormal).count();
        prop_assume!(pos > 0 && pos < actual.len());

        let roc = roc_curve(&scores, &actual);
        prop_assert_eq!((roc[0].fpr, roc[0].tpr), (0.0, 0.0));
        let last = roc.last().unwrap();
        prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in roc.windows(2) {
            prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
        }
        let a = auc(&roc);
        prop_assert!((0.0..=1.0).contains(&a));

        let flipped: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
        let b = auc(&roc_curve(&flipped, &actual));
        prop_assert!((a + b - 1.0).abs() < 1e-12, "{} + {}", a, b);
    }

    #[test]
    fn confusion_accuracy_is_agreement(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..100)) {
        let lab = |b: bool| if b { BehaviorLabel::Abnormal } else { BehaviorLabel::Normal };
        let predicted: Vec<_> = pairs.iter().map(|p| lab(p.0)).collect();
        let actual: Vec<_> = pairs.iter().map(|p| lab(p.1)).collect();
        let c = Confusion::from_predictions(&predicted, &actual);
        let agree = pairs.iter().filter(|p| p.0 == p.1).count();
        prop_assert_eq!(c.total(), pairs.len());
        prop_assert!((c.accuracy() - 100.0 * agree as f64 / pairs.len() as f64).abs() < 1e-9);

        let scores: Vec<f64> = predicted.iter().map(|l| if *l == BehaviorLabel::Abnormal { 0.9 } else { 0.1 }).collect();
        let r = EvalReport::from_scores(&scores, &predicted, &actual);
        prop_assert!((r.accuracy + r.error_rate - 100.0).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_labels_follow_rule(seed in any::<u64>(), n in 10usize..80, fraction in 0.0f64..0.4) {
        let cfg = CohortConfig {
            student_count: n,
            cheater_fraction: fraction,
            seed,
            ..Default::default()
        };
        let (records, labels) = generate(&cfg).unwrap();
        prop_assert_eq!(records.len(), n);
        for (r, l) in records.iter().zip(&labels) {
            prop_assert!(r.validate(&cfg.exam).is_ok());
            prop_assert_eq!(label(r, &cfg.exam, &cfg.speed_model), *l);
        }
        let mut ips: Vec<_> = records.iter().map(|r| r.ip).collect();
        ips.sort_unstable();
        ips.dedup();
        prop_assert_eq!(ips.len(), n - cfg.collusion_pair_count);
    }

    #[test]
    fn augmented_rows_are_abnormal(seed in any::<u64>(), extra in 0usize..100) {
        let cfg = CohortConfig { seed, cheater_fraction: 0.2, ..Default::default() };
        let (records, labels) = generate(&cfg).unwrap();
        let features: Vec<_> = records.iter().map(|r| encode(r, &cfg.exam, &cfg.speed_model)).collect();
        let (f, l) = augment(&features, &labels, extra, seed).unwrap();
        prop_assert_eq!(f.len(), features.len() + extra);
        prop_assert_eq!(&f[..features.len()], &features[..]);
        for (fv, lab) in f.iter().zip(&l).skip(features.len()) {
            prop_assert_eq!(*lab, BehaviorLabel::Abnormal);
            prop_assert_eq!(fv.label(), BehaviorLabel::Abnormal);
            prop_assert!(fv.correct_count() >= 18);
        }
    }
}
