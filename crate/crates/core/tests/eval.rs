use proptest::prelude::*;
use rand::Rng;
use tracekit::corpus::{synthesize_corpus, Corpus, Domain, GeneratorConfig};
use tracekit::eval::*;
use tracekit::models::{train_naive_bayes, Predictor};
use tracekit::rng::rng;
use tracekit::{Error, Result};

fn brute_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y != 1 {
            continue;
        }
        for (j, &z) in labels.iter().enumerate() {
            if z != 0 {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn trapezoid_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let p = labels.iter().filter(|&&y| y == 1).count() as f64;
    let n = labels.len() as f64 - p;
    let (mut tp, mut fp, mut area) = (0.0, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let (tp0, fp0) = (tp, fp);
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            j += 1;
        }
        area += (fp - fp0) / n * (tp + tp0) / (2.0 * p);
        i = j;
    }
    area
}

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            proptest::collection::vec(prop_oneof![(-3i32..3).prop_map(f64::from), -3.0f64..3.0], n),
            proptest::collection::vec(0u8..2, n),
        )
            .prop_filter("both classes", |(_, y)| y.contains(&0) && y.contains(&1))
    })
}

proptest! {
    #[test]
    fn auroc_matches_pairwise_and_trapezoid((s, y) in scored_labels()) {
        let a = auroc(&s, &y).unwrap();
        prop_assert!((a - brute_auroc(&s, &y)).abs() <= 1e-12);
        prop_assert!((a - trapezoid_auroc(&s, &y)).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn auroc_complement_and_monotone_invariance((s, y) in scored_labels()) {
        let a = auroc(&s, &y).unwrap();
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        prop_assert!((a + auroc(&neg, &y).unwrap() - 1.0).abs() <= 1e-12);
        let squashed: Vec<f64> = s.iter().map(|x| x.exp() * 3.0 + 1.0).collect();
        prop_assert_eq!(a, auroc(&squashed, &y).unwrap());
    }

    #[test]
    fn f1_permutation_invariant(pairs in proptest::collection::vec((0u8..2, 0u8..2), 1..50), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let (p, y): (Vec<u8>, Vec<u8>) = pairs.iter().copied().unzip();
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut rng(seed));
        let (p2, y2): (Vec<u8>, Vec<u8>) = shuffled.into_iter().unzip();
        prop_assert_eq!(binary_f1(&p, &y).unwrap(), binary_f1(&p2, &y2).unwrap());
        let c = Confusion::from_predictions(&p, &y).unwrap();
        prop_assert_eq!(c.total(), p.len());
        prop_assert_eq!(accuracy(&p, &y).unwrap(), (c.tp + c.tn) as f64 / p.len() as f64);
    }

    #[test]
    fn majority_matches_counting(votes in proptest::collection::vec(proptest::collection::vec(prop_oneof![Just(None), Just(Some(0u8)), Just(Some(1u8))], 3), 1..40)) {
        let votes: Vec<Vec<Option<u8>>> = votes.into_iter().filter(|r| r.iter().any(Option::is_some)).collect();
        prop_assume!(!votes.is_empty());
        let items = (0..votes.len()).map(|i| i.to_string()).collect();
        let set = AnnotationSet::new(items, vec!["a".into(), "b".into(), "c".into()], votes.clone()).unwrap();
        let m = majority_vote(&set);
        for (row, (&label, &tie)) in votes.iter().zip(m.labels.iter().zip(&m.ties)) {
            let mut ones = 0;
            let mut present = 0;
            for v in row.iter().flatten() {
                present += 1;
                ones += usize::from(*v);
            }
            prop_assert_eq!(label == 1, 2 * ones > present);
            prop_assert_eq!(tie, 2 * ones == present);
        }
    }
}

/// Ten items, three coders, one missing vote and one single-vote item.
#[test]
fn krippendorff_hand_computation() {
    let v = |s: &str| -> Vec<Option<u8>> {
        s.chars().map(|c| match c {
            '1' => Some(1),
            '0' => Some(0),
            _ => None,
        }).collect()
    };
    let rows = ["111", "110", "000", "00.", "101", "1..", "011", "000", "111", "100"];
    let set = AnnotationSet::new(
        (0..10).map(|i| format!("i{i}")).collect(),
        vec!["a".into(), "b".into(), "c".into()],
        rows.iter().map(|r| v(r)).collect(),
    )
    .unwrap();
    // Coincidences per item (weight 1/(m-1)):
    //  111: o11 += 3          110: o11 += 1, o01 += 1   000: o00 += 3
    //  00.: o00 += 2          101: o11 += 1, o01 += 1   1..: unpairable
    //  011: o11 += 1, o01 += 1  000: o00 += 3  111: o11 += 3
    //  100: o00 += 1, o01 += 1
    let o00 = 3.0 + 2.0 + 3.0 + 1.0;
    let o11 = 3.0 + 1.0 + 1.0 + 1.0 + 3.0;
    let o01 = 4.0;
    let n0 = o00 + o01;
    let n1 = o11 + o01;
    let n = n0 + n1;
    assert_eq!(n, 26.0);
    let d_o = 2.0 * o01 / n;
    let d_e = 2.0 * n0 * n1 / (n * (n - 1.0));
    let expected = 1.0 - d_o / d_e;
    assert!((krippendorff_alpha(&set).unwrap() - expected).abs() <= 1e-9);
}

#[test]
fn independent_annotators_give_alpha_near_zero() {
    let mut r = rng(11);
    let votes = (0..1000).map(|_| (0..3).map(|_| Some(u8::from(r.gen_bool(0.3)))).collect()).collect();
    let set = AnnotationSet::new((0..1000).map(|i| i.to_string()).collect(), vec!["a".into(), "b".into(), "c".into()], votes).unwrap();
    assert!(krippendorff_alpha(&set).unwrap().abs() <= 0.05);
}

#[test]
fn independent_raters_give_kappa_near_zero() {
    let mut r = rng(12);
    let a: Vec<u8> = (0..1000).map(|_| u8::from(r.gen_bool(0.4))).collect();
    let b: Vec<u8> = (0..1000).map(|_| u8::from(r.gen_bool(0.4))).collect();
    assert!(cohens_kappa(&a, &b).unwrap().abs() <= 0.05);
}

fn synth(seed: u64, prefix: &str) -> Corpus {
    synthesize_corpus(
        &GeneratorConfig {
            n_docs: 200,
            id_prefix: prefix.into(),
            ..Default::default()
        },
        seed,
    )
    .unwrap()
}

struct Constant;
impl Predictor for Constant {
    fn predict_log_odds(&self, _: &str) -> Result<f64> {
        Ok(-1.0)
    }
}

#[test]
fn constant_predictor_has_zero_spread_with_folds() {
    // 50 positives and 150 negatives split into 5 folds of identical balance
    let segments = (0..200)
        .map(|i| tracekit::corpus::Segment::new(format!("c{i}"), "some words", Some(u8::from(i % 4 == 0)), Domain::Synthetic))
        .collect();
    let c = Corpus::new(segments, Domain::Synthetic).unwrap();
    let cfg = CvConfig {
        mode: SplitMode::Folds,
        ..Default::default()
    };
    let report = cross_validate(|_, _| Ok(Constant), &c, &cfg).unwrap();
    assert_eq!(report.auroc.mean, 0.5);
    assert_eq!(report.f1_binary.mean, 0.0);
    assert!((report.accuracy.mean - 0.75).abs() < 1e-12);
    assert!(report.accuracy.std_error < 1e-15);
}

#[test]
fn naive_bayes_cv_on_synthetic() {
    let c = synth(2, "s");
    let cfg = CvConfig { seed: 5, ..Default::default() };
    let train = |c: &Corpus, _| train_naive_bayes(c, 1.0, true);
    let a = cross_validate(train, &c, &cfg).unwrap();
    assert!(a.auroc.mean >= 0.95, "{}", a.auroc);
    assert_eq!(a.auroc.n_runs, 5);
    let b = cross_validate(train, &c, &cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.to_csv().starts_with("dataset,model,metric,mean,std_error,n_runs\nsynthetic,,f1_binary,"));
}

#[test]
fn fold_failure_reports_index() {
    let c = synth(3, "f");
    let err = cross_validate(
        |c: &Corpus, _| if c.len() > 0 { Err::<Constant, _>(Error::Diverged) } else { Ok(Constant) },
        &c,
        &CvConfig::default(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Fold { fold: 0, .. }), "{err}");
}

#[test]
fn duplicate_domains_give_symmetric_matrix() {
    let a = synth(4, "a");
    let b = synthesize_corpus(
        &GeneratorConfig {
            n_docs: 200,
            id_prefix: "b".into(),
            ..Default::default()
        },
        4,
    )
    .unwrap();
    let m = cross_domain(
        |c: &Corpus, _| train_naive_bayes(c, 1.0, true),
        &[("A".into(), a), ("B".into(), b)],
        &CrossDomainConfig::default(),
    )
    .unwrap();
    assert_eq!(m.train_domains, vec!["A", "B", COMBINED_DOMAIN]);
    assert!((m.auroc(0, 1) - m.auroc(1, 0)).abs() <= 0.05);
    assert!((m.auroc(0, 0) - m.auroc(1, 1)).abs() <= 0.05);
    assert!(m.to_csv().lines().count() == 1 + 3 * 2 * 5);
    assert!(m.table(Metric::Auroc).contains("All"));
}

#[test]
fn shared_ids_across_domains_are_rejected() {
    let a = synth(6, "same");
    let b = synth(7, "same");
    let err = cross_domain(
        |c: &Corpus, _| train_naive_bayes(c, 1.0, true),
        &[("A".into(), a), ("B".into(), b)],
        &CrossDomainConfig {
            include_combined: false,
            runs: 1,
            ..Default::default()
        },
    )
    .unwrap_err();
    assert!(matches!(err, Error::Overlap(_)), "{err}");
}

#[test]
fn search_budget_one_returns_the_sample() {
    let c = synth(8, "h");
    let space = SearchSpace {
        budget: 1,
        ..SearchSpace::new([("alpha".to_string(), ParamDomain::LogUniform { low: 0.1, high: 10.0 })].into())
    };
    let res = hyperparameter_search(|p, c, _| train_naive_bayes(c, param_f64(p, "alpha")?, true), &space, &c, 3).unwrap();
    assert_eq!(res.trials.len(), 1);
    assert_eq!(res.best_params, space.sample(3, 0));
    assert_eq!(res.trial_log_jsonl().unwrap().lines().count(), 1);
}

#[test]
fn search_all_failures() {
    let c = synth(9, "h");
    let space = SearchSpace {
        budget: 3,
        ..SearchSpace::new(Default::default())
    };
    let err = hyperparameter_search(|_, _, _| Err::<Constant, _>(Error::Diverged), &space, &c, 0).unwrap_err();
    match err {
        Error::AllTrialsFailed(causes) => assert_eq!(causes.len(), 3),
        e => panic!("{e}"),
    }
}

#[test]
fn single_class_auroc_errors() {
    let c = Corpus::new(
        (0..4).map(|i| tracekit::corpus::Segment::new(format!("x{i}"), "a b", Some(1), Domain::Synthetic)).collect(),
        Domain::Synthetic,
    )
    .unwrap();
    assert!(matches!(evaluate(&Constant, &c), Err(Error::AurocUndefined)));
}
