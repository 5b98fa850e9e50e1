use std::sync::Arc;

use proptest::prelude::*;
use serde_json::json;
use tracekit::corpus::{stratified_holdout, synthesize_corpus, Corpus, GeneratorConfig};
use tracekit::eval::evaluate;
use tracekit::models::{
    train_ffnn, train_naive_bayes, train_ngram_logreg, FfnnConfig, LogRegConfig, Model, Predictor,
};

fn corpus(n_docs: usize, seed: u64) -> Corpus {
    synthesize_corpus(&GeneratorConfig { n_docs, noise_vocab_size: 60, ..Default::default() }, seed).unwrap()
}

fn models(c: &Corpus) -> Vec<Model> {
    vec![
        Model::NaiveBayes(train_naive_bayes(c, 1.0, true).unwrap()),
        Model::LogReg(train_ngram_logreg(c, &LogRegConfig::default()).unwrap()),
        Model::FeedForward(train_ffnn(c, &FfnnConfig::default()).unwrap()),
    ]
}

#[test]
fn every_model_separates_held_out_synthetic_data() {
    let c = corpus(500, 4);
    let split = stratified_holdout(&c, 0.3, 4).unwrap();
    let (train, test) = (c.subset(&split.train), c.subset(&split.test));
    for m in models(&train) {
        let metrics = evaluate(&m, &test).unwrap();
        assert!(metrics.auroc > 0.95, "{}: {metrics:?}", m.kind());
    }
}

#[test]
fn saved_models_predict_identically() {
    let c = corpus(200, 5);
    let dir = tempfile::tempdir().unwrap();
    for m in models(&c) {
        let path = dir.path().join(m.kind());
        std::fs::write(&path, m.to_bytes_with(Some(json!({"seed": 1}))).unwrap()).unwrap();
        let back = Model::load(&path).unwrap();
        assert_eq!(back.kind(), m.kind());
        for s in c.iter().take(20) {
            let (a, b) = (m.predict_log_odds(&s.text).unwrap(), back.predict_log_odds(&s.text).unwrap());
            assert_eq!(a.to_bits(), b.to_bits(), "{}", m.kind());
        }
        // Provenance does not change what is loaded.
        assert_eq!(Model::from_bytes(&m.to_bytes().unwrap()).unwrap(), back);
    }
}

#[test]
fn garbage_model_bytes_are_rejected() {
    assert!(Model::from_bytes(b"not a model").is_err());
    assert!(Model::from_bytes(br#"{"format":"other","version":1,"kind":"naive_bayes"}"#).is_err());
}

#[test]
fn wrappers_forward_every_method() {
    let c = corpus(150, 6);
    let m = train_ffnn(&c, &FfnnConfig::default()).unwrap();
    let text = &c.segments()[0].text;
    let arc: Arc<dyn Predictor> = Arc::new(m.clone());
    let boxed: Box<dyn Predictor> = Box::new(m.clone());
    assert_eq!(arc.predict_log_odds(text).unwrap(), m.predict_log_odds(text).unwrap());
    assert_eq!(boxed.latent(text).unwrap(), m.latent(text).unwrap());
    assert_eq!((&m).latent_dim(), m.latent_dim());
    let texts: Vec<String> = c.iter().take(5).map(|s| s.text.clone()).collect();
    assert_eq!(arc.predict_batch(&texts).unwrap(), m.predict_batch(&texts).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Log-odds minus the prior is additive over concatenation.
    #[test]
    fn naive_bayes_is_additive(a in prop::collection::vec(0usize..80, 0..15), b in prop::collection::vec(0usize..80, 0..15)) {
        let nb = train_naive_bayes(&corpus(120, 7), 0.5, true).unwrap();
        let words = |ix: &[usize]| ix.iter().map(|i| format!("w{i:04}")).collect::<Vec<_>>();
        let (wa, wb) = (words(&a), words(&b));
        let joined: Vec<String> = wa.iter().chain(&wb).cloned().collect();
        let lhs = nb.log_odds_tokens(&joined) - nb.prior_log_odds;
        let rhs = (nb.log_odds_tokens(&wa) - nb.prior_log_odds) + (nb.log_odds_tokens(&wb) - nb.prior_log_odds);
        prop_assert!((lhs - rhs).abs() <= 1e-9);
    }

    /// Token order never matters to a bag-of-words model.
    #[test]
    fn naive_bayes_ignores_order(mut ix in prop::collection::vec(0usize..80, 1..20), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let nb = train_naive_bayes(&corpus(120, 8), 1.0, false).unwrap();
        let before: Vec<String> = ix.iter().map(|i| format!("w{i:04}")).collect();
        ix.shuffle(&mut tracekit::rng::rng(seed));
        let after: Vec<String> = ix.iter().map(|i| format!("w{i:04}")).collect();
        prop_assert!((nb.log_odds_tokens(&before) - nb.log_odds_tokens(&after)).abs() <= 1e-9);
    }
}
