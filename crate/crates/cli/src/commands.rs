use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use serde::Deserialize;
use serde_json::{json, Value};
use tracekit::corpus::{
    segment_documents, stratified_holdout, synthesize_corpus, Corpus, Domain, Segment, TokenizerConfig,
};
use tracekit::eval::{
    cohens_kappa, cross_domain, cross_validate, evaluate, hyperparameter_search, krippendorff_alpha, majority_vote,
    set_expert_agreement, AnnotationSet, Metric, MetricsReport, ParamDomain, Params, SearchSpace,
};
use tracekit::explain::{
    completeness_score, concept_card, discover_concepts, fit_slalom, salient_examples, shap_sample,
};
use tracekit::models::{train_ffnn, train_naive_bayes, train_ngram_logreg, Model, Predictor};
use tracekit::remote::{ApiPredictor, BridgePredictor};
use tracekit::rng::derive_seed;

use crate::config::{InputFormat, ModelSpec, RunConfig};
use crate::output::OutputDir;
use crate::InputError;

type Shared = Arc<dyn Predictor>;

fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> anyhow::Result<&'a Path> {
    path.as_deref().ok_or_else(|| InputError::new(format!("missing {what}")).into())
}

fn load_corpus(path: &Path) -> anyhow::Result<Corpus> {
    Corpus::load(path).with_context(|| format!("reading corpus {}", path.display()))
}

/// Trains a local model, or connects a remote one (which ignores the
/// training data).
fn build_model(spec: &ModelSpec, corpus: &Corpus) -> anyhow::Result<Shared> {
    Ok(match spec {
        ModelSpec::Api(c) => Arc::new(ApiPredictor::new(c.clone())?),
        ModelSpec::Bridge(e) => Arc::new(BridgePredictor::connect(e)?),
        local => Arc::new(train_local(local, corpus)?),
    })
}

fn train_local(spec: &ModelSpec, corpus: &Corpus) -> anyhow::Result<Model> {
    Ok(match spec {
        ModelSpec::NaiveBayes { alpha, use_counts } => Model::NaiveBayes(train_naive_bayes(corpus, *alpha, *use_counts)?),
        ModelSpec::LogReg(c) => Model::LogReg(train_ngram_logreg(corpus, c)?),
        ModelSpec::FeedForward(c) => Model::FeedForward(train_ffnn(corpus, c)?),
        ModelSpec::Api(_) | ModelSpec::Bridge(_) => {
            bail!(InputError::new(format!("{} models are not trained locally", spec.kind())))
        }
    })
}

/// Trainer for repeated runs. Local models are retrained per run (the
/// feed-forward network with the run's seed); a remote model is connected
/// once and shared.
fn trainer(spec: &ModelSpec) -> anyhow::Result<impl Fn(&Corpus, u64) -> tracekit::Result<Shared> + Sync + '_> {
    let remote: Option<Shared> = match spec {
        ModelSpec::Api(c) => Some(Arc::new(ApiPredictor::new(c.clone())?)),
        ModelSpec::Bridge(e) => Some(Arc::new(BridgePredictor::connect(e)?)),
        _ => None,
    };
    Ok(move |corpus: &Corpus, seed: u64| -> tracekit::Result<Shared> {
        if let Some(r) = &remote {
            return Ok(r.clone());
        }
        let m: Shared = match spec {
            ModelSpec::NaiveBayes { alpha, use_counts } => Arc::new(train_naive_bayes(corpus, *alpha, *use_counts)?),
            ModelSpec::LogReg(c) => Arc::new(train_ngram_logreg(corpus, c)?),
            ModelSpec::FeedForward(c) => {
                let c = tracekit::models::FfnnConfig { seed, ..c.clone() };
                Arc::new(train_ffnn(corpus, &c)?)
            }
            ModelSpec::Api(_) | ModelSpec::Bridge(_) => unreachable!("remote models are prebuilt"),
        };
        Ok(m)
    })
}

/// The model to explain: a saved file, a remote endpoint, or a local model
/// trained on `corpus`.
fn explained_model(cfg: &RunConfig, corpus: &Corpus) -> anyhow::Result<Shared> {
    match &cfg.data.model_file {
        Some(p) => Ok(Arc::new(Model::load(p).with_context(|| format!("loading model {}", p.display()))?)),
        None => build_model(&cfg.model, corpus),
    }
}

fn training_corpus(cfg: &RunConfig) -> anyhow::Result<Corpus> {
    load_corpus(require(&cfg.data.train, "training corpus (data.train or --train)")?)
}

#[derive(Deserialize)]
struct CsvRow {
    id: String,
    text: String,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    domain: Option<String>,
}

fn read_csv(path: &Path, default_domain: &Domain) -> anyhow::Result<Corpus> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut segments = Vec::new();
    for record in reader.deserialize::<CsvRow>() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            tracekit::Error::Parse { line, message: e.to_string() }
        })?;
        // Header is line 1, so data rows start at line 2.
        let line = segments.len() + 2;
        let label = match record.label.as_deref().map(str::trim) {
            None | Some("") => None,
            Some("0") => Some(0),
            Some("1") => Some(1),
            Some(other) => {
                return Err(tracekit::Error::Parse { line, message: format!("label {other:?} is not 0 or 1") }.into())
            }
        };
        let domain = record.domain.filter(|d| !d.is_empty()).map_or_else(|| default_domain.clone(), Domain::from);
        let seg = Segment::new(record.id, record.text, label, domain);
        seg.validate().map_err(|e| tracekit::Error::Parse { line, message: e.to_string() })?;
        segments.push(seg);
    }
    Ok(Corpus::from_segments(segments)?)
}

fn corpus_text(corpus: &Corpus) -> anyhow::Result<String> {
    let mut buf = Vec::new();
    corpus.write_jsonl(&mut buf)?;
    Ok(String::from_utf8(buf)?)
}

pub fn ingest(cfg: &RunConfig, out: &mut OutputDir) -> anyhow::Result<()> {
    let ing = &cfg.ingest;
    let (raw, source) = match &ing.synthetic {
        Some(gen) => {
            let mut gen = gen.clone();
            if let Some(d) = &ing.domain {
                gen.domain = d.clone();
            }
            (synthesize_corpus(&gen, derive_seed(cfg.seed, 0))?, "synthetic".to_string())
        }
        None => {
            let path = require(&ing.input, "input corpus (ingest.input or --input)")?;
            let corpus = match ing.format {
                InputFormat::Jsonl => load_corpus(path)?,
                InputFormat::Csv => read_csv(path, ing.domain.as_ref().unwrap_or(&Domain::Mixed))?,
            };
            (corpus, path.display().to_string())
        }
    };
    let corpus = segment_documents(&raw, ing.max_tokens, &TokenizerConfig::default())?;
    out.write_text("corpus.jsonl", &corpus_text(&corpus)?)?;

    let labeled = corpus.n_labeled();
    let positive = corpus.n_positive();
    let rate = corpus.class_balance();
    let mut domains: BTreeMap<String, usize> = BTreeMap::new();
    for s in corpus.iter() {
        *domains.entry(s.domain.to_string()).or_default() += 1;
    }
    let balance = match rate {
        Some(r) => format!("{} samples (trauma: {:.2}%)", corpus.len(), 100.0 * r),
        None => format!("{} samples (unlabeled)", corpus.len()),
    };
    out.write_json(
        "stats.json",
        &json!({
            "source": source,
            "documents": raw.len(),
            "size": corpus.len(),
            "labeled": labeled,
            "n_positive": positive,
            "n_negative": labeled - positive,
            "trauma_rate": rate,
            "balance": balance,
            "max_tokens": ing.max_tokens,
            "domains": domains,
        }),
    )?;
    Ok(())
}

pub fn train(cfg: &RunConfig, out: &mut OutputDir) -> anyhow::Result<()> {
    let corpus = training_corpus(cfg)?;
    let model = train_local(&cfg.model, &corpus)?;
    let file = match model {
        Model::FeedForward(_) => "model.bin",
        _ => "model.json",
    };
    out.write_bytes(file, &model.to_bytes_with(Some(out.provenance().to_value()))?)?;
    let fit = evaluate(&model, &corpus)?;
    let mut summary = json!({
        "model_file": file,
        "model": cfg.model,
        "n_train": corpus.len(),
        "n_positive": corpus.n_positive(),
        "train_metrics": fit,
    });
    if let Model::LogReg(m) = &model {
        summary["optimizer"] = serde_json::to_value(&m.report)?;
    }
    out.write_json("training.json", &summary)?;
    Ok(())
}

fn write_report(out: &mut OutputDir, report: &MetricsReport) -> anyhow::Result<()> {
    out.write_json("metrics.json", report)?;
    out.write_text("metrics.csv", &report.to_csv())?;
    Ok(())
}

pub fn eval(cfg: &RunConfig, out: &mut OutputDir) -> anyhow::Result<()> {
    if let (Some(model_file), Some(test)) = (&cfg.data.model_file, &cfg.data.test) {
        let model = Model::load(model_file).with_context(|| format!("loading model {}", model_file.display()))?;
        let corpus = load_corpus(test)?;
        let values = evaluate(&model, &corpus)?;
        let report = MetricsReport::from_runs(corpus.domain().to_string(), model.kind(), vec![values])?;
        return write_report(out, &report);
    }
    if cfg.data.test.is_some() && !cfg.model.is_remote() {
        bail!(InputError::new("--test needs --model-file; without it eval cross-validates data.train"));
    }
    let corpus = match (&cfg.data.test, &cfg.model) {
        (Some(test), m) if m.is_remote() => load_corpus(test)?,
        _ => training_corpus(cfg)?,
    };
    if cfg.model.is_remote() {
        let model = build_model(&cfg.model, &corpus)?;
        let values = evaluate(&model, &corpus)?;
        let report = MetricsReport::from_runs(corpus.domain().to_string(), cfg.model.kind(), vec![values])?;
        return write_report(out, &report);
    }
    let report = cross_validate(trainer(&cfg.model)?, &corpus, &cfg.eval)?.with_model(cfg.model.kind());
    write_report(out, &report)
}

pub fn crosstest(cfg: &RunConfig, out: &mut OutputDir) -> anyhow::Result<()> {
    if cfg.data.domains.len() < 2 {
        bail!(InputError::new("crosstest needs at least two --domain NAME=PATH corpora"));
    }
    let domains = cfg
        .data
        .domains
        .iter()
        .map(|(name, path)| Ok((name.clone(), load_corpus(path)?)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let matrix = cross_domain(trainer(&cfg.model)?, &domains, &cfg.crosstest)?;
    out.write_json("matrix.json", &matrix)?;
    out.write_text("matrix.csv", &matrix.to_csv())?;
    let mut tables = String::new();
    for m in Metric::ALL {
        tables.push_str(&format!("{}\n{}\n", m.name(), matrix.table(m)));
    }
    out.write_text("matrix.txt", &tables)?;
    Ok(())
}

/// Search space used when the config has none.
pub fn default_space(model: &ModelSpec) -> anyhow::Result<SearchSpace> {
    let params = match model {
        ModelSpec::NaiveBayes { .. } => vec![("alpha", ParamDomain::LogUniform { low: 0.01, high: 100.0 })],
        ModelSpec::LogReg(_) => vec![("c", ParamDomain::LogUniform { low: 0.01, high: 100.0 })],
        ModelSpec::FeedForward(_) => vec![
            ("lr", ParamDomain::LogUniform { low: 0.05, high: 1.0 }),
            ("epochs", ParamDomain::IntRange { low: 5, high: 20 }),
        ],
        ModelSpec::Api(_) | ModelSpec::Bridge(_) => {
            bail!(InputError::new(format!("no hyperparameters to search for {} models", model.kind())))
        }
    };
    Ok(SearchSpace::new(params.into_iter().map(|(k, d)| (k.to_string(), d)).collect()))
}

/// `base` with the sampled parameters written over its fields.
fn apply_params(base: &ModelSpec, params: &Params) -> tracekit::Result<ModelSpec> {
    let mut v = serde_json::to_value(base)?;
    let obj = v.as_object_mut().expect("model specs serialize to objects");
    for (k, p) in params {
        if k == "kind" || !obj.contains_key(k) {
            return Err(tracekit::Error::Invalid(format!("{} models have no parameter {k:?}", base.kind())));
        }
        obj.insert(k.clone(), p.clone());
    }
    Ok(serde_json::from_value(v)?)
}

pub fn search(cfg: &RunConfig, out: &mut OutputDir) -> anyhow::Result<()> {
    let corpus = training_corpus(cfg)?;
    let space = match &cfg.search {
        Some(s) => s.clone(),
        None => default_space(&cfg.model)?,
    };
    // Reject unknown parameter names before spending the budget.
    apply_params(&cfg.model, &space.sample(cfg.seed, 0)).map_err(|e| InputError::new(e.to_string()))?;
    let result = hyperparameter_search(
        |params: &Params, train: &Corpus, seed: u64| -> tracekit::Result<Shared> {
            let spec = apply_params(&cfg.model, params)?;
            let fit = trainer(&spec).map_err(|e| tracekit::Error::Invalid(e.to_string()))?;
            let model = fit(train, seed);
            model
        },
        &space,
        &corpus,
        cfg.seed,
    )?;
    out.write_text("trials.jsonl", &result.trial_log_jsonl()?)?;
    let best_model = apply_params(&cfg.model, &result.best_params)?;
    out.write_json(
        "best.json",
        &json!({
            "objective": space.objective.name(),
            "best_index": result.best_index,
            "best_objective": result.best_objective,
            "best_params": result.best_params,
            "best_model": best_model,
            "budget": space.budget,
            "failed_trials": result.trials.iter().filter(|t| t.error.is_some()).count(),
        }),
    )?;
    Ok(())
}

/// Segment id made safe as a file name.
fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' }).collect()
}

pub fn explain_shap(cfg: &RunConfig, out: &mut OutputDir) -> anyhow::Result<()> {
    let corpus = training_corpus(cfg)?;
    let model = explained_model(cfg, &corpus)?;
    let n = cfg.explain.instances.min(corpus.len());
    let mut summary = Vec::with_capacity(n);
    let mut used = HashMap::new();
    for seg in &corpus.segments()[..n] {
        let report = shap_sample(&model, &seg.text, &cfg.explain.shap)
            .with_context(|| format!("explaining segment {:?}", seg.id))?;
        let holds = report.efficiency_holds(3.0);
        let stem = file_stem(&seg.id);
        let count = used.entry(stem.clone()).or_insert(0usize);
        let name = if *count == 0 { format!("shap/{stem}.json") } else { format!("shap/{stem}-{count}.json") };
        *count += 1;
        out.write_json(
            &name,
            &json!({
                "id": seg.id,
                "label": seg.label,
                "efficiency_residual": report.efficiency_residual(),
                "sum_std_err": report.sum_std_err(),
                "efficiency_holds": holds,
                "report": report,
            }),
        )?;
        summary.push(json!({ "id": seg.id, "file": name, "efficiency_holds": holds }));
    }
    out.write_json("shap_summary.json", &json!({ "instances": summary }))?;
    Ok(())
}

/// The `limit` tokens with the highest document frequency, ties broken
/// alphabetically.
fn frequent_tokens(corpus: &Corpus, limit: usize) -> Vec<String> {
    let mut df: HashMap<String, usize> = HashMap::new();
    for seg in corpus.iter() {
        let mut toks = seg.tokens();
        toks.sort();
        toks.dedup();
        for t in toks {
            *df.entry(t).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = df.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.into_iter().take(limit).map(|(t, _)| t).collect()
}

pub fn explain_slalom(cfg: &RunConfig, out: &mut OutputDir) -> anyhow::Result<()> {
    let corpus = training_corpus(cfg)?;
    let model = explained_model(cfg, &corpus)?;
    let vocab = frequent_tokens(&corpus, cfg.explain.slalom_vocab);
    if vocab.is_empty() {
        bail!(InputError::new("corpus has no tokens to fit"));
    }
    let fitted = fit_slalom(&model, &vocab, &cfg.explain.slalom)?;
    out.write_json("slalom.json", &fitted)?;
    let mut csv = String::from("token,value,importance\n");
    let mut w = csv::Writer::from_writer(Vec::new());
    for (t, v, s) in fitted.rows() {
        w.write_record([t.to_string(), v.to_string(), s.to_string()])?;
    }
    csv.push_str(std::str::from_utf8(&w.into_inner()?)?);
    out.write_text("slalom.csv", &csv)?;
    Ok(())
}

pub fn explain_concepts(cfg: &RunConfig, out: &mut OutputDir) -> anyhow::Result<()> {
    let corpus = training_corpus(cfg)?;
    let ec = &cfg.explain;
    let split = stratified_holdout(&corpus, ec.holdout_fraction, derive_seed(cfg.seed, 7))?;
    let (fit_part, held_out) = (corpus.subset(&split.train), corpus.subset(&split.test));
    let model = match &cfg.data.model_file {
        Some(_) => explained_model(cfg, &corpus)?,
        None => build_model(&cfg.model, &fit_part)?,
    };
    if model.latent_dim().is_none() {
        bail!(InputError::new("concept discovery needs a model exposing latent vectors (feed_forward or a bridge)"));
    }
    let mut concepts = discover_concepts(&model, &fit_part, &ec.concepts)?;
    concepts.salient = salient_examples(&concepts, &model, &held_out, ec.concepts.top_m)?;
    let completeness = completeness_score(&concepts, &held_out, &model)?;
    let held_out_metrics = evaluate(&model, &held_out)?;

    out.write_bytes("concepts.bin", &concepts.to_bytes_with(Some(out.provenance().to_value()))?)?;
    out.write_json(
        "concepts.json",
        &json!({
            "k": concepts.k(),
            "latent_dim": concepts.latent_dim(),
            "snippet_len": concepts.snippet_len,
            "n_fit": fit_part.len(),
            "n_held_out": held_out.len(),
            "train_completeness": concepts.train_completeness,
            "completeness": completeness,
            "model_accuracy": held_out_metrics.accuracy,
            "head_weights": concepts.head_weights,
            "head_bias": concepts.head_bias,
            "config": concepts.config,
        }),
    )?;
    for k in 0..concepts.k() {
        let card = concept_card(&concepts, k).expect("k is in range");
        out.write_text(&format!("cards/concept_{k:02}.txt"), &card)?;
    }
    Ok(())
}

pub fn agree(cfg: &RunConfig, out: &mut OutputDir) -> anyhow::Result<()> {
    let path = require(&cfg.agree.annotations, "annotations CSV (agree.annotations or --annotations)")?;
    let file = std::fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let mut set = AnnotationSet::from_csv(file).with_context(|| format!("parsing {}", path.display()))?;
    if let Some(expert) = &cfg.agree.expert {
        let file = std::fs::File::open(expert).with_context(|| format!("reading {}", expert.display()))?;
        set = set.with_expert_csv(file).with_context(|| format!("parsing {}", expert.display()))?;
    }
    let mut report = serde_json::Map::new();
    report.insert("items".into(), json!(set.items.len()));
    report.insert("annotators".into(), json!(set.annotators.len()));
    match krippendorff_alpha(&set) {
        Ok(a) => {
            report.insert("alpha".into(), json!(a));
        }
        Err(tracekit::Error::AlphaUndefined(why)) => {
            report.insert("alpha".into(), Value::Null);
            report.insert("alpha_note".into(), json!(why));
        }
        Err(e) => return Err(e.into()),
    }
    let majority = majority_vote(&set);
    report.insert("ties".into(), json!(majority.ties.iter().filter(|t| **t).count()));
    if set.expert.is_some() {
        report.insert("expert_f1".into(), json!(set_expert_agreement(&set)?));
    }
    if let Some([a, b]) = &cfg.agree.kappa_raters {
        let col = |name: &str| {
            set.annotators
                .iter()
                .position(|x| x == name)
                .ok_or_else(|| InputError::new(format!("unknown annotator {name:?}")))
        };
        let (ia, ib) = (col(a)?, col(b)?);
        let (va, vb): (Vec<u8>, Vec<u8>) = set
            .votes
            .iter()
            .filter_map(|row| Some((row[ia]?, row[ib]?)))
            .unzip();
        if va.is_empty() {
            bail!(InputError::new(format!("annotators {a:?} and {b:?} share no items")));
        }
        report.insert("kappa".into(), json!({ "raters": [a, b], "items": va.len(), "value": cohens_kappa(&va, &vb)? }));
    }
    out.write_json("agreement.json", &Value::Object(report))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["item_id", "majority", "tie"])?;
    for ((item, label), tie) in set.items.iter().zip(&majority.labels).zip(&majority.ties) {
        w.write_record([item.as_str(), &label.to_string(), if *tie { "1" } else { "0" }])?;
    }
    out.write_text("majority.csv", std::str::from_utf8(&w.into_inner()?)?)?;
    Ok(())
}
