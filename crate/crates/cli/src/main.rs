//! `tracekit`: ingest corpora, train and evaluate classifiers, run
//! cross-domain tests and hyperparameter search, explain predictions and
//! measure annotator agreement.

mod commands;
mod config;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::config::{InputFormat, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "tracekit", version, about = "Trauma-event text classification toolkit")]
struct Cli {
    /// Run configuration (JSON, or TOML by extension). Flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; every random stream is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory. A manifest.json there indexes every written file.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Normalize a corpus to segmented JSONL and report its size and balance.
    Ingest(IngestArgs),
    /// Train a model on a corpus and save it.
    Train(TrainArgs),
    /// Score a saved model on a test corpus, or cross-validate a model kind.
    Eval(EvalArgs),
    /// Train on each domain, test on every domain.
    Crosstest(CrosstestArgs),
    /// Seeded random hyperparameter search.
    Search(SearchArgs),
    /// Explain a model with SHAP, SLALOM or concept discovery.
    Explain(ExplainArgs),
    /// Krippendorff's alpha, majority vote and expert agreement.
    Agree(AgreeArgs),
    /// Print the effective configuration as JSON.
    Config,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<InputFormat>,
    #[arg(long)]
    max_tokens: Option<usize>,
    /// Domain for CSV rows without a domain column.
    #[arg(long)]
    domain: Option<String>,
    /// Generate N synthetic documents instead of reading --input.
    #[arg(long, value_name = "N")]
    synthetic: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct ModelArgs {
    /// Model kind: naive_bayes, log_reg, feed_forward or api.
    #[arg(long)]
    model: Option<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    train: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Saved model; with --test, evaluates it once instead of cross-validating.
    #[arg(long)]
    model_file: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Corpus for repeated train/test runs.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    runs: Option<usize>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct CrosstestArgs {
    /// Named corpus, repeatable.
    #[arg(long = "domain", value_name = "NAME=PATH")]
    domains: Vec<String>,
    #[arg(long)]
    runs: Option<usize>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct SearchArgs {
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    budget: Option<usize>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ExplainKind {
    Shap,
    Slalom,
    Concepts,
}

#[derive(Args, Debug)]
struct ExplainArgs {
    #[arg(value_enum)]
    kind: ExplainKind,
    /// Saved model. Without it a model is trained from the config.
    #[arg(long)]
    model_file: Option<PathBuf>,
    /// Corpus to explain (defaults to the training corpus).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// SHAP: number of leading segments explained.
    #[arg(long)]
    instances: Option<usize>,
    /// SHAP: sampled permutations per instance.
    #[arg(long)]
    samples: Option<usize>,
    /// Concepts: number of concepts.
    #[arg(short = 'k', long)]
    concepts: Option<usize>,
    /// Concepts: salient snippets per card.
    #[arg(long)]
    top_m: Option<usize>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct AgreeArgs {
    /// Long CSV `item_id,annotator_id,label`.
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// CSV `item_id,label`.
    #[arg(long)]
    expert: Option<PathBuf>,
    /// Two annotator ids compared with Cohen's kappa.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    kappa: Option<Vec<String>>,
}

/// Bad input or configuration; exits with code 2.
#[derive(Debug)]
pub struct InputError(String);

impl InputError {
    pub fn new(msg: impl Into<String>) -> Self {
        InputError(msg.into())
    }
}

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn is_input_error(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        if e.is::<InputError>() {
            return true;
        }
        if let Some(t) = e.downcast_ref::<tracekit::Error>() {
            return matches!(
                t,
                tracekit::Error::Parse { .. }
                    | tracekit::Error::Invalid(_)
                    | tracekit::Error::Json(_)
                    | tracekit::Error::EmptyCorpus
                    | tracekit::Error::CannotStratify(_)
                    | tracekit::Error::DegeneratePrior
                    | tracekit::Error::Misaligned(_)
                    | tracekit::Error::Overlap(_)
                    | tracekit::Error::TokenNotFitted(_)
                    | tracekit::Error::ExactLimitExceeded(_)
            );
        }
        if let Some(io) = e.downcast_ref::<std::io::Error>() {
            return io.kind() == std::io::ErrorKind::NotFound;
        }
        false
    })
}

fn apply_flags(cli: &Cli, cfg: &mut RunConfig) -> anyhow::Result<()> {
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let set_model = |cfg: &mut RunConfig, m: &ModelArgs| -> anyhow::Result<()> {
        if let Some(kind) = &m.model {
            if kind != cfg.model.kind() {
                cfg.model = config::ModelSpec::from_kind(kind)?;
            }
        }
        Ok(())
    };
    match &cli.command {
        Command::Ingest(a) => {
            let i = &mut cfg.ingest;
            if a.input.is_some() {
                i.input = a.input.clone();
            }
            if let Some(f) = a.format {
                i.format = f;
            }
            if let Some(m) = a.max_tokens {
                i.max_tokens = m;
            }
            if let Some(d) = &a.domain {
                i.domain = Some(d.as_str().into());
            }
            if let Some(n) = a.synthetic {
                i.synthetic.get_or_insert_with(Default::default).n_docs = n;
            }
        }
        Command::Train(a) => {
            if a.train.is_some() {
                cfg.data.train = a.train.clone();
            }
            set_model(cfg, &a.model)?;
        }
        Command::Eval(a) => {
            if a.model_file.is_some() {
                cfg.data.model_file = a.model_file.clone();
            }
            if a.test.is_some() {
                cfg.data.test = a.test.clone();
            }
            if a.train.is_some() {
                cfg.data.train = a.train.clone();
            }
            if let Some(r) = a.runs {
                cfg.eval.runs = r;
            }
            set_model(cfg, &a.model)?;
        }
        Command::Crosstest(a) => {
            for d in &a.domains {
                let (name, path) = d
                    .split_once('=')
                    .ok_or_else(|| InputError::new(format!("--domain expects NAME=PATH, got {d:?}")))?;
                cfg.data.domains.insert(name.to_string(), path.into());
            }
            if let Some(r) = a.runs {
                cfg.crosstest.runs = r;
            }
            set_model(cfg, &a.model)?;
        }
        Command::Search(a) => {
            if a.train.is_some() {
                cfg.data.train = a.train.clone();
            }
            set_model(cfg, &a.model)?;
            if let Some(b) = a.budget {
                let space = match cfg.search.take() {
                    Some(s) => s,
                    None => commands::default_space(&cfg.model)?,
                };
                cfg.search = Some(tracekit::eval::SearchSpace { budget: b, ..space });
            }
        }
        Command::Explain(a) => {
            if a.model_file.is_some() {
                cfg.data.model_file = a.model_file.clone();
            }
            if a.corpus.is_some() {
                cfg.data.train = a.corpus.clone();
            }
            let e = &mut cfg.explain;
            if let Some(n) = a.instances {
                e.instances = n;
            }
            if let Some(n) = a.samples {
                e.shap.n_samples = n;
            }
            if let Some(k) = a.concepts {
                e.concepts.k = k;
            }
            if let Some(m) = a.top_m {
                e.concepts.top_m = m;
            }
            set_model(cfg, &a.model)?;
        }
        Command::Agree(a) => {
            if a.annotations.is_some() {
                cfg.agree.annotations = a.annotations.clone();
            }
            if a.expert.is_some() {
                cfg.agree.expert = a.expert.clone();
            }
            if let Some(k) = &a.kappa {
                cfg.agree.kappa_raters = Some([k[0].clone(), k[1].clone()]);
            }
        }
        Command::Config => {}
    }
    Ok(())
}

fn command_name(c: &Command) -> String {
    match c {
        Command::Ingest(_) => "ingest".into(),
        Command::Train(_) => "train".into(),
        Command::Eval(_) => "eval".into(),
        Command::Crosstest(_) => "crosstest".into(),
        Command::Search(_) => "search".into(),
        Command::Explain(a) => format!("explain-{}", a.kind.to_possible_value().expect("no skipped variants").get_name()),
        Command::Agree(_) => "agree".into(),
        Command::Config => "config".into(),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(InputError::new("--jobs must be at least 1").into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global()?;
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply_flags(&cli, &mut cfg)?;
    cfg.derive_seeds();
    let name = command_name(&cli.command);
    if let Command::Config = cli.command {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(());
    }
    let provenance = output::Provenance::new(&name, cfg.hash(&name)?, cfg.seed);
    let mut out = output::OutputDir::create(&cli.out, provenance)?;
    match cli.command {
        Command::Ingest(_) => commands::ingest(&cfg, &mut out)?,
        Command::Train(_) => commands::train(&cfg, &mut out)?,
        Command::Eval(_) => commands::eval(&cfg, &mut out)?,
        Command::Crosstest(_) => commands::crosstest(&cfg, &mut out)?,
        Command::Search(_) => commands::search(&cfg, &mut out)?,
        Command::Explain(a) => match a.kind {
            ExplainKind::Shap => commands::explain_shap(&cfg, &mut out)?,
            ExplainKind::Slalom => commands::explain_slalom(&cfg, &mut out)?,
            ExplainKind::Concepts => commands::explain_concepts(&cfg, &mut out)?,
        },
        Command::Agree(_) => commands::agree(&cfg, &mut out)?,
        Command::Config => unreachable!(),
    }
    for f in out.finish()? {
        println!("{}", cli.out.join(f).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = if is_input_error(&err) { 2 } else { 1 };
            let report = json!({
                "error": format!("{err:#}"),
                "kind": if code == 2 { "input" } else { "runtime" },
                "exit_code": code,
            });
            eprintln!("{report}");
            ExitCode::from(code)
        }
    }
}
