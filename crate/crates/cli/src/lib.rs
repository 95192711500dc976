//! The `itr` command line: ingest, train, explain, serve or simulate a study,
//! analyze its log, and benchmark the explainers.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error (bad or missing input
//! files), 4 internal error.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use itr_core::bench::bench_explainers;
use itr_core::classifier::{LinearModel, SgdConfig};
use itr_core::corpus::{hex_digest, stopwords, stopwords_checksum, Dataset, FeaturizerConfig};
use itr_core::explain::{write_batch, ExplainError, Explainers, LimeConfig, Method};
use itr_core::metrics::{analyze, AnalyzeOptions};
use itr_core::simarm::{simulate_study, Oracle, Scenario, SimSummary};
use itr_core::study::{
    parse_log, prepare, Condition, LogRecord, ManualClock, MaterialsReport, MemorySink, Study,
    StudyConfig,
};
use itr_core::synth::{generate, SynthConfig};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

/// Environment variable naming the service data directory.
pub const DATA_DIR_ENV: &str = "ITR_DATA_DIR";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

fn data_err(context: impl std::fmt::Display) -> impl FnOnce(&dyn std::fmt::Display) -> CliError {
    move |e| CliError::Data(format!("{context}: {e}"))
}

/// What a successful command reports.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandResult {
    pub summary: String,
    pub artifacts: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
}

#[derive(Debug, Parser)]
#[command(
    name = "itr",
    version,
    about = "Information transfer rate studies of text classifier explanations"
)]
pub struct Cli {
    /// Output format of reports.
    #[arg(long, value_enum, default_value = "table", global = true)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a tf-idf logistic regression model on a labelled TSV dataset.
    Train(TrainArgs),
    /// Report accuracy, precision, recall and F1 of a model on a labelled dataset.
    Evaluate(EvaluateArgs),
    /// Explain every document of a dataset with one method.
    Explain(ExplainArgs),
    /// Run the annotation study HTTP service.
    Serve(ServeArgs),
    /// Run a study to completion with simulated annotators.
    Simulate(SimulateArgs),
    /// Compute per-condition ITR, trust and significance tests from a study log.
    Analyze(AnalyzeArgs),
    /// Time per-document explanation cost of each method.
    Bench(BenchArgs),
    /// Print the embedded stopword list.
    Stopwords(StopwordsArgs),
    /// Write a synthetic topic dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Labelled TSV dataset (id, text, label).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Where to write the model.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed of the per-epoch shuffles.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    /// L2 regularization strength.
    #[arg(long, default_value_t = 1e-4)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,
    /// Minimum document frequency of a vocabulary term.
    #[arg(long, default_value_t = 1)]
    pub min_df: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Labelled TSV dataset.
    #[arg(long)]
    pub dataset: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub method: Method,
    /// TSV dataset whose documents are explained.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Held-out TSV dataset for the COVAR importances (default: --dataset).
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Perturbed samples per LIME explanation.
    #[arg(long, default_value_t = 2500)]
    pub lime_samples: usize,
    /// Where to write the explanations (one JSON record per line).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Directory holding study logs and the files study configs refer to.
    #[arg(long, env = DATA_DIR_ENV, default_value = ".")]
    pub data_dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Study config (JSON). Relative paths in it resolve against its directory.
    #[arg(long)]
    pub study_config: PathBuf,
    /// Scenario (JSON) with the annotator model of each condition.
    #[arg(long)]
    pub annotators: PathBuf,
    /// Where to write the study log.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the scenario's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Study log (NDJSON).
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Labelled TSV dataset holding the studied documents.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Only analyze these conditions (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub condition_filter: Option<Vec<Condition>>,
    /// Drop annotations slower than this.
    #[arg(long)]
    pub max_time_s: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Documents to explain (cycled through).
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Held-out TSV dataset for the COVAR importances (default: --dataset).
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 2500)]
    pub lime_samples: usize,
    #[arg(long, value_delimiter = ',', default_value = "covar,lime,random")]
    pub methods: Vec<Method>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct StopwordsArgs {
    /// Print only the SHA-256 of the list.
    #[arg(long)]
    pub checksum: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub n_docs: usize,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    /// Probability that a token is a topic keyword.
    #[arg(long, default_value_t = 0.3)]
    pub keyword_rate: f64,
    /// Probability that a label is flipped to another class.
    #[arg(long, default_value_t = 0.0)]
    pub label_noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "doc")]
    pub id_prefix: String,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> Result<CommandResult, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string()))?;
    run(cli)
}

pub fn run(cli: Cli) -> Result<CommandResult, CliError> {
    let f = cli.format;
    match cli.command {
        Command::Train(a) => train(&a, f),
        Command::Evaluate(a) => evaluate(&a, f),
        Command::Explain(a) => explain(&a, f),
        Command::Serve(a) => serve(&a),
        Command::Simulate(a) => simulate(&a, f),
        Command::Analyze(a) => analyze_log(&a, f),
        Command::Bench(a) => bench(&a, f),
        Command::Stopwords(a) => Ok(list_stopwords(&a, f)),
        Command::Synth(a) => synth(&a, f),
    }
}

fn to_json(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("reports serialize")
}

fn read_labelled(path: &Path, label_names: Option<&[String]>) -> Result<Dataset, CliError> {
    let d = match label_names {
        Some(names) => Dataset::read_tsv_with_labels(path, names),
        None => Dataset::read_tsv(path),
    };
    d.map_err(|e| data_err(path.display())(&e))
}

fn load_model(path: &Path) -> Result<LinearModel, CliError> {
    LinearModel::load(path).map_err(|e| data_err(path.display())(&e))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| data_err(path.display())(&e))
}

/// SHA-256 of a file's bytes.
pub fn file_checksum(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| data_err(path.display())(&e))?;
    Ok(hex_digest(&bytes))
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    model: PathBuf,
    checksum: String,
    n_documents: usize,
    n_features: usize,
    label_names: Vec<String>,
    final_loss: f64,
    training_accuracy: f64,
}

fn train(a: &TrainArgs, format: Format) -> Result<CommandResult, CliError> {
    let dataset = read_labelled(&a.dataset, None)?;
    let sgd = SgdConfig {
        lambda: a.lambda,
        learning_rate: a.learning_rate,
        epochs: a.epochs,
        seed: a.seed,
    };
    let (model, trace) = LinearModel::train(&dataset, FeaturizerConfig { min_df: a.min_df }, &sgd)
        .map_err(|e| data_err(a.dataset.display())(&e))?;
    model
        .save(&a.out)
        .map_err(|e| data_err(a.out.display())(&e))?;
    let report = model
        .evaluate(&dataset)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let s = TrainSummary {
        model: a.out.clone(),
        checksum: file_checksum(&a.out)?,
        n_documents: dataset.docs.len(),
        n_features: model.featurizer().n_features(),
        label_names: model.label_names().to_vec(),
        final_loss: trace.epoch_loss.last().copied().unwrap_or(f64::NAN),
        training_accuracy: report.accuracy,
    };
    let summary = match format {
        Format::Json => to_json(&s),
        Format::Table => format!(
            "model       {}\nchecksum    {}\ndocuments   {}\nfeatures    {}\nlabels      {}\nfinal loss  {:.6}\ntrain acc   {:.4}",
            s.model.display(),
            s.checksum,
            s.n_documents,
            s.n_features,
            s.label_names.join(", "),
            s.final_loss,
            s.training_accuracy
        ),
    };
    Ok(CommandResult {
        summary,
        artifacts: vec![a.out.clone()],
    })
}

fn evaluate(a: &EvaluateArgs, format: Format) -> Result<CommandResult, CliError> {
    let model = load_model(&a.model)?;
    let dataset = read_labelled(&a.dataset, Some(model.label_names()))?;
    let report = model
        .evaluate(&dataset)
        .map_err(|e| data_err(a.dataset.display())(&e))?;
    let summary = match format {
        Format::Json => to_json(&report),
        Format::Table => report.to_string(),
    };
    Ok(CommandResult {
        summary,
        artifacts: vec![],
    })
}

#[derive(Debug, Serialize)]
struct ExplainSummary {
    out: PathBuf,
    method: Method,
    n_documents: usize,
    n_explained: usize,
    /// Documents with fewer than three usable tokens.
    skipped: Vec<String>,
    with_duplicates: usize,
    degenerate: usize,
}

fn explain(a: &ExplainArgs, format: Format) -> Result<CommandResult, CliError> {
    let model = load_model(&a.model)?;
    let dataset = read_labelled(&a.dataset, Some(model.label_names()))?;
    let heldout = match &a.heldout {
        Some(p) => read_labelled(p, Some(model.label_names()))?,
        None => dataset.clone(),
    };
    let lime = LimeConfig {
        n_samples: a.lime_samples,
        ..LimeConfig::default()
    };
    if lime.n_samples == 0 {
        return Err(CliError::Usage("--lime-samples must be at least 1".into()));
    }
    let explainers = Explainers::new(&model, &[a.method], heldout.texts(), lime, a.seed)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for (i, doc) in dataset.docs.iter().enumerate() {
        match explainers.explain(a.method, i, &doc.id, &doc.text) {
            Ok(e) => out.push(e),
            Err(ExplainError::TooFewTokens { doc_id, .. }) => skipped.push(doc_id),
            Err(e) => return Err(CliError::Internal(e.to_string())),
        }
    }
    write_file(&a.out, &write_batch(&out))?;
    let s = ExplainSummary {
        out: a.out.clone(),
        method: a.method,
        n_documents: dataset.docs.len(),
        n_explained: out.len(),
        with_duplicates: out.iter().filter(|e| e.had_duplicates).count(),
        degenerate: out.iter().filter(|e| e.degenerate).count(),
        skipped,
    };
    let summary = match format {
        Format::Json => to_json(&s),
        Format::Table => format!(
            "wrote {} {} explanations of {} documents to {} ({} skipped, {} with duplicate words, {} degenerate)",
            s.n_explained,
            s.method,
            s.n_documents,
            s.out.display(),
            s.skipped.len(),
            s.with_duplicates,
            s.degenerate
        ),
    };
    Ok(CommandResult {
        summary,
        artifacts: vec![a.out.clone()],
    })
}

fn serve(a: &ServeArgs) -> Result<CommandResult, CliError> {
    let registry = itr_service::Registry::open(&a.data_dir, Arc::new(itr_core::study::SystemClock))
        .map_err(|e| data_err(a.data_dir.display())(&e))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Internal(e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.addr)
            .await
            .map_err(|e| CliError::Usage(format!("cannot listen on {}: {e}", a.addr)))?;
        let local = listener
            .local_addr()
            .map_err(|e| CliError::Internal(e.to_string()))?;
        log::info!(
            "serving {} studies on http://{local}",
            registry.study_ids().len()
        );
        eprintln!("listening on http://{local}");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        itr_service::serve(listener, Arc::new(registry), shutdown)
            .await
            .map_err(|e| CliError::Internal(e.to_string()))
    })?;
    Ok(CommandResult {
        summary: "stopped".into(),
        artifacts: vec![],
    })
}

#[derive(Debug, Serialize)]
struct SimulateSummary {
    log: PathBuf,
    study_id: String,
    materials: MaterialsReport,
    simulation: SimSummary,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| data_err(path.display())(&e))?;
    serde_json::from_str(&text).map_err(|e| data_err(path.display())(&e))
}

fn simulate(a: &SimulateArgs, format: Format) -> Result<CommandResult, CliError> {
    let config: StudyConfig = read_json(&a.study_config)?;
    let mut scenario: Scenario = read_json(&a.annotators)?;
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    scenario
        .validate()
        .map_err(|e| data_err(a.annotators.display())(&e))?;
    let base = a.study_config.parent().unwrap_or(Path::new("."));
    let prepared = prepare(&config, base).map_err(|e| data_err(a.study_config.display())(&e))?;
    let oracle = Oracle {
        predictions: prepared.predictions(),
        truths: prepared.truths(),
    };
    let clock = Arc::new(ManualClock::new(0));
    let study_id = format!("sim-{}", scenario.seed);
    let study = Study::create(
        study_id.clone(),
        config,
        prepared.model.label_names().to_vec(),
        prepared.items,
        Box::new(MemorySink),
        clock.clone(),
    )
    .map_err(|e| data_err(a.study_config.display())(&e))?;
    let simulation = simulate_study(&study, &clock, &scenario, &oracle)
        .map_err(|e| data_err(a.annotators.display())(&e))?;
    write_file(&a.out, &study.export())?;
    let s = SimulateSummary {
        log: a.out.clone(),
        study_id,
        materials: prepared.report,
        simulation,
    };
    let summary = match format {
        Format::Json => to_json(&s),
        Format::Table => format!(
            "study {} over {} items ({} excluded): {} annotations, {} expired, {}; log written to {}",
            s.study_id,
            s.materials.n_items,
            s.materials.excluded.len(),
            s.simulation.annotations,
            s.simulation.expired,
            if s.simulation.complete { "complete" } else { "incomplete" },
            s.log.display()
        ),
    };
    Ok(CommandResult {
        summary,
        artifacts: vec![a.out.clone()],
    })
}

fn analyze_log(a: &AnalyzeArgs, format: Format) -> Result<CommandResult, CliError> {
    let text = fs::read_to_string(&a.log).map_err(|e| data_err(a.log.display())(&e))?;
    if text.trim().is_empty() {
        return Err(CliError::Data(format!("log {} is empty", a.log.display())));
    }
    let (header, records) = parse_log(&text).map_err(|e| data_err(a.log.display())(&e))?;
    let annotations: Vec<_> = records
        .into_iter()
        .filter_map(|r| match r {
            LogRecord::Annotation(a) => Some(a),
            _ => None,
        })
        .collect();
    if annotations.is_empty() {
        return Err(CliError::Data(format!(
            "log {} holds no annotations",
            a.log.display()
        )));
    }
    let model = load_model(&a.model)?;
    if model.label_names() != header.label_names.as_slice() {
        return Err(CliError::Data(format!(
            "{}: labels {:?} differ from the model's {:?}",
            a.log.display(),
            header.label_names,
            model.label_names()
        )));
    }
    let dataset = read_labelled(&a.dataset, Some(model.label_names()))?;
    let predictions: HashMap<String, usize> = dataset
        .docs
        .iter()
        .map(|d| (d.id.clone(), model.predict_label(&d.text)))
        .collect();
    let truths: HashMap<String, usize> = dataset
        .docs
        .iter()
        .filter_map(|d| d.label.map(|l| (d.id.clone(), l)))
        .collect();
    let options = AnalyzeOptions {
        max_time_s: a.max_time_s,
        condition_filter: a.condition_filter.clone(),
    };
    let report = analyze(
        &annotations,
        &predictions,
        &truths,
        model.label_names(),
        &options,
    )
    .map_err(|e| data_err(a.log.display())(&e))?;
    let summary = match format {
        Format::Json => report.to_json(),
        Format::Table => report.to_string(),
    };
    Ok(CommandResult {
        summary,
        artifacts: vec![],
    })
}

fn bench(a: &BenchArgs, format: Format) -> Result<CommandResult, CliError> {
    if a.repetitions == 0 || a.lime_samples == 0 {
        return Err(CliError::Usage(
            "--repetitions and --lime-samples must be at least 1".into(),
        ));
    }
    let model = load_model(&a.model)?;
    let dataset = read_labelled(&a.dataset, Some(model.label_names()))?;
    let heldout = match &a.heldout {
        Some(p) => read_labelled(p, Some(model.label_names()))?,
        None => dataset.clone(),
    };
    let featurizer = model.featurizer();
    let docs: Vec<(String, String)> = dataset
        .docs
        .iter()
        .filter(|d| featurizer.vocab_tokens(&d.text).len() >= itr_core::explain::N_HIGHLIGHTS)
        .map(|d| (d.id.clone(), d.text.clone()))
        .collect();
    if docs.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no document has three in-vocabulary tokens",
            a.dataset.display()
        )));
    }
    let lime = LimeConfig {
        n_samples: a.lime_samples,
        ..LimeConfig::default()
    };
    let heldout_texts: Vec<&str> = heldout.texts().collect();
    let report = bench_explainers(
        &docs,
        &heldout_texts,
        &model,
        &a.methods,
        a.repetitions,
        &lime,
        a.seed,
    )
    .map_err(|e| CliError::Internal(e.to_string()))?;
    let summary = match format {
        Format::Json => to_json(&report),
        Format::Table => report.to_string(),
    };
    Ok(CommandResult {
        summary,
        artifacts: vec![],
    })
}

#[derive(Debug, Serialize)]
struct StopwordList {
    sha256: String,
    words: Vec<&'static str>,
}

fn list_stopwords(a: &StopwordsArgs, format: Format) -> CommandResult {
    let list = StopwordList {
        sha256: stopwords_checksum(),
        words: stopwords().collect(),
    };
    let summary = match (format, a.checksum) {
        (Format::Json, true) => to_json(&serde_json::json!({ "sha256": list.sha256 })),
        (Format::Json, false) => to_json(&list),
        (Format::Table, true) => list.sha256,
        (Format::Table, false) => list.words.join("\n"),
    };
    CommandResult {
        summary,
        artifacts: vec![],
    }
}

fn synth(a: &SynthArgs, format: Format) -> Result<CommandResult, CliError> {
    if a.classes < 2 {
        return Err(CliError::Usage("--classes must be at least 2".into()));
    }
    for (name, p) in [
        ("--keyword-rate", a.keyword_rate),
        ("--label-noise", a.label_noise),
    ] {
        if !(0.0..=1.0).contains(&p) {
            return Err(CliError::Usage(format!("{name} must lie in [0, 1]")));
        }
    }
    let dataset = generate(&SynthConfig {
        n_docs: a.n_docs,
        n_classes: a.classes,
        keyword_rate: a.keyword_rate,
        label_noise: a.label_noise,
        seed: a.seed,
        id_prefix: a.id_prefix.clone(),
        ..SynthConfig::default()
    });
    dataset
        .write_tsv(&a.out)
        .map_err(|e| data_err(a.out.display())(&e))?;
    let summary = match format {
        Format::Json => {
            to_json(&serde_json::json!({ "out": a.out, "n_documents": dataset.docs.len() }))
        }
        Format::Table => format!(
            "wrote {} documents to {}",
            dataset.docs.len(),
            a.out.display()
        ),
    };
    Ok(CommandResult {
        summary,
        artifacts: vec![a.out.clone()],
    })
}
