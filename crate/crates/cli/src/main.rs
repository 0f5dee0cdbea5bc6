use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use epiweak::eval::{render_confusion_csv, render_report, EvalReport, ReportFormat};
use epiweak::labeling::{EpidemicClass, MultiMatchPolicy};
use epiweak::pipeline::{
    ensure_dir, load_ruleset, read_dataset, read_documents, read_training_artifacts, run_pipeline,
    stage_eval, stage_ingest, stage_label, stage_train, with_threads, write_documents,
    write_reports, write_training_artifacts, ErrorKind, ModelKind, PipelineConfig, PipelineError,
    Stage, StageSeeds, TrainConfig,
};
use epiweak::synth::{write_corpus, SynthSpec};

#[derive(Parser)]
#[command(
    name = "epiweak",
    version,
    about = "Weakly supervised epidemic tweet classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, filter, normalize and deduplicate tweet JSONL into a documents TSV.
    Ingest(IngestArgs),
    /// Label documents with the ruleset and build the balanced dataset TSV.
    Label(LabelArgs),
    /// Split a dataset, fit TF-IDF on the training part and train models.
    Train(TrainArgs),
    /// Score trained models on the validation part of the split.
    Eval(EvalArgs),
    /// Render a JSON report as TSV or JSON, optionally with the confusion CSV.
    Report(ReportArgs),
    /// Write a seeded synthetic tweet corpus.
    Synth(SynthArgs),
    /// Run every stage and write all artifacts plus a manifest.
    Run(RunArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Input files (JSONL, optionally gzip-compressed).
    #[arg(long = "input", num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    /// Required language code, or "none" to keep every language.
    #[arg(long, default_value = "en")]
    lang: String,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct RuleArgs {
    /// Ruleset TSV (default: built-in).
    #[arg(long)]
    ruleset: Option<PathBuf>,
    /// Included epidemic classes, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = EpidemicClass::DEFAULT_INCLUDED.to_vec())]
    classes: Vec<EpidemicClass>,
    /// Handling of documents several rules match: exclude or priority.
    #[arg(long, default_value = "exclude")]
    policy: MultiMatchPolicy,
}

#[derive(Args)]
struct ModelArgs {
    /// Train/validation ratio.
    #[arg(long, default_value_t = 0.75)]
    ratio: f64,
    /// Model kinds: logistic, svm, tree or all.
    #[arg(long = "model", default_value = "all")]
    models: String,
    /// Blank out rule keywords before vectorizing.
    #[arg(long)]
    mask_keywords: bool,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Documents TSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LabelArgs {
    /// Documents TSV from `ingest`.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    rules: RuleArgs,
    /// Master seed deriving the stage seeds.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
    /// Dataset TSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset TSV from `label`.
    #[arg(long)]
    input: PathBuf,
    /// Ruleset used for keyword masking (default: built-in).
    #[arg(long)]
    ruleset: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
    /// Directory for split, vectorizer and model files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset TSV the models were trained from.
    #[arg(long)]
    input: PathBuf,
    /// Directory written by `train`.
    #[arg(long)]
    models: PathBuf,
    #[arg(long = "model", default_value = "all")]
    kinds: String,
    #[arg(long)]
    ruleset: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for reports (default: the models directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// JSON report from `eval` or `run`.
    #[arg(long)]
    input: PathBuf,
    /// Output format: tsv or json.
    #[arg(long, default_value = "tsv")]
    format: String,
    /// Also print the row-normalized confusion matrix as CSV.
    #[arg(long)]
    confusion: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Documents per class, e.g. cholera=600,non_epidemic=5500.
    #[arg(long, value_delimiter = ',', value_parser = parse_count,
          default_value = "cholera=600,ebola=2400,mers=400,swine_flu=1100,non_epidemic=5500")]
    counts: Vec<(EpidemicClass, usize)>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    background_vocab: usize,
    #[arg(long, default_value_t = 40)]
    signal_vocab: usize,
    #[arg(long, default_value_t = 0.2)]
    keyword_injection_prob: f64,
    #[arg(long, default_value_t = 0.25)]
    signal_rate: f64,
    #[arg(long, default_value_t = 0.2)]
    noise_rate: f64,
    #[arg(long, default_value_t = 0.1)]
    retweet_rate: f64,
    #[arg(long, default_value_t = 0.05)]
    duplicate_rate: f64,
    #[arg(long, default_value_t = 0.3)]
    url_rate: f64,
    #[arg(long, default_value_t = 0.2)]
    emoji_rate: f64,
    /// JSONL file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    rules: RuleArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn parse_count(s: &str) -> Result<(EpidemicClass, usize), String> {
    let (class, n) = s
        .split_once('=')
        .ok_or_else(|| format!("expected CLASS=COUNT, got {s:?}"))?;
    let class = class.parse::<EpidemicClass>().map_err(|e| e.to_string())?;
    let n = n
        .trim()
        .parse()
        .map_err(|e| format!("bad count in {s:?}: {e}"))?;
    Ok((class, n))
}

fn model_kinds(list: &str) -> Result<Vec<ModelKind>, PipelineError> {
    ModelKind::parse_list(list).map_err(config_error)
}

fn lang_filter(lang: &str) -> Option<String> {
    (!lang.eq_ignore_ascii_case("none")).then(|| lang.to_owned())
}

fn config_error(message: impl std::fmt::Display) -> PipelineError {
    PipelineError::new(Stage::Config, ErrorKind::Config, message)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, PipelineError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    fs::File::create(path).map(BufWriter::new).map_err(|e| {
        PipelineError::new(
            Stage::Write,
            ErrorKind::Config,
            format!("{}: {e}", path.display()),
        )
    })
}

fn print_json(value: &impl serde::Serialize) {
    let json = serde_json::to_string_pretty(value).expect("summary serializes");
    println!("{json}");
}

fn ingest(args: IngestArgs) -> Result<(), PipelineError> {
    let lang = lang_filter(&args.input.lang);
    let (docs, stats) = with_threads(args.input.threads, || {
        stage_ingest(&args.input.inputs, lang.as_deref())
    })??;
    let out = create(&args.out)?;
    write_documents(&docs, out)
        .map_err(|e| PipelineError::new(Stage::Write, ErrorKind::Config, e))?;
    print_json(&stats);
    Ok(())
}

fn label(args: LabelArgs) -> Result<(), PipelineError> {
    let ruleset = load_ruleset(args.rules.ruleset.as_deref())?;
    if args.rules.classes.is_empty() || args.rules.classes.contains(&EpidemicClass::NonEpidemic) {
        return Err(config_error(
            "included classes must be non-empty epidemic classes",
        ));
    }
    let file = fs::File::open(&args.input).map_err(|e| {
        PipelineError::new(
            Stage::Label,
            ErrorKind::Data,
            format!("{}: {e}", args.input.display()),
        )
    })?;
    let docs = read_documents(BufReader::new(file))?;
    let seeds = StageSeeds::from_master(args.seed);
    let (dataset, stats) = with_threads(args.threads, || {
        stage_label(
            docs,
            &ruleset,
            &args.rules.classes,
            args.rules.policy,
            seeds.sampling,
        )
    })??;
    let out = create(&args.out)?;
    dataset
        .write_tsv(out)
        .map_err(|e| PipelineError::new(Stage::Write, ErrorKind::Config, e))?;
    print_json(&stats);
    Ok(())
}

fn train(args: TrainArgs) -> Result<(), PipelineError> {
    if !(args.model.ratio > 0.0 && args.model.ratio < 1.0) {
        return Err(config_error(format!(
            "ratio {} is outside (0, 1)",
            args.model.ratio
        )));
    }
    let ruleset = load_ruleset(args.ruleset.as_deref())?;
    let seeds = StageSeeds::from_master(args.seed);
    let dataset = read_dataset(&args.input, seeds.sampling)?;
    let config = TrainConfig {
        ratio: args.model.ratio,
        seeds,
        models: model_kinds(&args.model.models)?,
        mask_keywords: args.model.mask_keywords,
        linear: Default::default(),
    };
    let trained = with_threads(args.threads, || stage_train(&dataset, &ruleset, &config))??;
    ensure_dir(&args.out)?;
    write_training_artifacts(&args.out, &trained)?;
    let summaries: Vec<_> = trained.models.iter().map(|(_, s)| s).collect();
    print_json(&summaries);
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), PipelineError> {
    let ruleset = load_ruleset(args.ruleset.as_deref())?;
    let dataset = read_dataset(&args.input, StageSeeds::from_master(args.seed).sampling)?;
    let (split, tfidf, models) = read_training_artifacts(&args.models, &model_kinds(&args.kinds)?)?;
    let out = args.out.unwrap_or_else(|| args.models.clone());
    ensure_dir(&out)?;
    let mut scores = BTreeMap::new();
    for (kind, model) in &models {
        let report = stage_eval(&dataset, &split, &tfidf, &ruleset, model)?;
        write_reports(&out, &report)?;
        scores.insert(kind.name(), report.weighted_f1);
    }
    print_json(&scores);
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), PipelineError> {
    let format: ReportFormat = args
        .format
        .parse()
        .map_err(|e| PipelineError::new(Stage::Report, ErrorKind::Config, e))?;
    let text = fs::read_to_string(&args.input).map_err(|e| {
        PipelineError::new(
            Stage::Report,
            ErrorKind::Data,
            format!("{}: {e}", args.input.display()),
        )
    })?;
    let report: EvalReport = serde_json::from_str(&text)
        .map_err(|e| PipelineError::new(Stage::Report, ErrorKind::Data, e))?;
    let mut stdout = io::stdout().lock();
    let mut emit = |bytes: &[u8]| {
        stdout
            .write_all(bytes)
            .map_err(|e| PipelineError::new(Stage::Write, ErrorKind::Config, e))
    };
    emit(&render_report(&report, format))?;
    if args.confusion {
        emit(&render_confusion_csv(&report.confusion))?;
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<(), PipelineError> {
    let spec = SynthSpec {
        counts: args.counts.into_iter().collect(),
        background_vocab: args.background_vocab,
        signal_vocab: args.signal_vocab,
        keyword_injection_prob: args.keyword_injection_prob,
        signal_rate: args.signal_rate,
        noise_rate: args.noise_rate,
        retweet_rate: args.retweet_rate,
        duplicate_rate: args.duplicate_rate,
        url_rate: args.url_rate,
        emoji_rate: args.emoji_rate,
        seed: args.seed,
        ..SynthSpec::default()
    };
    spec.validate()
        .map_err(|e| PipelineError::new(Stage::Synth, ErrorKind::Config, e))?;
    let out = create(&args.out)?;
    let summary = write_corpus(&spec, out)
        .map_err(|e| PipelineError::new(Stage::Synth, ErrorKind::Data, e))?;
    print_json(&summary);
    Ok(())
}

fn run(args: RunArgs) -> Result<(), PipelineError> {
    let mut config = PipelineConfig::new(args.input.inputs, args.out).with_seed(args.seed);
    config.ruleset = args.rules.ruleset;
    config.classes = args.rules.classes;
    config.policy = args.rules.policy;
    config.ratio = args.model.ratio;
    config.models = model_kinds(&args.model.models)?;
    config.lang = lang_filter(&args.input.lang);
    config.mask_keywords = args.model.mask_keywords;
    config.threads = args.input.threads;
    let manifest = run_pipeline(&config)?;
    let scores: BTreeMap<_, _> = manifest
        .models
        .iter()
        .map(|m| (m.kind.name(), m.weighted_f1))
        .collect();
    print_json(&serde_json::json!({
        "out": config.out_dir,
        "dataset_size": manifest.counts.dataset_size,
        "weighted_f1": scores,
    }));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Label(a) => label(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
        Command::Synth(a) => synth(a),
        Command::Run(a) => run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
