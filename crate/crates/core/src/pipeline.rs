//! The staged pipeline: ingest, label, balance, split, vectorize, train,
//! evaluate, and the on-disk artifacts each stage produces.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{ingest_paths, IngestOptions, IngestStats, NormalizedDocument};
use crate::eval::{render_confusion_csv, render_report, EvalReport, ReportFormat};
use crate::features::{fit_tfidf, SparseVector, TfIdfModel, TokenizerConfig};
use crate::labeling::{
    build_silver_dataset, sample_negatives, EpidemicClass, LabelError, LabelOutcome,
    LabeledExample, MultiMatchPolicy, Ruleset, SilverDataset,
};
use crate::models::{
    stratified_split, train_decision_tree, train_linear_svm, train_logistic, DatasetSplit,
    LinearHyperparams, ModelError, TrainedModel, TreeHyperparams,
};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Ingest,
    Label,
    Split,
    Vectorize,
    Train,
    Eval,
    Report,
    Synth,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("stage serializes");
        f.write_str(s.as_str().unwrap_or("unknown"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Config,
    Data,
    Training,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Config => 2,
            Self::Data => 3,
            Self::Training => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{stage} failed ({kind:?}): {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub kind: ErrorKind,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, kind: ErrorKind, message: impl fmt::Display) -> Self {
        Self {
            stage,
            kind,
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": {
                "stage": self.stage,
                "kind": self.kind,
                "exit_code": self.exit_code(),
                "message": self.message,
            }
        })
        .to_string()
    }
}

fn write_err(path: &Path, e: impl fmt::Display) -> PipelineError {
    PipelineError::new(
        Stage::Write,
        ErrorKind::Config,
        format!("{}: {e}", path.display()),
    )
}

fn label_error(stage: Stage, e: LabelError) -> PipelineError {
    let kind = match e {
        LabelError::Config(_)
        | LabelError::Pattern { .. }
        | LabelError::UnknownClass(_)
        | LabelError::RulesetSyntax { .. } => ErrorKind::Config,
        _ => ErrorKind::Data,
    };
    PipelineError::new(stage, kind, e)
}

fn model_error(stage: Stage, e: ModelError) -> PipelineError {
    let kind = match e {
        ModelError::Hyperparams(_) => ErrorKind::Config,
        ModelError::Divergence { .. } => ErrorKind::Training,
        ModelError::Corrupt(_) | ModelError::Version(_) | ModelError::Json(_) => ErrorKind::Data,
        _ if stage == Stage::Train => ErrorKind::Training,
        _ => ErrorKind::Data,
    };
    PipelineError::new(stage, kind, e)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logistic,
    Svm,
    Tree,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [Self::Logistic, Self::Svm, Self::Tree];

    pub fn name(self) -> &'static str {
        match self {
            Self::Logistic => "logistic",
            Self::Svm => "svm",
            Self::Tree => "tree",
        }
    }

    /// Parses `logistic`, `svm`, `tree`, `all`, or a comma-separated list.
    pub fn parse_list(s: &str) -> Result<Vec<ModelKind>, String> {
        let mut out = BTreeSet::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part.eq_ignore_ascii_case("all") {
                out.extend(Self::ALL);
            } else {
                out.insert(part.parse()?);
            }
        }
        if out.is_empty() {
            return Err("no model kind given".into());
        }
        Ok(out.into_iter().collect())
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "logistic" | "lr" => Ok(Self::Logistic),
            "svm" => Ok(Self::Svm),
            "tree" | "dt" => Ok(Self::Tree),
            other => Err(format!(
                "unknown model kind {other:?} (expected logistic, svm, tree or all)"
            )),
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-stage seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub sampling: u64,
    pub split: u64,
    pub tree: u64,
}

impl StageSeeds {
    /// Derives the three stage seeds from one master seed with SplitMix64.
    pub fn from_master(master: u64) -> Self {
        let mut s = master;
        Self {
            sampling: splitmix64(&mut s),
            split: splitmix64(&mut s),
            tree: splitmix64(&mut s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub inputs: Vec<PathBuf>,
    /// `None` uses the built-in ruleset.
    pub ruleset: Option<PathBuf>,
    pub classes: Vec<EpidemicClass>,
    pub policy: MultiMatchPolicy,
    pub ratio: f64,
    pub master_seed: u64,
    pub seeds: StageSeeds,
    pub models: Vec<ModelKind>,
    pub out_dir: PathBuf,
    /// `None` disables the language filter.
    pub lang: Option<String>,
    pub mask_keywords: bool,
    /// `None` uses the available parallelism.
    pub threads: Option<usize>,
}

impl PipelineConfig {
    pub fn new(inputs: Vec<PathBuf>, out_dir: PathBuf) -> Self {
        Self {
            inputs,
            ruleset: None,
            classes: EpidemicClass::DEFAULT_INCLUDED.to_vec(),
            policy: MultiMatchPolicy::default(),
            ratio: 0.75,
            master_seed: 0,
            seeds: StageSeeds::from_master(0),
            models: ModelKind::ALL.to_vec(),
            out_dir,
            lang: Some("en".into()),
            mask_keywords: false,
            threads: None,
        }
    }

    pub fn with_seed(mut self, master: u64) -> Self {
        self.master_seed = master;
        self.seeds = StageSeeds::from_master(master);
        self
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::new(Stage::Config, ErrorKind::Config, m));
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return bad(format!("ratio {} is outside (0, 1)", self.ratio));
        }
        if self.classes.is_empty() {
            return bad("no included classes".into());
        }
        if self.classes.contains(&EpidemicClass::NonEpidemic) {
            return bad("non_epidemic cannot be an included positive class".into());
        }
        if self.inputs.is_empty() {
            return bad("no input paths".into());
        }
        let distinct: BTreeSet<_> = self.inputs.iter().collect();
        if distinct.len() != self.inputs.len() {
            return bad("input paths are not distinct".into());
        }
        if self.models.is_empty() {
            return bad("no model kinds".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical config JSON, ignoring the output directory
    /// and thread count, which do not affect results.
    pub fn config_hash(&self) -> String {
        let mut canon = self.clone();
        canon.out_dir = PathBuf::new();
        canon.threads = None;
        let json = serde_json::to_vec(&canon).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

pub fn load_ruleset(path: Option<&Path>) -> Result<Ruleset, PipelineError> {
    match path {
        None => Ok(Ruleset::default_rules()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| {
                PipelineError::new(
                    Stage::Config,
                    ErrorKind::Config,
                    format!("{}: {e}", p.display()),
                )
            })?;
            Ruleset::from_tsv(&text).map_err(|e| label_error(Stage::Config, e))
        }
    }
}

/// Runs `f` on a rayon pool of the requested size.
pub fn with_threads<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> T + Send,
) -> Result<T, PipelineError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| PipelineError::new(Stage::Config, ErrorKind::Config, e))?;
    Ok(pool.install(f))
}

pub fn stage_ingest(
    inputs: &[PathBuf],
    lang: Option<&str>,
) -> Result<(Vec<NormalizedDocument>, IngestStats), PipelineError> {
    let opts = IngestOptions {
        require_lang: lang.map(str::to_owned),
        ..IngestOptions::default()
    };
    ingest_paths(inputs, &opts).map_err(|e| PipelineError::new(Stage::Ingest, ErrorKind::Data, e))
}

/// Labeling counts over the deduplicated originals.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelStats {
    pub documents: usize,
    /// Labeled documents per class, included or not.
    pub labeled: BTreeMap<EpidemicClass, usize>,
    pub ambiguous_excluded: usize,
    pub unmatched: usize,
    pub included_positives: usize,
    pub negatives: usize,
}

impl LabelStats {
    pub fn labeled_total(&self) -> usize {
        self.labeled.values().sum()
    }
}

/// Labels every document, keeps the included classes, and draws an equal
/// number of negatives from the unmatched pool.
pub fn stage_label(
    docs: Vec<NormalizedDocument>,
    ruleset: &Ruleset,
    classes: &[EpidemicClass],
    policy: MultiMatchPolicy,
    sampling_seed: u64,
) -> Result<(SilverDataset, LabelStats), PipelineError> {
    let included: BTreeSet<EpidemicClass> = classes.iter().copied().collect();
    let outcomes: Vec<LabelOutcome> = docs
        .par_iter()
        .map(|d| ruleset.label(&d.text, policy))
        .collect();

    let mut stats = LabelStats {
        documents: docs.len(),
        ..LabelStats::default()
    };
    let mut positives: BTreeMap<EpidemicClass, Vec<LabeledExample>> =
        included.iter().map(|&c| (c, Vec::new())).collect();
    let mut unmatched = Vec::new();
    for (doc, outcome) in docs.into_iter().zip(outcomes) {
        match outcome {
            LabelOutcome::Unmatched => {
                stats.unmatched += 1;
                unmatched.push(doc);
            }
            LabelOutcome::Ambiguous => stats.ambiguous_excluded += 1,
            LabelOutcome::Labeled(c) => {
                *stats.labeled.entry(c).or_default() += 1;
                if included.contains(&c) {
                    positives
                        .get_mut(&c)
                        .expect("included")
                        .push(LabeledExample {
                            id: doc.id,
                            text: doc.text,
                            label: c,
                        });
                }
            }
        }
    }
    stats.included_positives = positives.values().map(Vec::len).sum();
    if stats.included_positives == 0 {
        return Err(PipelineError::new(
            Stage::Label,
            ErrorKind::Data,
            "no documents matched any included class",
        ));
    }
    let negatives = sample_negatives(unmatched, ruleset, stats.included_positives, sampling_seed)
        .map_err(|e| label_error(Stage::Label, e))?;
    stats.negatives = negatives.len();
    let dataset = build_silver_dataset(positives, negatives, sampling_seed)
        .map_err(|e| label_error(Stage::Label, e))?;
    Ok((dataset, stats))
}

/// Settings for the split, vectorize and train stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub ratio: f64,
    pub seeds: StageSeeds,
    pub models: Vec<ModelKind>,
    pub mask_keywords: bool,
    pub linear: LinearHyperparams,
}

impl TrainConfig {
    pub fn from_pipeline(config: &PipelineConfig) -> Self {
        Self {
            ratio: config.ratio,
            seeds: config.seeds,
            models: config.models.clone(),
            mask_keywords: config.mask_keywords,
            linear: LinearHyperparams::default(),
        }
    }
}

/// Text as the vectorizer sees it.
pub fn feature_text<'a>(
    text: &'a str,
    tfidf_config: &TokenizerConfig,
    ruleset: &Ruleset,
) -> std::borrow::Cow<'a, str> {
    if tfidf_config.mask_keywords {
        std::borrow::Cow::Owned(ruleset.mask_keywords(text))
    } else {
        std::borrow::Cow::Borrowed(text)
    }
}

pub fn vectorize(
    examples: &[LabeledExample],
    indices: &[usize],
    tfidf: &TfIdfModel,
    ruleset: &Ruleset,
) -> (Vec<SparseVector>, Vec<EpidemicClass>) {
    let x = indices
        .par_iter()
        .map(|&i| tfidf.transform(&feature_text(&examples[i].text, tfidf.config(), ruleset)))
        .collect();
    let y = indices.iter().map(|&i| examples[i].label).collect();
    (x, y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub kind: ModelKind,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tree_depth: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tree_leaves: Option<usize>,
}

pub struct TrainOutput {
    pub split: DatasetSplit,
    pub tfidf: TfIdfModel,
    pub models: Vec<(TrainedModel, TrainSummary)>,
}

/// Splits, fits TF-IDF on the training part only, and trains each model.
pub fn stage_train(
    dataset: &SilverDataset,
    ruleset: &Ruleset,
    config: &TrainConfig,
) -> Result<TrainOutput, PipelineError> {
    let split = stratified_split(&dataset.labels(), config.ratio, config.seeds.split)
        .map_err(|e| model_error(Stage::Split, e))?;
    let tok = TokenizerConfig {
        mask_keywords: config.mask_keywords,
        ..TokenizerConfig::default()
    };
    let examples = dataset.examples();
    let train_texts: Vec<_> = split
        .train
        .iter()
        .map(|&i| feature_text(&examples[i].text, &tok, ruleset))
        .collect();
    let tfidf = fit_tfidf(train_texts.iter().map(|t| t.as_ref()), &tok)
        .map_err(|e| PipelineError::new(Stage::Vectorize, ErrorKind::Data, e))?;
    let (x, y) = vectorize(examples, &split.train, &tfidf, ruleset);

    let mut models = Vec::new();
    for &kind in &config.models {
        let trained = match kind {
            ModelKind::Logistic | ModelKind::Svm => {
                let (m, trace) = if kind == ModelKind::Logistic {
                    train_logistic(&x, &y, &config.linear)
                } else {
                    train_linear_svm(&x, &y, &config.linear)
                }
                .map_err(|e| model_error(Stage::Train, e))?;
                let summary = TrainSummary {
                    kind,
                    iterations: trace.iterations,
                    converged: trace.converged,
                    tree_depth: None,
                    tree_leaves: None,
                };
                (TrainedModel::Linear(m), summary)
            }
            ModelKind::Tree => {
                let hp = TreeHyperparams {
                    seed: config.seeds.tree,
                    ..TreeHyperparams::default()
                };
                let m =
                    train_decision_tree(&x, &y, &hp).map_err(|e| model_error(Stage::Train, e))?;
                let summary = TrainSummary {
                    kind,
                    iterations: vec![],
                    converged: vec![],
                    tree_depth: Some(m.depth()),
                    tree_leaves: Some(m.n_leaves()),
                };
                (TrainedModel::Tree(m), summary)
            }
        };
        models.push(trained);
    }
    Ok(TrainOutput {
        split,
        tfidf,
        models,
    })
}

/// Scores a model on the validation part of the split.
pub fn stage_eval(
    dataset: &SilverDataset,
    split: &DatasetSplit,
    tfidf: &TfIdfModel,
    ruleset: &Ruleset,
    model: &TrainedModel,
) -> Result<EvalReport, PipelineError> {
    if model.dim() != tfidf.dim() {
        return Err(PipelineError::new(
            Stage::Eval,
            ErrorKind::Data,
            format!(
                "model dimension {} does not match vectorizer dimension {}",
                model.dim(),
                tfidf.dim()
            ),
        ));
    }
    if let Some(&bad) = split
        .train
        .iter()
        .chain(&split.validation)
        .find(|&&i| i >= dataset.len())
    {
        return Err(PipelineError::new(
            Stage::Eval,
            ErrorKind::Data,
            format!(
                "split index {bad} is out of range for a dataset of {}",
                dataset.len()
            ),
        ));
    }
    let (x, truth) = vectorize(dataset.examples(), &split.validation, tfidf, ruleset);
    let pred = model.predict(&x).map_err(|e| model_error(Stage::Eval, e))?;
    let classes: Vec<EpidemicClass> = dataset.class_counts().keys().copied().collect();
    EvalReport::evaluate(model.kind_name(), &truth, &pred, &classes)
        .map_err(|e| PipelineError::new(Stage::Eval, ErrorKind::Data, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    fs::write(path, bytes).map_err(|e| write_err(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|e| write_err(dir, e))
}

pub fn dataset_path(dir: &Path) -> PathBuf {
    dir.join("dataset.tsv")
}

pub fn split_path(dir: &Path) -> PathBuf {
    dir.join("split.json")
}

pub fn tfidf_path(dir: &Path) -> PathBuf {
    dir.join("tfidf.json")
}

pub fn model_path(dir: &Path, kind: ModelKind) -> PathBuf {
    dir.join(format!("model_{kind}.json"))
}

pub fn write_dataset(dir: &Path, dataset: &SilverDataset) -> Result<PathBuf, PipelineError> {
    let path = dataset_path(dir);
    let file = fs::File::create(&path).map_err(|e| write_err(&path, e))?;
    dataset
        .write_tsv(BufWriter::new(file))
        .map_err(|e| write_err(&path, e))?;
    Ok(path)
}

pub fn read_dataset(path: &Path, seed: u64) -> Result<SilverDataset, PipelineError> {
    let file = fs::File::open(path).map_err(|e| {
        PipelineError::new(
            Stage::Label,
            ErrorKind::Data,
            format!("{}: {e}", path.display()),
        )
    })?;
    SilverDataset::read_tsv(BufReader::new(file), seed).map_err(|e| label_error(Stage::Label, e))
}

/// Writes the split, vectorizer and model files of a training run.
pub fn write_training_artifacts(dir: &Path, out: &TrainOutput) -> Result<(), PipelineError> {
    let split = serde_json::to_string_pretty(&out.split).expect("split serializes");
    write_file(&split_path(dir), split.as_bytes())?;
    let tfidf = out
        .tfidf
        .to_json()
        .map_err(|e| PipelineError::new(Stage::Write, ErrorKind::Data, e))?;
    write_file(&tfidf_path(dir), tfidf.as_bytes())?;
    let checksum = out.tfidf.checksum();
    for (model, summary) in &out.models {
        let json = model
            .to_json(&checksum)
            .map_err(|e| model_error(Stage::Write, e))?;
        write_file(&model_path(dir, summary.kind), json.as_bytes())?;
    }
    Ok(())
}

/// Split, vectorizer and models as read back from disk.
pub type TrainingArtifacts = (DatasetSplit, TfIdfModel, Vec<(ModelKind, TrainedModel)>);

/// Loads what [`write_training_artifacts`] wrote, checking that each model
/// belongs to the stored vectorizer.
pub fn read_training_artifacts(
    dir: &Path,
    kinds: &[ModelKind],
) -> Result<TrainingArtifacts, PipelineError> {
    let read = |p: PathBuf| {
        fs::read_to_string(&p).map_err(|e| {
            PipelineError::new(
                Stage::Eval,
                ErrorKind::Data,
                format!("{}: {e}", p.display()),
            )
        })
    };
    let split: DatasetSplit = serde_json::from_str(&read(split_path(dir))?)
        .map_err(|e| PipelineError::new(Stage::Eval, ErrorKind::Data, e))?;
    let tfidf = TfIdfModel::from_json(&read(tfidf_path(dir))?)
        .map_err(|e| PipelineError::new(Stage::Eval, ErrorKind::Data, e))?;
    let mut models = Vec::new();
    for &kind in kinds {
        let (model, checksum) = TrainedModel::from_json(&read(model_path(dir, kind))?)
            .map_err(|e| model_error(Stage::Eval, e))?;
        if checksum != tfidf.checksum() {
            return Err(PipelineError::new(
                Stage::Eval,
                ErrorKind::Data,
                format!("model_{kind}.json was trained against a different vectorizer"),
            ));
        }
        models.push((kind, model));
    }
    Ok((split, tfidf, models))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFiles {
    pub tsv: String,
    pub json: String,
    pub confusion_csv: String,
}

/// Writes the TSV and JSON reports and the normalized confusion CSV.
pub fn write_reports(dir: &Path, report: &EvalReport) -> Result<ReportFiles, PipelineError> {
    let files = ReportFiles {
        tsv: format!("report_{}.tsv", report.model),
        json: format!("report_{}.json", report.model),
        confusion_csv: format!("confusion_{}.csv", report.model),
    };
    write_file(
        &dir.join(&files.tsv),
        &render_report(report, ReportFormat::Tsv),
    )?;
    write_file(
        &dir.join(&files.json),
        &render_report(report, ReportFormat::Json),
    )?;
    write_file(
        &dir.join(&files.confusion_csv),
        &render_confusion_csv(&report.confusion),
    )?;
    Ok(files)
}

/// Documents as `id<TAB>text` lines under a header.
pub fn write_documents<W: Write>(docs: &[NormalizedDocument], mut w: W) -> io::Result<()> {
    writeln!(w, "id\ttext")?;
    for d in docs {
        writeln!(w, "{}\t{}", d.id, d.text)?;
    }
    w.flush()
}

pub fn read_documents<R: BufRead>(r: R) -> Result<Vec<NormalizedDocument>, PipelineError> {
    let bad = |line: usize, m: &str| {
        PipelineError::new(Stage::Label, ErrorKind::Data, format!("line {line}: {m}"))
    };
    let mut docs = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| bad(i + 1, &e.to_string()))?;
        if i == 0 {
            if line != "id\ttext" {
                return Err(bad(1, "expected header id\\ttext"));
            }
            continue;
        }
        let (id, text) = line
            .split_once('\t')
            .ok_or_else(|| bad(i + 1, "missing tab"))?;
        docs.push(NormalizedDocument {
            id: id.to_owned(),
            text: text.to_owned(),
        });
    }
    Ok(docs)
}

/// Per-stage accounting, checked by [`Manifest::check_identities`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCounts {
    pub ingest: IngestStats,
    pub label: LabelStats,
    pub dataset: BTreeMap<EpidemicClass, usize>,
    pub dataset_size: usize,
    pub train: usize,
    pub validation: usize,
    pub vocabulary: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub kind: ModelKind,
    pub file: String,
    pub reports: ReportFiles,
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub training: TrainSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: PipelineConfig,
    pub config_hash: String,
    pub seeds: StageSeeds,
    pub ruleset_rules: usize,
    pub tfidf_checksum: String,
    pub counts: StageCounts,
    pub models: Vec<ModelEntry>,
}

impl Manifest {
    /// The accounting identities every run must satisfy; returns the
    /// violated ones.
    pub fn check_identities(&self) -> Vec<String> {
        let c = &self.counts;
        let i = &c.ingest;
        let mut bad = Vec::new();
        let mut check = |ok: bool, what: &str| {
            if !ok {
                bad.push(what.to_owned());
            }
        };
        check(
            i.records_in == i.parsed + i.parse_skips(),
            "records_in = parsed + parse_skips",
        );
        check(
            i.parsed == i.originals + i.retweets,
            "parsed = originals + retweets",
        );
        check(
            c.label.labeled_total() + c.label.ambiguous_excluded + c.label.unmatched
                == i.deduplicated,
            "labeled + ambiguous + unmatched = deduplicated",
        );
        check(
            c.label.negatives == c.label.included_positives,
            "negatives = included positives",
        );
        check(
            c.dataset_size == c.label.negatives + c.label.included_positives,
            "dataset = positives + negatives",
        );
        check(i.deduplicated >= c.dataset_size, "deduplicated >= dataset");
        check(
            c.train + c.validation == c.dataset_size,
            "train + validation = dataset",
        );
        bad
    }
}

/// Runs every stage and writes all artifacts plus `manifest.json`.
pub fn run_pipeline(config: &PipelineConfig) -> Result<Manifest, PipelineError> {
    config.validate()?;
    let ruleset = load_ruleset(config.ruleset.as_deref())?;
    ensure_dir(&config.out_dir)?;
    with_threads(config.threads, || run_stages(config, &ruleset))?
}

fn run_stages(config: &PipelineConfig, ruleset: &Ruleset) -> Result<Manifest, PipelineError> {
    let dir = &config.out_dir;
    let (docs, ingest) = stage_ingest(&config.inputs, config.lang.as_deref())?;
    let (dataset, label) = stage_label(
        docs,
        ruleset,
        &config.classes,
        config.policy,
        config.seeds.sampling,
    )?;
    write_dataset(dir, &dataset)?;

    let train_config = TrainConfig::from_pipeline(config);
    let trained = stage_train(&dataset, ruleset, &train_config)?;
    write_training_artifacts(dir, &trained)?;

    let mut models = Vec::new();
    for (model, summary) in &trained.models {
        let report = stage_eval(&dataset, &trained.split, &trained.tfidf, ruleset, model)?;
        let reports = write_reports(dir, &report)?;
        models.push(ModelEntry {
            kind: summary.kind,
            file: format!("model_{}.json", summary.kind),
            reports,
            weighted_f1: report.weighted_f1,
            accuracy: report.accuracy,
            training: summary.clone(),
        });
    }

    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        config: config.clone(),
        config_hash: config.config_hash(),
        seeds: config.seeds,
        ruleset_rules: ruleset.len(),
        tfidf_checksum: trained.tfidf.checksum(),
        counts: StageCounts {
            ingest,
            label,
            dataset: dataset.class_counts().clone(),
            dataset_size: dataset.len(),
            train: trained.split.train.len(),
            validation: trained.split.validation.len(),
            vocabulary: trained.tfidf.dim(),
        },
        models,
    };
    let violated = manifest.check_identities();
    if !violated.is_empty() {
        return Err(PipelineError::new(
            Stage::Report,
            ErrorKind::Data,
            format!("accounting identities violated: {}", violated.join("; ")),
        ));
    }
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&dir.join("manifest.json"), json.as_bytes())?;
    Ok(manifest)
}
