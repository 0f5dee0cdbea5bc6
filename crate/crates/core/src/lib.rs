//! Weakly supervised classification of epidemic tweets.
//!
//! Raw line-delimited tweet JSON is cleaned ([`corpus`]), labeled by regular
//! expression rules into a balanced silver-standard dataset ([`labeling`]),
//! vectorized with TF-IDF ([`features`]), used to train classical models
//! ([`models`]), and scored ([`eval`]). [`pipeline`] composes the stages and
//! [`synth`] produces seeded synthetic corpora for testing.

pub mod corpus;
pub mod eval;
pub mod features;
pub mod labeling;
pub mod models;
pub mod pipeline;
pub mod synth;

pub use corpus::{normalize_text, IngestStats, NormalizedDocument, TweetRecord};
pub use eval::{ClassMetrics, ConfusionMatrix, EvalReport, ReportFormat};
pub use features::{SparseVector, TfIdfModel, TokenizerConfig};
pub use labeling::{
    EpidemicClass, LabelRule, LabeledExample, MultiMatchPolicy, Ruleset, SilverDataset,
};
pub use models::{DatasetSplit, LinearModel, TrainedModel, TreeModel};
pub use pipeline::{PipelineConfig, PipelineError};
pub use synth::SynthSpec;
