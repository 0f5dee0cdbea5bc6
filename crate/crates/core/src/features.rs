//! Tokenization and TF-IDF vectors.
//!
//! Weights follow the smoothed form `idf = ln((1 + N) / (1 + df)) + 1` and
//! every document vector is scaled to unit Euclidean length. The vocabulary
//! is sorted, so a fit does not depend on document order.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("no usable tokens in {0} documents")]
    Empty(usize),
    #[error("unsupported TF-IDF model version {0}")]
    Version(u32),
    #[error("corrupt TF-IDF model: {0}")]
    Corrupt(String),
    #[error("idf checksum mismatch: stored {stored}, recomputed {computed}")]
    Checksum { stored: String, computed: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    /// Minimum token length in characters.
    pub min_len: usize,
    /// Set when rule keywords were masked out of the text before fitting.
    /// Recorded for provenance; masking itself happens upstream.
    #[serde(default)]
    pub mask_keywords: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            lowercase: true,
            min_len: 2,
            mask_keywords: false,
        }
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Maximal runs of word characters at least `min_len` long, in order.
pub fn tokenize(text: &str, config: &TokenizerConfig) -> Vec<String> {
    let lowered;
    let text = if config.lowercase {
        lowered = text.to_lowercase();
        &lowered
    } else {
        text
    };
    text.split(|c: char| !is_word_char(c))
        .filter(|t| !t.is_empty() && t.chars().count() >= config.min_len)
        .map(str::to_owned)
        .collect()
}

/// Sparse row with strictly increasing indices and no stored zeros.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseVector {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub dim: usize,
}

impl SparseVector {
    pub fn new(dim: usize) -> Self {
        Self {
            indices: Vec::new(),
            values: Vec::new(),
            dim,
        }
    }

    /// Builds a vector from unsorted (index, value) pairs, summing repeats
    /// and dropping zeros.
    pub fn from_pairs(dim: usize, pairs: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for (i, v) in pairs {
            assert!(i < dim, "index {i} out of range for dimension {dim}");
            *acc.entry(i).or_default() += v;
        }
        let (indices, values) = acc.into_iter().filter(|&(_, v)| v != 0.0).unzip();
        Self {
            indices,
            values,
            dim,
        }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .copied()
            .zip(self.values.iter().copied())
    }

    pub fn get(&self, index: usize) -> f64 {
        match self.indices.binary_search(&index) {
            Ok(pos) => self.values[pos],
            Err(_) => 0.0,
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Dot product with a dense slice of length `dim`.
    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(i, v)| v * dense[i]).sum()
    }
}

/// A fitted vocabulary with document frequencies and idf weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TfIdfModel {
    config: TokenizerConfig,
    n_docs: usize,
    terms: Vec<String>,
    df: Vec<usize>,
    idf: Vec<f64>,
    vocabulary: HashMap<String, usize>,
}

pub fn smoothed_idf(n_docs: usize, df: usize) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}

/// Mergeable document-frequency counts; fit shards independently and add.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DocFrequencies {
    pub n_docs: usize,
    pub df: BTreeMap<String, usize>,
}

impl DocFrequencies {
    pub fn add_document(&mut self, text: &str, config: &TokenizerConfig) {
        let mut tokens = tokenize(text, config);
        tokens.sort_unstable();
        tokens.dedup();
        for t in tokens {
            *self.df.entry(t).or_default() += 1;
        }
        self.n_docs += 1;
    }

    pub fn merge(&mut self, other: DocFrequencies) {
        self.n_docs += other.n_docs;
        for (t, c) in other.df {
            *self.df.entry(t).or_default() += c;
        }
    }
}

/// Fits vocabulary and idf weights on `docs`.
pub fn fit_tfidf<I, S>(docs: I, config: &TokenizerConfig) -> Result<TfIdfModel, FeatureError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts = DocFrequencies::default();
    for d in docs {
        counts.add_document(d.as_ref(), config);
    }
    TfIdfModel::from_frequencies(counts, config.clone())
}

impl TfIdfModel {
    pub fn from_frequencies(
        counts: DocFrequencies,
        config: TokenizerConfig,
    ) -> Result<TfIdfModel, FeatureError> {
        if counts.df.is_empty() {
            return Err(FeatureError::Empty(counts.n_docs));
        }
        let n_docs = counts.n_docs;
        let (terms, df): (Vec<String>, Vec<usize>) = counts.df.into_iter().unzip();
        Ok(Self::assemble(config, n_docs, terms, df))
    }

    fn assemble(
        config: TokenizerConfig,
        n_docs: usize,
        terms: Vec<String>,
        df: Vec<usize>,
    ) -> Self {
        let idf = df.iter().map(|&d| smoothed_idf(n_docs, d)).collect();
        let vocabulary = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            config,
            n_docs,
            terms,
            df,
            idf,
            vocabulary,
        }
    }

    pub fn config(&self) -> &TokenizerConfig {
        &self.config
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    /// Vocabulary size.
    pub fn dim(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.vocabulary.get(token).copied()
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn df(&self) -> &[usize] {
        &self.df
    }

    pub fn idf_of(&self, token: &str) -> Option<f64> {
        self.index_of(token).map(|i| self.idf[i])
    }

    /// Raw term counts times idf, before normalization.
    pub fn weigh(&self, text: &str) -> SparseVector {
        let pairs = tokenize(text, &self.config)
            .into_iter()
            .filter_map(|t| self.index_of(&t))
            .map(|i| (i, self.idf[i]));
        SparseVector::from_pairs(self.dim(), pairs)
    }

    /// L2-normalized TF-IDF vector; out-of-vocabulary tokens are ignored.
    pub fn transform(&self, text: &str) -> SparseVector {
        let mut v = self.weigh(text);
        let norm = v.norm();
        if norm > 0.0 {
            v.values.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }

    pub fn transform_all<S: AsRef<str>>(&self, texts: &[S]) -> Vec<SparseVector> {
        texts.iter().map(|t| self.transform(t.as_ref())).collect()
    }

    /// SHA-256 of the little-endian idf array, hex encoded.
    pub fn checksum(&self) -> String {
        idf_checksum(&self.idf)
    }

    pub fn to_json(&self) -> Result<String, FeatureError> {
        let file = TfIdfFile {
            format_version: MODEL_FORMAT_VERSION,
            config: self.config.clone(),
            n_docs: self.n_docs,
            terms: self
                .terms
                .iter()
                .zip(&self.df)
                .enumerate()
                .map(|(index, (token, &df))| TermEntry {
                    token: token.clone(),
                    index,
                    df,
                })
                .collect(),
            idf_checksum: self.checksum(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Loads a persisted model, recomputing idf and verifying its checksum.
    pub fn from_json(json: &str) -> Result<TfIdfModel, FeatureError> {
        let file: TfIdfFile = serde_json::from_str(json)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(FeatureError::Version(file.format_version));
        }
        let v = file.terms.len();
        let mut slots: Vec<Option<(String, usize)>> = vec![None; v];
        for e in file.terms {
            if e.index >= v || slots[e.index].is_some() {
                return Err(FeatureError::Corrupt(format!(
                    "bad index {} for {:?}",
                    e.index, e.token
                )));
            }
            if e.df == 0 || e.df > file.n_docs {
                return Err(FeatureError::Corrupt(format!(
                    "df {} out of range for {:?}",
                    e.df, e.token
                )));
            }
            slots[e.index] = Some((e.token, e.df));
        }
        let (terms, df): (Vec<String>, Vec<usize>) = slots.into_iter().flatten().unzip();
        if terms.windows(2).any(|w| w[0] >= w[1]) {
            return Err(FeatureError::Corrupt("vocabulary is not sorted".into()));
        }
        let model = Self::assemble(file.config, file.n_docs, terms, df);
        let computed = model.checksum();
        if computed != file.idf_checksum {
            return Err(FeatureError::Checksum {
                stored: file.idf_checksum,
                computed,
            });
        }
        Ok(model)
    }
}

pub fn idf_checksum(idf: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in idf {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Serialize, Deserialize)]
struct TermEntry {
    token: String,
    index: usize,
    df: usize,
}

#[derive(Serialize, Deserialize)]
struct TfIdfFile {
    format_version: u32,
    config: TokenizerConfig,
    n_docs: usize,
    terms: Vec<TermEntry>,
    idf_checksum: String,
}
