//! Stratified splitting and the three classical classifiers.

pub mod linear;
pub mod optim;
pub mod tree;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::SparseVector;
use crate::labeling::EpidemicClass;

pub use linear::{
    train_linear_svm, train_logistic, LinearHyperparams, LinearKind, LinearModel, TrainTrace,
};
pub use tree::{train_decision_tree, TreeHyperparams, TreeModel, TreeNode};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("stratification error: {0}")]
    Stratification(String),
    #[error("training data has fewer than two distinct classes")]
    DegenerateLabels,
    #[error("training data is empty")]
    Empty,
    #[error("{features} feature vectors but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("expected vectors of dimension {expected}, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("optimizer diverged at iteration {iteration}")]
    Divergence { iteration: usize },
    #[error("invalid hyperparameters: {0}")]
    Hyperparams(String),
    #[error("corrupt model: {0}")]
    Corrupt(String),
    #[error("unsupported model file version {0}")]
    Version(u32),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn argmax_counts(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate().skip(1) {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// Validates a training set and returns its feature dimension.
pub(crate) fn check_training_input(
    x: &[SparseVector],
    y: &[EpidemicClass],
) -> Result<usize, ModelError> {
    if x.len() != y.len() {
        return Err(ModelError::LengthMismatch {
            features: x.len(),
            labels: y.len(),
        });
    }
    let Some(first) = x.first() else {
        return Err(ModelError::Empty);
    };
    let dim = first.dim;
    if let Some(bad) = x.iter().find(|v| v.dim != dim) {
        return Err(ModelError::Shape {
            expected: dim,
            found: bad.dim,
        });
    }
    Ok(dim)
}

/// The sorted distinct classes of a label list, mapped to dense indices.
#[derive(Debug, Clone)]
pub(crate) struct ClassIndex {
    classes: Vec<EpidemicClass>,
}

impl ClassIndex {
    pub(crate) fn from_labels(y: &[EpidemicClass]) -> Result<Self, ModelError> {
        let mut classes = y.to_vec();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() < 2 {
            return Err(ModelError::DegenerateLabels);
        }
        Ok(Self { classes })
    }

    pub(crate) fn len(&self) -> usize {
        self.classes.len()
    }

    pub(crate) fn classes(&self) -> &[EpidemicClass] {
        &self.classes
    }

    pub(crate) fn encode(&self, y: &[EpidemicClass]) -> Vec<usize> {
        y.iter()
            .map(|c| {
                self.classes
                    .binary_search(c)
                    .expect("label is in the index")
            })
            .collect()
    }
}

/// Train/validation partition by sample index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub ratio: f64,
    pub seed: u64,
}

/// Per class: shuffle with `seed`, send the first `ceil(ratio * n_c)` to
/// train. Both index lists come back sorted.
pub fn stratified_split(
    labels: &[EpidemicClass],
    ratio: f64,
    seed: u64,
) -> Result<DatasetSplit, ModelError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(ModelError::Stratification(format!(
            "ratio {ratio} is not in (0, 1)"
        )));
    }
    let mut by_class: BTreeMap<EpidemicClass, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    if let Some((c, members)) = by_class.iter().find(|(_, m)| m.len() < 2) {
        return Err(ModelError::Stratification(format!(
            "class {c} has {} member(s); need at least 2",
            members.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(labels.len());
    let mut validation = Vec::new();
    for (_, mut members) in by_class {
        members.shuffle(&mut rng);
        // The epsilon keeps products like 0.7 * 10 = 7.000000000000001 from rounding up.
        let n_train = ((ratio * members.len() as f64) - 1e-9).ceil() as usize;
        let (t, v) = members.split_at(n_train.min(members.len()));
        train.extend_from_slice(t);
        validation.extend_from_slice(v);
    }
    train.sort_unstable();
    validation.sort_unstable();
    Ok(DatasetSplit {
        train,
        validation,
        ratio,
        seed,
    })
}

/// Any trained classifier.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Linear(LinearModel),
    Tree(TreeModel),
}

impl TrainedModel {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Linear(m) if m.kind == LinearKind::Logistic => "logistic",
            Self::Linear(_) => "svm",
            Self::Tree(_) => "tree",
        }
    }

    pub fn classes(&self) -> &[EpidemicClass] {
        match self {
            Self::Linear(m) => &m.classes,
            Self::Tree(m) => &m.classes,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Linear(m) => m.dim,
            Self::Tree(m) => m.dim,
        }
    }

    pub fn predict_one(&self, x: &SparseVector) -> Result<EpidemicClass, ModelError> {
        match self {
            Self::Linear(m) => m.predict_one(x),
            Self::Tree(m) => m.predict_one(x),
        }
    }

    pub fn predict(&self, x: &[SparseVector]) -> Result<Vec<EpidemicClass>, ModelError> {
        x.iter().map(|v| self.predict_one(v)).collect()
    }

    /// Serializes the versioned model file, recording the TF-IDF checksum the
    /// model was trained against.
    pub fn to_json(&self, tfidf_checksum: &str) -> Result<String, ModelError> {
        let body = match self {
            Self::Linear(m) => {
                let weights = (0..m.n_classes())
                    .map(|k| {
                        m.weight_row(k)
                            .iter()
                            .enumerate()
                            .filter(|(_, &w)| w != 0.0)
                            .map(|(j, &w)| (j, w))
                            .collect()
                    })
                    .collect();
                let linear = LinearBody {
                    classes: m.classes.clone(),
                    dim: m.dim,
                    hyperparams: m.hyperparams,
                    bias: m.bias.clone(),
                    weights,
                };
                match m.kind {
                    LinearKind::Logistic => ModelBody::Logistic(linear),
                    LinearKind::Svm => ModelBody::Svm(linear),
                }
            }
            Self::Tree(m) => ModelBody::Tree(TreeBody {
                classes: m.classes.clone(),
                dim: m.dim,
                hyperparams: m.hyperparams,
                nodes: m.nodes.clone(),
            }),
        };
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            tfidf_checksum: tfidf_checksum.to_owned(),
            model: body,
        };
        Ok(serde_json::to_string(&file)?)
    }

    /// Parses a model file, returning the model and its TF-IDF checksum.
    pub fn from_json(json: &str) -> Result<(TrainedModel, String), ModelError> {
        let file: ModelFile = serde_json::from_str(json)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelError::Version(file.format_version));
        }
        let model = match file.model {
            ModelBody::Logistic(b) => Self::Linear(b.into_model(LinearKind::Logistic)?),
            ModelBody::Svm(b) => Self::Linear(b.into_model(LinearKind::Svm)?),
            ModelBody::Tree(b) => {
                let m = TreeModel {
                    classes: b.classes,
                    dim: b.dim,
                    nodes: b.nodes,
                    hyperparams: b.hyperparams,
                };
                m.validate()?;
                Self::Tree(m)
            }
        };
        Ok((model, file.tfidf_checksum))
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    tfidf_checksum: String,
    model: ModelBody,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ModelBody {
    Logistic(LinearBody),
    Svm(LinearBody),
    Tree(TreeBody),
}

#[derive(Serialize, Deserialize)]
struct LinearBody {
    classes: Vec<EpidemicClass>,
    dim: usize,
    hyperparams: LinearHyperparams,
    bias: Vec<f64>,
    /// One sparse row per class: (feature, weight) pairs.
    weights: Vec<Vec<(usize, f64)>>,
}

impl LinearBody {
    fn into_model(self, kind: LinearKind) -> Result<LinearModel, ModelError> {
        let c = self.classes.len();
        if c < 2 || self.bias.len() != c || self.weights.len() != c {
            return Err(ModelError::Corrupt(
                "class, bias and weight counts disagree".into(),
            ));
        }
        let mut weights = vec![0.0; c * self.dim];
        for (k, row) in self.weights.iter().enumerate() {
            for &(j, w) in row {
                if j >= self.dim || !w.is_finite() {
                    return Err(ModelError::Corrupt(format!("bad weight entry ({j}, {w})")));
                }
                weights[k * self.dim + j] = w;
            }
        }
        Ok(LinearModel {
            kind,
            classes: self.classes,
            dim: self.dim,
            weights,
            bias: self.bias,
            hyperparams: self.hyperparams,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct TreeBody {
    classes: Vec<EpidemicClass>,
    dim: usize,
    hyperparams: TreeHyperparams,
    nodes: Vec<TreeNode>,
}
