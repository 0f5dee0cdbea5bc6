//! Confusion matrices, per-class precision/recall/F1, weighted F1 and accuracy.
//!
//! Undefined ratios (0/0) are reported as 0.0 and flagged in the report's
//! warnings.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::labeling::EpidemicClass;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("{truth} true labels but {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("no samples to evaluate")]
    Empty,
    #[error("label {0} is not in the class order")]
    UnknownLabel(EpidemicClass),
    #[error("unknown report format {0:?}")]
    UnknownFormat(String),
    #[error("class order lists {0} twice")]
    RepeatedClass(EpidemicClass),
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<EpidemicClass>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: Vec<EpidemicClass>) -> Result<Self, EvalError> {
        for (i, c) in classes.iter().enumerate() {
            if classes[..i].contains(c) {
                return Err(EvalError::RepeatedClass(*c));
            }
        }
        let n = classes.len();
        Ok(Self {
            classes,
            counts: vec![vec![0; n]; n],
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    /// Element-wise sum, for merging shard results.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.classes, other.classes, "class orders differ");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

pub fn confusion_matrix(
    truth: &[EpidemicClass],
    pred: &[EpidemicClass],
    classes: &[EpidemicClass],
) -> Result<ConfusionMatrix, EvalError> {
    if truth.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut cm = ConfusionMatrix::zeros(classes.to_vec())?;
    let pos = |c: &EpidemicClass| {
        classes
            .iter()
            .position(|x| x == c)
            .ok_or(EvalError::UnknownLabel(*c))
    };
    for (t, p) in truth.iter().zip(pred) {
        cm.counts[pos(t)?][pos(p)?] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: EpidemicClass,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

fn ratio_or_zero(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Harmonic mean of precision and recall; 0.0 when both are zero.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    ratio_or_zero(2.0 * precision * recall, precision + recall)
}

pub fn class_prf(cm: &ConfusionMatrix) -> Vec<ClassMetrics> {
    (0..cm.classes.len())
        .map(|i| {
            let tp = cm.counts[i][i] as f64;
            let precision = ratio_or_zero(tp, cm.col_sum(i) as f64);
            let recall = ratio_or_zero(tp, cm.row_sum(i) as f64);
            ClassMetrics {
                class: cm.classes[i],
                precision,
                recall,
                f1: f1_score(precision, recall),
                support: cm.row_sum(i),
            }
        })
        .collect()
}

/// Support-weighted mean of per-class F1.
pub fn weighted_f1(per_class: &[ClassMetrics]) -> Result<f64, EvalError> {
    let total: u64 = per_class.iter().map(|m| m.support).sum();
    if total == 0 {
        return Err(EvalError::Empty);
    }
    let weighted: f64 = per_class.iter().map(|m| m.support as f64 * m.f1).sum();
    Ok(weighted / total as f64)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::Empty);
    }
    Ok(cm.trace() as f64 / total as f64)
}

/// Each row divided by its sum; all-zero rows stay zero.
pub fn normalize_confusion(cm: &ConfusionMatrix) -> Vec<Vec<f64>> {
    cm.counts
        .iter()
        .map(|row| {
            let sum: u64 = row.iter().sum();
            row.iter()
                .map(|&c| ratio_or_zero(c as f64, sum as f64))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub per_class: Vec<ClassMetrics>,
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    /// Undefined-metric notices, e.g. a class that was never predicted.
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn from_confusion(model: &str, confusion: ConfusionMatrix) -> Result<Self, EvalError> {
        let per_class = class_prf(&confusion);
        let mut warnings = Vec::new();
        for (i, m) in per_class.iter().enumerate() {
            if confusion.col_sum(i) == 0 {
                warnings.push(format!(
                    "precision of {} is undefined (never predicted); reported as 0",
                    m.class
                ));
            }
            if confusion.row_sum(i) == 0 {
                warnings.push(format!(
                    "recall of {} is undefined (no true samples); reported as 0",
                    m.class
                ));
            }
        }
        Ok(Self {
            model: model.to_owned(),
            weighted_f1: weighted_f1(&per_class)?,
            accuracy: accuracy(&confusion)?,
            per_class,
            confusion,
            warnings,
        })
    }

    pub fn evaluate(
        model: &str,
        truth: &[EpidemicClass],
        pred: &[EpidemicClass],
        classes: &[EpidemicClass],
    ) -> Result<Self, EvalError> {
        Self::from_confusion(model, confusion_matrix(truth, pred, classes)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Tsv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tsv" => Ok(Self::Tsv),
            "json" => Ok(Self::Json),
            other => Err(EvalError::UnknownFormat(other.to_owned())),
        }
    }
}

/// TSV: one row per class plus a weighted row, 4 decimals. JSON: full precision.
pub fn render_report(report: &EvalReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("reports serialize");
            s.push('\n');
            s.into_bytes()
        }
        ReportFormat::Tsv => {
            let mut s = String::from("class\tprecision\trecall\tf1\tsupport\n");
            for m in &report.per_class {
                let _ = writeln!(
                    s,
                    "{}\t{:.4}\t{:.4}\t{:.4}\t{}",
                    m.class, m.precision, m.recall, m.f1, m.support
                );
            }
            let support: u64 = report.per_class.iter().map(|m| m.support).sum();
            let _ = writeln!(s, "weighted\t\t\t{:.4}\t{}", report.weighted_f1, support);
            s.into_bytes()
        }
    }
}

/// Parses a report from its string format name, for callers holding user input.
pub fn render_report_named(report: &EvalReport, format: &str) -> Result<Vec<u8>, EvalError> {
    Ok(render_report(report, format.parse()?))
}

/// Row-normalized confusion matrix as CSV with a header row of predicted classes.
pub fn render_confusion_csv(cm: &ConfusionMatrix) -> Vec<u8> {
    let mut s = String::from("true\\predicted");
    for c in &cm.classes {
        let _ = write!(s, ",{c}");
    }
    s.push('\n');
    for (c, row) in cm.classes.iter().zip(normalize_confusion(cm)) {
        s.push_str(c.name());
        for v in row {
            let _ = write!(s, ",{v:.6}");
        }
        s.push('\n');
    }
    s.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use EpidemicClass::{Cholera as A, Ebola as B, Mers as C};

    fn example() -> ConfusionMatrix {
        confusion_matrix(&[A, A, B], &[A, B, B], &[A, B]).unwrap()
    }

    #[test]
    fn confusion_examples() {
        assert_eq!(example().counts, vec![vec![1, 1], vec![0, 1]]);
        let perfect = confusion_matrix(&[A, B, B], &[A, B, B], &[A, B]).unwrap();
        assert_eq!(perfect.counts, vec![vec![1, 0], vec![0, 2]]);
        assert_eq!(
            confusion_matrix(&[A], &[A, B], &[A, B]),
            Err(EvalError::LengthMismatch { truth: 1, pred: 2 })
        );
        assert_eq!(
            confusion_matrix(&[A], &[C], &[A, B]),
            Err(EvalError::UnknownLabel(C))
        );
        assert_eq!(confusion_matrix(&[], &[], &[A, B]), Err(EvalError::Empty));
        assert_eq!(
            confusion_matrix(&[A], &[A], &[A, A]),
            Err(EvalError::RepeatedClass(A))
        );
    }

    #[test]
    fn prf_examples() {
        let m = class_prf(&example());
        assert_eq!((m[0].precision, m[0].recall), (1.0, 0.5));
        assert!((m[0].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m[0].support, 2);
        let round4 = |v: f64| (v * 1e4).round() / 1e4;
        assert_eq!(round4(f1_score(0.9914, 0.972)), 0.9816);
        assert_eq!(round4(f1_score(0.8852, 0.9879)), 0.9337);
        assert_eq!(f1_score(0.0, 0.0), 0.0);
    }

    #[test]
    fn weighted_and_accuracy() {
        let m = |support, f1| ClassMetrics {
            class: A,
            precision: 0.0,
            recall: 0.0,
            f1,
            support,
        };
        assert_eq!(weighted_f1(&[m(3, 0.5), m(1, 1.0)]).unwrap(), 0.625);
        assert!((weighted_f1(&[m(3, 0.7), m(9, 0.7)]).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(weighted_f1(&[m(4, 0.3)]).unwrap(), 0.3);
        assert_eq!(weighted_f1(&[m(0, 0.3)]), Err(EvalError::Empty));

        assert!((accuracy(&example()).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let wrong = confusion_matrix(&[A, B], &[B, A], &[A, B]).unwrap();
        assert_eq!(accuracy(&wrong).unwrap(), 0.0);
        assert_eq!(
            accuracy(&ConfusionMatrix::zeros(vec![A]).unwrap()),
            Err(EvalError::Empty)
        );
    }

    #[test]
    fn normalization() {
        assert_eq!(
            normalize_confusion(&example()),
            vec![vec![0.5, 0.5], vec![0.0, 1.0]]
        );
        let cm = confusion_matrix(&[A, A], &[A, A], &[A, B]).unwrap();
        assert_eq!(
            normalize_confusion(&cm),
            vec![vec![1.0, 0.0], vec![0.0, 0.0]]
        );
    }

    #[test]
    fn rendering() {
        let r = EvalReport::from_confusion("lr", example()).unwrap();
        let tsv = String::from_utf8(render_report(&r, ReportFormat::Tsv)).unwrap();
        let lines: Vec<_> = tsv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "cholera\t1.0000\t0.5000\t0.6667\t2");
        assert!(lines[3].starts_with("weighted\t\t\t"));

        let json = render_report(&r, ReportFormat::Json);
        let back: EvalReport = serde_json::from_slice(&json).unwrap();
        assert_eq!(back, r);

        assert_eq!(
            render_report_named(&r, "xml"),
            Err(EvalError::UnknownFormat("xml".into()))
        );
        let csv = String::from_utf8(render_confusion_csv(&r.confusion)).unwrap();
        assert_eq!(
            csv,
            "true\\predicted,cholera,ebola\ncholera,0.500000,0.500000\nebola,0.000000,1.000000\n"
        );
    }

    #[test]
    fn undefined_metrics_are_flagged() {
        let cm = confusion_matrix(&[A, A], &[A, A], &[A, B]).unwrap();
        let r = EvalReport::from_confusion("m", cm).unwrap();
        assert_eq!(r.warnings.len(), 2);
        assert_eq!(r.per_class[1].precision, 0.0);
    }

    fn pairs() -> impl Strategy<Value = Vec<(usize, usize)>> {
        prop::collection::vec((0usize..4, 0usize..4), 1..100)
    }

    proptest! {
        #[test]
        fn metrics_are_permutation_invariant(mut p in pairs(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let classes = [A, B, C, EpidemicClass::NonEpidemic];
            let eval = |p: &[(usize, usize)]| {
                let t: Vec<_> = p.iter().map(|&(t, _)| classes[t]).collect();
                let q: Vec<_> = p.iter().map(|&(_, q)| classes[q]).collect();
                EvalReport::evaluate("m", &t, &q, &classes).unwrap()
            };
            let before = eval(&p);
            p.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(before, eval(&p));
        }

        #[test]
        fn shard_merge_equals_whole(p in pairs(), cut in 0usize..100) {
            let classes = [A, B, C, EpidemicClass::NonEpidemic];
            let cut = cut.min(p.len());
            let cm_of = |p: &[(usize, usize)]| {
                let mut cm = ConfusionMatrix::zeros(classes.to_vec()).unwrap();
                for &(t, q) in p {
                    cm.counts[t][q] += 1;
                }
                cm
            };
            let mut left = cm_of(&p[..cut]);
            left.merge(&cm_of(&p[cut..]));
            prop_assert_eq!(left, cm_of(&p));
        }
    }
}
