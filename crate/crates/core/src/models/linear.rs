//! Multinomial logistic regression and one-vs-rest squared-hinge linear SVM.
//!
//! Both minimize `sum of per-sample losses + ||W||^2 / (2 * strength)` with
//! [`gradient_descent`] from zero weights. Intercepts are not penalized.

use serde::{Deserialize, Serialize};

use super::optim::{gradient_descent, DescentOptions, Objective};
use super::{argmax, check_training_input, ClassIndex, ModelError};
use crate::features::SparseVector;
use crate::labeling::EpidemicClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearKind {
    Logistic,
    Svm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearHyperparams {
    /// Inverse regularization strength.
    pub strength: f64,
    pub max_iter: usize,
    pub tol: f64,
    /// Unused by the zero-initialized optimizer; kept for provenance.
    pub seed: u64,
}

impl Default for LinearHyperparams {
    fn default() -> Self {
        Self {
            strength: 1.0,
            max_iter: 1000,
            tol: 1e-4,
            seed: 0,
        }
    }
}

/// A trained linear classifier. `weights` is row-major C x V.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub kind: LinearKind,
    pub classes: Vec<EpidemicClass>,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub hyperparams: LinearHyperparams,
}

/// Optimizer trace, one entry per trained sub-problem (one for logistic
/// regression, one per class for the SVM).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace {
    pub losses: Vec<Vec<f64>>,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
}

impl LinearModel {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn weight_row(&self, class: usize) -> &[f64] {
        &self.weights[class * self.dim..(class + 1) * self.dim]
    }

    fn check_dim(&self, x: &SparseVector) -> Result<(), ModelError> {
        if x.dim != self.dim {
            return Err(ModelError::Shape {
                expected: self.dim,
                found: x.dim,
            });
        }
        Ok(())
    }

    pub fn scores(&self, x: &SparseVector) -> Result<Vec<f64>, ModelError> {
        self.check_dim(x)?;
        Ok((0..self.n_classes())
            .map(|k| self.bias[k] + x.dot(self.weight_row(k)))
            .collect())
    }

    /// Softmax class probabilities. Only meaningful for logistic models.
    pub fn predict_proba(&self, x: &SparseVector) -> Result<Vec<f64>, ModelError> {
        let mut s = self.scores(x)?;
        softmax_in_place(&mut s);
        Ok(s)
    }

    pub fn predict_one(&self, x: &SparseVector) -> Result<EpidemicClass, ModelError> {
        Ok(self.classes[argmax(&self.scores(x)?)])
    }
}

pub fn softmax_in_place(s: &mut [f64]) {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in s.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    s.iter_mut().for_each(|v| *v /= sum);
}

/// Multinomial cross-entropy objective. Parameters are laid out feature
/// major: `W[j * C + k]` for `j < V`, then the C intercepts.
pub struct LogisticObjective<'a> {
    x: &'a [SparseVector],
    y: &'a [usize],
    n_classes: usize,
    dim: usize,
    strength: f64,
}

impl<'a> LogisticObjective<'a> {
    /// `y` holds class indices below `n_classes`.
    pub fn new(
        x: &'a [SparseVector],
        y: &'a [usize],
        n_classes: usize,
        dim: usize,
        strength: f64,
    ) -> Self {
        Self {
            x,
            y,
            n_classes,
            dim,
            strength,
        }
    }

    fn scores_into(&self, p: &[f64], x: &SparseVector, out: &mut [f64]) {
        let c = self.n_classes;
        out.copy_from_slice(&p[self.dim * c..]);
        for (j, v) in x.iter() {
            let row = &p[j * c..(j + 1) * c];
            for (o, w) in out.iter_mut().zip(row) {
                *o += v * w;
            }
        }
    }

    fn penalty(&self, p: &[f64]) -> f64 {
        p[..self.dim * self.n_classes]
            .iter()
            .map(|w| w * w)
            .sum::<f64>()
            / (2.0 * self.strength)
    }
}

impl Objective for LogisticObjective<'_> {
    fn n_params(&self) -> usize {
        (self.dim + 1) * self.n_classes
    }

    fn value(&self, p: &[f64]) -> f64 {
        let mut s = vec![0.0; self.n_classes];
        let mut loss = 0.0;
        for (x, &y) in self.x.iter().zip(self.y) {
            self.scores_into(p, x, &mut s);
            let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + s.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - s[y];
        }
        loss + self.penalty(p)
    }

    fn value_grad(&self, p: &[f64], g: &mut [f64]) -> f64 {
        let c = self.n_classes;
        let wlen = self.dim * c;
        for (gi, w) in g[..wlen].iter_mut().zip(&p[..wlen]) {
            *gi = w / self.strength;
        }
        g[wlen..].iter_mut().for_each(|v| *v = 0.0);
        let mut s = vec![0.0; c];
        let mut loss = 0.0;
        for (x, &y) in self.x.iter().zip(self.y) {
            self.scores_into(p, x, &mut s);
            let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let shifted_y = s[y] - max;
            let mut sum = 0.0;
            for v in s.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            loss += sum.ln() - shifted_y;
            for v in s.iter_mut() {
                *v /= sum;
            }
            s[y] -= 1.0;
            for (j, v) in x.iter() {
                let row = &mut g[j * c..(j + 1) * c];
                for (gr, r) in row.iter_mut().zip(&s) {
                    *gr += v * r;
                }
            }
            for (gb, r) in g[wlen..].iter_mut().zip(&s) {
                *gb += r;
            }
        }
        loss + self.penalty(p)
    }
}

/// Binary squared-hinge objective for one one-vs-rest sub-problem.
/// Parameters: `V` weights then the intercept.
pub struct SquaredHingeObjective<'a> {
    x: &'a [SparseVector],
    /// +1.0 or -1.0 per sample.
    targets: Vec<f64>,
    dim: usize,
    strength: f64,
}

impl<'a> SquaredHingeObjective<'a> {
    pub fn new(x: &'a [SparseVector], targets: Vec<f64>, dim: usize, strength: f64) -> Self {
        Self {
            x,
            targets,
            dim,
            strength,
        }
    }

    pub fn margin(&self, p: &[f64], i: usize) -> f64 {
        self.targets[i] * (p[self.dim] + self.x[i].dot(&p[..self.dim]))
    }

    fn penalty(&self, p: &[f64]) -> f64 {
        p[..self.dim].iter().map(|w| w * w).sum::<f64>() / (2.0 * self.strength)
    }
}

impl Objective for SquaredHingeObjective<'_> {
    fn n_params(&self) -> usize {
        self.dim + 1
    }

    fn value(&self, p: &[f64]) -> f64 {
        let loss: f64 = (0..self.x.len())
            .map(|i| (1.0 - self.margin(p, i)).max(0.0).powi(2))
            .sum();
        loss + self.penalty(p)
    }

    fn value_grad(&self, p: &[f64], g: &mut [f64]) -> f64 {
        for (gi, w) in g[..self.dim].iter_mut().zip(&p[..self.dim]) {
            *gi = w / self.strength;
        }
        g[self.dim] = 0.0;
        let mut loss = 0.0;
        for (i, x) in self.x.iter().enumerate() {
            let slack = 1.0 - self.margin(p, i);
            if slack <= 0.0 {
                continue;
            }
            loss += slack * slack;
            let coef = -2.0 * slack * self.targets[i];
            for (j, v) in x.iter() {
                g[j] += coef * v;
            }
            g[self.dim] += coef;
        }
        loss + self.penalty(p)
    }
}

fn descent_options(hp: &LinearHyperparams) -> DescentOptions {
    DescentOptions {
        max_iter: hp.max_iter,
        tol: hp.tol,
    }
}

fn check_hyperparams(hp: &LinearHyperparams) -> Result<(), ModelError> {
    if !(hp.strength.is_finite() && hp.strength > 0.0) {
        return Err(ModelError::Hyperparams(format!(
            "strength must be positive, got {}",
            hp.strength
        )));
    }
    Ok(())
}

fn finite_or_diverged(params: &[f64], iteration: usize) -> Result<(), ModelError> {
    if params.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::Divergence { iteration })
    }
}

/// Trains multinomial logistic regression.
pub fn train_logistic(
    x: &[SparseVector],
    y: &[EpidemicClass],
    hp: &LinearHyperparams,
) -> Result<(LinearModel, TrainTrace), ModelError> {
    check_hyperparams(hp)?;
    let dim = check_training_input(x, y)?;
    let index = ClassIndex::from_labels(y)?;
    let yi = index.encode(y);
    let c = index.len();
    let obj = LogisticObjective::new(x, &yi, c, dim, hp.strength);
    let res = gradient_descent(&obj, vec![0.0; obj.n_params()], descent_options(hp))?;
    finite_or_diverged(&res.params, res.iterations)?;

    let mut weights = vec![0.0; c * dim];
    for j in 0..dim {
        for k in 0..c {
            weights[k * dim + j] = res.params[j * c + k];
        }
    }
    let model = LinearModel {
        kind: LinearKind::Logistic,
        classes: index.classes().to_vec(),
        dim,
        weights,
        bias: res.params[dim * c..].to_vec(),
        hyperparams: *hp,
    };
    let trace = TrainTrace {
        losses: vec![res.losses],
        iterations: vec![res.iterations],
        converged: vec![res.converged],
    };
    Ok((model, trace))
}

/// Trains a one-vs-rest linear SVM with squared hinge loss.
pub fn train_linear_svm(
    x: &[SparseVector],
    y: &[EpidemicClass],
    hp: &LinearHyperparams,
) -> Result<(LinearModel, TrainTrace), ModelError> {
    check_hyperparams(hp)?;
    let dim = check_training_input(x, y)?;
    let index = ClassIndex::from_labels(y)?;
    let yi = index.encode(y);
    let c = index.len();
    let mut weights = Vec::with_capacity(c * dim);
    let mut bias = Vec::with_capacity(c);
    let mut trace = TrainTrace::default();
    for k in 0..c {
        let targets = yi
            .iter()
            .map(|&v| if v == k { 1.0 } else { -1.0 })
            .collect();
        let obj = SquaredHingeObjective::new(x, targets, dim, hp.strength);
        let res = gradient_descent(&obj, vec![0.0; dim + 1], descent_options(hp))?;
        finite_or_diverged(&res.params, res.iterations)?;
        weights.extend_from_slice(&res.params[..dim]);
        bias.push(res.params[dim]);
        trace.losses.push(res.losses);
        trace.iterations.push(res.iterations);
        trace.converged.push(res.converged);
    }
    let model = LinearModel {
        kind: LinearKind::Svm,
        classes: index.classes().to_vec(),
        dim,
        weights,
        bias,
        hyperparams: *hp,
    };
    Ok((model, trace))
}
