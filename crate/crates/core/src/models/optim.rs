//! Deterministic full-batch gradient descent with Armijo backtracking.

use super::ModelError;

/// A differentiable objective over a flat parameter vector.
pub trait Objective {
    fn n_params(&self) -> usize;

    fn value(&self, params: &[f64]) -> f64;

    /// Writes the gradient into `grad` and returns the objective value.
    fn value_grad(&self, params: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentOptions {
    pub max_iter: usize,
    /// Stop once the Euclidean gradient norm drops to this.
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentResult {
    pub params: Vec<f64>,
    /// Objective value at the start and after every accepted step.
    pub losses: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-20;

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Minimizes `obj` from `x0`. Every accepted step satisfies the Armijo
/// condition, so the recorded losses never increase.
pub fn gradient_descent<O: Objective + ?Sized>(
    obj: &O,
    x0: Vec<f64>,
    opts: DescentOptions,
) -> Result<DescentResult, ModelError> {
    let n = obj.n_params();
    assert_eq!(x0.len(), n);
    let mut x = x0;
    let mut grad = vec![0.0; n];
    let mut f = obj.value_grad(&x, &mut grad);
    if !f.is_finite() {
        return Err(ModelError::Divergence { iteration: 0 });
    }
    let mut losses = vec![f];
    let mut cand = vec![0.0; n];
    let mut cand_grad = vec![0.0; n];
    let mut step = 1.0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        let g2 = norm_sq(&grad);
        if g2.sqrt() <= opts.tol {
            converged = true;
            break;
        }
        let accepted = loop {
            for ((c, xi), gi) in cand.iter_mut().zip(&x).zip(&grad) {
                *c = xi - step * gi;
            }
            let f_new = obj.value_grad(&cand, &mut cand_grad);
            if f_new.is_finite() && f_new <= f - ARMIJO * step * g2 {
                break Some(f_new);
            }
            step *= 0.5;
            if step < MIN_STEP {
                break None;
            }
        };
        let Some(f_new) = accepted else {
            // No decrease representable in f64: as good as it gets.
            converged = true;
            break;
        };
        std::mem::swap(&mut x, &mut cand);
        std::mem::swap(&mut grad, &mut cand_grad);
        f = f_new;
        losses.push(f);
        iterations += 1;
        step *= 2.0;
    }
    if !f.is_finite() {
        return Err(ModelError::Divergence {
            iteration: iterations,
        });
    }
    if !converged && norm_sq(&grad).sqrt() <= opts.tol {
        converged = true;
    }
    Ok(DescentResult {
        params: x,
        losses,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic {
        scale: Vec<f64>,
    }

    impl Objective for Quadratic {
        fn n_params(&self) -> usize {
            self.scale.len()
        }
        fn value(&self, p: &[f64]) -> f64 {
            p.iter()
                .zip(&self.scale)
                .map(|(x, s)| s * (x - 1.0).powi(2))
                .sum()
        }
        fn value_grad(&self, p: &[f64], g: &mut [f64]) -> f64 {
            for ((gi, x), s) in g.iter_mut().zip(p).zip(&self.scale) {
                *gi = 2.0 * s * (x - 1.0);
            }
            self.value(p)
        }
    }

    #[test]
    fn converges_on_quadratic() {
        let q = Quadratic {
            scale: vec![1.0, 10.0, 0.1],
        };
        let r = gradient_descent(
            &q,
            vec![0.0; 3],
            DescentOptions {
                max_iter: 5000,
                tol: 1e-8,
            },
        )
        .unwrap();
        assert!(r.converged);
        assert!(r.params.iter().all(|x| (x - 1.0).abs() < 1e-6));
        assert!(r.losses.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn zero_iterations_returns_start() {
        let q = Quadratic { scale: vec![1.0] };
        let r = gradient_descent(
            &q,
            vec![3.0],
            DescentOptions {
                max_iter: 0,
                tol: 0.0,
            },
        )
        .unwrap();
        assert_eq!(r.params, vec![3.0]);
        assert_eq!(r.losses, vec![4.0]);
        assert_eq!(r.iterations, 0);
    }

    struct Nan;
    impl Objective for Nan {
        fn n_params(&self) -> usize {
            1
        }
        fn value(&self, _: &[f64]) -> f64 {
            f64::NAN
        }
        fn value_grad(&self, _: &[f64], _: &mut [f64]) -> f64 {
            f64::NAN
        }
    }

    #[test]
    fn non_finite_start_is_divergence() {
        let err = gradient_descent(
            &Nan,
            vec![0.0],
            DescentOptions {
                max_iter: 10,
                tol: 0.0,
            },
        );
        assert!(matches!(err, Err(ModelError::Divergence { iteration: 0 })));
    }
}
