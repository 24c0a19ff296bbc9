//! L2-regularized logistic regression fit by damped Newton iterations.
//!
//! Minimizes `mean_i logloss(y_i, x_i.w + b) + l2 * |w|^2 / 2`; the
//! intercept is not penalized. Each step solves the Newton system by
//! Cholesky and backtracks until the Armijo condition holds, falling back
//! to a gradient step when the Newton direction does not descend, so the
//! loss sequence never increases.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{PaceError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRegOptions {
    /// Converged once the gradient max-norm drops below this.
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for LogRegOptions {
    fn default() -> Self {
        LogRegOptions {
            grad_tol: 1e-6,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub l2_strength: f64,
}

impl LogRegModel {
    pub fn decision(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        x.dot(&ArrayView1::from(self.weights.as_slice())) + self.intercept
    }

    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        self.decision(x).mapv(sigmoid)
    }
}

#[derive(Debug, Clone)]
pub struct LogRegFit {
    pub model: LogRegModel,
    /// Objective at the start and after every accepted step.
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Regularized mean log-loss at `(w, b)`.
pub fn loss(x: ArrayView2<'_, f64>, y: &[bool], w: ArrayView1<'_, f64>, b: f64, l2: f64) -> f64 {
    let z = x.dot(&w) + b;
    let data: f64 = z
        .iter()
        .zip(y)
        .map(|(&z, &yi)| softplus(z) - if yi { z } else { 0.0 })
        .sum();
    data / y.len() as f64 + 0.5 * l2 * w.dot(&w)
}

/// Gradient of [`loss`]: `(d/dw, d/db)`.
pub fn gradient(x: ArrayView2<'_, f64>, y: &[bool], w: ArrayView1<'_, f64>, b: f64, l2: f64) -> (Array1<f64>, f64) {
    let n = y.len() as f64;
    let z = x.dot(&w) + b;
    let resid: Array1<f64> = z
        .iter()
        .zip(y)
        .map(|(&z, &yi)| sigmoid(z) - if yi { 1.0 } else { 0.0 })
        .collect();
    let gw = x.t().dot(&resid) / n + l2 * &w;
    (gw, resid.sum() / n)
}

/// Cholesky solve of the symmetric positive definite system `a x = rhs`.
fn cholesky_solve(a: &Array2<f64>, rhs: &Array1<f64>) -> Option<Array1<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[[i, i]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    let mut z = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut s = rhs[i];
        for k in 0..i {
            s -= l[[i, k]] * z[k];
        }
        z[i] = s / l[[i, i]];
    }
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in i + 1..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    Some(x)
}

/// Newton direction over `(w, b)`, the intercept stored last.
fn newton_direction(x: ArrayView2<'_, f64>, w: ArrayView1<'_, f64>, b: f64, l2: f64, grad: &Array1<f64>) -> Option<Array1<f64>> {
    let (n, p) = x.dim();
    let z = x.dot(&w) + b;
    let weights: Array1<f64> = z.mapv(|z| {
        let s = sigmoid(z);
        s * (1.0 - s)
    });
    let mut h = Array2::<f64>::zeros((p + 1, p + 1));
    for i in 0..n {
        let wi = weights[i];
        if wi == 0.0 {
            continue;
        }
        let row = x.row(i);
        for a in 0..p {
            let xa = wi * row[a];
            for c in 0..=a {
                h[[a, c]] += xa * row[c];
            }
            h[[p, a]] += xa;
        }
        h[[p, p]] += wi;
    }
    let inv_n = 1.0 / n as f64;
    for a in 0..=p {
        for c in 0..=a {
            h[[a, c]] *= inv_n;
            h[[c, a]] = h[[a, c]];
        }
    }
    for a in 0..p {
        h[[a, a]] += l2;
    }
    let neg = grad.mapv(|g| -g);
    if let Some(d) = cholesky_solve(&h, &neg) {
        return Some(d);
    }
    let jitter = 1e-10 * (1.0 + h.diag().iter().fold(0.0f64, |m, v| m.max(*v)));
    for a in 0..=p {
        h[[a, a]] += jitter;
    }
    cholesky_solve(&h, &neg)
}

fn check_inputs(x: ArrayView2<'_, f64>, y: &[bool], l2: f64) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(PaceError::Shape(format!("{} rows for {} labels", x.nrows(), y.len())));
    }
    if !(l2 >= 0.0 && l2.is_finite()) {
        return Err(PaceError::Config(format!("l2 strength {l2} must be finite and >= 0")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(PaceError::NonFinite("features".into()));
    }
    let pos = y.iter().filter(|&&v| v).count();
    if pos == 0 || pos == y.len() {
        return Err(PaceError::SingleClass(format!(
            "logistic regression needs both classes, got {pos} positives of {}",
            y.len()
        )));
    }
    Ok(())
}

pub fn train_logreg(x: ArrayView2<'_, f64>, y: &[bool], l2: f64, opts: &LogRegOptions) -> Result<LogRegFit> {
    check_inputs(x, y, l2)?;
    let p = x.ncols();
    let mut w = Array1::<f64>::zeros(p);
    let base = y.iter().filter(|&&v| v).count() as f64 / y.len() as f64;
    let mut b = (base / (1.0 - base)).ln();
    let mut current = loss(x, y, w.view(), b, l2);
    let mut trace = vec![current];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        let (gw, gb) = gradient(x, y, w.view(), b, l2);
        let gmax = gw.iter().fold(gb.abs(), |m, g| m.max(g.abs()));
        if gmax < opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut grad = Array1::zeros(p + 1);
        grad.slice_mut(ndarray::s![..p]).assign(&gw);
        grad[p] = gb;

        let newton = newton_direction(x, w.view(), b, l2, &grad).filter(|d| d.dot(&grad) < 0.0);
        let mut accepted = false;
        for dir in newton.into_iter().chain(std::iter::once(-&grad)) {
            let slope = dir.dot(&grad);
            let mut t = 1.0;
            for _ in 0..60 {
                let w_new = &w + &(t * &dir.slice(ndarray::s![..p]));
                let b_new = b + t * dir[p];
                let l_new = loss(x, y, w_new.view(), b_new, l2);
                if l_new <= current + 1e-4 * t * slope {
                    w = w_new;
                    b = b_new;
                    current = l_new;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if accepted {
                break;
            }
        }
        if !accepted {
            // No representable descent left: the optimum is reached to
            // machine precision.
            break;
        }
        trace.push(current);
    }
    Ok(LogRegFit {
        model: LogRegModel {
            weights: w.to_vec(),
            intercept: b,
            l2_strength: l2,
        },
        loss_trace: trace,
        iterations,
        converged,
    })
}
