//! L2-regularised logistic regression fitted with L-BFGS.
//!
//! Features are standardised with training statistics (constant features are
//! mapped to 0). The objective is the mean log-loss plus
//! `l2 / (2n) * |w|^2`; the intercept is not penalised.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

const HISTORY: usize = 10;
const ARMIJO: f64 = 1e-4;

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Regularised log-loss over a fixed (already standardised) design matrix.
/// Parameters are laid out as `[w_0, .., w_{d-1}, bias]`.
pub struct LogisticObjective {
    data: Vec<f64>,
    dim: usize,
    /// +1 for failed, -1 for completed.
    targets: Vec<f64>,
    l2: f64,
}

impl LogisticObjective {
    pub fn new(rows: &[Vec<f64>], failed: &[bool], l2: f64) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        LogisticObjective {
            data: rows.iter().flatten().copied().collect(),
            dim,
            targets: failed.iter().map(|&f| if f { 1.0 } else { -1.0 }).collect(),
            l2,
        }
    }

    pub fn n_params(&self) -> usize {
        self.dim + 1
    }

    fn n(&self) -> f64 {
        self.targets.len() as f64
    }

    fn margin(&self, i: usize, params: &[f64]) -> f64 {
        let row = &self.data[i * self.dim..(i + 1) * self.dim];
        dot(row, &params[..self.dim]) + params[self.dim]
    }

    pub fn value(&self, params: &[f64]) -> f64 {
        let loss: f64 = (0..self.targets.len())
            .map(|i| softplus(-self.targets[i] * self.margin(i, params)))
            .sum();
        let w = &params[..self.dim];
        loss / self.n() + self.l2 / (2.0 * self.n()) * dot(w, w)
    }

    pub fn gradient(&self, params: &[f64]) -> Vec<f64> {
        self.value_and_gradient(params).1
    }

    pub fn value_and_gradient(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let n = self.n();
        let mut grad = vec![0.0; self.dim + 1];
        let mut loss = 0.0;
        for i in 0..self.targets.len() {
            let y = self.targets[i];
            let m = y * self.margin(i, params);
            loss += softplus(-m);
            let coef = -y * sigmoid(-m);
            let row = &self.data[i * self.dim..(i + 1) * self.dim];
            for (g, x) in grad[..self.dim].iter_mut().zip(row) {
                *g += coef * x;
            }
            grad[self.dim] += coef;
        }
        let w = &params[..self.dim];
        for (g, wj) in grad[..self.dim].iter_mut().zip(w) {
            *g = *g / n + self.l2 / n * wj;
        }
        grad[self.dim] /= n;
        (loss / n + self.l2 / (2.0 * n) * dot(w, w), grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOutcome {
    pub iterations: usize,
    pub gradient_norm: f64,
}

/// Minimises the objective from the zero vector until the gradient norm is
/// below `tol`, `max_iter` iterations pass, or no descent step is found.
pub fn minimize(objective: &LogisticObjective, max_iter: usize, tol: f64) -> (Vec<f64>, LbfgsOutcome) {
    let mut x = vec![0.0; objective.n_params()];
    let (mut f, mut g) = objective.value_and_gradient(&x);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    while iterations < max_iter && norm(&g) >= tol {
        iterations += 1;
        // Two-loop recursion.
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &d);
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|di| *di *= gamma);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (a - b) * si);
        }
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            history.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }

        let mut step = if history.is_empty() {
            (1.0 / norm(&g)).min(1.0)
        } else {
            1.0
        };
        let accepted = loop {
            let candidate: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            let (fc, gc) = objective.value_and_gradient(&candidate);
            if fc <= f + ARMIJO * step * slope {
                break Some((candidate, fc, gc));
            }
            step *= 0.5;
            if step < 1e-20 {
                break None;
            }
        };
        let Some((xn, fn_, gn)) = accepted else {
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&y, &y).max(f64::MIN_POSITIVE) {
            if history.len() == HISTORY {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x = xn;
        f = fn_;
        g = gn;
    }
    let _ = f;
    let gradient_norm = norm(&g);
    (x, LbfgsOutcome { iterations, gradient_norm })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LogisticRegression {
    /// All training labels were identical.
    Constant { failed: bool },
    Linear {
        mean: Vec<f64>,
        /// `1 / std`, or 0 for constant features.
        scale: Vec<f64>,
        weights: Vec<f64>,
        bias: f64,
        iterations: usize,
        gradient_norm: f64,
    },
}

pub(crate) fn standardizer(rows: &[&[f64]], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in rows {
        mean.iter_mut().zip(r.iter()).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for r in rows {
        for j in 0..dim {
            let d = r[j] - mean[j];
            var[j] += d * d;
        }
    }
    let scale = var
        .iter()
        .map(|v| {
            let sd = (v / n).sqrt();
            if sd > 0.0 && sd.is_finite() {
                1.0 / sd
            } else {
                0.0
            }
        })
        .collect();
    (mean, scale)
}

fn standardize(x: &[f64], mean: &[f64], scale: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(mean)
        .zip(scale)
        .map(|((v, m), s)| (v - m) * s)
        .collect()
}

impl LogisticRegression {
    pub(crate) fn fit(rows: &[&[f64]], failed: &[bool], l2: f64, max_iter: usize, tol: f64) -> Self {
        if failed.iter().all(|&f| f == failed[0]) {
            return LogisticRegression::Constant { failed: failed[0] };
        }
        let dim = rows[0].len();
        let (mean, scale) = standardizer(rows, dim);
        let standardized: Vec<Vec<f64>> = rows.iter().map(|r| standardize(r, &mean, &scale)).collect();
        let objective = LogisticObjective::new(&standardized, failed, l2);
        let (params, outcome) = minimize(&objective, max_iter, tol);
        LogisticRegression::Linear {
            mean,
            scale,
            weights: params[..dim].to_vec(),
            bias: params[dim],
            iterations: outcome.iterations,
            gradient_norm: outcome.gradient_norm,
        }
    }

    /// Probability that `x` fails.
    pub fn score(&self, x: &[f64]) -> f64 {
        match self {
            LogisticRegression::Constant { failed } => f64::from(u8::from(*failed)),
            LogisticRegression::Linear {
                mean,
                scale,
                weights,
                bias,
                ..
            } => sigmoid(dot(&standardize(x, mean, scale), weights) + bias),
        }
    }

    pub fn predict_failed(&self, x: &[f64]) -> bool {
        self.score(x) > 0.5
    }

    pub fn gradient_norm(&self) -> Option<f64> {
        match self {
            LogisticRegression::Linear { gradient_norm, .. } => Some(*gradient_norm),
            LogisticRegression::Constant { .. } => None,
        }
    }
}
