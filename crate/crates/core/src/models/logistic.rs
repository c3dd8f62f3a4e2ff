//! L2-regularized logistic regression fit by full-batch limited-memory BFGS.
//!
//! Objective, normalized by total weight W:
//! f(beta, b) = (1/W) * [ sum_i w_i * logloss(y_i, x_i.beta + b) + |beta|^2 / (2C) ]
//! The intercept is not penalized.

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticParams {
    /// Inverse regularization strength.
    pub c: f64,
    pub max_iter: usize,
    /// Convergence tolerance on the gradient max-norm.
    pub tol: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            max_iter: 5000,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub coef: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(z)) without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Nonzero entries of the design, row by row. One-hot designs are mostly
/// zeros, so every pass over the data walks these instead of dense rows.
struct SparseRows {
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
    d: usize,
}

impl SparseRows {
    fn new(x: &Matrix) -> Self {
        let mut indptr = Vec::with_capacity(x.rows() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for i in 0..x.rows() {
            for (j, &v) in x.row(i).iter().enumerate() {
                if v != 0.0 {
                    indices.push(j as u32);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            indptr,
            indices,
            values,
            d: x.cols(),
        }
    }

    fn rows(&self) -> usize {
        self.indptr.len() - 1
    }
}

/// Objective value and gradient at `params` = (beta_1..beta_d, intercept).
/// The gradient has the same layout.
pub fn objective_and_gradient(x: &Matrix, y: &[bool], w: &[f64], c: f64, params: &[f64]) -> (f64, Vec<f64>) {
    let total_w: f64 = w.iter().sum();
    evaluate(&SparseRows::new(x), y, w, total_w, c, params)
}

fn evaluate(x: &SparseRows, y: &[bool], w: &[f64], total_w: f64, c: f64, params: &[f64]) -> (f64, Vec<f64>) {
    let d = x.d;
    let (beta, b) = params.split_at(d);
    let b = b[0];
    let mut loss = 0.0;
    let mut grad = vec![0.0; d + 1];
    for i in 0..x.rows() {
        if w[i] == 0.0 {
            continue;
        }
        let span = x.indptr[i]..x.indptr[i + 1];
        let (idx, val) = (&x.indices[span.clone()], &x.values[span]);
        let z = b + idx.iter().zip(val).map(|(&j, a)| a * beta[j as usize]).sum::<f64>();
        let yi = if y[i] { 1.0 } else { 0.0 };
        loss += w[i] * (softplus(z) - yi * z);
        let r = w[i] * (sigmoid(z) - yi);
        for (&j, a) in idx.iter().zip(val) {
            grad[j as usize] += r * a;
        }
        grad[d] += r;
    }
    let pen: f64 = beta.iter().map(|v| v * v).sum::<f64>() / (2.0 * c);
    for (g, v) in grad.iter_mut().zip(beta) {
        *g += v / c;
    }
    grad.iter_mut().for_each(|g| *g /= total_w);
    ((loss + pen) / total_w, grad)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, g| m.max(g.abs()))
}

/// Pairs of (step, gradient change) kept for the quasi-Newton direction.
const HISTORY: usize = 10;

/// Gradient descent along limited-memory BFGS directions with Armijo
/// backtracking. Falls back to the steepest-descent direction whenever the
/// quasi-Newton one is not a descent direction.
pub(crate) fn fit(x: &Matrix, y: &[bool], w: &[f64], p: &LogisticParams) -> LogisticModel {
    let d = x.cols();
    let sx = SparseRows::new(x);
    let total_w: f64 = w.iter().sum();
    let diag = inverse_curvature(&sx, w, total_w, p.c);
    let mut params = vec![0.0; d + 1];
    let (mut f, mut g) = evaluate(&sx, y, w, total_w, p.c, &params);
    let mut pairs: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = Default::default();
    let mut iterations = 0;
    let mut converged = max_abs(&g) < p.tol;
    while !converged && iterations < p.max_iter {
        iterations += 1;
        let mut dir = two_loop(&g, &pairs, &diag);
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            pairs.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&g, &dir);
        }
        if pairs.is_empty() {
            // Unit first step of length at most 1 in the max-norm.
            let scale = 1.0 / max_abs(&dir).max(1.0);
            dir.iter_mut().for_each(|v| *v *= scale);
            slope *= scale;
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = params.iter().zip(&dir).map(|(a, b)| a + alpha * b).collect();
            let (ft, gt) = evaluate(&sx, y, w, total_w, p.c, &trial);
            if ft <= f + 1e-4 * alpha * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            alpha *= 0.5;
        }
        let Some((next, fnext, gnext)) = accepted else {
            // No decrease representable in floating point.
            break;
        };
        let s: Vec<f64> = next.iter().zip(&params).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gnext.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&yv, &yv).sqrt() {
            if pairs.len() == HISTORY {
                pairs.pop_front();
            }
            pairs.push_back((s, yv, 1.0 / sy));
        }
        params = next;
        f = fnext;
        g = gnext;
        converged = max_abs(&g) < p.tol;
    }
    let intercept = params[d];
    params.truncate(d);
    LogisticModel {
        coef: params,
        intercept,
        iterations,
        converged,
    }
}

/// Inverse of a diagonal Hessian bound, sigma' <= 1/4, used as the
/// quasi-Newton starting matrix so rare indicator columns and wide count
/// columns take comparable steps.
fn inverse_curvature(x: &SparseRows, w: &[f64], total_w: f64, c: f64) -> Vec<f64> {
    let mut h = vec![1.0 / c; x.d + 1];
    h[x.d] = 0.0;
    for i in 0..x.rows() {
        let span = x.indptr[i]..x.indptr[i + 1];
        for (&j, a) in x.indices[span.clone()].iter().zip(&x.values[span]) {
            h[j as usize] += 0.25 * w[i] * a * a;
        }
        h[x.d] += 0.25 * w[i];
    }
    h.iter().map(|v| if *v > 0.0 { total_w / v } else { 1.0 }).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn two_loop(g: &[f64], pairs: &std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)>, diag: &[f64]) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if pairs.is_empty() {
        q.iter_mut().zip(diag).for_each(|(v, h)| *v *= h);
    } else if let Some((s, y, _)) = pairs.back() {
        let ydy: f64 = y.iter().zip(diag).map(|(a, h)| a * a * h).sum();
        let gamma = dot(s, y) / ydy;
        q.iter_mut().zip(diag).for_each(|(v, h)| *v *= gamma * h);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

impl LogisticModel {
    pub(crate) fn score_row(&self, row: &[f64]) -> f64 {
        sigmoid(self.intercept + row.iter().zip(&self.coef).map(|(a, b)| a * b).sum::<f64>())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(seed: u64, n: usize, d: usize) -> (Matrix, Vec<bool>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let w = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        (Matrix::from_vec(n, d, data).unwrap(), y, w)
    }

    /// Dense objective with the naive log(1 + e^z), independent of the
    /// sparse evaluator.
    fn objective(x: &Matrix, y: &[bool], w: &[f64], c: f64, params: &[f64]) -> f64 {
        let d = x.cols();
        let mut loss = 0.0;
        for i in 0..x.rows() {
            let z = params[d] + (0..d).map(|j| x.get(i, j) * params[j]).sum::<f64>();
            let p = 1.0 / (1.0 + (-z).exp());
            loss -= w[i] * if y[i] { p.ln() } else { (1.0 - p).ln() };
        }
        let pen = params[..d].iter().map(|v| v * v).sum::<f64>() / (2.0 * c);
        (loss + pen) / w.iter().sum::<f64>()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, y, w) = random_problem(3, 20, 5);
        let params = [0.3, -0.2, 0.5, 0.1, -0.4, 0.05];
        let (_, g) = objective_and_gradient(&x, &y, &w, 0.7, &params);
        let h = 1e-5;
        for j in 0..params.len() {
            let mut up = params;
            let mut dn = params;
            up[j] += h;
            dn[j] -= h;
            let fd = (objective(&x, &y, &w, 0.7, &up) - objective(&x, &y, &w, 0.7, &dn)) / (2.0 * h);
            assert!(
                (fd - g[j]).abs() <= 1e-5 * g[j].abs().max(1e-3),
                "coord {j}: {fd} vs {}",
                g[j]
            );
        }
    }

    #[test]
    fn converges_to_stationary_point() {
        let (x, y, w) = random_problem(5, 80, 4);
        let m = fit(&x, &y, &w, &LogisticParams::default());
        assert!(m.converged, "iterations {}", m.iterations);
        let mut params = m.coef.clone();
        params.push(m.intercept);
        let (_, g) = objective_and_gradient(&x, &y, &w, 1.0, &params);
        assert!(max_abs(&g) < 1e-6);
    }

    #[test]
    fn stable_extremes() {
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
    }
}
