//! Gaussian naive Bayes with weighted moments.

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

/// Variance floor relative to the largest feature variance.
pub const VAR_SMOOTHING: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesModel {
    /// Index 0 is the negative class.
    pub log_priors: [f64; 2],
    pub means: [Vec<f64>; 2],
    pub variances: [Vec<f64>; 2],
}

pub(crate) fn fit(x: &Matrix, y: &[bool], w: &[f64]) -> NaiveBayesModel {
    let d = x.cols();
    let mut cw = [0.0; 2];
    let mut means = [vec![0.0; d], vec![0.0; d]];
    for i in 0..x.rows() {
        let c = usize::from(y[i]);
        cw[c] += w[i];
        for (m, v) in means[c].iter_mut().zip(x.row(i)) {
            *m += w[i] * v;
        }
    }
    for c in 0..2 {
        means[c].iter_mut().for_each(|m| *m /= cw[c]);
    }
    let total = cw[0] + cw[1];
    let mut variances = [vec![0.0; d], vec![0.0; d]];
    let mut overall_mean = vec![0.0; d];
    for j in 0..d {
        overall_mean[j] = (cw[0] * means[0][j] + cw[1] * means[1][j]) / total;
    }
    let mut overall_var = vec![0.0; d];
    for i in 0..x.rows() {
        let c = usize::from(y[i]);
        for (j, v) in x.row(i).iter().enumerate() {
            variances[c][j] += w[i] * (v - means[c][j]).powi(2);
            overall_var[j] += w[i] * (v - overall_mean[j]).powi(2);
        }
    }
    let max_var = overall_var.iter().map(|v| v / total).fold(0.0, f64::max);
    let eps = if max_var > 0.0 {
        VAR_SMOOTHING * max_var
    } else {
        VAR_SMOOTHING
    };
    for c in 0..2 {
        variances[c].iter_mut().for_each(|v| *v = *v / cw[c] + eps);
    }
    NaiveBayesModel {
        log_priors: [(cw[0] / total).ln(), (cw[1] / total).ln()],
        means,
        variances,
    }
}

impl NaiveBayesModel {
    fn joint_log_likelihood(&self, c: usize, row: &[f64]) -> f64 {
        let mut s = self.log_priors[c];
        for (j, v) in row.iter().enumerate() {
            let var = self.variances[c][j];
            s -= 0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (v - self.means[c][j]).powi(2) / var);
        }
        s
    }

    pub(crate) fn score_row(&self, row: &[f64]) -> f64 {
        let diff = self.joint_log_likelihood(1, row) - self.joint_log_likelihood(0, row);
        super::logistic::sigmoid(diff)
    }
}
