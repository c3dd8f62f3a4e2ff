//! Gradient boosting on log-loss with depth-limited regression trees.
//!
//! Trees are grown on the residuals y - p and their leaves take a Newton
//! step sum(w r) / sum(w p (1-p)). Each stage's contribution is halved until
//! the training loss does not increase; after ten halvings it is dropped.

use serde::{Deserialize, Serialize};

use super::logistic::{sigmoid, softplus};
use super::tree::{grow, GrowParams, Presorted, Targets, Tree};
use crate::matrix::Matrix;

pub const MAX_HALVINGS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostingParams {
    pub learning_rate: f64,
    pub max_depth: usize,
    pub n_estimators: usize,
}

impl Default for BoostingParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            max_depth: 3,
            n_estimators: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub tree: Tree,
    /// Effective step applied to the tree output; 0 when the guard rejected it.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostingModel {
    pub base_score: f64,
    pub stages: Vec<Stage>,
    /// Weighted mean training log-loss before the first stage and after each.
    pub train_loss: Vec<f64>,
}

fn mean_log_loss(f: &[f64], y: &[bool], w: &[f64], total_w: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..f.len() {
        if w[i] > 0.0 {
            s += w[i] * (softplus(f[i]) - if y[i] { f[i] } else { 0.0 });
        }
    }
    s / total_w
}

pub(crate) fn fit(x: &Matrix, y: &[bool], w: &[f64], p: &BoostingParams) -> BoostingModel {
    let n = x.rows();
    let total_w: f64 = w.iter().sum();
    let pos_w: f64 = (0..n).filter(|&i| y[i]).map(|i| w[i]).sum();
    let base_score = (pos_w / (total_w - pos_w)).ln();
    let pre = Presorted::new(x);
    let yf: Vec<f64> = y.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
    let mut f = vec![base_score; n];
    let mut loss = mean_log_loss(&f, y, w, total_w);
    let mut train_loss = vec![loss];
    let mut stages = Vec::with_capacity(p.n_estimators);
    let grow_params = GrowParams {
        max_depth: Some(p.max_depth),
        min_samples_split: 2,
        stop_when_pure: false,
    };
    let mut trial = vec![0.0; n];
    for _ in 0..p.n_estimators {
        let prob: Vec<f64> = f.iter().map(|&v| sigmoid(v)).collect();
        let r: Vec<f64> = yf.iter().zip(&prob).map(|(a, b)| a - b).collect();
        let h: Vec<f64> = prob.iter().map(|q| q * (1.0 - q)).collect();
        let tree = grow(x, &pre, &Targets { t: &r, h: &h, w }, &grow_params);
        let u: Vec<f64> = (0..n).map(|i| tree.predict_row(x.row(i))).collect();
        let mut scale = p.learning_rate;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            for i in 0..n {
                trial[i] = f[i] + scale * u[i];
            }
            let l = mean_log_loss(&trial, y, w, total_w);
            if l <= loss {
                loss = l;
                std::mem::swap(&mut f, &mut trial);
                accepted = true;
                break;
            }
            scale /= 2.0;
        }
        if !accepted {
            scale = 0.0;
        }
        train_loss.push(loss);
        stages.push(Stage { tree, scale });
    }
    BoostingModel {
        base_score,
        stages,
        train_loss,
    }
}

impl BoostingModel {
    pub(crate) fn score_row(&self, row: &[f64]) -> f64 {
        let f = self
            .stages
            .iter()
            .filter(|s| s.scale != 0.0)
            .fold(self.base_score, |acc, s| acc + s.scale * s.tree.predict_row(row));
        sigmoid(f)
    }
}
