//! Trainable classifiers behind one contract: `fit` with optional per-record
//! weights, `predict_proba` returning positive-class scores in [0, 1].
//!
//! Models persist as JSON:
//! `{"format": "fairtriage-model", "version": 1, "spec": {...},
//!   "n_features": d, "params": {"kind": ..., ...}}`
//! where `spec` is a [`ModelSpec`] and `params` the learned state.

pub mod boosting;
pub mod logistic;
pub mod naive_bayes;
pub mod tree;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use boosting::{BoostingModel, BoostingParams};
pub use logistic::{objective_and_gradient, LogisticModel, LogisticParams};
pub use naive_bayes::NaiveBayesModel;
pub use tree::{Node, Tree};

use crate::error::{check_len, Error, Result};
use crate::matrix::Matrix;
use crate::preprocess::DesignMatrix;

pub const MODEL_FORMAT: &str = "fairtriage-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeParams {
    /// `None` grows until leaves are pure.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_samples_split: 2,
        }
    }
}

/// Learner choice plus hyperparameters. All learners are deterministic, so
/// no seed is carried.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    LogisticRegression(LogisticParams),
    GradientBoosting(BoostingParams),
    DecisionTree(TreeParams),
    GaussianNb,
    Dummy,
}

impl ModelSpec {
    pub fn logistic() -> Self {
        Self::LogisticRegression(LogisticParams::default())
    }

    pub fn boosting() -> Self {
        Self::GradientBoosting(BoostingParams::default())
    }

    pub fn decision_tree() -> Self {
        Self::DecisionTree(TreeParams::default())
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::LogisticRegression(_) => "logistic_regression",
            Self::GradientBoosting(_) => "gradient_boosting",
            Self::DecisionTree(_) => "decision_tree",
            Self::GaussianNb => "gaussian_nb",
            Self::Dummy => "dummy",
        }
    }

    /// Short display name used in reports.
    pub fn short_name(&self) -> &'static str {
        match self {
            Self::LogisticRegression(_) => "LR",
            Self::GradientBoosting(_) => "GBC",
            Self::DecisionTree(_) => "DT",
            Self::GaussianNb => "NB",
            Self::Dummy => "Dummy",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::LogisticRegression(p) => {
                if !(p.c > 0.0 && p.c.is_finite()) {
                    return Err(Error::param("c", "must be a positive finite number"));
                }
                if !(p.tol > 0.0) {
                    return Err(Error::param("tol", "must be positive"));
                }
            }
            Self::GradientBoosting(p) => {
                if !(p.learning_rate > 0.0 && p.learning_rate.is_finite()) {
                    return Err(Error::param("learning_rate", "must be a positive finite number"));
                }
                if p.n_estimators == 0 {
                    return Err(Error::param("n_estimators", "must be at least 1"));
                }
                if p.max_depth == 0 {
                    return Err(Error::param("max_depth", "must be at least 1"));
                }
            }
            Self::DecisionTree(p) => {
                if p.max_depth == Some(0) {
                    return Err(Error::param("max_depth", "must be at least 1 or unlimited"));
                }
                if p.min_samples_split < 2 {
                    return Err(Error::param("min_samples_split", "must be at least 2"));
                }
            }
            Self::GaussianNb | Self::Dummy => {}
        }
        Ok(())
    }

    fn needs_both_classes(&self) -> bool {
        matches!(
            self,
            Self::LogisticRegression(_) | Self::GradientBoosting(_) | Self::GaussianNb
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    LogisticRegression(LogisticModel),
    GradientBoosting(BoostingModel),
    DecisionTree(Tree),
    GaussianNb(NaiveBayesModel),
    Dummy { prior: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub n_features: usize,
    pub params: ModelParams,
}

#[derive(Serialize)]
struct ModelFileRef<'a> {
    format: &'a str,
    version: u32,
    spec: &'a ModelSpec,
    n_features: usize,
    params: &'a ModelParams,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    spec: ModelSpec,
    n_features: usize,
    params: ModelParams,
}

/// Fit `spec` on `x`, `y` with optional nonnegative per-record weights.
pub fn fit(spec: &ModelSpec, x: &Matrix, y: &[bool], weights: Option<&[f64]>) -> Result<FittedModel> {
    spec.validate()?;
    let n = x.rows();
    if n == 0 {
        return Err(Error::EmptyDataset("no training records".into()));
    }
    check_len("labels", n, y.len())?;
    let owned;
    let w = match weights {
        Some(w) => {
            check_len("weights", n, w.len())?;
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::param("weights", "must be finite and nonnegative"));
            }
            if w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::param("weights", "must not all be zero"));
            }
            w
        }
        None => {
            owned = vec![1.0; n];
            &owned
        }
    };
    if let Some((row, col)) = x.find_non_finite() {
        return Err(Error::NonFinite { row, col });
    }
    let pos_w: f64 = (0..n).filter(|&i| y[i]).map(|i| w[i]).sum();
    let neg_w: f64 = (0..n).filter(|&i| !y[i]).map(|i| w[i]).sum();
    if spec.needs_both_classes() && (pos_w == 0.0 || neg_w == 0.0) {
        return Err(Error::SingleClass);
    }
    let params = match spec {
        ModelSpec::LogisticRegression(p) => ModelParams::LogisticRegression(logistic::fit(x, y, w, p)),
        ModelSpec::GradientBoosting(p) => ModelParams::GradientBoosting(boosting::fit(x, y, w, p)),
        ModelSpec::DecisionTree(p) => {
            let t: Vec<f64> = y.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
            let h = vec![1.0; n];
            ModelParams::DecisionTree(tree::grow(
                x,
                &tree::Presorted::new(x),
                &tree::Targets { t: &t, h: &h, w },
                &tree::GrowParams {
                    max_depth: p.max_depth,
                    min_samples_split: p.min_samples_split,
                    stop_when_pure: true,
                },
            ))
        }
        ModelSpec::GaussianNb => ModelParams::GaussianNb(naive_bayes::fit(x, y, w)),
        ModelSpec::Dummy => ModelParams::Dummy {
            prior: pos_w / (pos_w + neg_w),
        },
    };
    Ok(FittedModel {
        spec: *spec,
        n_features: x.cols(),
        params,
    })
}

pub fn fit_design(spec: &ModelSpec, data: &DesignMatrix, weights: Option<&[f64]>) -> Result<FittedModel> {
    fit(spec, &data.x, &data.y, weights)
}

impl FittedModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match &self.params {
            ModelParams::LogisticRegression(m) => m.score_row(row),
            ModelParams::GradientBoosting(m) => m.score_row(row),
            ModelParams::DecisionTree(t) => t.predict_row(row),
            ModelParams::GaussianNb(m) => m.score_row(row),
            ModelParams::Dummy { prior } => *prior,
        }
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>> {
        x.check_cols(self.n_features)?;
        Ok((0..x.rows()).map(|i| self.predict_row(x.row(i))).collect())
    }

    /// Per-stage training loss for boosting models.
    pub fn loss_trace(&self) -> Option<&[f64]> {
        match &self.params {
            ModelParams::GradientBoosting(m) => Some(&m.train_loss),
            _ => None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelFileRef {
            format: MODEL_FORMAT,
            version: MODEL_VERSION,
            spec: &self.spec,
            n_features: self.n_features,
            params: &self.params,
        })
        .expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: ModelFile = serde_json::from_str(s).map_err(|e| Error::parse("model", e.to_string()))?;
        if f.format != MODEL_FORMAT {
            return Err(Error::parse("model", format!("unexpected format `{}`", f.format)));
        }
        if f.version != MODEL_VERSION {
            return Err(Error::parse("model", format!("unsupported version {}", f.version)));
        }
        if f.spec.kind() != params_kind(&f.params) {
            return Err(Error::parse("model", "spec and params kinds differ"));
        }
        Ok(Self {
            spec: f.spec,
            n_features: f.n_features,
            params: f.params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

fn params_kind(p: &ModelParams) -> &'static str {
    match p {
        ModelParams::LogisticRegression(_) => "logistic_regression",
        ModelParams::GradientBoosting(_) => "gradient_boosting",
        ModelParams::DecisionTree(_) => "decision_tree",
        ModelParams::GaussianNb(_) => "gaussian_nb",
        ModelParams::Dummy { .. } => "dummy",
    }
}
