//! Local surrogate explanations.
//!
//! Around one instance x, perturbed samples replace each column with
//! probability 1/2 by a draw from the background's empirical marginal. Each
//! sample is weighted by exp(-d^2 / sigma^2), d the distance to x in
//! background-standardized units and sigma = 0.75 sqrt(columns). The K
//! columns most correlated (weighted, absolute) with the black-box score are
//! kept, and a lightly ridged weighted least-squares fit on the standardized
//! kept columns gives the contributions: score change per standard deviation
//! of the perturbation distribution.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::fmt::f64_str;
use crate::matrix::{solve_dense, Matrix};
use crate::mitigation::{PredictMode, RandomizedClassifier};
use crate::models::FittedModel;

/// Ridge damping relative to the total sample weight.
pub const RIDGE: f64 = 1e-3;

/// Anything that maps rows to scores.
pub trait Scorer: Sync {
    fn n_features(&self) -> usize;
    fn score(&self, x: &Matrix) -> Result<Vec<f64>>;
}

impl Scorer for FittedModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn score(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.predict_proba(x)
    }
}

impl Scorer for RandomizedClassifier {
    fn n_features(&self) -> usize {
        self.members[0].n_features
    }

    fn score(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.predict(x, PredictMode::ExpectedScore)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub k: usize,
    pub n_samples: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self { k: 10, n_samples: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub instance: usize,
    /// (column index, signed contribution), strongest first.
    pub contributions: Vec<(usize, f64)>,
    /// Weighted mean surrogate output (the value at the standardized origin).
    pub intercept: f64,
    /// Weighted R^2 of the surrogate over the perturbation samples.
    pub fidelity: f64,
}

struct Background {
    sorted: Vec<Vec<f64>>,
    scale: Vec<f64>,
}

impl Background {
    fn new(bg: &Matrix) -> Result<Self> {
        if bg.rows() == 0 {
            return Err(Error::EmptyDataset("background has no rows".into()));
        }
        let mut sorted = Vec::with_capacity(bg.cols());
        let mut scale = Vec::with_capacity(bg.cols());
        for j in 0..bg.cols() {
            let mut c = bg.column(j);
            c.sort_by(f64::total_cmp);
            let m = c.iter().sum::<f64>() / c.len() as f64;
            let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / c.len() as f64).sqrt();
            scale.push(if sd > 0.0 { sd } else { 1.0 });
            sorted.push(c);
        }
        Ok(Self { sorted, scale })
    }
}

fn weighted_mean(v: &[f64], w: &[f64], total: f64) -> f64 {
    v.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / total
}

pub fn explain_instance(
    scorer: &dyn Scorer,
    instance: usize,
    x: &[f64],
    background: &Matrix,
    cfg: &ExplainConfig,
    seed: u64,
) -> Result<Explanation> {
    let bg = Background::new(background)?;
    explain_with(scorer, instance, x, &bg, cfg, seed)
}

fn explain_with(
    scorer: &dyn Scorer,
    instance: usize,
    x: &[f64],
    bg: &Background,
    cfg: &ExplainConfig,
    seed: u64,
) -> Result<Explanation> {
    if cfg.k == 0 {
        return Err(Error::param("k", "must be at least 1"));
    }
    if cfg.n_samples < 50 {
        return Err(Error::param("n_samples", "must be at least 50"));
    }
    let d = scorer.n_features();
    check_len("instance", d, x.len())?;
    check_len("background columns", d, bg.sorted.len())?;
    let n = cfg.n_samples;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = Matrix::zeros(n, d);
    z.row_mut(0).copy_from_slice(x);
    for s in 1..n {
        let row = z.row_mut(s);
        for j in 0..d {
            row[j] = if rng.random_bool(0.5) {
                let col = &bg.sorted[j];
                col[rng.random_range(0..col.len())]
            } else {
                x[j]
            };
        }
    }
    let f = scorer.score(&z)?;
    let sigma2 = (0.75 * (d as f64).sqrt()).powi(2);
    let w: Vec<f64> = (0..n)
        .map(|s| {
            let d2: f64 = z
                .row(s)
                .iter()
                .zip(x)
                .zip(&bg.scale)
                .map(|((a, b), c)| ((a - b) / c).powi(2))
                .sum();
            (-d2 / sigma2).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    let k = cfg.k.min(d);

    let f_mean = weighted_mean(&f, &w, total);
    let f_var = f.iter().zip(&w).map(|(v, wi)| wi * (v - f_mean).powi(2)).sum::<f64>() / total;
    if f.iter().all(|&v| v == f[0]) || !(f_var > 0.0) {
        return Ok(Explanation {
            instance,
            contributions: (0..k).map(|j| (j, 0.0)).collect(),
            intercept: f_mean,
            fidelity: 0.0,
        });
    }

    // Standardize columns under the sample weights.
    let mut means = vec![0.0; d];
    let mut sds = vec![0.0; d];
    let mut corr = vec![0.0; d];
    for j in 0..d {
        let m = (0..n).map(|s| w[s] * z.get(s, j)).sum::<f64>() / total;
        let var = (0..n).map(|s| w[s] * (z.get(s, j) - m).powi(2)).sum::<f64>() / total;
        means[j] = m;
        sds[j] = var.sqrt();
        if var > 0.0 {
            let cov = (0..n).map(|s| w[s] * (z.get(s, j) - m) * (f[s] - f_mean)).sum::<f64>() / total;
            corr[j] = cov / (var * f_var).sqrt();
        }
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| corr[b].abs().total_cmp(&corr[a].abs()).then(a.cmp(&b)));
    let selected: Vec<usize> = order.into_iter().take(k).collect();

    let u = |s: usize, j: usize| {
        if sds[j] > 0.0 {
            (z.get(s, j) - means[j]) / sds[j]
        } else {
            0.0
        }
    };
    let mut a = vec![0.0; k * k];
    let mut b = vec![0.0; k];
    for s in 0..n {
        let us: Vec<f64> = selected.iter().map(|&j| u(s, j)).collect();
        let r = f[s] - f_mean;
        for p in 0..k {
            b[p] += w[s] * us[p] * r;
            for q in 0..k {
                a[p * k + q] += w[s] * us[p] * us[q];
            }
        }
    }
    for p in 0..k {
        a[p * k + p] += RIDGE * total;
    }
    let beta = solve_dense(a, b).ok_or_else(|| Error::param("surrogate", "singular normal equations"))?;

    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for s in 0..n {
        let pred = f_mean + selected.iter().zip(&beta).map(|(&j, bj)| bj * u(s, j)).sum::<f64>();
        ss_res += w[s] * (f[s] - pred).powi(2);
        ss_tot += w[s] * (f[s] - f_mean).powi(2);
    }
    let mut contributions: Vec<(usize, f64)> = selected.into_iter().zip(beta).collect();
    contributions.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
    Ok(Explanation {
        instance,
        contributions,
        intercept: f_mean,
        fidelity: 1.0 - ss_res / ss_tot,
    })
}

/// Explain rows `instances` of `x`; instance i uses seed `base_seed + i`.
pub fn explain_many(
    scorer: &dyn Scorer,
    x: &Matrix,
    instances: &[usize],
    background: &Matrix,
    cfg: &ExplainConfig,
    base_seed: u64,
) -> Result<Vec<Explanation>> {
    let bg = Background::new(background)?;
    instances
        .par_iter()
        .map(|&i| explain_with(scorer, i, x.row(i), &bg, cfg, base_seed.wrapping_add(i as u64)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Outcome {
    TP,
    TN,
    FP,
    FN,
}

impl Outcome {
    pub const ALL: [Outcome; 4] = [Outcome::TP, Outcome::TN, Outcome::FP, Outcome::FN];

    pub fn of(actual: bool, predicted: bool) -> Self {
        match (actual, predicted) {
            (true, true) => Self::TP,
            (false, false) => Self::TN,
            (false, true) => Self::FP,
            (true, false) => Self::FN,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::TP => "TP",
            Self::TN => "TN",
            Self::FP => "FP",
            Self::FN => "FN",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnImportance {
    pub column: usize,
    pub mean_contribution: f64,
    /// Share of the group's explanations that selected the column.
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceProfile {
    pub group: Outcome,
    pub n_instances: usize,
    /// Ordered by |mean contribution|, then column. Empty when the group is.
    pub columns: Vec<ColumnImportance>,
}

impl ImportanceProfile {
    pub fn is_empty(&self) -> bool {
        self.n_instances == 0
    }
}

/// Mean signed contribution per column within each outcome group, with
/// unselected columns counting as 0.
pub fn aggregate(explanations: &[Explanation], outcomes: &[Outcome]) -> Result<Vec<ImportanceProfile>> {
    check_len("outcomes", explanations.len(), outcomes.len())?;
    let mut out = Vec::new();
    for g in Outcome::ALL {
        let members: Vec<&Explanation> = explanations
            .iter()
            .zip(outcomes)
            .filter(|(_, o)| **o == g)
            .map(|(e, _)| e)
            .collect();
        let m = members.len();
        let mut acc: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
        for e in &members {
            for &(c, v) in &e.contributions {
                let entry = acc.entry(c).or_insert((0.0, 0));
                entry.0 += v;
                entry.1 += 1;
            }
        }
        let mut columns: Vec<ColumnImportance> = acc
            .into_iter()
            .map(|(column, (sum, count))| ColumnImportance {
                column,
                mean_contribution: sum / m as f64,
                frequency: count as f64 / m as f64,
            })
            .collect();
        columns.sort_by(|a, b| {
            b.mean_contribution
                .abs()
                .total_cmp(&a.mean_contribution.abs())
                .then(a.column.cmp(&b.column))
        });
        out.push(ImportanceProfile {
            group: g,
            n_instances: m,
            columns,
        });
    }
    Ok(out)
}

pub fn write_explanations_csv<W: Write>(explanations: &[Explanation], names: &[String], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["instance", "column", "contribution"])?;
    for e in explanations {
        for &(c, v) in &e.contributions {
            w.write_record([e.instance.to_string(), names[c].clone(), f64_str(v)])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Empty groups appear as a single row with an empty column name.
pub fn write_profiles_csv<W: Write>(profiles: &[ImportanceProfile], names: &[String], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["group", "column", "mean_contribution", "frequency"])?;
    for p in profiles {
        if p.is_empty() {
            w.write_record([p.group.label(), "", "", ""])?;
        }
        for c in &p.columns {
            w.write_record([
                p.group.label().to_string(),
                names[c.column].clone(),
                f64_str(c.mean_contribution),
                f64_str(c.frequency),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
