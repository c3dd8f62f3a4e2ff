//! Bias mitigation for FNR parity on one sensitive feature: per-group
//! decision thresholds (post-processing) and the exponentiated-gradient
//! reduction to cost-sensitive classification (reductions).

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::fmt::{f64_str, opt_f64_str};
use crate::matrix::Matrix;
use crate::models::{fit, FittedModel, ModelSpec};
use crate::preprocess::{DesignMatrix, GroupColumn};

/// Slack under which two FNR gaps count as equal.
const GAP_TIE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupThresholds {
    pub feature: String,
    /// (category, threshold) in category order.
    pub thresholds: Vec<(String, f64)>,
    pub target_rate: f64,
    pub achieved_gap: f64,
    pub grid_step: f64,
}

impl GroupThresholds {
    pub fn threshold_for(&self, category: &str) -> Option<f64> {
        self.thresholds.iter().find(|(c, _)| c == category).map(|(_, t)| *t)
    }
}

/// Threshold grid over [0, 1]. When 1/step is an integer m the grid is i/m,
/// which avoids drift from repeated addition.
pub fn threshold_grid(step: f64) -> Vec<f64> {
    let inv = 1.0 / step;
    let m = inv.round();
    if (inv - m).abs() < 1e-9 {
        let m = m as usize;
        (0..=m).map(|i| i as f64 / m as f64).collect()
    } else {
        (0..).map(|i| i as f64 * step).take_while(|&t| t <= 1.0).collect()
    }
}

struct CategoryTable {
    code: usize,
    positives: usize,
    /// False negatives and false positives at each grid threshold.
    fns: Vec<usize>,
    fps: Vec<usize>,
}

impl CategoryTable {
    fn fnr(&self, t: usize) -> f64 {
        self.fns[t] as f64 / self.positives as f64
    }
}

fn category_tables(scores: &[f64], y: &[bool], groups: &GroupColumn, grid: &[f64]) -> Result<Vec<CategoryTable>> {
    let mut tables = Vec::new();
    for (code, name) in groups.categories.iter().enumerate() {
        let idx: Vec<usize> = (0..y.len()).filter(|&i| groups.codes[i] as usize == code).collect();
        if idx.is_empty() {
            continue;
        }
        let positives = idx.iter().filter(|&&i| y[i]).count();
        if positives == 0 {
            return Err(Error::NoPositives {
                feature: groups.name.clone(),
                category: name.clone(),
            });
        }
        let fns = grid
            .iter()
            .map(|&t| idx.iter().filter(|&&i| y[i] && scores[i] < t).count())
            .collect();
        let fps = grid
            .iter()
            .map(|&t| idx.iter().filter(|&&i| !y[i] && scores[i] >= t).count())
            .collect();
        tables.push(CategoryTable {
            code,
            positives,
            fns,
            fps,
        });
    }
    Ok(tables)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessConfig {
    pub grid_step: f64,
    /// FNR gaps up to this size count as parity when ranking by error.
    pub gap_tolerance: f64,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            grid_step: 0.01,
            gap_tolerance: 0.02,
        }
    }
}

/// Choose one grid threshold per category so the categories' FNRs sit
/// together at the lowest overall error.
///
/// Every FNR value reachable by some category on the grid is tried as a
/// common target; each category takes its threshold with FNR closest to the
/// target (ties to the lower threshold). Among targets whose max pairwise
/// FNR gap is within `gap_tolerance` the lowest overall error wins. If none
/// is, the smallest gap wins, then the lowest error.
pub fn fit_threshold_optimizer(
    scores: &[f64],
    y: &[bool],
    groups: &GroupColumn,
    cfg: &PostprocessConfig,
) -> Result<GroupThresholds> {
    let grid_step = cfg.grid_step;
    if !(grid_step > 0.0 && grid_step <= 0.5) {
        return Err(Error::param("grid_step", "must lie in (0, 0.5]"));
    }
    if !(cfg.gap_tolerance >= 0.0) {
        return Err(Error::param("gap_tolerance", "must be nonnegative"));
    }
    check_len("labels", scores.len(), y.len())?;
    check_len("group labels", scores.len(), groups.len())?;
    let grid = threshold_grid(grid_step);
    let tables = category_tables(scores, y, groups, &grid)?;
    if tables.is_empty() {
        return Err(Error::EmptyDataset("no records to fit thresholds on".into()));
    }
    let mut targets: Vec<f64> = tables
        .iter()
        .flat_map(|c| (0..grid.len()).map(move |t| c.fnr(t)))
        .collect();
    targets.sort_by(f64::total_cmp);
    targets.dedup();

    let n = y.len() as f64;
    let mut best: Option<(f64, f64, f64, Vec<usize>)> = None;
    for &target in &targets {
        let choice: Vec<usize> = tables
            .iter()
            .map(|c| {
                let mut bt = 0;
                for t in 1..grid.len() {
                    if (c.fnr(t) - target).abs() < (c.fnr(bt) - target).abs() {
                        bt = t;
                    }
                }
                bt
            })
            .collect();
        let rates: Vec<f64> = tables.iter().zip(&choice).map(|(c, &t)| c.fnr(t)).collect();
        let gap = rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - rates.iter().cloned().fold(f64::INFINITY, f64::min);
        let errors: usize = tables.iter().zip(&choice).map(|(c, &t)| c.fns[t] + c.fps[t]).sum();
        let err = errors as f64 / n;
        // Gaps inside the tolerance all rank as zero.
        let key = if gap <= cfg.gap_tolerance + GAP_TIE { 0.0 } else { gap };
        let better = match &best {
            None => true,
            Some((bg, be, _, _)) => key < bg - GAP_TIE || ((key - bg).abs() <= GAP_TIE && err < *be),
        };
        if better {
            best = Some((key, err, target, choice));
        }
    }
    let (_, _, target, choice) = best.expect("at least one target");
    let chosen: Vec<f64> = tables.iter().zip(&choice).map(|(c, &t)| c.fnr(t)).collect();
    let gap =
        chosen.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - chosen.iter().cloned().fold(f64::INFINITY, f64::min);
    let thresholds = groups
        .categories
        .iter()
        .enumerate()
        .filter_map(|(code, name)| {
            tables
                .iter()
                .position(|c| c.code == code)
                .map(|k| (name.clone(), grid[choice[k]]))
        })
        .collect();
    Ok(GroupThresholds {
        feature: groups.name.clone(),
        thresholds,
        target_rate: target,
        achieved_gap: gap,
        grid_step,
    })
}

/// Positive iff score >= the record's category threshold.
pub fn apply_group_thresholds(scores: &[f64], groups: &GroupColumn, gt: &GroupThresholds) -> Result<Vec<bool>> {
    check_len("group labels", scores.len(), groups.len())?;
    let per_code: Vec<Option<f64>> = groups.categories.iter().map(|c| gt.threshold_for(c)).collect();
    scores
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let code = groups.codes[i] as usize;
            per_code[code]
                .map(|t| s >= t)
                .ok_or_else(|| Error::UnseenCategory(groups.categories[code].clone()))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// |FNR_g - FNR_overall| <= epsilon for every category g.
    FnrParity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EgConfig {
    pub epsilon: f64,
    pub iterations: usize,
    pub eta0: f64,
    /// Bound on the total dual mass.
    pub bound: f64,
    /// Duality-gap stopping tolerance; `None` uses 1/sqrt(n).
    pub nu: Option<f64>,
    pub constraint: Constraint,
}

impl Default for EgConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.02,
            iterations: 50,
            eta0: 2.0,
            bound: 100.0,
            nu: None,
            constraint: Constraint::FnrParity,
        }
    }
}

impl EgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) {
            return Err(Error::param("epsilon", "must be nonnegative"));
        }
        if self.iterations == 0 {
            return Err(Error::param("iterations", "must be at least 1"));
        }
        if !(self.eta0 > 0.0) {
            return Err(Error::param("eta0", "must be positive"));
        }
        if !(self.bound > 0.0) {
            return Err(Error::param("bound", "must be positive"));
        }
        if self.nu.is_some_and(|v| !(v >= 0.0)) {
            return Err(Error::param("nu", "must be nonnegative"));
        }
        Ok(())
    }
}

/// A distribution over fitted classifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomizedClassifier {
    pub members: Vec<FittedModel>,
    pub weights: Vec<f64>,
    /// When set, members act as hard classifiers `score >= threshold`.
    pub member_threshold: Option<f64>,
    /// Dual vector played at each iteration, laid out (+g0, -g0, +g1, -g1, ...).
    pub duals_history: Vec<Vec<f64>>,
    /// Category names matching the dual layout.
    pub categories: Vec<String>,
    /// Duality gap when iteration stopped.
    pub duality_gap: f64,
    /// Max constraint violation (above epsilon) of the averaged play on the
    /// fitting data after each iteration.
    pub violation_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PredictMode {
    /// Weight-averaged member outputs.
    ExpectedScore,
    /// One member drawn per record.
    Sampled(u64),
}

impl RandomizedClassifier {
    pub fn new(members: Vec<FittedModel>, weights: Vec<f64>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::param("members", "must not be empty"));
        }
        check_len("weights", members.len(), weights.len())?;
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::param("weights", "must be a probability vector"));
        }
        Ok(Self {
            members,
            weights,
            member_threshold: None,
            duals_history: vec![],
            categories: vec![],
            duality_gap: 0.0,
            violation_history: vec![],
        })
    }

    fn member_outputs(&self, x: &Matrix) -> Result<Vec<Vec<f64>>> {
        self.members
            .iter()
            .map(|m| {
                let s = m.predict_proba(x)?;
                Ok(match self.member_threshold {
                    Some(t) => s.into_iter().map(|v| if v >= t { 1.0 } else { 0.0 }).collect(),
                    None => s,
                })
            })
            .collect()
    }

    /// Scores in [0, 1]. Sampled mode returns 0/1 values; soft members are
    /// cut at 0.5 there.
    pub fn predict(&self, x: &Matrix, mode: PredictMode) -> Result<Vec<f64>> {
        let outs = self.member_outputs(x)?;
        let n = x.rows();
        Ok(match mode {
            PredictMode::ExpectedScore => (0..n)
                .map(|i| {
                    outs.iter()
                        .zip(&self.weights)
                        .map(|(o, w)| w * o[i])
                        .sum::<f64>()
                        .clamp(0.0, 1.0)
                })
                .collect(),
            PredictMode::Sampled(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut cum = Vec::with_capacity(self.weights.len());
                let mut acc = 0.0;
                for w in &self.weights {
                    acc += w;
                    cum.push(acc);
                }
                (0..n)
                    .map(|i| {
                        let u: f64 = rng.random::<f64>() * acc;
                        let k = cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1);
                        if outs[k][i] >= 0.5 {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect()
            }
        })
    }
}

pub fn predict_randomized(rc: &RandomizedClassifier, x: &Matrix, mode: PredictMode) -> Result<Vec<f64>> {
    rc.predict(x, mode)
}

/// Per-category positives and the index of each record's constraint group.
struct Problem<'a> {
    y: &'a [bool],
    slot: Vec<usize>,
    names: Vec<String>,
    pos_per_slot: Vec<usize>,
    positives: usize,
}

impl<'a> Problem<'a> {
    fn new(y: &'a [bool], groups: &GroupColumn) -> Result<Self> {
        let mut counts = vec![0usize; groups.categories.len()];
        let mut pos = vec![0usize; groups.categories.len()];
        for (i, &c) in groups.codes.iter().enumerate() {
            counts[c as usize] += 1;
            pos[c as usize] += usize::from(y[i]);
        }
        let mut slot_of_code = vec![usize::MAX; counts.len()];
        let mut names = Vec::new();
        let mut pos_per_slot = Vec::new();
        for (code, name) in groups.categories.iter().enumerate() {
            if counts[code] == 0 {
                continue;
            }
            if pos[code] == 0 {
                return Err(Error::NoPositives {
                    feature: groups.name.clone(),
                    category: name.clone(),
                });
            }
            slot_of_code[code] = names.len();
            names.push(name.clone());
            pos_per_slot.push(pos[code]);
        }
        Ok(Self {
            y,
            slot: groups.codes.iter().map(|&c| slot_of_code[c as usize]).collect(),
            names,
            pos_per_slot,
            positives: pos.iter().sum(),
        })
    }

    /// Error rate and the per-category FNR - overall FNR vector of `h`.
    fn moments(&self, h: &[f64]) -> (f64, Vec<f64>) {
        let n = self.y.len() as f64;
        let mut err = 0.0;
        let mut miss = vec![0.0; self.names.len()];
        for (i, &yi) in self.y.iter().enumerate() {
            if yi {
                err += 1.0 - h[i];
                miss[self.slot[i]] += 1.0 - h[i];
            } else {
                err += h[i];
            }
        }
        let overall = miss.iter().sum::<f64>() / self.positives as f64;
        let gamma = miss
            .iter()
            .zip(&self.pos_per_slot)
            .map(|(m, &p)| m / p as f64 - overall)
            .collect();
        (err / n, gamma)
    }
}

/// Signed constraint values (+gamma_g - eps, -gamma_g - eps) per category.
fn violations(gamma: &[f64], eps: f64) -> Vec<f64> {
    gamma.iter().flat_map(|g| [g - eps, -g - eps]).collect()
}

fn lagrangian(err: f64, gamma: &[f64], lambda: &[f64], eps: f64) -> f64 {
    err + violations(gamma, eps)
        .iter()
        .zip(lambda)
        .map(|(v, l)| v * l)
        .sum::<f64>()
}

/// Fit the learner to the cost-sensitive problem induced by `lambda`.
///
/// A positive record in category g costs delta = 1 + n (mu_g / P_g - M / P)
/// when predicted negative, where mu = lambda+ - lambda- and M = sum(mu).
/// It becomes a weighted example with label sign(delta) and weight |delta|.
/// Negatives keep label 0 and weight 1.
fn best_response(learner: &ModelSpec, x: &Matrix, pr: &Problem<'_>, lambda: &[f64]) -> Result<(FittedModel, Vec<f64>)> {
    let n = pr.y.len() as f64;
    let mu: Vec<f64> = lambda.chunks(2).map(|c| c[0] - c[1]).collect();
    let big_m: f64 = mu.iter().sum();
    let mut labels = Vec::with_capacity(pr.y.len());
    let mut weights = Vec::with_capacity(pr.y.len());
    for (i, &yi) in pr.y.iter().enumerate() {
        if yi {
            let g = pr.slot[i];
            let delta = 1.0 + n * (mu[g] / pr.pos_per_slot[g] as f64 - big_m / pr.positives as f64);
            labels.push(delta > 0.0);
            weights.push(delta.abs());
        } else {
            labels.push(false);
            weights.push(1.0);
        }
    }
    let pos_w: f64 = labels.iter().zip(&weights).filter(|(l, _)| **l).map(|(_, w)| w).sum();
    let neg_w: f64 = labels.iter().zip(&weights).filter(|(l, _)| !**l).map(|(_, w)| w).sum();
    let spec = if pos_w > 0.0 && neg_w > 0.0 {
        learner
    } else {
        &ModelSpec::Dummy
    };
    let model = fit(spec, x, &labels, Some(&weights))?;
    let h = model
        .predict_proba(x)?
        .into_iter()
        .map(|p| if p >= 0.5 { 1.0 } else { 0.0 })
        .collect();
    Ok((model, h))
}

/// Exponentiated-gradient reduction for FNR parity.
///
/// Duals are parameterized as lambda = B exp(theta) / (1 + sum exp(theta)),
/// which keeps them nonnegative with total mass below B. The first play is
/// lambda = 0 (the unconstrained learner). After each play theta moves by
/// eta0 / (B sqrt(t)) times the constraint violations; the 1/B keeps dual
/// steps commensurate with the error term. Iteration stops early when
/// the duality gap of the averaged play drops to nu. The result is the
/// uniform mixture of the hard best responses.
pub fn exponentiated_gradient(
    learner: &ModelSpec,
    data: &DesignMatrix,
    groups: &GroupColumn,
    cfg: &EgConfig,
) -> Result<RandomizedClassifier> {
    cfg.validate()?;
    learner.validate()?;
    check_len("group labels", data.n(), groups.len())?;
    let pr = Problem::new(&data.y, groups)?;
    let k = 2 * pr.names.len();
    let nu = cfg.nu.unwrap_or(1.0 / (data.n() as f64).sqrt());
    let eps = cfg.epsilon;

    let mut theta: Vec<f64> = vec![0.0; k];
    let mut lambda_sum = vec![0.0; k];
    let mut members = Vec::new();
    let mut err_sum = 0.0;
    let mut gamma_sum = vec![0.0; pr.names.len()];
    let mut duals_history = Vec::new();
    let mut violation_history = Vec::new();
    let mut duality_gap = f64::INFINITY;
    let mut cached: Option<(Vec<f64>, f64)> = None;

    for t in 1..=cfg.iterations {
        let lambda: Vec<f64> = if t == 1 {
            vec![0.0; k]
        } else {
            let ex: Vec<f64> = theta.iter().map(|v| v.exp()).collect();
            let denom = 1.0 + ex.iter().sum::<f64>();
            ex.iter().map(|e| cfg.bound * e / denom).collect()
        };
        let annotate = |e| Error::Iteration {
            iteration: t,
            source: Box::new(e),
        };
        let (model, h) = best_response(learner, &data.x, &pr, &lambda).map_err(annotate)?;
        let (err, gamma) = pr.moments(&h);
        members.push(model);
        err_sum += err;
        gamma_sum.iter_mut().zip(&gamma).for_each(|(s, g)| *s += g);
        lambda_sum.iter_mut().zip(&lambda).for_each(|(s, l)| *s += l);

        let eta = cfg.eta0 / (cfg.bound * (t as f64).sqrt());
        theta
            .iter_mut()
            .zip(violations(&gamma, eps))
            .for_each(|(th, v)| *th += eta * v);
        duals_history.push(lambda.clone());

        let tf = t as f64;
        let q_err = err_sum / tf;
        let q_gamma: Vec<f64> = gamma_sum.iter().map(|s| s / tf).collect();
        let lambda_hat: Vec<f64> = lambda_sum.iter().map(|s| s / tf).collect();
        let max_viol = violations(&q_gamma, eps).into_iter().fold(f64::NEG_INFINITY, f64::max);
        violation_history.push(max_viol.max(0.0));

        let l_hat = lagrangian(q_err, &q_gamma, &lambda_hat, eps);
        let l_best_lambda = q_err + cfg.bound * max_viol.max(0.0);
        let l_best_h = match &cached {
            Some((l, v)) if *l == lambda_hat => *v,
            _ => {
                let hb = if lambda_hat == lambda {
                    h
                } else {
                    best_response(learner, &data.x, &pr, &lambda_hat).map_err(annotate)?.1
                };
                let (e, g) = pr.moments(&hb);
                let v = lagrangian(e, &g, &lambda_hat, eps);
                cached = Some((lambda_hat.clone(), v));
                v
            }
        };
        duality_gap = (l_best_lambda - l_hat).max(l_hat - l_best_h);
        if duality_gap <= nu {
            break;
        }
    }
    let m = members.len();
    Ok(RandomizedClassifier {
        members,
        weights: vec![1.0 / m as f64; m],
        member_threshold: Some(0.5),
        duals_history,
        categories: pr.names,
        duality_gap,
        violation_history,
    })
}

/// Per-category rates of a (possibly randomized) predictor given as the
/// probability of predicting positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub variant: String,
    pub category: String,
    pub fnr: Option<f64>,
    pub fpr: Option<f64>,
    pub accuracy: f64,
}

pub fn expected_rates(variant: &str, y: &[bool], q: &[f64], groups: &GroupColumn) -> Result<Vec<RateRow>> {
    check_len("predictions", y.len(), q.len())?;
    check_len("group labels", y.len(), groups.len())?;
    let mut rows = Vec::new();
    let mut add = |name: &str, idx: &mut dyn Iterator<Item = usize>| {
        let (mut pos, mut neg, mut miss, mut fa, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in idx {
            n += 1.0;
            if y[i] {
                pos += 1.0;
                miss += 1.0 - q[i];
            } else {
                neg += 1.0;
                fa += q[i];
            }
        }
        if n > 0.0 {
            rows.push(RateRow {
                variant: variant.to_string(),
                category: name.to_string(),
                fnr: (pos > 0.0).then(|| miss / pos),
                fpr: (neg > 0.0).then(|| fa / neg),
                accuracy: 1.0 - (miss + fa) / n,
            });
        }
    };
    add("ALL", &mut (0..y.len()));
    for (code, name) in groups.categories.iter().enumerate() {
        add(name, &mut (0..y.len()).filter(|&i| groups.codes[i] as usize == code));
    }
    Ok(rows)
}

/// Max pairwise FNR difference across categories (the "ALL" row excluded).
pub fn fnr_gap(rows: &[RateRow]) -> f64 {
    let rates: Vec<f64> = rows
        .iter()
        .filter(|r| r.category != "ALL")
        .filter_map(|r| r.fnr)
        .collect();
    if rates.is_empty() {
        return 0.0;
    }
    rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - rates.iter().cloned().fold(f64::INFINITY, f64::min)
}

pub fn write_mitigation_csv<W: Write>(rows: &[RateRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variant", "category", "fnr", "fpr", "accuracy"])?;
    for r in rows {
        w.write_record([
            r.variant.clone(),
            r.category.clone(),
            opt_f64_str(r.fnr),
            opt_f64_str(r.fpr),
            f64_str(r.accuracy),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelParams;

    fn column(labels: &[&str]) -> GroupColumn {
        let l: Vec<String> = labels.iter().map(|s| s.to_string()).collect();
        GroupColumn::from_labels("G", &l, &[])
    }

    fn constant_model(p: f64) -> FittedModel {
        FittedModel {
            spec: ModelSpec::Dummy,
            n_features: 1,
            params: ModelParams::Dummy { prior: p },
        }
    }

    #[test]
    fn grid_shapes() {
        let g = threshold_grid(0.01);
        assert_eq!(g.len(), 101);
        assert_eq!(g[37], 0.37);
        assert_eq!(threshold_grid(0.3), vec![0.0, 0.3, 0.6, 0.8999999999999999]);
    }

    #[test]
    fn identical_groups_get_equal_thresholds() {
        let scores: Vec<f64> = (0..200).map(|i| ((i / 2) as f64 + 0.5) / 100.0).collect();
        let y: Vec<bool> = (0..200).map(|i| (i / 2) % 3 != 0).collect();
        let labels: Vec<&str> = (0..200).map(|i| if i % 2 == 0 { "a" } else { "b" }).collect();
        let gt = fit_threshold_optimizer(&scores, &y, &column(&labels), &PostprocessConfig::default()).unwrap();
        assert_eq!(gt.achieved_gap, 0.0);
        assert_eq!(gt.thresholds[0].1, gt.thresholds[1].1);
    }

    #[test]
    fn no_positive_category_is_error() {
        let g = column(&["a", "b"]);
        let r = fit_threshold_optimizer(&[0.2, 0.4], &[true, false], &g, &PostprocessConfig::default());
        assert!(matches!(r, Err(Error::NoPositives { .. })));
    }

    #[test]
    fn apply_rules() {
        let g = column(&["a", "b", "a"]);
        let scores = [0.5, 0.2, 0.49];
        let gt = GroupThresholds {
            feature: "G".into(),
            thresholds: vec![("a".into(), 0.5), ("b".into(), 0.5)],
            target_rate: 0.0,
            achieved_gap: 0.0,
            grid_step: 0.01,
        };
        assert_eq!(
            apply_group_thresholds(&scores, &g, &gt).unwrap(),
            vec![true, false, false]
        );
        let mut zero = gt.clone();
        zero.thresholds[1].1 = 0.0;
        assert!(apply_group_thresholds(&scores, &g, &zero).unwrap()[1]);
        let mut missing = gt.clone();
        missing.thresholds.pop();
        assert!(matches!(apply_group_thresholds(&scores, &g, &missing), Err(Error::UnseenCategory(c)) if c == "b"));
    }

    #[test]
    fn randomized_prediction_modes() {
        let x = Matrix::zeros(4, 1);
        let one = RandomizedClassifier::new(vec![constant_model(0.2)], vec![1.0]).unwrap();
        assert_eq!(one.predict(&x, PredictMode::ExpectedScore).unwrap(), vec![0.2; 4]);
        let two = RandomizedClassifier::new(vec![constant_model(0.2), constant_model(0.8)], vec![1.0, 0.0]).unwrap();
        assert_eq!(two.predict(&x, PredictMode::ExpectedScore).unwrap(), vec![0.2; 4]);
        assert_eq!(two.predict(&x, PredictMode::Sampled(3)).unwrap(), vec![0.0; 4]);
        let half = RandomizedClassifier::new(vec![constant_model(0.2), constant_model(0.8)], vec![0.5, 0.5]).unwrap();
        assert!(half
            .predict(&x, PredictMode::ExpectedScore)
            .unwrap()
            .iter()
            .all(|v| (v - 0.5).abs() < 1e-12));
        assert_eq!(
            half.predict(&x, PredictMode::Sampled(9)).unwrap(),
            half.predict(&x, PredictMode::Sampled(9)).unwrap()
        );
        assert!(RandomizedClassifier::new(vec![constant_model(0.1)], vec![0.7]).is_err());
    }

    #[test]
    fn expected_rates_of_hard_predictions() {
        let g = column(&["a", "a", "b", "b"]);
        let rows = expected_rates("x", &[true, false, true, true], &[0.0, 0.0, 1.0, 0.5], &g).unwrap();
        assert_eq!(rows[0].category, "ALL");
        assert_eq!(rows[1].fnr, Some(1.0));
        assert_eq!(rows[2].fnr, Some(0.25));
        assert_eq!(rows[2].fpr, None);
        assert!((fnr_gap(&rows) - 0.75).abs() < 1e-12);
    }
}
