//! Confusion metrics, ROC and precision-recall scans, threshold selection and
//! repeated stratified k-fold cross-validation.
//!
//! The decision rule everywhere is `score >= threshold => positive`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::matrix::Matrix;
use crate::models::{fit, ModelSpec};
use crate::preprocess::DesignMatrix;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

impl ConfusionCounts {
    pub fn n(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// tp / (tp + fn); 0 when there are no actual positives.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_).unwrap_or(0.0)
    }

    /// tp / (tp + fp); 0 when nothing is predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp).unwrap_or(0.0)
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_).unwrap_or(0.0)
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.n()).unwrap_or(0.0)
    }

    pub fn fnr(&self) -> Option<f64> {
        ratio(self.fn_, self.tp + self.fn_)
    }

    pub fn fpr(&self) -> Option<f64> {
        ratio(self.fp, self.fp + self.tn)
    }
}

pub fn confusion(y: &[bool], y_hat: &[bool]) -> Result<ConfusionCounts> {
    check_len("predictions", y.len(), y_hat.len())?;
    let mut c = ConfusionCounts::default();
    for (&a, &p) in y.iter().zip(y_hat) {
        match (a, p) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(c)
}

pub fn predict_at(scores: &[f64], threshold: f64) -> Vec<bool> {
    scores.iter().map(|&s| s >= threshold).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Roc,
    Pr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub y: f64,
    pub threshold: f64,
}

/// Points ordered by strictly decreasing threshold. ROC uses (FPR, TPR);
/// PR uses (recall, precision).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub kind: CurveKind,
    pub points: Vec<CurvePoint>,
}

fn check_inputs(y: &[bool], scores: &[f64]) -> Result<(usize, usize)> {
    check_len("scores", y.len(), scores.len())?;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite { row: i, col: 0 });
    }
    let pos = y.iter().filter(|&&v| v).count();
    let neg = y.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    Ok((pos, neg))
}

/// Cumulative (threshold, tp, fp) at each distinct score, highest first.
fn sweep(y: &[bool], scores: &[f64]) -> Vec<(f64, usize, usize)> {
    let mut idx: Vec<usize> = (0..y.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (k, &i) in idx.iter().enumerate() {
        if y[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_run = idx.get(k + 1).is_none_or(|&j| scores[j] != scores[i]);
        if last_of_run {
            out.push((scores[i], tp, fp));
        }
    }
    out
}

pub fn roc_points(y: &[bool], scores: &[f64]) -> Result<Curve> {
    let (pos, neg) = check_inputs(y, scores)?;
    let mut points = vec![CurvePoint {
        x: 0.0,
        y: 0.0,
        threshold: f64::INFINITY,
    }];
    for (t, tp, fp) in sweep(y, scores) {
        points.push(CurvePoint {
            x: fp as f64 / neg as f64,
            y: tp as f64 / pos as f64,
            threshold: t,
        });
    }
    Ok(Curve {
        kind: CurveKind::Roc,
        points,
    })
}

/// Trapezoidal area under a ROC curve.
pub fn auc(curve: &Curve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].x - w[0].x) * (w[1].y + w[0].y) / 2.0)
        .sum()
}

pub fn roc_auc(y: &[bool], scores: &[f64]) -> Result<f64> {
    Ok(auc(&roc_points(y, scores)?))
}

/// Youden-optimal ROC point (fpr, tpr, threshold); ties go to the lower FPR.
pub fn optimal_point(curve: &Curve) -> (f64, f64, f64) {
    let mut best = curve.points[0];
    for p in &curve.points[1..] {
        let (j, bj) = (p.y - p.x, best.y - best.x);
        if j > bj || (j == bj && p.x < best.x) {
            best = *p;
        }
    }
    (best.x, best.y, best.threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Precision, recall and F1 at every distinct score, highest threshold first.
pub fn pr_threshold_scan(y: &[bool], scores: &[f64]) -> Result<Vec<PrPoint>> {
    let (pos, _) = check_inputs(y, scores)?;
    Ok(sweep(y, scores)
        .into_iter()
        .map(|(threshold, tp, fp)| {
            let c = ConfusionCounts {
                tp,
                fp,
                tn: 0,
                fn_: pos - tp,
            };
            PrPoint {
                threshold,
                precision: c.precision(),
                recall: c.recall(),
                f1: c.f1(),
                tp,
                fp,
                fn_: c.fn_,
            }
        })
        .collect())
}

pub fn pr_curve(scan: &[PrPoint]) -> Curve {
    Curve {
        kind: CurveKind::Pr,
        points: scan
            .iter()
            .map(|p| CurvePoint {
                x: p.recall,
                y: p.precision,
                threshold: p.threshold,
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThresholdPolicy {
    #[default]
    F1Max,
    Fixed {
        threshold: f64,
    },
}

/// Pick a threshold from a PR scan. F1 ties resolve to the smallest threshold.
pub fn select_threshold(scan: &[PrPoint], policy: ThresholdPolicy) -> f64 {
    match policy {
        ThresholdPolicy::Fixed { threshold } => threshold,
        ThresholdPolicy::F1Max => {
            let mut best: Option<&PrPoint> = None;
            for p in scan {
                // Scan runs high to low, so >= moves ties toward lower thresholds.
                if best.is_none_or(|b| p.f1 >= b.f1) {
                    best = Some(p);
                }
            }
            best.map_or(0.5, |b| b.threshold)
        }
    }
}

pub fn tune_threshold(y: &[bool], scores: &[f64], policy: ThresholdPolicy) -> Result<f64> {
    match policy {
        ThresholdPolicy::Fixed { threshold } => Ok(threshold),
        ThresholdPolicy::F1Max => Ok(select_threshold(&pr_threshold_scan(y, scores)?, policy)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn fold_indices(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, &f) in self.assignments.iter().enumerate() {
            if f == fold {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }
}

/// Shuffle each class with one seeded stream (negatives, then positives) and
/// deal round-robin, the deal counter carrying over between classes.
pub fn stratified_folds(y: &[bool], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::param("k", "must be at least 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![0; y.len()];
    let mut next = 0;
    for class in [false, true] {
        let mut members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        if members.len() < k {
            return Err(Error::ClassTooSmall {
                count: members.len(),
                k,
            });
        }
        members.shuffle(&mut rng);
        for i in members {
            assignments[i] = next % k;
            next += 1;
        }
    }
    Ok(FoldPlan { k, assignments, seed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub repetition: usize,
    pub fold: usize,
    pub threshold: f64,
    pub auc: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub mean: f64,
    /// Population standard deviation over all folds and repetitions.
    pub std: f64,
    pub values: Vec<f64>,
}

impl MetricStat {
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub auc: MetricStat,
    pub recall: MetricStat,
    pub precision: MetricStat,
    pub folds: Vec<FoldResult>,
}

impl MetricSummary {
    fn from_folds(folds: Vec<FoldResult>) -> Self {
        Self {
            auc: MetricStat::from_values(folds.iter().map(|f| f.auc).collect()),
            recall: MetricStat::from_values(folds.iter().map(|f| f.recall).collect()),
            precision: MetricStat::from_values(folds.iter().map(|f| f.precision).collect()),
            folds,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub k: usize,
    pub repetitions: usize,
    pub base_seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            k: 10,
            repetitions: 30,
            base_seed: 0,
        }
    }
}

fn run_fold(
    spec: &ModelSpec,
    x: &Matrix,
    y: &[bool],
    plan: &FoldPlan,
    rep: usize,
    fold: usize,
    policy: ThresholdPolicy,
) -> Result<FoldResult> {
    let (train, test) = plan.fold_indices(fold);
    let xtr = x.select_rows(&train);
    let ytr: Vec<bool> = train.iter().map(|&i| y[i]).collect();
    let model = fit(spec, &xtr, &ytr, None)?;
    let threshold = tune_threshold(&ytr, &model.predict_proba(&xtr)?, policy)?;
    let xte = x.select_rows(&test);
    let yte: Vec<bool> = test.iter().map(|&i| y[i]).collect();
    let scores = model.predict_proba(&xte)?;
    let c = confusion(&yte, &predict_at(&scores, threshold))?;
    Ok(FoldResult {
        repetition: rep,
        fold,
        threshold,
        auc: roc_auc(&yte, &scores)?,
        recall: c.recall(),
        precision: c.precision(),
    })
}

/// Repetition r uses fold seed `base_seed + r`. Thresholds are tuned on the
/// training folds' own scores. Results are reduced in (repetition, fold) order.
pub fn cross_validate(
    spec: &ModelSpec,
    data: &DesignMatrix,
    cv: &CvConfig,
    policy: ThresholdPolicy,
) -> Result<MetricSummary> {
    spec.validate()?;
    if cv.repetitions == 0 {
        return Err(Error::param("repetitions", "must be at least 1"));
    }
    let plans = (0..cv.repetitions)
        .map(|r| stratified_folds(&data.y, cv.k, cv.base_seed.wrapping_add(r as u64)))
        .collect::<Result<Vec<_>>>()?;
    let tasks: Vec<(usize, usize)> = (0..cv.repetitions)
        .flat_map(|r| (0..cv.k).map(move |f| (r, f)))
        .collect();
    let folds = tasks
        .par_iter()
        .map(|&(r, f)| {
            run_fold(spec, &data.x, &data.y, &plans[r], r, f, policy).map_err(|e| Error::Fold {
                repetition: r,
                fold: f,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricSummary::from_folds(folds))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_counts() {
        let c = confusion(&[true, true, false, false], &[true, false, false, true]).unwrap();
        assert_eq!(
            c,
            ConfusionCounts {
                tp: 1,
                fp: 1,
                tn: 1,
                fn_: 1
            }
        );
        assert_eq!((c.recall(), c.precision()), (0.5, 0.5));
        let y = [true, false, true];
        let c = confusion(&y, &y).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        assert!(confusion(&y, &[true]).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(
            roc_auc(&[true, false, true, false], &[0.9, 0.8, 0.4, 0.3]).unwrap(),
            0.75
        );
        assert_eq!(roc_auc(&[true, true, false], &[0.9, 0.8, 0.1]).unwrap(), 1.0);
        let c = roc_points(&[true, false, false], &[0.3, 0.3, 0.3]).unwrap();
        assert_eq!(auc(&c), 0.5);
        assert_eq!(c.points.len(), 2);
        assert_eq!((c.points[1].x, c.points[1].y), (1.0, 1.0));
        assert!(matches!(
            roc_points(&[true, true], &[0.1, 0.2]),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn curve_thresholds_strictly_decrease() {
        let c = roc_points(&[true, false, true, false, true], &[0.5, 0.5, 0.2, 0.9, 0.2]).unwrap();
        assert!(c.points.windows(2).all(|w| w[1].threshold < w[0].threshold));
        let last = c.points.last().unwrap();
        assert_eq!((last.x, last.y), (1.0, 1.0));
    }

    #[test]
    fn optimal_point_youden() {
        let c = roc_points(&[true, true, false, false], &[0.9, 0.6, 0.5, 0.1]).unwrap();
        assert_eq!(optimal_point(&c), (0.0, 1.0, 0.6));
    }

    #[test]
    fn separated_scores_pick_smallest_perfect_threshold() {
        let y = [false, false, true, true];
        let s = [0.1, 0.3, 0.7, 0.9];
        let t = tune_threshold(&y, &s, ThresholdPolicy::F1Max).unwrap();
        assert_eq!(t, 0.7);
        assert_eq!(
            tune_threshold(&y, &s, ThresholdPolicy::Fixed { threshold: 0.5 }).unwrap(),
            0.5
        );
    }

    #[test]
    fn fold_examples() {
        let y: Vec<bool> = (0..100).map(|i| i < 30).collect();
        let p = stratified_folds(&y, 10, 4).unwrap();
        for f in 0..10 {
            let (_, test) = p.fold_indices(f);
            assert_eq!(test.len(), 10);
            assert_eq!(test.iter().filter(|&&i| y[i]).count(), 3);
        }
        assert_eq!(p, stratified_folds(&y, 10, 4).unwrap());
        assert_ne!(p.assignments, stratified_folds(&y, 10, 5).unwrap().assignments);

        let y: Vec<bool> = (0..101).map(|i| i < 31).collect();
        let p = stratified_folds(&y, 10, 1).unwrap();
        for f in 0..10 {
            let (_, test) = p.fold_indices(f);
            assert!((10..=11).contains(&test.len()));
            assert!((3..=4).contains(&test.iter().filter(|&&i| y[i]).count()));
        }
        let y: Vec<bool> = (0..20).map(|i| i < 3).collect();
        assert!(matches!(
            stratified_folds(&y, 5, 0),
            Err(Error::ClassTooSmall { count: 3, k: 5 })
        ));
        assert!(stratified_folds(&y, 1, 0).is_err());
    }

    #[test]
    fn dummy_cv_has_zero_recall_spread() {
        let n = 60;
        let x = Matrix::zeros(n, 2);
        let y: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
        let data = DesignMatrix::new(vec!["a".into(), "b".into()], x, y).unwrap();
        let cv = CvConfig {
            k: 5,
            repetitions: 3,
            base_seed: 7,
        };
        let s = cross_validate(&ModelSpec::Dummy, &data, &cv, ThresholdPolicy::F1Max).unwrap();
        assert_eq!(s.recall.values.len(), 15);
        assert_eq!(s.recall.std, 0.0);
        assert_eq!(s.folds[4].repetition, 0);
        assert_eq!(s.folds[5].repetition, 1);
    }

    #[test]
    fn fold_errors_are_annotated() {
        let n = 40;
        let mut x = Matrix::zeros(n, 1);
        x.set(0, 0, f64::NAN);
        let y: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let data = DesignMatrix::new(vec!["a".into()], x, y).unwrap();
        let cv = CvConfig {
            k: 2,
            repetitions: 1,
            base_seed: 0,
        };
        let err = cross_validate(&ModelSpec::GaussianNb, &data, &cv, ThresholdPolicy::F1Max).unwrap_err();
        assert!(matches!(err, Error::Fold { repetition: 0, .. }), "{err}");
    }
}
