//! Group error rates and the pairwise two-proportion Z-test audit.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::evaluation::{confusion, ConfusionCounts};
use crate::fmt::{f64_str, opt_f64_str};
use crate::preprocess::GroupAssignments;

// Highest-degree coefficient first.
const NUM: [f64; 7] = [
    3.526_249_659_989_11e-2,
    0.700_383_064_443_688,
    6.373_962_203_531_65,
    33.912_866_078_383,
    112.079_291_497_871,
    221.213_596_169_931,
    220.206_867_912_376,
];
const DEN: [f64; 8] = [
    8.838_834_764_831_84e-2,
    1.755_667_163_182_64,
    16.064_177_579_207,
    86.780_732_202_946_1,
    296.564_248_779_674,
    637.333_633_378_831,
    793.826_512_519_948,
    440.413_735_824_752,
];

fn horner(coef: &[f64], x: f64) -> f64 {
    coef.iter().fold(0.0, |acc, c| acc * x + c)
}

/// Standard normal CDF, absolute error well below 1e-7 everywhere
/// (Hart's rational approximation in the double-precision form given by West).
pub fn normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let a = x.abs();
    let tail = if a > 37.0 {
        0.0
    } else {
        let e = (-a * a / 2.0).exp();
        if a < 7.071_067_811_865_47 {
            let num = horner(&NUM, a) * e;
            let den = horner(&DEN, a);
            num / den
        } else {
            let b = a + 1.0 / (a + 2.0 / (a + 3.0 / (a + 4.0 / (a + 0.65))));
            e / b / 2.506_628_274_631
        }
    };
    if x > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZTestResult {
    pub p1: f64,
    pub n1: usize,
    pub p2: f64,
    pub n2: usize,
    pub z_abs: f64,
    pub p_value: f64,
    pub significant: bool,
}

/// Unpooled two-sample Z-test for proportions, two-tailed.
///
/// With zero variance (both proportions in {0, 1}) the test is decided
/// exactly: equal proportions give z = 0, p = 1; unequal give z = inf, p = 0.
pub fn two_proportion_ztest(p1: f64, n1: usize, p2: f64, n2: usize, alpha: f64) -> Result<ZTestResult> {
    if n1 == 0 || n2 == 0 {
        return Err(Error::param("n", "sample sizes must be at least 1"));
    }
    if !((0.0..=1.0).contains(&p1) && (0.0..=1.0).contains(&p2)) {
        return Err(Error::param("p", "proportions must lie in [0, 1]"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param("alpha", "must lie in (0, 1)"));
    }
    let var = p1 * (1.0 - p1) / n1 as f64 + p2 * (1.0 - p2) / n2 as f64;
    let diff = (p1 - p2).abs();
    let (z_abs, p_value) = if var > 0.0 {
        let z = diff / var.sqrt();
        (z, (2.0 * normal_cdf(-z)).min(1.0))
    } else if diff == 0.0 {
        (0.0, 1.0)
    } else {
        (f64::INFINITY, 0.0)
    };
    Ok(ZTestResult {
        p1,
        n1,
        p2,
        n2,
        z_abs,
        p_value,
        significant: p_value < alpha,
    })
}

/// Three-decimal p-value text, with small values shown as "< 0.001".
pub fn format_p_value(p: f64) -> String {
    if p < 0.001 {
        "< 0.001".into()
    } else {
        format!("{p:.3}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub category: String,
    pub n: usize,
    pub counts: ConfusionCounts,
    /// `None` when the category has no actual positives.
    pub fnr: Option<f64>,
    pub fpr: Option<f64>,
    pub accuracy: f64,
    pub correct_pct: f64,
    pub misclassified_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub feature: String,
    pub categories: Vec<CategoryStats>,
}

impl GroupStats {
    pub fn get(&self, category: &str) -> Option<&CategoryStats> {
        self.categories.iter().find(|c| c.category == category)
    }
}

pub fn group_rates(y: &[bool], y_hat: &[bool], groups: &GroupAssignments, feature: &str) -> Result<GroupStats> {
    check_len("predictions", y.len(), y_hat.len())?;
    let col = groups.get(feature)?;
    check_len("group labels", y.len(), col.len())?;
    let mut categories = Vec::with_capacity(col.categories.len());
    for (code, name) in col.categories.iter().enumerate() {
        let idx: Vec<usize> = (0..y.len()).filter(|&i| col.codes[i] as usize == code).collect();
        let yc: Vec<bool> = idx.iter().map(|&i| y[i]).collect();
        let pc: Vec<bool> = idx.iter().map(|&i| y_hat[i]).collect();
        let counts = confusion(&yc, &pc)?;
        let accuracy = counts.accuracy();
        categories.push(CategoryStats {
            category: name.clone(),
            n: idx.len(),
            counts,
            fnr: counts.fnr(),
            fpr: counts.fpr(),
            accuracy,
            correct_pct: 100.0 * accuracy,
            misclassified_pct: if idx.is_empty() { 0.0 } else { 100.0 * (1.0 - accuracy) },
        });
    }
    Ok(GroupStats {
        feature: feature.to_string(),
        categories,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub features: Vec<String>,
    pub alpha: f64,
    pub min_category_fraction: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            features: vec![],
            alpha: 0.05,
            min_category_fraction: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub group_a: String,
    pub group_b: String,
    pub result: ZTestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAudit {
    pub stats: GroupStats,
    /// Categories left out of the tests: too small or no actual positives.
    pub excluded: Vec<String>,
    pub tests: Vec<PairTest>,
    pub biased: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub alpha: f64,
    pub features: Vec<FeatureAudit>,
}

/// FNR comparison for each requested feature. Sample sizes in each test are
/// the categories' actual-positive counts, the FNR denominators.
pub fn audit(y: &[bool], y_hat: &[bool], groups: &GroupAssignments, cfg: &AuditConfig) -> Result<BiasReport> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::param("alpha", "must lie in (0, 1)"));
    }
    if !(0.0..1.0).contains(&cfg.min_category_fraction) {
        return Err(Error::param("min_category_fraction", "must lie in [0, 1)"));
    }
    let n = y.len() as f64;
    let mut features = Vec::new();
    for feature in &cfg.features {
        let stats = group_rates(y, y_hat, groups, feature)?;
        let mut kept = Vec::new();
        let mut excluded = Vec::new();
        for c in &stats.categories {
            if c.n == 0 || (c.n as f64) < cfg.min_category_fraction * n || c.fnr.is_none() {
                excluded.push(c.category.clone());
            } else {
                kept.push(c);
            }
        }
        let mut tests = Vec::new();
        for a in 0..kept.len() {
            for b in a + 1..kept.len() {
                let (ca, cb) = (kept[a], kept[b]);
                let na = ca.counts.tp + ca.counts.fn_;
                let nb = cb.counts.tp + cb.counts.fn_;
                let result = two_proportion_ztest(ca.fnr.unwrap_or(0.0), na, cb.fnr.unwrap_or(0.0), nb, cfg.alpha)?;
                tests.push(PairTest {
                    group_a: ca.category.clone(),
                    group_b: cb.category.clone(),
                    result,
                });
            }
        }
        let biased = tests.iter().any(|t| t.result.significant);
        features.push(FeatureAudit {
            stats,
            excluded,
            tests,
            biased,
        });
    }
    Ok(BiasReport {
        alpha: cfg.alpha,
        features,
    })
}

impl BiasReport {
    pub fn write_fnr_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "feature",
            "category",
            "n",
            "positives",
            "fnr",
            "fpr",
            "accuracy",
            "correct_pct",
            "misclassified_pct",
            "tested",
        ])?;
        for f in &self.features {
            for c in &f.stats.categories {
                w.write_record([
                    f.stats.feature.clone(),
                    c.category.clone(),
                    c.n.to_string(),
                    (c.counts.tp + c.counts.fn_).to_string(),
                    opt_f64_str(c.fnr),
                    opt_f64_str(c.fpr),
                    f64_str(c.accuracy),
                    f64_str(c.correct_pct),
                    f64_str(c.misclassified_pct),
                    (!f.excluded.contains(&c.category)).to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn write_ztests_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "feature",
            "group_a",
            "group_b",
            "p1",
            "n1",
            "p2",
            "n2",
            "z",
            "p_value",
            "significant",
        ])?;
        for f in &self.features {
            for t in &f.tests {
                let r = &t.result;
                w.write_record([
                    f.stats.feature.clone(),
                    t.group_a.clone(),
                    t.group_b.clone(),
                    f64_str(r.p1),
                    r.n1.to_string(),
                    f64_str(r.p2),
                    r.n2.to_string(),
                    f64_str(r.z_abs),
                    f64_str(r.p_value),
                    r.significant.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}
