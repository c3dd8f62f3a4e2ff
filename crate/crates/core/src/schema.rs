//! Dataset schema, synthetic generation and the raw dataset CSV format.
//!
//! A schema lists every raw feature with its kind, marginal mean/std and
//! missing/NA rates. [`synthesize`] draws records with independent per-feature
//! marginals; learnable structure comes only from [`SignalSpec`] mean shifts
//! conditioned on the label.
//!
//! Schema JSON grammar:
//!
//! ```text
//! {
//!   "target_name": "LOCALITY DECISION",
//!   "target_mix": {"EH SUPPORT": 0.331, "SOME ACTION": 0.5659, "NO ACTION": 0.1031},
//!   "sparse_records": {"rate": 0.1012, "concentration": 0.9},      (optional)
//!   "features": [
//!     {"name": "IDACI", "kind": "fraction", "mean": 0.13, "std": 0.09,
//!      "missing_pct": 0.32, "na_pct": 0.0},
//!     {"name": "GENDER", "kind": "categorical", "levels": ["male", "female"],
//!      "level_probs": [0.5, 0.5], "missing_pct": 0, "na_pct": 0},
//!     {"name": "AGE", "kind": "continuous", "mean": 9, "std": 5,
//!      "missing_pct": 0, "na_pct": 0,
//!      "uniform": {"low": 0, "high": 18, "decimals": 1}}          (optional override)
//!   ]
//! }
//! ```
//!
//! `kind` is one of `fraction`, `count`, `continuous`, `binary`, `categorical`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fmt::{f64_str, round_to};

const SCHEMA_FORMAT: &str = "fairtriage-schema";
const VALUE_DECIMALS: u32 = 4;
const LCC_SCHEMA: &str = include_str!("../data/lcc_schema.json");

/// The three locality-decision outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TargetLevel {
    EhSupport,
    SomeAction,
    NoAction,
}

impl TargetLevel {
    pub const ALL: [TargetLevel; 3] = [TargetLevel::EhSupport, TargetLevel::SomeAction, TargetLevel::NoAction];

    pub fn label(self) -> &'static str {
        match self {
            TargetLevel::EhSupport => "EH SUPPORT",
            TargetLevel::SomeAction => "SOME ACTION",
            TargetLevel::NoAction => "NO ACTION",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for TargetLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for TargetLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace(['_', '-'], " ");
        TargetLevel::ALL
            .into_iter()
            .find(|l| l.label() == norm)
            .ok_or_else(|| Error::UnknownTargetLevel(s.to_string()))
    }
}

impl Serialize for TargetLevel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for TargetLevel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureKind {
    /// Real value in [0, 1].
    Fraction,
    /// Nonnegative integer.
    Count,
    /// Nonnegative real.
    Continuous,
    /// 0 or 1.
    Binary,
    Categorical {
        levels: Vec<String>,
        probs: Vec<f64>,
    },
}

impl FeatureKind {
    fn tag(&self) -> &'static str {
        match self {
            FeatureKind::Fraction => "fraction",
            FeatureKind::Count => "count",
            FeatureKind::Continuous => "continuous",
            FeatureKind::Binary => "binary",
            FeatureKind::Categorical { .. } => "categorical",
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, FeatureKind::Categorical { .. })
    }
}

/// Replaces the normal draw with `uniform[low, high)` rounded to `decimals`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformOverride {
    pub low: f64,
    pub high: f64,
    pub decimals: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    pub mean: f64,
    pub std: f64,
    pub missing_rate: f64,
    pub na_rate: f64,
    pub uniform: Option<UniformOverride>,
}

impl FeatureSpec {
    pub fn new(name: impl Into<String>, kind: FeatureKind, mean: f64, std: f64) -> Self {
        Self {
            name: name.into(),
            kind,
            mean,
            std,
            missing_rate: 0.0,
            na_rate: 0.0,
            uniform: None,
        }
    }

    pub fn with_rates(mut self, missing_rate: f64, na_rate: f64) -> Self {
        self.missing_rate = missing_rate;
        self.na_rate = na_rate;
        self
    }

    pub fn categorical(name: impl Into<String>, levels: &[&str], probs: &[f64]) -> Self {
        Self::new(
            name,
            FeatureKind::Categorical {
                levels: levels.iter().map(|s| s.to_string()).collect(),
                probs: probs.to_vec(),
            },
            0.0,
            0.0,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::feature(&self.name, reason));
        let rate_ok = |r: f64| (0.0..=1.0).contains(&r);
        if self.name.trim().is_empty() {
            return Err(Error::InvalidSchema("feature with empty name".into()));
        }
        if !rate_ok(self.missing_rate) || !rate_ok(self.na_rate) {
            return bad("missing and NA rates must lie in [0, 1]".into());
        }
        if self.missing_rate + self.na_rate > 1.0 + 1e-12 {
            return bad(format!(
                "missing rate {} + NA rate {} exceeds 1",
                self.missing_rate, self.na_rate
            ));
        }
        if !self.mean.is_finite() || !self.std.is_finite() || self.std < 0.0 {
            return bad("mean must be finite and std finite and nonnegative".into());
        }
        match &self.kind {
            FeatureKind::Fraction | FeatureKind::Binary if !(0.0..=1.0).contains(&self.mean) => {
                return bad(format!("{} mean {} outside [0, 1]", self.kind.tag(), self.mean));
            }
            FeatureKind::Categorical { levels, probs } => {
                if levels.is_empty() || levels.len() != probs.len() {
                    return bad("categorical needs one probability per level".into());
                }
                let uniq: HashSet<&String> = levels.iter().collect();
                if uniq.len() != levels.len() {
                    return bad("duplicate categorical level".into());
                }
                if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return bad("level probabilities must be in [0, 1] and sum to 1".into());
                }
            }
            _ => {}
        }
        if let Some(u) = &self.uniform {
            if self.kind.is_categorical() || !(u.low.is_finite() && u.high.is_finite() && u.low < u.high) {
                return bad("uniform override needs a numeric kind and low < high".into());
            }
        }
        Ok(())
    }

    /// Index of a categorical level (or `"0"`/`"1"` for binaries).
    pub fn level_index(&self, level: &str) -> Option<usize> {
        match &self.kind {
            FeatureKind::Categorical { levels, .. } => levels.iter().position(|l| l == level),
            FeatureKind::Binary => match level {
                "0" => Some(0),
                "1" => Some(1),
                _ => None,
            },
            _ => None,
        }
    }
}

/// Mixture of clean and sparse records; see [`FeatureSchema::missing_rates`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparseRecords {
    pub rate: f64,
    pub concentration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSchema {
    pub features: Vec<FeatureSpec>,
    pub target_name: String,
    /// Indexed by [`TargetLevel::index`].
    pub target_mix: [f64; 3],
    pub sparse_records: Option<SparseRecords>,
}

#[derive(Serialize, Deserialize)]
struct SchemaFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    format: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    version: Option<u32>,
    target_name: String,
    target_mix: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sparse_records: Option<SparseRecords>,
    features: Vec<FeatureEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureEntry {
    name: String,
    kind: String,
    #[serde(default)]
    mean: f64,
    #[serde(default)]
    std: f64,
    missing_pct: f64,
    na_pct: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    levels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    level_probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    uniform: Option<UniformOverride>,
}

impl FeatureEntry {
    fn into_spec(self) -> Result<FeatureSpec> {
        let kind = match self.kind.as_str() {
            "fraction" => FeatureKind::Fraction,
            "count" => FeatureKind::Count,
            "continuous" => FeatureKind::Continuous,
            "binary" => FeatureKind::Binary,
            "categorical" => FeatureKind::Categorical {
                levels: self
                    .levels
                    .ok_or_else(|| Error::feature(&self.name, "categorical without `levels`"))?,
                probs: self
                    .level_probs
                    .ok_or_else(|| Error::feature(&self.name, "categorical without `level_probs`"))?,
            },
            other => return Err(Error::feature(&self.name, format!("unknown kind `{other}`"))),
        };
        Ok(FeatureSpec {
            name: self.name,
            kind,
            mean: self.mean,
            std: self.std,
            missing_rate: self.missing_pct / 100.0,
            na_rate: self.na_pct / 100.0,
            uniform: self.uniform,
        })
    }

    fn from_spec(f: &FeatureSpec) -> Self {
        let (levels, level_probs) = match &f.kind {
            FeatureKind::Categorical { levels, probs } => (Some(levels.clone()), Some(probs.clone())),
            _ => (None, None),
        };
        FeatureEntry {
            name: f.name.clone(),
            kind: f.kind.tag().to_string(),
            mean: f.mean,
            std: f.std,
            missing_pct: f.missing_rate * 100.0,
            na_pct: f.na_rate * 100.0,
            levels,
            level_probs,
            uniform: f.uniform,
        }
    }
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureSpec>, target_mix: [f64; 3]) -> Result<Self> {
        let s = Self {
            features,
            target_name: "LOCALITY DECISION".into(),
            target_mix,
            sparse_records: None,
        };
        s.validate()?;
        Ok(s)
    }

    /// The bundled schema transcribing the published descriptive statistics.
    pub fn lcc() -> Self {
        Self::from_json_str(LCC_SCHEMA).expect("bundled schema is valid")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: SchemaFile = serde_json::from_str(s).map_err(|e| Error::parse("schema", e.to_string()))?;
        if let Some(fmt) = &file.format {
            if fmt != SCHEMA_FORMAT {
                return Err(Error::parse("schema", format!("unexpected format `{fmt}`")));
            }
        }
        let mut target_mix = [f64::NAN; 3];
        for (k, v) in &file.target_mix {
            let level: TargetLevel = k
                .parse()
                .map_err(|_| Error::InvalidSchema(format!("unknown target level `{k}` in target_mix")))?;
            target_mix[level.index()] = *v;
        }
        if target_mix.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidSchema(
                "target_mix must list EH SUPPORT, SOME ACTION and NO ACTION".into(),
            ));
        }
        let features = file
            .features
            .into_iter()
            .map(FeatureEntry::into_spec)
            .collect::<Result<Vec<_>>>()?;
        let schema = Self {
            features,
            target_name: file.target_name,
            target_mix,
            sparse_records: file.sparse_records,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_json_string(&self) -> String {
        let file = SchemaFile {
            format: Some(SCHEMA_FORMAT.into()),
            version: Some(1),
            target_name: self.target_name.clone(),
            target_mix: TargetLevel::ALL
                .iter()
                .map(|l| (l.label().to_string(), self.target_mix[l.index()]))
                .collect(),
            sparse_records: self.sparse_records,
            features: self.features.iter().map(FeatureEntry::from_spec).collect(),
        };
        serde_json::to_string_pretty(&file).expect("schema serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::InvalidSchema("no features".into()));
        }
        let mut seen = HashSet::new();
        for f in &self.features {
            f.validate()?;
            if !seen.insert(f.name.as_str()) {
                return Err(Error::feature(&f.name, "duplicate feature name"));
            }
        }
        if seen.contains(self.target_name.as_str()) {
            return Err(Error::feature(&self.target_name, "feature name equals target name"));
        }
        if self.target_mix.iter().any(|p| !(0.0..=1.0).contains(p))
            || (self.target_mix.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidSchema(format!(
                "target_mix {:?} must be a probability vector",
                self.target_mix
            )));
        }
        if let Some(sp) = &self.sparse_records {
            if !(0.0..1.0).contains(&sp.rate) || !(0.0..=1.0).contains(&sp.concentration) {
                return Err(Error::InvalidSchema(
                    "sparse_records needs rate in [0, 1) and concentration in [0, 1]".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Per-feature MISSING probability for (clean, sparse) records.
    ///
    /// With sparse fraction `r` and concentration `c`, sparse records use
    /// `s = min(c * m / r, 1 - na)` and clean ones `(m - r * s) / (1 - r)`,
    /// so the marginal MISSING rate stays exactly `m`.
    pub fn missing_rates(&self, f: &FeatureSpec) -> (f64, f64) {
        match self.sparse_records {
            Some(sp) if sp.rate > 0.0 => {
                let sparse = (sp.concentration * f.missing_rate / sp.rate).min(1.0 - f.na_rate);
                let clean = ((f.missing_rate - sp.rate * sparse) / (1.0 - sp.rate)).max(0.0);
                (clean, sparse)
            }
            _ => (f.missing_rate, f.missing_rate),
        }
    }
}

pub fn load_schema(path: impl AsRef<Path>) -> Result<FeatureSchema> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    FeatureSchema::from_json_str(&text).map_err(|e| match e {
        Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalEntry {
    pub feature: String,
    pub level: TargetLevel,
    pub mean_shift: f64,
}

/// Label-conditional noise for one group: positives of the disadvantaged
/// group have their features drawn as if they were `flip_to`, with
/// probability `label_noise_rate`. Their recorded label stays positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBias {
    pub feature: String,
    pub disadvantaged_level: String,
    pub label_noise_rate: f64,
    #[serde(default = "default_positive")]
    pub positive_level: TargetLevel,
    #[serde(default = "default_flip_to")]
    pub flip_to: TargetLevel,
}

fn default_positive() -> TargetLevel {
    TargetLevel::EhSupport
}

fn default_flip_to() -> TargetLevel {
    TargetLevel::SomeAction
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    #[serde(default)]
    pub entries: Vec<SignalEntry>,
    #[serde(default)]
    pub group_bias: Option<GroupBias>,
}

impl SignalSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn validate(&self, schema: &FeatureSchema) -> Result<()> {
        for e in &self.entries {
            let idx = schema
                .feature_index(&e.feature)
                .ok_or_else(|| Error::feature(&e.feature, "signal refers to unknown feature"))?;
            if schema.features[idx].kind.is_categorical() {
                return Err(Error::feature(&e.feature, "mean shift on a categorical feature"));
            }
            if !e.mean_shift.is_finite() {
                return Err(Error::feature(&e.feature, "non-finite mean shift"));
            }
        }
        if let Some(g) = &self.group_bias {
            let idx = schema
                .feature_index(&g.feature)
                .ok_or_else(|| Error::feature(&g.feature, "group bias refers to unknown feature"))?;
            let spec = &schema.features[idx];
            if spec.level_index(&g.disadvantaged_level).is_none() {
                return Err(Error::feature(
                    &g.feature,
                    format!("unknown level `{}`", g.disadvantaged_level),
                ));
            }
            if !(0.0..=0.5).contains(&g.label_noise_rate) {
                return Err(Error::feature(&g.feature, "label_noise_rate must lie in [0, 0.5]"));
            }
            if g.positive_level == g.flip_to {
                return Err(Error::feature(&g.feature, "flip_to equals positive_level"));
            }
        }
        Ok(())
    }
}

/// One raw cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Value(f64),
    /// Index into a categorical feature's levels.
    Level(u32),
    Missing,
    Na,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub schema: FeatureSchema,
    /// `n` rows of `schema.len()` cells.
    pub rows: Vec<Vec<Cell>>,
    pub labels: Vec<TargetLevel>,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn class_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for l in &self.labels {
            c[l.index()] += 1;
        }
        c
    }

    /// Write the dataset CSV: feature columns then the target; MISSING is an
    /// empty field and NA the literal `NA`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = self.schema.features.iter().map(|f| f.name.as_str()).collect();
        header.push(&self.schema.target_name);
        w.write_record(&header)?;
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        for (row, label) in self.rows.iter().zip(&self.labels) {
            rec.clear();
            for (cell, f) in row.iter().zip(&self.schema.features) {
                rec.push(match (cell, &f.kind) {
                    (Cell::Missing, _) => String::new(),
                    (Cell::Na, _) => "NA".to_string(),
                    (Cell::Level(i), FeatureKind::Categorical { levels, .. }) => levels[*i as usize].clone(),
                    (Cell::Level(i), _) => i.to_string(),
                    (Cell::Value(v), _) => f64_str(*v),
                });
            }
            rec.push(label.label().to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Read a dataset CSV against `schema`. Every schema feature and the
    /// target must be present; column order may differ.
    pub fn read_csv<R: Read>(schema: &FeatureSchema, input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let mut col_of = Vec::with_capacity(schema.len());
        for f in &schema.features {
            let c = header
                .iter()
                .position(|h| h == f.name)
                .ok_or_else(|| Error::feature(&f.name, "column missing from dataset CSV"))?;
            col_of.push(c);
        }
        let target_col = header
            .iter()
            .position(|h| h == schema.target_name)
            .ok_or_else(|| Error::feature(&schema.target_name, "target column missing"))?;
        if header.len() != schema.len() + 1 {
            return Err(Error::parse(
                "dataset CSV",
                format!("{} columns, schema expects {}", header.len(), schema.len() + 1),
            ));
        }
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let mut row = Vec::with_capacity(schema.len());
            for (f, &c) in schema.features.iter().zip(&col_of) {
                let field = rec.get(c).unwrap_or("");
                row.push(
                    parse_cell(f, field).map_err(|msg| Error::feature(&f.name, format!("row {}: {msg}", line + 1)))?,
                );
            }
            labels.push(rec.get(target_col).unwrap_or("").parse()?);
            rows.push(row);
        }
        Ok(Self {
            schema: schema.clone(),
            rows,
            labels,
        })
    }

    pub fn read_csv_file(schema: &FeatureSchema, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(schema, std::io::BufReader::new(f))
    }
}

fn parse_cell(f: &FeatureSpec, field: &str) -> std::result::Result<Cell, String> {
    match field {
        "" => return Ok(Cell::Missing),
        "NA" => return Ok(Cell::Na),
        _ => {}
    }
    match &f.kind {
        FeatureKind::Categorical { levels, .. } => levels
            .iter()
            .position(|l| l == field)
            .map(|i| Cell::Level(i as u32))
            .ok_or_else(|| format!("unknown level `{field}`")),
        _ => field
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Cell::Value)
            .ok_or_else(|| format!("not a number: `{field}`")),
    }
}

/// Generate `n` records. Same inputs give an identical dataset.
pub fn synthesize(schema: &FeatureSchema, n: usize, signal: &SignalSpec, seed: u64) -> Result<RawDataset> {
    synthesize_traced(schema, n, signal, seed).map(|(d, _)| d)
}

/// As [`synthesize`], also returning the label each record's features were
/// drawn from (differs from the recorded label only under group bias).
pub fn synthesize_traced(
    schema: &FeatureSchema,
    n: usize,
    signal: &SignalSpec,
    seed: u64,
) -> Result<(RawDataset, Vec<TargetLevel>)> {
    if n == 0 {
        return Err(Error::param("n", "must be at least 1"));
    }
    schema.validate()?;
    signal.validate(schema)?;

    let p = schema.len();
    let mut shifts = vec![[0.0f64; 3]; p];
    for e in &signal.entries {
        let j = schema.feature_index(&e.feature).expect("validated");
        shifts[j][e.level.index()] += e.mean_shift;
    }
    let miss: Vec<(f64, f64)> = schema.features.iter().map(|f| schema.missing_rates(f)).collect();
    let sparse_rate = schema.sparse_records.map_or(0.0, |s| s.rate);
    let bias = signal.group_bias.as_ref().map(|g| {
        let j = schema.feature_index(&g.feature).expect("validated");
        let level = schema.features[j]
            .level_index(&g.disadvantaged_level)
            .expect("validated");
        (j, level, g)
    });

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut signal_labels = Vec::with_capacity(n);
    for _ in 0..n {
        let label = draw_label(&mut rng, &schema.target_mix);
        let sparse = rng.random::<f64>() < sparse_rate;
        let mut row = vec![Cell::Missing; p];
        let mut drawn_label = label;
        if let Some((j, level, g)) = bias {
            let f = &schema.features[j];
            row[j] = draw_cell(&mut rng, f, pick(miss[j], sparse), 0.0);
            let u = rng.random::<f64>();
            let disadvantaged = match row[j] {
                Cell::Level(i) => i as usize == level,
                Cell::Value(v) => v == level as f64,
                _ => false,
            };
            if disadvantaged && label == g.positive_level && u < g.label_noise_rate {
                drawn_label = g.flip_to;
            }
        }
        for (j, f) in schema.features.iter().enumerate() {
            if bias.is_some_and(|(bj, _, _)| bj == j) {
                continue;
            }
            row[j] = draw_cell(&mut rng, f, pick(miss[j], sparse), shifts[j][drawn_label.index()]);
        }
        rows.push(row);
        labels.push(label);
        signal_labels.push(drawn_label);
    }
    Ok((
        RawDataset {
            schema: schema.clone(),
            rows,
            labels,
        },
        signal_labels,
    ))
}

fn pick((clean, sparse): (f64, f64), is_sparse: bool) -> f64 {
    if is_sparse {
        sparse
    } else {
        clean
    }
}

fn draw_label(rng: &mut ChaCha8Rng, mix: &[f64; 3]) -> TargetLevel {
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    for level in TargetLevel::ALL {
        acc += mix[level.index()];
        if u < acc {
            return level;
        }
    }
    // u landed in the rounding slack above the cumulative sum
    *TargetLevel::ALL
        .iter()
        .rev()
        .find(|l| mix[l.index()] > 0.0)
        .unwrap_or(&TargetLevel::NoAction)
}

fn draw_cell(rng: &mut ChaCha8Rng, f: &FeatureSpec, missing_rate: f64, shift: f64) -> Cell {
    let u = rng.random::<f64>();
    if u < f.na_rate {
        return Cell::Na;
    }
    if u < f.na_rate + missing_rate {
        return Cell::Missing;
    }
    if let Some(uni) = f.uniform {
        let v = uni.low + rng.random::<f64>() * (uni.high - uni.low);
        return Cell::Value(round_to(v + shift, uni.decimals));
    }
    let mean = f.mean + shift;
    match &f.kind {
        FeatureKind::Binary => {
            let p = mean.clamp(0.0, 1.0);
            Cell::Value(if rng.random::<f64>() < p { 1.0 } else { 0.0 })
        }
        FeatureKind::Categorical { probs, .. } => {
            let u = rng.random::<f64>();
            let mut acc = 0.0;
            let mut idx = probs.len() - 1;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    idx = i;
                    break;
                }
            }
            Cell::Level(idx as u32)
        }
        kind => {
            let z: f64 = rng.sample(StandardNormal);
            let v = mean + f.std * z;
            Cell::Value(match kind {
                FeatureKind::Fraction => round_to(v.clamp(0.0, 1.0), VALUE_DECIMALS),
                FeatureKind::Count => v.round().max(0.0),
                _ => round_to(v.max(0.0), VALUE_DECIMALS),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_feature_json() -> &'static str {
        r#"{"target_name": "LOCALITY DECISION",
            "target_mix": {"EH SUPPORT": 0.331, "SOME ACTION": 0.5659, "NO ACTION": 0.1031},
            "features": [
              {"name": "IDACI", "kind": "fraction", "mean": 0.13, "std": 0.09, "missing_pct": 0.32, "na_pct": 0},
              {"name": "FSM", "kind": "binary", "mean": 0.05, "std": 0.22, "missing_pct": 6.25, "na_pct": 8.68}
            ]}"#
    }

    #[test]
    fn loads_minimal_schema() {
        let s = FeatureSchema::from_json_str(two_feature_json()).unwrap();
        assert_eq!(s.len(), 2);
        assert!((s.features[1].na_rate - 0.0868).abs() < 1e-12);
    }

    #[test]
    fn duplicate_name_rejected_with_feature_named() {
        let json = two_feature_json().replace("\"FSM\"", "\"IDACI\"");
        match FeatureSchema::from_json_str(&json) {
            Err(Error::InvalidFeature { feature, .. }) => assert_eq!(feature, "IDACI"),
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_json_is_parse_error() {
        assert!(matches!(
            FeatureSchema::from_json_str("{ not json"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn rate_overflow_rejected() {
        let json = two_feature_json().replace("\"missing_pct\": 6.25", "\"missing_pct\": 95");
        assert!(matches!(
            FeatureSchema::from_json_str(&json),
            Err(Error::InvalidFeature { .. })
        ));
    }

    #[test]
    fn bundled_schema_transcribes_table() {
        let s = FeatureSchema::lcc();
        assert_eq!(s.len(), 149);
        let idaci = &s.features[s.feature_index("IDACI").unwrap()];
        assert_eq!(idaci.kind, FeatureKind::Fraction);
        assert_eq!((idaci.mean, idaci.std), (0.13, 0.09));
        assert!((idaci.missing_rate - 0.0032).abs() < 1e-12);
        assert_eq!(idaci.na_rate, 0.0);
        let round = FeatureSchema::from_json_str(&s.to_json_string()).unwrap();
        assert_eq!(round.len(), 149);
    }

    #[test]
    fn target_level_parsing() {
        assert_eq!("eh_support".parse::<TargetLevel>().unwrap(), TargetLevel::EhSupport);
        assert_eq!("NO ACTION".parse::<TargetLevel>().unwrap(), TargetLevel::NoAction);
        assert!("MAYBE".parse::<TargetLevel>().is_err());
    }

    #[test]
    fn degenerate_binary_is_constant() {
        let f = FeatureSpec::new("ONE", FeatureKind::Binary, 1.0, 0.0);
        let s = FeatureSchema::new(vec![f], [0.3, 0.6, 0.1]).unwrap();
        let d = synthesize(&s, 500, &SignalSpec::none(), 3).unwrap();
        assert!(d.rows.iter().all(|r| r[0] == Cell::Value(1.0)));
    }

    #[test]
    fn zero_rows_rejected() {
        let s = FeatureSchema::new(
            vec![FeatureSpec::new("A", FeatureKind::Binary, 0.5, 0.5)],
            [1.0, 0.0, 0.0],
        )
        .unwrap();
        assert!(synthesize(&s, 0, &SignalSpec::none(), 1).is_err());
    }

    #[test]
    fn na_fraction_matches_rate() {
        let f = FeatureSpec::new("ABS AUTH PREV TERM", FeatureKind::Fraction, 0.05, 0.11).with_rates(0.05, 0.2259);
        let s = FeatureSchema::new(vec![f], [0.331, 0.5659, 0.1031]).unwrap();
        let d = synthesize(&s, 10_000, &SignalSpec::none(), 11).unwrap();
        let na = d.rows.iter().filter(|r| r[0] == Cell::Na).count() as f64 / 1e4;
        assert!((na - 0.2259).abs() <= 0.02, "NA fraction {na}");
    }

    #[test]
    fn signal_on_categorical_rejected() {
        let s = FeatureSchema::new(
            vec![FeatureSpec::categorical("G", &["a", "b"], &[0.5, 0.5])],
            [0.5, 0.5, 0.0],
        )
        .unwrap();
        let sig = SignalSpec {
            entries: vec![SignalEntry {
                feature: "G".into(),
                level: TargetLevel::EhSupport,
                mean_shift: 1.0,
            }],
            group_bias: None,
        };
        assert!(synthesize(&s, 10, &sig, 1).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let s = FeatureSchema::from_json_str(two_feature_json()).unwrap();
        let d = synthesize(&s, 200, &SignalSpec::none(), 5).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = RawDataset::read_csv(&s, buf.as_slice()).unwrap();
        assert_eq!(back, d);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("IDACI,FSM,LOCALITY DECISION\n"));
        assert!(text.contains(",NA,") || text.contains(",NA\n") || text.contains("NA,"));
    }

    #[test]
    fn csv_rejects_unknown_level() {
        let s = FeatureSchema::new(
            vec![FeatureSpec::categorical("G", &["a", "b"], &[0.5, 0.5])],
            [0.5, 0.5, 0.0],
        )
        .unwrap();
        let text = "G,LOCALITY DECISION\nc,EH SUPPORT\n";
        assert!(RawDataset::read_csv(&s, text.as_bytes()).is_err());
    }
}
