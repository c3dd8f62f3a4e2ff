//! Cleaning and encoding: sparse-record removal, MISSING -> 0, NA indicator
//! columns, one-hot expansion, and the sensitive-group bins used by audits.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{check_len, Error, Result};
use crate::fmt::f64_str;
use crate::matrix::Matrix;
use crate::schema::{Cell, FeatureKind, FeatureSchema, RawDataset, TargetLevel};

pub const DEFAULT_DROP_THRESHOLD: f64 = 0.30;

pub const GENDER: &str = "GENDER";
pub const IDACI_CLASS: &str = "IDACI_CLASS";
pub const AGE_CLASS: &str = "AGE_CLASS";
pub const ATTENDANCE_BIN: &str = "ATTENDANCE_BIN";

/// Raw feature names the sensitive groups are derived from.
#[derive(Debug, Clone)]
pub struct SensitiveSources {
    pub gender: String,
    pub idaci: String,
    pub age: String,
    pub attendance: String,
}

impl Default for SensitiveSources {
    fn default() -> Self {
        Self {
            gender: "GENDER".into(),
            idaci: "IDACI".into(),
            age: "AGE AT LOCALITY DECISION".into(),
            attendance: "ATTENDANCE YEAR 4".into(),
        }
    }
}

/// Fully numeric encoded dataset with a one-vs-rest label.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub column_names: Vec<String>,
    pub x: Matrix,
    pub y: Vec<bool>,
}

impl DesignMatrix {
    pub fn new(column_names: Vec<String>, x: Matrix, y: Vec<bool>) -> Result<Self> {
        check_len("column names", x.cols(), column_names.len())?;
        check_len("labels", x.rows(), y.len())?;
        Ok(Self { column_names, x, y })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    pub fn positives(&self) -> usize {
        self.y.iter().filter(|&&v| v).count()
    }

    pub fn subset(&self, idx: &[usize]) -> DesignMatrix {
        DesignMatrix {
            column_names: self.column_names.clone(),
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    /// Encoded-matrix CSV: one column per encoded feature, then `y`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = self.column_names.clone();
        header.push("y".into());
        w.write_record(&header)?;
        let mut rec = Vec::with_capacity(header.len());
        for i in 0..self.n() {
            rec.clear();
            rec.extend(self.x.row(i).iter().map(|v| f64_str(*v)));
            rec.push(if self.y[i] { "1".into() } else { "0".into() });
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.iter().next_back() != Some("y") {
            return Err(Error::parse("encoded CSV", "last column must be `y`"));
        }
        let d = header.len() - 1;
        let names: Vec<String> = header.iter().take(d).map(str::to_string).collect();
        let mut data = Vec::new();
        let mut y = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            for v in rec.iter().take(d) {
                data.push(
                    v.parse::<f64>()
                        .map_err(|_| Error::parse("encoded CSV", format!("row {}: not a number `{v}`", line + 1)))?,
                );
            }
            y.push(match rec.get(d) {
                Some("1") => true,
                Some("0") => false,
                other => {
                    return Err(Error::parse(
                        "encoded CSV",
                        format!("row {}: label {:?} is not 0/1", line + 1, other),
                    ))
                }
            });
        }
        let n = y.len();
        DesignMatrix::new(names, Matrix::from_vec(n, d, data)?, y)
    }

    pub fn read_csv_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

/// Category label per record for one sensitive feature.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupColumn {
    pub name: String,
    pub categories: Vec<String>,
    pub codes: Vec<u32>,
}

impl GroupColumn {
    /// Build from per-record labels; `order` fixes the leading categories,
    /// anything else follows sorted.
    pub fn from_labels(name: impl Into<String>, labels: &[String], order: &[&str]) -> Self {
        let mut categories: Vec<String> = order.iter().map(|s| s.to_string()).collect();
        let mut extra: Vec<&String> = labels.iter().filter(|l| !categories.iter().any(|c| c == *l)).collect();
        extra.sort();
        extra.dedup();
        categories.extend(extra.into_iter().cloned());
        let codes = labels
            .iter()
            .map(|l| categories.iter().position(|c| c == l).expect("present") as u32)
            .collect();
        Self {
            name: name.into(),
            categories,
            codes,
        }
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn category_of(&self, i: usize) -> &str {
        &self.categories[self.codes[i] as usize]
    }

    pub fn subset(&self, idx: &[usize]) -> GroupColumn {
        GroupColumn {
            name: self.name.clone(),
            categories: self.categories.clone(),
            codes: idx.iter().map(|&i| self.codes[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroupAssignments {
    pub columns: Vec<GroupColumn>,
}

impl GroupAssignments {
    pub fn get(&self, name: &str) -> Result<&GroupColumn> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::UnknownFeature(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> GroupAssignments {
        GroupAssignments {
            columns: self.columns.iter().map(|c| c.subset(idx)).collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.columns.iter().map(|c| c.name.as_str()))?;
        let n = self.columns.first().map_or(0, GroupColumn::len);
        for i in 0..n {
            w.write_record(self.columns.iter().map(|c| c.category_of(i)))?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    /// Groups CSV: header of sensitive feature names, one label per cell.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let mut labels: Vec<Vec<String>> = vec![Vec::new(); header.len()];
        for rec in r.records() {
            let rec = rec?;
            for (j, v) in rec.iter().enumerate() {
                if j < labels.len() {
                    labels[j].push(v.to_string());
                }
            }
        }
        let columns = header
            .iter()
            .zip(labels)
            .map(|(name, l)| GroupColumn::from_labels(name, &l, known_order(name)))
            .collect();
        Ok(Self { columns })
    }

    pub fn read_csv_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

fn known_order(name: &str) -> &'static [&'static str] {
    match name {
        GENDER => &["male", "female", "other"],
        IDACI_CLASS => &IDACI_LABELS,
        AGE_CLASS => &AGE_LABELS,
        ATTENDANCE_BIN => &ATTENDANCE_LABELS,
        _ => &[],
    }
}

const IDACI_LABELS: [&str; 5] = ["IDACI 1", "IDACI 2", "IDACI 3", "IDACI 4", "IDACI 5"];
const AGE_LABELS: [&str; 3] = ["A", "B", "C"];
const ATTENDANCE_LABELS: [&str; 2] = ["<=0.5", ">0.5"];

/// IDACI class over [0,0.2), [0.2,0.4), [0.4,0.6), [0.6,0.8), [0.8,1.0].
pub fn idaci_class(v: f64) -> &'static str {
    if v < 0.2 {
        IDACI_LABELS[0]
    } else if v < 0.4 {
        IDACI_LABELS[1]
    } else if v < 0.6 {
        IDACI_LABELS[2]
    } else if v < 0.8 {
        IDACI_LABELS[3]
    } else {
        IDACI_LABELS[4]
    }
}

/// A below 7.5, B for 7.5..=12.5, C above.
pub fn age_class(age: f64) -> &'static str {
    if age < 7.5 {
        AGE_LABELS[0]
    } else if age <= 12.5 {
        AGE_LABELS[1]
    } else {
        AGE_LABELS[2]
    }
}

pub fn attendance_bin(v: f64) -> &'static str {
    if v <= 0.5 {
        ATTENDANCE_LABELS[0]
    } else {
        ATTENDANCE_LABELS[1]
    }
}

/// Remove records whose MISSING share of raw cells exceeds `threshold`.
/// NA cells count in the denominator only.
pub fn drop_sparse_records(raw: &RawDataset, threshold: f64) -> Result<RawDataset> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::param("threshold", "must lie in (0, 1]"));
    }
    let p = raw.schema.len() as f64;
    let keep: Vec<usize> = raw
        .rows
        .iter()
        .enumerate()
        .filter(|(_, row)| {
            let missing = row.iter().filter(|c| **c == Cell::Missing).count() as f64;
            missing / p <= threshold
        })
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "all {} records exceed the {threshold} missing threshold",
            raw.len()
        )));
    }
    Ok(RawDataset {
        schema: raw.schema.clone(),
        rows: keep.iter().map(|&i| raw.rows[i].clone()).collect(),
        labels: keep.iter().map(|&i| raw.labels[i]).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ColumnSource {
    Value(usize),
    OneHot(usize, u32),
    NaIndicator(usize),
}

fn column_layout(schema: &FeatureSchema) -> Vec<(String, ColumnSource)> {
    let mut cols = Vec::new();
    for (j, f) in schema.features.iter().enumerate() {
        match &f.kind {
            FeatureKind::Categorical { levels, .. } => {
                for (l, level) in levels.iter().enumerate() {
                    cols.push((format!("{} {}", f.name, level), ColumnSource::OneHot(j, l as u32)));
                }
            }
            _ => cols.push((f.name.clone(), ColumnSource::Value(j))),
        }
        if f.na_rate > 0.0 {
            cols.push((format!("{} NA", f.name), ColumnSource::NaIndicator(j)));
        }
    }
    cols
}

/// Encoded column names; a function of the schema alone.
pub fn encoded_columns(schema: &FeatureSchema) -> Vec<String> {
    column_layout(schema).into_iter().map(|(n, _)| n).collect()
}

/// Encode with default sensitive sources.
pub fn encode(raw: &RawDataset, target: TargetLevel) -> Result<(DesignMatrix, GroupAssignments)> {
    encode_with(raw, target, &SensitiveSources::default())
}

pub fn encode_with(
    raw: &RawDataset,
    target: TargetLevel,
    sources: &SensitiveSources,
) -> Result<(DesignMatrix, GroupAssignments)> {
    if raw.is_empty() {
        return Err(Error::EmptyDataset("nothing to encode".into()));
    }
    let layout = column_layout(&raw.schema);
    let d = layout.len();
    let n = raw.len();
    let mut x = Matrix::zeros(n, d);
    for (i, row) in raw.rows.iter().enumerate() {
        let out = x.row_mut(i);
        for (c, (_, src)) in layout.iter().enumerate() {
            out[c] = match *src {
                ColumnSource::Value(j) => match row[j] {
                    Cell::Value(v) => v,
                    Cell::Level(l) => l as f64,
                    Cell::Missing | Cell::Na => 0.0,
                },
                ColumnSource::OneHot(j, l) => f64::from(u8::from(row[j] == Cell::Level(l))),
                ColumnSource::NaIndicator(j) => f64::from(u8::from(row[j] == Cell::Na)),
            };
        }
    }
    let y = raw.labels.iter().map(|&l| l == target).collect();
    let names = layout.into_iter().map(|(n, _)| n).collect();
    let design = DesignMatrix::new(names, x, y)?;
    Ok((design, sensitive_groups(raw, sources)))
}

fn numeric_or_zero(c: Cell) -> f64 {
    match c {
        Cell::Value(v) => v,
        _ => 0.0,
    }
}

/// Group bins for whichever source features the schema has.
pub fn sensitive_groups(raw: &RawDataset, sources: &SensitiveSources) -> GroupAssignments {
    let schema = &raw.schema;
    let mut columns = Vec::new();
    if let Some(j) = schema.feature_index(&sources.gender) {
        let labels: Vec<String> = raw
            .rows
            .iter()
            .map(|r| match (&r[j], &schema.features[j].kind) {
                (Cell::Level(l), FeatureKind::Categorical { levels, .. }) => levels[*l as usize].clone(),
                _ => "unknown".to_string(),
            })
            .collect();
        let order: Vec<&str> = match &schema.features[j].kind {
            FeatureKind::Categorical { levels, .. } => levels.iter().map(String::as_str).collect(),
            _ => Vec::new(),
        };
        columns.push(GroupColumn::from_labels(GENDER, &labels, &order));
    }
    let mut binned = |source: &str, name: &str, bin: fn(f64) -> &'static str, order: &[&str]| {
        if let Some(j) = schema.feature_index(source) {
            let labels: Vec<String> = raw
                .rows
                .iter()
                .map(|r| bin(numeric_or_zero(r[j])).to_string())
                .collect();
            columns.push(GroupColumn::from_labels(name, &labels, order));
        }
    };
    binned(&sources.idaci, IDACI_CLASS, idaci_class, &IDACI_LABELS);
    binned(&sources.age, AGE_CLASS, age_class, &AGE_LABELS);
    binned(&sources.attendance, ATTENDANCE_BIN, attendance_bin, &ATTENDANCE_LABELS);
    GroupAssignments { columns }
}
