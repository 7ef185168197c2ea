//! Labeled datasets, schema-driven CSV ingestion, label construction and
//! horizontal partitioning across parties.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrixkit::{random_permutation, select_rows, Matrix, RandomSource};

/// Cells treated as missing values. Rows containing one are dropped.
pub const MISSING_TOKENS: &[&str] = &["", "NA", "na", "N/A", "NaN", "nan", "."];

/// Column layout of a dataset.
///
/// On disk this is a small TOML file:
///
/// ```toml
/// features = ["sex", "age", "weight", "smoker"]
/// label = "time"
/// label_threshold = 100.0        # label = 1 iff value >= threshold
/// # positive_value = "1"         # or: label = 1 iff cell equals this value
///
/// [categorical_maps.sex]
/// male = 1
/// female = 0
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSchema {
    pub features: Vec<String>,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub categorical_maps: BTreeMap<String, BTreeMap<String, f64>>,
}

impl FeatureSchema {
    pub fn new(features: &[&str], label: &str) -> Result<Self> {
        let schema = Self {
            features: features.iter().map(|s| s.to_string()).collect(),
            label: label.to_string(),
            positive_value: Some("1".into()),
            label_threshold: None,
            categorical_maps: BTreeMap::new(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for f in &self.features {
            if !seen.insert(f.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name `{f}`")));
            }
        }
        if self.features.is_empty() {
            return Err(Error::Schema("no features declared".into()));
        }
        if seen.contains(self.label.as_str()) {
            return Err(Error::Schema(format!(
                "label `{}` is also listed as a feature",
                self.label
            )));
        }
        if self.positive_value.is_some() && self.label_threshold.is_some() {
            return Err(Error::Schema(
                "set at most one of `positive_value` and `label_threshold`".into(),
            ));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let schema: Self =
            toml::from_str(text).map_err(|e| Error::Schema(format!("schema file: {e}")))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    /// Schema of the files [`write_csv`] produces from data read with this
    /// schema: features already numeric, label already 0/1.
    pub fn encoded(&self) -> Self {
        Self {
            features: self.features.clone(),
            label: self.label.clone(),
            positive_value: Some("1".into()),
            label_threshold: None,
            categorical_maps: BTreeMap::new(),
        }
    }

    fn label_is_positive(&self, cell: &str) -> std::result::Result<bool, String> {
        if let Some(threshold) = self.label_threshold {
            let t = cell
                .parse::<f64>()
                .map_err(|_| format!("`{cell}` is not a number"))?;
            return Ok(binarize_survival_label(&[t], threshold)[0]);
        }
        let positive = self.positive_value.as_deref().unwrap_or("1");
        if cell == positive {
            return Ok(true);
        }
        match (cell.parse::<f64>(), positive.parse::<f64>()) {
            (Ok(a), Ok(b)) => Ok(a == b),
            _ => Ok(false),
        }
    }
}

/// Feature matrix `X` (n × m) with label matrix `Y` (n × ℓ).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub x: Matrix,
    pub y: Matrix,
    pub schema: FeatureSchema,
}

impl LabeledDataset {
    pub fn new(x: Matrix, y: Matrix, schema: FeatureSchema) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::InvalidShape(format!(
                "X has {} rows, Y has {}",
                x.nrows(),
                y.nrows()
            )));
        }
        if x.ncols() != schema.features.len() {
            return Err(Error::InvalidShape(format!(
                "X has {} columns, schema declares {} features",
                x.ncols(),
                schema.features.len()
            )));
        }
        if !y.iter().all(|&v| v == 0.0 || v == 1.0) {
            return Err(Error::InvalidInput("label entries must be 0 or 1".into()));
        }
        if y.ncols() >= 2 && y.row_iter().any(|r| r.sum() != 1.0) {
            return Err(Error::InvalidInput("label rows must be one-hot".into()));
        }
        Ok(Self { x, y, schema })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn num_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            x: select_rows(&self.x, rows),
            y: select_rows(&self.y, rows),
            schema: self.schema.clone(),
        }
    }

    /// Positive-class indicator per row: column 0 when ℓ = 1, otherwise
    /// column 1 of the one-hot encoding.
    pub fn positive_labels(&self) -> Vec<bool> {
        let col = positive_column(self.y.ncols());
        self.y.column(col).iter().map(|&v| v == 1.0).collect()
    }
}

/// Column holding the positive-class score for an ℓ-column label matrix.
pub fn positive_column(num_label_cols: usize) -> usize {
    if num_label_cols >= 2 {
        1
    } else {
        0
    }
}

/// What `load_csv` kept and dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_dropped: usize,
    pub rows_kept: usize,
}

pub fn load_csv(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<(LabeledDataset, LoadReport)> {
    let file = fs::File::open(path.as_ref())?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &FeatureSchema) -> Result<(LabeledDataset, LoadReport)> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("cannot read header: {e}")))?
        .clone();
    let position = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let feature_idx = schema
        .features
        .iter()
        .map(|f| position(f))
        .collect::<Result<Vec<_>>>()?;
    let label_idx = position(&schema.label)?;

    let m = feature_idx.len();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut report = LoadReport::default();

    for (k, record) in rdr.records().enumerate() {
        // Row numbers are 1-based and count the header line.
        let row = k + 2;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        report.rows_read += 1;

        let cells: Vec<&str> = feature_idx
            .iter()
            .chain(std::iter::once(&label_idx))
            .map(|&i| record.get(i).unwrap_or(""))
            .collect();
        if cells.iter().any(|c| MISSING_TOKENS.contains(c)) {
            report.rows_dropped += 1;
            continue;
        }

        for (name, cell) in schema.features.iter().zip(&cells[..m]) {
            values.push(parse_cell(schema, name, cell, row)?);
        }
        let positive = schema
            .label_is_positive(cells[m])
            .map_err(|message| Error::Parse {
                row,
                column: schema.label.clone(),
                message,
            })?;
        labels.push(positive);
        report.rows_kept += 1;
    }

    let n = labels.len();
    let x = Matrix::from_row_slice(n, m, &values);
    let dataset = LabeledDataset::new(x, binary_labels(&labels), schema.clone())?;
    Ok((dataset, report))
}

fn parse_cell(schema: &FeatureSchema, column: &str, cell: &str, row: usize) -> Result<f64> {
    if let Some(map) = schema.categorical_maps.get(column) {
        return map.get(cell).copied().ok_or_else(|| Error::Parse {
            row,
            column: column.to_string(),
            message: format!("`{cell}` is not in the categorical map"),
        });
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse {
            row,
            column: column.to_string(),
            message: format!("`{cell}` is not a finite number"),
        }),
    }
}

/// Write a dataset as CSV: feature columns then the label column (0/1).
pub fn write_csv(path: impl AsRef<Path>, data: &LabeledDataset) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(csv_io)?;
    let mut header = data.schema.features.clone();
    header.push(data.schema.label.clone());
    wtr.write_record(&header).map_err(csv_io)?;
    let labels = data.positive_labels();
    for (i, &positive) in labels.iter().enumerate() {
        let mut rec: Vec<String> = data.x.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(if positive { "1" } else { "0" }.into());
        wtr.write_record(&rec).map_err(csv_io)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Write a bare numeric matrix as CSV with `c0..c{m-1}` headers.
pub fn write_matrix_csv(path: impl AsRef<Path>, a: &Matrix) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(csv_io)?;
    wtr.write_record((0..a.ncols()).map(|j| format!("c{j}")))
        .map_err(csv_io)?;
    for row in a.row_iter() {
        wtr.write_record(row.iter().map(|v| v.to_string()))
            .map_err(csv_io)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Read a headed, all-numeric CSV into a matrix.
pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<Matrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_io)?;
    let cols = rdr.headers().map_err(csv_io)?.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for (k, record) in rdr.records().enumerate() {
        let record = record.map_err(csv_io)?;
        for (j, cell) in record.iter().enumerate() {
            let v = cell.parse::<f64>().map_err(|_| Error::Parse {
                row: k + 2,
                column: format!("c{j}"),
                message: format!("`{cell}` is not a number"),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if values.len() != rows * cols {
        return Err(Error::InvalidShape("ragged matrix CSV".into()));
    }
    Ok(Matrix::from_row_slice(rows, cols, &values))
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// `y_i = 1` iff `t_i >= threshold`.
pub fn binarize_survival_label(times: &[f64], threshold: f64) -> Vec<bool> {
    times.iter().map(|&t| t >= threshold).collect()
}

pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Matrix> {
    let mut out = Matrix::zeros(labels.len(), num_classes);
    for (i, &c) in labels.iter().enumerate() {
        if c >= num_classes {
            return Err(Error::InvalidLabel {
                label: c,
                num_classes,
            });
        }
        out[(i, c)] = 1.0;
    }
    Ok(out)
}

/// Index of the largest entry per row (first on ties).
pub fn argmax_rows(y: &Matrix) -> Vec<usize> {
    y.row_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                .0
        })
        .collect()
}

/// Single-column 0/1 label matrix, the representation used for binary tasks.
pub fn binary_labels(labels: &[bool]) -> Matrix {
    Matrix::from_iterator(labels.len(), 1, labels.iter().map(|&b| f64::from(u8::from(b))))
}

/// Disjoint row subsets of a source dataset, one per party, plus the rows
/// nobody received.
#[derive(Debug, Clone)]
pub struct PartyPartition {
    pub parties: Vec<LabeledDataset>,
    /// Source row indices held by each party, in within-party order.
    pub party_rows: Vec<Vec<usize>>,
    /// Source rows left over, available for test sets.
    pub holdout: Vec<usize>,
}

impl PartyPartition {
    /// For each source row: `Some((party, row within party))` or `None` when
    /// it is in the holdout pool.
    pub fn assignment(&self, n: usize) -> Vec<Option<(usize, usize)>> {
        let mut out = vec![None; n];
        for (p, rows) in self.party_rows.iter().enumerate() {
            for (k, &src) in rows.iter().enumerate() {
                out[src] = Some((p, k));
            }
        }
        out
    }
}

pub fn horizontal_split(data: &LabeledDataset, sizes: &[usize], src: &mut RandomSource) -> Result<PartyPartition> {
    let n = data.len();
    let total: usize = sizes.iter().sum();
    if total > n {
        return Err(Error::InsufficientData(format!(
            "party sizes sum to {total} but the dataset has {n} rows"
        )));
    }
    let order = random_permutation(n, src);
    let order = order.as_slice();
    let mut party_rows = Vec::with_capacity(sizes.len());
    let mut offset = 0;
    for &s in sizes {
        party_rows.push(order[offset..offset + s].to_vec());
        offset += s;
    }
    let holdout = order[offset..].to_vec();
    let parties = party_rows.iter().map(|rows| data.subset(rows)).collect();
    Ok(PartyPartition {
        parties,
        party_rows,
        holdout,
    })
}

/// Coefficients of the surrogate hospital generator.
///
/// Blood pressures are latent linear responses to the four observed
/// features plus Gaussian noise; they are used for the label and then
/// discarded.
#[derive(Debug, Clone, PartialEq)]
pub struct HospitalModel {
    pub male_rate: f64,
    pub smoker_rate: f64,
    pub age_range: (f64, f64),
    pub weight_male: (f64, f64),
    pub weight_female: (f64, f64),
    pub sbp_base: f64,
    pub dbp_base: f64,
    /// (age, weight, smoker, sex) effects on SBP.
    pub sbp_effects: [f64; 4],
    /// (age, weight, smoker, sex) effects on DBP.
    pub dbp_effects: [f64; 4],
    pub sbp_noise: f64,
    pub dbp_noise: f64,
}

impl Default for HospitalModel {
    fn default() -> Self {
        Self {
            male_rate: 0.47,
            smoker_rate: 0.34,
            age_range: (25.0, 50.0),
            weight_male: (180.0, 10.0),
            weight_female: (130.0, 9.0),
            sbp_base: 120.0,
            dbp_base: 74.0,
            sbp_effects: [0.6, 0.15, 4.0, 1.0],
            dbp_effects: [0.45, 0.12, 3.0, 0.5],
            sbp_noise: 10.0,
            dbp_noise: 8.0,
        }
    }
}

pub fn hospital_schema() -> FeatureSchema {
    FeatureSchema::new(&["sex", "age", "weight", "smoker"], "high_bp").expect("static schema")
}

pub fn synth_hospital(n: usize, src: &mut RandomSource) -> Result<LabeledDataset> {
    synth_hospital_with(n, &HospitalModel::default(), src)
}

pub fn synth_hospital_with(n: usize, model: &HospitalModel, src: &mut RandomSource) -> Result<LabeledDataset> {
    if n < 4 {
        return Err(Error::InsufficientSamples { needed: 4, got: n });
    }
    let normal = |mean: f64, sd: f64| Normal::new(mean, sd).expect("positive sd");
    let sbp_noise = normal(0.0, model.sbp_noise);
    let dbp_noise = normal(0.0, model.dbp_noise);
    let w_male = normal(model.weight_male.0, model.weight_male.1);
    let w_female = normal(model.weight_female.0, model.weight_female.1);
    let age_mid = (model.age_range.0 + model.age_range.1) / 2.0;
    let w_mid = (model.weight_male.0 + model.weight_female.0) / 2.0;

    let mut x = Matrix::zeros(n, 4);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let male = src.random_bool(model.male_rate);
        let smoker = src.random_bool(model.smoker_rate);
        let age = src.random_range(model.age_range.0..=model.age_range.1).round();
        let weight = if male { w_male.sample(src) } else { w_female.sample(src) }.round();
        let sex = f64::from(u8::from(male));
        let smk = f64::from(u8::from(smoker));
        let centered = [age - age_mid, weight - w_mid, smk, sex];
        let dot = |e: &[f64; 4]| e.iter().zip(&centered).map(|(a, b)| a * b).sum::<f64>();
        let sbp = model.sbp_base + dot(&model.sbp_effects) + sbp_noise.sample(src);
        let dbp = model.dbp_base + dot(&model.dbp_effects) + dbp_noise.sample(src);
        x[(i, 0)] = sex;
        x[(i, 1)] = age;
        x[(i, 2)] = weight;
        x[(i, 3)] = smk;
        labels.push(sbp >= 140.0 || dbp >= 80.0);
    }
    LabeledDataset::new(x, binary_labels(&labels), hospital_schema())
}
