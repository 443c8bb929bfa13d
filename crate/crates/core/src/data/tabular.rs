use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetMeta, Provenance};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureColumn {
    pub name: String,
    pub kind: ColumnKind,
}

/// Column roles. A protected attribute may be listed both as a bias column
/// and as a feature, which is what makes counterfactual flipping possible;
/// the target must not appear anywhere else.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularSchema {
    pub feature_columns: Vec<FeatureColumn>,
    pub target_column: String,
    pub bias_columns: Vec<String>,
}

impl TabularSchema {
    pub fn validate(&self) -> Result<()> {
        if self.feature_columns.is_empty() || self.bias_columns.is_empty() {
            return Err(Error::Config(
                "schema needs at least one feature and one bias column".into(),
            ));
        }
        let mut seen = HashSet::new();
        for f in &self.feature_columns {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Config(format!("feature column {} listed twice", f.name)));
            }
        }
        let mut bias_seen = HashSet::new();
        for b in &self.bias_columns {
            if !bias_seen.insert(b.as_str()) {
                return Err(Error::Config(format!("bias column {b} listed twice")));
            }
        }
        if seen.contains(self.target_column.as_str()) || bias_seen.contains(self.target_column.as_str()) {
            return Err(Error::Config(format!(
                "target column {} also has another role",
                self.target_column
            )));
        }
        Ok(())
    }

    // Distinct columns in read order: features, then target, then bias-only.
    fn columns(&self) -> Vec<&str> {
        let mut cols: Vec<&str> = self.feature_columns.iter().map(|f| f.name.as_str()).collect();
        cols.push(&self.target_column);
        for b in &self.bias_columns {
            if !cols.contains(&b.as_str()) {
                cols.push(b);
            }
        }
        cols
    }
}

/// Where one schema feature lives in the encoded vector, plus its fitted
/// encoding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSlot {
    pub name: String,
    pub kind: ColumnKind,
    pub offset: usize,
    pub width: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
    /// Standardized encodings of raw 0 and 1, for numeric columns whose
    /// training values are exactly {0, 1}.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binary_codes: Option<[f64; 2]>,
}

struct RawRow {
    line: usize,
    cells: Vec<String>,
}

fn read_rows(path: &Path, schema: &TabularSchema) -> Result<Vec<RawRow>> {
    let ingest = |row, message: String| Error::Ingestion { row, message };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ingest(0, format!("{}: {e}", path.display())))?;
    let header = rdr.headers().map_err(|e| ingest(1, e.to_string()))?.clone();
    let idx: Vec<usize> = schema
        .columns()
        .into_iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| ingest(1, format!("unknown column {c}")))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            ingest(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        rows.push(RawRow {
            line,
            cells: idx.iter().map(|&i| rec[i].to_string()).collect(),
        });
    }
    if rows.is_empty() {
        return Err(ingest(1, format!("{}: no data rows", path.display())));
    }
    Ok(rows)
}

fn parse_num(row: &RawRow, col: usize, name: &str) -> Result<f64> {
    let s = &row.cells[col];
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Ingestion {
            row: row.line,
            message: format!("column {name}: cannot parse {s:?} as a number"),
        })
}

struct Encoder {
    schema: TabularSchema,
    slots: Vec<FeatureSlot>,
    x_dim: usize,
    target_values: Vec<String>,
    bias_values: Vec<Vec<String>>,
    // Position of each bias column within RawRow::cells.
    bias_cols: Vec<usize>,
}

impl Encoder {
    fn fit(schema: &TabularSchema, rows: &[RawRow]) -> Result<Self> {
        let cols = schema.columns();
        let mut slots = Vec::new();
        let mut offset = 0;
        for (j, f) in schema.feature_columns.iter().enumerate() {
            let slot = match f.kind {
                ColumnKind::Numeric => {
                    let vals: Vec<f64> = rows
                        .iter()
                        .map(|r| parse_num(r, j, &f.name))
                        .collect::<Result<_>>()?;
                    let n = vals.len() as f64;
                    let mean = vals.iter().sum::<f64>() / n;
                    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    // A constant column maps to zero rather than dividing by zero.
                    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
                    let binary = vals.iter().all(|&v| v == 0.0 || v == 1.0)
                        && vals.contains(&0.0)
                        && vals.contains(&1.0);
                    FeatureSlot {
                        name: f.name.clone(),
                        kind: f.kind,
                        offset,
                        width: 1,
                        categories: Vec::new(),
                        mean: Some(mean),
                        std: Some(std),
                        binary_codes: binary.then(|| [(0.0 - mean) / std, (1.0 - mean) / std]),
                    }
                }
                ColumnKind::Categorical => {
                    let mut categories: Vec<String> = Vec::new();
                    for r in rows {
                        if !categories.contains(&r.cells[j]) {
                            categories.push(r.cells[j].clone());
                        }
                    }
                    FeatureSlot {
                        name: f.name.clone(),
                        kind: f.kind,
                        offset,
                        width: categories.len(),
                        categories,
                        mean: None,
                        std: None,
                        binary_codes: None,
                    }
                }
            };
            offset += slot.width;
            slots.push(slot);
        }
        // Label columns use sorted value order so the mapping does not depend
        // on row order.
        let distinct = |c: usize| -> Vec<String> {
            rows.iter()
                .map(|r| r.cells[c].clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        };
        let target_col = schema.feature_columns.len();
        let bias_cols: Vec<usize> = schema
            .bias_columns
            .iter()
            .map(|b| cols.iter().position(|c| c == b).expect("schema column"))
            .collect();
        Ok(Self {
            schema: schema.clone(),
            slots,
            x_dim: offset,
            target_values: distinct(target_col),
            bias_values: bias_cols.iter().map(|&c| distinct(c)).collect(),
            bias_cols,
        })
    }

    fn encode(&self, rows: &[RawRow]) -> Result<Dataset> {
        let n = rows.len();
        let mut x = vec![0.0; n * self.x_dim];
        let mut y = Vec::with_capacity(n);
        let mut bias = Vec::with_capacity(n * self.bias_cols.len());
        let lookup = |vals: &[String], row: &RawRow, c: usize, what: &str| -> Result<usize> {
            vals.iter().position(|v| *v == row.cells[c]).ok_or_else(|| Error::Ingestion {
                row: row.line,
                message: format!("{what} value {:?} not seen in training data", row.cells[c]),
            })
        };
        for (i, row) in rows.iter().enumerate() {
            let xi = &mut x[i * self.x_dim..(i + 1) * self.x_dim];
            for (j, slot) in self.slots.iter().enumerate() {
                match slot.kind {
                    ColumnKind::Numeric => {
                        let v = parse_num(row, j, &slot.name)?;
                        xi[slot.offset] = (v - slot.mean.unwrap_or(0.0)) / slot.std.unwrap_or(1.0);
                    }
                    // Unseen categories encode as all zeros.
                    ColumnKind::Categorical => {
                        if let Some(k) = slot.categories.iter().position(|c| *c == row.cells[j]) {
                            xi[slot.offset + k] = 1.0;
                        }
                    }
                }
            }
            y.push(lookup(&self.target_values, row, self.schema.feature_columns.len(), "target")?);
            for (k, &c) in self.bias_cols.iter().enumerate() {
                bias.push(lookup(&self.bias_values[k], row, c, "bias")? as i32);
            }
        }
        let meta = DatasetMeta {
            n,
            x_dim: self.x_dim,
            bias_arity: self.bias_cols.len(),
            num_classes: self.target_values.len(),
            bias_cardinalities: self.bias_values.iter().map(Vec::len).collect(),
            provenance: Provenance::Tabular {
                schema: self.schema.clone(),
                features: self.slots.clone(),
                target_values: self.target_values.clone(),
                bias_values: self.bias_values.clone(),
            },
        };
        Dataset::new(Tensor::new(vec![n, self.x_dim], x)?, y, bias, meta)
    }
}

/// Loads one CSV, fitting the encoding on the file itself.
pub fn load_tabular(path: &Path, schema: &TabularSchema) -> Result<Dataset> {
    schema.validate()?;
    let rows = read_rows(path, schema)?;
    Encoder::fit(schema, &rows)?.encode(&rows)
}

/// Loads separate train and test CSVs; the encoding is fitted on train only.
pub fn load_tabular_split(
    train: &Path,
    test: &Path,
    schema: &TabularSchema,
) -> Result<(Dataset, Dataset)> {
    schema.validate()?;
    let tr = read_rows(train, schema)?;
    let te = read_rows(test, schema)?;
    let enc = Encoder::fit(schema, &tr)?;
    Ok((enc.encode(&tr)?, enc.encode(&te)?))
}

/// Splits one CSV into train/test by a seeded shuffle, then encodes both with
/// statistics fitted on the train part.
pub fn load_tabular_holdout(
    path: &Path,
    schema: &TabularSchema,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    schema.validate()?;
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut rows = read_rows(path, schema)?;
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((rows.len() as f64) * test_fraction).round() as usize;
    if n_test == 0 || n_test >= rows.len() {
        return Err(Error::Data(format!(
            "{} rows cannot be split with test fraction {test_fraction}",
            rows.len()
        )));
    }
    let te = rows.split_off(rows.len() - n_test);
    let enc = Encoder::fit(schema, &rows)?;
    Ok((enc.encode(&rows)?, enc.encode(&te)?))
}

/// Returns a copy with the binary feature `column` toggled in every row.
pub fn flip_attribute(ds: &Dataset, column: &str) -> Result<Dataset> {
    let Provenance::Tabular { features, .. } = &ds.meta.provenance else {
        return Err(Error::Flip(format!("{column}: dataset has no tabular features")));
    };
    let slot = features
        .iter()
        .find(|s| s.name == column)
        .ok_or_else(|| Error::Flip(format!("{column} is not a feature column")))?;
    let mut out = ds.clone();
    let d = ds.x_dim();
    let data = out.x.data_mut();
    match (slot.kind, slot.width, slot.binary_codes) {
        (ColumnKind::Categorical, 2, _) => {
            for row in data.chunks_mut(d) {
                row.swap(slot.offset, slot.offset + 1);
            }
        }
        (ColumnKind::Numeric, _, Some([a, b])) => {
            let mut swaps: HashMap<u64, f64> = HashMap::new();
            swaps.insert(a.to_bits(), b);
            swaps.insert(b.to_bits(), a);
            for (i, row) in data.chunks_mut(d).enumerate() {
                let v = &mut row[slot.offset];
                *v = *swaps.get(&v.to_bits()).ok_or_else(|| {
                    Error::Flip(format!("{column}: row {i} holds non-binary value {v}"))
                })?;
            }
        }
        _ => return Err(Error::Flip(format!("{column} is not binary-encoded"))),
    }
    Ok(out)
}
