//! Patient-keyed feature tables and label files.
//!
//! A feature file is comma-separated text whose header starts with the
//! patient-id column followed by one column per feature. Lines starting with
//! `#` are comments (the CLI uses them for the config hash).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Read;

use ndarray::{Array2, ArrayView1};

use crate::aggregate::InstanceRow;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub ids: Vec<String>,
    pub columns: Vec<String>,
    pub data: Array2<f64>,
    index: HashMap<String, usize>,
}

impl FeatureTable {
    pub fn new(ids: Vec<String>, columns: Vec<String>, data: Array2<f64>) -> Result<Self> {
        if data.nrows() != ids.len() || data.ncols() != columns.len() {
            return Err(Error::shape(format!(
                "{}x{} data for {} ids and {} columns",
                data.nrows(),
                data.ncols(),
                ids.len(),
                columns.len()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if id.is_empty() {
                return Err(Error::invalid(format!("empty patient id at row {i}")));
            }
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate patient id `{id}`")));
            }
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature table entry {pos}")));
        }
        Ok(FeatureTable { ids, columns, data, index })
    }

    /// Columns named `{prefix}{j}`.
    pub fn with_default_columns(ids: Vec<String>, data: Array2<f64>, prefix: &str) -> Result<Self> {
        let columns = (0..data.ncols()).map(|j| format!("{prefix}{j}")).collect();
        FeatureTable::new(ids, columns, data)
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<ArrayView1<'_, f64>> {
        self.row_of(id).map(|i| self.data.row(i))
    }

    /// Rows for `ids` in that order; every id must be present.
    pub fn select_ids(&self, ids: &[String]) -> Result<FeatureTable> {
        let rows = ids
            .iter()
            .map(|id| self.row_of(id).ok_or_else(|| Error::invalid(format!("patient `{id}` not in feature table"))))
            .collect::<Result<Vec<_>>>()?;
        let data = self.data.select(ndarray::Axis(0), &rows);
        FeatureTable::new(ids.to_vec(), self.columns.clone(), data)
    }

    pub fn to_csv(&self, id_header: &str) -> String {
        let mut out = String::new();
        out.push_str(id_header);
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (id, row) in self.ids.iter().zip(self.data.rows()) {
            out.push_str(id);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

fn parse_number(cell: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
        row,
        message: format!("column `{column}`: `{cell}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse { row, message: format!("column `{column}`: non-finite value `{cell}`") });
    }
    Ok(v)
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).flexible(true).from_reader(r)
}

fn line_of(rec: &csv::StringRecord, fallback: usize) -> usize {
    rec.position().map_or(fallback, |p| p.line() as usize)
}

/// Read a feature file and check it has exactly `expected_width` feature
/// columns, when given. Errors carry 1-based line numbers.
pub fn ingest_features<R: Read>(input: R, expected_width: Option<usize>) -> Result<FeatureTable> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::Format("feature file has no header".into()));
    }
    let columns: Vec<String> = headers.iter().skip(1).map(|h| h.trim().to_string()).collect();
    if let Some(w) = expected_width {
        if columns.len() != w {
            return Err(Error::shape(format!("feature file has {} feature columns, expected {w}", columns.len())));
        }
    }
    let width = columns.len();
    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = line_of(&rec, i + 2);
        if rec.len() != width + 1 {
            return Err(Error::Parse {
                row: line,
                message: format!("{} feature cells, expected {width}", rec.len().saturating_sub(1)),
            });
        }
        let id = rec[0].trim().to_string();
        if id.is_empty() {
            return Err(Error::Parse { row: line, message: "empty patient id".into() });
        }
        if let Some(prev) = seen.insert(id.clone(), line) {
            return Err(Error::Parse { row: line, message: format!("duplicate patient id `{id}` (first at line {prev})") });
        }
        for (j, cell) in rec.iter().skip(1).enumerate() {
            values.push(parse_number(cell, line, &columns[j])?);
        }
        ids.push(id);
    }
    let data = Array2::from_shape_vec((ids.len(), width), values).map_err(|e| Error::shape(e.to_string()))?;
    FeatureTable::new(ids, columns, data)
}

/// Binary labels keyed by patient id, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTable {
    pub ids: Vec<String>,
    pub labels: Vec<bool>,
    index: HashMap<String, usize>,
}

impl LabelTable {
    pub fn new(ids: Vec<String>, labels: Vec<bool>) -> Result<Self> {
        if ids.len() != labels.len() {
            return Err(Error::shape(format!("{} ids vs {} labels", ids.len(), labels.len())));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate patient id `{id}` in labels")));
            }
        }
        Ok(LabelTable { ids, labels, index })
    }

    pub fn get(&self, id: &str) -> Option<bool> {
        self.index.get(id).map(|&i| self.labels[i])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("patient_id,label\n");
        for (id, &l) in self.ids.iter().zip(&self.labels) {
            let _ = writeln!(out, "{id},{}", l as u8);
        }
        out
    }
}

pub fn parse_label(cell: &str) -> Option<bool> {
    match cell.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "1.0" => Some(true),
        "0" | "false" | "no" | "0.0" => Some(false),
        _ => None,
    }
}

/// Two-column `patient_id,label` file.
pub fn read_labels<R: Read>(input: R) -> Result<LabelTable> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    if headers.len() != 2 {
        return Err(Error::Format(format!("label file needs 2 columns, found {}", headers.len())));
    }
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut seen = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = line_of(&rec, i + 2);
        if rec.len() != 2 {
            return Err(Error::Parse { row: line, message: format!("{} cells, expected 2", rec.len()) });
        }
        let id = rec[0].trim().to_string();
        if id.is_empty() {
            return Err(Error::Parse { row: line, message: "empty patient id".into() });
        }
        if seen.insert(id.clone(), line).is_some() {
            return Err(Error::Parse { row: line, message: format!("duplicate patient id `{id}`") });
        }
        let label = parse_label(&rec[1])
            .ok_or_else(|| Error::Parse { row: line, message: format!("label `{}` is not binary", &rec[1]) })?;
        ids.push(id);
        labels.push(label);
    }
    LabelTable::new(ids, labels)
}

/// Instance-level embedding file: `patient_id`, optional `group` and
/// `weight` columns, then feature columns.
pub fn read_instances<R: Read>(input: R) -> Result<(Vec<String>, Vec<InstanceRow>)> {
    let mut rdr = reader(input);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers.first().map(String::as_str) != Some("patient_id") {
        return Err(Error::Format("instance file must start with a `patient_id` column".into()));
    }
    let group_col = headers.iter().position(|h| h == "group");
    let weight_col = headers.iter().position(|h| h == "weight");
    let feature_cols: Vec<usize> = (1..headers.len()).filter(|c| Some(*c) != group_col && Some(*c) != weight_col).collect();
    if feature_cols.is_empty() {
        return Err(Error::Format("instance file has no feature columns".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = line_of(&rec, i + 2);
        if rec.len() != headers.len() {
            return Err(Error::Parse { row: line, message: format!("{} cells, expected {}", rec.len(), headers.len()) });
        }
        let patient_id = rec[0].trim().to_string();
        if patient_id.is_empty() {
            return Err(Error::Parse { row: line, message: "empty patient id".into() });
        }
        let values = feature_cols
            .iter()
            .map(|&c| parse_number(&rec[c], line, &headers[c]))
            .collect::<Result<Vec<_>>>()?;
        rows.push(InstanceRow {
            patient_id,
            group: group_col.map(|c| rec[c].trim().to_string()),
            weight: weight_col.map(|c| parse_number(&rec[c], line, "weight")).transpose()?,
            values,
        });
    }
    let names = feature_cols.iter().map(|&c| headers[c].clone()).collect();
    Ok((names, rows))
}
