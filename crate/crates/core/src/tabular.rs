//! Clinical record preprocessing: imputation, ordinal and one-hot encoding,
//! min-max scaling, feature selection and stratified splitting.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::apportion::largest_remainder;
use crate::error::{Error, Result};
use crate::seed;

/// Default (train, validation, test) fractions when the data carries no split column.
pub const DEFAULT_SPLIT: [f64; 3] = [0.70, 0.15, 0.15];

const MISSING_MARKERS: &[&str] = &["", "na", "n/a", "nan", "null", "none", "--", "'--"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Number(f64),
    Category(String),
    Missing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClinicalRecord {
    pub case_id: String,
    pub values: BTreeMap<String, Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    /// Levels listed from lowest to highest.
    Ordinal { levels: Vec<String> },
    /// One-hot encoded with the first category dropped. Without a declared
    /// list the observed categories are used in sorted order.
    Categorical {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        categories: Option<Vec<String>>,
    },
    Identifier,
    /// Holds `train` / `val` / `test` assignments; removed from features.
    Split,
    /// Binary outcome. Numeric 0/1 cells, or category cells compared to `positive`.
    Label {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        positive: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDecl {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
    /// Treat -1 as missing (staging and mutation columns).
    #[serde(default)]
    pub sentinel: bool,
}

impl ColumnDecl {
    pub fn new(name: &str, kind: ColumnKind) -> Self {
        ColumnDecl {
            name: name.to_string(),
            kind,
            sentinel: false,
        }
    }

    pub fn with_sentinel(mut self) -> Self {
        self.sentinel = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fitted {
    Numeric { median: f64, min: f64, max: f64 },
    Ordinal { levels: Vec<String>, mode: String, min_rank: usize, max_rank: usize },
    Categorical { categories: Vec<String>, mode: String },
    Identifier,
    Split,
    Label { positive: Option<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub sentinel: bool,
    pub fitted: Fitted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn parse(s: &str) -> Option<SplitTag> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" | "training" => Some(SplitTag::Train),
            "val" | "valid" | "validation" => Some(SplitTag::Val),
            "test" | "testing" => Some(SplitTag::Test),
            _ => None,
        }
    }
}

/// Dense numeric design matrix keyed by patient.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub ids: Vec<String>,
    pub columns: Vec<String>,
    pub data: Array2<f64>,
    pub labels: Option<Vec<bool>>,
    pub split: Option<Vec<SplitTag>>,
}

impl FeatureMatrix {
    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            columns: self.columns.clone(),
            data: self.data.select(ndarray::Axis(0), indices),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            split: self.split.as_ref().map(|s| indices.iter().map(|&i| s[i]).collect()),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformOutput {
    pub matrix: FeatureMatrix,
    /// Categorical cells unseen at fit time that were replaced by the mode.
    pub unknown_categories: usize,
}

fn is_missing_marker(raw: &str) -> bool {
    MISSING_MARKERS.contains(&raw.trim().to_ascii_lowercase().as_str())
}

/// Read comma-separated clinical records. Only declared columns are kept.
pub fn read_clinical_csv<R: Read>(reader: R, id_column: &str, decls: &[ColumnDecl]) -> Result<Vec<ClinicalRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let id_idx = find(id_column).ok_or_else(|| Error::schema(id_column, "id column not found in header"))?;
    let mut positions = Vec::with_capacity(decls.len());
    for d in decls {
        let idx = find(&d.name).ok_or_else(|| Error::schema(&d.name, "declared column not found in header"))?;
        positions.push(idx);
    }

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let row = row + 2;
        let rec = rec?;
        let case_id = rec.get(id_idx).unwrap_or("").to_string();
        if case_id.is_empty() {
            return Err(Error::Parse { row, message: "empty case id".into() });
        }
        if !seen.insert(case_id.clone()) {
            return Err(Error::Parse { row, message: format!("duplicate case id `{case_id}`") });
        }
        let mut values = BTreeMap::new();
        for (d, &idx) in decls.iter().zip(&positions) {
            let raw = rec.get(idx).unwrap_or("");
            let cell = if is_missing_marker(raw) {
                Cell::Missing
            } else {
                match &d.kind {
                    ColumnKind::Numeric => match raw.parse::<f64>() {
                        Ok(v) if v.is_finite() => Cell::Number(v),
                        _ => {
                            return Err(Error::Parse {
                                row,
                                message: format!("column `{}`: `{raw}` is not a finite number", d.name),
                            })
                        }
                    },
                    ColumnKind::Label { .. } => match raw.parse::<f64>() {
                        Ok(v) => Cell::Number(v),
                        Err(_) => Cell::Category(raw.to_string()),
                    },
                    _ => Cell::Category(raw.to_string()),
                }
            };
            values.insert(d.name.clone(), cell);
        }
        records.push(ClinicalRecord { case_id, values });
    }
    Ok(records)
}

fn is_sentinel(cell: &Cell) -> bool {
    match cell {
        Cell::Number(v) => *v == -1.0,
        Cell::Category(s) => s.trim() == "-1",
        Cell::Missing => false,
    }
}

/// Cell after sentinel handling; `None` when missing.
fn present<'a>(record: &'a ClinicalRecord, name: &str, sentinel: bool) -> Option<&'a Cell> {
    match record.values.get(name) {
        None | Some(Cell::Missing) => None,
        Some(c) if sentinel && is_sentinel(c) => None,
        Some(c) => Some(c),
    }
}

fn category_text(cell: &Cell) -> String {
    match cell {
        Cell::Number(v) => v.to_string(),
        Cell::Category(s) => s.clone(),
        Cell::Missing => String::new(),
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Most frequent value; ties go to the value that sorts first.
fn mode<'a>(values: impl Iterator<Item = &'a str>) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    let best = counts.values().copied().max()?;
    counts.into_iter().find(|&(_, c)| c == best).map(|(v, _)| v.to_string())
}

/// Fit imputation, encoding and scaling statistics.
pub fn fit_schema(records: &[ClinicalRecord], decls: &[ColumnDecl]) -> Result<Vec<ColumnSchema>> {
    let mut schemas = Vec::with_capacity(decls.len());
    for d in decls {
        let cells: Vec<&Cell> = records.iter().filter_map(|r| present(r, &d.name, d.sentinel)).collect();
        let needs_values = !matches!(d.kind, ColumnKind::Identifier | ColumnKind::Split | ColumnKind::Label { .. });
        if needs_values && cells.is_empty() {
            return Err(Error::schema(&d.name, "every value is missing"));
        }
        let fitted = match &d.kind {
            ColumnKind::Numeric => {
                let mut vals = Vec::with_capacity(cells.len());
                for c in &cells {
                    match c {
                        Cell::Number(v) => vals.push(*v),
                        other => return Err(Error::schema(&d.name, format!("non-numeric cell {other:?}"))),
                    }
                }
                let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                Fitted::Numeric { median: median(&mut vals), min, max }
            }
            ColumnKind::Ordinal { levels } => {
                let mut unique = HashSet::new();
                if !levels.iter().all(|l| unique.insert(l)) {
                    return Err(Error::schema(&d.name, "ordinal levels contain duplicates"));
                }
                let texts: Vec<String> = cells.iter().map(|c| category_text(c)).collect();
                let mut ranks = Vec::with_capacity(texts.len());
                for t in &texts {
                    let rank = levels
                        .iter()
                        .position(|l| l == t)
                        .ok_or_else(|| Error::schema(&d.name, format!("unknown ordinal level `{t}`")))?;
                    ranks.push(rank);
                }
                Fitted::Ordinal {
                    levels: levels.clone(),
                    mode: mode(texts.iter().map(String::as_str)).unwrap_or_default(),
                    min_rank: *ranks.iter().min().unwrap_or(&0),
                    max_rank: *ranks.iter().max().unwrap_or(&0),
                }
            }
            ColumnKind::Categorical { categories } => {
                let texts: Vec<String> = cells.iter().map(|c| category_text(c)).collect();
                let categories = match categories {
                    Some(declared) => {
                        if let Some(bad) = texts.iter().find(|t| !declared.contains(t)) {
                            return Err(Error::schema(&d.name, format!("category `{bad}` not in declared list")));
                        }
                        declared.clone()
                    }
                    None => {
                        let mut observed: Vec<String> = texts.iter().cloned().collect::<HashSet<_>>().into_iter().collect();
                        observed.sort();
                        observed
                    }
                };
                Fitted::Categorical {
                    categories,
                    mode: mode(texts.iter().map(String::as_str)).unwrap_or_default(),
                }
            }
            ColumnKind::Identifier => Fitted::Identifier,
            ColumnKind::Split => Fitted::Split,
            ColumnKind::Label { positive } => Fitted::Label { positive: positive.clone() },
        };
        schemas.push(ColumnSchema {
            name: d.name.clone(),
            sentinel: d.sentinel,
            fitted,
        });
    }
    Ok(schemas)
}

fn scale(value: f64, min: f64, max: f64) -> f64 {
    if max > min {
        ((value - min) / (max - min)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Names of the output columns the schemas produce, in order.
pub fn output_columns(schemas: &[ColumnSchema]) -> Vec<String> {
    let mut cols = Vec::new();
    for s in schemas {
        match &s.fitted {
            Fitted::Numeric { .. } | Fitted::Ordinal { .. } => cols.push(s.name.clone()),
            Fitted::Categorical { categories, .. } => {
                cols.extend(categories.iter().skip(1).map(|c| format!("{}_{}", s.name, c)));
            }
            Fitted::Identifier | Fitted::Split | Fitted::Label { .. } => {}
        }
    }
    cols
}

fn label_value(cell: &Cell, positive: &Option<String>, column: &str) -> Result<bool> {
    match (cell, positive) {
        (Cell::Number(v), _) if *v == 1.0 => Ok(true),
        (Cell::Number(v), _) if *v == 0.0 => Ok(false),
        (Cell::Category(s), Some(p)) => Ok(s == p),
        (Cell::Number(v), Some(p)) => Ok(&v.to_string() == p),
        _ => Err(Error::schema(column, format!("label cell {cell:?} is not binary"))),
    }
}

/// Apply fitted schemas: impute, encode, scale and drop non-feature columns.
pub fn transform(records: &[ClinicalRecord], schemas: &[ColumnSchema]) -> Result<TransformOutput> {
    let columns = output_columns(schemas);
    let mut data = Array2::<f64>::zeros((records.len(), columns.len()));
    let label_schema = schemas.iter().find(|s| matches!(s.fitted, Fitted::Label { .. }));
    let split_schema = schemas.iter().find(|s| matches!(s.fitted, Fitted::Split));
    let mut labels = label_schema.map(|_| Vec::with_capacity(records.len()));
    let mut split = split_schema.map(|_| Vec::with_capacity(records.len()));
    let mut unknown_categories = 0;

    for (row, rec) in records.iter().enumerate() {
        if rec.case_id.is_empty() {
            return Err(Error::invalid(format!("record {row} has no case id")));
        }
        let mut col = 0;
        for s in schemas {
            let cell = present(rec, &s.name, s.sentinel);
            match &s.fitted {
                Fitted::Numeric { median, min, max } => {
                    let v = match cell {
                        Some(Cell::Number(v)) => *v,
                        None => *median,
                        Some(other) => {
                            return Err(Error::schema(&s.name, format!("case `{}`: non-numeric cell {other:?}", rec.case_id)))
                        }
                    };
                    data[[row, col]] = scale(v, *min, *max);
                    col += 1;
                }
                Fitted::Ordinal { levels, mode, min_rank, max_rank } => {
                    let text = cell.map_or_else(|| mode.clone(), category_text);
                    let rank = levels.iter().position(|l| *l == text).ok_or_else(|| {
                        Error::schema(&s.name, format!("case `{}`: unknown ordinal level `{text}`", rec.case_id))
                    })?;
                    data[[row, col]] = scale(rank as f64, *min_rank as f64, *max_rank as f64);
                    col += 1;
                }
                Fitted::Categorical { categories, mode } => {
                    let mut text = cell.map_or_else(|| mode.clone(), category_text);
                    if !categories.contains(&text) {
                        unknown_categories += 1;
                        text = mode.clone();
                    }
                    for (k, c) in categories.iter().enumerate().skip(1) {
                        data[[row, col + k - 1]] = if *c == text { 1.0 } else { 0.0 };
                    }
                    col += categories.len().saturating_sub(1);
                }
                Fitted::Label { positive } => {
                    let cell = cell.ok_or_else(|| Error::schema(&s.name, format!("case `{}`: missing label", rec.case_id)))?;
                    if let Some(l) = labels.as_mut() {
                        l.push(label_value(cell, positive, &s.name)?);
                    }
                }
                Fitted::Split => {
                    let tag = cell
                        .and_then(|c| SplitTag::parse(&category_text(c)))
                        .ok_or_else(|| Error::schema(&s.name, format!("case `{}`: bad split value", rec.case_id)))?;
                    if let Some(sp) = split.as_mut() {
                        sp.push(tag);
                    }
                }
                Fitted::Identifier => {}
            }
        }
    }
    if let Some((i, _)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        let (r, c) = (i / columns.len(), i % columns.len());
        return Err(Error::NonFinite(format!("case `{}`, column `{}`", records[r].case_id, columns[c])));
    }
    Ok(TransformOutput {
        matrix: FeatureMatrix {
            ids: records.iter().map(|r| r.case_id.clone()).collect(),
            columns,
            data,
            labels,
            split,
        },
        unknown_categories,
    })
}

/// Stratified (train, val, test) row indices.
///
/// Split sizes are apportioned from the fractions, then each class is
/// apportioned across splits in proportion to split size, so every per-class
/// count is within one of its exact share.
pub fn stratified_indices(labels: &[bool], fractions: [f64; 3], seed: u64) -> Result<[Vec<usize>; 3]> {
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split fractions {fractions:?} must be nonnegative and sum to 1")));
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::invalid("cannot split an empty dataset"));
    }
    let sizes = largest_remainder(n, &fractions.map(|f| f * n as f64));
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y as usize].push(i);
    }
    let n_neg = by_class[0].len();
    let neg_shares: Vec<f64> = sizes.iter().map(|&s| n_neg as f64 * s as f64 / n as f64).collect();
    let neg_counts = largest_remainder(n_neg, &neg_shares);
    let counts: [Vec<usize>; 2] = [neg_counts.clone(), sizes.iter().zip(&neg_counts).map(|(s, c)| s - c).collect()];

    for (split, &f) in fractions.iter().enumerate() {
        if f > 0.0 && (counts[0][split] == 0 || counts[1][split] == 0) && !by_class[0].is_empty() && !by_class[1].is_empty() {
            return Err(Error::invalid(format!(
                "class too small to stratify: {} negatives, {} positives for fractions {fractions:?}",
                by_class[0].len(),
                by_class[1].len()
            )));
        }
        if f > 0.0 && sizes[split] == 0 {
            return Err(Error::invalid(format!("split {split} would be empty for {n} rows")));
        }
    }

    let mut rng = seed::rng(seed);
    let mut out: [Vec<usize>; 3] = Default::default();
    for (class, members) in by_class.iter_mut().enumerate() {
        members.shuffle(&mut rng);
        let mut start = 0;
        for (split, bucket) in out.iter_mut().enumerate() {
            let take = counts[class][split];
            bucket.extend_from_slice(&members[start..start + take]);
            start += take;
        }
    }
    for bucket in &mut out {
        bucket.sort_unstable();
    }
    Ok(out)
}

/// Split a labelled matrix into (train, val, test).
pub fn split_stratified(matrix: &FeatureMatrix, fractions: [f64; 3], seed: u64) -> Result<(FeatureMatrix, FeatureMatrix, FeatureMatrix)> {
    let labels = matrix.labels.as_ref().ok_or_else(|| Error::invalid("stratified split needs labels"))?;
    let [train, val, test] = stratified_indices(labels, fractions, seed)?;
    Ok((matrix.select(&train), matrix.select(&val), matrix.select(&test)))
}

/// Split by the matrix's own split column when present, else stratified with the default fractions.
pub fn split_or_default(matrix: &FeatureMatrix, seed: u64) -> Result<(FeatureMatrix, FeatureMatrix, FeatureMatrix)> {
    match &matrix.split {
        Some(tags) => {
            let pick = |tag: SplitTag| -> Vec<usize> { (0..tags.len()).filter(|&i| tags[i] == tag).collect() };
            Ok((
                matrix.select(&pick(SplitTag::Train)),
                matrix.select(&pick(SplitTag::Val)),
                matrix.select(&pick(SplitTag::Test)),
            ))
        }
        None => split_stratified(matrix, DEFAULT_SPLIT, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: &str, cells: &[(&str, Cell)]) -> ClinicalRecord {
        ClinicalRecord {
            case_id: id.to_string(),
            values: cells.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        }
    }

    fn num(v: f64) -> Cell {
        Cell::Number(v)
    }

    fn cat(s: &str) -> Cell {
        Cell::Category(s.to_string())
    }

    fn stages() -> Vec<String> {
        ["I", "II", "III", "IV"].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn numeric_median_min_max() {
        let records = vec![
            rec("a", &[("age", num(2.0))]),
            rec("b", &[("age", Cell::Missing)]),
            rec("c", &[("age", num(4.0))]),
        ];
        let s = fit_schema(&records, &[ColumnDecl::new("age", ColumnKind::Numeric)]).unwrap();
        assert_eq!(s[0].fitted, Fitted::Numeric { median: 3.0, min: 2.0, max: 4.0 });
        let out = transform(&records, &s).unwrap();
        assert_eq!(out.matrix.data.column(0).to_vec(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn categorical_mode_and_drop_first() {
        let records = vec![
            rec("a", &[("hist", cat("yes"))]),
            rec("b", &[("hist", cat("yes"))]),
            rec("c", &[("hist", cat("no"))]),
            rec("d", &[("hist", Cell::Missing)]),
        ];
        let s = fit_schema(&records, &[ColumnDecl::new("hist", ColumnKind::Categorical { categories: None })]).unwrap();
        match &s[0].fitted {
            Fitted::Categorical { mode, .. } => assert_eq!(mode, "yes"),
            other => panic!("{other:?}"),
        }
        let out = transform(&records, &s).unwrap();
        assert_eq!(out.matrix.columns, vec!["hist_yes"]);
        assert_eq!(out.matrix.data.column(0).to_vec(), vec![1.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn gender_encodes_male_as_one() {
        let records = vec![
            rec("a", &[("gender", cat("M"))]),
            rec("b", &[("gender", cat("F"))]),
            rec("c", &[("gender", cat("M"))]),
        ];
        let s = fit_schema(&records, &[ColumnDecl::new("gender", ColumnKind::Categorical { categories: None })]).unwrap();
        let out = transform(&records, &s).unwrap();
        assert_eq!(out.matrix.columns, vec!["gender_M"]);
        assert_eq!(out.matrix.data.column(0).to_vec(), vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn ordinal_rank_then_scale() {
        let records = vec![
            rec("a", &[("stage", cat("I"))]),
            rec("b", &[("stage", cat("III"))]),
            rec("c", &[("stage", cat("IV"))]),
        ];
        let decl = ColumnDecl::new("stage", ColumnKind::Ordinal { levels: stages() });
        let s = fit_schema(&records, &[decl]).unwrap();
        match &s[0].fitted {
            Fitted::Ordinal { levels, min_rank, max_rank, .. } => {
                assert_eq!(levels, &stages());
                assert_eq!((*min_rank, *max_rank), (0, 3));
            }
            other => panic!("{other:?}"),
        }
        let out = transform(&records, &s).unwrap();
        // ranks [0, 2, 3] over a fitted rank range of 0..3
        let expected = [0.0 / 3.0, 2.0 / 3.0, 3.0 / 3.0];
        for (got, want) in out.matrix.data.column(0).iter().zip(expected) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_ordinal_level_is_an_error() {
        let records = vec![rec("a", &[("stage", cat("V"))])];
        let decl = ColumnDecl::new("stage", ColumnKind::Ordinal { levels: stages() });
        assert!(matches!(fit_schema(&records, &[decl.clone()]), Err(Error::Schema { .. })));

        let fit = fit_schema(&[rec("a", &[("stage", cat("I"))])], &[decl]).unwrap();
        assert!(transform(&records, &fit).is_err());
    }

    #[test]
    fn all_missing_column_is_named() {
        let records = vec![rec("a", &[("age", Cell::Missing)])];
        match fit_schema(&records, &[ColumnDecl::new("age", ColumnKind::Numeric)]) {
            Err(Error::Schema { column, .. }) => assert_eq!(column, "age"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sentinel_only_in_declared_columns() {
        let records = vec![
            rec("a", &[("vhl", num(-1.0)), ("delta", num(-1.0))]),
            rec("b", &[("vhl", num(1.0)), ("delta", num(1.0))]),
            rec("c", &[("vhl", num(0.0)), ("delta", num(3.0))]),
        ];
        let decls = [
            ColumnDecl::new("vhl", ColumnKind::Numeric).with_sentinel(),
            ColumnDecl::new("delta", ColumnKind::Numeric),
        ];
        let s = fit_schema(&records, &decls).unwrap();
        assert_eq!(s[0].fitted, Fitted::Numeric { median: 0.5, min: 0.0, max: 1.0 });
        assert_eq!(s[1].fitted, Fitted::Numeric { median: 1.0, min: -1.0, max: 3.0 });
    }

    #[test]
    fn unseen_category_maps_to_mode_and_is_counted() {
        let fit_records = vec![rec("a", &[("site", cat("x"))]), rec("b", &[("site", cat("y"))]), rec("c", &[("site", cat("y"))])];
        let s = fit_schema(&fit_records, &[ColumnDecl::new("site", ColumnKind::Categorical { categories: None })]).unwrap();
        let out = transform(&[rec("z", &[("site", cat("w"))])], &s).unwrap();
        assert_eq!(out.unknown_categories, 1);
        assert_eq!(out.matrix.data[[0, 0]], 1.0);
    }

    #[test]
    fn identifier_label_and_split_are_removed() {
        let records = vec![
            rec("a", &[("age", num(1.0)), ("Split", cat("train")), ("y", num(1.0))]),
            rec("b", &[("age", num(3.0)), ("Split", cat("test")), ("y", num(0.0))]),
        ];
        let decls = [
            ColumnDecl::new("age", ColumnKind::Numeric),
            ColumnDecl::new("Split", ColumnKind::Split),
            ColumnDecl::new("y", ColumnKind::Label { positive: None }),
        ];
        let s = fit_schema(&records, &decls).unwrap();
        let out = transform(&records, &s).unwrap().matrix;
        assert_eq!(out.columns, vec!["age"]);
        assert_eq!(out.labels, Some(vec![true, false]));
        assert_eq!(out.split, Some(vec![SplitTag::Train, SplitTag::Test]));
        let (train, val, test) = split_or_default(&out, 0).unwrap();
        assert_eq!((train.n_rows(), val.n_rows(), test.n_rows()), (1, 0, 1));
    }

    #[test]
    fn csv_reader_types_cells_by_declaration() {
        let text = "case_id,age,stage,gender,vital_status_12\nP1,61,III,M,1\nP2,,'--,F,0\n";
        let decls = [
            ColumnDecl::new("age", ColumnKind::Numeric),
            ColumnDecl::new("stage", ColumnKind::Ordinal { levels: stages() }),
            ColumnDecl::new("gender", ColumnKind::Categorical { categories: None }),
            ColumnDecl::new("vital_status_12", ColumnKind::Label { positive: None }),
        ];
        let recs = read_clinical_csv(text.as_bytes(), "case_id", &decls).unwrap();
        assert_eq!(recs[0].values["age"], num(61.0));
        assert_eq!(recs[0].values["stage"], cat("III"));
        assert_eq!(recs[1].values["age"], Cell::Missing);
        assert_eq!(recs[1].values["stage"], Cell::Missing);

        let dup = "case_id,age\nP1,1\nP1,2\n";
        assert!(read_clinical_csv(dup.as_bytes(), "case_id", &decls[..1]).is_err());
        let bad = "case_id,age\nP1,old\n";
        assert!(matches!(read_clinical_csv(bad.as_bytes(), "case_id", &decls[..1]), Err(Error::Parse { row: 2, .. })));
    }

    #[test]
    fn stratified_exact_divisibility() {
        let labels: Vec<bool> = (0..100).map(|i| i % 2 == 0).collect();
        let [a, b, c] = stratified_indices(&labels, [0.8, 0.1, 0.1], 42).unwrap();
        let pos = |v: &Vec<usize>| v.iter().filter(|&&i| labels[i]).count();
        assert_eq!((a.len(), b.len(), c.len()), (80, 10, 10));
        assert_eq!((pos(&a), pos(&b), pos(&c)), (40, 5, 5));
        assert_eq!(stratified_indices(&labels, [0.8, 0.1, 0.1], 42).unwrap(), [a, b, c]);
    }

    #[test]
    fn cohort_of_618_is_partitioned() {
        let labels: Vec<bool> = (0..618).map(|i| i % 5 != 0).collect();
        let splits = stratified_indices(&labels, DEFAULT_SPLIT, 3).unwrap();
        let mut all: Vec<usize> = splits.concat();
        all.sort_unstable();
        assert_eq!(all, (0..618).collect::<Vec<_>>());
    }

    #[test]
    fn tiny_class_is_rejected_with_counts() {
        let labels = [true, false, false, false, false, false];
        let err = stratified_indices(&labels, DEFAULT_SPLIT, 0).unwrap_err().to_string();
        assert!(err.contains("1 positives"), "{err}");
    }

    proptest! {
        #[test]
        fn stratified_split_partitions_and_preserves_proportions(
            labels in prop::collection::vec(any::<bool>(), 20..300),
            seed in any::<u64>(),
        ) {
            let n_pos = labels.iter().filter(|&&y| y).count();
            prop_assume!(n_pos >= 8 && labels.len() - n_pos >= 8);
            let splits = stratified_indices(&labels, DEFAULT_SPLIT, seed).unwrap();
            let mut all: Vec<usize> = splits.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            let global = n_pos as f64 / labels.len() as f64;
            for s in &splits {
                let pos = s.iter().filter(|&&i| labels[i]).count() as f64;
                prop_assert!((pos - global * s.len() as f64).abs() < 1.0);
            }
        }

        #[test]
        fn fitted_columns_span_unit_interval(values in prop::collection::vec(-1e3f64..1e3, 2..40)) {
            let records: Vec<ClinicalRecord> = values
                .iter()
                .enumerate()
                .map(|(i, v)| rec(&format!("p{i}"), &[("x", num(*v))]))
                .collect();
            let s = fit_schema(&records, &[ColumnDecl::new("x", ColumnKind::Numeric)]).unwrap();
            let out = transform(&records, &s).unwrap().matrix;
            let col = out.data.column(0);
            let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            if values.iter().any(|v| *v != values[0]) {
                prop_assert_eq!((lo, hi), (0.0, 1.0));
            }
        }

        #[test]
        fn one_hot_yields_k_minus_one_columns(cats in prop::collection::vec(0usize..5, 1..30)) {
            let records: Vec<ClinicalRecord> = cats
                .iter()
                .enumerate()
                .map(|(i, c)| rec(&format!("p{i}"), &[("c", cat(&format!("k{c}")))]))
                .collect();
            let s = fit_schema(&records, &[ColumnDecl::new("c", ColumnKind::Categorical { categories: None })]).unwrap();
            let k = cats.iter().collect::<HashSet<_>>().len();
            let out = transform(&records, &s).unwrap().matrix;
            prop_assert_eq!(out.columns.len(), k - 1);
            for row in out.data.rows() {
                prop_assert!(row.sum() <= 1.0);
            }
        }
    }
}
