//! Series curation: keep or drop scans by their free-text series description.
//!
//! Rules are case-insensitive regular expressions grouped into per-modality
//! include lists and one global exclude list. An exclude match always wins.
//! Every pattern is wrapped so it only matches whole tokens, where a token
//! boundary is any character outside `[a-z0-9]`; `cor` therefore matches
//! "COR T2" but not "CORTICAL".

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::Read;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RULES_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "CT")]
    Ct,
    #[serde(rename = "MR")]
    Mr,
}

impl Modality {
    pub fn parse(s: &str) -> Option<Modality> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CT" => Some(Modality::Ct),
            "MR" | "MRI" => Some(Modality::Mr),
            _ => None,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Ct => "CT",
            Modality::Mr => "MR",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesRecord {
    pub patient_id: String,
    pub series_uid: String,
    pub modality: Modality,
    pub series_description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedPattern {
    pub name: String,
    pub pattern: String,
}

impl NamedPattern {
    fn new(name: &str, pattern: &str) -> Self {
        NamedPattern { name: name.into(), pattern: pattern.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncludeLists {
    #[serde(rename = "CT", default)]
    pub ct: Vec<NamedPattern>,
    #[serde(rename = "MR", default)]
    pub mr: Vec<NamedPattern>,
}

/// Rule file contents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub version: u32,
    pub include: IncludeLists,
    #[serde(default)]
    pub exclude: Vec<NamedPattern>,
}

impl Default for RuleSpec {
    fn default() -> Self {
        let p = NamedPattern::new;
        RuleSpec {
            version: RULES_VERSION,
            include: IncludeLists {
                ct: vec![
                    p("arterial", "arterial"),
                    p("venous", "venous"),
                    p("nephrographic", "nephro(graphic)?"),
                    p("portal", "portal"),
                    p("delay", "delay(ed)?"),
                    p("axial", "ax(ial)?"),
                ],
                mr: vec![
                    p("t1", "t1w?"),
                    p("t2", "t2w?"),
                    p("flair", "flair"),
                    p("dwi", "dwi"),
                    p("axial", "ax(ial)?"),
                    p("post", "post"),
                ],
            },
            exclude: vec![
                p("scout", "scout"),
                p("localizer", "locali[sz]er"),
                p("pre-contrast", "pre[- _]?contrast"),
                p("sagittal", "sagittal"),
                p("sag", "sag"),
                p("coronal", "coronal"),
                p("cor", "cor"),
                p("survey", "survey"),
            ],
        }
    }
}

impl RuleSpec {
    pub fn from_json(text: &str) -> Result<RuleSpec> {
        let spec: RuleSpec = serde_json::from_str(text)?;
        if spec.version != RULES_VERSION {
            return Err(Error::Format(format!("unsupported rules version {}", spec.version)));
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone)]
struct Compiled {
    name: String,
    regex: Regex,
}

fn compile_list(list: &[NamedPattern]) -> Result<Vec<Compiled>> {
    let mut seen = HashSet::new();
    list.iter()
        .map(|np| {
            if np.name.trim().is_empty() {
                return Err(Error::invalid("rule name must be non-empty"));
            }
            if !seen.insert(np.name.as_str()) {
                return Err(Error::invalid(format!("duplicate rule name `{}`", np.name)));
            }
            let wrapped = format!("(?i)(?:^|[^a-z0-9])(?:{})(?:[^a-z0-9]|$)", np.pattern);
            let regex = Regex::new(&wrapped)?;
            Ok(Compiled { name: np.name.clone(), regex })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RuleSet {
    pub version: u32,
    ct: Vec<Compiled>,
    mr: Vec<Compiled>,
    exclude: Vec<Compiled>,
}

impl RuleSet {
    pub fn compile(spec: &RuleSpec) -> Result<RuleSet> {
        Ok(RuleSet {
            version: spec.version,
            ct: compile_list(&spec.include.ct)?,
            mr: compile_list(&spec.include.mr)?,
            exclude: compile_list(&spec.exclude)?,
        })
    }

    pub fn default_rules() -> RuleSet {
        RuleSet::compile(&RuleSpec::default()).expect("default rules compile")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", content = "reason", rename_all = "snake_case")]
pub enum Decision {
    /// Kept; carries the first include rule that matched.
    Keep(String),
    /// Dropped; carries the first exclude rule that matched, `empty`, or `no-include`.
    Drop(String),
}

impl Decision {
    pub fn is_keep(&self) -> bool {
        matches!(self, Decision::Keep(_))
    }

    pub fn reason(&self) -> &str {
        match self {
            Decision::Keep(r) | Decision::Drop(r) => r,
        }
    }
}

pub fn classify(record: &SeriesRecord, rules: &RuleSet) -> Decision {
    let desc = record.series_description.trim();
    if desc.is_empty() {
        return Decision::Drop("empty".into());
    }
    if let Some(rule) = rules.exclude.iter().find(|r| r.regex.is_match(desc)) {
        return Decision::Drop(rule.name.clone());
    }
    let include = match record.modality {
        Modality::Ct => &rules.ct,
        Modality::Mr => &rules.mr,
    };
    match include.iter().find(|r| r.regex.is_match(desc)) {
        Some(rule) => Decision::Keep(rule.name.clone()),
        None => Decision::Drop("no-include".into()),
    }
}

/// Read a manifest with columns `patient_id, series_uid, modality,
/// series_description`. Lines starting with `#` are comments.
pub fn read_manifest<R: Read>(reader: R) -> Result<Vec<SeriesRecord>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).flexible(false).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::schema(name, "column missing from manifest header"))
    };
    let (pid, uid, modality, desc) = (col("patient_id")?, col("series_uid")?, col("modality")?, col("series_description")?);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = row.position().map_or(i + 2, |p| p.line() as usize);
        let field = |c: usize| row.get(c).unwrap_or("").trim().to_string();
        let record = SeriesRecord {
            patient_id: field(pid),
            series_uid: field(uid),
            modality: Modality::parse(&field(modality)).ok_or_else(|| Error::Parse {
                row: line,
                message: format!("unknown modality `{}`", field(modality)),
            })?,
            series_description: row.get(desc).unwrap_or("").to_string(),
        };
        if record.patient_id.is_empty() || record.series_uid.is_empty() {
            return Err(Error::Parse { row: line, message: "patient_id and series_uid must be non-empty".into() });
        }
        if !seen.insert(record.series_uid.clone()) {
            return Err(Error::Parse { row: line, message: format!("duplicate series_uid `{}`", record.series_uid) });
        }
        out.push(record);
    }
    Ok(out)
}

/// Decisions as `series_uid,decision,reason` text.
pub fn decisions_csv(records: &[SeriesRecord], decisions: &[Decision]) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(["series_uid", "decision", "reason"]).expect("in-memory write");
    for (r, d) in records.iter().zip(decisions) {
        let kind = if d.is_keep() { "keep" } else { "drop" };
        w.write_record([r.series_uid.as_str(), kind, d.reason()]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub total_scans: usize,
    pub kept_scans: usize,
    pub percentage_kept: f64,
    pub unique_patients: usize,
    pub avg_scans_per_patient: f64,
    pub ct_scans: usize,
    pub mr_scans: usize,
}

pub fn percentage(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

pub fn per_patient(scans: usize, patients: usize) -> f64 {
    if patients == 0 {
        0.0
    } else {
        scans as f64 / patients as f64
    }
}

pub fn summarize(records: &[SeriesRecord], decisions: &[Decision]) -> Result<CohortSummary> {
    if records.len() != decisions.len() {
        return Err(Error::shape(format!("{} records vs {} decisions", records.len(), decisions.len())));
    }
    let kept: Vec<&SeriesRecord> = records.iter().zip(decisions).filter(|(_, d)| d.is_keep()).map(|(r, _)| r).collect();
    let patients: BTreeSet<&str> = kept.iter().map(|r| r.patient_id.as_str()).collect();
    let ct = kept.iter().filter(|r| r.modality == Modality::Ct).count();
    Ok(CohortSummary {
        total_scans: records.len(),
        kept_scans: kept.len(),
        percentage_kept: percentage(kept.len(), records.len()),
        unique_patients: patients.len(),
        avg_scans_per_patient: per_patient(kept.len(), patients.len()),
        ct_scans: ct,
        mr_scans: kept.len() - ct,
    })
}

impl CohortSummary {
    /// `(metric, value)` rows in display order.
    pub fn rows(&self) -> Vec<(&'static str, String)> {
        vec![
            ("Total original scans", self.total_scans.to_string()),
            ("Total filtered scans", self.kept_scans.to_string()),
            ("Percentage kept", format!("{:.1}%", self.percentage_kept)),
            ("Unique patients", self.unique_patients.to_string()),
            ("Avg scans per patient", format!("{:.1}", self.avg_scans_per_patient)),
            ("CT scans", self.ct_scans.to_string()),
            ("MRI scans", self.mr_scans.to_string()),
        ]
    }

    pub fn render(&self) -> String {
        let rows = self.rows();
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = format!("{:<width$}  Value\n", "Metric");
        for (k, v) in rows {
            out.push_str(&format!("{k:<width$}  {v}\n"));
        }
        out
    }
}
