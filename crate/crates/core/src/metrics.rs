//! Binary classification metrics.
//!
//! Ratios with a zero denominator are reported as `0.0` and listed in
//! [`Summary::degenerate`] instead of becoming NaN, so rendered tables stay
//! numeric.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn positives(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> usize {
        self.tn + self.fp
    }
}

/// Count outcomes of hard predictions against labels.
pub fn confusion(labels: &[bool], predictions: &[bool]) -> Result<ConfusionMatrix> {
    if labels.is_empty() {
        return Err(Error::invalid("confusion matrix of an empty sample"));
    }
    if labels.len() != predictions.len() {
        return Err(Error::shape(format!(
            "{} labels vs {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&y, &p) in labels.iter().zip(predictions) {
        match (y, p) {
            (true, true) => cm.tp += 1,
            (false, true) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (true, false) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// Confusion matrix of `score >= threshold` predictions.
pub fn confusion_at(labels: &[bool], scores: &[f64], threshold: f64) -> Result<ConfusionMatrix> {
    check_scores(scores)?;
    let preds: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
    confusion(labels, &preds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degenerate {
    Precision,
    Recall,
    Specificity,
    F1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate: Vec<Degenerate>,
}

fn ratio(num: usize, den: usize, tag: Degenerate, flags: &mut Vec<Degenerate>) -> f64 {
    if den == 0 {
        flags.push(tag);
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall; zero when both are zero.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn summary_metrics(cm: &ConfusionMatrix) -> Summary {
    let mut degenerate = Vec::new();
    let precision = ratio(cm.tp, cm.tp + cm.fp, Degenerate::Precision, &mut degenerate);
    let recall = ratio(cm.tp, cm.positives(), Degenerate::Recall, &mut degenerate);
    let specificity = ratio(cm.tn, cm.negatives(), Degenerate::Specificity, &mut degenerate);
    if precision + recall == 0.0 {
        degenerate.push(Degenerate::F1);
    }
    let accuracy = if cm.total() == 0 {
        0.0
    } else {
        (cm.tp + cm.tn) as f64 / cm.total() as f64
    };
    Summary {
        accuracy,
        balanced_accuracy: 0.5 * (recall + specificity),
        precision,
        recall,
        specificity,
        f1: f1_score(precision, recall),
        degenerate,
    }
}

pub fn balanced_accuracy(labels: &[bool], scores: &[f64], threshold: f64) -> Result<f64> {
    Ok(summary_metrics(&confusion_at(labels, scores, threshold)?).balanced_accuracy)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// `None` marks the origin, a threshold above every score.
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    /// `None` when only one class is present.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    /// `None` when there are no positives.
    pub average_precision: Option<f64>,
}

fn check_scores(scores: &[f64]) -> Result<()> {
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score at index {i}")));
    }
    Ok(())
}

/// Cumulative (threshold, tp, fp) after each group of tied scores, taken in
/// descending score order.
fn threshold_sweep(labels: &[bool], scores: &[f64]) -> Result<Vec<(f64, usize, usize)>> {
    if labels.is_empty() {
        return Err(Error::invalid("curve of an empty sample"));
    }
    if labels.len() != scores.len() {
        return Err(Error::shape(format!(
            "{} labels vs {} scores",
            labels.len(),
            scores.len()
        )));
    }
    check_scores(scores)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut sweep = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for (pos, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = order
            .get(pos + 1)
            .map_or(true, |&j| scores[j].partial_cmp(&scores[i]) != Some(Ordering::Equal));
        if last_of_group {
            sweep.push((scores[i], tp, fp));
        }
    }
    Ok(sweep)
}

pub fn roc_curve(labels: &[bool], scores: &[f64]) -> Result<RocCurve> {
    let sweep = threshold_sweep(labels, scores)?;
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    let rate = |count: usize, total: usize| if total == 0 { 0.0 } else { count as f64 / total as f64 };

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: None,
    }];
    points.extend(sweep.iter().map(|&(t, tp, fp)| RocPoint {
        fpr: rate(fp, neg),
        tpr: rate(tp, pos),
        threshold: Some(t),
    }));

    let auc = (pos > 0 && neg > 0).then(|| {
        // Trapezoids in integer counts, divided once at the end.
        let mut twice_area: u128 = 0;
        let (mut prev_tp, mut prev_fp) = (0usize, 0usize);
        for &(_, tp, fp) in &sweep {
            twice_area += ((fp - prev_fp) as u128) * ((tp + prev_tp) as u128);
            prev_tp = tp;
            prev_fp = fp;
        }
        twice_area as f64 / (2.0 * pos as f64 * neg as f64)
    });
    Ok(RocCurve { points, auc })
}

pub fn pr_curve(labels: &[bool], scores: &[f64]) -> Result<PrCurve> {
    let sweep = threshold_sweep(labels, scores)?;
    let pos = labels.iter().filter(|&&y| y).count();
    let points: Vec<PrPoint> = sweep
        .iter()
        .map(|&(t, tp, fp)| PrPoint {
            recall: if pos == 0 { 0.0 } else { tp as f64 / pos as f64 },
            precision: tp as f64 / (tp + fp) as f64,
            threshold: t,
        })
        .collect();
    let average_precision = (pos > 0).then(|| {
        let mut ap = 0.0;
        let mut prev_recall = 0.0;
        for p in &points {
            ap += (p.recall - prev_recall) * p.precision;
            prev_recall = p.recall;
        }
        ap
    });
    Ok(PrCurve {
        points,
        average_precision,
    })
}

/// Everything known about one model on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
    #[serde(flatten)]
    pub summary: Summary,
    pub roc_auc: Option<f64>,
    pub avg_precision: Option<f64>,
    pub roc: Vec<RocPoint>,
    pub pr: Vec<PrPoint>,
}

pub fn evaluate(labels: &[bool], scores: &[f64], threshold: f64) -> Result<EvalReport> {
    let confusion = confusion_at(labels, scores, threshold)?;
    let roc = roc_curve(labels, scores)?;
    let pr = pr_curve(labels, scores)?;
    Ok(EvalReport {
        threshold,
        confusion,
        summary: summary_metrics(&confusion),
        roc_auc: roc.auc,
        avg_precision: pr.average_precision,
        roc: roc.points,
        pr: pr.points,
    })
}

/// One line of the unified model comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnifiedRow {
    pub model: String,
    pub balanced_accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

impl UnifiedRow {
    pub fn from_report(model: impl Into<String>, report: &EvalReport) -> Self {
        UnifiedRow {
            model: model.into(),
            balanced_accuracy: report.summary.balanced_accuracy,
            f1: report.summary.f1,
            precision: report.summary.precision,
            recall: report.summary.recall,
        }
    }
}

pub const UNIFIED_HEADER: [&str; 5] = ["Model", "Balanced Accuracy", "F1 Score", "Precision", "Recall"];

pub fn render_unified_table(rows: &[UnifiedRow]) -> String {
    let model_width = rows
        .iter()
        .map(|r| r.model.len())
        .chain(std::iter::once(UNIFIED_HEADER[0].len()))
        .max()
        .unwrap_or(0);
    let mut out = String::new();
    let _ = write!(out, "{:<model_width$}", UNIFIED_HEADER[0]);
    for h in &UNIFIED_HEADER[1..] {
        let _ = write!(out, "  {h:>17}");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{:<model_width$}", r.model);
        for v in [r.balanced_accuracy, r.f1, r.precision, r.recall] {
            let _ = write!(out, "  {v:>17.3}");
        }
        out.push('\n');
    }
    out
}

/// Two-column "Metric / Score" table of a single report.
pub fn render_metric_table(report: &EvalReport) -> String {
    let s = &report.summary;
    let mut rows = vec![
        ("Accuracy", Some(s.accuracy)),
        ("Balanced Accuracy", Some(s.balanced_accuracy)),
        ("Precision", Some(s.precision)),
        ("Recall", Some(s.recall)),
        ("F1 Score", Some(s.f1)),
        ("ROC AUC", report.roc_auc),
        ("Average Precision", report.avg_precision),
    ];
    rows.retain(|(_, v)| v.is_some());
    let mut out = format!("{:<20}{:>8}\n", "Metric", "Score");
    for (name, v) in rows {
        let _ = writeln!(out, "{name:<20}{:>8.4}", v.unwrap_or_default());
    }
    out
}

pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("fpr,tpr,threshold\n");
    for p in points {
        let t = p.threshold.map_or_else(|| "inf".to_string(), |t| t.to_string());
        let _ = writeln!(out, "{},{},{}", p.fpr, p.tpr, t);
    }
    out
}

pub fn pr_csv(points: &[PrPoint]) -> String {
    let mut out = String::from("recall,precision,threshold\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", p.recall, p.precision, p.threshold);
    }
    out
}
