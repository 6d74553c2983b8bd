//! Patient-level aggregation of instance embeddings and instance scores.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Elementwise mean over instances.
    #[default]
    Mean,
    /// The single instance with the largest weight (first on ties).
    MaxWeight,
}

fn check_bag(instances: &[Vec<f64>]) -> Result<usize> {
    let first = instances.first().ok_or_else(|| Error::invalid("bag has no instances"))?;
    let width = first.len();
    if width == 0 {
        return Err(Error::shape("instances have zero width"));
    }
    for (i, v) in instances.iter().enumerate() {
        if v.len() != width {
            return Err(Error::shape(format!("instance {i} has width {}, expected {width}", v.len())));
        }
        if let Some(j) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("instance {i}, element {j}")));
        }
    }
    Ok(width)
}

pub fn mean_pool(instances: &[Vec<f64>]) -> Result<Vec<f64>> {
    let width = check_bag(instances)?;
    let mut out = vec![0.0; width];
    for v in instances {
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
    }
    let n = instances.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

/// Mean of per-slide means: every slide counts once regardless of its patch count.
pub fn two_stage_mean(slides: &[Vec<Vec<f64>>]) -> Result<Vec<f64>> {
    if slides.is_empty() {
        return Err(Error::invalid("patient has no slides"));
    }
    let means = slides.iter().map(|s| mean_pool(s)).collect::<Result<Vec<_>>>()?;
    mean_pool(&means)
}

/// Pick the instance with the largest weight.
pub fn max_weight_select(instances: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>> {
    check_bag(instances)?;
    if weights.len() != instances.len() {
        return Err(Error::shape(format!("{} weights for {} instances", weights.len(), instances.len())));
    }
    if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
        return Err(Error::NonFinite(format!("weight of instance {i}")));
    }
    let mut best = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > weights[best] {
            best = i;
        }
    }
    Ok(instances[best].clone())
}

pub fn pool(instances: &[Vec<f64>], weights: Option<&[f64]>, how: Pooling) -> Result<Vec<f64>> {
    match how {
        Pooling::Mean => mean_pool(instances),
        Pooling::MaxWeight => match weights {
            Some(w) => max_weight_select(instances, w),
            None => Err(Error::invalid("max-weight pooling needs instance weights")),
        },
    }
}

/// Patient score from instance probabilities: the maximum.
pub fn max_prob_inference(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::invalid("no instance probabilities"));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("instance probability {p} outside [0, 1]")));
    }
    Ok(probs.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// One row of an instance-level embedding file.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRow {
    pub patient_id: String,
    /// Slide or scan identifier; rows sharing it form one sub-bag.
    pub group: Option<String>,
    pub weight: Option<f64>,
    pub values: Vec<f64>,
}

/// Collapse instance rows into one vector per patient, in patient-id order.
///
/// With `two_stage` set and mean pooling, rows are first averaged within their
/// group and the group means are then averaged. Otherwise instances are pooled
/// with `how`.
pub fn aggregate_rows(rows: &[InstanceRow], how: Pooling, two_stage: bool) -> Result<Vec<(String, Vec<f64>)>> {
    let mut by_patient: BTreeMap<&str, Vec<&InstanceRow>> = BTreeMap::new();
    for r in rows {
        by_patient.entry(r.patient_id.as_str()).or_default().push(r);
    }
    by_patient
        .into_iter()
        .map(|(pid, rows)| {
            let vector = if two_stage && how == Pooling::Mean {
                let mut groups: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
                for r in &rows {
                    groups.entry(r.group.as_deref().unwrap_or("")).or_default().push(r.values.clone());
                }
                two_stage_mean(&groups.into_values().collect::<Vec<_>>())
            } else {
                let instances: Vec<Vec<f64>> = rows.iter().map(|r| r.values.clone()).collect();
                let weights: Option<Vec<f64>> = rows.iter().map(|r| r.weight).collect();
                pool(&instances, weights.as_deref(), how)
            }
            .map_err(|e| Error::invalid(format!("patient `{pid}`: {e}")))?;
            Ok((pid.to_string(), vector))
        })
        .collect()
}

/// Patient scores as the max over instance probabilities, in patient-id order.
pub fn patient_max_scores(ids: &[String], probs: &[f64]) -> Result<Vec<(String, f64)>> {
    if ids.len() != probs.len() {
        return Err(Error::shape(format!("{} ids vs {} probabilities", ids.len(), probs.len())));
    }
    let mut by_patient: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (id, &p) in ids.iter().zip(probs) {
        by_patient.entry(id.as_str()).or_default().push(p);
    }
    by_patient
        .into_iter()
        .map(|(id, ps)| Ok((id.to_string(), max_prob_inference(&ps)?)))
        .collect()
}
