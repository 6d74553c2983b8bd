//! Synthetic multimodal cohorts with complementary label signal.
//!
//! Each patient gets a label and a latent subtype in `0..3`. Modality `m`
//! carries a strong label signal for subtype-`m` patients and a weak one for
//! everyone else, so no single modality sees the whole picture. The signal is
//! a class-dependent shift along a random unit direction inside the first
//! `informative_dims` coordinates of the modality; the rest is unit Gaussian
//! noise. Setting `complementarity` to zero removes all signal.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureTable, LabelTable};
use crate::fusion::{ModalityBundle, MODALITIES};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub patients: usize,
    pub dims: [usize; 3],
    /// Per-modality shift amplitude for the modality's own subtype.
    pub signal: [f64; 3],
    /// Global multiplier on every signal; 0 gives pure noise.
    pub complementarity: f64,
    /// Fraction of the strong signal a modality carries for other subtypes.
    pub shared_fraction: f64,
    pub informative_dims: usize,
    /// Per-modality probability that a patient lacks the modality.
    pub missing: [f64; 3],
    /// Fraction of positive labels.
    pub prevalence: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            patients: 600,
            dims: [64, 512, 1024],
            signal: [3.0, 3.0, 3.0],
            complementarity: 1.0,
            shared_fraction: 0.2,
            informative_dims: 16,
            missing: [0.0, 0.1, 0.1],
            prevalence: 0.77,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.patients < 2 {
            return Err(Error::invalid("synthetic cohort needs at least 2 patients"));
        }
        if self.dims.contains(&0) || self.informative_dims == 0 {
            return Err(Error::invalid(format!("dims {:?} and informative_dims must be positive", self.dims)));
        }
        let rates = self.missing.iter().chain([&self.prevalence, &self.shared_fraction]);
        if let Some(r) = rates.clone().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::invalid(format!("rate {r} outside [0, 1]")));
        }
        if self.signal.iter().chain([&self.complementarity]).any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::invalid("signal strengths must be finite and nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub tables: [FeatureTable; 3],
    pub labels: LabelTable,
    pub subtypes: Vec<usize>,
}

impl SyntheticCohort {
    pub fn bundle(&self) -> Result<ModalityBundle> {
        ModalityBundle::new(self.tables.clone().map(Some))
    }
}

fn unit_direction(dim: usize, k: usize, rng: &mut seed::Rng) -> Array1<f64> {
    let k = k.min(dim);
    let mut d = Array1::<f64>::zeros(dim);
    loop {
        for j in 0..k {
            d[j] = StandardNormal.sample(rng);
        }
        let norm = d.dot(&d).sqrt();
        if norm > 1e-12 {
            return d / norm;
        }
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCohort> {
    spec.validate()?;
    let n = spec.patients;
    let mut rng = seed::rng(spec.seed);
    let n_pos = (spec.prevalence * n as f64).round() as usize;
    let mut labels: Vec<bool> = (0..n).map(|i| i < n_pos).collect();
    labels.shuffle(&mut rng);
    let subtypes: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();

    let mut present = vec![[true; 3]; n];
    for row in present.iter_mut() {
        for m in 0..3 {
            row[m] = rng.random::<f64>() >= spec.missing[m];
        }
        if !row.iter().any(|&p| p) {
            row[rng.random_range(0..3)] = true;
        }
    }

    let ids: Vec<String> = (0..n).map(|i| format!("SYN-{i:05}")).collect();
    let tables = MODALITIES.map(|m| {
        let k = m.index();
        let dim = spec.dims[k];
        let direction = unit_direction(dim, spec.informative_dims, &mut rng);
        let mut data = Array2::<f64>::zeros((n, dim));
        for i in 0..n {
            let strength = if subtypes[i] == k { 1.0 } else { spec.shared_fraction };
            let amp = spec.complementarity * spec.signal[k] * strength * if labels[i] { 1.0 } else { -1.0 };
            for j in 0..dim {
                let noise: f64 = StandardNormal.sample(&mut rng);
                data[[i, j]] = noise + amp * direction[j];
            }
        }
        let rows: Vec<usize> = (0..n).filter(|&i| present[i][k]).collect();
        let kept_ids = rows.iter().map(|&i| ids[i].clone()).collect();
        let data = data.select(ndarray::Axis(0), &rows);
        FeatureTable::with_default_columns(kept_ids, data, &format!("{}_", m.name()))
    });
    let [a, b, c] = tables;
    Ok(SyntheticCohort {
        tables: [a?, b?, c?],
        labels: LabelTable::new(ids, labels)?,
        subtypes,
    })
}
