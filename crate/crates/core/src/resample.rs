//! Minority oversampling and balanced sampling weights.
//!
//! Resamplers are meant for training folds only. Originals are returned
//! first and untouched; synthetic minority rows are appended after them.
//! Distances are Euclidean and neighbor ties go to the lower row index.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::apportion::largest_remainder;
use crate::error::{Error, Result};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Smote,
    Adasyn,
    #[default]
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResamplePlan {
    pub method: Method,
    #[serde(default = "default_k")]
    pub k_neighbors: usize,
    #[serde(default = "default_ratio")]
    pub target_ratio: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_k() -> usize {
    5
}

fn default_ratio() -> f64 {
    1.0
}

impl Default for ResamplePlan {
    fn default() -> Self {
        ResamplePlan {
            method: Method::None,
            k_neighbors: default_k(),
            target_ratio: default_ratio(),
            seed: 0,
        }
    }
}

impl ResamplePlan {
    pub fn smote(seed: u64) -> Self {
        ResamplePlan { method: Method::Smote, seed, ..Default::default() }
    }

    pub fn adasyn(seed: u64) -> Self {
        ResamplePlan { method: Method::Adasyn, seed, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resampled {
    pub x: Array2<f64>,
    pub y: Vec<bool>,
    /// Synthetic rows generated per original minority row (ADASYN allocation;
    /// realized counts for SMOTE).
    pub allocation: Vec<usize>,
}

/// Apply the plan's method. `Method::None` returns the input unchanged.
pub fn apply(x: ArrayView2<f64>, y: &[bool], plan: &ResamplePlan) -> Result<Resampled> {
    match plan.method {
        Method::Smote => smote(x, y, plan),
        Method::Adasyn => adasyn(x, y, plan),
        Method::None => Ok(Resampled { x: x.to_owned(), y: y.to_vec(), allocation: Vec::new() }),
    }
}

struct Classes {
    minority_label: bool,
    minority: Vec<usize>,
    majority: usize,
}

fn classes(x: ArrayView2<f64>, y: &[bool], plan: &ResamplePlan) -> Result<Classes> {
    if x.nrows() != y.len() {
        return Err(Error::shape(format!("{} rows vs {} labels", x.nrows(), y.len())));
    }
    if !(plan.target_ratio > 0.0 && plan.target_ratio <= 1.0) {
        return Err(Error::invalid(format!("target_ratio {} not in (0, 1]", plan.target_ratio)));
    }
    if plan.k_neighbors == 0 {
        return Err(Error::invalid("k_neighbors must be positive"));
    }
    let pos: Vec<usize> = (0..y.len()).filter(|&i| y[i]).collect();
    let neg: Vec<usize> = (0..y.len()).filter(|&i| !y[i]).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::invalid("resampling needs both classes present"));
    }
    let (minority_label, minority, majority) = if pos.len() <= neg.len() {
        (true, pos, neg.len())
    } else {
        (false, neg, pos.len())
    };
    if plan.k_neighbors >= minority.len() {
        return Err(Error::invalid(format!(
            "k_neighbors = {} must be below the minority class size {}",
            plan.k_neighbors,
            minority.len()
        )));
    }
    Ok(Classes { minority_label, minority, majority })
}

/// Synthetic rows needed so minority/majority reaches `target_ratio` without exceeding it.
fn deficit(n_minority: usize, n_majority: usize, target_ratio: f64) -> usize {
    let target = (target_ratio * n_majority as f64 + 1e-9).floor() as usize;
    target.saturating_sub(n_minority)
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Indices (into `candidates`) of the k nearest candidates to `row`, excluding `row` itself.
pub fn nearest(x: ArrayView2<f64>, row: usize, candidates: &[usize], k: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = candidates
        .iter()
        .filter(|&&c| c != row)
        .map(|&c| (sq_dist(x.row(row), x.row(c)), c))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, c)| c).collect()
}

fn interpolate(x: ArrayView2<f64>, base: usize, other: usize, gap: f64) -> Vec<f64> {
    x.row(base)
        .iter()
        .zip(x.row(other).iter())
        .map(|(a, b)| a + gap * (b - a))
        .collect()
}

fn assemble(x: ArrayView2<f64>, y: &[bool], synthetic: Vec<Vec<f64>>, label: bool, allocation: Vec<usize>) -> Resampled {
    let width = x.ncols();
    let mut out = Array2::<f64>::zeros((x.nrows() + synthetic.len(), width));
    out.slice_mut(ndarray::s![..x.nrows(), ..]).assign(&x);
    for (i, row) in synthetic.iter().enumerate() {
        out.row_mut(x.nrows() + i).assign(&ArrayView1::from(row.as_slice()));
    }
    let mut labels = y.to_vec();
    labels.extend(std::iter::repeat_n(label, synthetic.len()));
    Resampled { x: out, y: labels, allocation }
}

/// Draw `count` synthetic rows around minority row `base` from its minority neighbors.
fn synthesize(x: ArrayView2<f64>, base: usize, neighbors: &[usize], count: usize, rng: &mut Rng, out: &mut Vec<Vec<f64>>) {
    for _ in 0..count {
        let nn = neighbors[rng.random_range(0..neighbors.len())];
        let gap: f64 = rng.random();
        out.push(interpolate(x, base, nn, gap));
    }
}

/// SMOTE: each synthetic row interpolates a uniformly chosen minority row
/// toward one of its k nearest minority neighbors.
pub fn smote(x: ArrayView2<f64>, y: &[bool], plan: &ResamplePlan) -> Result<Resampled> {
    let c = classes(x, y, plan)?;
    let needed = deficit(c.minority.len(), c.majority, plan.target_ratio);
    let mut allocation = vec![0usize; c.minority.len()];
    if needed == 0 {
        return Ok(Resampled { x: x.to_owned(), y: y.to_vec(), allocation });
    }
    let neighbors: Vec<Vec<usize>> = c.minority.iter().map(|&i| nearest(x, i, &c.minority, plan.k_neighbors)).collect();
    let mut rng = seed::rng(plan.seed);
    let mut synthetic = Vec::with_capacity(needed);
    for _ in 0..needed {
        let slot = rng.random_range(0..c.minority.len());
        allocation[slot] += 1;
        synthesize(x, c.minority[slot], &neighbors[slot], 1, &mut rng, &mut synthetic);
    }
    Ok(assemble(x, y, synthetic, c.minority_label, allocation))
}

/// Fraction of majority rows among each minority row's k nearest neighbors
/// over the whole dataset.
pub fn adasyn_difficulty(x: ArrayView2<f64>, y: &[bool], plan: &ResamplePlan) -> Result<Vec<f64>> {
    let c = classes(x, y, plan)?;
    let everyone: Vec<usize> = (0..y.len()).collect();
    Ok(c.minority
        .iter()
        .map(|&i| {
            let nn = nearest(x, i, &everyone, plan.k_neighbors);
            nn.iter().filter(|&&j| y[j] != c.minority_label).count() as f64 / plan.k_neighbors as f64
        })
        .collect())
}

/// Split `total` synthetic rows across minority rows proportionally to their
/// difficulty, with largest-remainder rounding so the counts sum to `total`.
/// All-zero difficulty falls back to an even split.
pub fn adasyn_allocation(difficulty: &[f64], total: usize) -> Vec<usize> {
    if difficulty.is_empty() {
        return Vec::new();
    }
    let sum: f64 = difficulty.iter().sum();
    let shares: Vec<f64> = if sum > 0.0 {
        difficulty.iter().map(|r| r / sum * total as f64).collect()
    } else {
        vec![total as f64 / difficulty.len() as f64; difficulty.len()]
    };
    largest_remainder(total, &shares)
}

/// ADASYN: like SMOTE, but minority rows surrounded by more majority rows
/// receive proportionally more synthetic neighbors.
pub fn adasyn(x: ArrayView2<f64>, y: &[bool], plan: &ResamplePlan) -> Result<Resampled> {
    let c = classes(x, y, plan)?;
    let needed = deficit(c.minority.len(), c.majority, plan.target_ratio);
    if needed == 0 {
        return Ok(Resampled { x: x.to_owned(), y: y.to_vec(), allocation: vec![0; c.minority.len()] });
    }
    let difficulty = adasyn_difficulty(x, y, plan)?;
    let allocation = adasyn_allocation(&difficulty, needed);
    let mut rng = seed::rng(plan.seed);
    let mut synthetic = Vec::with_capacity(needed);
    for (slot, &count) in allocation.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let base = c.minority[slot];
        let neighbors = nearest(x, base, &c.minority, plan.k_neighbors);
        synthesize(x, base, &neighbors, count, &mut rng, &mut synthetic);
    }
    Ok(assemble(x, y, synthetic, c.minority_label, allocation))
}

/// Per-sample weight 1 / (size of the sample's class).
pub fn class_balance_weights(y: &[bool]) -> Result<Vec<f64>> {
    if y.is_empty() {
        return Err(Error::invalid("class weights of an empty label set"));
    }
    let pos = y.iter().filter(|&&v| v).count();
    let neg = y.len() - pos;
    Ok(y.iter().map(|&v| 1.0 / if v { pos } else { neg } as f64).collect())
}

/// Draws sample indices with replacement in proportion to fixed weights.
pub struct WeightedSampler {
    dist: WeightedIndex<f64>,
}

impl WeightedSampler {
    pub fn new(weights: &[f64]) -> Result<Self> {
        let dist = WeightedIndex::new(weights).map_err(|e| Error::invalid(format!("sampler weights: {e}")))?;
        Ok(WeightedSampler { dist })
    }

    pub fn balanced(y: &[bool]) -> Result<Self> {
        Self::new(&class_balance_weights(y)?)
    }

    pub fn draw(&self, n: usize, rng: &mut Rng) -> Vec<usize> {
        (0..n).map(|_| self.dist.sample(rng)).collect()
    }
}

/// Minority-class rows of a matrix, convenience for callers and tests.
pub fn minority_rows(x: ArrayView2<f64>, y: &[bool]) -> Array2<f64> {
    let pos = y.iter().filter(|&&v| v).count();
    let label = pos <= y.len() - pos;
    let idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == label).collect();
    x.select(Axis(0), &idx)
}
