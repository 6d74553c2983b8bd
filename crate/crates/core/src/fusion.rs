//! Early and late multimodal fusion with missing-modality handling.
//!
//! Modalities are always laid out in the order clinical, radiology,
//! histology. A patient may lack any modality except all of them.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureTable, LabelTable};
use crate::metrics::{self, EvalReport, UnifiedRow};
use crate::neural::{
    adam_step, positive_probs, train, Adam, AdamConfig, AdamState, EpochRecord, MlpModel, Mode, Profile, ResolvedLoss,
    Selection,
};
use crate::resample::{self, Method, ResamplePlan};
use crate::seed;
use crate::tabular::{stratified_indices, DEFAULT_SPLIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityKind {
    Clinical,
    Radiology,
    Histology,
}

pub const MODALITIES: [ModalityKind; 3] = [ModalityKind::Clinical, ModalityKind::Radiology, ModalityKind::Histology];

impl ModalityKind {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ModalityKind::Clinical => "clinical",
            ModalityKind::Radiology => "radiology",
            ModalityKind::Histology => "histology",
        }
    }

    /// Label used in report tables.
    pub fn display(self) -> &'static str {
        match self {
            ModalityKind::Clinical => "EHR",
            ModalityKind::Radiology => "CT/MRI",
            ModalityKind::Histology => "WSI",
        }
    }

    pub fn default_width(self) -> usize {
        match self {
            ModalityKind::Clinical => 64,
            ModalityKind::Radiology => 512,
            ModalityKind::Histology => 1024,
        }
    }

    pub fn parse(s: &str) -> Option<ModalityKind> {
        match s.trim().to_ascii_lowercase().as_str() {
            "clinical" | "ehr" => Some(ModalityKind::Clinical),
            "radiology" | "ct" | "mri" | "ct/mri" => Some(ModalityKind::Radiology),
            "histology" | "wsi" => Some(ModalityKind::Histology),
            _ => None,
        }
    }
}

impl fmt::Display for ModalityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// Late fusion only: weights are renormalized over present modalities.
    #[default]
    Renormalize,
    /// Missing blocks or probabilities become zeros.
    ZeroImpute,
    /// Missing blocks or probabilities become the mean over present patients.
    LearnedDefault,
}

/// Per-modality feature tables over one patient universe.
#[derive(Debug, Clone)]
pub struct ModalityBundle {
    /// Sorted union of patient ids across tables.
    pub ids: Vec<String>,
    pub tables: [Option<FeatureTable>; 3],
}

impl ModalityBundle {
    pub fn new(tables: [Option<FeatureTable>; 3]) -> Result<Self> {
        let ids: BTreeSet<&String> = tables.iter().flatten().flat_map(|t| t.ids.iter()).collect();
        if ids.is_empty() {
            return Err(Error::invalid("fusion needs at least one non-empty modality table"));
        }
        let ids = ids.into_iter().cloned().collect();
        Ok(ModalityBundle { ids, tables })
    }

    /// Require each present table to have its declared width.
    pub fn check_widths(&self, widths: [usize; 3]) -> Result<()> {
        for m in MODALITIES {
            if let Some(t) = &self.tables[m.index()] {
                if t.width() != widths[m.index()] {
                    return Err(Error::shape(format!(
                        "{m} table has width {}, expected {}",
                        t.width(),
                        widths[m.index()]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn available(&self) -> Vec<ModalityKind> {
        MODALITIES.into_iter().filter(|m| self.tables[m.index()].is_some()).collect()
    }

    pub fn table(&self, m: ModalityKind) -> Option<&FeatureTable> {
        self.tables[m.index()].as_ref()
    }

    pub fn present(&self, id: &str, m: ModalityKind) -> bool {
        self.table(m).is_some_and(|t| t.row_of(id).is_some())
    }

    pub fn mask(&self) -> Vec<[bool; 3]> {
        self.ids.iter().map(|id| MODALITIES.map(|m| self.present(id, m))).collect()
    }

    /// Rows aligned to `ids`, zero where the patient lacks the modality.
    pub fn aligned_block(&self, m: ModalityKind) -> Option<Array2<f64>> {
        let t = self.table(m)?;
        let mut out = Array2::zeros((self.ids.len(), t.width()));
        for (i, id) in self.ids.iter().enumerate() {
            if let Some(r) = t.row_of(id) {
                out.row_mut(i).assign(&t.data.row(r));
            }
        }
        Some(out)
    }

    /// Column ranges of each available modality in the concatenated layout.
    pub fn block_ranges(&self) -> Vec<(ModalityKind, Range<usize>)> {
        let mut start = 0;
        self.available()
            .into_iter()
            .map(|m| {
                let w = self.tables[m.index()].as_ref().map_or(0, FeatureTable::width);
                let r = start..start + w;
                start += w;
                (m, r)
            })
            .collect()
    }
}

fn column_means(block: &Array2<f64>, present: &[bool]) -> Array1<f64> {
    let mut sum = Array1::zeros(block.ncols());
    let mut n = 0usize;
    for (row, &p) in block.rows().into_iter().zip(present) {
        if p {
            sum += &row;
            n += 1;
        }
    }
    if n > 0 {
        sum /= n as f64;
    }
    sum
}

/// Concatenate available modalities in fixed order and append one presence
/// bit per available modality.
pub fn early_concat(bundle: &ModalityBundle, policy: MissingPolicy) -> Result<FeatureTable> {
    if policy == MissingPolicy::Renormalize {
        return Err(Error::invalid("early concatenation supports zero_impute or learned_default, not renormalize"));
    }
    let mask = bundle.mask();
    let ranges = bundle.block_ranges();
    let width = ranges.last().map_or(0, |(_, r)| r.end);
    let n = bundle.ids.len();
    let mut data = Array2::zeros((n, width + ranges.len()));
    let mut columns = Vec::with_capacity(width + ranges.len());
    for (k, (m, range)) in ranges.iter().enumerate() {
        let mut block = bundle.aligned_block(*m).expect("available modality");
        let present: Vec<bool> = mask.iter().map(|p| p[m.index()]).collect();
        if policy == MissingPolicy::LearnedDefault {
            let fill = column_means(&block, &present);
            for (mut row, &p) in block.rows_mut().into_iter().zip(&present) {
                if !p {
                    row.assign(&fill);
                }
            }
        }
        data.slice_mut(s![.., range.clone()]).assign(&block);
        for (i, &p) in present.iter().enumerate() {
            data[[i, width + k]] = p as u8 as f64;
        }
        columns.extend((0..range.len()).map(|j| format!("{}_{j}", m.name())));
    }
    columns.extend(ranges.iter().map(|(m, _)| format!("mask_{}", m.name())));
    FeatureTable::new(bundle.ids.clone(), columns, data)
}

/// Linear map `x W + b` from one modality into the shared space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Projection {
    pub fn identity(n: usize) -> Self {
        Projection { weight: Array2::eye(n), bias: Array1::zeros(n) }
    }

    pub fn random(input: usize, output: usize, rng: &mut seed::Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Projection {
            weight: Array2::from_shape_simple_fn((input, output), || rng.random_range(-bound..bound)),
            bias: Array1::zeros(output),
        }
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }
}

fn check_projections(bundle: &ModalityBundle, projections: &[Option<Projection>; 3]) -> Result<usize> {
    let mut dim = None;
    for m in bundle.available() {
        let p = projections[m.index()]
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("no projection for modality {m}")))?;
        let t = bundle.table(m).expect("available");
        if p.weight.nrows() != t.width() || p.bias.len() != p.weight.ncols() {
            return Err(Error::shape(format!(
                "{m} projection is {}x{} (+{}), table width {}",
                p.weight.nrows(),
                p.weight.ncols(),
                p.bias.len(),
                t.width()
            )));
        }
        match dim {
            None => dim = Some(p.weight.ncols()),
            Some(d) if d != p.weight.ncols() => {
                return Err(Error::shape(format!("projection widths differ: {d} vs {}", p.weight.ncols())));
            }
            _ => {}
        }
    }
    dim.ok_or_else(|| Error::invalid("no modality available"))
}

/// Blocks aligned to `bundle.ids` plus the presence mask.
struct Aligned {
    blocks: Vec<Option<Array2<f64>>>,
    mask: Vec<[bool; 3]>,
}

impl Aligned {
    fn new(bundle: &ModalityBundle) -> Self {
        Aligned {
            blocks: MODALITIES.iter().map(|&m| bundle.aligned_block(m)).collect(),
            mask: bundle.mask(),
        }
    }

    fn counts(&self, rows: &[usize]) -> Vec<f64> {
        rows.iter().map(|&i| self.mask[i].iter().filter(|&&p| p).count() as f64).collect()
    }

    fn pooled(&self, projections: &[Option<Projection>], rows: &[usize], dim: usize) -> Array2<f64> {
        let counts = self.counts(rows);
        let mut out = Array2::zeros((rows.len(), dim));
        for m in MODALITIES {
            let (Some(block), Some(p)) = (&self.blocks[m.index()], &projections[m.index()]) else {
                continue;
            };
            let z = p.apply(block.select(Axis(0), rows).view());
            for (k, &i) in rows.iter().enumerate() {
                if self.mask[i][m.index()] {
                    let mut o = out.row_mut(k);
                    o.scaled_add(1.0 / counts[k], &z.row(k));
                }
            }
        }
        out
    }
}

/// Mean over present modalities of their projected vectors.
pub fn early_mean_pool(bundle: &ModalityBundle, projections: &[Option<Projection>; 3]) -> Result<FeatureTable> {
    let dim = check_projections(bundle, projections)?;
    let aligned = Aligned::new(bundle);
    let rows: Vec<usize> = (0..bundle.ids.len()).collect();
    let data = aligned.pooled(projections, &rows, dim);
    FeatureTable::with_default_columns(bundle.ids.clone(), data, "pooled_")
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::invalid("no fusion weights"));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::invalid(format!("fusion weight {w} must be finite and nonnegative")));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::invalid("all fusion weights are zero"));
    }
    Ok(())
}

/// Weights divided by their sum.
pub fn normalized_weights(weights: &[f64]) -> Result<Vec<f64>> {
    check_weights(weights)?;
    let total: f64 = weights.iter().sum();
    Ok(weights.iter().map(|w| w / total).collect())
}

const WEIGHT_GRID: f64 = (1u64 << 24) as f64;

/// Scale-free form of a weight vector: divided by its maximum and rounded to
/// a 2^-24 grid, so any positive rescaling of the input yields the same
/// canonical weights bit for bit.
pub fn canonical_weights(weights: &[f64]) -> Result<Vec<f64>> {
    check_weights(weights)?;
    let max = weights.iter().copied().fold(0.0, f64::max);
    Ok(weights.iter().map(|w| (w / max * WEIGHT_GRID).round() / WEIGHT_GRID).collect())
}

/// Fused probability for one patient from canonical weights.
pub fn fuse_row(probs: &[Option<f64>], weights: &[f64], policy: MissingPolicy, defaults: &[f64]) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (m, (p, &w)) in probs.iter().zip(weights).enumerate() {
        let p = match (*p, policy) {
            (Some(p), _) => p,
            (None, MissingPolicy::Renormalize) => continue,
            (None, MissingPolicy::ZeroImpute) => 0.0,
            (None, MissingPolicy::LearnedDefault) => defaults[m],
        };
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
        }
        num += w * p;
        den += w;
        if w > 0.0 {
            lo = lo.min(p);
            hi = hi.max(p);
        }
    }
    if den == 0.0 {
        return Err(Error::invalid("every present modality has zero weight"));
    }
    Ok((num / den).clamp(lo, hi))
}

/// Weighted average of per-modality probabilities. `probs[i][m]` is `None`
/// when patient `i` lacks modality `m`.
pub fn late_weighted_sum(probs: &[Vec<Option<f64>>], weights: &[f64], policy: MissingPolicy) -> Result<Vec<f64>> {
    let w = canonical_weights(weights)?;
    if let Some(row) = probs.iter().find(|r| r.len() != w.len()) {
        return Err(Error::shape(format!("{} probabilities for {} weights", row.len(), w.len())));
    }
    let defaults: Vec<f64> = (0..w.len())
        .map(|m| {
            let present: Vec<f64> = probs.iter().filter_map(|r| r[m]).collect();
            if present.is_empty() {
                0.0
            } else {
                present.iter().sum::<f64>() / present.len() as f64
            }
        })
        .collect();
    probs.iter().map(|r| fuse_row(r, &w, policy, &defaults)).collect()
}

/// Late-head input: each modality's probability (0 when missing) then its presence bit.
pub fn late_features(probs: &[Vec<Option<f64>>]) -> Array2<f64> {
    let m = probs.first().map_or(0, Vec::len);
    let mut x = Array2::zeros((probs.len(), 2 * m));
    for (i, row) in probs.iter().enumerate() {
        for (j, p) in row.iter().enumerate() {
            if let Some(p) = p {
                x[[i, j]] = *p;
                x[[i, m + j]] = 1.0;
            }
        }
    }
    x
}

/// Train a small head on modality probabilities and presence bits.
pub fn late_learned(
    train_probs: &[Vec<Option<f64>>],
    y_train: &[bool],
    val_probs: &[Vec<Option<f64>>],
    y_val: &[bool],
    profile: &Profile,
    init_seed: u64,
) -> Result<crate::neural::TrainOutcome> {
    let x_train = late_features(train_probs);
    let x_val = late_features(val_probs);
    let model = MlpModel::new(profile.spec(x_train.ncols())?, init_seed)?;
    train(model, x_train.view(), y_train, x_val.view(), y_val, &profile.train)
}

/// Per-modality projections learned jointly with a classifier head.
#[derive(Debug, Clone)]
pub struct MeanPoolNet {
    pub projections: Vec<Option<Projection>>,
    pub head: MlpModel,
    pub dim: usize,
}

impl MeanPoolNet {
    fn scores(&self, aligned: &Aligned, rows: &[usize]) -> Result<Vec<f64>> {
        let pooled = aligned.pooled(&self.projections, rows, self.dim);
        self.head.predict_positive(pooled.view())
    }
}

#[derive(Debug, Clone)]
pub struct MeanPoolOutcome {
    pub net: MeanPoolNet,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Train projections and head together; rows index `bundle.ids`.
pub fn train_mean_pool(
    bundle: &ModalityBundle,
    labels: &[bool],
    train_rows: &[usize],
    val_rows: &[usize],
    dim: usize,
    profile: &Profile,
    init_seed: u64,
) -> Result<MeanPoolOutcome> {
    if dim == 0 {
        return Err(Error::invalid("projection dim must be positive"));
    }
    if train_rows.is_empty() || val_rows.is_empty() {
        return Err(Error::invalid("training and validation splits must be non-empty"));
    }
    let cfg = &profile.train;
    cfg.validate()?;
    let aligned = Aligned::new(bundle);
    let mut init = seed::rng(init_seed);
    let projections: Vec<Option<Projection>> = MODALITIES
        .iter()
        .map(|&m| bundle.table(m).map(|t| Projection::random(t.width(), dim, &mut init)))
        .collect();
    let head = MlpModel::new(profile.spec(dim)?, seed::derive(init_seed, "head"))?;
    let mut net = MeanPoolNet { projections, head, dim };

    let y_train: Vec<bool> = train_rows.iter().map(|&i| labels[i]).collect();
    let y_val: Vec<bool> = val_rows.iter().map(|&i| labels[i]).collect();
    let out_width = net.head.spec.output_width();
    let loss_fn = ResolvedLoss::new(&cfg.loss, net.head.spec.output, out_width, net.head.spec.label_smoothing, &y_train)?;
    let has_bn = net.head.norms.iter().any(Option::is_some);
    let mut rng = seed::rng(cfg.seed);
    let mut adam = Adam::new();
    let mut proj_states: Vec<[AdamState; 2]> = (0..3).map(|_| [AdamState::default(), AdamState::default()]).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, f64, usize, MeanPoolNet)> = None;

    for epoch in 0..cfg.epochs {
        let lr = cfg.scheduler.map_or(cfg.optimizer.lr, |s| s.lr_at(cfg.optimizer.lr, epoch));
        let step_cfg = AdamConfig { lr, ..cfg.optimizer };
        let mut order = train_rows.to_vec();
        order.shuffle(&mut rng);
        net.head.set_mode(Mode::Train);
        let (mut loss_sum, mut hits, mut seen) = (0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            if has_bn && batch.len() < 2 {
                continue;
            }
            let yb: Vec<bool> = batch.iter().map(|&i| labels[i]).collect();
            let pooled = aligned.pooled(&net.projections, batch, dim);
            let (probs, cache) = net.head.forward(pooled.view(), &mut rng)?;
            let out = loss_fn.eval(&probs, &yb)?;
            if !out.loss.is_finite() {
                return Err(Error::Diverged { epoch: epoch + 1, loss: out.loss });
            }
            let grads = net.head.backward(&cache, &out.grad);
            let counts = aligned.counts(batch);
            for m in MODALITIES {
                let (Some(block), Some(p)) = (&aligned.blocks[m.index()], &mut net.projections[m.index()]) else {
                    continue;
                };
                let mut dz = grads.input.clone();
                for (k, &i) in batch.iter().enumerate() {
                    let scale = if aligned.mask[i][m.index()] { 1.0 / counts[k] } else { 0.0 };
                    dz.row_mut(k).mapv_inplace(|v| v * scale);
                }
                let xb = block.select(Axis(0), batch);
                let dw = xb.t().dot(&dz).as_standard_layout().into_owned();
                let db = dz.sum_axis(Axis(0));
                let [sw, sb] = &mut proj_states[m.index()];
                let name = m.name();
                adam_step(
                    &format!("proj_{name}.weight"),
                    p.weight.as_slice_mut().expect("standard layout"),
                    dw.as_slice().expect("standard layout"),
                    sw,
                    &step_cfg,
                )?;
                adam_step(
                    &format!("proj_{name}.bias"),
                    p.bias.as_slice_mut().expect("contiguous"),
                    db.as_slice().expect("contiguous"),
                    sb,
                    &step_cfg,
                )?;
            }
            adam.step(&mut net.head, &grads, &step_cfg)?;
            loss_sum += out.loss * batch.len() as f64;
            let scores = positive_probs(net.head.spec.output, &probs);
            hits += scores.iter().zip(&yb).filter(|(&s, &l)| (s >= metrics::DEFAULT_THRESHOLD) == l).count() as f64;
            seen += batch.len();
        }
        if seen == 0 {
            return Err(Error::invalid("no training batch had at least 2 rows"));
        }
        net.head.set_mode(Mode::Eval);
        let pooled_val = aligned.pooled(&net.projections, val_rows, dim);
        let val_probs = net.head.predict(pooled_val.view())?;
        let val_loss = loss_fn.eval(&val_probs, &y_val)?.loss;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch: epoch + 1, loss: val_loss });
        }
        let val_bal_acc =
            metrics::balanced_accuracy(&y_val, &positive_probs(net.head.spec.output, &val_probs), metrics::DEFAULT_THRESHOLD)?;
        history.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / seen as f64,
            train_acc: hits / seen as f64,
            val_loss,
            val_bal_acc,
        });
        let better = match (&best, cfg.selection) {
            (None, _) | (Some(_), Selection::LastEpoch) => true,
            (Some((_, l, _, _)), Selection::ValLoss) => val_loss < *l,
            (Some((ba, l, _, _)), Selection::ValBalancedAccuracy) => val_bal_acc > *ba || (val_bal_acc == *ba && val_loss < *l),
        };
        if better {
            best = Some((val_bal_acc, val_loss, epoch + 1, net.clone()));
        }
    }
    let (_, _, best_epoch, mut net) = best.expect("at least one epoch");
    net.head.set_mode(Mode::Eval);
    Ok(MeanPoolOutcome { net, history, best_epoch })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    /// Each baseline's balanced accuracy on the validation split.
    ValidationBalancedAccuracy,
    /// Fixed weights in modality order.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    EarlyConcat,
    EarlyMeanPool {
        #[serde(default = "default_projection_dim")]
        projection_dim: usize,
    },
    LateWeightedSum {
        #[serde(default = "default_weight_source")]
        weights: WeightSource,
    },
    LateLearned,
}

fn default_projection_dim() -> usize {
    128
}

fn default_weight_source() -> WeightSource {
    WeightSource::ValidationBalancedAccuracy
}

impl Strategy {
    pub fn display(&self) -> &'static str {
        match self {
            Strategy::EarlyConcat => "Early Fusion (Concatenation)",
            Strategy::EarlyMeanPool { .. } => "Early Fusion (Mean Pooling)",
            Strategy::LateWeightedSum { .. } => "Late Fusion (Weighted Sum)",
            Strategy::LateLearned => "Late Fusion (Learned Weights)",
        }
    }

    pub fn key(&self) -> &'static str {
        match self {
            Strategy::EarlyConcat => "early_concat",
            Strategy::EarlyMeanPool { .. } => "early_mean_pool",
            Strategy::LateWeightedSum { .. } => "late_weighted_sum",
            Strategy::LateLearned => "late_learned",
        }
    }

    pub fn is_late(&self) -> bool {
        matches!(self, Strategy::LateWeightedSum { .. } | Strategy::LateLearned)
    }
}

/// A fusion run: strategy, missing-modality policy and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionPlan {
    pub strategy: Strategy,
    #[serde(default)]
    pub missing_policy: MissingPolicy,
    #[serde(default)]
    pub seed: u64,
}

impl FusionPlan {
    pub fn validate(&self) -> Result<()> {
        match (&self.strategy, self.missing_policy) {
            (Strategy::EarlyConcat, MissingPolicy::Renormalize) => {
                Err(Error::invalid("early concatenation cannot renormalize; use zero_impute or learned_default"))
            }
            (Strategy::EarlyMeanPool { projection_dim: 0 }, _) => Err(Error::invalid("projection_dim must be positive")),
            (Strategy::LateWeightedSum { weights: WeightSource::Fixed(w) }, _) => check_weights(w),
            _ => Ok(()),
        }
    }
}

/// Patient ids of a shared train/validation/test split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl PatientSplit {
    pub fn stratified(ids: &[String], labels: &[bool], fractions: [f64; 3], seed: u64) -> Result<Self> {
        let [a, b, c] = stratified_indices(labels, fractions, seed)?;
        let pick = |rows: Vec<usize>| rows.into_iter().map(|i| ids[i].clone()).collect();
        Ok(PatientSplit { train: pick(a), val: pick(b), test: pick(c) })
    }

    /// Split over every labelled patient, in sorted id order.
    pub fn from_labels(labels: &LabelTable, fractions: [f64; 3], seed: u64) -> Result<Self> {
        let mut pairs: Vec<(&String, bool)> = labels.ids.iter().zip(labels.labels.iter().copied()).collect();
        pairs.sort();
        let ids: Vec<String> = pairs.iter().map(|(id, _)| (*id).clone()).collect();
        let y: Vec<bool> = pairs.iter().map(|(_, l)| *l).collect();
        Self::stratified(&ids, &y, fractions, seed)
    }

    pub fn parts(&self) -> [&[String]; 3] {
        [&self.train, &self.val, &self.test]
    }
}

/// Labels for `bundle.ids`, failing on patients missing from either side.
pub fn align_labels(bundle: &ModalityBundle, labels: &LabelTable) -> Result<Vec<bool>> {
    let in_bundle: BTreeSet<&str> = bundle.ids.iter().map(String::as_str).collect();
    let mut orphans: Vec<String> = bundle
        .ids
        .iter()
        .filter(|id| labels.get(id).is_none())
        .map(|id| format!("{id} (no label)"))
        .collect();
    orphans.extend(
        labels
            .ids
            .iter()
            .filter(|id| !in_bundle.contains(id.as_str()))
            .map(|id| format!("{id} (no features)")),
    );
    if !orphans.is_empty() {
        let shown: Vec<&str> = orphans.iter().take(10).map(String::as_str).collect();
        return Err(Error::invalid(format!(
            "{} orphan patients: {}{}",
            orphans.len(),
            shown.join(", "),
            if orphans.len() > 10 { ", ..." } else { "" }
        )));
    }
    Ok(bundle.ids.iter().map(|id| labels.get(id).expect("checked")).collect())
}

/// One evaluated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub name: String,
    pub n_test: usize,
    pub best_epoch: Option<usize>,
    pub val_balanced_accuracy: Option<f64>,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    #[serde(default = "Profile::baseline")]
    pub baseline: Profile,
    #[serde(default = "Profile::baseline")]
    pub early_head: Profile,
    #[serde(default = "Profile::late_head")]
    pub late_head: Profile,
    pub strategies: Vec<Strategy>,
    #[serde(default = "default_early_policy")]
    pub early_policy: MissingPolicy,
    #[serde(default)]
    pub late_policy: MissingPolicy,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_split() -> [f64; 3] {
    DEFAULT_SPLIT
}

fn default_early_policy() -> MissingPolicy {
    MissingPolicy::ZeroImpute
}

fn default_threshold() -> f64 {
    metrics::DEFAULT_THRESHOLD
}

impl ExperimentConfig {
    /// Three baselines, early concatenation and late weighted sum.
    pub fn standard(seed: u64) -> Self {
        ExperimentConfig {
            split: DEFAULT_SPLIT,
            baseline: Profile::baseline(),
            early_head: Profile::baseline(),
            late_head: Profile::late_head(),
            strategies: vec![
                Strategy::LateWeightedSum { weights: WeightSource::ValidationBalancedAccuracy },
                Strategy::EarlyConcat,
            ],
            early_policy: MissingPolicy::ZeroImpute,
            late_policy: MissingPolicy::Renormalize,
            threshold: metrics::DEFAULT_THRESHOLD,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub split_sizes: [usize; 3],
    pub baselines: Vec<ModelResult>,
    pub fusions: Vec<ModelResult>,
    /// Normalized late-fusion weights in modality order, when used.
    pub late_weights: Option<Vec<f64>>,
}

impl ExperimentReport {
    pub fn unified_rows(&self) -> Vec<UnifiedRow> {
        self.baselines
            .iter()
            .chain(&self.fusions)
            .map(|r| UnifiedRow::from_report(r.name.clone(), &r.report))
            .collect()
    }
}

/// Probabilities of one unimodal classifier for every patient that has the modality.
#[derive(Debug, Clone, PartialEq)]
pub struct UnimodalScores {
    pub modality: ModalityKind,
    pub val_balanced_accuracy: f64,
    pub probs: Vec<(String, f64)>,
}

/// A trained unimodal baseline.
#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub model: MlpModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub scores: UnimodalScores,
}

fn rows_with_labels(table: &FeatureTable, ids: &[String], labels: &LabelTable) -> Result<(Array2<f64>, Vec<bool>)> {
    let rows: Vec<usize> = ids.iter().filter_map(|id| table.row_of(id)).collect();
    let y = rows
        .iter()
        .map(|&r| labels.get(&table.ids[r]).ok_or_else(|| Error::invalid(format!("patient `{}` has no label", table.ids[r]))))
        .collect::<Result<Vec<_>>>()?;
    Ok((table.data.select(Axis(0), &rows), y))
}

/// Train one classifier on a modality table using the split's train and validation patients.
pub fn train_on_table(
    table: &FeatureTable,
    labels: &LabelTable,
    split: &PatientSplit,
    profile: &Profile,
    stage: &str,
    global_seed: u64,
) -> Result<(MlpModel, Vec<EpochRecord>, usize, f64)> {
    train_on_table_resampled(table, labels, split, profile, &ResamplePlan::default(), stage, global_seed)
}

/// As [`train_on_table`], oversampling the training rows first. The plan's
/// seed is replaced by one derived from the stage name.
pub fn train_on_table_resampled(
    table: &FeatureTable,
    labels: &LabelTable,
    split: &PatientSplit,
    profile: &Profile,
    resample: &ResamplePlan,
    stage: &str,
    global_seed: u64,
) -> Result<(MlpModel, Vec<EpochRecord>, usize, f64)> {
    let (x_train, y_train) = rows_with_labels(table, &split.train, labels)?;
    let (x_val, y_val) = rows_with_labels(table, &split.val, labels)?;
    if y_train.is_empty() || y_val.is_empty() {
        return Err(Error::invalid(format!("{stage}: no training or validation patients have this modality")));
    }
    let (x_train, y_train) = if resample.method == Method::None {
        (x_train, y_train)
    } else {
        let plan = ResamplePlan { seed: seed::derive(global_seed, &format!("{stage}/resample")), ..resample.clone() };
        let out = resample::apply(x_train.view(), &y_train, &plan)?;
        (out.x, out.y)
    };
    let profile = profile.clone().with_seed(seed::derive(global_seed, &format!("{stage}/train")));
    let model = MlpModel::new(profile.spec(table.width())?, seed::derive(global_seed, &format!("{stage}/init")))?;
    let out = train(model, x_train.view(), &y_train, x_val.view(), &y_val, &profile.train)?;
    let val_ba = out.history[out.best_epoch - 1].val_bal_acc;
    Ok((out.model, out.history, out.best_epoch, val_ba))
}

pub fn baseline_stage(m: ModalityKind) -> String {
    format!("baseline/{}", m.name())
}

pub fn baseline_name(m: ModalityKind) -> String {
    format!("{} MLP Baseline", m.display())
}

pub fn train_baseline(
    table: &FeatureTable,
    m: ModalityKind,
    labels: &LabelTable,
    split: &PatientSplit,
    profile: &Profile,
    resample: &ResamplePlan,
    global_seed: u64,
) -> Result<BaselineRun> {
    let (model, history, best_epoch, val_ba) =
        train_on_table_resampled(table, labels, split, profile, resample, &baseline_stage(m), global_seed)?;
    let scores = model.predict_positive(table.data.view())?;
    Ok(BaselineRun {
        model,
        history,
        best_epoch,
        scores: UnimodalScores {
            modality: m,
            val_balanced_accuracy: val_ba,
            probs: table.ids.iter().cloned().zip(scores).collect(),
        },
    })
}

/// Metrics for `ids` with their labels looked up in `labels`.
pub fn evaluate_ids(ids: &[String], scores: &[f64], labels: &LabelTable, threshold: f64) -> Result<EvalReport> {
    let y: Vec<bool> = ids
        .iter()
        .map(|id| labels.get(id).ok_or_else(|| Error::invalid(format!("patient `{id}` has no label"))))
        .collect::<Result<_>>()?;
    metrics::evaluate(&y, scores, threshold)
}

/// Test-split result of a unimodal baseline.
pub fn baseline_result(s: &UnimodalScores, best_epoch: Option<usize>, split: &PatientSplit, labels: &LabelTable, threshold: f64) -> Result<ModelResult> {
    let lookup: HashMap<&str, f64> = s.probs.iter().map(|(i, p)| (i.as_str(), *p)).collect();
    let (ids, scores): (Vec<String>, Vec<f64>) = split
        .test
        .iter()
        .filter_map(|id| lookup.get(id.as_str()).map(|&p| (id.clone(), p)))
        .unzip();
    Ok(ModelResult {
        name: baseline_name(s.modality),
        n_test: ids.len(),
        best_epoch,
        val_balanced_accuracy: Some(s.val_balanced_accuracy),
        report: evaluate_ids(&ids, &scores, labels, threshold)?,
    })
}

/// Per-patient probability rows (modality order) for `ids`.
pub fn prob_rows(ids: &[String], unimodal: &[UnimodalScores]) -> Vec<Vec<Option<f64>>> {
    let maps: Vec<(usize, HashMap<&str, f64>)> = unimodal
        .iter()
        .map(|b| (b.modality.index(), b.probs.iter().map(|(id, p)| (id.as_str(), *p)).collect()))
        .collect();
    ids.iter()
        .map(|id| {
            let mut row = vec![None; 3];
            for (m, map) in &maps {
                row[*m] = map.get(id.as_str()).copied();
            }
            row
        })
        .collect()
}

/// Keep only the columns of modalities that have a baseline.
fn compact(rows: &[Vec<Option<f64>>], present: &[usize]) -> Vec<Vec<Option<f64>>> {
    rows.iter().map(|r| present.iter().map(|&m| r[m]).collect()).collect()
}

/// Test-split scores of one fusion strategy.
#[derive(Debug, Clone)]
pub struct StrategyRun {
    pub test_scores: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub val_balanced_accuracy: Option<f64>,
    /// Normalized weights in modality order for the weighted sum.
    pub late_weights: Option<Vec<f64>>,
}

impl StrategyRun {
    pub fn result(&self, strategy: &Strategy, split: &PatientSplit, labels: &LabelTable, threshold: f64) -> Result<ModelResult> {
        Ok(ModelResult {
            name: strategy.display().to_string(),
            n_test: split.test.len(),
            best_epoch: self.best_epoch,
            val_balanced_accuracy: self.val_balanced_accuracy,
            report: evaluate_ids(&split.test, &self.test_scores, labels, threshold)?,
        })
    }
}

pub fn fusion_stage(strategy: &Strategy) -> String {
    format!("fusion/{}", strategy.key())
}

/// Run one strategy on a shared split. Late strategies read `unimodal`; early
/// ones train a fresh head on the bundle.
pub fn run_strategy(
    bundle: &ModalityBundle,
    labels: &LabelTable,
    split: &PatientSplit,
    unimodal: &[UnimodalScores],
    strategy: &Strategy,
    cfg: &ExperimentConfig,
) -> Result<StrategyRun> {
    let plan = FusionPlan {
        strategy: strategy.clone(),
        missing_policy: if strategy.is_late() { cfg.late_policy } else { cfg.early_policy },
        seed: cfg.seed,
    };
    plan.validate()?;
    let stage = fusion_stage(strategy);
    let present: Vec<usize> = unimodal.iter().map(|r| r.modality.index()).collect();
    if strategy.is_late() && present.is_empty() {
        return Err(Error::invalid("late fusion needs at least one unimodal baseline"));
    }
    let mut late_weights = None;
    let (test_scores, best_epoch, val_ba) = match strategy {
        Strategy::LateWeightedSum { weights } => {
            let w: Vec<f64> = match weights {
                WeightSource::ValidationBalancedAccuracy => unimodal.iter().map(|r| r.val_balanced_accuracy).collect(),
                WeightSource::Fixed(w) => present.iter().map(|&m| w.get(m).copied().unwrap_or(0.0)).collect(),
            };
            let mut full = vec![0.0; 3];
            for (&m, &v) in present.iter().zip(&normalized_weights(&w)?) {
                full[m] = v;
            }
            late_weights = Some(full);
            let rows = compact(&prob_rows(&split.test, unimodal), &present);
            (late_weighted_sum(&rows, &w, plan.missing_policy)?, None, None)
        }
        Strategy::LateLearned => {
            let part = |ids: &[String]| compact(&prob_rows(ids, unimodal), &present);
            let y = |ids: &[String]| {
                ids.iter()
                    .map(|id| labels.get(id).ok_or_else(|| Error::invalid(format!("patient `{id}` has no label"))))
                    .collect::<Result<Vec<_>>>()
            };
            let profile = cfg.late_head.clone().with_seed(seed::derive(cfg.seed, &format!("{stage}/train")));
            let out = late_learned(
                &part(&split.train),
                &y(&split.train)?,
                &part(&split.val),
                &y(&split.val)?,
                &profile,
                seed::derive(cfg.seed, &format!("{stage}/init")),
            )?;
            let x_test = late_features(&part(&split.test));
            let val_ba = out.history[out.best_epoch - 1].val_bal_acc;
            (out.model.predict_positive(x_test.view())?, Some(out.best_epoch), Some(val_ba))
        }
        Strategy::EarlyConcat => {
            let table = early_concat(bundle, plan.missing_policy)?;
            let (model, _, best_epoch, val_ba) = train_on_table(&table, labels, split, &cfg.early_head, &stage, cfg.seed)?;
            let test = table.select_ids(&split.test)?;
            (model.predict_positive(test.data.view())?, Some(best_epoch), Some(val_ba))
        }
        Strategy::EarlyMeanPool { projection_dim } => {
            let y_all = align_labels(bundle, labels)?;
            let index = |ids: &[String]| -> Result<Vec<usize>> {
                ids.iter()
                    .map(|id| bundle.ids.binary_search(id).map_err(|_| Error::invalid(format!("patient `{id}` has no features"))))
                    .collect()
            };
            let profile = cfg.early_head.clone().with_seed(seed::derive(cfg.seed, &format!("{stage}/train")));
            let out = train_mean_pool(
                bundle,
                &y_all,
                &index(&split.train)?,
                &index(&split.val)?,
                *projection_dim,
                &profile,
                seed::derive(cfg.seed, &format!("{stage}/init")),
            )?;
            let aligned = Aligned::new(bundle);
            let val_ba = out.history[out.best_epoch - 1].val_bal_acc;
            (out.net.scores(&aligned, &index(&split.test)?)?, Some(out.best_epoch), Some(val_ba))
        }
    };
    Ok(StrategyRun { test_scores, best_epoch, val_balanced_accuracy: val_ba, late_weights })
}

/// The shared split over the bundle's patients.
pub fn experiment_split(bundle: &ModalityBundle, labels: &LabelTable, cfg: &ExperimentConfig) -> Result<PatientSplit> {
    align_labels(bundle, labels)?;
    PatientSplit::from_labels(labels, cfg.split, seed::derive(cfg.seed, "split"))
}

/// Unimodal baselines followed by every configured fusion strategy, all on
/// one shared stratified patient split.
pub fn run_fusion_experiment(bundle: &ModalityBundle, labels: &LabelTable, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let split = experiment_split(bundle, labels, cfg)?;
    let mut baselines = Vec::new();
    let mut unimodal = Vec::new();
    for m in bundle.available() {
        let table = bundle.table(m).expect("available");
        let run = train_baseline(table, m, labels, &split, &cfg.baseline, &ResamplePlan::default(), cfg.seed)?;
        baselines.push(baseline_result(&run.scores, Some(run.best_epoch), &split, labels, cfg.threshold)?);
        unimodal.push(run.scores);
    }
    let mut fusions = Vec::new();
    let mut late_weights = None;
    for strategy in &cfg.strategies {
        let run = run_strategy(bundle, labels, &split, &unimodal, strategy, cfg)?;
        fusions.push(run.result(strategy, &split, labels, cfg.threshold)?);
        if run.late_weights.is_some() {
            late_weights = run.late_weights;
        }
    }
    Ok(ExperimentReport {
        seed: cfg.seed,
        split_sizes: [split.train.len(), split.val.len(), split.test.len()],
        baselines,
        fusions,
        late_weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::Strategy;
    use proptest::prelude::*;

    fn table(ids: &[&str], width: usize, base: f64) -> FeatureTable {
        let data = Array2::from_shape_fn((ids.len(), width), |(i, j)| base + (i * width + j) as f64);
        FeatureTable::with_default_columns(ids.iter().map(|s| s.to_string()).collect(), data, "f").unwrap()
    }

    #[test]
    fn concat_widths_and_masks() {
        let ids = ["a", "b"];
        let b = ModalityBundle::new([Some(table(&ids, 64, 0.0)), Some(table(&ids, 512, 1.0)), Some(table(&ids, 1024, 2.0))]).unwrap();
        let t = early_concat(&b, MissingPolicy::ZeroImpute).unwrap();
        assert_eq!(t.width(), 1600 + 3);
        assert_eq!(t.columns[1600], "mask_clinical");
        assert!(t.data.slice(s![.., 1600..]).iter().all(|&v| v == 1.0));
        assert!(early_concat(&b, MissingPolicy::Renormalize).is_err());
    }

    #[test]
    fn concat_places_single_modality() {
        let b = ModalityBundle::new([Some(table(&["a"], 2, 1.0)), Some(table(&["b"], 3, 5.0)), None]).unwrap();
        let t = early_concat(&b, MissingPolicy::ZeroImpute).unwrap();
        let a = t.get("a").unwrap();
        assert_eq!(a.to_vec(), vec![1.0, 2.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let t2 = early_concat(&b, MissingPolicy::LearnedDefault).unwrap();
        assert_eq!(t2.get("a").unwrap().to_vec(), vec![1.0, 2.0, 5.0, 6.0, 7.0, 1.0, 0.0]);
    }

    #[test]
    fn concat_slices_round_trip() {
        let ids = ["p1", "p2", "p3"];
        let b = ModalityBundle::new([Some(table(&ids, 4, 0.5)), None, Some(table(&ids, 6, -3.0))]).unwrap();
        let t = early_concat(&b, MissingPolicy::ZeroImpute).unwrap();
        for (m, r) in b.block_ranges() {
            assert_eq!(t.data.slice(s![.., r]), b.table(m).unwrap().data);
        }
    }

    #[test]
    fn mean_pool_identity() {
        let mk = |v: f64| FeatureTable::with_default_columns(vec!["a".into()], Array2::from_elem((1, 2), v), "f").unwrap();
        let b = ModalityBundle::new([Some(mk(1.0)), Some(mk(3.0)), None]).unwrap();
        let proj = [Some(Projection::identity(2)), Some(Projection::identity(2)), None];
        assert_eq!(early_mean_pool(&b, &proj).unwrap().data.row(0).to_vec(), vec![2.0, 2.0]);
        let single = ModalityBundle::new([Some(mk(1.0)), None, None]).unwrap();
        assert_eq!(early_mean_pool(&single, &proj).unwrap().data.row(0).to_vec(), vec![1.0, 1.0]);
    }

    #[test]
    fn normalized_table_weights() {
        let w = normalized_weights(&[0.816, 0.868, 0.702]).unwrap();
        for (a, b) in w.iter().zip([0.342, 0.364, 0.294]) {
            assert!((a - b).abs() < 5e-4, "{a} vs {b}");
        }
        assert!(normalized_weights(&[0.0, 0.0]).is_err());
        assert!(normalized_weights(&[-1.0, 2.0]).is_err());
    }

    #[test]
    fn renormalization_contract() {
        let w = [0.816, 0.868, 0.702];
        let fused = late_weighted_sum(&[vec![Some(0.9), None, Some(0.3)]], &w, MissingPolicy::Renormalize).unwrap();
        let c = canonical_weights(&w).unwrap();
        assert_eq!(fused[0], (c[0] * 0.9 + c[2] * 0.3) / (c[0] + c[2]));
        let same = late_weighted_sum(&[vec![Some(0.4); 3]], &w, MissingPolicy::Renormalize).unwrap();
        assert_eq!(same[0], 0.4);
    }

    #[test]
    fn zero_weight_present_set_rejected() {
        assert!(late_weighted_sum(&[vec![None, Some(0.5)]], &[1.0, 0.0], MissingPolicy::Renormalize).is_err());
    }

    #[test]
    fn orphans_are_listed() {
        let b = ModalityBundle::new([Some(table(&["a", "b"], 2, 0.0)), None, None]).unwrap();
        let labels = LabelTable::new(vec!["a".into(), "c".into()], vec![true, false]).unwrap();
        let err = align_labels(&b, &labels).unwrap_err().to_string();
        assert!(err.contains("b (no label)") && err.contains("c (no features)"), "{err}");
    }

    #[test]
    fn plan_validation() {
        let bad = FusionPlan { strategy: Strategy::EarlyConcat, missing_policy: MissingPolicy::Renormalize, seed: 0 };
        assert!(bad.validate().is_err());
        let ok = FusionPlan { strategy: Strategy::EarlyMeanPool { projection_dim: 128 }, missing_policy: MissingPolicy::Renormalize, seed: 0 };
        assert!(ok.validate().is_ok());
        let json = serde_json::to_string(&ok).unwrap();
        assert_eq!(serde_json::from_str::<FusionPlan>(&json).unwrap(), ok);
    }

    proptest! {
        #[test]
        fn scaling_weights_is_bit_invariant(
            w in prop::collection::vec(0.01f64..10.0, 3),
            c in 1e-3f64..1e3,
            p in prop::collection::vec(prop::collection::vec(prop::option::of(0.0f64..=1.0), 3), 1..20),
        ) {
            let p: Vec<Vec<Option<f64>>> = p.into_iter().map(|mut r| { if r.iter().all(Option::is_none) { r[0] = Some(0.5); } r }).collect();
            let scaled: Vec<f64> = w.iter().map(|x| x * c).collect();
            let a = late_weighted_sum(&p, &w, MissingPolicy::Renormalize).unwrap();
            let b = late_weighted_sum(&p, &scaled, MissingPolicy::Renormalize).unwrap();
            prop_assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
            for (row, f) in p.iter().zip(&a) {
                let present: Vec<f64> = row.iter().flatten().copied().collect();
                let lo = present.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(*f >= lo && *f <= hi);
            }
        }

        #[test]
        fn policies_agree_when_complete(
            w in prop::collection::vec(0.01f64..10.0, 3),
            p in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 3), 1..20),
        ) {
            let p: Vec<Vec<Option<f64>>> = p.into_iter().map(|r| r.into_iter().map(Some).collect()).collect();
            let a = late_weighted_sum(&p, &w, MissingPolicy::Renormalize).unwrap();
            let b = late_weighted_sum(&p, &w, MissingPolicy::ZeroImpute).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn mean_pool_equals_rescaled_zero_imputed_sum(
            vals in prop::collection::vec(-5.0f64..5.0, 6),
            mask in prop::collection::vec(any::<bool>(), 3),
        ) {
            let mut mask = mask;
            if !mask.iter().any(|&b| b) { mask[1] = true; }
            let tables: [Option<FeatureTable>; 3] = std::array::from_fn(|m| {
                let data = Array2::from_shape_vec((1, 2), vals[2 * m..2 * m + 2].to_vec()).unwrap();
                let ids = if mask[m] { vec!["x".to_string()] } else { vec!["y".to_string()] };
                Some(FeatureTable::with_default_columns(ids, data, "f").unwrap())
            });
            let b = ModalityBundle::new(tables).unwrap();
            let proj = [Some(Projection::identity(2)), Some(Projection::identity(2)), Some(Projection::identity(2))];
            let pooled = early_mean_pool(&b, &proj).unwrap();
            let row = pooled.get("x").unwrap();
            let present = mask.iter().filter(|&&m| m).count() as f64;
            for j in 0..2 {
                let zero_imputed: f64 = (0..3).map(|m| if mask[m] { vals[2 * m + j] } else { 0.0 }).sum();
                let renorm = zero_imputed / 3.0 * (3.0 / present);
                prop_assert!((row[j] - renorm).abs() < 1e-12);
            }
        }
    }
}
