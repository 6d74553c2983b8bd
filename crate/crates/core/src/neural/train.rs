use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::loss::{bce_pos_weight, weighted_ce, LossOutput};
use super::optim::{Adam, AdamConfig, StepDecay};
use super::{positive_probs, MlpModel, Mode, OutputHead};
use crate::error::{Error, Result};
use crate::metrics;
use crate::resample::WeightedSampler;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeights {
    Uniform,
    /// `n / (2 n_c)` from the training fold.
    Balanced,
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosWeight {
    /// Negative/positive count ratio of the training fold.
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    WeightedCrossEntropy { class_weights: ClassWeights },
    BcePosWeight { pos_weight: PosWeight },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    #[default]
    Plain,
    /// Draw each epoch with replacement under inverse class-frequency weights.
    BalancedWeighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    ValLoss,
    #[default]
    ValBalancedAccuracy,
    LastEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default)]
    pub scheduler: Option<StepDecay>,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Stop once validation loss fails to improve for more than this many epochs.
    #[serde(default)]
    pub early_stopping_patience: Option<usize>,
    #[serde(default)]
    pub sampler: Sampler,
    #[serde(default)]
    pub feature_noise_sigma: f64,
    #[serde(default)]
    pub selection: Selection,
    #[serde(default)]
    pub seed: u64,
}

fn default_batch() -> usize {
    32
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be positive"));
        }
        if !(self.feature_noise_sigma >= 0.0 && self.feature_noise_sigma.is_finite()) {
            return Err(Error::invalid(format!("feature noise sigma {}", self.feature_noise_sigma)));
        }
        if let LossKind::BcePosWeight { pos_weight: PosWeight::Value(w) } = self.loss {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::invalid(format!("pos_weight must be positive, got {w}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_bal_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshot at the selected epoch, in eval mode.
    pub model: MlpModel,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch of the returned snapshot.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Loss with every data-dependent constant resolved from the training fold.
pub(crate) enum ResolvedLoss {
    Ce { weights: Vec<f64>, smoothing: f64 },
    Bce { pos_weight: f64, smoothing: f64 },
}

impl ResolvedLoss {
    pub(crate) fn new(kind: &LossKind, head: OutputHead, out_width: usize, smoothing: f64, y: &[bool]) -> Result<Self> {
        let pos = y.iter().filter(|&&v| v).count();
        let neg = y.len() - pos;
        match kind {
            LossKind::WeightedCrossEntropy { class_weights } => {
                let classes = out_width.max(2);
                let weights = match class_weights {
                    ClassWeights::Uniform => vec![1.0; classes],
                    ClassWeights::Balanced => {
                        if pos == 0 || neg == 0 {
                            return Err(Error::invalid("balanced class weights need both classes in the training fold"));
                        }
                        let n = y.len() as f64;
                        vec![n / (2.0 * neg as f64), n / (2.0 * pos as f64)]
                    }
                    ClassWeights::Explicit(w) => w.clone(),
                };
                Ok(ResolvedLoss::Ce { weights, smoothing })
            }
            LossKind::BcePosWeight { pos_weight } => {
                if head != OutputHead::SigmoidBinary {
                    return Err(Error::invalid("BCE with pos_weight needs a sigmoid head"));
                }
                let pos_weight = match pos_weight {
                    PosWeight::Value(w) => *w,
                    PosWeight::Auto if pos == 0 || neg == 0 => 1.0,
                    PosWeight::Auto => neg as f64 / pos as f64,
                };
                Ok(ResolvedLoss::Bce { pos_weight, smoothing })
            }
        }
    }

    pub(crate) fn eval(&self, probs: &Array2<f64>, y: &[bool]) -> Result<LossOutput> {
        match self {
            ResolvedLoss::Ce { weights, smoothing } => {
                let labels: Vec<usize> = y.iter().map(|&v| v as usize).collect();
                weighted_ce(probs.view(), &labels, weights, *smoothing)
            }
            ResolvedLoss::Bce { pos_weight, smoothing } => {
                let targets: Vec<f64> = y.iter().map(|&v| if v { 1.0 - smoothing / 2.0 } else { smoothing / 2.0 }).collect();
                bce_pos_weight(probs.view(), &targets, *pos_weight)
            }
        }
    }
}

fn accuracy(scores: &[f64], y: &[bool]) -> f64 {
    let hits = scores.iter().zip(y).filter(|(&s, &l)| (s >= metrics::DEFAULT_THRESHOLD) == l).count();
    hits as f64 / y.len() as f64
}

/// Train with mini-batch Adam and return the snapshot chosen by `cfg.selection`.
pub fn train(
    mut model: MlpModel,
    x_train: ArrayView2<f64>,
    y_train: &[bool],
    x_val: ArrayView2<f64>,
    y_val: &[bool],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if x_train.nrows() == 0 || x_val.nrows() == 0 {
        return Err(Error::invalid("training and validation splits must be non-empty"));
    }
    if x_train.nrows() != y_train.len() || x_val.nrows() != y_val.len() {
        return Err(Error::shape("feature rows and labels differ in length"));
    }
    let head = model.spec.output;
    let loss_fn = ResolvedLoss::new(&cfg.loss, head, model.spec.output_width(), model.spec.label_smoothing, y_train)?;
    let has_bn = model.norms.iter().any(Option::is_some);
    let sampler = match cfg.sampler {
        Sampler::Plain => None,
        Sampler::BalancedWeighted => Some(WeightedSampler::balanced(y_train)?),
    };
    let noise = (cfg.feature_noise_sigma > 0.0)
        .then(|| Normal::new(0.0, cfg.feature_noise_sigma).map_err(|e| Error::invalid(e.to_string())))
        .transpose()?;

    let mut rng = seed::rng(cfg.seed);
    let mut adam = Adam::new();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, f64, usize, MlpModel)> = None; // (ba, val_loss, epoch, model)
    let mut best_val_loss = f64::INFINITY;
    let mut stale = 0usize;
    let mut stopped_early = false;
    let n = x_train.nrows();

    for epoch in 0..cfg.epochs {
        let lr = cfg.scheduler.map_or(cfg.optimizer.lr, |s| s.lr_at(cfg.optimizer.lr, epoch));
        let step_cfg = AdamConfig { lr, ..cfg.optimizer };
        let order: Vec<usize> = match &sampler {
            Some(s) => s.draw(n, &mut rng),
            None => {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.shuffle(&mut rng);
                idx
            }
        };

        model.set_mode(Mode::Train);
        let (mut loss_sum, mut hits, mut seen) = (0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            if has_bn && batch.len() < 2 {
                continue;
            }
            let mut xb = x_train.select(Axis(0), batch);
            if let Some(dist) = &noise {
                xb.mapv_inplace(|v| v + dist.sample(&mut rng));
            }
            let yb: Vec<bool> = batch.iter().map(|&i| y_train[i]).collect();
            let (probs, cache) = model.forward(xb.view(), &mut rng)?;
            let out = loss_fn.eval(&probs, &yb)?;
            if !out.loss.is_finite() {
                return Err(Error::Diverged { epoch: epoch + 1, loss: out.loss });
            }
            let grads = model.backward(&cache, &out.grad);
            adam.step(&mut model, &grads, &step_cfg)?;
            loss_sum += out.loss * batch.len() as f64;
            hits += accuracy(&positive_probs(head, &probs), &yb) * batch.len() as f64;
            seen += batch.len();
        }
        if seen == 0 {
            return Err(Error::invalid("no training batch had at least 2 rows"));
        }

        model.set_mode(Mode::Eval);
        let val_probs = model.predict(x_val)?;
        let val_loss = loss_fn.eval(&val_probs, y_val)?.loss;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch: epoch + 1, loss: val_loss });
        }
        let val_scores = positive_probs(head, &val_probs);
        let val_bal_acc = metrics::balanced_accuracy(y_val, &val_scores, metrics::DEFAULT_THRESHOLD)?;
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / seen as f64,
            train_acc: hits / seen as f64,
            val_loss,
            val_bal_acc,
        };
        history.push(record);

        let better = match (&best, cfg.selection) {
            (None, _) => true,
            (Some(_), Selection::LastEpoch) => true,
            (Some((_, loss, _, _)), Selection::ValLoss) => val_loss < *loss,
            (Some((ba, loss, _, _)), Selection::ValBalancedAccuracy) => {
                val_bal_acc > *ba || (val_bal_acc == *ba && val_loss < *loss)
            }
        };
        if better {
            best = Some((val_bal_acc, val_loss, epoch + 1, model.clone()));
        }

        if val_loss < best_val_loss {
            best_val_loss = val_loss;
            stale = 0;
        } else {
            stale += 1;
        }
        if let Some(patience) = cfg.early_stopping_patience {
            if stale > patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (_, _, best_epoch, mut model) = best.expect("at least one epoch ran");
    model.set_mode(Mode::Eval);
    Ok(TrainOutcome { model, history, best_epoch, stopped_early })
}

/// History as comma-separated text.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_bal_acc\n");
    for r in history {
        let _ = writeln!(out, "{},{},{},{},{}", r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_bal_acc);
    }
    out
}
