//! Feed-forward networks built from a fixed layer vocabulary: dense, batch
//! normalization, ReLU, inverted dropout, and a sigmoid or softmax head.
//!
//! Hidden blocks compute `dropout(relu(bn(x W + b)))`. Backpropagation is
//! written out by hand for exactly these blocks.

mod io;
mod loss;
mod optim;
mod profile;
mod train;

pub use io::{load_model, save_model, ModelFile, MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use loss::{bce_pos_weight, weighted_ce, LossOutput, PROB_EPS};
pub use optim::{adam_step, Adam, AdamConfig, AdamState, StepDecay};
pub use profile::Profile;
pub(crate) use train::ResolvedLoss;
pub use train::{
    history_csv, train, ClassWeights, EpochRecord, LossKind, PosWeight, Sampler, Selection, TrainConfig, TrainOutcome,
};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, Rng};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    /// One logit, sigmoid probability of the positive class.
    SigmoidBinary,
    /// One logit per class, softmax probabilities.
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width, hidden widths, output width.
    pub layer_sizes: Vec<usize>,
    /// One rate per hidden layer.
    pub dropout: Vec<f64>,
    /// One flag per hidden layer.
    pub batch_norm: Vec<bool>,
    #[serde(default)]
    pub activation: Activation,
    pub output: OutputHead,
    #[serde(default)]
    pub label_smoothing: f64,
}

impl MlpSpec {
    /// Uniform dropout/batch-norm settings across `hidden` layers.
    pub fn new(input: usize, hidden: &[usize], output: OutputHead, dropout: f64, batch_norm: bool) -> Self {
        let out = match output {
            OutputHead::SigmoidBinary => 1,
            OutputHead::Softmax => 2,
        };
        let mut layer_sizes = vec![input];
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(out);
        MlpSpec {
            layer_sizes,
            dropout: vec![dropout; hidden.len()],
            batch_norm: vec![batch_norm; hidden.len()],
            activation: Activation::Relu,
            output,
            label_smoothing: 0.0,
        }
    }

    pub fn hidden_count(&self) -> usize {
        self.layer_sizes.len().saturating_sub(2)
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::invalid("layer_sizes needs at least input and output widths"));
        }
        if self.layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::invalid(format!("zero-width layer in {:?}", self.layer_sizes)));
        }
        let hidden = self.hidden_count();
        if self.dropout.len() != hidden || self.batch_norm.len() != hidden {
            return Err(Error::invalid(format!(
                "{hidden} hidden layers but {} dropout rates and {} batch-norm flags",
                self.dropout.len(),
                self.batch_norm.len()
            )));
        }
        if let Some(p) = self.dropout.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return Err(Error::invalid(format!("dropout rate {p} not in [0, 1)")));
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return Err(Error::invalid(format!("label smoothing {} not in [0, 0.5)", self.label_smoothing)));
        }
        match (self.output, self.output_width()) {
            (OutputHead::SigmoidBinary, 1) => Ok(()),
            (OutputHead::Softmax, w) if w >= 2 => Ok(()),
            (head, w) => Err(Error::invalid(format!("{head:?} head cannot have output width {w}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `in × out`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub spec: MlpSpec,
    pub layers: Vec<Dense>,
    pub norms: Vec<Option<BatchNorm>>,
    pub mode: Mode,
}

#[derive(Debug, Clone)]
struct HiddenCache {
    input: Array2<f64>,
    xhat: Option<Array2<f64>>,
    inv_std: Option<Array1<f64>>,
    pre_activation: Array2<f64>,
    drop_mask: Option<Array2<f64>>,
}

/// Intermediate values kept by a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    hidden: Vec<HiddenCache>,
    last_input: Array2<f64>,
    mode: Mode,
    pub logits: Array2<f64>,
}

/// Gradients mirroring the model's trainable tensors.
#[derive(Debug, Clone)]
pub struct Grads {
    pub layers: Vec<Dense>,
    /// (d gamma, d beta) per hidden layer with batch norm.
    pub norms: Vec<Option<(Array1<f64>, Array1<f64>)>>,
    /// Gradient with respect to the network input.
    pub input: Array2<f64>,
}

fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Head probabilities from logits.
pub fn head_probs(head: OutputHead, logits: &Array2<f64>) -> Array2<f64> {
    match head {
        OutputHead::SigmoidBinary => logits.mapv(sigmoid),
        OutputHead::Softmax => softmax_rows(logits),
    }
}

/// Positive-class probability per row.
pub fn positive_probs(head: OutputHead, probs: &Array2<f64>) -> Vec<f64> {
    match head {
        OutputHead::SigmoidBinary => probs.column(0).to_vec(),
        OutputHead::Softmax => probs.column(probs.ncols() - 1).to_vec(),
    }
}

impl MlpModel {
    /// Fresh model with fan-in uniform initialization, in train mode.
    pub fn new(spec: MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = seed::rng(seed);
        let mut layers = Vec::with_capacity(spec.layer_sizes.len() - 1);
        for w in spec.layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-bound..bound));
            let bias = Array1::from_shape_simple_fn(fan_out, || rng.random_range(-bound..bound));
            layers.push(Dense { weight, bias });
        }
        let norms = (0..spec.hidden_count())
            .map(|l| spec.batch_norm[l].then(|| BatchNorm::new(spec.layer_sizes[l + 1])))
            .collect();
        Ok(MlpModel { spec, layers, norms, mode: Mode::Train })
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn hidden_count(&self) -> usize {
        self.spec.hidden_count()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.spec.input_width() {
            return Err(Error::shape(format!(
                "batch width {} vs model input width {}",
                x.ncols(),
                self.spec.input_width()
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::shape("empty batch"));
        }
        Ok(())
    }

    /// Forward pass in the model's current mode. Train mode draws dropout
    /// masks from `rng` and updates batch-norm running statistics.
    pub fn forward(&mut self, x: ArrayView2<f64>, rng: &mut Rng) -> Result<(Array2<f64>, Cache)> {
        self.check_input(&x)?;
        let mode = self.mode;
        let n = x.nrows();
        if mode == Mode::Train && n < 2 && self.norms.iter().any(Option::is_some) {
            return Err(Error::shape("batch norm in train mode needs a batch of at least 2"));
        }
        let mut hidden = Vec::with_capacity(self.hidden_count());
        let mut a = x.to_owned();
        for l in 0..self.hidden_count() {
            let dense = &self.layers[l];
            let z = a.dot(&dense.weight) + &dense.bias;
            let (y, xhat, inv_std) = match (&mut self.norms[l], mode) {
                (Some(bn), Mode::Train) => {
                    let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
                    let centered = &z - &mean;
                    let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty batch");
                    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                    let xhat = &centered * &inv_std;
                    let y = &xhat * &bn.gamma + &bn.beta;
                    let unbiased = &var * (n as f64 / (n as f64 - 1.0));
                    bn.running_mean = &bn.running_mean * (1.0 - BN_MOMENTUM) + &mean * BN_MOMENTUM;
                    bn.running_var = &bn.running_var * (1.0 - BN_MOMENTUM) + &unbiased * BN_MOMENTUM;
                    (y, Some(xhat), Some(inv_std))
                }
                (Some(bn), Mode::Eval) => {
                    let inv_std = bn.running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                    let xhat = (&z - &bn.running_mean) * &inv_std;
                    let y = &xhat * &bn.gamma + &bn.beta;
                    (y, Some(xhat), Some(inv_std))
                }
                (None, _) => (z, None, None),
            };
            let mut h = relu(&y);
            let p = self.spec.dropout[l];
            let drop_mask = (mode == Mode::Train && p > 0.0).then(|| {
                let keep = 1.0 / (1.0 - p);
                Array2::from_shape_simple_fn(h.raw_dim(), || if rng.random::<f64>() < p { 0.0 } else { keep })
            });
            if let Some(mask) = &drop_mask {
                h *= mask;
            }
            hidden.push(HiddenCache { input: a, xhat, inv_std, pre_activation: y, drop_mask });
            a = h;
        }
        let out = self.layers.last().expect("at least one layer");
        let logits = a.dot(&out.weight) + &out.bias;
        let probs = head_probs(self.spec.output, &logits);
        Ok((probs, Cache { hidden, last_input: a, mode, logits }))
    }

    /// Eval-mode probabilities without touching the model.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let logits = self.eval_logits(x, None)?;
        Ok(head_probs(self.spec.output, &logits))
    }

    /// Eval-mode positive-class probability per row.
    pub fn predict_positive(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(positive_probs(self.spec.output, &self.predict(x)?))
    }

    /// Post-activation values of hidden layer `layer` in eval mode.
    pub fn extract_embedding(&self, x: ArrayView2<f64>, layer: usize) -> Result<Array2<f64>> {
        if layer >= self.hidden_count() {
            return Err(Error::invalid(format!(
                "layer index {layer} out of range for {} hidden layers",
                self.hidden_count()
            )));
        }
        let mut out = None;
        self.eval_logits(x, Some((layer, &mut out)))?;
        Ok(out.expect("captured embedding"))
    }

    fn eval_logits(&self, x: ArrayView2<f64>, mut capture: Option<(usize, &mut Option<Array2<f64>>)>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut a = x.to_owned();
        for l in 0..self.hidden_count() {
            let dense = &self.layers[l];
            let mut z = a.dot(&dense.weight) + &dense.bias;
            if let Some(bn) = &self.norms[l] {
                let inv_std = bn.running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                z = (&z - &bn.running_mean) * &inv_std * &bn.gamma + &bn.beta;
            }
            a = relu(&z);
            if let Some((at, slot)) = capture.as_mut() {
                if *at == l {
                    **slot = Some(a.clone());
                    return Ok(a);
                }
            }
        }
        let out = self.layers.last().expect("at least one layer");
        Ok(a.dot(&out.weight) + &out.bias)
    }

    /// Backpropagate `dlogits` (gradient of the loss w.r.t. the logits).
    pub fn backward(&self, cache: &Cache, dlogits: &Array2<f64>) -> Grads {
        let n_layers = self.layers.len();
        let mut layer_grads: Vec<Option<Dense>> = vec![None; n_layers];
        let mut norm_grads: Vec<Option<(Array1<f64>, Array1<f64>)>> = vec![None; self.hidden_count()];

        let out = &self.layers[n_layers - 1];
        layer_grads[n_layers - 1] = Some(Dense {
            weight: standard(cache.last_input.t().dot(dlogits)),
            bias: dlogits.sum_axis(Axis(0)),
        });
        let mut da = dlogits.dot(&out.weight.t());

        for l in (0..self.hidden_count()).rev() {
            let hc = &cache.hidden[l];
            if let Some(mask) = &hc.drop_mask {
                da *= mask;
            }
            let mut dz = da;
            dz.zip_mut_with(&hc.pre_activation, |g, &y| {
                if y <= 0.0 {
                    *g = 0.0
                }
            });
            if let (Some(bn), Some(xhat), Some(inv_std)) = (&self.norms[l], &hc.xhat, &hc.inv_std) {
                let dgamma = (&dz * xhat).sum_axis(Axis(0));
                let dbeta = dz.sum_axis(Axis(0));
                let dxhat = &dz * &bn.gamma;
                dz = match cache.mode {
                    Mode::Train => {
                        let n = dxhat.nrows() as f64;
                        let sum_dxhat = dxhat.sum_axis(Axis(0));
                        let sum_dxhat_xhat = (&dxhat * xhat).sum_axis(Axis(0));
                        let inner = &dxhat * n - &sum_dxhat - &(xhat * &sum_dxhat_xhat);
                        inner * &(inv_std / n)
                    }
                    Mode::Eval => dxhat * inv_std,
                };
                norm_grads[l] = Some((dgamma, dbeta));
            }
            let dense = &self.layers[l];
            layer_grads[l] = Some(Dense {
                weight: standard(hc.input.t().dot(&dz)),
                bias: dz.sum_axis(Axis(0)),
            });
            da = dz.dot(&dense.weight.t());
        }
        Grads {
            layers: layer_grads.into_iter().map(|g| g.expect("every layer visited")).collect(),
            norms: norm_grads,
            input: da,
        }
    }

    /// Trainable tensors paired with their gradients, in serialization order.
    pub(crate) fn trainable_with_grads<'a>(&'a mut self, grads: &'a Grads) -> Vec<(String, &'a mut [f64], &'a [f64])> {
        let mut out = Vec::new();
        let MlpModel { layers, norms, .. } = self;
        let mut norm_iter = norms.iter_mut();
        for (l, (layer, g)) in layers.iter_mut().zip(&grads.layers).enumerate() {
            out.push((format!("fc{l}.weight"), slice_mut(&mut layer.weight), slice(&g.weight)));
            out.push((format!("fc{l}.bias"), slice_mut(&mut layer.bias), slice(&g.bias)));
            if let Some(norm) = norm_iter.next() {
                if let (Some(bn), Some((dg, db))) = (norm.as_mut(), &grads.norms[l]) {
                    out.push((format!("bn{l}.gamma"), slice_mut(&mut bn.gamma), slice(dg)));
                    out.push((format!("bn{l}.beta"), slice_mut(&mut bn.beta), slice(db)));
                }
            }
        }
        out
    }

    /// Every stored tensor (trainable and running statistics) with its name and shape.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("fc{l}.weight"), layer.weight.shape().to_vec(), slice(&layer.weight)));
            out.push((format!("fc{l}.bias"), layer.bias.shape().to_vec(), slice(&layer.bias)));
            if let Some(Some(bn)) = self.norms.get(l) {
                for (name, t) in [
                    ("gamma", &bn.gamma),
                    ("beta", &bn.beta),
                    ("running_mean", &bn.running_mean),
                    ("running_var", &bn.running_var),
                ] {
                    out.push((format!("bn{l}.{name}"), vec![t.len()], slice(t)));
                }
            }
        }
        out
    }
}

fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

fn slice<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn slice_mut<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}
