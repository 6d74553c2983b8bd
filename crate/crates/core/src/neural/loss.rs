use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` inside logarithms.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    /// Gradient with respect to the logits that produced the probabilities.
    pub grad: Array2<f64>,
}

fn ln_clamped(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS).ln()
}

/// Class-weighted cross-entropy with optional label smoothing.
///
/// `probs` is either one sigmoid column (binary) or softmax rows. The loss is
/// the mean over samples of `w[y] * CE(smoothed target, p)`; weights are not
/// renormalized, so scaling every weight scales the loss.
pub fn weighted_ce(probs: ArrayView2<f64>, labels: &[usize], class_weights: &[f64], smoothing: f64) -> Result<LossOutput> {
    let n = probs.nrows();
    if n == 0 || labels.len() != n {
        return Err(Error::shape(format!("{n} probability rows vs {} labels", labels.len())));
    }
    let classes = probs.ncols().max(2);
    if class_weights.len() != classes {
        return Err(Error::shape(format!("{} class weights for {classes} classes", class_weights.len())));
    }
    if class_weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::invalid(format!("class weights must be positive, got {class_weights:?}")));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::invalid(format!("label {bad} out of range for {classes} classes")));
    }
    let off = smoothing / classes as f64;
    let on = 1.0 - smoothing + off;
    let scale = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = Array2::<f64>::zeros(probs.raw_dim());

    if probs.ncols() == 1 {
        for (i, &y) in labels.iter().enumerate() {
            let p = probs[[i, 0]];
            let w = class_weights[y];
            let t1 = if y == 1 { on } else { off };
            let t0 = 1.0 - t1;
            loss -= w * (t1 * ln_clamped(p) + t0 * ln_clamped(1.0 - p));
            grad[[i, 0]] = scale * w * (p - t1);
        }
    } else {
        for (i, &y) in labels.iter().enumerate() {
            let w = class_weights[y];
            for c in 0..classes {
                let t = if c == y { on } else { off };
                let p = probs[[i, c]];
                loss -= w * t * ln_clamped(p);
                grad[[i, c]] = scale * w * (p - t);
            }
        }
    }
    Ok(LossOutput { loss: loss * scale, grad })
}

/// Binary cross-entropy on sigmoid probabilities with the positive term
/// multiplied by `pos_weight`. Targets may be soft (in `[0, 1]`).
pub fn bce_pos_weight(probs: ArrayView2<f64>, targets: &[f64], pos_weight: f64) -> Result<LossOutput> {
    let n = probs.nrows();
    if n == 0 || targets.len() != n || probs.ncols() != 1 {
        return Err(Error::shape(format!(
            "BCE needs one probability column per target, got {}x{} for {} targets",
            n,
            probs.ncols(),
            targets.len()
        )));
    }
    if !(pos_weight.is_finite() && pos_weight > 0.0) {
        return Err(Error::invalid(format!("pos_weight must be positive, got {pos_weight}")));
    }
    let scale = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = Array2::<f64>::zeros((n, 1));
    for (i, &y) in targets.iter().enumerate() {
        let p = probs[[i, 0]];
        loss -= pos_weight * y * ln_clamped(p) + (1.0 - y) * ln_clamped(1.0 - p);
        grad[[i, 0]] = scale * (pos_weight * y * (p - 1.0) + (1.0 - y) * p);
    }
    Ok(LossOutput { loss: loss * scale, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{head_probs, OutputHead};
    use ndarray::{array, Array2};
    use rand::Rng as _;

    fn relative_error(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn max_entropy_is_ln2() {
        let p = Array2::from_elem((4, 1), 0.5);
        let out = weighted_ce(p.view(), &[0, 1, 1, 0], &[1.0, 1.0], 0.0).unwrap();
        assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-15);
        let soft = Array2::from_elem((4, 2), 0.5);
        let out2 = weighted_ce(soft.view(), &[0, 1, 1, 0], &[1.0, 1.0], 0.0).unwrap();
        assert!((out2.loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn doubling_weights_doubles_loss() {
        let p = array![[0.2, 0.8], [0.6, 0.4], [0.9, 0.1]];
        let a = weighted_ce(p.view(), &[1, 0, 1], &[0.7, 1.3], 0.1).unwrap();
        let b = weighted_ce(p.view(), &[1, 0, 1], &[1.4, 2.6], 0.1).unwrap();
        assert!((b.loss - 2.0 * a.loss).abs() < 1e-15);
    }

    #[test]
    fn extreme_probabilities_stay_finite() {
        let p = array![[0.0], [1.0]];
        let out = weighted_ce(p.view(), &[1, 0], &[1.0, 1.0], 0.0).unwrap();
        assert!(out.loss.is_finite());
        let b = bce_pos_weight(p.view(), &[1.0, 0.0], 3.0).unwrap();
        assert!(b.loss.is_finite());
    }

    #[test]
    fn bce_perfect_prediction_and_negative_only() {
        let p = array![[1.0 - 1e-15], [1e-15]];
        let out = bce_pos_weight(p.view(), &[1.0, 0.0], 1.0).unwrap();
        assert!(out.loss < 1e-11);

        let q = array![[0.3], [0.8]];
        let a = bce_pos_weight(q.view(), &[0.0, 0.0], 1.0).unwrap();
        let b = bce_pos_weight(q.view(), &[0.0, 0.0], 7.5).unwrap();
        assert_eq!(a.loss, b.loss);
    }

    #[test]
    fn bce_unit_weight_matches_weighted_ce() {
        let q = array![[0.3], [0.8], [0.55]];
        let a = bce_pos_weight(q.view(), &[1.0, 0.0, 1.0], 1.0).unwrap();
        let b = weighted_ce(q.view(), &[1, 0, 1], &[1.0, 1.0], 0.0).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-15);
    }

    #[test]
    fn invalid_weights_rejected() {
        let p = array![[0.5]];
        assert!(weighted_ce(p.view(), &[0], &[1.0, 0.0], 0.0).is_err());
        assert!(bce_pos_weight(p.view(), &[1.0], 0.0).is_err());
        assert!(weighted_ce(p.view(), &[2], &[1.0, 1.0], 0.0).is_err());
    }

    // Five-point central differences on the logits; the oracle recomputes
    // probabilities from perturbed logits and re-evaluates the scalar loss.
    fn check_logit_gradient(logits: &Array2<f64>, head: OutputHead, loss: impl Fn(&Array2<f64>) -> LossOutput) {
        let h = 1e-3;
        let analytic = loss(&head_probs(head, logits)).grad;
        let at = |idx: (usize, usize), delta: f64| {
            let mut z = logits.clone();
            z[idx] += delta;
            loss(&head_probs(head, &z)).loss
        };
        for idx in ndarray::indices(logits.raw_dim()) {
            let fd = (-at(idx, 2.0 * h) + 8.0 * at(idx, h) - 8.0 * at(idx, -h) + at(idx, -2.0 * h)) / (12.0 * h);
            let err = relative_error(analytic[idx], fd);
            assert!(err < 1e-6, "{idx:?}: {} vs {fd} ({err})", analytic[idx]);
        }
    }

    #[test]
    fn weighted_ce_gradient_matches_finite_differences() {
        let mut rng = crate::seed::rng(17);
        let logits = Array2::from_shape_simple_fn((8, 4), || rng.random_range(-2.0..2.0));
        let labels: Vec<usize> = (0..8).map(|i| (i * 3) % 4).collect();
        let weights = [0.5, 1.5, 1.0, 2.0];
        check_logit_gradient(&logits, OutputHead::Softmax, |p| weighted_ce(p.view(), &labels, &weights, 0.1).unwrap());

        let column = Array2::from_shape_simple_fn((8, 1), || rng.random_range(-2.0..2.0));
        let bin: Vec<usize> = (0..8).map(|i| i % 2).collect();
        check_logit_gradient(&column, OutputHead::SigmoidBinary, |p| {
            weighted_ce(p.view(), &bin, &[0.8, 1.7], 0.05).unwrap()
        });
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let mut rng = crate::seed::rng(23);
        let logits = Array2::from_shape_simple_fn((8, 1), || rng.random_range(-3.0..3.0));
        let targets: Vec<f64> = (0..8).map(|i| (i % 3 == 0) as u8 as f64).collect();
        check_logit_gradient(&logits, OutputHead::SigmoidBinary, |p| bce_pos_weight(p.view(), &targets, 2.5).unwrap());
    }
}
