//! Temperature-scaled softmax and the loss functions used by training
//! and evaluation.
//!
//! These are the pure (tape-free) definitions; the differentiable
//! versions in [`crate::tape`] compute the same quantities in log-space
//! with the same `1e-12` probability clamp, so values agree to within
//! rounding.

use alloc::format;
use alloc::vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Probabilities are clamped below at this value before any `ln`.
pub const PROB_CLAMP: f64 = 1e-12;

/// `ln(PROB_CLAMP)`; log-probabilities are clamped below at this value.
pub const LOG_CLAMP: f64 = -27.631021115928547; // ln(1e-12)

/// Row-wise softmax of `logits / temperature`, computed with
/// max-subtraction. `temperature == 1` is the plain softmax.
pub fn softmax_t(logits: &Tensor, temperature: f64) -> Result<Tensor> {
    if !(temperature > 0.0) {
        return Err(Error::parameter(format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    if !logits.is_matrix() {
        return Err(Error::dimension(format!(
            "softmax_t expects a matrix, got shape {:?}",
            logits.shape()
        )));
    }
    let (rows, cols) = (logits.rows(), logits.cols());
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = &logits.data()[r * cols..(r + 1) * cols];
        let mut m = f64::NEG_INFINITY;
        for &v in row {
            m = math::max(m, v / temperature);
        }
        let mut denom = 0.0;
        for (c, &v) in row.iter().enumerate() {
            let e = math::exp(v / temperature - m);
            out[r * cols + c] = e;
            denom += e;
        }
        for c in 0..cols {
            out[r * cols + c] /= denom;
        }
    }
    Tensor::matrix(rows, cols, out)
}

fn check_prob_rows(probs: &Tensor, what: &str) -> Result<()> {
    if !probs.is_matrix() {
        return Err(Error::dimension(format!(
            "{what} expects a probability matrix, got shape {:?}",
            probs.shape()
        )));
    }
    let cols = probs.cols();
    for r in 0..probs.rows() {
        let s: f64 = probs.data()[r * cols..(r + 1) * cols].iter().sum();
        if math::abs(s - 1.0) > 1e-6 {
            return Err(Error::parameter(format!(
                "{what}: row {r} sums to {s}, not a probability vector"
            )));
        }
    }
    Ok(())
}

/// Mean over the batch of `-ln(prob of the true class)`.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    check_prob_rows(probs, "cross_entropy")?;
    let (rows, cols) = (probs.rows(), probs.cols());
    if labels.len() != rows {
        return Err(Error::dimension(format!(
            "cross_entropy: {} labels for {rows} rows",
            labels.len()
        )));
    }
    let mut acc = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        if label >= cols {
            return Err(Error::index(format!(
                "cross_entropy: label {label} out of range for {cols} classes (row {r})"
            )));
        }
        acc -= math::ln(math::max(probs.at(r, label), PROB_CLAMP));
    }
    Ok(acc / rows as f64)
}

/// Cross-entropy against a full target distribution:
/// mean over the batch of `Σ_c -targets·ln(clamp(probs))`.
pub fn cross_entropy_soft(targets: &Tensor, probs: &Tensor) -> Result<f64> {
    if !targets.same_shape(probs) {
        return Err(Error::dimension(format!(
            "cross_entropy_soft: targets {:?} vs probs {:?}",
            targets.shape(),
            probs.shape()
        )));
    }
    check_prob_rows(probs, "cross_entropy_soft")?;
    let mut acc = 0.0;
    for (&t, &q) in targets.data().iter().zip(probs.data()) {
        acc -= t * math::ln(math::max(q, PROB_CLAMP));
    }
    Ok(acc / probs.rows() as f64)
}

/// Mean over the batch of `Σ_c p·ln(p/q)`; terms with `p == 0` contribute
/// nothing and `q` is clamped below at [`PROB_CLAMP`].
pub fn kl_div(p: &Tensor, q: &Tensor) -> Result<f64> {
    if !p.same_shape(q) {
        return Err(Error::dimension(format!(
            "kl_div: shapes {:?} vs {:?}",
            p.shape(),
            q.shape()
        )));
    }
    if !p.is_matrix() {
        return Err(Error::dimension(format!(
            "kl_div expects matrices, got shape {:?}",
            p.shape()
        )));
    }
    let mut acc = 0.0;
    for (&pv, &qv) in p.data().iter().zip(q.data()) {
        if pv > 0.0 {
            acc += pv * (math::ln(pv) - math::ln(math::max(qv, PROB_CLAMP)));
        }
    }
    Ok(acc / p.rows() as f64)
}

/// One-hot matrix for a label batch.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * num_classes];
    for (r, &label) in labels.iter().enumerate() {
        if label >= num_classes {
            return Err(Error::index(format!(
                "one_hot: label {label} out of range for {num_classes} classes"
            )));
        }
        data[r * num_classes + label] = 1.0;
    }
    Tensor::matrix(labels.len(), num_classes, data)
}

/// Mean `Σ p·ln p` over rows, with `p == 0` terms contributing nothing.
/// This is the constant completing a tape cross term into a full KL value.
pub fn neg_entropy_mean(p: &Tensor) -> f64 {
    let mut acc = 0.0;
    for &v in p.data() {
        if v > 0.0 {
            acc += v * math::ln(v);
        }
    }
    acc / p.rows() as f64
}
