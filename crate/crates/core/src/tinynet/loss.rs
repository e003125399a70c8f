//! Classification and regression losses, each returning the loss value and
//! its gradient with respect to the inputs.

use alloc::vec::Vec;

use crate::fmath;
use crate::geometry::RegressionTarget;
use crate::tinynet::tensor::Tensor;
use crate::{Error, Result};

/// Combined classification + regression loss with an explicit weight.
/// `total` is assembled exactly as `cls_loss + lambda · bbox_loss`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBundle {
    pub cls_loss: f64,
    pub bbox_loss: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossBundle {
    pub fn new(cls_loss: f64, bbox_loss: f64, lambda: f64) -> Self {
        Self { cls_loss, bbox_loss, lambda, total: cls_loss + lambda * bbox_loss }
    }
}

/// Numerically stable log-sum-exp.
fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = logits.iter().map(|&l| fmath::exp(l - m)).sum();
    m + fmath::ln(s)
}

/// Softmax probabilities of a logit slice.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|&l| fmath::exp(l - lse)).collect()
}

/// Multi-class cross-entropy through a softmax layer.
///
/// Returns `−log softmax(logits)[label]` and the gradient
/// `softmax(logits) − onehot(label)`.
pub fn softmax_xent(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::Usage(alloc::format!(
            "label {label} out of range for {} logits",
            logits.len()
        )));
    }
    let lse = log_sum_exp(logits);
    let loss = lse - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Per-class binary label for the one-vs-rest loss. Absent classes
/// contribute neither loss nor gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryLabel {
    Pos,
    Neg,
    Absent,
}

/// Sum of per-class 2-way cross-entropy losses over an `[N, 2]` logit
/// tensor. Column 1 holds the positive ("is this class") logit.
pub fn binary_xent_sum(per_class_logits: &Tensor, labels: &[BinaryLabel]) -> Result<(f64, Tensor)> {
    let shape = per_class_logits.shape();
    if shape.len() != 2 || shape[1] != 2 || shape[0] != labels.len() {
        return Err(Error::ShapeMismatch {
            context: "binary_xent_sum logits",
            expected: alloc::vec![labels.len(), 2],
            got: shape.to_vec(),
        });
    }
    let mut grad = Tensor::zeros(shape);
    let mut total = 0.0;
    for (c, &lbl) in labels.iter().enumerate() {
        let target = match lbl {
            BinaryLabel::Pos => 1,
            BinaryLabel::Neg => 0,
            BinaryLabel::Absent => continue,
        };
        let row = &per_class_logits.data()[c * 2..c * 2 + 2];
        let (loss, g) = softmax_xent(row, target)?;
        total += loss;
        grad.data_mut()[c * 2] = g[0];
        grad.data_mut()[c * 2 + 1] = g[1];
    }
    Ok((total, grad))
}

/// Smooth-L1 between regression targets, summed over the four components:
/// `0.5x²` for `|x| < 1`, `|x| − 0.5` otherwise.
pub fn smooth_l1(pred: &RegressionTarget, target: &RegressionTarget) -> (f64, [f64; 4]) {
    let p = pred.as_array();
    let t = target.as_array();
    let mut loss = 0.0;
    let mut grad = [0.0; 4];
    for i in 0..4 {
        let x = p[i] - t[i];
        if fmath::abs(x) < 1.0 {
            loss += 0.5 * x * x;
            grad[i] = x;
        } else {
            loss += fmath::abs(x) - 0.5;
            grad[i] = if x > 0.0 { 1.0 } else { -1.0 };
        }
    }
    (loss, grad)
}
