//! Softmax and the two training losses with their logit gradients.

use super::tensor::Tensor;
use crate::error::{Error, Result};

const PROB_FLOOR: f64 = 1e-12;

/// A probability vector produced by [`softmax`].
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxOutput {
    probs: Vec<f64>,
}

impl SoftmaxOutput {
    /// Wraps an existing probability vector after checking it is one.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::invalid("probabilities must be finite and non-negative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }
}

/// Numerically stable softmax of one logit row.
pub fn softmax(logits: &[f64]) -> Result<SoftmaxOutput> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logits {logits:?}")));
    }
    let mut probs = vec![0.0; logits.len()];
    softmax_into(logits, &mut probs);
    Ok(SoftmaxOutput { probs })
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// Row-wise softmax of a `[B, K]` logit tensor.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    if !logits.all_finite() {
        return Err(Error::Numeric("non-finite logits".to_string()));
    }
    let k = logits.row_len();
    let mut probs = Tensor::zeros(logits.shape());
    for (row, out) in logits.data().chunks_exact(k).zip(probs.data_mut().chunks_exact_mut(k)) {
        softmax_into(row, out);
    }
    Ok(probs)
}

/// `-ln(probs[label])`, flooring the probability at 1e-12.
pub fn cross_entropy(probs: &SoftmaxOutput, label: usize) -> Result<f64> {
    let p = probs.probs.get(label).ok_or_else(|| {
        Error::invalid(format!(
            "label {label} out of range for {} classes",
            probs.num_classes()
        ))
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Mean cross-entropy over a batch and its gradient w.r.t. the logits.
pub fn cross_entropy_batch(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let b = logits.shape()[0];
    let k = logits.row_len();
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for a batch of {b}", labels.len())));
    }
    let mut grad = softmax_rows(logits)?;
    let mut loss = 0.0;
    let scale = 1.0 / b as f64;
    for (row, &y) in grad.data_mut().chunks_exact_mut(k).zip(labels) {
        if y >= k {
            return Err(Error::invalid(format!("label {y} out of range for {k} classes")));
        }
        loss -= row[y].max(PROB_FLOOR).ln();
        row[y] -= 1.0;
        row.iter_mut().for_each(|g| *g *= scale);
    }
    Ok((loss * scale, grad))
}

/// Euclidean distance between two probability vectors.
pub fn softmax_l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Transfer loss: the batch mean of per-sample L2 distances between teacher
/// and student softmax outputs, with its gradient w.r.t. the student logits.
///
/// `teacher_probs` is `[B, K]` probabilities; `student_logits` is `[B, K]`.
/// Samples whose distance is exactly zero contribute a zero gradient.
pub fn transfer_loss(teacher_probs: &Tensor, student_logits: &Tensor) -> Result<(f64, Tensor)> {
    if teacher_probs.shape() != student_logits.shape() {
        return Err(Error::Shape(format!(
            "teacher output {:?} vs student output {:?}",
            teacher_probs.shape(),
            student_logits.shape()
        )));
    }
    let b = student_logits.shape()[0];
    let k = student_logits.row_len();
    let student = softmax_rows(student_logits)?;
    let mut grad = Tensor::zeros(student_logits.shape());
    let mut loss = 0.0;
    let scale = 1.0 / b as f64;
    for ((t, s), g) in teacher_probs
        .data()
        .chunks_exact(k)
        .zip(student.data().chunks_exact(k))
        .zip(grad.data_mut().chunks_exact_mut(k))
    {
        let dist = softmax_l2_distance(t, s);
        loss += dist;
        if dist == 0.0 {
            continue;
        }
        // d dist / d s = (s - t) / dist, then through the softmax Jacobian.
        let mut inner = 0.0;
        for c in 0..k {
            g[c] = (s[c] - t[c]) / dist;
            inner += s[c] * g[c];
        }
        for c in 0..k {
            g[c] = scale * s[c] * (g[c] - inner);
        }
    }
    Ok((loss * scale, grad))
}
