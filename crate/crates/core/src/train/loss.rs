//! Class-weighted categorical cross-entropy and label smoothing.
//!
//! For a batch of `n` probability rows `p` and target rows `t`,
//!
//! ```text
//! loss = (1/n) Σ_i w_{c(i)} · (−Σ_j t_ij · ln max(p_ij, 1e-12))
//! ```
//!
//! where `c(i)` is the true class of sample `i`. Weights enter linearly and the
//! mean is a plain mean, not normalized by the weights.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Probabilities are clamped to this floor before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Index of the largest entry; the lowest index wins exact ties.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn check_pair<T: Scalar>(probs: &Tensor<T>, targets: &Tensor<T>) -> Result<(usize, usize)> {
    if probs.rank() != 2 || probs.shape() != targets.shape() {
        return Err(Error::shape("cross_entropy", probs.shape(), targets.shape()));
    }
    Ok((probs.shape()[0], probs.shape()[1]))
}

/// Unweighted per-sample losses `−Σ_j t_ij ln p_ij`.
pub fn sample_losses<T: Scalar>(probs: &Tensor<T>, targets: &Tensor<T>) -> Result<Vec<T>> {
    let (_, k) = check_pair(probs, targets)?;
    let floor = T::of(PROB_FLOOR);
    Ok(probs
        .data()
        .chunks(k)
        .zip(targets.data().chunks(k))
        .map(|(p, t)| {
            -p.iter()
                .zip(t)
                .fold(T::zero(), |s, (&pj, &tj)| s + tj * pj.max(floor).ln())
        })
        .collect())
}

/// Batch loss with explicit per-sample weights.
pub(crate) fn weighted_ce_value<T: Scalar>(
    probs: &Tensor<T>,
    targets: &Tensor<T>,
    sample_weights: &[T],
) -> Result<T> {
    let losses = sample_losses(probs, targets)?;
    if sample_weights.len() != losses.len() {
        return Err(Error::shape(
            "cross_entropy",
            probs.shape(),
            &[sample_weights.len()],
        ));
    }
    let total = losses
        .iter()
        .zip(sample_weights)
        .fold(T::zero(), |s, (&l, &w)| s + w * l);
    Ok(total / T::of(losses.len() as f64))
}

/// `∂loss/∂p_ij = −w_i t_ij / (n p_ij)`, zero where the clamp is active.
pub(crate) fn weighted_ce_grad<T: Scalar>(
    probs: &Tensor<T>,
    targets: &Tensor<T>,
    sample_weights: &[T],
) -> Tensor<T> {
    let k = probs.shape()[1];
    let n = T::of(probs.shape()[0] as f64);
    let floor = T::of(PROB_FLOOR);
    let mut d = Vec::with_capacity(probs.len());
    for ((p, t), &w) in probs
        .data()
        .chunks(k)
        .zip(targets.data().chunks(k))
        .zip(sample_weights)
    {
        d.extend(p.iter().zip(t).map(|(&pj, &tj)| {
            if pj > floor {
                -(w * tj) / (n * pj)
            } else {
                T::zero()
            }
        }));
    }
    Tensor::from_parts(probs.shape().to_vec(), d)
}

/// Per-sample weight `w_{c(i)}`, with `c(i)` the argmax of each label row.
pub fn sample_weights<T: Scalar>(labels: &Tensor<T>, class_weights: Option<&[T]>) -> Result<Vec<T>> {
    let k = labels.shape().get(1).copied().unwrap_or(0);
    let rows = labels.data().chunks(k.max(1));
    match class_weights {
        None => Ok(vec![T::one(); labels.shape().first().copied().unwrap_or(0)]),
        Some(w) if w.len() == k => Ok(rows.map(|r| w[argmax(r)]).collect()),
        Some(w) => Err(Error::shape("cross_entropy", labels.shape(), &[w.len()])),
    }
}

/// Mean class-weighted cross-entropy. `None` weights means every weight is 1.
pub fn cross_entropy<T: Scalar>(
    probs: &Tensor<T>,
    labels: &Tensor<T>,
    class_weights: Option<&[T]>,
) -> Result<T> {
    check_pair(probs, labels)?;
    let w = sample_weights(labels, class_weights)?;
    weighted_ce_value(probs, labels, &w)
}

/// Replaces one-hot rows with `1 − ε` on the true class and `ε/(K−1)` elsewhere.
pub fn label_smooth<T: Scalar>(one_hot: &Tensor<T>, epsilon: f64) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::invalid(
            "label_smooth",
            format!("epsilon {epsilon} outside [0, 1)"),
        ));
    }
    if one_hot.rank() != 2 || one_hot.shape()[1] < 2 {
        return Err(Error::invalid(
            "label_smooth",
            format!("need [N, K>=2] labels, got {:?}", one_hot.shape()),
        ));
    }
    let k = one_hot.shape()[1];
    let on = T::of(1.0 - epsilon);
    let off = T::of(epsilon / (k - 1) as f64);
    let mut out = Vec::with_capacity(one_hot.len());
    for row in one_hot.data().chunks(k) {
        let ones = row.iter().filter(|&&v| v == T::one()).count();
        let zeros = row.iter().filter(|&&v| v == T::zero()).count();
        if ones != 1 || zeros != k - 1 {
            return Err(Error::invalid("label_smooth", "label row is not one-hot"));
        }
        out.extend(row.iter().map(|&v| if v == T::one() { on } else { off }));
    }
    Ok(Tensor::from_parts(one_hot.shape().to_vec(), out))
}

/// Cross-entropy against label-smoothed targets, i.e. the convex combination
/// `−Σ_j q_j ln p_j` with `q = label_smooth(one_hot, ε)`. Class weights are
/// looked up by the one-hot class.
pub fn smoothed_cross_entropy<T: Scalar>(
    probs: &Tensor<T>,
    one_hot: &Tensor<T>,
    epsilon: f64,
    class_weights: Option<&[T]>,
) -> Result<T> {
    check_pair(probs, one_hot)?;
    let w = sample_weights(one_hot, class_weights)?;
    let smoothed = label_smooth(one_hot, epsilon)?;
    weighted_ce_value(probs, &smoothed, &w)
}

/// One-hot rows for class indices.
pub fn one_hot<T: Scalar>(classes: &[usize], k: usize) -> Result<Tensor<T>> {
    let mut data = vec![T::zero(); classes.len() * k];
    for (i, &c) in classes.iter().enumerate() {
        if c >= k {
            return Err(Error::invalid("one_hot", format!("class {c} >= {k}")));
        }
        data[i * k + c] = T::one();
    }
    Ok(Tensor::from_parts(vec![classes.len(), k], data))
}
