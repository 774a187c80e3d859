use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-sample objective that gradients are taken of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Loss {
    /// `-ln softmax(z)_y`, via the max-shifted log-sum-exp.
    CrossEntropy,
    /// `sum_c (z_c - onehot(y)_c)^2`.
    SquaredError,
    /// `z_y - max_{j != y} z_j`; ties in the max resolve to the lowest index.
    Margin,
}

/// Row-wise softmax of a `B x C` logit matrix.
pub fn softmax(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = logits.clone();
    for mut row in out.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_val || (i == 0 && v.is_nan()) {
            best = i;
            best_val = v;
        }
    }
    best
}

/// Largest logit among classes other than `label`.
pub(crate) fn runner_up(column: impl Iterator<Item = f64>, label: usize) -> usize {
    let mut best = usize::MAX;
    let mut best_val = f64::NEG_INFINITY;
    for (j, v) in column.enumerate() {
        if j != label && (best == usize::MAX || v > best_val) {
            best = j;
            best_val = v;
        }
    }
    best
}

pub(crate) fn check_labels(labels: &[usize], batch: usize, classes: usize) -> Result<()> {
    if labels.len() != batch {
        return Err(Error::input(format!("{} labels for a batch of {batch}", labels.len())));
    }
    if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
        return Err(Error::input(format!(
            "label {y} at index {i} out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// Per-sample losses and their gradients with respect to the logits.
///
/// `logits` is column-per-sample (`C x B`); the returned gradient has the same
/// layout and is the gradient of each sample's own loss (not batch-averaged).
pub(crate) fn per_sample(loss: Loss, logits: &DMatrix<f64>, labels: &[usize]) -> (Vec<f64>, DMatrix<f64>) {
    let (classes, batch) = logits.shape();
    let mut values = Vec::with_capacity(batch);
    let mut grad = DMatrix::zeros(classes, batch);
    for b in 0..batch {
        let z = logits.column(b);
        let y = labels[b];
        match loss {
            Loss::CrossEntropy => {
                let max = z.max();
                let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
                let lse = max + sum.ln();
                values.push(lse - z[y]);
                for c in 0..classes {
                    grad[(c, b)] = (z[c] - lse).exp();
                }
                grad[(y, b)] -= 1.0;
            }
            Loss::SquaredError => {
                let mut total = 0.0;
                for c in 0..classes {
                    let target = if c == y { 1.0 } else { 0.0 };
                    let r = z[c] - target;
                    total += r * r;
                    grad[(c, b)] = 2.0 * r;
                }
                values.push(total);
            }
            Loss::Margin => {
                let j = runner_up(z.iter().copied(), y);
                values.push(z[y] - z[j]);
                grad[(y, b)] = 1.0;
                grad[(j, b)] = -1.0;
            }
        }
    }
    (values, grad)
}

/// Mean cross-entropy of `B x C` logits against `labels`.
pub fn xent_loss(logits: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
    check_labels(labels, logits.nrows(), logits.ncols())?;
    if logits.nrows() == 0 {
        return Err(Error::input("empty batch"));
    }
    let (values, _) = per_sample(Loss::CrossEntropy, &logits.transpose(), labels);
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn uniform_four_class_is_ln4() {
        let logits = DMatrix::from_element(3, 4, 0.25);
        let l = xent_loss(&logits, &[0, 2, 3]).unwrap();
        assert!(close(l, 4f64.ln(), 1e-12));
    }

    #[test]
    fn saturated_logits_give_near_zero_loss() {
        let logits = DMatrix::from_row_slice(1, 3, &[30.0, -30.0, -30.0]);
        assert!(xent_loss(&logits, &[0]).unwrap() < 1e-9);
    }

    #[test]
    fn hand_computed_two_class() {
        // -ln(e^0.6 / (e^0.6 + e^0.4)) = ln(1 + e^-0.2)
        let logits = DMatrix::from_row_slice(1, 2, &[0.6, 0.4]);
        let l = xent_loss(&logits, &[0]).unwrap();
        assert!(close(l, (1.0 + (-0.2f64).exp()).ln(), 1e-12));
        assert!(close(l, 0.5981, 5e-5));
    }

    #[test]
    fn huge_logits_do_not_overflow() {
        let logits = DMatrix::from_row_slice(1, 2, &[1000.0, 0.0]);
        assert_eq!(xent_loss(&logits, &[0]).unwrap(), 0.0);
        assert!(close(xent_loss(&logits, &[1]).unwrap(), 1000.0, 1e-9));
    }

    #[test]
    fn label_out_of_range_is_input_error() {
        let logits = DMatrix::zeros(2, 3);
        assert!(matches!(xent_loss(&logits, &[0, 3]), Err(Error::Input(_))));
        assert!(matches!(xent_loss(&logits, &[0]), Err(Error::Input(_))));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax([2.0, 1.0, 0.0]), 0);
        assert_eq!(argmax([1.0, 1.0]), 0);
        assert_eq!(argmax([0.0, 3.0, 3.0]), 1);
        assert_eq!(runner_up([5.0, 1.0, 1.0].into_iter(), 0), 1);
        assert_eq!(runner_up([5.0, 1.0, 2.0].into_iter(), 2), 0);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -700.0, 0.0, 700.0]);
        let p = softmax(&logits);
        for row in p.row_iter() {
            assert!(close(row.sum(), 1.0, 1e-12));
        }
    }
}
