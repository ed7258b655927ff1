//! Classification losses over a `[B, c]` logit matrix, with their gradients.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    /// `max_{i != y} z_i - z_y`, the objective of the CW adversary.
    Margin,
}

fn check_labels(logits: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    let (b, c) = logits.dims2()?;
    if b != labels.len() {
        return Err(Error::Dimension(format!(
            "{b} logit rows but {} labels",
            labels.len()
        )));
    }
    if b == 0 {
        return Err(Error::Dimension("empty batch".into()));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::Range(format!("label {y} with {c} classes")));
    }
    Ok((b, c))
}

/// Highest-scoring class other than `y`; ties resolve to the lowest index.
pub fn strongest_competitor(row: &[f64], y: usize) -> usize {
    let mut best = usize::MAX;
    for (i, &z) in row.iter().enumerate() {
        if i == y {
            continue;
        }
        if best == usize::MAX || z > row[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, c) = check_labels(logits, labels)?;
    let mut grad = vec![0.0; b * c];
    let mut total = 0.0;
    let inv_b = 1.0 / b as f64;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|z| (z - max).exp()).sum();
        let lse = max + sum_exp.ln();
        total += lse - row[y];
        let g = &mut grad[i * c..(i + 1) * c];
        for (j, gj) in g.iter_mut().enumerate() {
            *gj = (row[j] - lse).exp() * inv_b;
        }
        g[y] -= inv_b;
    }
    Ok((total * inv_b, Tensor::new(vec![b, c], grad)?))
}

/// Mean margin loss and its (sub)gradient with respect to the logits.
pub fn margin(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (_, c) = logits.dims2()?;
    if c < 2 {
        return Err(Error::InvalidTask(
            "margin loss needs at least two classes".into(),
        ));
    }
    let (b, c) = check_labels(logits, labels)?;
    let mut grad = vec![0.0; b * c];
    let mut total = 0.0;
    let inv_b = 1.0 / b as f64;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let k = strongest_competitor(row, y);
        total += row[k] - row[y];
        grad[i * c + k] += inv_b;
        grad[i * c + y] -= inv_b;
    }
    Ok((total * inv_b, Tensor::new(vec![b, c], grad)?))
}

/// Mean margin loss over a batch of logits.
pub fn loss_margin(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    margin(logits, labels).map(|(l, _)| l)
}

pub fn loss_and_grad(kind: LossKind, logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    match kind {
        LossKind::CrossEntropy => cross_entropy(logits, labels),
        LossKind::Margin => margin(logits, labels),
    }
}

/// Number of rows whose arg-max (lowest index on ties) equals the label.
pub fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &z) in row.iter().enumerate() {
                if z > row[best] {
                    best = j;
                }
            }
            best == y
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(z: &[f64]) -> Tensor {
        Tensor::new(vec![1, z.len()], z.to_vec()).unwrap()
    }

    #[test]
    fn margin_examples() {
        assert_eq!(loss_margin(&row(&[2.0, 5.0, 1.0]), &[0]).unwrap(), 3.0);
        assert_eq!(loss_margin(&row(&[2.0, 5.0, 1.0]), &[1]).unwrap(), -3.0);
        assert_eq!(loss_margin(&row(&[0.7; 4]), &[2]).unwrap(), 0.0);
    }

    #[test]
    fn margin_single_class_rejected() {
        assert!(matches!(
            loss_margin(&row(&[1.0]), &[0]),
            Err(Error::InvalidTask(_))
        ));
    }

    #[test]
    fn margin_tie_routes_to_lowest_index() {
        let (_, g) = margin(&row(&[3.0, 1.0, 3.0, 3.0]), &[2]).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, -1.0, 0.0]);
    }

    #[test]
    fn uniform_logits_cross_entropy_is_ln_c() {
        for c in 2..=12 {
            let (l, _) = cross_entropy(&row(&vec![0.3; c]), &[c - 1]).unwrap();
            assert!((l - (c as f64).ln()).abs() < 1e-12);
        }
        let (l, _) = cross_entropy(&row(&[0.0; 10]), &[0]).unwrap();
        assert!((l - std::f64::consts::LN_10).abs() < 1e-12);
    }

    #[test]
    fn bad_label_rejected() {
        assert!(cross_entropy(&row(&[0.0, 1.0]), &[2]).is_err());
        assert!(cross_entropy(&row(&[0.0, 1.0]), &[0, 1]).is_err());
    }

    #[test]
    fn margin_sign_tracks_correctness() {
        let logits = Tensor::new(vec![3, 3], vec![3.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 2.0, 1.0]).unwrap();
        for (i, y) in [0usize, 0, 0].iter().enumerate() {
            let one = row(logits.row(i));
            let m = loss_margin(&one, &[*y]).unwrap();
            let strictly_correct = one.row(0).iter().enumerate().all(|(j, &z)| j == *y || z < one.row(0)[*y]);
            assert_eq!(m < 0.0, strictly_correct);
        }
    }
}
