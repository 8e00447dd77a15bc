//! Dense row-major tensors and the small numeric helpers shared by every
//! classifier head: softmax, argmax, Euclidean distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Score vector emitted by a classifier head, one entry per class.
/// Depending on the model's score mode these are raw logits or probabilities.
pub type ClassScores = Vec<f64>;

/// A dense tensor of finite `f64` values in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, rejecting empty extents, shape/data length mismatch
    /// and non-finite values.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::shape(
                "tensor construction",
                "positive extents",
                format!("{shape:?}"),
            ));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor construction",
                format!("{expected} values for shape {shape:?}"),
                format!("{} values", data.len()),
            ));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Model(format!(
                "tensor contains non-finite value {bad}"
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// 1-D tensor from a flat vector.
    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        let len = data.len();
        Tensor::new(vec![len], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flattens to 1-D without copying the data.
    pub fn flattened(self) -> Tensor {
        Tensor {
            shape: vec![self.data.len()],
            data: self.data,
        }
    }

    pub(crate) fn into_parts(self) -> (Vec<usize>, Vec<f64>) {
        (self.shape, self.data)
    }
}

/// Numerically stable softmax: subtracts the max before exponentiating, so
/// large logits cannot overflow. Preserves the argmax and sums to 1.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    if scores.is_empty() {
        return Vec::new();
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Index of the largest score; ties break to the lowest class index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate().skip(1) {
        if v > scores[best] {
            best = i;
        }
    }
    best
}

/// Euclidean distance between two equal-length vectors.
pub fn euclidean_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "distance",
            format!("length {}", a.len()),
            format!("length {}", b.len()),
        ));
    }
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sq.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tensor_rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![3], vec![1.0, 2.0]).is_err());
        assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).is_ok());
    }

    #[test]
    fn softmax_symmetric_pair() {
        let p = softmax(&[0.0, 0.0]);
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_large_logits_stay_finite() {
        let p = softmax(&[1000.0, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!(p[0] > 1.0 - 1e-9);
        assert!(p[1] < 1e-9);
    }

    #[test]
    fn softmax_closed_form() {
        // softmax(ln 1, ln 3) = (1/4, 3/4)
        let p = softmax(&[0.0, 3.0f64.ln()]);
        assert!((p[0] - 0.25).abs() < 1e-12);
        assert!((p[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        assert_eq!(argmax(&[1.0, 1.0, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.9, 0.9]), 1);
    }

    #[test]
    fn distance_hand_case() {
        let d = euclidean_distance(&[0.1, 0.9, 0.0], &[0.4, 0.5, 0.1]).unwrap();
        assert!((d - 0.26f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn distance_length_mismatch_errors() {
        assert!(euclidean_distance(&[1.0], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_shift_invariant(
            scores in proptest::collection::vec(-50.0f64..50.0, 1..8),
            shift in -100.0f64..100.0,
        ) {
            let base = softmax(&scores);
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let moved = softmax(&shifted);
            for (a, b) in base.iter().zip(&moved) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn softmax_sums_to_one_and_keeps_argmax(
            scores in proptest::collection::vec(-50.0f64..50.0, 1..8),
        ) {
            let p = softmax(&scores);
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert_eq!(argmax(&scores), argmax(&p));
        }

        #[test]
        fn distance_symmetry_and_identity(
            a in proptest::collection::vec(-10.0f64..10.0, 1..8),
        ) {
            let b: Vec<f64> = a.iter().map(|v| v + 0.5).collect();
            prop_assert_eq!(
                euclidean_distance(&a, &b).unwrap().to_bits(),
                euclidean_distance(&b, &a).unwrap().to_bits()
            );
            prop_assert_eq!(euclidean_distance(&a, &a).unwrap(), 0.0);
        }
    }
}
