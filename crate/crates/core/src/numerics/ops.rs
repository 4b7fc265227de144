//! Pure tensor operations.
//!
//! These are the forward-only counterparts of the tape ops in
//! [`super::tape`]; training code goes through the tape, evaluation and
//! tests can call these directly.

use super::tensor::{matmul_raw, NumericsError, Result, Tensor, MASKED_LOGIT};

/// Standard matrix product of two rank-2 tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 {
        return Err(NumericsError::BadRank {
            op: "matmul",
            expected: 2,
            shape: a.shape().to_vec(),
        });
    }
    if b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(NumericsError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    Ok(Tensor::new(vec![m, n], matmul_raw(a.data(), b.data(), m, k, n)))
}

/// Row-wise softmax result. Rows whose entries were all masked come out as
/// exact zeros and are listed in `all_masked_rows` instead of producing NaN.
#[derive(Debug, Clone)]
pub struct RowSoftmax {
    pub probs: Tensor,
    pub all_masked_rows: Vec<usize>,
}

/// Row-wise softmax with an optional additive bias.
///
/// Bias entries equal to [`MASKED_LOGIT`] mark positions that carry exactly
/// zero probability mass. Each row is stabilized by subtracting its maximum
/// unmasked logit before exponentiation.
pub fn softmax_rows(x: &Tensor, bias: Option<&Tensor>) -> Result<RowSoftmax> {
    if x.rank() != 2 {
        return Err(NumericsError::BadRank {
            op: "softmax_rows",
            expected: 2,
            shape: x.shape().to_vec(),
        });
    }
    if let Some(b) = bias {
        if b.shape() != x.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "softmax_rows",
                lhs: x.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
    }
    let (rows, cols) = (x.shape()[0], x.shape()[1]);
    let mut out = vec![0.0; rows * cols];
    let mut all_masked = Vec::new();
    for r in 0..rows {
        let xrow = &x.data()[r * cols..(r + 1) * cols];
        let brow = bias.map(|b| &b.data()[r * cols..(r + 1) * cols]);
        softmax_row_into(xrow, brow, &mut out[r * cols..(r + 1) * cols])
            .unwrap_or_else(|| all_masked.push(r));
    }
    Ok(RowSoftmax {
        probs: Tensor::new(vec![rows, cols], out),
        all_masked_rows: all_masked,
    })
}

/// Softmax of one row into `out`. Returns `None` when every entry is masked
/// (the row is left all-zero).
pub(crate) fn softmax_row_into(x: &[f64], bias: Option<&[f64]>, out: &mut [f64]) -> Option<()> {
    let masked = |j: usize| bias.map_or(false, |b| b[j] == MASKED_LOGIT);
    let logit = |j: usize| x[j] + bias.map_or(0.0, |b| b[j]);

    let mut max = f64::NEG_INFINITY;
    for j in 0..x.len() {
        if !masked(j) {
            max = max.max(logit(j));
        }
    }
    if max == f64::NEG_INFINITY {
        out.fill(0.0);
        return None;
    }
    let mut sum = 0.0;
    for j in 0..x.len() {
        if masked(j) {
            out[j] = 0.0;
        } else {
            let e = (logit(j) - max).exp();
            out[j] = e;
            sum += e;
        }
    }
    for v in out.iter_mut() {
        *v /= sum;
    }
    Some(())
}

/// Elementwise GELU. The tanh approximation is the normative definition
/// throughout this project.
pub fn gelu(x: &Tensor) -> Tensor {
    x.map(gelu_scalar)
}

pub(crate) const GELU_C: f64 = 0.044715;

pub(crate) fn gelu_scalar(x: f64) -> f64 {
    let s = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (s * (x + GELU_C * x * x * x)).tanh())
}

pub(crate) fn gelu_grad_scalar(x: f64) -> f64 {
    let s = (2.0 / std::f64::consts::PI).sqrt();
    let u = s * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * s * (1.0 + 3.0 * GELU_C * x * x)
}

/// Layer normalization over the last axis, followed by an elementwise affine
/// map. `gain` and `offset` must match the last extent of `x`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, offset: &Tensor, eps: f64) -> Result<Tensor> {
    if x.rank() == 0 || x.shape().is_empty() {
        return Err(NumericsError::BadRank {
            op: "layer_norm",
            expected: 1,
            shape: x.shape().to_vec(),
        });
    }
    let width = *x.shape().last().unwrap();
    if gain.numel() != width || offset.numel() != width {
        return Err(NumericsError::ShapeMismatch {
            op: "layer_norm",
            lhs: x.shape().to_vec(),
            rhs: gain.shape().to_vec(),
        });
    }
    let rows = x.numel() / width;
    let mut out = vec![0.0; x.numel()];
    for r in 0..rows {
        let xs = &x.data()[r * width..(r + 1) * width];
        let os = &mut out[r * width..(r + 1) * width];
        layer_norm_row_into(xs, gain.data(), offset.data(), eps, os);
    }
    Ok(Tensor::new(x.shape().to_vec(), out))
}

pub(crate) fn layer_norm_row_into(x: &[f64], gain: &[f64], offset: &[f64], eps: f64, out: &mut [f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    for j in 0..x.len() {
        out[j] = gain[j] * (x[j] - mean) * inv + offset[j];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
        Tensor::from_vec(vec![rows, cols], data).unwrap()
    }

    #[test]
    fn matmul_identity_leaves_matrix_unchanged() {
        let eye = t2(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let m = t2(3, 3, vec![5., -2., 0.1, 3., 8., 1., -7., 2., 9.]);
        let out = matmul(&eye, &m).unwrap();
        assert_eq!(out.data(), m.data());
    }

    #[test]
    fn matmul_hand_example() {
        let a = t2(2, 2, vec![1., 2., 3., 4.]);
        let b = t2(2, 1, vec![0., 1.]);
        let out = matmul(&a, &b).unwrap();
        assert_eq!(out.data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let a = Tensor::randn(&[5, 7], 1.0, &mut rng);
        let b = Tensor::randn(&[7, 3], 1.0, &mut rng);
        let out = matmul(&a, &b).unwrap();
        // Independent naive triple loop.
        for i in 0..5 {
            for j in 0..3 {
                let mut s = 0.0;
                for p in 0..7 {
                    s += a.get2(i, p) * b.get2(p, j);
                }
                assert!((out.get2(i, j) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = t2(2, 3, vec![0.; 6]);
        let b = t2(2, 2, vec![0.; 4]);
        let err = matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn softmax_zero_row_is_uniform() {
        let x = t2(1, 4, vec![0.0; 4]);
        let sm = softmax_rows(&x, None).unwrap();
        for &p in sm.probs.data() {
            assert_eq!(p, 0.25);
        }
    }

    #[test]
    fn softmax_masked_entry_is_exactly_zero() {
        let x = t2(1, 2, vec![0.0, 0.0]);
        let bias = t2(1, 2, vec![0.0, MASKED_LOGIT]);
        let sm = softmax_rows(&x, Some(&bias)).unwrap();
        assert_eq!(sm.probs.data(), &[1.0, 0.0]);
        assert!(sm.all_masked_rows.is_empty());
    }

    #[test]
    fn softmax_all_masked_row_is_zero_and_flagged() {
        let x = t2(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let bias = t2(2, 2, vec![MASKED_LOGIT, MASKED_LOGIT, 0.0, 0.0]);
        let sm = softmax_rows(&x, Some(&bias)).unwrap();
        assert_eq!(sm.all_masked_rows, vec![0]);
        assert_eq!(&sm.probs.data()[..2], &[0.0, 0.0]);
        assert!(sm.probs.data()[2] > 0.0);
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let x = t2(1, 3, vec![1.0, 2.0, 3.0]);
        let sm = softmax_rows(&x, None).unwrap();
        let z: f64 = (1f64).exp() + (2f64).exp() + (3f64).exp();
        for j in 0..3 {
            let expect = ((j + 1) as f64).exp() / z;
            assert!((sm.probs.data()[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn gelu_fixed_points() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-4);
        // Scalar oracle: evaluate the tanh formula directly.
        let s = (2.0 / std::f64::consts::PI).sqrt();
        let oracle = 0.5 * (1.0 + (s * (1.0 + 0.044715)).tanh());
        assert!((gelu_scalar(1.0) - oracle).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_constant_vector_is_zero() {
        let x = Tensor::from_vec(vec![4], vec![3.0; 4]).unwrap();
        let gain = Tensor::full(&[4], 1.0);
        let offset = Tensor::zeros(&[4]);
        let out = layer_norm(&x, &gain, &offset, 1e-5).unwrap();
        for &v in out.data() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn layer_norm_standardizes_random_rows() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::randn(&[6, 16], 2.5, &mut rng);
        let gain = Tensor::full(&[16], 1.0);
        let offset = Tensor::zeros(&[16]);
        let out = layer_norm(&x, &gain, &offset, 1e-12).unwrap();
        for r in 0..6 {
            let row = &out.data()[r * 16..(r + 1) * 16];
            let mean: f64 = row.iter().sum::<f64>() / 16.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_hand_oracle() {
        // mean 2, biased variance 2/3
        let x = Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let gain = Tensor::full(&[3], 1.0);
        let offset = Tensor::zeros(&[3]);
        let out = layer_norm(&x, &gain, &offset, 0.0).unwrap();
        let inv = 1.0 / (2.0f64 / 3.0).sqrt();
        for (j, expect) in [(0usize, -inv), (1, 0.0), (2, inv)] {
            assert!((out.data()[j] - expect).abs() < 1e-12);
        }
    }
}
