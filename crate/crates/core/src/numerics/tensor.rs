//! Dense row-major f64 tensor.
//!
//! Values are immutable after construction; every operation returns a new
//! tensor. Data is reference-counted so clones are cheap and safe to share
//! across threads.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Sentinel standing in for a `-inf` attention bias. Softmax treats entries
/// whose bias equals this value as carrying exactly zero mass, which keeps
/// `inf - inf` NaNs out of the stabilized exponentials.
pub const MASKED_LOGIT: f64 = f64::MIN;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch, left {lhs:?} vs right {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    BadRank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?} (expects {expected})")]
    BadLength {
        len: usize,
        shape: Vec<usize>,
        expected: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("{0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<[f64]>,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(NumericsError::BadLength {
                len: data.len(),
                shape,
                expected,
            });
        }
        Ok(Self {
            shape,
            data: data.into(),
        })
    }

    /// Panicking constructor for internal call sites with known-good shapes.
    pub(crate) fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self::from_vec(shape, data).expect("internal tensor construction")
    }

    pub fn scalar(v: f64) -> Self {
        Self::new(vec![1], vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::new(shape.to_vec(), vec![0.0; n])
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Self::new(shape.to_vec(), vec![v; n])
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self::new(shape.to_vec(), (0..n).map(|i| f(i)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.to_vec()
    }

    /// True when this tensor and `other` share the same backing allocation.
    pub fn same_storage(&self, other: &Tensor) -> bool {
        Arc::ptr_eq(&self.data, &other.data)
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn scalar_value(&self) -> f64 {
        debug_assert!(self.is_scalar(), "scalar_value on shape {:?}", self.shape);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn rows(&self) -> usize {
        debug_assert!(self.rank() == 2);
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        debug_assert!(self.rank() == 2);
        self.shape[1]
    }

    pub fn get2(&self, r: usize, c: usize) -> f64 {
        debug_assert!(self.rank() == 2);
        self.data[r * self.shape[1] + c]
    }

    pub fn get3(&self, a: usize, b: usize, c: usize) -> f64 {
        debug_assert!(self.rank() == 3);
        self.data[(a * self.shape[1] + b) * self.shape[2] + c]
    }

    /// Row `r` of a rank-2 tensor as a slice.
    pub fn row(&self, r: usize) -> &[f64] {
        debug_assert!(self.rank() == 2);
        let n = self.shape[1];
        &self.data[r * n..(r + 1) * n]
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.numel() {
            return Err(NumericsError::BadLength {
                len: self.numel(),
                shape,
                expected,
            });
        }
        Ok(Self {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(NumericsError::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(Self::new(
            self.shape.clone(),
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Squared Euclidean norm over all elements.
    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Standard normal samples scaled by `std`.
    pub fn randn(shape: &[usize], std: f64, rng: &mut impl rand::Rng) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Self::new(shape.to_vec(), data)
    }

    /// Replace one element, returning a new tensor. Used by the
    /// finite-difference gradient checker.
    pub fn with_element(&self, idx: usize, v: f64) -> Self {
        let mut data = self.to_vec();
        data[idx] = v;
        Self::new(self.shape.clone(), data)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.numel() <= 8 {
            write!(f, "Tensor{:?}{:?}", self.shape, &self.data[..])
        } else {
            write!(
                f,
                "Tensor{:?}[{}, {}, ... {} values]",
                self.shape,
                self.data[0],
                self.data[1],
                self.numel()
            )
        }
    }
}

/// Raw matrix product kernel shared by the pure op and the tape op.
/// `a` is m x k, `b` is k x n, output m x n.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_length() {
        let err = Tensor::from_vec(vec![2, 3], vec![1.0; 5]).unwrap_err();
        assert!(matches!(err, NumericsError::BadLength { .. }));
    }

    #[test]
    fn reshape_shares_storage() {
        let t = Tensor::from_vec(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let r = t.reshape(vec![3, 2]).unwrap();
        assert!(t.same_storage(&r));
        assert_eq!(r.shape(), &[3, 2]);
    }

    #[test]
    fn matmul_raw_identity() {
        let eye = vec![1., 0., 0., 0., 1., 0., 0., 0., 1.];
        let m = vec![2., -1., 0.5, 3., 4., -2., 7., 0., 1.];
        assert_eq!(matmul_raw(&eye, &m, 3, 3, 3), m);
    }
}
