//! Pluggable text embedding.
//!
//! The reference implementation is deliberately dependency-free: lowercase
//! tokenization on non-alphanumerics, FNV token hashing into 1024 buckets,
//! a seeded fixed random projection, and L2 normalization. Anything
//! deterministic that maps equal strings to equal vectors can stand in.

use crate::numerics::{derive_rng, Tensor};

pub trait TextEmbedder {
    fn dim(&self) -> usize;
    /// A (1, dim) unit-norm embedding. Equal strings give equal vectors.
    fn embed(&self, text: &str) -> Tensor;
}

const BUCKETS: usize = 1024;

#[derive(Debug, Clone)]
pub struct HashedTextEmbedder {
    dim: usize,
    projection: Tensor,
}

impl HashedTextEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = derive_rng(seed, "text-embedder");
        let std = (1.0 / BUCKETS as f64).sqrt();
        Self {
            dim,
            projection: Tensor::randn(&[BUCKETS, dim], std, &mut rng),
        }
    }
}

fn fnv1a(token: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in token.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl TextEmbedder for HashedTextEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Tensor {
        let mut bag = vec![0.0f64; BUCKETS];
        for token in text
            .to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            bag[(fnv1a(token) % BUCKETS as u64) as usize] += 1.0;
        }
        let mut out = vec![0.0; self.dim];
        for (bucket, &count) in bag.iter().enumerate() {
            if count == 0.0 {
                continue;
            }
            for c in 0..self.dim {
                out[c] += count * self.projection.get2(bucket, c);
            }
        }
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            for v in out.iter_mut() {
                *v /= norm;
            }
        }
        Tensor::new(vec![1, self.dim], out)
    }
}
