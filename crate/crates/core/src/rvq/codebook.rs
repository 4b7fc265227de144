//! Residual codebook stack with EMA updates and dead-code reseeding.
//!
//! Codes and latents are snapped to a fixed 2^-30 grid before any residual
//! arithmetic. Differences and sums of grid numbers of this magnitude are
//! exact in f64, so the telescoping identity z = sum(R_hat_l) + R_{L+1}
//! holds bit-for-bit in any summation order, and quantize/detokenize agree
//! exactly.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::Tensor;

use super::{RvqConfig, RvqError, TokenSequences};

const GRID: f64 = (1u64 << 30) as f64;

/// Round to the nearest multiple of 2^-30.
pub fn snap(v: f64) -> f64 {
    debug_assert!(v.abs() < (1u64 << 20) as f64, "latent magnitude {v} out of grid range");
    (v * GRID).round() / GRID
}

pub fn snap_tensor(t: &Tensor) -> Tensor {
    t.map(snap)
}

#[derive(Debug, Clone)]
pub struct CodebookStack {
    /// Per level: (K, d_z) code matrix, grid-snapped.
    pub codes: Vec<Tensor>,
    /// EMA assignment mass per code.
    pub ema_counts: Vec<Vec<f64>>,
    /// EMA sum of assigned vectors per code, flattened (K * d_z).
    pub ema_sums: Vec<Vec<f64>>,
    /// Assignments seen during the current epoch, for dead-code detection.
    pub epoch_usage: Vec<Vec<u64>>,
}

impl CodebookStack {
    pub fn init(config: &RvqConfig, rng: &mut ChaCha8Rng) -> Self {
        let (l, k, d) = (config.levels, config.codes_per_level, config.code_dim);
        let codes = (0..l)
            .map(|_| snap_tensor(&Tensor::randn(&[k, d], 0.3, rng)))
            .collect();
        Self {
            codes,
            ema_counts: vec![vec![0.0; k]; l],
            ema_sums: vec![vec![0.0; k * d]; l],
            epoch_usage: vec![vec![0; k]; l],
        }
    }

    pub fn levels(&self) -> usize {
        self.codes.len()
    }

    pub fn code_count(&self) -> usize {
        self.codes.first().map_or(0, Tensor::rows)
    }

    pub fn code_dim(&self) -> usize {
        self.codes.first().map_or(0, Tensor::cols)
    }

    /// Nearest-neighbor residual quantization of an (n, d_z) latent.
    pub fn quantize(&self, z: &Tensor) -> QuantizeOutput {
        let (n, d) = (z.rows(), z.cols());
        let z = snap_tensor(z);
        let mut residuals = vec![z.clone()];
        let mut quantized = Vec::with_capacity(self.levels());
        let mut tokens = Vec::with_capacity(self.levels());
        let mut current = z.to_vec();
        for codes in &self.codes {
            let mut level_tokens = Vec::with_capacity(n);
            let mut level_quant = vec![0.0; n * d];
            let mut next = vec![0.0; n * d];
            for i in 0..n {
                let row = &current[i * d..(i + 1) * d];
                let k = nearest_code(row, codes);
                level_tokens.push(k);
                let code = codes.row(k);
                for c in 0..d {
                    level_quant[i * d + c] = code[c];
                    // Grid arithmetic: exact.
                    next[i * d + c] = row[c] - code[c];
                }
            }
            tokens.push(level_tokens);
            quantized.push(Tensor::new(vec![n, d], level_quant));
            residuals.push(Tensor::new(vec![n, d], next.clone()));
            current = next;
        }
        let z_hat = sum_tensors(&quantized);
        QuantizeOutput {
            tokens: TokenSequences { levels: tokens },
            quantized,
            residuals,
            z_hat,
        }
    }

    /// Codebook lookup sum for a token stack: the decoder input.
    pub fn lookup_sum(&self, tokens: &TokenSequences) -> Result<Tensor, RvqError> {
        if tokens.level_count() != self.levels() {
            return Err(RvqError::LevelCount {
                expected: self.levels(),
                actual: tokens.level_count(),
            });
        }
        tokens.validate(self.code_count())?;
        let (n, d) = (tokens.n(), self.code_dim());
        let mut data = vec![0.0; n * d];
        for (level, seq) in tokens.levels.iter().enumerate() {
            let codes = &self.codes[level];
            for (i, &k) in seq.iter().enumerate() {
                let code = codes.row(k);
                for c in 0..d {
                    data[i * d + c] += code[c];
                }
            }
        }
        Ok(Tensor::new(vec![n, d], data))
    }

    /// EMA update from one batch of per-level assignments.
    /// `assigned[level]` pairs each latent row (the residual entering that
    /// level) with its chosen code.
    pub fn ema_update(&mut self, assigned: &[Vec<(usize, Vec<f64>)>], decay: f64) {
        let d = self.code_dim();
        for (level, pairs) in assigned.iter().enumerate() {
            let k = self.code_count();
            let mut counts = vec![0.0; k];
            let mut sums = vec![0.0; k * d];
            for (code_idx, vec) in pairs {
                counts[*code_idx] += 1.0;
                self.epoch_usage[level][*code_idx] += 1;
                for c in 0..d {
                    sums[*code_idx * d + c] += vec[c];
                }
            }
            let mut new_codes = self.codes[level].to_vec();
            for idx in 0..k {
                self.ema_counts[level][idx] =
                    decay * self.ema_counts[level][idx] + (1.0 - decay) * counts[idx];
                for c in 0..d {
                    self.ema_sums[level][idx * d + c] = decay * self.ema_sums[level][idx * d + c]
                        + (1.0 - decay) * sums[idx * d + c];
                }
                if self.ema_counts[level][idx] > 1e-3 {
                    for c in 0..d {
                        new_codes[idx * d + c] =
                            snap(self.ema_sums[level][idx * d + c] / self.ema_counts[level][idx]);
                    }
                }
            }
            self.codes[level] = Tensor::new(vec![k, d], new_codes);
        }
    }

    /// Replace codes that went unused this epoch with latents drawn from the
    /// reservoir, then reset the usage counters. Returns how many codes were
    /// reseeded.
    pub fn reseed_dead_codes(&mut self, reservoir: &[Vec<Vec<f64>>], rng: &mut ChaCha8Rng) -> usize {
        let d = self.code_dim();
        let mut reseeded = 0;
        for level in 0..self.levels() {
            let pool = &reservoir[level];
            if pool.is_empty() {
                continue;
            }
            let mut new_codes = self.codes[level].to_vec();
            for idx in 0..self.code_count() {
                if self.epoch_usage[level][idx] == 0 {
                    let pick = &pool[rng.gen_range(0..pool.len())];
                    for c in 0..d {
                        new_codes[idx * d + c] = snap(pick[c]);
                    }
                    self.ema_counts[level][idx] = 0.0;
                    self.ema_sums[level][idx * d..(idx + 1) * d].fill(0.0);
                    reseeded += 1;
                }
            }
            self.codes[level] = Tensor::new(vec![self.code_count(), d], new_codes);
        }
        for usage in &mut self.epoch_usage {
            usage.fill(0);
        }
        reseeded
    }

    /// Fraction of codes with at least one assignment this epoch, per level.
    pub fn epoch_usage_fraction(&self) -> Vec<f64> {
        self.epoch_usage
            .iter()
            .map(|u| u.iter().filter(|&&c| c > 0).count() as f64 / u.len() as f64)
            .collect()
    }
}

fn nearest_code(row: &[f64], codes: &Tensor) -> usize {
    let (k, d) = (codes.rows(), codes.cols());
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for idx in 0..k {
        let code = &codes.data()[idx * d..(idx + 1) * d];
        let mut dist = 0.0;
        for c in 0..d {
            let diff = row[c] - code[c];
            dist += diff * diff;
        }
        // Strict comparison keeps the lowest index on ties.
        if dist < best_d {
            best_d = dist;
            best = idx;
        }
    }
    best
}

fn sum_tensors(ts: &[Tensor]) -> Tensor {
    let mut data = vec![0.0; ts[0].numel()];
    for t in ts {
        for (o, &v) in data.iter_mut().zip(t.data()) {
            *o += v;
        }
    }
    Tensor::new(ts[0].shape().to_vec(), data)
}

#[derive(Debug, Clone)]
pub struct QuantizeOutput {
    pub tokens: TokenSequences,
    /// Selected code vectors per level, (n, d_z) each.
    pub quantized: Vec<Tensor>,
    /// Residual entering each level plus the final leftover: L + 1 tensors.
    pub residuals: Vec<Tensor>,
    /// Accumulated quantized latent, sum of all levels.
    pub z_hat: Tensor,
}
