//! Generalized motion residual VQ-VAE: a masked temporal encoder over
//! arbitrary joint counts, L-level residual quantization with EMA-trained
//! codebooks, and a decoder with per-joint feature heads.

pub mod codebook;
pub mod model;
pub mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::motion::MotionError;
use crate::numerics::NumericsError;

pub use codebook::{CodebookStack, QuantizeOutput};
pub use model::{rvq_loss, RvqModel};
pub use train::{train_rvq, RvqTrainOptions, TrainedRvq};

/// Highest joint count any model in this project supports.
pub const MAX_JOINTS: usize = 64;

#[derive(Debug, Error)]
pub enum RvqError {
    #[error("input has {frames} frames, shorter than the temporal downsample {downsample}")]
    InputTooShort { frames: usize, downsample: usize },
    #[error("token {index} at level {level} outside codebook of {size} entries")]
    TokenOutOfRange {
        level: usize,
        index: usize,
        size: usize,
    },
    #[error("token stack has {actual} levels, model has {expected}")]
    LevelCount { expected: usize, actual: usize },
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("corpus has no training entries")]
    EmptyCorpus,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Motion(#[from] MotionError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RvqConfig {
    /// Residual quantization levels L.
    pub levels: usize,
    /// Codebook entries per level.
    pub codes_per_level: usize,
    /// Latent width d_z.
    pub code_dim: usize,
    /// Temporal stride of the encoder (and the decoder's upsample factor).
    pub temporal_downsample: usize,
    /// Commitment weight in the training loss.
    pub beta: f64,
    /// Hidden widths of the conv stack; the first entry is used throughout.
    pub encoder_channels: Vec<usize>,
    /// Joint-index embedding width fed to the per-joint heads.
    pub joint_embed_dim: usize,
}

impl Default for RvqConfig {
    fn default() -> Self {
        Self {
            levels: 6,
            codes_per_level: 512,
            code_dim: 32,
            temporal_downsample: 2,
            beta: 0.25,
            encoder_channels: vec![64],
            joint_embed_dim: 8,
        }
    }
}

impl RvqConfig {
    /// Small configuration for desk-scale experiments and tests.
    pub fn desk() -> Self {
        Self {
            levels: 3,
            codes_per_level: 64,
            code_dim: 16,
            encoder_channels: vec![48],
            ..Self::default()
        }
    }

    pub fn hidden(&self) -> usize {
        *self.encoder_channels.first().expect("encoder_channels non-empty")
    }

    pub fn validate(&self) -> Result<(), RvqError> {
        let ok = self.levels >= 1
            && self.codes_per_level >= 1
            && self.temporal_downsample >= 1
            && self.code_dim >= 1
            && !self.encoder_channels.is_empty();
        if ok {
            Ok(())
        } else {
            Err(RvqError::Numerics(NumericsError::InvalidArgument(
                "invalid RvqConfig: levels, codes, dims and channels must be positive".into(),
            )))
        }
    }

    /// Latent length for a clip of `t` frames.
    pub fn latent_len(&self, t: usize) -> usize {
        t.div_ceil(self.temporal_downsample)
    }
}

/// Discrete token stack: one index sequence per residual level, all of the
/// same length n.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequences {
    pub levels: Vec<Vec<usize>>,
}

impl TokenSequences {
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn n(&self) -> usize {
        self.levels.first().map_or(0, Vec::len)
    }

    pub fn validate(&self, codes_per_level: usize) -> Result<(), RvqError> {
        let n = self.n();
        for (level, seq) in self.levels.iter().enumerate() {
            debug_assert_eq!(seq.len(), n, "ragged token stack");
            for &index in seq {
                if index >= codes_per_level {
                    return Err(RvqError::TokenOutOfRange {
                        level,
                        index,
                        size: codes_per_level,
                    });
                }
            }
        }
        Ok(())
    }
}
