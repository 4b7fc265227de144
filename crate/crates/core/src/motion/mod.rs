//! Motion representation and data: per-joint features, the alignment
//! pipeline, a seeded synthetic corpus generator, and corpus storage.

pub mod align;
pub mod convert;
pub mod io;
pub mod rotation;
pub mod synth;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{NumericsError, Tensor};
use crate::skeleton::{SkeletonError, SkeletonGraph};

pub use align::align_motion;
pub use convert::{bvh_to_motion, forward_kinematics};
pub use io::{load_corpus, save_corpus};
pub use synth::synth_corpus;

use rotation::{matrix_from_rot6d, Mat3};

/// Per-joint feature layout: position (3, root-relative units), rotation
/// (6D), velocity (3, units per frame).
pub const FEATURES_PER_JOINT: usize = 12;
pub const POS_OFFSET: usize = 0;
pub const ROT_OFFSET: usize = 3;
pub const VEL_OFFSET: usize = 9;

/// Frame-count bounds enforced for stored corpus items.
pub const MIN_FRAMES: usize = 20;
pub const MAX_FRAMES: usize = 240;

#[derive(Debug, Error)]
pub enum MotionError {
    #[error("motion frames must be (T, K, {FEATURES_PER_JOINT}), got {0:?}")]
    BadShape(Vec<usize>),
    #[error("sequence has {0} frames, outside [{MIN_FRAMES}, {MAX_FRAMES}]")]
    FrameCountOutOfRange(usize),
    #[error("rotation block at frame {t}, joint {j} is not orthonormal within {tol}")]
    InvalidRotation { t: usize, j: usize, tol: f64 },
    #[error("velocity at frame {t}, joint {j} does not match position difference")]
    VelocityInconsistent { t: usize, j: usize },
    #[error("text record has an empty summary")]
    EmptySummary,
    #[error("joint {joint} declares {count} rotation channels; only 0 or 3 supported")]
    UnsupportedChannels { joint: String, count: usize },
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// A motion clip: `(T, K, 12)` per-joint features plus playback rate.
///
/// Joint 0 is the root; its position is the world trajectory. Other joints
/// store world-axis positions relative to the root, and every joint stores
/// its local rotation in 6D form.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    frames: Tensor,
    fps: f64,
    species_tag: String,
}

impl MotionSequence {
    pub fn new(frames: Tensor, fps: f64, species_tag: impl Into<String>) -> Result<Self, MotionError> {
        if frames.rank() != 3 || frames.shape()[2] != FEATURES_PER_JOINT || frames.shape()[0] == 0 {
            return Err(MotionError::BadShape(frames.shape().to_vec()));
        }
        Ok(Self {
            frames,
            fps,
            species_tag: species_tag.into(),
        })
    }

    /// Build from positions and rotations, deriving velocities.
    pub fn from_pos_rot(
        positions: &Tensor,
        rot6d: &Tensor,
        fps: f64,
        species_tag: impl Into<String>,
    ) -> Result<Self, MotionError> {
        let (t, k) = (positions.shape()[0], positions.shape()[1]);
        if positions.rank() != 3
            || positions.shape()[2] != 3
            || rot6d.shape() != [t, k, 6]
        {
            return Err(MotionError::BadShape(positions.shape().to_vec()));
        }
        let vel = compute_velocities(positions)?;
        let mut data = vec![0.0; t * k * FEATURES_PER_JOINT];
        for ti in 0..t {
            for j in 0..k {
                let base = (ti * k + j) * FEATURES_PER_JOINT;
                for d in 0..3 {
                    data[base + POS_OFFSET + d] = positions.get3(ti, j, d);
                    data[base + VEL_OFFSET + d] = vel.get3(ti, j, d);
                }
                for d in 0..6 {
                    data[base + ROT_OFFSET + d] = rot6d.get3(ti, j, d);
                }
            }
        }
        Self::new(
            Tensor::new(vec![t, k, FEATURES_PER_JOINT], data),
            fps,
            species_tag,
        )
    }

    pub fn frames(&self) -> &Tensor {
        &self.frames
    }

    pub fn frame_count(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn joint_count(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn species_tag(&self) -> &str {
        &self.species_tag
    }

    pub fn position(&self, t: usize, j: usize) -> [f64; 3] {
        [
            self.frames.get3(t, j, POS_OFFSET),
            self.frames.get3(t, j, POS_OFFSET + 1),
            self.frames.get3(t, j, POS_OFFSET + 2),
        ]
    }

    pub fn rotation6d(&self, t: usize, j: usize) -> [f64; 6] {
        let mut out = [0.0; 6];
        for d in 0..6 {
            out[d] = self.frames.get3(t, j, ROT_OFFSET + d);
        }
        out
    }

    pub fn rotation_matrix(&self, t: usize, j: usize) -> Mat3 {
        matrix_from_rot6d(&self.rotation6d(t, j))
    }

    pub fn velocity(&self, t: usize, j: usize) -> [f64; 3] {
        [
            self.frames.get3(t, j, VEL_OFFSET),
            self.frames.get3(t, j, VEL_OFFSET + 1),
            self.frames.get3(t, j, VEL_OFFSET + 2),
        ]
    }

    pub fn with_frames(&self, frames: Tensor) -> Result<Self, MotionError> {
        Self::new(frames, self.fps, self.species_tag.clone())
    }

    /// Check the representation invariants: near-orthonormal rotation
    /// blocks and velocities consistent with position differences.
    pub fn validate(&self) -> Result<(), MotionError> {
        let (t_len, k) = (self.frame_count(), self.joint_count());
        for t in 0..t_len {
            for j in 0..k {
                let raw = self.rotation6d(t, j);
                let m = matrix_from_rot6d(&raw);
                // Raw columns must already be close to the reconstructed
                // frame; 1e-4 per component.
                let recon = [m[0][0], m[1][0], m[2][0], m[0][1], m[1][1], m[2][1]];
                for d in 0..6 {
                    if (raw[d] - recon[d]).abs() > 1e-4 {
                        return Err(MotionError::InvalidRotation { t, j, tol: 1e-4 });
                    }
                }
                if t >= 1 {
                    let p = self.position(t, j);
                    let prev = self.position(t - 1, j);
                    let v = self.velocity(t, j);
                    for d in 0..3 {
                        if (v[d] - (p[d] - prev[d])).abs() > 1e-6 {
                            return Err(MotionError::VelocityInconsistent { t, j });
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Backward position differences: `v[0] = 0`, `v[t] = p[t] - p[t-1]`.
pub fn compute_velocities(positions: &Tensor) -> Result<Tensor, MotionError> {
    if positions.rank() != 3 || positions.shape()[2] != 3 {
        return Err(MotionError::BadShape(positions.shape().to_vec()));
    }
    let (t_len, k) = (positions.shape()[0], positions.shape()[1]);
    let mut data = vec![0.0; t_len * k * 3];
    for t in 1..t_len {
        for j in 0..k {
            for d in 0..3 {
                data[(t * k + j) * 3 + d] =
                    positions.get3(t, j, d) - positions.get3(t - 1, j, d);
            }
        }
    }
    Ok(Tensor::new(vec![t_len, k, 3], data))
}

/// A text annotation: a concise summary, a fine-grained phrase, and the
/// coarse labels they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextRecord {
    pub summary: String,
    pub detail: String,
    pub motion_class: String,
    pub species_tag: String,
}

impl TextRecord {
    pub fn validate(&self) -> Result<(), MotionError> {
        if self.summary.trim().is_empty() {
            return Err(MotionError::EmptySummary);
        }
        Ok(())
    }

    /// The generation prompt. The summary prefix is the "motion summary"
    /// conditioning signal and can be ablated away.
    pub fn prompt(&self, include_summary: bool) -> String {
        if include_summary {
            format!("{}, {}", self.summary, self.detail)
        } else {
            self.detail.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub skeleton: Arc<SkeletonGraph>,
    pub motion: MotionSequence,
    pub text: TextRecord,
    pub split: Split,
}

/// A collection of (skeleton, motion, text) triples with a train/test split.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub entries: Vec<CorpusEntry>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn train(&self) -> impl Iterator<Item = &CorpusEntry> {
        self.entries.iter().filter(|e| e.split == Split::Train)
    }

    pub fn test(&self) -> impl Iterator<Item = &CorpusEntry> {
        self.entries.iter().filter(|e| e.split == Split::Test)
    }

    pub fn species(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .entries
            .iter()
            .map(|e| e.text.species_tag.clone())
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// Reassign splits: within each species, a seeded shuffle sends
    /// `ceil(test_frac * n)` entries to the test split.
    pub fn assign_splits(&mut self, test_frac: f64, seed: u64) {
        use rand::seq::SliceRandom;
        assert!((0.0..1.0).contains(&test_frac), "test_frac in [0, 1)");
        for species in self.species() {
            let idx: Vec<usize> = self
                .entries
                .iter()
                .enumerate()
                .filter(|(_, e)| e.text.species_tag == species)
                .map(|(i, _)| i)
                .collect();
            let mut shuffled = idx.clone();
            let mut rng = crate::numerics::derive_rng(seed, &format!("split.{species}"));
            shuffled.shuffle(&mut rng);
            let n_test = (test_frac * shuffled.len() as f64).ceil() as usize;
            for (rank, &i) in shuffled.iter().enumerate() {
                self.entries[i].split = if rank < n_test { Split::Test } else { Split::Train };
            }
        }
    }

    /// Batch validator: every stored motion must satisfy the representation
    /// invariants and the frame-count bounds.
    pub fn validate(&self) -> Result<(), MotionError> {
        for entry in &self.entries {
            let t = entry.motion.frame_count();
            if !(MIN_FRAMES..=MAX_FRAMES).contains(&t) {
                return Err(MotionError::FrameCountOutOfRange(t));
            }
            entry.motion.validate()?;
            entry.text.validate()?;
            if entry.motion.joint_count() != entry.skeleton.joint_count() {
                return Err(MotionError::Skeleton(SkeletonError::JointCountMismatch {
                    skeleton: entry.skeleton.joint_count(),
                    motion: entry.motion.joint_count(),
                }));
            }
        }
        Ok(())
    }
}
