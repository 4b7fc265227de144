//! Corpus container storage: JSON header (skeleton table, per-entry
//! metadata and payload offsets) plus a raw f64 payload, checksummed. Floats
//! round-trip exactly.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::container::{read_container, write_container, ContainerError};
use crate::numerics::Tensor;
use crate::skeleton::{skeleton_from_value, skeleton_to_value};

use super::{Corpus, CorpusEntry, MotionError, MotionSequence, Split, TextRecord, FEATURES_PER_JOINT};

const MAGIC: &[u8; 8] = b"SMCORP01";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct EntryMeta {
    skeleton: usize,
    frames: usize,
    joints: usize,
    offset: usize,
    fps: f64,
    species: String,
    text: TextRecord,
    split: Split,
}

#[derive(Serialize, Deserialize)]
struct CorpusHeader {
    kind: String,
    skeletons: Vec<serde_json::Value>,
    entries: Vec<EntryMeta>,
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), MotionError> {
    corpus.validate()?;
    // Dedupe skeletons by Arc identity so sharing survives the round trip.
    let mut skeleton_ptrs: Vec<*const crate::skeleton::SkeletonGraph> = Vec::new();
    let mut skeletons = Vec::new();
    let mut payload = Vec::new();
    let mut entries = Vec::new();
    for entry in &corpus.entries {
        let ptr = Arc::as_ptr(&entry.skeleton);
        let skeleton_idx = match skeleton_ptrs.iter().position(|&p| p == ptr) {
            Some(i) => i,
            None => {
                skeleton_ptrs.push(ptr);
                skeletons.push(skeleton_to_value(&entry.skeleton));
                skeleton_ptrs.len() - 1
            }
        };
        let offset = payload.len();
        payload.extend_from_slice(entry.motion.frames().data());
        entries.push(EntryMeta {
            skeleton: skeleton_idx,
            frames: entry.motion.frame_count(),
            joints: entry.motion.joint_count(),
            offset,
            fps: entry.motion.fps(),
            species: entry.motion.species_tag().to_string(),
            text: entry.text.clone(),
            split: entry.split,
        });
    }
    let header = serde_json::to_value(CorpusHeader {
        kind: "corpus".to_string(),
        skeletons,
        entries,
    })
    .map_err(|e| MotionError::InvalidArgument(e.to_string()))?;
    write_container(path, MAGIC, VERSION, &header, &payload)
        .map_err(|e| MotionError::InvalidArgument(e.to_string()))
}

pub fn load_corpus(path: &Path) -> Result<Corpus, MotionError> {
    let container = read_container(path, MAGIC, VERSION).map_err(container_error)?;
    let header: CorpusHeader = serde_json::from_value(container.header)
        .map_err(|e| MotionError::InvalidArgument(format!("corpus header: {e}")))?;
    let skeletons: Vec<Arc<crate::skeleton::SkeletonGraph>> = header
        .skeletons
        .iter()
        .map(|v| skeleton_from_value(v).map(Arc::new))
        .collect::<Result<_, _>>()?;
    let mut corpus = Corpus::default();
    for meta in header.entries {
        let n = meta.frames * meta.joints * FEATURES_PER_JOINT;
        if meta.offset + n > container.payload.len() {
            return Err(MotionError::InvalidArgument(format!(
                "corpus entry payload out of range: offset {} + {} > {}",
                meta.offset,
                n,
                container.payload.len()
            )));
        }
        let frames = Tensor::new(
            vec![meta.frames, meta.joints, FEATURES_PER_JOINT],
            container.payload[meta.offset..meta.offset + n].to_vec(),
        );
        let skeleton = skeletons
            .get(meta.skeleton)
            .ok_or_else(|| {
                MotionError::InvalidArgument(format!("skeleton index {} out of range", meta.skeleton))
            })?
            .clone();
        corpus.entries.push(CorpusEntry {
            skeleton,
            motion: MotionSequence::new(frames, meta.fps, meta.species)?,
            text: meta.text,
            split: meta.split,
        });
    }
    // The loader enforces corpus invariants, including frame-count bounds.
    corpus.validate()?;
    Ok(corpus)
}

fn container_error(e: ContainerError) -> MotionError {
    MotionError::InvalidArgument(e.to_string())
}

/// Text records as JSON lines, for quick inspection.
pub fn export_text_jsonl(corpus: &Corpus) -> String {
    let mut out = String::new();
    for entry in &corpus.entries {
        out.push_str(&serde_json::to_string(&entry.text).expect("text json"));
        out.push('\n');
    }
    out
}
