//! Skeleton structure: parsing, validation, normalization, and the
//! topology descriptors (kinship relations, hop distances, joint masks)
//! that condition everything downstream.

pub mod bvh;
pub mod pad;
pub mod topology;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bvh::{export_bvh, parse_bvh, BvhError, BvhMotion};
pub use pad::{apply_joint_order, pad_joint_batch, random_topological_order, JointMask};
pub use topology::{distance_matrix, relation_matrix, DistanceMatrix, Relation, RelationMatrix};

#[derive(Debug, Error)]
pub enum SkeletonError {
    #[error("skeleton has no joints")]
    Empty,
    #[error("skeleton must have exactly one root, found {0}")]
    RootCount(usize),
    #[error("joint {joint} has parent {parent} which does not precede it")]
    BadParentOrder { joint: usize, parent: usize },
    #[error("joint {0} has a non-finite rest offset")]
    NonFiniteOffset(usize),
    #[error("degenerate skeleton: every root-to-leaf chain has zero length")]
    Degenerate,
    #[error("joint count mismatch: skeleton has {skeleton}, motion has {motion}")]
    JointCountMismatch { skeleton: usize, motion: usize },
    #[error("skeleton json: {0}")]
    Json(String),
}

/// One BVH-style motion channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    Xposition,
    Yposition,
    Zposition,
    Xrotation,
    Yrotation,
    Zrotation,
}

impl Channel {
    pub fn is_rotation(self) -> bool {
        matches!(self, Channel::Xrotation | Channel::Yrotation | Channel::Zrotation)
    }

    pub fn bvh_name(self) -> &'static str {
        match self {
            Channel::Xposition => "Xposition",
            Channel::Yposition => "Yposition",
            Channel::Zposition => "Zposition",
            Channel::Xrotation => "Xrotation",
            Channel::Yrotation => "Yrotation",
            Channel::Zrotation => "Zrotation",
        }
    }
}

/// Default channel layout for skeletons that did not come from a BVH file:
/// a 6-channel root and 3 rotation channels elsewhere, ZXY order.
pub fn default_channels(is_root: bool) -> Vec<Channel> {
    if is_root {
        vec![
            Channel::Xposition,
            Channel::Yposition,
            Channel::Zposition,
            Channel::Zrotation,
            Channel::Xrotation,
            Channel::Yrotation,
        ]
    } else {
        vec![Channel::Zrotation, Channel::Xrotation, Channel::Yrotation]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    /// `None` marks the root.
    pub parent: Option<usize>,
    pub rest_offset: [f64; 3],
    /// BVH channel order for this joint; empty for end-site leaves.
    pub channels: Vec<Channel>,
}

/// An articulated skeleton in topological joint order (every joint's parent
/// precedes it). Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonGraph {
    name: String,
    species_tag: String,
    joints: Vec<Joint>,
}

impl SkeletonGraph {
    pub fn new(
        name: impl Into<String>,
        species_tag: impl Into<String>,
        joints: Vec<Joint>,
    ) -> Result<Self, SkeletonError> {
        if joints.is_empty() {
            return Err(SkeletonError::Empty);
        }
        let roots = joints.iter().filter(|j| j.parent.is_none()).count();
        if roots != 1 {
            return Err(SkeletonError::RootCount(roots));
        }
        for (i, joint) in joints.iter().enumerate() {
            if let Some(p) = joint.parent {
                if p >= i {
                    return Err(SkeletonError::BadParentOrder { joint: i, parent: p });
                }
            } else if i != 0 {
                return Err(SkeletonError::BadParentOrder { joint: i, parent: 0 });
            }
            if joint.rest_offset.iter().any(|v| !v.is_finite()) {
                return Err(SkeletonError::NonFiniteOffset(i));
            }
        }
        Ok(Self {
            name: name.into(),
            species_tag: species_tag.into(),
            joints,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn species_tag(&self) -> &str {
        &self.species_tag
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn children(&self, i: usize) -> Vec<usize> {
        (0..self.joints.len())
            .filter(|&c| self.joints[c].parent == Some(i))
            .collect()
    }

    pub fn child_count(&self, i: usize) -> usize {
        self.joints.iter().filter(|j| j.parent == Some(i)).count()
    }

    pub fn is_leaf(&self, i: usize) -> bool {
        self.child_count(i) == 0
    }

    /// Hops from the root.
    pub fn depth(&self, i: usize) -> usize {
        let mut d = 0;
        let mut cur = i;
        while let Some(p) = self.joints[cur].parent {
            d += 1;
            cur = p;
        }
        d
    }

    pub fn max_depth(&self) -> usize {
        (0..self.joints.len()).map(|i| self.depth(i)).max().unwrap_or(0)
    }

    pub fn bone_length(&self, i: usize) -> f64 {
        let o = self.joints[i].rest_offset;
        (o[0] * o[0] + o[1] * o[1] + o[2] * o[2]).sqrt()
    }

    /// Sum of bone lengths from the root down to `leaf` (the root's own
    /// offset is placement, not a bone, and is excluded).
    pub fn chain_length(&self, leaf: usize) -> f64 {
        let mut len = 0.0;
        let mut cur = leaf;
        while let Some(p) = self.joints[cur].parent {
            len += self.bone_length(cur);
            cur = p;
        }
        len
    }

    /// Length of the longest root-to-leaf chain.
    pub fn longest_chain(&self) -> f64 {
        (0..self.joints.len())
            .filter(|&i| self.is_leaf(i))
            .map(|i| self.chain_length(i))
            .fold(0.0, f64::max)
    }

    pub fn with_species(&self, species: impl Into<String>) -> Self {
        let mut s = self.clone();
        s.species_tag = species.into();
        s
    }
}

/// Rescale all rest offsets by a single factor so the longest root-to-leaf
/// chain has length 1. Returns the factor applied, for inversion.
///
/// Already-normalized skeletons (chain within 1e-9 of 1) are returned
/// unchanged with factor exactly 1.0, which makes the operation idempotent
/// bit-for-bit.
pub fn normalize_skeleton(s: &SkeletonGraph) -> Result<(SkeletonGraph, f64), SkeletonError> {
    let longest = s.longest_chain();
    if longest <= 0.0 {
        return Err(SkeletonError::Degenerate);
    }
    if (longest - 1.0).abs() < 1e-9 {
        return Ok((s.clone(), 1.0));
    }
    let scale = 1.0 / longest;
    let joints = s
        .joints
        .iter()
        .map(|j| Joint {
            name: j.name.clone(),
            parent: j.parent,
            rest_offset: [
                j.rest_offset[0] * scale,
                j.rest_offset[1] * scale,
                j.rest_offset[2] * scale,
            ],
            channels: j.channels.clone(),
        })
        .collect();
    Ok((
        SkeletonGraph {
            name: s.name.clone(),
            species_tag: s.species_tag.clone(),
            joints,
        },
        scale,
    ))
}

#[derive(Serialize, Deserialize)]
struct SkeletonJson {
    name: String,
    species: String,
    joints: Vec<JointJson>,
}

#[derive(Serialize, Deserialize)]
struct JointJson {
    name: String,
    parent: Option<usize>,
    offset: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    channels: Option<Vec<Channel>>,
}

pub fn skeleton_to_json(s: &SkeletonGraph) -> String {
    serde_json::to_string_pretty(&to_doc(s)).expect("skeleton json")
}

/// Skeleton as a JSON value, for embedding in container headers.
pub fn skeleton_to_value(s: &SkeletonGraph) -> serde_json::Value {
    serde_json::to_value(to_doc(s)).expect("skeleton json")
}

pub fn skeleton_from_value(v: &serde_json::Value) -> Result<SkeletonGraph, SkeletonError> {
    let doc: SkeletonJson =
        serde_json::from_value(v.clone()).map_err(|e| SkeletonError::Json(e.to_string()))?;
    from_doc(doc)
}

fn to_doc(s: &SkeletonGraph) -> SkeletonJson {
    SkeletonJson {
        name: s.name.clone(),
        species: s.species_tag.clone(),
        joints: s
            .joints
            .iter()
            .map(|j| JointJson {
                name: j.name.clone(),
                parent: j.parent,
                offset: j.rest_offset,
                channels: Some(j.channels.clone()),
            })
            .collect(),
    }
}

pub fn skeleton_from_json(text: &str) -> Result<SkeletonGraph, SkeletonError> {
    let doc: SkeletonJson =
        serde_json::from_str(text).map_err(|e| SkeletonError::Json(e.to_string()))?;
    from_doc(doc)
}

fn from_doc(doc: SkeletonJson) -> Result<SkeletonGraph, SkeletonError> {
    let joints = doc
        .joints
        .into_iter()
        .enumerate()
        .map(|(i, j)| Joint {
            name: j.name,
            parent: j.parent,
            rest_offset: j.offset,
            channels: j
                .channels
                .unwrap_or_else(|| default_channels(i == 0)),
        })
        .collect();
    SkeletonGraph::new(doc.name, doc.species, joints)
}


#[cfg(test)]
mod tests {
    use super::testutil::{chain, random_tree};
    use super::*;
    use crate::numerics::derive_rng;

    #[test]
    fn rejects_multiple_roots() {
        let joints = vec![
            Joint {
                name: "a".into(),
                parent: None,
                rest_offset: [0.0; 3],
                channels: vec![],
            },
            Joint {
                name: "b".into(),
                parent: None,
                rest_offset: [0.0; 3],
                channels: vec![],
            },
        ];
        assert!(matches!(
            SkeletonGraph::new("x", "x", joints),
            Err(SkeletonError::RootCount(2))
        ));
    }

    #[test]
    fn normalize_chain_of_two_halves_is_identity() {
        let s = chain(3, 0.5);
        let (out, scale) = normalize_skeleton(&s).unwrap();
        assert_eq!(scale, 1.0);
        assert_eq!(out, s);
    }

    #[test]
    fn normalize_is_scale_invariant() {
        let mut rng = derive_rng(1, "norm");
        let s = random_tree(10, &mut rng);
        let doubled = SkeletonGraph::new(
            s.name(),
            s.species_tag(),
            s.joints()
                .iter()
                .map(|j| Joint {
                    name: j.name.clone(),
                    parent: j.parent,
                    rest_offset: [
                        j.rest_offset[0] * 2.0,
                        j.rest_offset[1] * 2.0,
                        j.rest_offset[2] * 2.0,
                    ],
                    channels: j.channels.clone(),
                })
                .collect(),
        )
        .unwrap();
        let (a, _) = normalize_skeleton(&s).unwrap();
        let (b, _) = normalize_skeleton(&doubled).unwrap();
        for (ja, jb) in a.joints().iter().zip(b.joints()) {
            for d in 0..3 {
                assert!((ja.rest_offset[d] - jb.rest_offset[d]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalize_longest_chain_matches_exhaustive_leaf_enumeration() {
        for seed in 0..20u64 {
            let mut rng = derive_rng(seed, "norm-exhaustive");
            let s = random_tree(10, &mut rng);
            let (out, _) = normalize_skeleton(&s).unwrap();
            // Exhaustive: walk every leaf path summing offset norms.
            let longest = (0..out.joint_count())
                .filter(|&i| out.is_leaf(i))
                .map(|i| out.chain_length(i))
                .fold(0.0, f64::max);
            assert!((longest - 1.0).abs() < 1e-9, "seed {seed}: {longest}");
        }
    }

    #[test]
    fn normalize_is_idempotent_bitwise() {
        let mut rng = derive_rng(9, "idem");
        let s = random_tree(12, &mut rng);
        let (once, _) = normalize_skeleton(&s).unwrap();
        let (twice, scale) = normalize_skeleton(&once).unwrap();
        assert_eq!(scale, 1.0);
        assert_eq!(once, twice);
    }

    #[test]
    fn degenerate_skeleton_is_an_error() {
        let s = chain(3, 0.0);
        assert!(matches!(normalize_skeleton(&s), Err(SkeletonError::Degenerate)));
    }

    #[test]
    fn json_round_trip() {
        let mut rng = derive_rng(4, "json");
        let s = random_tree(7, &mut rng).with_species("lynx");
        let text = skeleton_to_json(&s);
        let back = skeleton_from_json(&text).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn json_without_channels_gets_defaults() {
        let text = r#"{
            "name": "bird",
            "species": "bird",
            "joints": [
                {"name": "root", "parent": null, "offset": [0, 0, 0]},
                {"name": "wing", "parent": 0, "offset": [0.5, 0, 0]}
            ]
        }"#;
        let s = skeleton_from_json(text).unwrap();
        assert_eq!(s.joints()[0].channels.len(), 6);
        assert_eq!(s.joints()[1].channels.len(), 3);
    }
}
