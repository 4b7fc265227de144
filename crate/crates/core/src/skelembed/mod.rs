//! Topology-aware skeleton embedding: per-joint geometry through a small
//! MLP, a learned CLS token, graph-structured attention biases from hop
//! distances and kinship relations, a biased graph-transformer stack, and a
//! projection of the contextualized CLS state to the conditioning vector.

pub mod bias;
pub mod transformer;

use serde::{Deserialize, Serialize};

use crate::numerics::{derive_rng, Params, Tape, Tensor, Var};
use crate::skeleton::{distance_matrix, relation_matrix, JointMask, SkeletonGraph};

pub use bias::{build_bias_on_tape, topology_codes, AttentionBias};
pub use transformer::{attention_on_tape, graph_transformer_forward, transformer_on_tape, StackDims};

use std::collections::BTreeMap;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkelEmbedConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub out_dim: usize,
    pub max_distance_clip: usize,
}

impl Default for SkelEmbedConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            heads: 4,
            model_dim: 64,
            out_dim: 64,
            max_distance_clip: 16,
        }
    }
}

impl SkelEmbedConfig {
    pub fn desk() -> Self {
        Self {
            layers: 2,
            heads: 2,
            model_dim: 32,
            out_dim: 32,
            max_distance_clip: 8,
        }
    }

    pub fn head_dim(&self) -> usize {
        assert!(
            self.model_dim % self.heads == 0,
            "model_dim {} must be divisible by heads {}",
            self.model_dim,
            self.heads
        );
        self.model_dim / self.heads
    }
}

/// Per-joint geometric input width: rest offset (3), depth over max depth,
/// child count, bone length.
pub const JOINT_FEATURES: usize = 6;

/// Geometric features of every joint, (K, 6).
pub fn joint_features(s: &SkeletonGraph) -> Tensor {
    let k = s.joint_count();
    let max_depth = s.max_depth().max(1) as f64;
    let mut data = Vec::with_capacity(k * JOINT_FEATURES);
    for (i, joint) in s.joints().iter().enumerate() {
        data.extend_from_slice(&joint.rest_offset);
        data.push(s.depth(i) as f64 / max_depth);
        data.push(s.child_count(i) as f64);
        data.push(s.bone_length(i));
    }
    Tensor::new(vec![k, JOINT_FEATURES], data)
}

#[derive(Debug, Clone)]
pub struct SkelEmbedModel {
    pub config: SkelEmbedConfig,
    pub params: Params,
}

impl SkelEmbedModel {
    /// Parameters are named under the `skel.` prefix so the model composes
    /// into the stage-2 parameter store without renaming.
    pub fn init(config: &SkelEmbedConfig, seed: u64) -> Self {
        let d = config.model_dim;
        let _ = config.head_dim();
        let mut rng = derive_rng(seed, "skelembed.init");
        let mut params = Params::new();
        let mut lin = |p: &mut Params, name: &str, fan_in: usize, fan_out: usize,
                       rng: &mut rand_chacha::ChaCha8Rng| {
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            p.insert(format!("{name}.w"), Tensor::randn(&[fan_in, fan_out], std, rng));
            p.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]));
        };
        lin(&mut params, "skel.joint_mlp.1", JOINT_FEATURES, d, &mut rng);
        lin(&mut params, "skel.joint_mlp.2", d, d, &mut rng);
        params.insert("skel.cls", Tensor::randn(&[1, d], 0.5, &mut rng));
        // Per-head scalar tables over clipped distance and relation code.
        params.insert(
            "skel.dist_table",
            Tensor::randn(&[config.max_distance_clip + 1, config.heads], 0.02, &mut rng),
        );
        params.insert(
            "skel.rel_table",
            Tensor::randn(
                &[crate::skeleton::Relation::COUNT, config.heads],
                0.02,
                &mut rng,
            ),
        );
        for l in 0..config.layers {
            // Q/K/V projections carry no bias: a key bias shifts every
            // logit in a row equally and softmax cancels it.
            for part in ["wq", "wk", "wv"] {
                let std = (1.0 / d as f64).sqrt();
                params.insert(
                    format!("skel.layer{l}.{part}.w"),
                    Tensor::randn(&[d, d], std, &mut rng),
                );
            }
            lin(&mut params, &format!("skel.layer{l}.wo"), d, d, &mut rng);
            params.insert(format!("skel.layer{l}.ln1.g"), Tensor::full(&[d], 1.0));
            params.insert(format!("skel.layer{l}.ln1.b"), Tensor::zeros(&[d]));
            params.insert(format!("skel.layer{l}.ln2.g"), Tensor::full(&[d], 1.0));
            params.insert(format!("skel.layer{l}.ln2.b"), Tensor::zeros(&[d]));
            lin(&mut params, &format!("skel.layer{l}.ffn.1"), d, 4 * d, &mut rng);
            lin(&mut params, &format!("skel.layer{l}.ffn.2"), 4 * d, d, &mut rng);
        }
        params.insert("skel.out_ln.g", Tensor::full(&[d], 1.0));
        params.insert("skel.out_ln.b", Tensor::zeros(&[d]));
        lin(&mut params, "skel.out", d, config.out_dim, &mut rng);
        Self {
            config: config.clone(),
            params,
        }
    }

    /// Joint-feature MLP, CLS prepend, attention bias, transformer stack,
    /// CLS projection — the whole embedding pipeline on a tape.
    ///
    /// `features` must be (J_max, 6) with zero rows at padded slots; the
    /// topology codes cover the same padded size.
    pub fn embedding_on_tape(
        &self,
        tape: &mut Tape,
        leaves: &BTreeMap<String, Var>,
        features: &Tensor,
        dist_codes: &[usize],
        rel_codes: &[usize],
        mask: &JointMask,
    ) -> Var {
        let x = tape.constant(features.clone());
        let h = tape.matmul(x, leaves["skel.joint_mlp.1.w"]);
        let h = tape.add_row(h, leaves["skel.joint_mlp.1.b"]);
        let h = tape.gelu(h);
        let h = tape.matmul(h, leaves["skel.joint_mlp.2.w"]);
        let h = tape.add_row(h, leaves["skel.joint_mlp.2.b"]);
        let z0 = tape.concat_rows(&[leaves["skel.cls"], h]);
        let bias_heads = build_bias_on_tape(
            tape,
            leaves["skel.dist_table"],
            leaves["skel.rel_table"],
            dist_codes,
            rel_codes,
            mask,
            self.config.heads,
        );
        let z = transformer_on_tape(tape, leaves, "skel", z0, Some(&bias_heads), &self.config.dims());
        let cls = tape.slice_rows(z, 0, 1);
        let cls = tape.layer_norm(cls, leaves["skel.out_ln.g"], leaves["skel.out_ln.b"], 1e-5);
        let f = tape.matmul(cls, leaves["skel.out.w"]);
        tape.add_row(f, leaves["skel.out.b"])
    }

    /// The full pipeline for one (possibly padded) skeleton: the f_skel
    /// conditioning vector of length `out_dim`.
    pub fn skeleton_embedding(&self, s: &SkeletonGraph, mask: &JointMask) -> Tensor {
        let (features, dist_codes, rel_codes) = self.prepare_inputs(s, mask);
        let mut tape = Tape::new();
        let leaves = self.params.constants(&mut tape);
        let out = self.embedding_on_tape(&mut tape, &leaves, &features, &dist_codes, &rel_codes, mask);
        tape.value(out).clone()
    }

    /// Padded joint features plus clipped distance / relation code tables
    /// for a skeleton under a validity mask.
    pub fn prepare_inputs(
        &self,
        s: &SkeletonGraph,
        mask: &JointMask,
    ) -> (Tensor, Vec<usize>, Vec<usize>) {
        let k = s.joint_count();
        assert_eq!(mask.valid_count(), k, "mask valid count vs skeleton joints");
        let j_max = mask.len();
        let feats = joint_features(s);
        let mut padded = vec![0.0; j_max * JOINT_FEATURES];
        padded[..k * JOINT_FEATURES].copy_from_slice(feats.data());
        let features = Tensor::new(vec![j_max, JOINT_FEATURES], padded);
        let d = distance_matrix(s);
        let r = relation_matrix(s);
        let (dist_codes, rel_codes) =
            topology_codes(&d, &r, j_max, self.config.max_distance_clip);
        (features, dist_codes, rel_codes)
    }

    /// Attention bias matrices for the current parameters (inference view).
    pub fn build_bias(
        &self,
        d: &crate::skeleton::DistanceMatrix,
        r: &crate::skeleton::RelationMatrix,
        mask: &JointMask,
    ) -> AttentionBias {
        let (dist_codes, rel_codes) = topology_codes(d, r, mask.len(), self.config.max_distance_clip);
        bias::build_bias(
            self.params.get("skel.dist_table"),
            self.params.get("skel.rel_table"),
            &dist_codes,
            &rel_codes,
            mask,
            self.config.heads,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use crate::skeleton::testutil::random_tree;
    use crate::skeleton::{apply_joint_order, random_topological_order};

    fn desk_model(seed: u64) -> SkelEmbedModel {
        SkelEmbedModel::init(&SkelEmbedConfig::desk(), seed)
    }

    #[test]
    fn output_has_configured_length() {
        let model = desk_model(1);
        let mut rng = derive_rng(2, "sk");
        let s = random_tree(6, &mut rng);
        let f = model.skeleton_embedding(&s, &JointMask::all_valid(6));
        assert_eq!(f.shape(), &[1, model.config.out_dim]);
        assert!(f.all_finite());
    }

    #[test]
    fn joint_mlp_constant_map_when_weights_zero() {
        // With both MLP matrices zero and bias2 = c, every joint row is c.
        let mut model = desk_model(3);
        let d = model.config.model_dim;
        model.params.set("skel.joint_mlp.1.w", Tensor::zeros(&[JOINT_FEATURES, d]));
        model.params.set("skel.joint_mlp.2.w", Tensor::zeros(&[d, d]));
        model.params.set("skel.joint_mlp.2.b", Tensor::full(&[d], 0.7));

        let mut rng = derive_rng(4, "sk");
        let s = random_tree(5, &mut rng);
        let mask = JointMask::all_valid(5);
        let (features, dc, rc) = model.prepare_inputs(&s, &mask);
        let mut tape = Tape::new();
        let leaves = model.params.constants(&mut tape);
        let x = tape.constant(features);
        let h = tape.matmul(x, leaves["skel.joint_mlp.1.w"]);
        let h = tape.add_row(h, leaves["skel.joint_mlp.1.b"]);
        let h = tape.gelu(h);
        let h = tape.matmul(h, leaves["skel.joint_mlp.2.w"]);
        let h = tape.add_row(h, leaves["skel.joint_mlp.2.b"]);
        let hv = tape.value(h);
        for row in 0..5 {
            for c in 0..d {
                assert_eq!(hv.get2(row, c), 0.7);
            }
        }
        let _ = (dc, rc);
    }

    #[test]
    fn embedding_matches_hand_rolled_mlp_oracle() {
        // The joint MLP is exactly two matmuls with a GELU between.
        let model = desk_model(5);
        let mut rng = derive_rng(6, "sk");
        let s = random_tree(4, &mut rng);
        let feats = joint_features(&s);
        let w1 = model.params.get("skel.joint_mlp.1.w");
        let b1 = model.params.get("skel.joint_mlp.1.b");
        let w2 = model.params.get("skel.joint_mlp.2.w");
        let b2 = model.params.get("skel.joint_mlp.2.b");
        let oracle = {
            let h = crate::numerics::matmul(&feats, w1).unwrap();
            let h = Tensor::from_fn(h.shape(), |i| h.data()[i] + b1.data()[i % b1.numel()]);
            let h = crate::numerics::gelu(&h);
            let h = crate::numerics::matmul(&h, w2).unwrap();
            Tensor::from_fn(h.shape(), |i| h.data()[i] + b2.data()[i % b2.numel()])
        };
        let mut tape = Tape::new();
        let leaves = model.params.constants(&mut tape);
        let x = tape.constant(feats);
        let h = tape.matmul(x, leaves["skel.joint_mlp.1.w"]);
        let h = tape.add_row(h, leaves["skel.joint_mlp.1.b"]);
        let h = tape.gelu(h);
        let h = tape.matmul(h, leaves["skel.joint_mlp.2.w"]);
        let h = tape.add_row(h, leaves["skel.joint_mlp.2.b"]);
        for (a, b) in tape.value(h).data().iter().zip(oracle.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn permutation_invariance_of_f_skel() {
        let model = desk_model(7);
        for seed in 0..5u64 {
            let mut rng = derive_rng(seed, "perm-fskel");
            let s = random_tree(9, &mut rng);
            let base = model.skeleton_embedding(&s, &JointMask::all_valid(9));
            for _ in 0..4 {
                let order = random_topological_order(&s, &mut rng);
                let relabeled = apply_joint_order(&s, &order);
                let f = model.skeleton_embedding(&relabeled, &JointMask::all_valid(9));
                for (a, b) in base.data().iter().zip(f.data()) {
                    assert!((a - b).abs() < 1e-9, "seed {seed}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn padding_leaves_f_skel_bitwise_unchanged() {
        let model = desk_model(8);
        let mut rng = derive_rng(9, "pad-fskel");
        let s = random_tree(6, &mut rng);
        let base = model.skeleton_embedding(&s, &JointMask::all_valid(6));
        let padded = model.skeleton_embedding(&s, &JointMask::prefix(6, 10));
        assert_eq!(base.data(), padded.data());
    }

    #[test]
    fn distance_clip_merges_far_pairs() {
        // On a long chain, pairs at distance beyond the clip share bias
        // values with pairs exactly at the clip.
        let model = desk_model(10);
        let s = crate::skeleton::testutil::chain(14, 0.5);
        let d = distance_matrix(&s);
        let r = relation_matrix(&s);
        let mask = JointMask::all_valid(14);
        let bias = model.build_bias(&d, &r, &mask);
        let clip = model.config.max_distance_clip;
        // Joints 0 and 13 are 13 apart (> clip 8); 0 and 8 are exactly clip.
        assert!(d.get(0, 13) > clip && d.get(0, 8) == clip);
        for head in &bias.per_head {
            assert_eq!(head.get2(1, 14), head.get2(1, 9));
        }
    }

    #[test]
    fn gradients_of_squared_norm_pass() {
        // d(||f_skel||^2)/d(params) on a 5-joint skeleton.
        let model = desk_model(11);
        let mut rng = derive_rng(12, "grad-fskel");
        let s = random_tree(5, &mut rng);
        let mask = JointMask::all_valid(5);
        let (features, dist_codes, rel_codes) = model.prepare_inputs(&s, &mask);
        let report = grad_check(
            |tape, leaves| {
                let f = model.embedding_on_tape(tape, leaves, &features, &dist_codes, &rel_codes, &mask);
                let sq = tape.square(f);
                tape.sum_all(sq)
            },
            &model.params,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(
            report.pass(),
            "max rel err {} at {:?}",
            report.max_rel_err,
            report.worst().map(|c| &c.name)
        );
    }
}
