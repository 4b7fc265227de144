//! Graph-aware attention bias: per-head scalars looked up by clipped hop
//! distance and kinship relation, summed, and combined with the extended
//! spatial mask.
//!
//! Index 0 of the (K+1)-sized attention grid is the CLS token. CLS rows and
//! columns carry bias 0 toward valid joints; padded columns are masked to
//! the sentinel for every row, CLS included.

use crate::numerics::{mask_bias, Tape, Tensor, Var, MASKED_LOGIT};
use crate::skeleton::{DistanceMatrix, JointMask, Relation, RelationMatrix};

/// Additive attention-logit matrices, one (K+1, K+1) tensor per head.
#[derive(Debug, Clone)]
pub struct AttentionBias {
    pub per_head: Vec<Tensor>,
}

/// Flattened per-pair lookup codes over the padded joint grid (J_max^2).
/// Pairs touching padded slots get the clip / Other codes; their columns are
/// masked out downstream, so the values never matter.
pub fn topology_codes(
    d: &DistanceMatrix,
    r: &RelationMatrix,
    j_max: usize,
    clip: usize,
) -> (Vec<usize>, Vec<usize>) {
    let k = d.size();
    debug_assert_eq!(r.size(), k);
    debug_assert!(j_max >= k);
    let mut dist = vec![clip; j_max * j_max];
    let mut rel = vec![Relation::Other.code(); j_max * j_max];
    for i in 0..k {
        for j in 0..k {
            dist[i * j_max + j] = d.get(i, j).min(clip);
            rel[i * j_max + j] = r.get(i, j).code();
        }
    }
    (dist, rel)
}

/// The mask term M': 0 at valid columns, sentinel at padded columns, for
/// every row including CLS.
fn mask_matrix(mask: &JointMask) -> Tensor {
    let k1 = mask.len() + 1;
    mask_bias(k1, k1, |_, j| j > 0 && !mask.is_valid(j - 1))
}

/// Bias matrices from concrete table tensors (inference/tests).
pub fn build_bias(
    dist_table: &Tensor,
    rel_table: &Tensor,
    dist_codes: &[usize],
    rel_codes: &[usize],
    mask: &JointMask,
    heads: usize,
) -> AttentionBias {
    let j_max = mask.len();
    let k1 = j_max + 1;
    let mask_m = mask_matrix(mask);
    let mut per_head = Vec::with_capacity(heads);
    for h in 0..heads {
        let mut data = vec![0.0; k1 * k1];
        for i in 0..j_max {
            for j in 0..j_max {
                let v = dist_table.get2(dist_codes[i * j_max + j], h)
                    + rel_table.get2(rel_codes[i * j_max + j], h);
                data[(i + 1) * k1 + (j + 1)] = v;
            }
        }
        for (slot, &m) in data.iter_mut().zip(mask_m.data()) {
            if m == MASKED_LOGIT {
                *slot = MASKED_LOGIT;
            }
        }
        per_head.push(Tensor::new(vec![k1, k1], data));
    }
    AttentionBias { per_head }
}

/// Bias matrices as tape nodes so table gradients flow. Returns one
/// (K+1, K+1) node per head.
pub fn build_bias_on_tape(
    tape: &mut Tape,
    dist_table: Var,
    rel_table: Var,
    dist_codes: &[usize],
    rel_codes: &[usize],
    mask: &JointMask,
    heads: usize,
) -> Vec<Var> {
    let j_max = mask.len();
    let k1 = j_max + 1;
    // (J_max^2, heads) gathers, summed.
    let d_rows = tape.gather_rows(dist_table, dist_codes);
    let r_rows = tape.gather_rows(rel_table, rel_codes);
    let sum = tape.add(d_rows, r_rows);
    let mask_m = tape.constant(mask_matrix(mask));
    (0..heads)
        .map(|h| {
            let col = tape.slice_cols(sum, h, 1);
            let block = tape.reshape(col, vec![j_max, j_max]);
            // Embed the joint-joint block at (1.., 1..): zero CLS row and
            // column, then apply the sentinel mask.
            let zero_col = tape.constant(Tensor::zeros(&[j_max, 1]));
            let with_col = tape.concat_cols(&[zero_col, block]);
            let zero_row = tape.constant(Tensor::zeros(&[1, k1]));
            let full = tape.concat_rows(&[zero_row, with_col]);
            tape.add(full, mask_m)
        })
        .collect()
}
