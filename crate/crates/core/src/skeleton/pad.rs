//! Joint-axis padding and validity masks for batching skeletons of
//! different joint counts.

use crate::numerics::{NumericsError, Tensor};

use super::{Joint, SkeletonGraph};

/// Binary validity flags over a padded joint axis: 1 for real joints,
/// 0 for padding. Valid joints always form a prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointMask {
    flags: Vec<bool>,
}

impl JointMask {
    /// Mask with `valid` real joints padded out to `total`.
    pub fn prefix(valid: usize, total: usize) -> Self {
        assert!(valid >= 1, "mask needs at least one valid joint");
        assert!(valid <= total, "valid {valid} exceeds total {total}");
        let mut flags = vec![false; total];
        flags[..valid].fill(true);
        Self { flags }
    }

    pub fn all_valid(count: usize) -> Self {
        Self::prefix(count, count)
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn is_valid(&self, j: usize) -> bool {
        self.flags[j]
    }

    pub fn valid_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn valid_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.flags
            .iter()
            .enumerate()
            .filter(|(_, &f)| f)
            .map(|(j, _)| j)
    }

    /// 0.0/1.0 weights, for mask-weighted reductions.
    pub fn weights(&self) -> Vec<f64> {
        self.flags.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect()
    }
}

/// Stack per-sample `(J_i, F)` arrays into a `(B, J_max, F)` tensor,
/// zero-filling padded joint slots, and return one validity mask per sample.
pub fn pad_joint_batch(items: &[Tensor]) -> Result<(Tensor, Vec<JointMask>), NumericsError> {
    if items.is_empty() {
        return Err(NumericsError::InvalidArgument(
            "pad_joint_batch: empty batch".to_string(),
        ));
    }
    let feat = items[0].shape().last().copied().unwrap_or(0);
    for item in items {
        if item.rank() != 2 {
            return Err(NumericsError::BadRank {
                op: "pad_joint_batch",
                expected: 2,
                shape: item.shape().to_vec(),
            });
        }
        if item.shape()[1] != feat {
            return Err(NumericsError::ShapeMismatch {
                op: "pad_joint_batch",
                lhs: items[0].shape().to_vec(),
                rhs: item.shape().to_vec(),
            });
        }
    }
    let j_max = items.iter().map(|t| t.shape()[0]).max().unwrap();
    let b = items.len();
    let mut data = vec![0.0; b * j_max * feat];
    let mut masks = Vec::with_capacity(b);
    for (s, item) in items.iter().enumerate() {
        let j = item.shape()[0];
        data[s * j_max * feat..s * j_max * feat + j * feat].copy_from_slice(item.data());
        masks.push(JointMask::prefix(j, j_max));
    }
    Ok((Tensor::new(vec![b, j_max, feat], data), masks))
}

/// A random topological order of the joints: repeatedly pick an unplaced
/// joint whose parent is already placed. `order[new_index] = old_index`.
pub fn random_topological_order(s: &SkeletonGraph, rng: &mut impl rand::Rng) -> Vec<usize> {
    let k = s.joint_count();
    let mut placed = vec![false; k];
    let mut order = Vec::with_capacity(k);
    while order.len() < k {
        let ready: Vec<usize> = (0..k)
            .filter(|&i| !placed[i])
            .filter(|&i| s.joints()[i].parent.map_or(true, |p| placed[p]))
            .collect();
        let pick = ready[rng.gen_range(0..ready.len())];
        placed[pick] = true;
        order.push(pick);
    }
    order
}

/// Relabel joints by a topological order (`order[new] = old`), remapping
/// parent links so the skeleton stays valid.
pub fn apply_joint_order(s: &SkeletonGraph, order: &[usize]) -> SkeletonGraph {
    let mut new_of_old = vec![0usize; order.len()];
    for (new, &old) in order.iter().enumerate() {
        new_of_old[old] = new;
    }
    let joints = order
        .iter()
        .map(|&old| {
            let j = &s.joints()[old];
            Joint {
                name: j.name.clone(),
                parent: j.parent.map(|p| new_of_old[p]),
                rest_offset: j.rest_offset,
                channels: j.channels.clone(),
            }
        })
        .collect();
    SkeletonGraph::new(s.name(), s.species_tag(), joints).expect("relabeled skeleton stays valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::derive_rng;
    use crate::skeleton::testutil::random_tree;

    #[test]
    fn pads_to_batch_maximum() {
        let a = Tensor::new(vec![3, 2], vec![1.0; 6]);
        let b = Tensor::new(vec![5, 2], vec![2.0; 10]);
        let (stacked, masks) = pad_joint_batch(&[a, b]).unwrap();
        assert_eq!(stacked.shape(), &[2, 5, 2]);
        assert_eq!(masks[0].flags(), &[true, true, true, false, false]);
        assert_eq!(masks[1].valid_count(), 5);
        // Padded slots are zero.
        assert_eq!(stacked.get3(0, 3, 0), 0.0);
        assert_eq!(stacked.get3(0, 4, 1), 0.0);
    }

    #[test]
    fn single_item_batch_is_identity_plus_ones_mask() {
        let a = Tensor::new(vec![4, 3], (0..12).map(|v| v as f64).collect());
        let (stacked, masks) = pad_joint_batch(std::slice::from_ref(&a)).unwrap();
        assert_eq!(stacked.data(), a.data());
        assert_eq!(masks[0].valid_count(), 4);
    }

    #[test]
    fn mask_sum_counts_joints() {
        let items: Vec<Tensor> = [3usize, 7, 5, 2]
            .iter()
            .map(|&j| Tensor::zeros(&[j, 4]))
            .collect();
        let (_, masks) = pad_joint_batch(&items).unwrap();
        let total: usize = masks.iter().map(JointMask::valid_count).sum();
        assert_eq!(total, 3 + 7 + 5 + 2);
    }

    #[test]
    fn empty_batch_is_an_error() {
        assert!(pad_joint_batch(&[]).is_err());
    }

    #[test]
    fn topological_orders_are_valid() {
        for seed in 0..10u64 {
            let mut rng = derive_rng(seed, "topo-order");
            let s = random_tree(12, &mut rng);
            let order = random_topological_order(&s, &mut rng);
            let relabeled = apply_joint_order(&s, &order);
            assert_eq!(relabeled.joint_count(), 12);
            // Constructor validated parent-precedes-child; also check the
            // edge multiset is preserved under the relabeling.
            let mut old_edges: Vec<(String, String)> = s
                .joints()
                .iter()
                .filter_map(|j| {
                    j.parent
                        .map(|p| (s.joints()[p].name.clone(), j.name.clone()))
                })
                .collect();
            let mut new_edges: Vec<(String, String)> = relabeled
                .joints()
                .iter()
                .filter_map(|j| {
                    j.parent
                        .map(|p| (relabeled.joints()[p].name.clone(), j.name.clone()))
                })
                .collect();
            old_edges.sort();
            new_edges.sort();
            assert_eq!(old_edges, new_edges);
        }
    }
}
