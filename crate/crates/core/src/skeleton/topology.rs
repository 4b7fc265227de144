//! Pairwise topology descriptors: kinship relations and hop distances.

use super::SkeletonGraph;

/// How column joint j relates to row joint i (row = observer). Joints
/// further apart than these categories fall to `Other`; the distance matrix
/// carries the fine-grained structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    SelfJoint,
    Parent,
    Child,
    Sibling,
    Other,
}

impl Relation {
    pub const COUNT: usize = 5;

    /// Stable code used as an embedding-table index.
    pub fn code(self) -> usize {
        match self {
            Relation::SelfJoint => 0,
            Relation::Parent => 1,
            Relation::Child => 2,
            Relation::Sibling => 3,
            Relation::Other => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationMatrix {
    k: usize,
    entries: Vec<Relation>,
}

impl RelationMatrix {
    pub fn size(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> Relation {
        self.entries[i * self.k + j]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    k: usize,
    entries: Vec<usize>,
}

impl DistanceMatrix {
    pub fn size(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> usize {
        self.entries[i * self.k + j]
    }
}

/// Classify every ordered joint pair: entry (i, j) is j's role relative
/// to i.
pub fn relation_matrix(s: &SkeletonGraph) -> RelationMatrix {
    let k = s.joint_count();
    let joints = s.joints();
    let mut entries = vec![Relation::Other; k * k];
    for i in 0..k {
        for j in 0..k {
            entries[i * k + j] = if i == j {
                Relation::SelfJoint
            } else if joints[i].parent == Some(j) {
                Relation::Parent
            } else if joints[j].parent == Some(i) {
                Relation::Child
            } else if joints[i].parent.is_some() && joints[i].parent == joints[j].parent {
                Relation::Sibling
            } else {
                Relation::Other
            };
        }
    }
    RelationMatrix { k, entries }
}

/// Hop counts on the undirected bone graph, breadth-first from each joint.
pub fn distance_matrix(s: &SkeletonGraph) -> DistanceMatrix {
    let k = s.joint_count();
    let mut adj = vec![Vec::new(); k];
    for (i, joint) in s.joints().iter().enumerate() {
        if let Some(p) = joint.parent {
            adj[i].push(p);
            adj[p].push(i);
        }
    }
    let mut entries = vec![usize::MAX; k * k];
    for start in 0..k {
        let mut queue = std::collections::VecDeque::new();
        entries[start * k + start] = 0;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            let du = entries[start * k + u];
            for &v in &adj[u] {
                if entries[start * k + v] == usize::MAX {
                    entries[start * k + v] = du + 1;
                    queue.push_back(v);
                }
            }
        }
    }
    // Trees are connected, so every entry is filled.
    debug_assert!(entries.iter().all(|&d| d != usize::MAX));
    DistanceMatrix { k, entries }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{chain, random_tree};
    use super::super::{default_channels, Joint, SkeletonGraph};
    use super::*;
    use crate::numerics::derive_rng;

    fn star(children: usize) -> SkeletonGraph {
        let mut joints = vec![Joint {
            name: "root".into(),
            parent: None,
            rest_offset: [0.0; 3],
            channels: default_channels(true),
        }];
        for i in 0..children {
            joints.push(Joint {
                name: format!("c{i}"),
                parent: Some(0),
                rest_offset: [1.0, 0.0, 0.0],
                channels: default_channels(false),
            });
        }
        SkeletonGraph::new("star", "test", joints).unwrap()
    }

    #[test]
    fn chain_relations_by_hand() {
        let s = chain(3, 1.0);
        let r = relation_matrix(&s);
        assert_eq!(r.get(1, 0), Relation::Parent);
        assert_eq!(r.get(0, 1), Relation::Child);
        assert_eq!(r.get(0, 2), Relation::Other);
        assert_eq!(r.get(0, 0), Relation::SelfJoint);
    }

    #[test]
    fn star_children_are_siblings() {
        let s = star(3);
        let r = relation_matrix(&s);
        assert_eq!(r.get(1, 2), Relation::Sibling);
        assert_eq!(r.get(2, 1), Relation::Sibling);
        assert_eq!(r.get(3, 1), Relation::Sibling);
    }

    #[test]
    fn chain_distances_by_hand() {
        let s = chain(3, 1.0);
        let d = distance_matrix(&s);
        let expect = [[0, 1, 2], [1, 0, 1], [2, 1, 0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(d.get(i, j), expect[i][j]);
            }
        }
    }

    #[test]
    fn star_children_are_two_apart() {
        let s = star(3);
        let d = distance_matrix(&s);
        for a in 1..4 {
            for b in 1..4 {
                if a != b {
                    assert_eq!(d.get(a, b), 2);
                }
            }
        }
    }

    /// Floyd-Warshall over the bone edges; independent of the BFS path.
    pub(crate) fn floyd_warshall(s: &SkeletonGraph) -> Vec<Vec<usize>> {
        let k = s.joint_count();
        let inf = usize::MAX / 4;
        let mut d = vec![vec![inf; k]; k];
        for i in 0..k {
            d[i][i] = 0;
        }
        for (i, j) in s.joints().iter().enumerate() {
            if let Some(p) = j.parent {
                d[i][p] = 1;
                d[p][i] = 1;
            }
        }
        for m in 0..k {
            for i in 0..k {
                for j in 0..k {
                    if d[i][m] + d[m][j] < d[i][j] {
                        d[i][j] = d[i][m] + d[m][j];
                    }
                }
            }
        }
        d
    }

    #[test]
    fn distance_matches_floyd_warshall_on_random_trees() {
        for seed in 0..30u64 {
            let mut rng = derive_rng(seed, "fw");
            let s = random_tree(15, &mut rng);
            let d = distance_matrix(&s);
            let oracle = floyd_warshall(&s);
            for i in 0..15 {
                for j in 0..15 {
                    assert_eq!(d.get(i, j), oracle[i][j], "seed {seed} pair ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn relation_matches_bruteforce_on_random_trees() {
        for seed in 0..30u64 {
            let mut rng = derive_rng(seed, "rel");
            let s = random_tree(12, &mut rng);
            let r = relation_matrix(&s);
            let parent: Vec<Option<usize>> = s.joints().iter().map(|j| j.parent).collect();
            for i in 0..12 {
                for j in 0..12 {
                    // Rule-by-rule classification, checked in priority order.
                    let expect = if i == j {
                        Relation::SelfJoint
                    } else if parent[i] == Some(j) {
                        Relation::Parent
                    } else if parent[j] == Some(i) {
                        Relation::Child
                    } else if parent[i].is_some() && parent[i] == parent[j] {
                        Relation::Sibling
                    } else {
                        Relation::Other
                    };
                    assert_eq!(r.get(i, j), expect, "seed {seed} pair ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn unit_distance_iff_parent_child() {
        for seed in 0..20u64 {
            let mut rng = derive_rng(seed, "edge");
            let s = random_tree(14, &mut rng);
            let d = distance_matrix(&s);
            let r = relation_matrix(&s);
            for i in 0..14 {
                for j in 0..14 {
                    let is_edge = d.get(i, j) == 1;
                    let is_kin = matches!(r.get(i, j), Relation::Parent | Relation::Child);
                    assert_eq!(is_edge, is_kin, "seed {seed} pair ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn relabeling_permutes_matrices_consistently() {
        for seed in 0..10u64 {
            let mut rng = derive_rng(seed, "perm");
            let s = random_tree(10, &mut rng);
            let perm = crate::skeleton::pad::random_topological_order(&s, &mut rng);
            let relabeled = crate::skeleton::pad::apply_joint_order(&s, &perm);
            let (r0, d0) = (relation_matrix(&s), distance_matrix(&s));
            let (r1, d1) = (relation_matrix(&relabeled), distance_matrix(&relabeled));
            // perm[new] = old; entry (i,j) of the relabeled matrices must
            // equal entry (perm[i], perm[j]) of the originals.
            for i in 0..10 {
                for j in 0..10 {
                    assert_eq!(r1.get(i, j), r0.get(perm[i], perm[j]));
                    assert_eq!(d1.get(i, j), d0.get(perm[i], perm[j]));
                }
            }
        }
    }
}
