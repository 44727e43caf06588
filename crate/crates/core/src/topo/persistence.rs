use serde::{Deserialize, Serialize};

use super::contour_tree::ContourTree;
use super::merge_tree::MergeTree;
use super::{SweepDirection, TopoError};
use crate::union_find::UnionFind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PairKind {
    /// The global minimum with the global maximum.
    Essential,
    MinSaddle,
    SaddleMax,
}

/// A feature born at an extremum and killed at a saddle.
///
/// `birth` is always the extremum: a minimum for `MinSaddle` pairs (born in
/// the upward sweep) and a maximum for `SaddleMax` pairs (born in the downward
/// sweep). For the essential pair `birth` is the global minimum and `death`
/// the global maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersistencePair {
    pub birth: u32,
    pub death: u32,
    pub persistence: f64,
    pub kind: PairKind,
}

impl PersistencePair {
    pub fn is_essential(&self) -> bool {
        self.kind == PairKind::Essential
    }
}

fn sort_pairs(pairs: &mut [PersistencePair]) {
    pairs.sort_by(|a, b| {
        a.kind
            .cmp(&b.kind)
            .then(a.persistence.total_cmp(&b.persistence))
            .then(a.birth.cmp(&b.birth))
            .then(a.death.cmp(&b.death))
    });
}

/// Elder-rule pairing read off both merge trees: at every merge the component
/// with the earliest-swept extremum survives and every other one dies there.
pub fn compute_persistence(
    join: &MergeTree,
    split: &MergeTree,
) -> Result<Vec<PersistencePair>, TopoError> {
    if join.direction() != SweepDirection::Join
        || split.direction() != SweepDirection::Split
        || join.dims() != split.dims()
        || join.sweep_order().first() != split.sweep_order().last()
        || join.sweep_order().last() != split.sweep_order().first()
    {
        return Err(TopoError::FieldMismatch);
    }
    let mut pairs = Vec::new();
    let survivor = elder_pairs(join, PairKind::MinSaddle, &mut pairs);
    elder_pairs(split, PairKind::SaddleMax, &mut pairs);
    let root = join.root();
    let min = join.nodes()[survivor as usize];
    pairs.push(PersistencePair {
        birth: min.vertex,
        death: root.vertex,
        persistence: (root.value - min.value).abs(),
        kind: PairKind::Essential,
    });
    sort_pairs(&mut pairs);
    Ok(pairs)
}

/// Returns the surviving leaf (node index) at the root.
fn elder_pairs(tree: &MergeTree, kind: PairKind, out: &mut Vec<PersistencePair>) -> u32 {
    let nodes = tree.nodes();
    let mut incoming: Vec<Vec<u32>> = vec![Vec::new(); nodes.len()];
    for (i, arc) in tree.arcs().iter().enumerate() {
        incoming[arc.parent as usize].push(i as u32);
    }
    // Oldest leaf (node index) carried along each arc.
    let mut oldest = vec![0u32; tree.arcs().len()];
    let mut outgoing = vec![u32::MAX; nodes.len()];
    for (i, arc) in tree.arcs().iter().enumerate() {
        outgoing[arc.child as usize] = i as u32;
    }
    let mut survivor = 0;
    for (i, node) in nodes.iter().enumerate() {
        let elder = if incoming[i].is_empty() {
            i as u32
        } else {
            let elder = incoming[i].iter().map(|&a| oldest[a as usize]).min().unwrap();
            for &a in &incoming[i] {
                let leaf = oldest[a as usize];
                if leaf != elder {
                    let born = nodes[leaf as usize];
                    out.push(PersistencePair {
                        birth: born.vertex,
                        death: node.vertex,
                        persistence: (node.value - born.value).abs(),
                        kind,
                    });
                }
            }
            elder
        };
        if outgoing[i] != u32::MAX {
            oldest[outgoing[i] as usize] = elder;
        } else {
            survivor = elder;
        }
    }
    survivor
}

impl ContourTree {
    /// Elder-rule pairs recomputed from the tree's own node graph, independent
    /// of the merge trees. Valid for simplified trees as well.
    pub fn persistence_pairs(&self) -> Vec<PersistencePair> {
        let n = self.nodes.len();
        let mut down: Vec<Vec<u32>> = vec![Vec::new(); n];
        let mut up: Vec<Vec<u32>> = vec![Vec::new(); n];
        for a in &self.arcs {
            down[a.upper as usize].push(a.lower);
            up[a.lower as usize].push(a.upper);
        }
        let mut pairs = Vec::new();
        self.graph_sweep((0..n as u32).collect(), &down, PairKind::MinSaddle, &mut pairs);
        self.graph_sweep((0..n as u32).rev().collect(), &up, PairKind::SaddleMax, &mut pairs);
        let (lo, hi) = (self.nodes[0], self.nodes[n - 1]);
        pairs.push(PersistencePair {
            birth: lo.vertex,
            death: hi.vertex,
            persistence: hi.value - lo.value,
            kind: PairKind::Essential,
        });
        sort_pairs(&mut pairs);
        pairs
    }

    fn graph_sweep(
        &self,
        sweep: Vec<u32>,
        earlier: &[Vec<u32>],
        kind: PairKind,
        out: &mut Vec<PersistencePair>,
    ) {
        let n = self.nodes.len();
        let mut position = vec![0u32; n];
        for (p, &v) in sweep.iter().enumerate() {
            position[v as usize] = p as u32;
        }
        let mut uf = UnionFind::new(n);
        let mut oldest: Vec<u32> = (0..n as u32).collect();
        for &u in &sweep {
            let mut roots: Vec<u32> = earlier[u as usize].iter().map(|&w| uf.find(w)).collect();
            roots.sort_unstable();
            roots.dedup();
            if roots.is_empty() {
                continue;
            }
            let elder = roots
                .iter()
                .map(|&r| oldest[r as usize])
                .min_by_key(|&x| position[x as usize])
                .unwrap();
            let saddle = self.nodes[u as usize];
            for &r in &roots {
                let leaf = oldest[r as usize];
                if leaf != elder {
                    let born = self.nodes[leaf as usize];
                    out.push(PersistencePair {
                        birth: born.vertex,
                        death: saddle.vertex,
                        persistence: (saddle.value - born.value).abs(),
                        kind,
                    });
                }
            }
            let mut root = u;
            for &r in &roots {
                root = uf.union(root, r);
            }
            oldest[root as usize] = elder;
        }
    }
}
