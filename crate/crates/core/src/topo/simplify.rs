//! Persistence-guided contour-tree simplification.
//!
//! Pairs are cancelled one at a time, always the globally least persistent
//! one still present, until every remaining non-essential pair reaches the
//! threshold. Cancelling a min-saddle pair collapses the whole sublevel
//! component of the minimum below its saddle into that saddle: nodes inside
//! disappear, arcs leaving the component upward are re-rooted at the saddle,
//! and saddles of other pairs that lay inside move to the cancelling saddle.
//! Max-saddle pairs are the mirror image. Pixel membership only ever merges,
//! so coarser levels are unions of finer segments by construction, and because
//! the cancellation order is global the result does not depend on which
//! intermediate thresholds were visited.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};

use super::contour_tree::{ContourArc, ContourTree};
use super::persistence::{PairKind, PersistencePair};
use super::{CriticalPoint, NONE};
use crate::raster::Dims;
use crate::union_find::UnionFind;

#[derive(Debug, Clone)]
struct Node {
    point: CriticalPoint,
    alive: bool,
    down: Vec<u32>,
    up: Vec<u32>,
}

#[derive(Debug, Clone, Copy)]
struct Arc {
    lower: u32,
    upper: u32,
    alive: bool,
}

#[derive(Debug, Clone, Copy)]
struct Pair {
    extremum: u32,
    saddle: u32,
    downward: bool,
    alive: bool,
    version: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Key {
    persistence: f64,
    span: u32,
    pair: u32,
    version: u32,
}

impl Eq for Key {}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.persistence
            .total_cmp(&other.persistence)
            .then(self.span.cmp(&other.span))
            .then(self.pair.cmp(&other.pair))
            .then(self.version.cmp(&other.version))
    }
}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Incremental simplifier; thresholds must be visited in increasing order.
#[derive(Debug, Clone)]
pub struct Simplifier {
    dims: Dims,
    nodes: Vec<Node>,
    arcs: Vec<Arc>,
    groups: UnionFind,
    group_arc: Vec<u32>,
    base_arc: Vec<u32>,
    pairs: Vec<Pair>,
    by_saddle: Vec<Vec<u32>>,
    by_extremum: Vec<u32>,
    heap: BinaryHeap<Reverse<Key>>,
    mark: Vec<u32>,
    epoch: u32,
    epsilon: f64,
}

impl Simplifier {
    /// `pairs` must be the persistence pairs of `tree`; essential pairs are
    /// ignored.
    pub fn new(tree: &ContourTree, pairs: &[PersistencePair]) -> Self {
        let mut nodes: Vec<Node> = tree
            .nodes()
            .iter()
            .map(|&point| Node { point, alive: true, down: Vec::new(), up: Vec::new() })
            .collect();
        let arcs: Vec<Arc> = tree
            .arcs()
            .iter()
            .enumerate()
            .map(|(i, a)| {
                nodes[a.lower as usize].up.push(i as u32);
                nodes[a.upper as usize].down.push(i as u32);
                Arc { lower: a.lower, upper: a.upper, alive: true }
            })
            .collect();
        let node_of: HashMap<u32, u32> =
            nodes.iter().enumerate().map(|(i, n)| (n.point.vertex, i as u32)).collect();

        let mut s = Self {
            dims: tree.dims(),
            groups: UnionFind::new(arcs.len()),
            group_arc: (0..arcs.len() as u32).collect(),
            base_arc: tree.vertex_to_arc().to_vec(),
            by_saddle: vec![Vec::new(); nodes.len()],
            by_extremum: vec![NONE; nodes.len()],
            mark: vec![0; nodes.len()],
            nodes,
            arcs,
            pairs: Vec::new(),
            heap: BinaryHeap::new(),
            epoch: 0,
            epsilon: 0.0,
        };
        for p in pairs.iter().filter(|p| !p.is_essential()) {
            let (Some(&extremum), Some(&saddle)) = (node_of.get(&p.birth), node_of.get(&p.death)) else {
                debug_assert!(false, "pair {p:?} does not reference tree nodes");
                continue;
            };
            let id = s.pairs.len() as u32;
            s.pairs.push(Pair {
                extremum,
                saddle,
                downward: p.kind == PairKind::MinSaddle,
                alive: true,
                version: 0,
            });
            s.by_saddle[saddle as usize].push(id);
            s.by_extremum[extremum as usize] = id;
            s.push_key(id);
        }
        s
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn key(&self, id: u32) -> Key {
        let p = self.pairs[id as usize];
        let (e, s) = (&self.nodes[p.extremum as usize].point, &self.nodes[p.saddle as usize].point);
        Key {
            persistence: (s.value - e.value).abs(),
            span: s.order.abs_diff(e.order),
            pair: id,
            version: p.version,
        }
    }

    fn push_key(&mut self, id: u32) {
        let key = self.key(id);
        self.heap.push(Reverse(key));
    }

    /// Cancels every pair with persistence below `epsilon`.
    pub fn advance(&mut self, epsilon: f64) -> &mut Self {
        assert!(epsilon >= self.epsilon, "thresholds must be visited in increasing order");
        self.epsilon = epsilon;
        while let Some(Reverse(top)) = self.heap.peek().copied() {
            if top.persistence >= epsilon {
                break;
            }
            self.heap.pop();
            let p = self.pairs[top.pair as usize];
            if p.alive && p.version == top.version {
                self.cancel(top.pair);
            }
        }
        self
    }

    fn cancel(&mut self, id: u32) {
        let Pair { extremum, saddle, downward, .. } = self.pairs[id as usize];
        self.pairs[id as usize].alive = false;
        let s_order = self.nodes[saddle as usize].point.order;
        let beyond = |order: u32| if downward { order < s_order } else { order > s_order };

        self.epoch += 1;
        let epoch = self.epoch;
        self.mark[extremum as usize] = epoch;
        let mut stack = vec![extremum];
        let mut component = vec![extremum];
        let mut internal = Vec::new();
        let mut into_saddle = Vec::new();
        let mut crossing = Vec::new();
        while let Some(y) = stack.pop() {
            let node = &self.nodes[y as usize];
            let (toward, away) = if downward { (&node.up, &node.down) } else { (&node.down, &node.up) };
            for &a in toward {
                let arc = self.arcs[a as usize];
                let b = if downward { arc.upper } else { arc.lower };
                if b == saddle {
                    into_saddle.push(a);
                } else if beyond(self.nodes[b as usize].point.order) {
                    internal.push(a);
                    if self.mark[b as usize] != epoch {
                        self.mark[b as usize] = epoch;
                        stack.push(b);
                        component.push(b);
                    }
                } else {
                    crossing.push(a);
                }
            }
            for &a in away {
                let arc = self.arcs[a as usize];
                let b = if downward { arc.lower } else { arc.upper };
                if self.mark[b as usize] != epoch {
                    self.mark[b as usize] = epoch;
                    stack.push(b);
                    component.push(b);
                }
            }
        }
        if into_saddle.len() != 1 {
            debug_assert!(false, "pair {id} does not die where recorded");
            return;
        }

        let saddle_vertex = self.nodes[saddle as usize].point.vertex;
        let before = self.group_of(self.base_arc[saddle_vertex as usize]);

        let removed: Vec<u32> = internal.iter().chain(&into_saddle).copied().collect();
        for &a in &removed {
            self.arcs[a as usize].alive = false;
        }
        let s_node = &mut self.nodes[saddle as usize];
        if downward {
            s_node.down.retain(|&a| a != into_saddle[0]);
        } else {
            s_node.up.retain(|&a| a != into_saddle[0]);
        }
        for &a in &crossing {
            if downward {
                self.arcs[a as usize].lower = saddle;
                self.nodes[saddle as usize].up.push(a);
            } else {
                self.arcs[a as usize].upper = saddle;
                self.nodes[saddle as usize].down.push(a);
            }
        }

        let target = if self.arcs[before as usize].alive { before } else { self.first_incident(saddle) };
        for &a in &removed {
            let root = self.groups.union(a, target);
            self.group_arc[root as usize] = target;
        }

        for &y in &component {
            let node = &mut self.nodes[y as usize];
            node.alive = false;
            node.up.clear();
            node.down.clear();
            let moved = std::mem::take(&mut self.by_saddle[y as usize]);
            for pid in moved {
                if !self.pairs[pid as usize].alive {
                    continue;
                }
                self.pairs[pid as usize].saddle = saddle;
                self.pairs[pid as usize].version += 1;
                self.by_saddle[saddle as usize].push(pid);
                self.push_key(pid);
            }
            let own = self.by_extremum[y as usize];
            if own != NONE && own != id && self.pairs[own as usize].alive {
                debug_assert!(false, "extremum of a live pair swallowed by a cancellation");
                self.pairs[own as usize].alive = false;
            }
        }

        let node = &self.nodes[saddle as usize];
        if node.down.len() == 1 && node.up.len() == 1 {
            self.contract(saddle);
        }
    }

    fn group_of(&mut self, arc: u32) -> u32 {
        let root = self.groups.find(arc);
        self.group_arc[root as usize]
    }

    /// Smallest up arc of `node` (canonically), else its smallest down arc.
    fn first_incident(&self, node: u32) -> u32 {
        let n = &self.nodes[node as usize];
        let key = |a: &&u32| {
            let arc = self.arcs[**a as usize];
            (self.nodes[arc.lower as usize].point.order, self.nodes[arc.upper as usize].point.order)
        };
        n.up.iter().min_by_key(key).or_else(|| n.down.iter().min_by_key(key)).copied().expect("saddle keeps an arc")
    }

    /// Replaces a node with one down and one up arc by a single arc.
    fn contract(&mut self, node: u32) {
        let (a, b) = (self.nodes[node as usize].down[0], self.nodes[node as usize].up[0]);
        let (lower, upper) = (self.arcs[a as usize].lower, self.arcs[b as usize].upper);
        let merged = self.arcs.len() as u32;
        self.arcs.push(Arc { lower, upper, alive: true });
        self.arcs[a as usize].alive = false;
        self.arcs[b as usize].alive = false;
        let g = self.groups.push();
        debug_assert_eq!(g, merged);
        self.group_arc.push(merged);
        let root = self.groups.union(a, merged);
        let root = self.groups.union(root, b);
        self.group_arc[root as usize] = merged;
        for x in self.nodes[lower as usize].up.iter_mut().filter(|x| **x == a) {
            *x = merged;
        }
        for x in self.nodes[upper as usize].down.iter_mut().filter(|x| **x == b) {
            *x = merged;
        }
        let n = &mut self.nodes[node as usize];
        n.alive = false;
        n.up.clear();
        n.down.clear();
    }

    /// Per base arc, the live arc it currently belongs to.
    fn base_to_live(&mut self) -> Vec<u32> {
        (0..self.arcs.len() as u32).map(|a| self.group_of(a)).collect()
    }

    pub fn live_node_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.alive).count()
    }

    /// Segment id of every pixel at the current threshold, numbered like the
    /// arcs of [`Simplifier::tree`]; also returns the segment count.
    pub fn segment_ids(&mut self) -> (Vec<u32>, usize) {
        let tree = self.tree_without_pixels();
        let live = self.base_to_live();
        let ids = self.base_arc.iter().map(|&a| tree.1[live[a as usize] as usize]).collect();
        (ids, tree.0.len())
    }

    /// Live arcs in canonical order plus a map from arc id to canonical index.
    fn tree_without_pixels(&self) -> (Vec<ContourArc>, Vec<u32>) {
        let mut live: Vec<u32> =
            (0..self.arcs.len() as u32).filter(|&a| self.arcs[a as usize].alive).collect();
        let order = |n: u32| self.nodes[n as usize].point.order;
        live.sort_unstable_by_key(|&a| {
            let arc = self.arcs[a as usize];
            (order(arc.lower), order(arc.upper))
        });
        let mut index = vec![NONE; self.arcs.len()];
        for (i, &a) in live.iter().enumerate() {
            index[a as usize] = i as u32;
        }
        let arcs = live
            .iter()
            .map(|&a| ContourArc { lower: self.arcs[a as usize].lower, upper: self.arcs[a as usize].upper })
            .collect();
        (arcs, index)
    }

    /// The simplified tree at the current threshold.
    pub fn tree(&mut self) -> ContourTree {
        let mut node_index = vec![NONE; self.nodes.len()];
        let mut nodes = Vec::new();
        for (i, n) in self.nodes.iter().enumerate().filter(|(_, n)| n.alive) {
            node_index[i] = nodes.len() as u32;
            nodes.push(n.point);
        }
        let live = self.base_to_live();
        let mut arc_index = vec![NONE; self.arcs.len()];
        let mut arcs = Vec::new();
        for (i, a) in self.arcs.iter().enumerate().filter(|(_, a)| a.alive) {
            arc_index[i] = arcs.len() as u32;
            arcs.push(ContourArc { lower: node_index[a.lower as usize], upper: node_index[a.upper as usize] });
        }
        let base = &self.base_arc;
        ContourTree::from_parts(self.dims, nodes, arcs, |v| arc_index[live[base[v as usize] as usize] as usize])
    }
}

/// Removes every non-essential pair with persistence below `epsilon`.
/// `epsilon = 0` returns the input unchanged.
pub fn simplify_tree(tree: &ContourTree, pairs: &[PersistencePair], epsilon: f64) -> ContourTree {
    Simplifier::new(tree, pairs).advance(epsilon).tree()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::NormalizedField;
    use crate::topo::{CriticalKind, TopologyBundle};

    fn bundle(w: usize, h: usize, v: &[f64]) -> TopologyBundle {
        TopologyBundle::compute(&NormalizedField::from_values(w, h, v).unwrap()).unwrap()
    }

    #[test]
    fn zero_threshold_is_identity() {
        let b = bundle(4, 3, &[0.5, 0.1, 0.9, 0.3, 0.7, 0.2, 0.8, 0.4, 0.6, 0.05, 1.0, 0.35]);
        assert_eq!(simplify_tree(&b.contour, &b.pairs, 0.0), b.contour);
    }

    #[test]
    fn unit_threshold_leaves_one_arc() {
        let b = bundle(4, 3, &[0.5, 0.1, 0.9, 0.3, 0.7, 0.2, 0.8, 0.4, 0.6, 0.05, 1.0, 0.35]);
        let t = simplify_tree(&b.contour, &b.pairs, 1.0);
        assert_eq!(t.arcs().len(), 1);
        assert_eq!(t.nodes().len(), 2);
        assert_eq!(t.nodes()[0].value, 0.0);
        assert_eq!(t.nodes()[1].value, 1.0);
        assert!(t.vertex_to_arc().iter().all(|&a| a == 0));
    }

    #[test]
    fn five_sample_profile_at_point_seven() {
        // Pairs below 0.7: the 0.4 basin (0.4) and the 0.8 peak (0.6). The
        // 0.2 basin persists 0.8 and survives.
        let b = bundle(5, 1, &[0.0, 1.0, 0.2, 0.8, 0.4]);
        let t = simplify_tree(&b.contour, &b.pairs, 0.7);
        let verts: Vec<u32> = t.nodes().iter().map(|n| n.vertex).collect();
        assert_eq!(verts, vec![0, 2, 1]);
        assert_eq!(t.arcs().len(), 2);
        assert_eq!(t.count_kind(CriticalKind::Minimum), 2);
        // Pixels 3 and 4 joined the arc of the surviving 0.2 basin.
        assert_eq!(t.vertex_to_arc()[3], t.vertex_to_arc()[2]);
        assert_eq!(t.vertex_to_arc()[4], t.vertex_to_arc()[2]);
        let t = simplify_tree(&b.contour, &b.pairs, 0.9);
        assert_eq!(t.arcs().len(), 1);
    }

    #[test]
    fn staged_thresholds_match_direct() {
        let v: Vec<f64> = (0..64).map(|i| ((i * 37 % 64) as f64 * 0.731).sin()).collect();
        let b = bundle(8, 8, &v);
        let mut staged = Simplifier::new(&b.contour, &b.pairs);
        for eps in [0.01, 0.05, 0.1, 0.3] {
            let direct = simplify_tree(&b.contour, &b.pairs, eps);
            assert_eq!(staged.advance(eps).tree(), direct, "eps {eps}");
        }
    }
}
