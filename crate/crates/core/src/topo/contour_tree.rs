use std::collections::VecDeque;

use super::merge_tree::MergeTree;
use super::{CriticalKind, CriticalPoint, SweepDirection, TopoError, NONE};
use crate::raster::Dims;

/// Arc between two critical nodes; `lower` precedes `upper` in the total order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContourArc {
    pub lower: u32,
    pub upper: u32,
}

/// Contour tree reduced to its critical nodes, with per-pixel arc membership.
///
/// Nodes are sorted by their position in the total order. Arcs are numbered
/// canonically by `(lower node order, upper node order)`; an arc's index is its
/// segment id.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourTree {
    pub(crate) dims: Dims,
    pub(crate) nodes: Vec<CriticalPoint>,
    pub(crate) arcs: Vec<ContourArc>,
    pub(crate) vertex_to_arc: Vec<u32>,
}

impl ContourTree {
    pub fn dims(&self) -> Dims {
        self.dims
    }
    pub fn nodes(&self) -> &[CriticalPoint] {
        &self.nodes
    }
    pub fn arcs(&self) -> &[ContourArc] {
        &self.arcs
    }
    pub fn vertex_to_arc(&self) -> &[u32] {
        &self.vertex_to_arc
    }

    /// Number of arcs incident to each node, split into (down, up).
    pub fn degrees(&self) -> Vec<(u32, u32)> {
        let mut deg = vec![(0u32, 0u32); self.nodes.len()];
        for a in &self.arcs {
            deg[a.lower as usize].1 += 1;
            deg[a.upper as usize].0 += 1;
        }
        deg
    }

    pub fn count_kind(&self, kind: CriticalKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    /// Pixels of every arc, in arc order.
    pub fn arc_pixels(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.arcs.len()];
        for (v, &a) in self.vertex_to_arc.iter().enumerate() {
            out[a as usize].push(v as u32);
        }
        out
    }

    pub(crate) fn from_parts(
        dims: Dims,
        mut nodes: Vec<CriticalPoint>,
        arcs: Vec<ContourArc>,
        assign: impl Fn(u32) -> u32,
    ) -> Self {
        // Sort nodes by order, then arcs canonically, and remap everything.
        let mut node_perm: Vec<u32> = (0..nodes.len() as u32).collect();
        node_perm.sort_unstable_by_key(|&i| nodes[i as usize].order);
        let mut node_new = vec![0u32; nodes.len()];
        for (new, &old) in node_perm.iter().enumerate() {
            node_new[old as usize] = new as u32;
        }
        let sorted_nodes: Vec<CriticalPoint> = node_perm.iter().map(|&i| nodes[i as usize]).collect();
        let mut arcs: Vec<(ContourArc, u32)> = arcs
            .into_iter()
            .enumerate()
            .map(|(i, a)| {
                (ContourArc { lower: node_new[a.lower as usize], upper: node_new[a.upper as usize] }, i as u32)
            })
            .collect();
        arcs.sort_unstable_by_key(|(a, _)| (a.lower, a.upper));
        let mut arc_new = vec![0u32; arcs.len()];
        for (new, (_, old)) in arcs.iter().enumerate() {
            arc_new[*old as usize] = new as u32;
        }
        nodes = sorted_nodes;
        let arcs: Vec<ContourArc> = arcs.into_iter().map(|(a, _)| a).collect();

        let mut deg = vec![(0u32, 0u32); nodes.len()];
        for a in &arcs {
            deg[a.lower as usize].1 += 1;
            deg[a.upper as usize].0 += 1;
        }
        for (node, &(down, up)) in nodes.iter_mut().zip(&deg) {
            node.kind = kind_from_degree(down, up);
        }
        let vertex_to_arc = (0..dims.len() as u32).map(|v| arc_new[assign(v) as usize]).collect();
        Self { dims, nodes, arcs, vertex_to_arc }
    }

    /// A one-arc tree over the whole grid, used for constant fields.
    pub fn single_arc(dims: Dims, low: CriticalPoint, high: CriticalPoint) -> Self {
        Self {
            dims,
            nodes: vec![low, high],
            arcs: vec![ContourArc { lower: 0, upper: 1 }],
            vertex_to_arc: vec![0; dims.len()],
        }
    }
}

pub(crate) fn kind_from_degree(down: u32, up: u32) -> CriticalKind {
    match (down, up) {
        (0, _) => CriticalKind::Minimum,
        (_, 0) => CriticalKind::Maximum,
        _ => CriticalKind::Saddle,
    }
}

/// Combines a join and a split tree into the contour tree by repeatedly
/// peeling leaves that are simultaneously leaves of one tree and regular in
/// the other.
pub fn combine_trees(join: &MergeTree, split: &MergeTree) -> Result<ContourTree, TopoError> {
    if join.direction() != SweepDirection::Join
        || split.direction() != SweepDirection::Split
        || join.dims() != split.dims()
        || !join.sweep_order().iter().eq(split.sweep_order().iter().rev())
    {
        return Err(TopoError::FieldMismatch);
    }
    let dims = join.dims();
    let n = dims.len();
    let order = join.sweep_order();
    let mut rank = vec![0u32; n];
    for (r, &v) in order.iter().enumerate() {
        rank[v as usize] = r as u32;
    }

    let edges = augmented_edges(join.parents(), split.parents());

    // CSR of upward neighbors, keyed by the lower endpoint.
    let mut up_start = vec![0u32; n + 1];
    let mut down_count = vec![0u32; n];
    for &(lo, hi) in &edges {
        up_start[lo as usize + 1] += 1;
        down_count[hi as usize] += 1;
    }
    for i in 0..n {
        up_start[i + 1] += up_start[i];
    }
    let mut fill = up_start.clone();
    let mut up_adj = vec![0u32; edges.len()];
    for &(lo, hi) in &edges {
        up_adj[fill[lo as usize] as usize] = hi;
        fill[lo as usize] += 1;
    }
    drop(edges);
    drop(fill);
    let up_count = |v: usize| up_start[v + 1] - up_start[v];
    let is_node = |v: usize| up_count(v) != 1 || down_count[v] != 1;

    let values = join_values(join, split, n);
    let mut node_of = vec![NONE; n];
    let mut nodes = Vec::new();
    let mut arcs: Vec<ContourArc> = Vec::new();
    let mut arc_of = vec![NONE; n];
    for &v in order {
        let vi = v as usize;
        if is_node(vi) {
            node_of[vi] = nodes.len() as u32;
            nodes.push(CriticalPoint {
                vertex: v,
                kind: kind_from_degree(down_count[vi], up_count(vi)),
                value: values[vi],
                order: rank[vi],
            });
        }
    }
    for &v in order {
        let vi = v as usize;
        let ups = &up_adj[up_start[vi] as usize..up_start[vi + 1] as usize];
        for &w in ups {
            let arc = if node_of[vi] != NONE {
                let a = arcs.len() as u32;
                arcs.push(ContourArc { lower: node_of[vi], upper: NONE });
                a
            } else {
                arc_of[vi]
            };
            if node_of[w as usize] != NONE {
                arcs[arc as usize].upper = node_of[w as usize];
            } else {
                arc_of[w as usize] = arc;
            }
        }
    }

    // A node's own pixel goes to its first up arc, or its first down arc at a
    // maximum (arcs compared canonically by endpoint order).
    let mut node_arc = vec![NONE; nodes.len()];
    let mut best = vec![(u32::MAX, u32::MAX); nodes.len()];
    let key = |a: &ContourArc| (nodes[a.lower as usize].order, nodes[a.upper as usize].order);
    for (i, a) in arcs.iter().enumerate() {
        let lo = a.lower as usize;
        if key(a) < best[lo] {
            node_arc[lo] = i as u32;
            best[lo] = key(a);
        }
    }
    for (i, a) in arcs.iter().enumerate() {
        let hi = a.upper as usize;
        if nodes[hi].kind == CriticalKind::Maximum && key(a) < best[hi] {
            node_arc[hi] = i as u32;
            best[hi] = key(a);
        }
    }

    Ok(ContourTree::from_parts(dims, nodes, arcs, |v| {
        let vi = v as usize;
        if node_of[vi] != NONE {
            node_arc[node_of[vi] as usize]
        } else {
            arc_of[vi]
        }
    }))
}

fn join_values(join: &MergeTree, split: &MergeTree, n: usize) -> Vec<f64> {
    // Values are carried on merge-tree nodes only; regular vertices are never
    // contour-tree nodes, so node values suffice.
    let mut values = vec![f64::NAN; n];
    for node in join.nodes().iter().chain(split.nodes()) {
        values[node.vertex as usize] = node.value;
    }
    values
}

/// Edges `(lower, upper)` of the augmented contour tree.
fn augmented_edges(jt_parent: &[u32], st_parent: &[u32]) -> Vec<(u32, u32)> {
    let n = jt_parent.len();
    let mut jt_parent = jt_parent.to_vec();
    let mut st_parent = st_parent.to_vec();
    // Children are tracked by count and index sum: once a vertex is down to a
    // single child, the sum is that child.
    let mut jt_children = vec![0u32; n];
    let mut jt_child_sum = vec![0u64; n];
    let mut st_children = vec![0u32; n];
    let mut st_child_sum = vec![0u64; n];
    for v in 0..n {
        if jt_parent[v] != NONE {
            jt_children[jt_parent[v] as usize] += 1;
            jt_child_sum[jt_parent[v] as usize] += v as u64;
        }
        if st_parent[v] != NONE {
            st_children[st_parent[v] as usize] += 1;
            st_child_sum[st_parent[v] as usize] += v as u64;
        }
    }

    let upper_leaf = |v: usize, jc: &[u32], sc: &[u32]| sc[v] == 0 && jc[v] == 1;
    let lower_leaf = |v: usize, jc: &[u32], sc: &[u32]| jc[v] == 0 && sc[v] == 1;

    let mut queued = vec![false; n];
    let mut queue = VecDeque::new();
    for v in 0..n {
        if upper_leaf(v, &jt_children, &st_children) || lower_leaf(v, &jt_children, &st_children) {
            queued[v] = true;
            queue.push_back(v as u32);
        }
    }

    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    while edges.len() + 1 < n {
        let x = queue.pop_front().expect("leaf queue exhausted before the tree was complete") as usize;
        let y;
        if upper_leaf(x, &jt_children, &st_children) {
            y = st_parent[x] as usize;
            edges.push((y as u32, x as u32));
            // Splice x out of the join tree.
            let child = jt_child_sum[x] as usize;
            let p = jt_parent[x];
            jt_parent[child] = p;
            if p != NONE {
                jt_child_sum[p as usize] = jt_child_sum[p as usize] - x as u64 + child as u64;
            }
            // Drop x from the split tree.
            st_children[y] -= 1;
            st_child_sum[y] -= x as u64;
        } else {
            debug_assert!(lower_leaf(x, &jt_children, &st_children));
            y = jt_parent[x] as usize;
            edges.push((x as u32, y as u32));
            let child = st_child_sum[x] as usize;
            let p = st_parent[x];
            st_parent[child] = p;
            if p != NONE {
                st_child_sum[p as usize] = st_child_sum[p as usize] - x as u64 + child as u64;
            }
            jt_children[y] -= 1;
            jt_child_sum[y] -= x as u64;
        }
        jt_children[x] = 0;
        st_children[x] = 0;
        if !queued[y] && (upper_leaf(y, &jt_children, &st_children) || lower_leaf(y, &jt_children, &st_children)) {
            queued[y] = true;
            queue.push_back(y as u32);
        }
    }
    edges
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::NormalizedField;
    use crate::topo::build_merge_tree;

    fn tree(w: usize, h: usize, v: &[f64]) -> ContourTree {
        let f = NormalizedField::from_values(w, h, v).unwrap();
        let jt = build_merge_tree(&f, SweepDirection::Join).unwrap();
        let st = build_merge_tree(&f, SweepDirection::Split).unwrap();
        combine_trees(&jt, &st).unwrap()
    }

    #[test]
    fn ramp_is_one_arc() {
        let ct = tree(4, 1, &[0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]);
        assert_eq!(ct.nodes().len(), 2);
        assert_eq!(ct.arcs(), &[ContourArc { lower: 0, upper: 1 }]);
        assert_eq!(ct.nodes()[0].kind, CriticalKind::Minimum);
        assert_eq!(ct.nodes()[1].kind, CriticalKind::Maximum);
    }

    #[test]
    fn five_sample_profile() {
        // Level-set components of a path are single points, so the contour
        // tree is the path itself with every extremum a node.
        let ct = tree(5, 1, &[0.0, 1.0, 0.2, 0.8, 0.4]);
        assert_eq!(ct.nodes().len(), 5);
        assert_eq!(ct.arcs().len(), 4);
        assert_eq!(ct.count_kind(CriticalKind::Minimum), 3);
        assert_eq!(ct.count_kind(CriticalKind::Maximum), 2);
        let mut edges: Vec<(u32, u32)> = ct
            .arcs()
            .iter()
            .map(|a| (ct.nodes()[a.lower as usize].vertex, ct.nodes()[a.upper as usize].vertex))
            .collect();
        edges.sort();
        assert_eq!(edges, vec![(0, 1), (2, 1), (2, 3), (4, 3)]);
        // Pixel 2 lies on an arc whose lower end is its own minimum.
        let arc = ct.arcs()[ct.vertex_to_arc()[2] as usize];
        assert_eq!(ct.nodes()[arc.lower as usize].vertex, 2);
    }

    #[test]
    fn mismatched_trees_rejected() {
        let a = NormalizedField::from_values(2, 2, &[0.0, 1.0, 2.0, 3.0]).unwrap();
        let b = NormalizedField::from_values(2, 2, &[3.0, 1.0, 2.0, 0.0]).unwrap();
        let jt = build_merge_tree(&a, SweepDirection::Join).unwrap();
        let st = build_merge_tree(&b, SweepDirection::Split).unwrap();
        assert_eq!(combine_trees(&jt, &st).unwrap_err(), TopoError::FieldMismatch);
        assert_eq!(combine_trees(&st, &jt).unwrap_err(), TopoError::FieldMismatch);
    }

    #[test]
    fn single_peak_matches_split_tree_plus_min_leaf() {
        #[rustfmt::skip]
        let v = [
            0.00, 0.10, 0.20, 0.25,
            0.12, 0.60, 0.70, 0.30,
            0.22, 0.65, 1.00, 0.35,
            0.25, 0.40, 0.45, 0.50,
        ];
        let ct = tree(4, 4, &v);
        assert_eq!(ct.nodes().len(), 2);
        assert_eq!(ct.nodes()[0].vertex, 0);
        assert_eq!(ct.nodes()[1].vertex, 10);
    }
}
