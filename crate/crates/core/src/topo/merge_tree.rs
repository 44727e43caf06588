use super::{neighbors, CriticalKind, SweepDirection, TopoError, VertexOrder, NONE};
use crate::raster::{Dims, NormalizedField};
use crate::union_find::UnionFind;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeNode {
    pub vertex: u32,
    pub value: f64,
    pub kind: CriticalKind,
    /// Number of components that meet at this vertex (0 for a leaf).
    pub merged: u32,
}

/// An arc from a node to the next node along the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MergeArc {
    pub child: u32,
    pub parent: u32,
}

/// A vertex at which two or more sweep components become one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeEvent {
    pub vertex: u32,
    pub value: f64,
    pub merged: u32,
}

/// Join (sublevel) or split (superlevel) tree of a field.
///
/// Besides the reduced node/arc structure the tree keeps the augmented parent
/// pointer of every vertex, which is what the contour-tree combination walks.
#[derive(Debug, Clone)]
pub struct MergeTree {
    direction: SweepDirection,
    dims: Dims,
    sweep: Vec<u32>,
    parent: Vec<u32>,
    nodes: Vec<MergeNode>,
    arcs: Vec<MergeArc>,
    vertex_to_arc: Vec<u32>,
}

impl MergeTree {
    pub fn direction(&self) -> SweepDirection {
        self.direction
    }
    pub fn dims(&self) -> Dims {
        self.dims
    }
    /// Vertices in sweep order: ascending `(f, index)` for a join tree,
    /// descending for a split tree.
    pub fn sweep_order(&self) -> &[u32] {
        &self.sweep
    }
    /// Augmented parent of every vertex; `None` at the root.
    pub fn parent_of(&self, vertex: u32) -> Option<u32> {
        Some(self.parent[vertex as usize]).filter(|&p| p != NONE)
    }
    pub(crate) fn parents(&self) -> &[u32] {
        &self.parent
    }
    /// Leaves, merge vertices and the root, in sweep order.
    pub fn nodes(&self) -> &[MergeNode] {
        &self.nodes
    }
    pub fn arcs(&self) -> &[MergeArc] {
        &self.arcs
    }
    pub fn vertex_to_arc(&self) -> &[u32] {
        &self.vertex_to_arc
    }
    pub fn root(&self) -> &MergeNode {
        self.nodes.last().expect("a merge tree has at least one node")
    }

    pub fn leaves(&self) -> impl Iterator<Item = &MergeNode> + '_ {
        self.nodes.iter().filter(|n| n.merged == 0)
    }

    pub fn merge_events(&self) -> Vec<MergeEvent> {
        self.nodes
            .iter()
            .filter(|n| n.merged >= 2)
            .map(|n| MergeEvent { vertex: n.vertex, value: n.value, merged: n.merged })
            .collect()
    }
}

/// Sweeps the field with a union-find over Freudenthal neighbors.
pub fn build_merge_tree(
    field: &NormalizedField,
    direction: SweepDirection,
) -> Result<MergeTree, TopoError> {
    if field.is_degenerate() || field.len() < 2 {
        return Err(TopoError::DegenerateField);
    }
    let mut sweep = VertexOrder::new(field).sorted;
    if direction == SweepDirection::Split {
        sweep.reverse();
    }
    Ok(sweep_tree(field, direction, sweep))
}

pub(crate) fn sweep_tree(
    field: &NormalizedField,
    direction: SweepDirection,
    sweep: Vec<u32>,
) -> MergeTree {
    let dims = field.dims();
    let n = field.len();
    let (leaf_kind, root_kind) = match direction {
        SweepDirection::Join => (CriticalKind::Minimum, CriticalKind::Maximum),
        SweepDirection::Split => (CriticalKind::Maximum, CriticalKind::Minimum),
    };

    let mut parent = vec![NONE; n];
    let mut vertex_to_arc = vec![NONE; n];
    let mut visited = vec![false; n];
    let mut uf = UnionFind::new(n);
    // Per union-find root: most recent vertex of the component and its open arc.
    let mut head = vec![NONE; n];
    let mut open_arc = vec![NONE; n];
    let mut nodes = Vec::new();
    let mut arcs: Vec<MergeArc> = Vec::new();
    let mut nbuf = [0usize; 6];
    let mut roots: Vec<u32> = Vec::with_capacity(6);

    for (step, &v) in sweep.iter().enumerate() {
        let vi = v as usize;
        roots.clear();
        let k = neighbors(dims, vi, &mut nbuf);
        for &u in &nbuf[..k] {
            if visited[u] {
                let r = uf.find(u as u32);
                if !roots.contains(&r) {
                    roots.push(r);
                }
            }
        }
        visited[vi] = true;
        let is_last = step + 1 == n;

        match roots.len() {
            0 => {
                let node = nodes.len() as u32;
                nodes.push(MergeNode { vertex: v, value: field.value(vi), kind: leaf_kind, merged: 0 });
                let arc = arcs.len() as u32;
                arcs.push(MergeArc { child: node, parent: NONE });
                vertex_to_arc[vi] = arc;
                head[vi] = v;
                open_arc[vi] = arc;
            }
            1 => {
                let r = roots[0] as usize;
                parent[head[r] as usize] = v;
                let arc = open_arc[r];
                vertex_to_arc[vi] = arc;
                let root = uf.union(r as u32, v) as usize;
                head[root] = v;
                open_arc[root] = arc;
                if is_last {
                    let node = nodes.len() as u32;
                    nodes.push(MergeNode { vertex: v, value: field.value(vi), kind: root_kind, merged: 1 });
                    arcs[arc as usize].parent = node;
                }
            }
            m => {
                let node = nodes.len() as u32;
                let kind = if is_last { root_kind } else { CriticalKind::Saddle };
                nodes.push(MergeNode { vertex: v, value: field.value(vi), kind, merged: m as u32 });
                let mut first_incoming = NONE;
                for &r in &roots {
                    let r = r as usize;
                    parent[head[r] as usize] = v;
                    let arc = open_arc[r];
                    arcs[arc as usize].parent = node;
                    first_incoming = first_incoming.min(arc);
                }
                let mut root = v;
                for &r in &roots {
                    root = uf.union(root, r);
                }
                let root = root as usize;
                head[root] = v;
                if is_last {
                    vertex_to_arc[vi] = first_incoming;
                } else {
                    let arc = arcs.len() as u32;
                    arcs.push(MergeArc { child: node, parent: NONE });
                    vertex_to_arc[vi] = arc;
                    open_arc[root] = arc;
                }
            }
        }
    }

    MergeTree { direction, dims, sweep, parent, nodes, arcs, vertex_to_arc }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(w: usize, h: usize, v: &[f64]) -> NormalizedField {
        NormalizedField::from_values(w, h, v).unwrap()
    }

    #[test]
    fn ramp_has_single_arc() {
        let f = field(4, 1, &[0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]);
        let jt = build_merge_tree(&f, SweepDirection::Join).unwrap();
        assert_eq!(jt.nodes().len(), 2);
        assert_eq!(jt.arcs(), &[MergeArc { child: 0, parent: 1 }]);
        assert_eq!(jt.nodes()[0].vertex, 0);
        assert_eq!(jt.root().vertex, 3);
        assert!(jt.vertex_to_arc().iter().all(|&a| a == 0));
        assert!(jt.merge_events().is_empty());
    }

    #[test]
    fn five_sample_join_tree() {
        let f = field(5, 1, &[0.0, 1.0, 0.2, 0.8, 0.4]);
        let jt = build_merge_tree(&f, SweepDirection::Join).unwrap();
        let leaves: Vec<u32> = jt.leaves().map(|n| n.vertex).collect();
        assert_eq!(leaves, vec![0, 2, 4]);
        let events: Vec<(u32, f64)> = jt.merge_events().iter().map(|e| (e.vertex, e.value)).collect();
        assert_eq!(events, vec![(3, 0.8), (1, 1.0)]);
        assert_eq!(jt.parent_of(2), Some(3));
        assert_eq!(jt.parent_of(4), Some(3));
        assert_eq!(jt.parent_of(3), Some(1));
        assert_eq!(jt.parent_of(0), Some(1));
        assert_eq!(jt.parent_of(1), None);
    }

    #[test]
    fn constant_field_is_degenerate() {
        let f = field(2, 2, &[3.0; 4]);
        assert_eq!(build_merge_tree(&f, SweepDirection::Join).unwrap_err(), TopoError::DegenerateField);
    }

    #[test]
    fn split_tree_mirrors_join_of_inverse() {
        let f = field(3, 3, &[0.3, 0.9, 0.1, 0.5, 0.2, 0.8, 0.7, 0.4, 0.6]);
        let st = build_merge_tree(&f, SweepDirection::Split).unwrap();
        let jt = build_merge_tree(&f.mirrored(), SweepDirection::Join).unwrap();
        let strip = |t: &MergeTree| -> Vec<(u32, u32)> { t.nodes().iter().map(|n| (n.vertex, n.merged)).collect() };
        assert_eq!(strip(&st), strip(&jt));
        assert_eq!(st.arcs(), jt.arcs());
        assert_eq!(st.vertex_to_arc(), jt.vertex_to_arc());
    }
}
