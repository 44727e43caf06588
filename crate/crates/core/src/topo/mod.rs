//! Merge trees, contour trees, persistence pairs and the multiscale
//! contour-tree segmentation.
//!
//! The grid is triangulated with the Freudenthal scheme: each pixel touches
//! its four axis neighbors plus the `(+1, +1)` and `(-1, -1)` diagonals. All
//! comparisons use the total order `(f, pixel index)`, so every critical point
//! is well defined even on plateaus.

mod contour_tree;
mod merge_tree;
mod persistence;
mod segmentation;
mod simplify;

pub use contour_tree::{combine_trees, ContourArc, ContourTree};
pub use merge_tree::{build_merge_tree, MergeArc, MergeEvent, MergeNode, MergeTree};
pub use persistence::{compute_persistence, PairKind, PersistencePair};
pub use segmentation::{
    build_multiscale, contour_tree_or_flat, segment_borders, segment_field, segment_pixels, MultiScaleSegmentation,
    validate_thresholds, SegmentationMap, DEFAULT_THRESHOLDS,
};
pub use simplify::{simplify_tree, Simplifier};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Dims, NormalizedField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopoError {
    #[error("field is constant; no critical structure to compute")]
    DegenerateField,
    #[error("trees or maps were built over different fields")]
    FieldMismatch,
    #[error("thresholds must start at 0, increase strictly and stay within [0, 1]: {0:?}")]
    BadThresholds(Vec<f64>),
    #[error("pixel ({x}, {y}) is outside the {dims} grid")]
    OutOfBounds { x: i64, y: i64, dims: Dims },
    #[error("segmentation payload is malformed: {0}")]
    Parse(String),
}

impl TopoError {
    pub fn name(&self) -> &'static str {
        match self {
            TopoError::DegenerateField => "DegenerateField",
            TopoError::FieldMismatch => "FieldMismatch",
            TopoError::BadThresholds(_) => "BadThresholds",
            TopoError::OutOfBounds { .. } => "OutOfBounds",
            TopoError::Parse(_) => "ParseError",
        }
    }
}

pub(crate) const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CriticalKind {
    Minimum,
    Maximum,
    Saddle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalPoint {
    pub vertex: u32,
    pub kind: CriticalKind,
    pub value: f64,
    /// Position of `vertex` in the `(f, index)` total order.
    pub order: u32,
}

/// Vertices sorted by `(f, index)` and the inverse permutation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct VertexOrder {
    pub sorted: Vec<u32>,
    pub rank: Vec<u32>,
}

impl VertexOrder {
    pub fn new(field: &NormalizedField) -> Self {
        let f = field.values();
        let mut sorted: Vec<u32> = (0..f.len() as u32).collect();
        sorted.sort_unstable_by(|&a, &b| {
            f[a as usize].total_cmp(&f[b as usize]).then(a.cmp(&b))
        });
        let mut rank = vec![0u32; f.len()];
        for (r, &v) in sorted.iter().enumerate() {
            rank[v as usize] = r as u32;
        }
        Self { sorted, rank }
    }
}

/// Freudenthal neighbors of `index`, written into `out`; returns the count.
#[inline]
pub(crate) fn neighbors(dims: Dims, index: usize, out: &mut [usize; 6]) -> usize {
    let (w, h) = (dims.width, dims.height);
    let (c, r) = (index % w, index / w);
    let mut n = 0;
    if c > 0 {
        out[n] = index - 1;
        n += 1;
    }
    if c + 1 < w {
        out[n] = index + 1;
        n += 1;
    }
    if r > 0 {
        out[n] = index - w;
        n += 1;
        if c > 0 {
            out[n] = index - w - 1;
            n += 1;
        }
    }
    if r + 1 < h {
        out[n] = index + w;
        n += 1;
        if c + 1 < w {
            out[n] = index + w + 1;
            n += 1;
        }
    }
    n
}

/// Join tree, split tree, contour tree and persistence pairs of one field.
#[derive(Debug, Clone)]
pub struct TopologyBundle {
    pub join: MergeTree,
    pub split: MergeTree,
    pub contour: ContourTree,
    pub pairs: Vec<PersistencePair>,
}

impl TopologyBundle {
    pub fn compute(field: &NormalizedField) -> Result<Self, TopoError> {
        let join = build_merge_tree(field, SweepDirection::Join)?;
        let split = build_merge_tree(field, SweepDirection::Split)?;
        let contour = combine_trees(&join, &split)?;
        let pairs = compute_persistence(&join, &split)?;
        Ok(Self { join, split, contour, pairs })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SweepDirection {
    /// Sublevel sets, swept upward from the minima.
    Join,
    /// Superlevel sets, swept downward from the maxima.
    Split,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn freudenthal_neighborhood() {
        let dims = Dims::new(3, 3);
        let mut buf = [0; 6];
        let n = neighbors(dims, 4, &mut buf);
        let mut got = buf[..n].to_vec();
        got.sort();
        assert_eq!(got, vec![0, 1, 3, 5, 7, 8]);
        let n = neighbors(dims, 0, &mut buf);
        let mut got = buf[..n].to_vec();
        got.sort();
        assert_eq!(got, vec![1, 3, 4]);
        let n = neighbors(dims, 2, &mut buf);
        let mut got = buf[..n].to_vec();
        got.sort();
        assert_eq!(got, vec![1, 5]);
    }

    #[test]
    fn order_breaks_ties_by_index() {
        let f = NormalizedField::from_values(4, 1, &[1.0, 0.0, 1.0, 0.0]).unwrap();
        let order = VertexOrder::new(&f);
        assert_eq!(order.sorted, vec![1, 3, 0, 2]);
        assert_eq!(order.rank, vec![2, 0, 3, 1]);
    }
}
