//! Elevation-guided region growing: point BFS, polygon fill and polygon BFS.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Dims, NormalizedField, Pixel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectError {
    #[error("pixel ({x}, {y}) is outside the {dims} grid")]
    OutOfBounds { x: i64, y: i64, dims: Dims },
    #[error("a polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("tolerance must be finite and non-negative, got {0}")]
    BadTolerance(f64),
}

impl SelectError {
    pub fn name(&self) -> &'static str {
        match self {
            SelectError::OutOfBounds { .. } => "OutOfBounds",
            SelectError::TooFewVertices(_) => "TooFewVertices",
            SelectError::BadTolerance(_) => "BadTolerance",
        }
    }
}

/// Sorted, duplicate-free pixel indices of one grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelSet {
    dims: Dims,
    indices: Vec<u32>,
}

impl PixelSet {
    pub fn empty(dims: Dims) -> Self {
        Self { dims, indices: Vec::new() }
    }

    pub fn full(dims: Dims) -> Self {
        Self { dims, indices: (0..dims.len() as u32).collect() }
    }

    /// `indices` must already be strictly increasing and in bounds.
    pub fn from_sorted(dims: Dims, indices: Vec<u32>) -> Self {
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        debug_assert!(indices.last().map_or(true, |&i| (i as usize) < dims.len()));
        Self { dims, indices }
    }

    pub fn from_mask(dims: Dims, mask: &[bool]) -> Self {
        let indices = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i as u32).collect();
        Self { dims, indices }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, index: u32) -> bool {
        self.indices.binary_search(&index).is_ok()
    }

    pub fn to_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.dims.len()];
        for &i in &self.indices {
            mask[i as usize] = true;
        }
        mask
    }

    pub fn is_subset_of(&self, other: &PixelSet) -> bool {
        self.indices.iter().all(|&i| other.contains(i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// Water flows down: each step may rise by at most the tolerance.
    Downstream,
    /// Dry ground extends up: each step may drop by at most the tolerance.
    Upstream,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(i64, i64)] {
        const FOUR: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
        const EIGHT: [(i64, i64); 8] = [(-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (1, -1), (-1, 1), (1, 1)];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

#[inline]
fn step_allowed(direction: Direction, from: f64, to: f64, tolerance: f64) -> bool {
    match direction {
        Direction::Downstream => to <= from + tolerance,
        Direction::Upstream => to >= from - tolerance,
    }
}

fn check_tolerance(tolerance: f64) -> Result<(), SelectError> {
    if tolerance.is_finite() && tolerance >= 0.0 {
        Ok(())
    } else {
        Err(SelectError::BadTolerance(tolerance))
    }
}

fn grow(
    field: &NormalizedField,
    seeds: impl IntoIterator<Item = usize>,
    mut selected: Vec<bool>,
    direction: Direction,
    tolerance: f64,
    connectivity: Connectivity,
) -> PixelSet {
    let dims = field.dims();
    let f = field.values();
    let mut queue: VecDeque<usize> = VecDeque::new();
    for s in seeds {
        selected[s] = true;
        queue.push_back(s);
    }
    while let Some(i) = queue.pop_front() {
        let (c, r) = dims.coords(i);
        for &(dc, dr) in connectivity.offsets() {
            let (nc, nr) = (c as i64 + dc, r as i64 + dr);
            if !dims.contains(nc, nr) {
                continue;
            }
            let j = dims.index(nc as usize, nr as usize);
            if !selected[j] && step_allowed(direction, f[i], f[j], tolerance) {
                selected[j] = true;
                queue.push_back(j);
            }
        }
    }
    PixelSet::from_mask(dims, &selected)
}

/// Pixels reachable from `seed` by steps obeying the monotone rule.
pub fn bfs_select(
    field: &NormalizedField,
    seed: Pixel,
    direction: Direction,
    tolerance: f64,
    connectivity: Connectivity,
) -> Result<PixelSet, SelectError> {
    check_tolerance(tolerance)?;
    let dims = field.dims();
    let start = seed
        .index_in(dims)
        .ok_or(SelectError::OutOfBounds { x: seed.x as i64, y: seed.y as i64, dims })?;
    Ok(grow(field, [start], vec![false; dims.len()], direction, tolerance, connectivity))
}

/// Even-odd fill of a polygon given in pixel space, where pixel `(c, r)`
/// covers `[c, c + 1) x [r, r + 1)` and is kept when its center is inside.
pub fn rasterize_polygon(vertices: &[[f64; 2]], dims: Dims) -> Result<PixelSet, SelectError> {
    if vertices.len() < 3 {
        return Err(SelectError::TooFewVertices(vertices.len()));
    }
    let mut mask = vec![false; dims.len()];
    let mut crossings = Vec::new();
    for r in 0..dims.height {
        let y = r as f64 + 0.5;
        crossings.clear();
        for k in 0..vertices.len() {
            let [x0, y0] = vertices[k];
            let [x1, y1] = vertices[(k + 1) % vertices.len()];
            // Half-open in y so shared vertices count once.
            if (y0 > y) != (y1 > y) {
                crossings.push(x0 + (y - y0) * (x1 - x0) / (y1 - y0));
            }
        }
        crossings.sort_by(f64::total_cmp);
        for span in crossings.chunks_exact(2) {
            // Centers c + 0.5 in [span[0], span[1]).
            let first = (span[0] - 0.5).ceil().max(0.0);
            let last = (span[1] - 0.5).ceil() - 1.0;
            let last = last.min(dims.width as f64 - 1.0);
            if last < first {
                continue;
            }
            for c in first as usize..=last as usize {
                let i = dims.index(c, r);
                mask[i] = !mask[i];
            }
        }
    }
    Ok(PixelSet::from_mask(dims, &mask))
}

/// Polygon fill plus a multi-source BFS from the fill's boundary pixels,
/// those with a neighbor (under `connectivity`) outside the fill.
pub fn polygon_bfs_select(
    field: &NormalizedField,
    vertices: &[[f64; 2]],
    direction: Direction,
    tolerance: f64,
    connectivity: Connectivity,
) -> Result<PixelSet, SelectError> {
    check_tolerance(tolerance)?;
    let dims = field.dims();
    let fill = rasterize_polygon(vertices, dims)?.to_mask();
    let boundary: Vec<usize> = (0..dims.len())
        .filter(|&i| {
            if !fill[i] {
                return false;
            }
            let (c, r) = dims.coords(i);
            connectivity.offsets().iter().any(|&(dc, dr)| {
                let (nc, nr) = (c as i64 + dc, r as i64 + dr);
                dims.contains(nc, nr) && !fill[dims.index(nc as usize, nr as usize)]
            })
        })
        .collect();
    Ok(grow(field, boundary, fill, direction, tolerance, connectivity))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bowl3() -> NormalizedField {
        NormalizedField::from_values(3, 3, &[0.1, 0.2, 0.3, 0.2, 0.5, 0.2, 0.3, 0.2, 0.1]).unwrap()
    }

    #[test]
    fn center_seed_downstream() {
        let s = bfs_select(&bowl3(), Pixel::new(1, 1), Direction::Downstream, 0.0, Connectivity::Four).unwrap();
        assert_eq!(s.indices(), &[0, 1, 3, 4, 5, 7, 8]);
    }

    #[test]
    fn corner_minimum_stays_put() {
        let s = bfs_select(&bowl3(), Pixel::new(0, 0), Direction::Downstream, 0.0, Connectivity::Four).unwrap();
        assert_eq!(s.indices(), &[0]);
        let err = bfs_select(&bowl3(), Pixel::new(3, 0), Direction::Downstream, 0.0, Connectivity::Four);
        assert_eq!(err.unwrap_err().name(), "OutOfBounds");
    }

    #[test]
    fn flat_field_floods_everything() {
        let f = NormalizedField::from_values(4, 3, &[0.0; 12]).unwrap();
        for d in [Direction::Downstream, Direction::Upstream] {
            let s = bfs_select(&f, Pixel::new(2, 1), d, 0.0, Connectivity::Four).unwrap();
            assert_eq!(s.len(), 12);
        }
    }

    #[test]
    fn eight_connectivity_crosses_corners() {
        let f = NormalizedField::from_values(2, 2, &[0.0, 1.0, 1.0, 0.0]).unwrap();
        let four = bfs_select(&f, Pixel::new(0, 0), Direction::Downstream, 0.0, Connectivity::Four).unwrap();
        let eight = bfs_select(&f, Pixel::new(0, 0), Direction::Downstream, 0.0, Connectivity::Eight).unwrap();
        assert_eq!(four.indices(), &[0]);
        assert_eq!(eight.indices(), &[0, 3]);
    }

    #[test]
    fn polygon_fills() {
        let dims = Dims::new(5, 5);
        let full = rasterize_polygon(&[[0.0, 0.0], [5.0, 0.0], [5.0, 5.0], [0.0, 5.0]], dims).unwrap();
        assert_eq!(full.len(), 25);
        let flat = rasterize_polygon(&[[0.0, 0.0], [2.0, 2.0], [4.0, 4.0]], dims).unwrap();
        assert!(flat.is_empty());
        let tri = rasterize_polygon(&[[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]], dims).unwrap();
        // Center (c + 0.5, r + 0.5) inside x + y < 4.
        let want: Vec<u32> =
            (0..25u32).filter(|i| (i % 5) as f64 + 0.5 + (i / 5) as f64 + 0.5 < 4.0).collect();
        assert_eq!(tri.indices(), &want[..]);
        assert_eq!(rasterize_polygon(&[[0.0, 0.0], [1.0, 1.0]], dims).unwrap_err().name(), "TooFewVertices");
    }

    #[test]
    fn polygon_bfs_contains_fill() {
        let f = bowl3();
        let poly = [[0.9, 0.9], [2.1, 0.9], [2.1, 2.1], [0.9, 2.1]];
        let fill = rasterize_polygon(&poly, f.dims()).unwrap();
        assert_eq!(fill.indices(), &[4]);
        let s = polygon_bfs_select(&f, &poly, Direction::Downstream, 0.0, Connectivity::Four).unwrap();
        assert!(fill.is_subset_of(&s));
        assert_eq!(s.indices(), &[0, 1, 3, 4, 5, 7, 8]);
    }
}
