//! Per-pixel segment ids at a ladder of persistence thresholds.

use serde::{Deserialize, Serialize};

use super::contour_tree::ContourTree;
use super::simplify::Simplifier;
use super::{neighbors, CriticalKind, CriticalPoint, TopoError, TopologyBundle, NONE};
use crate::raster::{Dims, NormalizedField, Pixel};
use crate::select::PixelSet;

/// Logarithmic ladder used by the annotation tool.
pub const DEFAULT_THRESHOLDS: [f64; 6] = [0.0, 0.01, 0.02, 0.04, 0.08, 0.16];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationMap {
    pub epsilon: f64,
    pub dims: Dims,
    /// Row-major arc id of every pixel.
    pub segment_ids: Vec<u32>,
    pub segment_count: u32,
}

impl SegmentationMap {
    /// Row-major little-endian `u32` ids.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.segment_ids.iter().flat_map(|id| id.to_le_bytes()).collect()
    }

    pub fn manifest(&self) -> String {
        format!(
            "epsilon {}\nsegment_count {}\nwidth {}\nheight {}\n",
            self.epsilon, self.segment_count, self.dims.width, self.dims.height
        )
    }

    /// Splits every segment into its pieces that are connected under the
    /// Freudenthal neighborhood. Arc pixel sets are not always connected:
    /// a contour band can cross triangles none of whose corners lie in the
    /// arc's value range. Pieces are numbered by their smallest pixel index,
    /// and nesting across levels is preserved because every connected fine
    /// piece lies inside one connected coarse piece.
    pub fn connected_components(&self) -> SegmentationMap {
        let n = self.segment_ids.len();
        let mut out = vec![NONE; n];
        let mut next = 0u32;
        let mut stack = Vec::new();
        let mut buf = [0usize; 6];
        for start in 0..n {
            if out[start] != NONE {
                continue;
            }
            let id = self.segment_ids[start];
            out[start] = next;
            stack.push(start);
            while let Some(i) = stack.pop() {
                let k = neighbors(self.dims, i, &mut buf);
                for &j in &buf[..k] {
                    if out[j] == NONE && self.segment_ids[j] == id {
                        out[j] = next;
                        stack.push(j);
                    }
                }
            }
            next += 1;
        }
        SegmentationMap { epsilon: self.epsilon, dims: self.dims, segment_ids: out, segment_count: next }
    }

    /// Inverse of [`SegmentationMap::to_bytes`] plus [`SegmentationMap::manifest`].
    pub fn from_parts(bytes: &[u8], manifest: &str) -> Result<Self, TopoError> {
        let mut epsilon = None;
        let mut count = None;
        let mut width = None;
        let mut height = None;
        for line in manifest.lines().filter(|l| !l.trim().is_empty()) {
            let (key, value) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| TopoError::Parse(format!("bad manifest line {line:?}")))?;
            let value = value.trim();
            let bad = |_| TopoError::Parse(format!("bad value for {key}: {value:?}"));
            match key {
                "epsilon" => epsilon = Some(value.parse::<f64>().map_err(|e| bad(e.to_string()))?),
                "segment_count" => count = Some(value.parse::<u32>().map_err(|e| bad(e.to_string()))?),
                "width" => width = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "height" => height = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                other => return Err(TopoError::Parse(format!("unknown manifest key {other:?}"))),
            }
        }
        let missing = |k: &str| TopoError::Parse(format!("manifest lacks {k}"));
        let dims = Dims::new(width.ok_or_else(|| missing("width"))?, height.ok_or_else(|| missing("height"))?);
        let segment_count = count.ok_or_else(|| missing("segment_count"))?;
        if bytes.len() != dims.len() * 4 {
            return Err(TopoError::Parse(format!("expected {} bytes, found {}", dims.len() * 4, bytes.len())));
        }
        let segment_ids: Vec<u32> =
            bytes.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        if let Some(bad) = segment_ids.iter().find(|&&id| id >= segment_count) {
            return Err(TopoError::Parse(format!("segment id {bad} out of range")));
        }
        Ok(Self { epsilon: epsilon.ok_or_else(|| missing("epsilon"))?, dims, segment_ids, segment_count })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiScaleSegmentation {
    pub levels: Vec<SegmentationMap>,
}

impl MultiScaleSegmentation {
    pub fn thresholds(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.epsilon).collect()
    }

    pub fn level(&self, index: usize) -> Option<&SegmentationMap> {
        self.levels.get(index)
    }
}

/// Segment ids are the tree's canonical arc indices.
pub fn segment_field(tree: &ContourTree, field: &NormalizedField) -> Result<SegmentationMap, TopoError> {
    if tree.dims() != field.dims() {
        return Err(TopoError::FieldMismatch);
    }
    Ok(SegmentationMap {
        epsilon: 0.0,
        dims: tree.dims(),
        segment_ids: tree.vertex_to_arc().to_vec(),
        segment_count: tree.arcs().len() as u32,
    })
}

/// First value 0, strictly increasing, within `[0, 1]`.
pub fn validate_thresholds(thresholds: &[f64]) -> Result<(), TopoError> {
    let ok = thresholds.first() == Some(&0.0)
        && thresholds.windows(2).all(|w| w[0] < w[1])
        && thresholds.iter().all(|t| t.is_finite() && (0.0..=1.0).contains(t));
    if ok {
        Ok(())
    } else {
        Err(TopoError::BadThresholds(thresholds.to_vec()))
    }
}

/// Simplifies one contour tree through the thresholds in order and records
/// the pixel assignment at each level.
pub fn build_multiscale(field: &NormalizedField, thresholds: &[f64]) -> Result<MultiScaleSegmentation, TopoError> {
    validate_thresholds(thresholds)?;
    if field.is_degenerate() {
        let dims = field.dims();
        let levels = thresholds
            .iter()
            .map(|&epsilon| SegmentationMap { epsilon, dims, segment_ids: vec![0; dims.len()], segment_count: 1 })
            .collect();
        return Ok(MultiScaleSegmentation { levels });
    }
    let bundle = TopologyBundle::compute(field)?;
    let mut simplifier = Simplifier::new(&bundle.contour, &bundle.pairs);
    let mut levels = Vec::with_capacity(thresholds.len());
    for &epsilon in thresholds {
        let (segment_ids, count) = simplifier.advance(epsilon).segment_ids();
        levels.push(SegmentationMap { epsilon, dims: field.dims(), segment_ids, segment_count: count as u32 });
    }
    Ok(MultiScaleSegmentation { levels })
}

/// Contour tree of a field, or a single arc for a constant one.
pub fn contour_tree_or_flat(field: &NormalizedField) -> Result<ContourTree, TopoError> {
    if !field.is_degenerate() {
        return Ok(TopologyBundle::compute(field)?.contour);
    }
    let last = field.len() as u32 - 1;
    let point = |vertex, kind, order| CriticalPoint { vertex, kind, value: field.value(vertex as usize), order };
    Ok(ContourTree::single_arc(
        field.dims(),
        point(0, CriticalKind::Minimum, 0),
        point(last, CriticalKind::Maximum, last),
    ))
}

/// Every pixel sharing the segment of `pixel`.
pub fn segment_pixels(map: &SegmentationMap, pixel: Pixel) -> Result<PixelSet, TopoError> {
    let index = pixel.index_in(map.dims).ok_or(TopoError::OutOfBounds {
        x: pixel.x as i64,
        y: pixel.y as i64,
        dims: map.dims,
    })?;
    let id = map.segment_ids[index];
    let members = map.segment_ids.iter().enumerate().filter(|(_, &s)| s == id).map(|(i, _)| i as u32).collect();
    Ok(PixelSet::from_sorted(map.dims, members))
}

/// True where any 4-neighbor lies in another segment.
pub fn segment_borders(map: &SegmentationMap) -> Vec<bool> {
    let (w, h) = (map.dims.width, map.dims.height);
    let ids = &map.segment_ids;
    let mut out = vec![false; ids.len()];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let differs = |j: usize| ids[j] != ids[i];
            out[i] = (c > 0 && differs(i - 1))
                || (c + 1 < w && differs(i + 1))
                || (r > 0 && differs(i - w))
                || (r + 1 < h && differs(i + w));
        }
    }
    out
}
