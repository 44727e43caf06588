//! Elevation, imagery and annotation rasters.
//!
//! Every raster is row-major with `index = row * width + col`. Elevation is
//! kept in meters as `f32` (the width of both supported on-disk formats) and
//! normalized to `[0, 1]` in `f64` for everything topological.

use std::collections::VecDeque;
use std::fmt;
use std::io::Cursor;

use image::{ColorType, DynamicImage, GrayImage, ImageFormat, RgbImage, RgbaImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{count} no-data cell(s) present; pre-fill before loading")]
    NoDataPresent { count: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: Dims, found: Dims },
    #[error("illegal label value {value} at pixel {index}")]
    IllegalLabelValue { value: u8, index: usize },
    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),
}

impl RasterError {
    pub fn name(&self) -> &'static str {
        match self {
            RasterError::Parse(_) => "ParseError",
            RasterError::NoDataPresent { .. } => "NoDataPresent",
            RasterError::DimensionMismatch { .. } => "DimensionMismatch",
            RasterError::IllegalLabelValue { .. } => "IllegalLabelValue",
            RasterError::Image(_) => "ParseError",
        }
    }
}

pub type Result<T, E = RasterError> = std::result::Result<T, E>;

/// Width and height of a raster in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
}

impl Dims {
    pub const fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    pub const fn len(&self) -> usize {
        self.width * self.height
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub const fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.width, index / self.width)
    }

    pub const fn contains(&self, col: i64, row: i64) -> bool {
        col >= 0 && row >= 0 && (col as usize) < self.width && (row as usize) < self.height
    }

    /// Fails with `DimensionMismatch` unless `other` equals `self`.
    pub fn expect(&self, other: Dims) -> Result<()> {
        if *self == other {
            Ok(())
        } else {
            Err(RasterError::DimensionMismatch { expected: *self, found: other })
        }
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// A pixel position, `x` = column and `y` = row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pixel {
    pub x: u32,
    pub y: u32,
}

impl Pixel {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }

    pub fn index_in(&self, dims: Dims) -> Option<usize> {
        dims.contains(self.x as i64, self.y as i64)
            .then(|| dims.index(self.x as usize, self.y as usize))
    }
}

/// Elevation raster in meters. No-data cells are never present.
#[derive(Debug, Clone, PartialEq)]
pub struct DemGrid {
    dims: Dims,
    cell_size: f64,
    values: Vec<f32>,
    min_value: f32,
    max_value: f32,
}

impl DemGrid {
    pub fn new(width: usize, height: usize, cell_size: f64, values: Vec<f32>) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(RasterError::Parse(format!(
                "elevation grid must be at least 2x2, got {width}x{height}"
            )));
        }
        if values.len() != width * height {
            return Err(RasterError::Parse(format!(
                "expected {} elevation samples, found {}",
                width * height,
                values.len()
            )));
        }
        let bad = values.iter().filter(|v| !v.is_finite()).count();
        if bad > 0 {
            return Err(RasterError::NoDataPresent { count: bad });
        }
        let (min_value, max_value) = values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        Ok(Self { dims: Dims::new(width, height), cell_size, values, min_value, max_value })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }
    pub fn width(&self) -> usize {
        self.dims.width
    }
    pub fn height(&self) -> usize {
        self.dims.height
    }
    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }
    pub fn values(&self) -> &[f32] {
        &self.values
    }
    pub fn min_value(&self) -> f32 {
        self.min_value
    }
    pub fn max_value(&self) -> f32 {
        self.max_value
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f32 {
        self.values[self.dims.index(col, row)]
    }
}

/// Sidecar header for raw little-endian `f32` elevation payloads.
#[derive(Debug, Clone, PartialEq)]
pub struct RawHeader {
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    pub nodata: Option<f32>,
}

impl RawHeader {
    /// Parses `key value` lines; `width`, `height` and `cell_size` are required.
    pub fn parse(text: &str) -> Result<Self> {
        let (mut width, mut height, mut cell_size, mut nodata) = (None, None, None, None);
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default().to_ascii_lowercase();
            let value = parts
                .next()
                .ok_or_else(|| RasterError::Parse(format!("header line without value: {line:?}")))?;
            match key.as_str() {
                "width" => width = Some(parse_usize(value)?),
                "height" => height = Some(parse_usize(value)?),
                "cell_size" | "cellsize" => cell_size = Some(parse_f64(value)?),
                "nodata" | "nodata_value" => nodata = Some(parse_f64(value)? as f32),
                _ => return Err(RasterError::Parse(format!("unknown header key {key:?}"))),
            }
        }
        let missing = |k: &str| RasterError::Parse(format!("raw header missing {k}"));
        Ok(Self {
            width: width.ok_or_else(|| missing("width"))?,
            height: height.ok_or_else(|| missing("height"))?,
            cell_size: cell_size.ok_or_else(|| missing("cell_size"))?,
            nodata,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "width {}\nheight {}\ncell_size {}\n",
            self.width, self.height, self.cell_size
        );
        if let Some(nd) = self.nodata {
            s.push_str(&format!("nodata {nd}\n"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DemFormat {
    /// ESRI ASCII grid with its own header.
    AsciiGrid,
    /// Raw little-endian `f32`, row-major, described by a sidecar header.
    RawF32(RawHeader),
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse::<usize>()
        .map_err(|e| RasterError::Parse(format!("bad integer {s:?}: {e}")))
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|e| RasterError::Parse(format!("bad number {s:?}: {e}")))
}

/// Elevation samples as read from disk, before no-data handling.
struct RawSamples {
    width: usize,
    height: usize,
    cell_size: f64,
    values: Vec<f32>,
    nodata: Option<f32>,
}

impl RawSamples {
    fn is_nodata(&self, v: f32) -> bool {
        !v.is_finite() || self.nodata.is_some_and(|nd| v == nd)
    }
}

fn parse_ascii_grid(bytes: &[u8]) -> Result<RawSamples> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| RasterError::Parse(format!("ASCII grid is not UTF-8: {e}")))?;
    let mut tokens = text.split_ascii_whitespace().peekable();
    let (mut ncols, mut nrows, mut cell_size, mut nodata) = (None, None, None, None);
    while let Some(tok) = tokens.peek() {
        if tok.parse::<f64>().is_ok() {
            break;
        }
        let key = tokens.next().unwrap().to_ascii_lowercase();
        let value = tokens
            .next()
            .ok_or_else(|| RasterError::Parse(format!("header key {key:?} without value")))?;
        match key.as_str() {
            "ncols" => ncols = Some(parse_usize(value)?),
            "nrows" => nrows = Some(parse_usize(value)?),
            "cellsize" => cell_size = Some(parse_f64(value)?),
            "nodata_value" => nodata = Some(parse_f64(value)? as f32),
            "xllcorner" | "yllcorner" | "xllcenter" | "yllcenter" => {
                parse_f64(value)?;
            }
            _ => return Err(RasterError::Parse(format!("unknown ASCII grid key {key:?}"))),
        }
    }
    let width = ncols.ok_or_else(|| RasterError::Parse("missing ncols".into()))?;
    let height = nrows.ok_or_else(|| RasterError::Parse("missing nrows".into()))?;
    if width == 0 || height == 0 {
        return Err(RasterError::Parse("declared dimensions must be positive".into()));
    }
    let mut values = Vec::with_capacity(width * height);
    for tok in tokens {
        let v = tok
            .parse::<f32>()
            .map_err(|e| RasterError::Parse(format!("bad sample {tok:?}: {e}")))?;
        values.push(v);
    }
    if values.len() != width * height {
        return Err(RasterError::Parse(format!(
            "ASCII grid declares {width}x{height} but holds {} samples",
            values.len()
        )));
    }
    Ok(RawSamples { width, height, cell_size: cell_size.unwrap_or(1.0), values, nodata })
}

fn parse_raw_f32(bytes: &[u8], header: &RawHeader) -> Result<RawSamples> {
    if header.width == 0 || header.height == 0 {
        return Err(RasterError::Parse("declared dimensions must be positive".into()));
    }
    let expected = header.width * header.height * 4;
    if bytes.len() != expected {
        return Err(RasterError::Parse(format!(
            "raw payload is {} bytes, expected {expected} for {}x{} f32",
            bytes.len(),
            header.width,
            header.height
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(RawSamples {
        width: header.width,
        height: header.height,
        cell_size: header.cell_size,
        values,
        nodata: header.nodata,
    })
}

fn parse_samples(bytes: &[u8], format: &DemFormat) -> Result<RawSamples> {
    match format {
        DemFormat::AsciiGrid => parse_ascii_grid(bytes),
        DemFormat::RawF32(header) => parse_raw_f32(bytes, header),
    }
}

/// Parses an elevation payload. Any no-data cell is an error.
pub fn load_dem(bytes: &[u8], format: &DemFormat) -> Result<DemGrid> {
    let raw = parse_samples(bytes, format)?;
    let count = raw.values.iter().filter(|&&v| raw.is_nodata(v)).count();
    if count > 0 {
        return Err(RasterError::NoDataPresent { count });
    }
    DemGrid::new(raw.width, raw.height, raw.cell_size, raw.values)
}

/// Like [`load_dem`], but first replaces every no-data cell with the value of
/// its nearest valid cell (breadth-first over 8-neighbors).
pub fn load_dem_filled(bytes: &[u8], format: &DemFormat) -> Result<DemGrid> {
    let raw = parse_samples(bytes, format)?;
    let valid: Vec<bool> = raw.values.iter().map(|&v| !raw.is_nodata(v)).collect();
    let values = fill_nearest(Dims::new(raw.width, raw.height), raw.values, &valid)?;
    DemGrid::new(raw.width, raw.height, raw.cell_size, values)
}

fn fill_nearest(dims: Dims, mut values: Vec<f32>, valid: &[bool]) -> Result<Vec<f32>> {
    if !valid.iter().any(|&v| v) {
        return Err(RasterError::NoDataPresent { count: values.len() });
    }
    let mut done = valid.to_vec();
    let mut queue: VecDeque<usize> = (0..values.len()).filter(|&i| valid[i]).collect();
    while let Some(i) = queue.pop_front() {
        let (c, r) = dims.coords(i);
        for (dc, dr) in [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)] {
            let (nc, nr) = (c as i64 + dc, r as i64 + dr);
            if !dims.contains(nc, nr) {
                continue;
            }
            let j = dims.index(nc as usize, nr as usize);
            if !done[j] {
                done[j] = true;
                values[j] = values[i];
                queue.push_back(j);
            }
        }
    }
    Ok(values)
}

/// ESRI ASCII grid text; samples are printed in shortest round-trip form.
pub fn save_dem_ascii(grid: &DemGrid) -> String {
    let mut out = format!(
        "ncols {}\nnrows {}\nxllcorner 0\nyllcorner 0\ncellsize {}\n",
        grid.width(),
        grid.height(),
        grid.cell_size()
    );
    for row in grid.values.chunks(grid.width()) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Raw little-endian payload plus its sidecar header.
pub fn save_dem_raw(grid: &DemGrid) -> (Vec<u8>, RawHeader) {
    let bytes = grid.values.iter().flat_map(|v| v.to_le_bytes()).collect();
    let header = RawHeader {
        width: grid.width(),
        height: grid.height(),
        cell_size: grid.cell_size(),
        nodata: None,
    };
    (bytes, header)
}

/// The elevation function rescaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedField {
    dims: Dims,
    f: Vec<f64>,
    source_range: (f64, f64),
    degenerate: bool,
}

impl NormalizedField {
    /// Affinely rescales arbitrary finite samples; constant input maps to zeros
    /// and sets the degenerate flag.
    pub fn from_values(width: usize, height: usize, values: &[f64]) -> Result<Self> {
        let dims = Dims::new(width, height);
        if dims.is_empty() || values.len() != dims.len() {
            return Err(RasterError::Parse(format!(
                "expected {} samples for {dims}, found {}",
                dims.len(),
                values.len()
            )));
        }
        let bad = values.iter().filter(|v| !v.is_finite()).count();
        if bad > 0 {
            return Err(RasterError::NoDataPresent { count: bad });
        }
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let degenerate = hi <= lo;
        let f = if degenerate {
            vec![0.0; values.len()]
        } else {
            let range = hi - lo;
            values.iter().map(|&v| ((v - lo) / range).clamp(0.0, 1.0)).collect()
        };
        Ok(Self { dims, f, source_range: (lo, hi), degenerate })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }
    pub fn width(&self) -> usize {
        self.dims.width
    }
    pub fn height(&self) -> usize {
        self.dims.height
    }
    pub fn len(&self) -> usize {
        self.f.len()
    }
    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }
    pub fn values(&self) -> &[f64] {
        &self.f
    }
    #[inline]
    pub fn value(&self, index: usize) -> f64 {
        self.f[index]
    }
    pub fn source_range(&self) -> (f64, f64) {
        self.source_range
    }
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// `1 - f`, the field whose sublevel sets are this field's superlevel sets.
    pub fn mirrored(&self) -> Self {
        Self {
            dims: self.dims,
            f: self.f.iter().map(|v| 1.0 - v).collect(),
            source_range: (-self.source_range.1, -self.source_range.0),
            degenerate: self.degenerate,
        }
    }
}

pub fn normalize(grid: &DemGrid) -> NormalizedField {
    let values: Vec<f64> = grid.values.iter().map(|&v| v as f64).collect();
    NormalizedField::from_values(grid.width(), grid.height(), &values)
        .expect("DemGrid invariants guarantee finite, non-empty samples")
}

/// 8-bit RGB imagery aligned with the elevation grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbRaster {
    dims: Dims,
    pixels: Vec<[u8; 3]>,
}

impl RgbRaster {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        let dims = Dims::new(width, height);
        if pixels.len() != dims.len() {
            return Err(RasterError::Parse(format!(
                "expected {} RGB pixels, found {}",
                dims.len(),
                pixels.len()
            )));
        }
        Ok(Self { dims, pixels })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }
    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn load_png(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgb8();
        let (w, h) = img.dimensions();
        let pixels = img.pixels().map(|p| p.0).collect();
        Self::new(w as usize, h as usize, pixels)
    }

    pub fn save_png(&self) -> Result<Vec<u8>> {
        let flat: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        let img = RgbImage::from_raw(self.dims.width as u32, self.dims.height as u32, flat)
            .expect("buffer length matches dimensions");
        encode_png(DynamicImage::ImageRgb8(img))
    }
}

/// Passes iff the imagery has exactly the elevation grid's dimensions.
pub fn check_alignment(dem: &DemGrid, imagery: &RgbRaster) -> Result<()> {
    dem.dims().expect(imagery.dims())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[repr(u8)]
pub enum Label {
    #[default]
    Unlabeled = 0,
    Flooded = 1,
    Dry = 2,
}

impl Label {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Label::Unlabeled),
            1 => Some(Label::Flooded),
            2 => Some(Label::Dry),
            _ => None,
        }
    }

    pub fn is_labeled(self) -> bool {
        self != Label::Unlabeled
    }

    /// Flooded <-> Dry; Unlabeled is fixed.
    pub fn swapped(self) -> Self {
        match self {
            Label::Flooded => Label::Dry,
            Label::Dry => Label::Flooded,
            Label::Unlabeled => Label::Unlabeled,
        }
    }
}

/// Per-pixel flood annotation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationMask {
    dims: Dims,
    labels: Vec<Label>,
}

impl AnnotationMask {
    pub fn new(dims: Dims, labels: Vec<Label>) -> Result<Self> {
        if labels.len() != dims.len() {
            return Err(RasterError::Parse(format!(
                "expected {} labels, found {}",
                dims.len(),
                labels.len()
            )));
        }
        Ok(Self { dims, labels })
    }

    pub fn empty(dims: Dims) -> Self {
        Self::filled(dims, Label::Unlabeled)
    }

    pub fn filled(dims: Dims, label: Label) -> Self {
        Self { dims, labels: vec![label; dims.len()] }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }
    pub fn labels(&self) -> &[Label] {
        &self.labels
    }
    #[inline]
    pub fn get(&self, index: usize) -> Label {
        self.labels[index]
    }
    #[inline]
    pub fn set(&mut self, index: usize, label: Label) {
        self.labels[index] = label;
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_labeled()).count()
    }

    pub fn swapped(&self) -> Self {
        Self { dims: self.dims, labels: self.labels.iter().map(|l| l.swapped()).collect() }
    }
}

/// Canonical mask encoding: single-channel 8-bit PNG with 0/1/2 label bytes.
pub fn save_mask(mask: &AnnotationMask) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = mask.labels.iter().map(|&l| l as u8).collect();
    let img = GrayImage::from_raw(mask.dims.width as u32, mask.dims.height as u32, bytes)
        .expect("buffer length matches dimensions");
    encode_png(DynamicImage::ImageLuma8(img))
}

/// Decodes a canonical mask PNG. An RGBA texture is also accepted: transparent
/// pixels are unlabeled, red-dominant pixels flooded, blue-dominant pixels dry.
pub fn load_mask(bytes: &[u8]) -> Result<AnnotationMask> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
    let dims = Dims::new(img.width() as usize, img.height() as usize);
    match img.color() {
        ColorType::L8 => {
            let gray = img.into_luma8();
            let labels = gray
                .as_raw()
                .iter()
                .enumerate()
                .map(|(index, &value)| {
                    Label::from_byte(value).ok_or(RasterError::IllegalLabelValue { value, index })
                })
                .collect::<Result<Vec<_>>>()?;
            AnnotationMask::new(dims, labels)
        }
        ColorType::Rgba8 => mask_from_texture(&img.into_rgba8()),
        other => Err(RasterError::Parse(format!(
            "mask PNG must be 8-bit gray or RGBA, found {other:?}"
        ))),
    }
}

fn mask_from_texture(img: &RgbaImage) -> Result<AnnotationMask> {
    let dims = Dims::new(img.width() as usize, img.height() as usize);
    let labels = img
        .pixels()
        .enumerate()
        .map(|(index, p)| {
            let [r, _, b, a] = p.0;
            match (a, r.cmp(&b)) {
                (0, _) => Ok(Label::Unlabeled),
                (_, std::cmp::Ordering::Greater) => Ok(Label::Flooded),
                (_, std::cmp::Ordering::Less) => Ok(Label::Dry),
                _ => Err(RasterError::IllegalLabelValue { value: r, index }),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    AnnotationMask::new(dims, labels)
}

pub(crate) fn encode_png(img: DynamicImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}
