//! Fusing many annotation masks: mean and variance views, soft labels,
//! corrections, binarization, agreement metrics and color overlays.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{encode_png, AnnotationMask, Dims, Label, RasterError};

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("an annotation set needs at least one mask")]
    EmptySet,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: Dims, found: Dims },
    #[error("no pixel is labeled in both masks")]
    NoOverlap,
    #[error("overlay view does not match the map kind")]
    ViewMismatch,
    #[error("threshold must lie in [0, 1], got {0}")]
    BadThreshold(f64),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

impl AggregateError {
    pub fn name(&self) -> &'static str {
        match self {
            AggregateError::EmptySet => "EmptySet",
            AggregateError::DimensionMismatch { .. } => "DimensionMismatch",
            AggregateError::NoOverlap => "NoOverlap",
            AggregateError::ViewMismatch => "ViewMismatch",
            AggregateError::BadThreshold(_) => "BadThreshold",
            AggregateError::Raster(e) => e.name(),
        }
    }
}

type Result<T> = std::result::Result<T, AggregateError>;

fn same_dims(expected: Dims, found: Dims) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(AggregateError::DimensionMismatch { expected, found })
    }
}

/// Flooded = -1, Unlabeled = 0, Dry = +1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedMask {
    pub dims: Dims,
    pub values: Vec<i8>,
}

pub fn signed_value(label: Label) -> i8 {
    match label {
        Label::Flooded => -1,
        Label::Unlabeled => 0,
        Label::Dry => 1,
    }
}

pub fn signed_view(mask: &AnnotationMask) -> SignedMask {
    SignedMask { dims: mask.dims(), values: mask.labels().iter().map(|&l| signed_value(l)).collect() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    dims: Dims,
    masks: Vec<AnnotationMask>,
}

impl AnnotationSet {
    pub fn new(masks: Vec<AnnotationMask>) -> Result<Self> {
        let dims = masks.first().ok_or(AggregateError::EmptySet)?.dims();
        for m in &masks {
            same_dims(dims, m.dims())?;
        }
        Ok(Self { dims, masks })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn masks(&self) -> &[AnnotationMask] {
        &self.masks
    }

    /// Per-pixel `(#Flooded, #Dry)`.
    fn counts(&self) -> Vec<(u32, u32)> {
        let mut counts = vec![(0u32, 0u32); self.dims.len()];
        for m in &self.masks {
            for (c, &l) in counts.iter_mut().zip(m.labels()) {
                match l {
                    Label::Flooded => c.0 += 1,
                    Label::Dry => c.1 += 1,
                    Label::Unlabeled => {}
                }
            }
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanMap {
    pub dims: Dims,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceMap {
    pub dims: Dims,
    pub values: Vec<f64>,
}

/// Mean of the signed views; unlabeled pixels count as 0.
pub fn mean_map(set: &AnnotationSet) -> MeanMap {
    let n = set.len() as f64;
    let values = set.counts().iter().map(|&(f, d)| (d as f64 - f as f64) / n).collect();
    MeanMap { dims: set.dims, values }
}

/// Population variance of the signed views.
pub fn variance_map(set: &AnnotationSet) -> VarianceMap {
    let n = set.len() as i64;
    let values = set
        .counts()
        .iter()
        .map(|&(f, d)| {
            // E[x^2] - E[x]^2 with an exact integer numerator.
            let (f, d) = (f as i64, d as i64);
            ((f + d) * n - (d - f) * (d - f)) as f64 / (n * n) as f64
        })
        .collect();
    VarianceMap { dims: set.dims, values }
}

fn check_threshold(tau: f64) -> Result<()> {
    if (0.0..=1.0).contains(&tau) {
        Ok(())
    } else {
        Err(AggregateError::BadThreshold(tau))
    }
}

/// Zeroes every value whose magnitude does not exceed `tau`.
pub fn apply_certainty_threshold(mean: &MeanMap, tau: f64) -> Result<MeanMap> {
    check_threshold(tau)?;
    let values = mean.values.iter().map(|&v| if v.abs() <= tau { 0.0 } else { v }).collect();
    Ok(MeanMap { dims: mean.dims, values })
}

/// `(flood, dry)` scores, `None` where no annotation labeled the pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelMap {
    pub dims: Dims,
    pub scores: Vec<Option<[f64; 2]>>,
}

impl SoftLabelMap {
    /// Flood score per pixel, NaN where undefined.
    pub fn flood_scores(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.map_or(f64::NAN, |[f, _]| f)).collect()
    }
}

/// Unlabeled pixels are ignored in both numerator and denominator.
pub fn soft_labels(set: &AnnotationSet) -> SoftLabelMap {
    let scores = set
        .counts()
        .iter()
        .map(|&(f, d)| {
            let total = f + d;
            (total > 0).then(|| {
                let flood = f as f64 / total as f64;
                [flood, d as f64 / total as f64]
            })
        })
        .collect();
    SoftLabelMap { dims: set.dims, scores }
}

/// Labeled pixels of `correction` override the crowd scores.
pub fn apply_correction(soft: &SoftLabelMap, correction: &AnnotationMask) -> Result<SoftLabelMap> {
    same_dims(soft.dims, correction.dims())?;
    let scores = soft
        .scores
        .iter()
        .zip(correction.labels())
        .map(|(&s, &l)| match l {
            Label::Flooded => Some([1.0, 0.0]),
            Label::Dry => Some([0.0, 1.0]),
            Label::Unlabeled => s,
        })
        .collect();
    Ok(SoftLabelMap { dims: soft.dims, scores })
}

/// The larger score wins; ties and undefined pixels stay unlabeled.
pub fn binarize(soft: &SoftLabelMap) -> AnnotationMask {
    let labels = soft
        .scores
        .iter()
        .map(|s| match s {
            Some([f, d]) if f > d => Label::Flooded,
            Some([f, d]) if d > f => Label::Dry,
            _ => Label::Unlabeled,
        })
        .collect();
    AnnotationMask::new(soft.dims, labels).expect("dimensions carried over")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl ClassMetrics {
    /// Ratios with an empty denominator are reported as 0.
    fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Self { precision, recall, f }
    }
}

/// Agreement of a prediction with a reference over pixels labeled in both.
/// `ff` counts pixels predicted flooded that are dry in the reference and
/// `fd` those predicted dry that are flooded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityMetrics {
    pub tf: u64,
    pub td: u64,
    pub ff: u64,
    pub fd: u64,
    /// Percentage.
    pub accuracy: f64,
    pub flooded: ClassMetrics,
    pub dry: ClassMetrics,
    pub macro_f: f64,
}

impl QualityMetrics {
    pub fn to_report(&self) -> String {
        format!(
            "TF {}\nTD {}\nFF {}\nFD {}\naccuracy {:.4}\nflooded precision {:.6} recall {:.6} f {:.6}\ndry precision {:.6} recall {:.6} f {:.6}\nmacro_f {:.6}\n",
            self.tf,
            self.td,
            self.ff,
            self.fd,
            self.accuracy,
            self.flooded.precision,
            self.flooded.recall,
            self.flooded.f,
            self.dry.precision,
            self.dry.recall,
            self.dry.f,
            self.macro_f
        )
    }
}

pub fn score(pred: &AnnotationMask, reference: &AnnotationMask) -> Result<QualityMetrics> {
    same_dims(reference.dims(), pred.dims())?;
    let (mut tf, mut td, mut ff, mut fd) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &r) in pred.labels().iter().zip(reference.labels()) {
        match (p, r) {
            (Label::Flooded, Label::Flooded) => tf += 1,
            (Label::Dry, Label::Dry) => td += 1,
            (Label::Flooded, Label::Dry) => ff += 1,
            (Label::Dry, Label::Flooded) => fd += 1,
            _ => {}
        }
    }
    let total = tf + td + ff + fd;
    if total == 0 {
        return Err(AggregateError::NoOverlap);
    }
    let flooded = ClassMetrics::from_counts(tf, ff, fd);
    let dry = ClassMetrics::from_counts(td, fd, ff);
    Ok(QualityMetrics {
        tf,
        td,
        ff,
        fd,
        accuracy: (tf + td) as f64 / total as f64 * 100.0,
        flooded,
        dry,
        macro_f: (flooded.f + dry.f) / 2.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OverlayView {
    Aggregate,
    Variance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlaySpec {
    pub view: OverlayView,
    /// Certainty threshold (aggregate) or normalized-variance threshold.
    pub tau: f64,
}

#[derive(Debug, Clone, Copy)]
pub enum OverlaySource<'a> {
    Mean(&'a MeanMap),
    Variance(&'a VarianceMap),
}

pub const FLOOD_RGB: [u8; 3] = [255, 0, 0];
pub const DRY_RGB: [u8; 3] = [0, 0, 255];
/// Low-variance end of the variance colormap; high variance fades to white.
pub const VARIANCE_RGB: [u8; 3] = [255, 0, 255];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbaRaster {
    pub dims: Dims,
    pub pixels: Vec<[u8; 4]>,
}

impl RgbaRaster {
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let raw: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        let img = image::RgbaImage::from_raw(self.dims.width as u32, self.dims.height as u32, raw)
            .expect("buffer matches dimensions");
        Ok(encode_png(image::DynamicImage::ImageRgba8(img))?)
    }
}

#[inline]
fn to_byte(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// `from` blended toward `to` by `t`.
fn blend(from: [u8; 3], to: [u8; 3], t: f64) -> [u8; 3] {
    std::array::from_fn(|i| (from[i] as f64 + (to[i] as f64 - from[i] as f64) * t.clamp(0.0, 1.0)).round() as u8)
}

const WHITE: [u8; 3] = [255, 255, 255];

/// Aggregate view: white toward red (v < 0) or blue (v > 0) by `|v|`, with
/// alpha `|v|`, after the certainty threshold. Variance view: variance is
/// normalized by its maximum; pixels at or below `tau` are hidden, others
/// fade from the highlight toward white as variance grows and become more
/// opaque.
pub fn render_overlay(source: OverlaySource<'_>, spec: OverlaySpec) -> Result<RgbaRaster> {
    check_threshold(spec.tau)?;
    match (source, spec.view) {
        (OverlaySource::Mean(mean), OverlayView::Aggregate) => {
            let shown = apply_certainty_threshold(mean, spec.tau)?;
            let pixels = shown
                .values
                .iter()
                .map(|&v| {
                    let target = if v < 0.0 { FLOOD_RGB } else { DRY_RGB };
                    let [r, g, b] = blend(WHITE, target, v.abs());
                    [r, g, b, to_byte(v.abs())]
                })
                .collect();
            Ok(RgbaRaster { dims: mean.dims, pixels })
        }
        (OverlaySource::Variance(var), OverlayView::Variance) => {
            let max = var.values.iter().copied().fold(0.0, f64::max);
            let pixels = var
                .values
                .iter()
                .map(|&v| {
                    let nv = if max > 0.0 { v / max } else { 0.0 };
                    if nv <= spec.tau || nv == 0.0 {
                        return [255, 255, 255, 0];
                    }
                    let [r, g, b] = blend(VARIANCE_RGB, WHITE, nv);
                    [r, g, b, to_byte(nv)]
                })
                .collect();
            Ok(RgbaRaster { dims: var.dims, pixels })
        }
        _ => Err(AggregateError::ViewMismatch),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Dry as D, Flooded as F, Unlabeled as U};

    fn mask(labels: &[Label]) -> AnnotationMask {
        AnnotationMask::new(Dims::new(labels.len(), 1), labels.to_vec()).unwrap()
    }

    /// One mask per label, each a single pixel.
    fn column(labels: &[Label]) -> AnnotationSet {
        AnnotationSet::new(labels.iter().map(|&l| mask(&[l])).collect()).unwrap()
    }

    #[test]
    fn signed_mapping() {
        assert_eq!(signed_view(&mask(&[F, D, U])).values, vec![-1, 1, 0]);
    }

    #[test]
    fn means_and_variances() {
        assert_eq!(mean_map(&column(&[F, F, F])).values, vec![-1.0]);
        assert!((mean_map(&column(&[F, F, D])).values[0] + 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(mean_map(&column(&[F, U])).values, vec![-0.5]);
        assert_eq!(variance_map(&column(&[D, D])).values, vec![0.0]);
        assert_eq!(variance_map(&column(&[F, D])).values, vec![1.0]);
        assert!((variance_map(&column(&[F, U, D])).values[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn set_validation() {
        assert_eq!(AnnotationSet::new(vec![]).unwrap_err().name(), "EmptySet");
        let err = AnnotationSet::new(vec![mask(&[F]), mask(&[F, D])]).unwrap_err();
        assert_eq!(err.name(), "DimensionMismatch");
    }

    #[test]
    fn threshold_is_not_strict() {
        let m = MeanMap { dims: Dims::new(4, 1), values: vec![0.6, -0.61, 0.0, -0.6] };
        let t = apply_certainty_threshold(&m, 0.6).unwrap();
        assert_eq!(t.values, vec![0.0, -0.61, 0.0, 0.0]);
        assert_eq!(apply_certainty_threshold(&t, 0.6).unwrap(), t);
        let z = apply_certainty_threshold(&m, 0.0).unwrap();
        assert_eq!(z.values, m.values);
        assert!(apply_certainty_threshold(&m, 1.5).is_err());
    }

    #[test]
    fn soft_labels_ignore_unlabeled() {
        let mut labels = vec![F, F, F, D];
        labels.extend(std::iter::repeat_n(U, 41));
        assert_eq!(soft_labels(&column(&labels)).scores, vec![Some([0.75, 0.25])]);
        assert_eq!(soft_labels(&column(&[U, U])).scores, vec![None]);
        assert_eq!(soft_labels(&column(&[D, D])).scores, vec![Some([0.0, 1.0])]);
    }

    #[test]
    fn corrections_and_binarization() {
        let soft = SoftLabelMap { dims: Dims::new(4, 1), scores: vec![Some([0.75, 0.25]), Some([0.5, 0.5]), None, Some([0.1, 0.9])] };
        assert_eq!(binarize(&soft).labels(), &[F, U, U, D]);
        let fixed = apply_correction(&soft, &mask(&[U, F, D, U])).unwrap();
        assert_eq!(fixed.scores, vec![Some([0.75, 0.25]), Some([1.0, 0.0]), Some([0.0, 1.0]), Some([0.1, 0.9])]);
        assert_eq!(apply_correction(&soft, &mask(&[U, U, U, U])).unwrap(), soft);
        assert_eq!(apply_correction(&soft, &mask(&[F])).unwrap_err().name(), "DimensionMismatch");
    }

    #[test]
    fn scoring() {
        let r = mask(&[F, F, D, D, U]);
        let perfect = score(&r, &r).unwrap();
        assert_eq!(perfect.accuracy, 100.0);
        assert_eq!(perfect.macro_f, 1.0);
        assert_eq!(score(&r.swapped(), &r).unwrap().accuracy, 0.0);
        let p = mask(&[F, D, D, F, F]);
        let m = score(&p, &r).unwrap();
        assert_eq!((m.tf, m.td, m.ff, m.fd), (1, 1, 1, 1));
        assert_eq!(m.accuracy, 50.0);
        assert_eq!(m.flooded, ClassMetrics { precision: 0.5, recall: 0.5, f: 0.5 });
        assert_eq!(score(&mask(&[U, F]), &mask(&[D, U])).unwrap_err().name(), "NoOverlap");
        assert!(m.to_report().contains("accuracy 50.0000"));
    }

    #[test]
    fn overlay_endpoints() {
        let mean = MeanMap { dims: Dims::new(3, 1), values: vec![-1.0, 0.0, 0.5] };
        let agg = OverlaySpec { view: OverlayView::Aggregate, tau: 0.0 };
        let img = render_overlay(OverlaySource::Mean(&mean), agg).unwrap();
        assert_eq!(img.pixels[0], [255, 0, 0, 255]);
        assert_eq!(img.pixels[1][3], 0);
        assert_eq!(img.pixels[2], [128, 128, 255, 128]);
        let var = VarianceMap { dims: Dims::new(3, 1), values: vec![0.0; 3] };
        let vspec = OverlaySpec { view: OverlayView::Variance, tau: 0.0 };
        let img = render_overlay(OverlaySource::Variance(&var), vspec).unwrap();
        assert!(img.pixels.iter().all(|p| p[3] == 0));
        let var = VarianceMap { dims: Dims::new(3, 1), values: vec![1.0, 0.5, 0.2] };
        let img = render_overlay(OverlaySource::Variance(&var), OverlaySpec { view: OverlayView::Variance, tau: 0.3 }).unwrap();
        assert_eq!(img.pixels[0], [255, 255, 255, 255]);
        assert_eq!(img.pixels[1][3], 128);
        assert_eq!(img.pixels[2][3], 0);
        assert_eq!(render_overlay(OverlaySource::Mean(&mean), vspec).unwrap_err().name(), "ViewMismatch");
        assert!(img.to_png().unwrap().starts_with(b"\x89PNG"));
    }
}
