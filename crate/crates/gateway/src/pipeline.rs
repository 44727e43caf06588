//! Preprocessing, ingest and aggregation over the store.

use std::sync::Arc;

use floodmap_core::aggregate::{
    apply_certainty_threshold, apply_correction, binarize, mean_map, render_overlay, score, soft_labels, variance_map,
    AnnotationSet, MeanMap, OverlaySource, OverlaySpec, OverlayView, QualityMetrics, RgbaRaster, SoftLabelMap,
    VarianceMap,
};
use floodmap_core::mesh::{default_max_vertices, export_mesh, parse_obj, triangulate_greedy, MeshFormat, TerrainMesh};
use floodmap_core::raster::{
    check_alignment, load_dem, load_mask, normalize, save_dem_raw, save_mask, AnnotationMask, DemFormat, DemGrid,
    NormalizedField, RawHeader, RgbRaster,
};
use floodmap_core::select::Connectivity;
use floodmap_core::session::{replay, ReplayContext, SessionError, SessionLog};
use floodmap_core::topo::{
    validate_thresholds, MultiScaleSegmentation, SegmentationMap, Simplifier, TopoError, TopologyBundle,
    DEFAULT_THRESHOLDS,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{GatewayError, Result};
use crate::store::{now_secs, DatasetMeta, MeshSummary, Store};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessParams {
    pub thresholds: Vec<f64>,
    /// Vertical mesh tolerance in elevation units.
    pub mesh_max_error: f64,
    /// Vertex budget; `None` uses the mesh module default.
    pub max_vertices: Option<usize>,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        Self {
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            mesh_max_error: floodmap_core::mesh::DEFAULT_MAX_ERROR,
            max_vertices: None,
        }
    }
}

/// A preprocessed dataset.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub meta: DatasetMeta,
    pub dem: DemGrid,
    pub imagery: RgbRaster,
    pub mesh: TerrainMesh,
    pub multiscale: MultiScaleSegmentation,
    /// False when the bundle was already in the store.
    pub computed: bool,
}

/// Hex digest naming a dataset. Covers the decoded rasters, so the same grid
/// arriving as ASCII or raw maps to the same id.
pub fn dataset_id(dem: &DemGrid, imagery: &RgbRaster, params: &PreprocessParams) -> String {
    let mut h = Sha256::new();
    h.update(b"floodmap-dataset-1");
    h.update((dem.width() as u64).to_le_bytes());
    h.update((dem.height() as u64).to_le_bytes());
    h.update(dem.cell_size().to_bits().to_le_bytes());
    for v in dem.values() {
        h.update(v.to_bits().to_le_bytes());
    }
    h.update((imagery.dims().width as u64).to_le_bytes());
    h.update((imagery.dims().height as u64).to_le_bytes());
    for p in imagery.pixels() {
        h.update(p);
    }
    h.update((params.thresholds.len() as u64).to_le_bytes());
    for t in &params.thresholds {
        h.update(t.to_bits().to_le_bytes());
    }
    h.update(params.mesh_max_error.to_bits().to_le_bytes());
    h.update(params.max_vertices.map_or(u64::MAX, |v| v as u64).to_le_bytes());
    hex::encode(&h.finalize()[..16])
}

fn level_files(level: usize, map: &SegmentationMap) -> [(String, Vec<u8>); 2] {
    [
        (format!("segmentation/{level}.bin"), map.to_bytes()),
        (format!("segmentation/{level}.txt"), map.manifest().into_bytes()),
    ]
}

/// Levels of a non-degenerate field, simplified from its ε = 0 tree.
fn levels_from_tree(tree: &TopologyBundle, field: &NormalizedField, thresholds: &[f64]) -> Vec<SegmentationMap> {
    let mut simplifier = Simplifier::new(&tree.contour, &tree.pairs);
    thresholds
        .iter()
        .map(|&epsilon| {
            let (segment_ids, count) = simplifier.advance(epsilon).segment_ids();
            SegmentationMap { epsilon, dims: field.dims(), segment_ids, segment_count: count as u32 }
        })
        .collect()
}

fn flat_levels(field: &NormalizedField, thresholds: &[f64]) -> Vec<SegmentationMap> {
    let dims = field.dims();
    thresholds
        .iter()
        .map(|&epsilon| SegmentationMap { epsilon, dims, segment_ids: vec![0; dims.len()], segment_count: 1 })
        .collect()
}

/// normalize, build_multiscale, triangulate_greedy; persisted once per
/// content hash.
pub fn preprocess_dataset(
    store: &Store,
    dem: &DemGrid,
    imagery: &RgbRaster,
    params: &PreprocessParams,
) -> Result<DatasetBundle> {
    check_alignment(dem, imagery)?;
    let id = dataset_id(dem, imagery, params);
    if store.exists(&id) {
        return load_bundle(store, &id);
    }
    let lock = store.lock(&id);
    let guard = lock.write().unwrap();
    if store.exists(&id) {
        drop(guard);
        return load_bundle(store, &id);
    }

    let field = normalize(dem);
    validate_thresholds(&params.thresholds)?;
    let multiscale = if field.is_degenerate() {
        MultiScaleSegmentation { levels: flat_levels(&field, &params.thresholds) }
    } else {
        let tree = Arc::new(TopologyBundle::compute(&field)?);
        let levels = levels_from_tree(&tree, &field, &params.thresholds);
        store.cache_tree(&id, tree);
        MultiScaleSegmentation { levels }
    };
    let max_vertices = params.max_vertices.unwrap_or_else(|| default_max_vertices(dem));
    let mesh = triangulate_greedy(dem, params.mesh_max_error, max_vertices)?;

    let (lo, hi) = field.source_range();
    let meta = DatasetMeta {
        id: id.clone(),
        width: dem.width(),
        height: dem.height(),
        cell_size: dem.cell_size(),
        source_range: [lo, hi],
        degenerate: field.is_degenerate(),
        thresholds: params.thresholds.clone(),
        segment_counts: multiscale.levels.iter().map(|l| l.segment_count).collect(),
        mesh_max_error: params.mesh_max_error,
        mesh: MeshSummary {
            vertices: mesh.vertices.len(),
            triangles: mesh.triangles.len(),
            max_error_bound: mesh.max_error_bound,
            budget_exhausted: mesh.budget_exhausted,
        },
        created_at: now_secs(),
    };
    let (raw, header) = save_dem_raw(dem);
    let mut files = vec![
        ("bundle.json".to_string(), serde_json::to_vec_pretty(&meta).expect("metadata serializes")),
        ("dem.f32".to_string(), raw),
        ("dem.hdr".to_string(), header.to_text().into_bytes()),
        ("imagery.png".to_string(), imagery.save_png()?),
        ("mesh.obj".to_string(), export_mesh(&mesh, MeshFormat::Obj)),
        ("mesh.stl".to_string(), export_mesh(&mesh, MeshFormat::BinaryStl)),
    ];
    for (level, map) in multiscale.levels.iter().enumerate() {
        files.extend(level_files(level, map));
    }
    store.commit_dataset(&id, &files)?;
    Ok(DatasetBundle { meta, dem: dem.clone(), imagery: imagery.clone(), mesh, multiscale, computed: true })
}

pub fn load_dem_grid(store: &Store, id: &str) -> Result<DemGrid> {
    let header = RawHeader::parse(&String::from_utf8_lossy(&store.read(id, "dem.hdr")?))?;
    Ok(load_dem(&store.read(id, "dem.f32")?, &DemFormat::RawF32(header))?)
}

pub fn load_level(store: &Store, id: &str, level: usize) -> Result<SegmentationMap> {
    let meta = store.read_meta(id)?;
    if level >= meta.thresholds.len() {
        return Err(GatewayError::BadRequest(format!("level {level} of {}", meta.thresholds.len())));
    }
    let bytes = store.read(id, &format!("segmentation/{level}.bin"))?;
    let manifest = store.read(id, &format!("segmentation/{level}.txt"))?;
    Ok(SegmentationMap::from_parts(&bytes, &String::from_utf8_lossy(&manifest))?)
}

pub fn load_multiscale(store: &Store, meta: &DatasetMeta) -> Result<MultiScaleSegmentation> {
    let levels = (0..meta.thresholds.len()).map(|l| load_level(store, &meta.id, l)).collect::<Result<_>>()?;
    Ok(MultiScaleSegmentation { levels })
}

pub fn load_mesh(store: &Store, meta: &DatasetMeta) -> Result<TerrainMesh> {
    let obj = parse_obj(&String::from_utf8_lossy(&store.read(&meta.id, "mesh.obj")?))?;
    Ok(TerrainMesh {
        vertices: obj.positions,
        uvs: obj.uvs,
        triangles: obj.faces,
        max_error_bound: meta.mesh.max_error_bound,
        budget_exhausted: meta.mesh.budget_exhausted,
    })
}

pub fn load_bundle(store: &Store, id: &str) -> Result<DatasetBundle> {
    let lock = store.lock(id);
    let _guard = lock.read().unwrap();
    let meta = store.read_meta(id)?;
    Ok(DatasetBundle {
        dem: load_dem_grid(store, id)?,
        imagery: RgbRaster::load_png(&store.read(id, "imagery.png")?)?,
        mesh: load_mesh(store, &meta)?,
        multiscale: load_multiscale(store, &meta)?,
        meta,
        computed: false,
    })
}

/// The products a session replays against.
#[derive(Debug, Clone)]
pub struct ReplayData {
    pub meta: DatasetMeta,
    pub field: NormalizedField,
    pub segmentation: MultiScaleSegmentation,
}

impl ReplayData {
    pub fn load(store: &Store, id: &str) -> Result<Self> {
        let lock = store.lock(id);
        let _guard = lock.read().unwrap();
        let meta = store.read_meta(id)?;
        let field = normalize(&load_dem_grid(store, id)?);
        let segmentation = load_multiscale(store, &meta)?;
        Ok(Self { meta, field, segmentation })
    }

    pub fn context(&self, connectivity: Connectivity) -> ReplayContext<'_> {
        ReplayContext { field: &self.field, segmentation: &self.segmentation, connectivity }
    }
}

/// Appends coarser levels computed from the dataset's ε = 0 tree. Values
/// already present are skipped; new ones must exceed the current maximum.
pub fn append_thresholds(store: &Store, id: &str, extra: &[f64]) -> Result<DatasetMeta> {
    let lock = store.lock(id);
    let _guard = lock.write().unwrap();
    let mut meta = store.read_meta(id)?;
    let fresh: Vec<f64> = extra.iter().copied().filter(|t| !meta.thresholds.contains(t)).collect();
    if fresh.is_empty() {
        return Ok(meta);
    }
    let top = *meta.thresholds.last().expect("datasets have at least one level");
    let ok = fresh.iter().all(|t| t.is_finite() && *t > top && *t <= 1.0) && fresh.windows(2).all(|w| w[0] < w[1]);
    if !ok {
        let mut all = meta.thresholds.clone();
        all.extend(&fresh);
        return Err(TopoError::BadThresholds(all).into());
    }
    let field = normalize(&load_dem_grid(store, id)?);
    let levels = if field.is_degenerate() {
        flat_levels(&field, &fresh)
    } else {
        let tree = match store.cached_tree(id) {
            Some(t) => t,
            None => {
                let t = Arc::new(TopologyBundle::compute(&field)?);
                store.cache_tree(id, t.clone());
                t
            }
        };
        levels_from_tree(&tree, &field, &fresh)
    };
    let dir = store.dataset_dir(id);
    for map in levels {
        for (rel, bytes) in level_files(meta.thresholds.len(), &map) {
            store.write_file(&dir.join(rel), &bytes)?;
        }
        meta.thresholds.push(map.epsilon);
        meta.segment_counts.push(map.segment_count);
    }
    store.write_meta(&meta)?;
    Ok(meta)
}

/// Whether a replay mismatch rejects the submission or is only recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Verification {
    #[default]
    Enforce,
    /// For bulk imports of legacy data.
    Warn,
}

/// Contents of `record.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionMeta {
    pub id: String,
    pub dataset_id: String,
    pub submitted_at: u64,
    pub verified: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SubmissionRecord {
    pub meta: SubmissionMeta,
    pub mask: AnnotationMask,
    pub log: SessionLog,
}

/// Replays `log` and compares it with `mask`. Returns the problems found.
fn verify_submission(data: &ReplayData, id: &str, mask: &AnnotationMask, log: &SessionLog) -> Vec<GatewayError> {
    if log.header.dataset_id != id {
        let msg = format!("log names dataset {:?}", log.header.dataset_id);
        return vec![SessionError::HeaderMismatch(msg).into()];
    }
    match replay(log, &data.context(log.header.defaults.connectivity)) {
        Ok(state) => {
            let differing = state.mask.labels().iter().zip(mask.labels()).filter(|(a, b)| a != b).count();
            if differing == 0 {
                Vec::new()
            } else {
                vec![GatewayError::ReplayMismatch { differing }]
            }
        }
        Err(e) => vec![e.into()],
    }
}

pub fn submit_annotation(
    store: &Store,
    id: &str,
    mask: &AnnotationMask,
    log: &SessionLog,
    verification: Verification,
) -> Result<SubmissionRecord> {
    let data = ReplayData::load(store, id)?;
    let dims = data.field.dims();
    if mask.dims() != dims {
        return Err(GatewayError::DimensionMismatch(format!("mask {} vs dataset {dims}", mask.dims())));
    }
    if log.header.dims() != dims {
        return Err(GatewayError::DimensionMismatch(format!("log {} vs dataset {dims}", log.header.dims())));
    }
    let mut problems = verify_submission(&data, id, mask, log);
    if verification == Verification::Enforce && !problems.is_empty() {
        return Err(problems.remove(0));
    }

    let mask_png = save_mask(mask)?;
    let log_json = log.to_json();
    let mut h = Sha256::new();
    h.update(id.as_bytes());
    h.update((mask_png.len() as u64).to_le_bytes());
    h.update(&mask_png);
    h.update(&log_json);
    let sid = hex::encode(&h.finalize()[..8]);
    let meta = SubmissionMeta {
        id: sid.clone(),
        dataset_id: id.to_string(),
        submitted_at: now_secs(),
        verified: problems.is_empty(),
        warnings: problems.iter().map(|e| format!("{}: {e}", e.name())).collect(),
    };
    let files = [
        ("mask.png".to_string(), mask_png),
        ("log.json".to_string(), log_json),
        ("record.json".to_string(), serde_json::to_vec_pretty(&meta).expect("record serializes")),
    ];
    let lock = store.lock(id);
    let _guard = lock.read().unwrap();
    let target = store.dataset_dir(id).join("submissions").join(&sid);
    if !store.commit_dir(&target, &files)? {
        return load_submission(store, id, &sid);
    }
    Ok(SubmissionRecord { meta, mask: mask.clone(), log: log.clone() })
}

pub fn submission_ids(store: &Store, id: &str) -> Result<Vec<String>> {
    store.read_meta(id)?;
    store.list(id, "submissions")
}

pub fn load_submission(store: &Store, id: &str, sid: &str) -> Result<SubmissionRecord> {
    if !crate::store::check_id(sid) || !store.exists(id) {
        return Err(GatewayError::UnknownSubmission(sid.to_string()));
    }
    let read = |name: &str| {
        store.read(id, &format!("submissions/{sid}/{name}")).map_err(|e| match e {
            GatewayError::Io(_) => GatewayError::UnknownSubmission(sid.to_string()),
            other => other,
        })
    };
    let meta = serde_json::from_slice(&read("record.json")?).map_err(|e| GatewayError::Io(std::io::Error::other(e)))?;
    Ok(SubmissionRecord { meta, mask: load_mask(&read("mask.png")?)?, log: SessionLog::from_json(&read("log.json")?)? })
}

fn submission_masks(store: &Store, id: &str, skip: Option<&str>) -> Result<Vec<AnnotationMask>> {
    submission_ids(store, id)?
        .iter()
        .filter(|sid| Some(sid.as_str()) != skip)
        .map(|sid| Ok(load_mask(&store.read(id, &format!("submissions/{sid}/mask.png"))?)?))
        .collect()
}

pub fn save_correction(store: &Store, id: &str, correction: &AnnotationMask) -> Result<()> {
    let meta = store.read_meta(id)?;
    if correction.dims().width != meta.width || correction.dims().height != meta.height {
        return Err(GatewayError::DimensionMismatch(format!("correction {} vs dataset", correction.dims())));
    }
    let lock = store.lock(id);
    let _guard = lock.write().unwrap();
    store.write_file(&store.dataset_dir(id).join("correction.png"), &save_mask(correction)?)
}

pub fn load_correction(store: &Store, id: &str) -> Result<Option<AnnotationMask>> {
    store.read_meta(id)?;
    let path = store.dataset_dir(id).join("correction.png");
    if !path.is_file() {
        return Ok(None);
    }
    Ok(Some(load_mask(&std::fs::read(path)?)?))
}

#[derive(Debug, Clone)]
pub struct Aggregation {
    /// After the certainty threshold.
    pub mean: MeanMap,
    pub variance: VarianceMap,
    /// After the correction, if any.
    pub soft: SoftLabelMap,
    pub binarized: AnnotationMask,
}

/// mean/variance, soft labels, optional correction, binarization.
pub fn aggregate_masks(masks: Vec<AnnotationMask>, correction: Option<&AnnotationMask>, tau: f64) -> Result<Aggregation> {
    if masks.is_empty() {
        return Err(GatewayError::NoSubmissions);
    }
    let set = AnnotationSet::new(masks)?;
    let mean = apply_certainty_threshold(&mean_map(&set), tau)?;
    let variance = variance_map(&set);
    let mut soft = soft_labels(&set);
    if let Some(c) = correction {
        soft = apply_correction(&soft, c)?;
    }
    let binarized = binarize(&soft);
    Ok(Aggregation { mean, variance, soft, binarized })
}

pub fn aggregate_dataset(
    store: &Store,
    id: &str,
    correction: Option<&AnnotationMask>,
    tau: f64,
) -> Result<Aggregation> {
    aggregate_masks(submission_masks(store, id, None)?, correction, tau)
}

pub fn overlay(store: &Store, id: &str, view: OverlayView, tau: f64) -> Result<RgbaRaster> {
    let set = AnnotationSet::new(submission_masks(store, id, None)?).map_err(|e| match e {
        floodmap_core::aggregate::AggregateError::EmptySet => GatewayError::NoSubmissions,
        other => other.into(),
    })?;
    let spec = OverlaySpec { view, tau };
    let raster = match view {
        OverlayView::Aggregate => render_overlay(OverlaySource::Mean(&mean_map(&set)), spec)?,
        OverlayView::Variance => render_overlay(OverlaySource::Variance(&variance_map(&set)), spec)?,
    };
    Ok(raster)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionScore {
    pub id: String,
    pub metrics: QualityMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub reference: String,
    /// Binarized aggregate of the other submissions, with the stored
    /// correction applied.
    pub aggregate: QualityMetrics,
    pub submissions: Vec<SubmissionScore>,
}

/// Scores every other submission and their aggregate against one
/// submission taken as the reference labeling.
pub fn metrics(store: &Store, id: &str, reference: &str, tau: f64) -> Result<MetricsReport> {
    let reference_mask = load_submission(store, id, reference)?.mask;
    let others: Vec<String> = submission_ids(store, id)?.into_iter().filter(|s| s != reference).collect();
    let masks = submission_masks(store, id, Some(reference))?;
    let correction = load_correction(store, id)?;
    let agg = aggregate_masks(masks.clone(), correction.as_ref(), tau)?;
    let submissions = others
        .into_iter()
        .zip(&masks)
        .map(|(sid, m)| Ok(SubmissionScore { id: sid, metrics: score(m, &reference_mask)? }))
        .collect::<Result<_>>()?;
    Ok(MetricsReport { reference: reference.to_string(), aggregate: score(&agg.binarized, &reference_mask)?, submissions })
}

/// Row-major little-endian `f64` samples.
pub fn f64_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}
