//! HTTP routes over the pipeline.
//!
//! Per-pixel float maps are row-major little-endian `f64` with `x-width` and
//! `x-height` headers. Segmentation levels are the stored `u32` id files,
//! borders one byte (0 or 1) per pixel. Errors are JSON
//! `{"error": <name>, "message": <text>}`.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use floodmap_core::aggregate::OverlayView;
use floodmap_core::raster::{load_dem, load_dem_filled, load_mask, DemFormat, RawHeader, RgbRaster};
use floodmap_core::session::SessionLog;
use floodmap_core::topo::segment_borders;
use serde::{Deserialize, Serialize};

use crate::error::{GatewayError, Result};
use crate::pipeline::{self, PreprocessParams, Verification};
use crate::store::{DatasetMeta, Store};

/// Upload ceiling for DEM and imagery bodies.
pub const MAX_UPLOAD: usize = 1 << 30;

impl IntoResponse for GatewayError {
    fn into_response(self) -> Response {
        let status = match &self {
            GatewayError::UnknownDataset(_) | GatewayError::UnknownSubmission(_) => StatusCode::NOT_FOUND,
            GatewayError::ReplayMismatch { .. } | GatewayError::DimensionMismatch(_) | GatewayError::Session(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            GatewayError::NoSubmissions => StatusCode::CONFLICT,
            GatewayError::StorageFull(_) => StatusCode::INSUFFICIENT_STORAGE,
            GatewayError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        let body = serde_json::json!({ "error": self.name(), "message": self.to_string() });
        (status, Json(body)).into_response()
    }
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/datasets", post(create_dataset))
        .route("/datasets/{id}", get(dataset_meta))
        .route("/datasets/{id}/mesh", get(mesh))
        .route("/datasets/{id}/imagery", get(imagery))
        .route("/datasets/{id}/segmentation/{level}", get(segmentation))
        .route("/datasets/{id}/borders/{level}", get(borders))
        .route("/datasets/{id}/thresholds", post(add_thresholds))
        .route("/datasets/{id}/annotations", post(submit))
        .route("/datasets/{id}/aggregate/mean", get(mean))
        .route("/datasets/{id}/aggregate/variance", get(variance))
        .route("/datasets/{id}/softlabels", get(softlabels))
        .route("/datasets/{id}/corrections", post(correction))
        .route("/datasets/{id}/overlay", get(overlay))
        .route("/datasets/{id}/metrics", get(metrics))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .with_state(store)
}

pub async fn serve(store: Arc<Store>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(store)).await
}

type AppState = State<Arc<Store>>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> Result<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| GatewayError::Io(std::io::Error::other(e)))?
}

fn binary(content_type: &'static str, body: Vec<u8>, headers: &[(&'static str, String)]) -> Response {
    let mut resp = (StatusCode::OK, body).into_response();
    let h = resp.headers_mut();
    h.insert(header::CONTENT_TYPE, HeaderValue::from_static(content_type));
    for (name, value) in headers {
        h.insert(*name, HeaderValue::from_str(value).expect("header values are ASCII"));
    }
    resp
}

fn dims_headers(width: usize, height: usize) -> Vec<(&'static str, String)> {
    vec![("x-width", width.to_string()), ("x-height", height.to_string())]
}

fn bad(msg: impl Into<String>) -> GatewayError {
    GatewayError::BadRequest(msg.into())
}

/// Optional JSON `params` part of a dataset upload.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct UploadParams {
    thresholds: Option<Vec<f64>>,
    mesh_max_error: Option<f64>,
    max_vertices: Option<usize>,
    fill_nodata: bool,
}

#[derive(Serialize)]
struct Created {
    id: String,
    computed: bool,
    bundle: DatasetMeta,
}

async fn create_dataset(State(store): AppState, mut form: Multipart) -> Result<Response> {
    let (mut dem, mut dem_header, mut imagery, mut params) = (None, None, None, UploadParams::default());
    while let Some(field) = form.next_field().await.map_err(|e| bad(e.to_string()))? {
        let name = field.name().unwrap_or_default().to_string();
        let data = field.bytes().await.map_err(|e| bad(e.to_string()))?;
        match name.as_str() {
            "dem" => dem = Some(data),
            "dem_header" => dem_header = Some(data),
            "imagery" => imagery = Some(data),
            "params" => params = serde_json::from_slice(&data).map_err(|e| bad(format!("params: {e}")))?,
            other => return Err(bad(format!("unexpected form field {other:?}"))),
        }
    }
    let dem = dem.ok_or_else(|| bad("missing dem"))?;
    let imagery = imagery.ok_or_else(|| bad("missing imagery"))?;
    let bundle = blocking(move || {
        let format = match dem_header {
            Some(h) => DemFormat::RawF32(RawHeader::parse(&String::from_utf8_lossy(&h))?),
            None => DemFormat::AsciiGrid,
        };
        let grid = if params.fill_nodata { load_dem_filled(&dem, &format)? } else { load_dem(&dem, &format)? };
        let imagery = RgbRaster::load_png(&imagery)?;
        let defaults = PreprocessParams::default();
        let pp = PreprocessParams {
            thresholds: params.thresholds.unwrap_or(defaults.thresholds),
            mesh_max_error: params.mesh_max_error.unwrap_or(defaults.mesh_max_error),
            max_vertices: params.max_vertices,
        };
        pipeline::preprocess_dataset(&store, &grid, &imagery, &pp)
    })
    .await?;
    let status = if bundle.computed { StatusCode::CREATED } else { StatusCode::OK };
    let body = Created { id: bundle.meta.id.clone(), computed: bundle.computed, bundle: bundle.meta };
    Ok((status, Json(body)).into_response())
}

async fn dataset_meta(State(store): AppState, Path(id): Path<String>) -> Result<Json<DatasetMeta>> {
    Ok(Json(blocking(move || store.read_meta(&id)).await?))
}

#[derive(Deserialize)]
struct MeshQuery {
    format: Option<String>,
}

async fn mesh(State(store): AppState, Path(id): Path<String>, Query(q): Query<MeshQuery>) -> Result<Response> {
    let (file, content_type) = match q.format.as_deref().unwrap_or("obj") {
        "obj" => ("mesh.obj", "model/obj"),
        "stl" => ("mesh.stl", "model/stl"),
        other => return Err(bad(format!("unknown mesh format {other:?}"))),
    };
    let bytes = blocking(move || store.read(&id, file)).await?;
    Ok(binary(content_type, bytes, &[]))
}

async fn imagery(State(store): AppState, Path(id): Path<String>) -> Result<Response> {
    let bytes = blocking(move || store.read(&id, "imagery.png")).await?;
    Ok(binary("image/png", bytes, &[]))
}

async fn segmentation(State(store): AppState, Path((id, level)): Path<(String, usize)>) -> Result<Response> {
    let map = blocking(move || pipeline::load_level(&store, &id, level)).await?;
    let mut headers = dims_headers(map.dims.width, map.dims.height);
    headers.push(("x-epsilon", map.epsilon.to_string()));
    headers.push(("x-segment-count", map.segment_count.to_string()));
    Ok(binary("application/octet-stream", map.to_bytes(), &headers))
}

async fn borders(State(store): AppState, Path((id, level)): Path<(String, usize)>) -> Result<Response> {
    let map = blocking(move || pipeline::load_level(&store, &id, level)).await?;
    let bytes = segment_borders(&map).into_iter().map(u8::from).collect();
    Ok(binary("application/octet-stream", bytes, &dims_headers(map.dims.width, map.dims.height)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ThresholdRequest {
    thresholds: Vec<f64>,
}

async fn add_thresholds(
    State(store): AppState,
    Path(id): Path<String>,
    Json(req): Json<ThresholdRequest>,
) -> Result<Json<DatasetMeta>> {
    Ok(Json(blocking(move || pipeline::append_thresholds(&store, &id, &req.thresholds)).await?))
}

#[derive(Deserialize)]
struct SubmitQuery {
    verify: Option<String>,
}

#[derive(Serialize)]
struct Submitted {
    submission_id: String,
    verified: bool,
    warnings: Vec<String>,
}

async fn submit(
    State(store): AppState,
    Path(id): Path<String>,
    Query(q): Query<SubmitQuery>,
    mut form: Multipart,
) -> Result<Json<Submitted>> {
    let verification = match q.verify.as_deref() {
        None | Some("enforce") => Verification::Enforce,
        Some("warn") => Verification::Warn,
        Some(other) => return Err(bad(format!("verify must be enforce or warn, not {other:?}"))),
    };
    let (mut mask, mut log) = (None, None);
    while let Some(field) = form.next_field().await.map_err(|e| bad(e.to_string()))? {
        let name = field.name().unwrap_or_default().to_string();
        let data = field.bytes().await.map_err(|e| bad(e.to_string()))?;
        match name.as_str() {
            "mask" => mask = Some(data),
            "log" => log = Some(data),
            other => return Err(bad(format!("unexpected form field {other:?}"))),
        }
    }
    let (mask, log) = (mask.ok_or_else(|| bad("missing mask"))?, log.ok_or_else(|| bad("missing log"))?);
    let record = blocking(move || {
        let (mask, log) = (load_mask(&mask)?, SessionLog::from_json(&log)?);
        pipeline::submit_annotation(&store, &id, &mask, &log, verification)
    })
    .await?;
    Ok(Json(Submitted { submission_id: record.meta.id, verified: record.meta.verified, warnings: record.meta.warnings }))
}

#[derive(Deserialize)]
struct TauQuery {
    tau: Option<f64>,
}

async fn aggregation(store: Arc<Store>, id: String, tau: f64) -> Result<pipeline::Aggregation> {
    blocking(move || {
        let correction = pipeline::load_correction(&store, &id)?;
        pipeline::aggregate_dataset(&store, &id, correction.as_ref(), tau)
    })
    .await
}

async fn mean(State(store): AppState, Path(id): Path<String>, Query(q): Query<TauQuery>) -> Result<Response> {
    let agg = aggregation(store, id, q.tau.unwrap_or(0.0)).await?;
    let d = agg.mean.dims;
    Ok(binary("application/octet-stream", pipeline::f64_bytes(&agg.mean.values), &dims_headers(d.width, d.height)))
}

async fn variance(State(store): AppState, Path(id): Path<String>) -> Result<Response> {
    let agg = aggregation(store, id, 0.0).await?;
    let d = agg.variance.dims;
    Ok(binary("application/octet-stream", pipeline::f64_bytes(&agg.variance.values), &dims_headers(d.width, d.height)))
}

/// Flood score per pixel, NaN where no annotation labeled it; the dry score
/// is its complement.
async fn softlabels(State(store): AppState, Path(id): Path<String>) -> Result<Response> {
    let agg = aggregation(store, id, 0.0).await?;
    let d = agg.soft.dims;
    Ok(binary("application/octet-stream", pipeline::f64_bytes(&agg.soft.flood_scores()), &dims_headers(d.width, d.height)))
}

/// Body is a mask PNG; it replaces any earlier correction.
async fn correction(State(store): AppState, Path(id): Path<String>, body: Bytes) -> Result<Json<serde_json::Value>> {
    let labeled = blocking(move || {
        let mask = load_mask(&body)?;
        pipeline::save_correction(&store, &id, &mask)?;
        Ok(mask.labeled_count())
    })
    .await?;
    Ok(Json(serde_json::json!({ "labeled": labeled })))
}

#[derive(Deserialize)]
struct OverlayQuery {
    view: Option<String>,
    tau: Option<f64>,
}

async fn overlay(State(store): AppState, Path(id): Path<String>, Query(q): Query<OverlayQuery>) -> Result<Response> {
    let view = match q.view.as_deref().unwrap_or("aggregate") {
        "aggregate" => OverlayView::Aggregate,
        "variance" => OverlayView::Variance,
        other => return Err(bad(format!("unknown view {other:?}"))),
    };
    let tau = q.tau.unwrap_or(0.0);
    let png = blocking(move || Ok(pipeline::overlay(&store, &id, view, tau)?.to_png()?)).await?;
    Ok(binary("image/png", png, &[]))
}

#[derive(Deserialize)]
struct MetricsQuery {
    reference: String,
    tau: Option<f64>,
}

async fn metrics(
    State(store): AppState,
    Path(id): Path<String>,
    Query(q): Query<MetricsQuery>,
) -> Result<Json<pipeline::MetricsReport>> {
    let tau = q.tau.unwrap_or(0.0);
    Ok(Json(blocking(move || pipeline::metrics(&store, &id, &q.reference, tau)).await?))
}
