use floodmap_core::aggregate::AggregateError;
use floodmap_core::mesh::MeshError;
use floodmap_core::raster::RasterError;
use floodmap_core::session::SessionError;
use floodmap_core::topo::TopoError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("unknown dataset {0}")]
    UnknownDataset(String),
    #[error("unknown submission {0}")]
    UnknownSubmission(String),
    #[error("submitted mask differs from the replayed log at {differing} pixel(s)")]
    ReplayMismatch { differing: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("dataset has no submissions")]
    NoSubmissions,
    #[error("storage full: {0}")]
    StorageFull(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Topo(#[from] TopoError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error("storage error: {0}")]
    Io(std::io::Error),
}

impl From<std::io::Error> for GatewayError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::StorageFull || e.kind() == std::io::ErrorKind::QuotaExceeded {
            GatewayError::StorageFull(e.to_string())
        } else {
            GatewayError::Io(e)
        }
    }
}

impl GatewayError {
    /// Error name reported by the CLI and the HTTP error body. Wrapped module
    /// errors report their own name.
    pub fn name(&self) -> &'static str {
        match self {
            GatewayError::UnknownDataset(_) => "UnknownDataset",
            GatewayError::UnknownSubmission(_) => "UnknownSubmission",
            GatewayError::ReplayMismatch { .. } => "ReplayMismatch",
            GatewayError::DimensionMismatch(_) => "DimensionMismatch",
            GatewayError::NoSubmissions => "NoSubmissions",
            GatewayError::StorageFull(_) => "StorageFull",
            GatewayError::BadRequest(_) => "BadRequest",
            GatewayError::Raster(e) => e.name(),
            GatewayError::Topo(e) => e.name(),
            GatewayError::Mesh(e) => e.name(),
            GatewayError::Session(e) => e.name(),
            GatewayError::Aggregate(e) => e.name(),
            GatewayError::Io(_) => "StorageError",
        }
    }
}

pub type Result<T, E = GatewayError> = std::result::Result<T, E>;
