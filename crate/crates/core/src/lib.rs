//! Compute core for elevation-guided flood annotation: rasters, topology,
//! selection tools, terrain meshes, label aggregation and session replay.

pub mod aggregate;
pub mod mesh;
pub mod raster;
pub mod select;
pub mod session;
pub mod topo;
pub mod union_find;
