//! Dataset store, preprocessing pipeline, HTTP service and CLI plumbing for
//! the floodmap annotation system.
//!
//! Datasets are preprocessed once per content hash into a directory of
//! module-format files ([`store`]). Submissions are verified by replaying
//! their session log before they are stored ([`pipeline`]). [`http`] serves
//! the same operations over axum.

pub mod error;
pub mod http;
pub mod pipeline;
pub mod store;

pub use error::{GatewayError, Result};
pub use pipeline::{
    aggregate_dataset, append_thresholds, preprocess_dataset, submit_annotation, Aggregation, DatasetBundle,
    PreprocessParams, SubmissionRecord, Verification,
};
pub use store::{DatasetMeta, Store};
