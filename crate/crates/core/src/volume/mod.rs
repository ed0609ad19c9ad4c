//! Voxel grids, procedural phantoms and the `SPVOL` file format.

mod grid;
mod phantom;
pub mod spvol;
mod split;

use std::path::Path;

use thiserror::Error;

pub use grid::{nearest_voxel, normalized_coord, Dims, LabelGrid, Spacing, VolumeGeometry, VoxelGrid};
pub use phantom::{generate_phantom, Jitter, PhantomSpec, Primitive, Shape};
pub use split::{subject_id, DatasetSplit};
pub use spvol::{load_intensity, load_labels, load_volume, save_labels, save_volume, LoadedGrid};

use crate::kv::KvError;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("dimensions {0} invalid: every axis needs at least 2 voxels")]
    InvalidDims(Dims),
    #[error("spacing {0:?} invalid: every component must be finite and positive")]
    InvalidSpacing(Spacing),
    #[error("index {index:?} out of bounds for {dims}")]
    IndexOutOfBounds { index: [usize; 3], dims: Dims },
    #[error("value {value} at offset {index} outside [0, 1]")]
    ValueOutOfRange { index: usize, value: f64 },
    #[error("label {label} at offset {index} exceeds class count {classes}")]
    LabelOutOfRange { index: usize, label: u16, classes: u16 },
    #[error("class count {0} invalid: need at least one class")]
    InvalidClassCount(u16),
    #[error("intensity grid {intensity} and label grid {labels} do not pair")]
    PairMismatch { intensity: Dims, labels: Dims },
    #[error("primitive {index}: {reason}")]
    InvalidPrimitive { index: usize, reason: String },
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported SPVOL version {0:?}")]
    UnsupportedVersion(String),
    #[error("payload is {found_bytes} bytes, header requires {expected_bytes}")]
    PayloadMismatch { expected_bytes: usize, found_bytes: usize },
    #[error("header declares {expected} elements, payload holds {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{path}: expected dtype {expected}")]
    WrongDType { path: String, expected: &'static str },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Kv(#[from] KvError),
}

impl VolumeError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        VolumeError::Io { path: path.display().to_string(), source }
    }
}
