//! Parallel-beam forward model: line-integral projection, its exact adjoint,
//! Beer–Lambert attenuation, a ramp-filtered backprojection baseline and a
//! null-space witness for the biplanar system.

mod fbp;
mod geometry;
mod nullspace;
mod siddon;

use std::path::Path;

use thiserror::Error;

pub use fbp::{fbp, fbp_two_view, ramp_filter_rows};
pub use geometry::{project_point, BiplanarGeometry, DetectorSpec, Vec3, ViewId, ViewPose};
pub use nullspace::{null_space_witness, system_matrix, NullSpaceWitness};
pub use siddon::{ray_segments, Segment};

use crate::volume::spvol::{self, DType, Header, Payload};
use crate::volume::{Dims, Spacing, VolumeError, VolumeGeometry, VoxelGrid};

#[derive(Debug, Error)]
pub enum ProjectorError {
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("no null-space witness: system matrix has full column rank {0}")]
    NoWitness(usize),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Log-domain detector image `p(u, v)`, u fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub pose: ViewPose,
    pub detector: DetectorSpec,
    pub log_values: Vec<f64>,
}

impl Projection {
    pub fn zeros(pose: ViewPose, detector: DetectorSpec) -> Self {
        Self { pose, detector, log_values: vec![0.0; detector.pixels()] }
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.log_values[a + self.detector.nu * b]
    }

    /// Per-image min–max scaling to `[0, 1]`; a flat image maps to zeros.
    pub fn normalized(&self) -> Vec<f64> {
        min_max_scale(&self.log_values)
    }

    /// Stores as an `SPVOL` slice with `nz = 1`.
    pub fn save(&self, path: &Path) -> Result<(), ProjectorError> {
        let header = Header {
            dims: Dims::new(self.detector.nu, self.detector.nv, 1),
            spacing: Spacing::new(self.detector.pitch_u, self.detector.pitch_v, 1.0),
            dtype: DType::F32,
        };
        let payload = Payload::F32(self.log_values.iter().map(|&v| v as f32).collect());
        Ok(spvol::write_file(path, &header, &payload)?)
    }

    /// Loads a projection slice and attaches the pose it was simulated with.
    pub fn load(path: &Path, pose: ViewPose) -> Result<Self, ProjectorError> {
        let (h, p) = spvol::read_file(path)?;
        let Payload::F32(v) = p else {
            return Err(VolumeError::WrongDType { path: path.display().to_string(), expected: "f32" }.into());
        };
        if h.dims.nz != 1 {
            return Err(ProjectorError::Geometry(format!("projection file has nz = {}", h.dims.nz)));
        }
        let detector = DetectorSpec::new(h.dims.nx, h.dims.ny, h.spacing.sx, h.spacing.sy)?;
        Ok(Self { pose, detector, log_values: v.into_iter().map(f64::from).collect() })
    }
}

pub fn min_max_scale(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Line integrals of an attenuation array laid out on `geom` (x fastest).
pub fn forward_project(
    values: &[f64],
    geom: &VolumeGeometry,
    pose: &ViewPose,
    det: &DetectorSpec,
    workers: usize,
) -> Result<Vec<f64>, ProjectorError> {
    pose.validate()?;
    det.validate()?;
    if values.len() != geom.dims.len() {
        return Err(ProjectorError::Geometry(format!(
            "volume has {} values, geometry {} needs {}",
            values.len(),
            geom.dims,
            geom.dims.len()
        )));
    }
    let (segs, spans) = siddon::trace_all(geom, pose, det, workers);
    Ok(spans
        .iter()
        .map(|&(a, b)| segs[a..b].iter().map(|s| values[s.voxel] * s.length).sum())
        .collect())
}

/// Transpose of [`forward_project`]: spreads each pixel value along its ray with
/// the same intersection-length weights. Accumulation runs in pixel order, so
/// the result does not depend on `workers`.
pub fn back_project(
    pixels: &[f64],
    geom: &VolumeGeometry,
    pose: &ViewPose,
    det: &DetectorSpec,
    workers: usize,
) -> Result<Vec<f64>, ProjectorError> {
    pose.validate()?;
    det.validate()?;
    if pixels.len() != det.pixels() {
        return Err(ProjectorError::Geometry(format!(
            "projection has {} values, detector needs {}",
            pixels.len(),
            det.pixels()
        )));
    }
    let (segs, spans) = siddon::trace_all(geom, pose, det, workers);
    let mut acc = vec![0.0; geom.dims.len()];
    for (p, &(a, b)) in spans.iter().enumerate() {
        let y = pixels[p];
        if y == 0.0 {
            continue;
        }
        for s in &segs[a..b] {
            acc[s.voxel] += y * s.length;
        }
    }
    Ok(acc)
}

/// Simulated log projection of `grid` for one view.
pub fn project_parallel(grid: &VoxelGrid, pose: &ViewPose, det: &DetectorSpec) -> Result<Projection, ProjectorError> {
    project_parallel_with(grid, pose, det, 1)
}

pub fn project_parallel_with(
    grid: &VoxelGrid,
    pose: &ViewPose,
    det: &DetectorSpec,
    workers: usize,
) -> Result<Projection, ProjectorError> {
    let log_values = forward_project(&grid.to_f64(), &grid.geometry(), pose, det, workers)?;
    Ok(Projection { pose: *pose, detector: *det, log_values })
}

/// Adjoint of [`project_parallel`] onto a voxel-shaped accumulator.
pub fn backproject(p: &Projection, dims: Dims, spacing: Spacing) -> Result<Vec<f64>, ProjectorError> {
    let geom = VolumeGeometry::new(dims, spacing)?;
    back_project(&p.log_values, &geom, &p.pose, &p.detector, 1)
}

/// Beer–Lambert: `I = I0 · exp(−p)`.
pub fn attenuate(p: &Projection, i0: f64) -> Result<Vec<f64>, ProjectorError> {
    if !(i0 > 0.0) || !i0.is_finite() {
        return Err(ProjectorError::Domain(format!("incident intensity {i0} must be positive")));
    }
    Ok(p.log_values.iter().map(|&v| i0 * (-v).exp()).collect())
}

/// Inverse of [`attenuate`]: `p = −ln(I / I0)`.
pub fn log_transform(intensity: &[f64], i0: f64) -> Result<Vec<f64>, ProjectorError> {
    if !(i0 > 0.0) || !i0.is_finite() {
        return Err(ProjectorError::Domain(format!("incident intensity {i0} must be positive")));
    }
    if let Some(v) = intensity.iter().find(|v| !(**v > 0.0)) {
        return Err(ProjectorError::Domain(format!("measured intensity {v} must be positive")));
    }
    Ok(intensity.iter().map(|&v| -(v / i0).ln()).collect())
}
