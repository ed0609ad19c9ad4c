//! 8-bit grayscale previews with per-image min–max scaling.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::projector::min_max_scale;
use crate::volume::Dims;

#[derive(Debug, thiserror::Error)]
pub enum PngError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Encode { path: String, source: png::EncodingError },
}

/// Writes a `width × height` image (row-major, first row on top).
pub fn write_gray(path: &Path, values: &[f64], width: usize, height: usize) -> Result<(), PngError> {
    assert_eq!(values.len(), width * height, "image buffer does not match its size");
    let p = || path.display().to_string();
    let file = File::create(path).map_err(|e| PngError::Io { path: p(), source: e })?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = min_max_scale(values).iter().map(|v| (v * 255.0).round() as u8).collect();
    let mut w = enc.write_header().map_err(|e| PngError::Encode { path: p(), source: e })?;
    w.write_image_data(&bytes).map_err(|e| PngError::Encode { path: p(), source: e })?;
    w.finish().map_err(|e| PngError::Encode { path: p(), source: e })
}

/// Central axial (xy), coronal (xz) and sagittal (yz) slices of a grid,
/// each as `(name, width, height, values)`. Superior is drawn at the top.
pub fn mid_slices(values: &[f64], dims: Dims) -> Vec<(&'static str, usize, usize, Vec<f64>)> {
    let (cx, cy, cz) = (dims.nx / 2, dims.ny / 2, dims.nz / 2);
    let at = |i: usize, j: usize, k: usize| values[dims.index(i, j, k)];
    let axial = (0..dims.ny).flat_map(|j| (0..dims.nx).map(move |i| (i, j))).map(|(i, j)| at(i, j, cz)).collect();
    let coronal = (0..dims.nz).rev().flat_map(|k| (0..dims.nx).map(move |i| (i, k))).map(|(i, k)| at(i, cy, k)).collect();
    let sagittal = (0..dims.nz).rev().flat_map(|k| (0..dims.ny).map(move |j| (j, k))).map(|(j, k)| at(cx, j, k)).collect();
    vec![("axial", dims.nx, dims.ny, axial), ("coronal", dims.nx, dims.nz, coronal), ("sagittal", dims.ny, dims.nz, sagittal)]
}
