use std::fmt;

use super::VolumeError;

/// Voxel counts along x, y and z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Self { nx, ny, nz }
    }

    pub const fn cube(n: usize) -> Self {
        Self::new(n, n, n)
    }

    pub const fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<(), VolumeError> {
        if self.nx < 2 || self.ny < 2 || self.nz < 2 {
            return Err(VolumeError::InvalidDims(*self));
        }
        Ok(())
    }

    /// Linear offset of `(i, j, k)`, x fastest.
    #[inline]
    pub const fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.nx * (j + self.ny * k)
    }

    #[inline]
    pub const fn coords(&self, index: usize) -> (usize, usize, usize) {
        let i = index % self.nx;
        let j = (index / self.nx) % self.ny;
        let k = index / (self.nx * self.ny);
        (i, j, k)
    }

    pub const fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

/// Millimetres per voxel along each axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spacing {
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
}

impl Spacing {
    pub const fn new(sx: f64, sy: f64, sz: f64) -> Self {
        Self { sx, sy, sz }
    }

    pub const fn isotropic(s: f64) -> Self {
        Self::new(s, s, s)
    }

    pub fn validate(&self) -> Result<(), VolumeError> {
        let ok = |s: f64| s.is_finite() && s > 0.0;
        if !(ok(self.sx) && ok(self.sy) && ok(self.sz)) {
            return Err(VolumeError::InvalidSpacing(*self));
        }
        Ok(())
    }

    pub const fn as_array(&self) -> [f64; 3] {
        [self.sx, self.sy, self.sz]
    }
}

impl Default for Spacing {
    fn default() -> Self {
        Self::isotropic(1.0)
    }
}

/// Physical layout of a voxel lattice: the volume occupies
/// `[0, n·s]` on every axis with its corner at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeGeometry {
    pub dims: Dims,
    pub spacing: Spacing,
}

impl VolumeGeometry {
    pub fn new(dims: Dims, spacing: Spacing) -> Result<Self, VolumeError> {
        dims.validate()?;
        spacing.validate()?;
        Ok(Self { dims, spacing })
    }

    /// Extent in millimetres along x, y, z.
    pub fn extent(&self) -> [f64; 3] {
        [
            self.dims.nx as f64 * self.spacing.sx,
            self.dims.ny as f64 * self.spacing.sy,
            self.dims.nz as f64 * self.spacing.sz,
        ]
    }

    pub fn center(&self) -> [f64; 3] {
        let e = self.extent();
        [e[0] / 2.0, e[1] / 2.0, e[2] / 2.0]
    }

    /// Maps a point of the unit cube to millimetres.
    pub fn to_mm(&self, p: [f64; 3]) -> [f64; 3] {
        let e = self.extent();
        [p[0] * e[0], p[1] * e[1], p[2] * e[2]]
    }

    /// Voxel centre in millimetres.
    pub fn voxel_center_mm(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            (i as f64 + 0.5) * self.spacing.sx,
            (j as f64 + 0.5) * self.spacing.sy,
            (k as f64 + 0.5) * self.spacing.sz,
        ]
    }

    pub fn diagonal_mm(&self) -> f64 {
        let e = self.extent();
        (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt()
    }
}

/// Maps a voxel index to its centre in normalised coordinates,
/// `((i+0.5)/nx, (j+0.5)/ny, (k+0.5)/nz)`.
pub fn normalized_coord(index: (usize, usize, usize), dims: Dims) -> Result<[f64; 3], VolumeError> {
    let (i, j, k) = index;
    if i >= dims.nx || j >= dims.ny || k >= dims.nz {
        return Err(VolumeError::IndexOutOfBounds { index: [i, j, k], dims });
    }
    Ok([
        (i as f64 + 0.5) / dims.nx as f64,
        (j as f64 + 0.5) / dims.ny as f64,
        (k as f64 + 0.5) / dims.nz as f64,
    ])
}

/// Voxel containing a normalised point; points on the far face map to the last voxel.
pub fn nearest_voxel(p: [f64; 3], dims: Dims) -> (usize, usize, usize) {
    let pick = |x: f64, n: usize| -> usize {
        let v = (x * n as f64).floor();
        if v < 0.0 {
            0
        } else {
            (v as usize).min(n - 1)
        }
    };
    (pick(p[0], dims.nx), pick(p[1], dims.ny), pick(p[2], dims.nz))
}

/// Scalar intensity field with values in `[0, 1]`, x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub dims: Dims,
    pub spacing: Spacing,
    values: Vec<f32>,
}

impl VoxelGrid {
    pub fn zeros(dims: Dims, spacing: Spacing) -> Result<Self, VolumeError> {
        dims.validate()?;
        spacing.validate()?;
        Ok(Self { dims, spacing, values: vec![0.0; dims.len()] })
    }

    pub fn from_values(dims: Dims, spacing: Spacing, values: Vec<f32>) -> Result<Self, VolumeError> {
        dims.validate()?;
        spacing.validate()?;
        if values.len() != dims.len() {
            return Err(VolumeError::DimensionMismatch { expected: dims.len(), found: values.len() });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(VolumeError::ValueOutOfRange { index: pos, value: values[pos] as f64 });
        }
        Ok(Self { dims, spacing, values })
    }

    /// Builds a grid from arbitrary reals, clamping into `[0, 1]` (NaN becomes 0).
    pub fn from_clamped(dims: Dims, spacing: Spacing, values: impl IntoIterator<Item = f64>) -> Result<Self, VolumeError> {
        let values: Vec<f32> = values
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) as f32 })
            .collect();
        Self::from_values(dims, spacing, values)
    }

    pub fn geometry(&self) -> VolumeGeometry {
        VolumeGeometry { dims: self.dims, spacing: self.spacing }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.values[self.dims.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f32) {
        let idx = self.dims.index(i, j, k);
        self.values[idx] = value.clamp(0.0, 1.0);
    }
}

/// Per-voxel class labels; 0 is background, `1..=classes` are structures.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGrid {
    pub dims: Dims,
    pub spacing: Spacing,
    classes: u16,
    labels: Vec<u16>,
}

impl LabelGrid {
    pub fn zeros(dims: Dims, spacing: Spacing, classes: u16) -> Result<Self, VolumeError> {
        Self::from_labels(dims, spacing, classes, vec![0; dims.len()])
    }

    pub fn from_labels(dims: Dims, spacing: Spacing, classes: u16, labels: Vec<u16>) -> Result<Self, VolumeError> {
        dims.validate()?;
        spacing.validate()?;
        if classes == 0 {
            return Err(VolumeError::InvalidClassCount(classes));
        }
        if labels.len() != dims.len() {
            return Err(VolumeError::DimensionMismatch { expected: dims.len(), found: labels.len() });
        }
        if let Some(pos) = labels.iter().position(|&l| l > classes) {
            return Err(VolumeError::LabelOutOfRange { index: pos, label: labels[pos], classes });
        }
        Ok(Self { dims, spacing, classes, labels })
    }

    /// Foreground class count; labels run over `0..=classes`.
    pub fn classes(&self) -> u16 {
        self.classes
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> u16 {
        self.labels[self.dims.index(i, j, k)]
    }

    pub fn mask(&self, class: u16) -> Vec<bool> {
        self.labels.iter().map(|&l| l == class).collect()
    }

    pub fn count(&self, class: u16) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }

    pub fn ensure_pairs_with(&self, grid: &VoxelGrid) -> Result<(), VolumeError> {
        if self.dims != grid.dims {
            return Err(VolumeError::PairMismatch { intensity: grid.dims, labels: self.dims });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_coord_examples() {
        let d = Dims::cube(2);
        assert_eq!(normalized_coord((0, 0, 0), d).unwrap(), [0.25, 0.25, 0.25]);
        assert_eq!(normalized_coord((1, 1, 1), d).unwrap(), [0.75, 0.75, 0.75]);
        assert!(matches!(normalized_coord((2, 0, 0), d), Err(VolumeError::IndexOutOfBounds { .. })));
    }

    #[test]
    fn normalized_coord_round_trips_exhaustively() {
        let d = Dims::cube(4);
        for k in 0..4 {
            for j in 0..4 {
                for i in 0..4 {
                    let p = normalized_coord((i, j, k), d).unwrap();
                    assert!(p.iter().all(|&c| c > 0.0 && c < 1.0));
                    assert_eq!(nearest_voxel(p, d), (i, j, k));
                }
            }
        }
    }

    #[test]
    fn index_round_trip() {
        let d = Dims::new(3, 4, 5);
        for idx in 0..d.len() {
            let (i, j, k) = d.coords(idx);
            assert_eq!(d.index(i, j, k), idx);
        }
    }

    #[test]
    fn rejects_out_of_range_values_and_labels() {
        let d = Dims::cube(2);
        let s = Spacing::default();
        let mut v = vec![0.0f32; 8];
        v[3] = 1.5;
        assert!(matches!(VoxelGrid::from_values(d, s, v), Err(VolumeError::ValueOutOfRange { index: 3, .. })));
        let mut l = vec![0u16; 8];
        l[5] = 4;
        assert!(matches!(LabelGrid::from_labels(d, s, 3, l), Err(VolumeError::LabelOutOfRange { index: 5, .. })));
        assert!(VoxelGrid::zeros(Dims::new(1, 4, 4), s).is_err());
        assert!(VoxelGrid::zeros(d, Spacing::new(1.0, 0.0, 1.0)).is_err());
    }
}
