//! `SPVOL 1` volume files.
//!
//! ```text
//! SPVOL 1\n
//! dims <nx> <ny> <nz>\n
//! spacing <sx> <sy> <sz>\n
//! dtype f32|u16\n
//! <nx·ny·nz little-endian elements, x fastest>
//! ```
//!
//! The payload starts on the byte after the `dtype` line's newline. `f32`
//! carries intensities (or projections, with `nz = 1`), `u16` carries labels.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::grid::{Dims, LabelGrid, Spacing, VoxelGrid};
use super::VolumeError;

pub const MAGIC: &str = "SPVOL 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    U16,
}

impl DType {
    fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::U16 => "u16",
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::U16 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub dims: Dims,
    pub spacing: Spacing,
    pub dtype: DType,
}

/// Raw decoded payload.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    U16(Vec<u16>),
}

pub fn encode(header: &Header, payload: &Payload) -> Vec<u8> {
    let mut out = Vec::new();
    let d = header.dims;
    let s = header.spacing;
    let _ = write!(
        out,
        "{MAGIC}\ndims {} {} {}\nspacing {} {} {}\ndtype {}\n",
        d.nx,
        d.ny,
        d.nz,
        s.sx,
        s.sy,
        s.sz,
        header.dtype.name()
    );
    match payload {
        Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        Payload::U16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

fn header_line<R: BufRead>(r: &mut R, what: &str) -> Result<String, VolumeError> {
    let mut line = String::new();
    let n = r.read_line(&mut line).map_err(|e| VolumeError::MalformedHeader(format!("{what}: {e}")))?;
    if n == 0 || !line.ends_with('\n') {
        return Err(VolumeError::MalformedHeader(format!("missing {what} line")));
    }
    line.pop();
    Ok(line)
}

fn fields<T: std::str::FromStr>(line: &str, key: &str) -> Result<[T; 3], VolumeError> {
    let mut parts = line.split(' ');
    if parts.next() != Some(key) {
        return Err(VolumeError::MalformedHeader(format!("expected `{key}` line, found {line:?}")));
    }
    let vals: Vec<T> = parts
        .map(|p| p.parse::<T>().map_err(|_| VolumeError::MalformedHeader(format!("bad {key} value {p:?}"))))
        .collect::<Result<_, _>>()?;
    vals.try_into().map_err(|_| VolumeError::MalformedHeader(format!("`{key}` needs 3 values")))
}

pub fn decode(bytes: &[u8]) -> Result<(Header, Payload), VolumeError> {
    let mut r = BufReader::new(bytes);
    let magic = header_line(&mut r, "magic")?;
    if magic != MAGIC {
        if let Some(v) = magic.strip_prefix("SPVOL ") {
            return Err(VolumeError::UnsupportedVersion(v.to_string()));
        }
        return Err(VolumeError::MalformedHeader(format!("bad magic {magic:?}")));
    }
    let [nx, ny, nz] = fields::<usize>(&header_line(&mut r, "dims")?, "dims")?;
    let [sx, sy, sz] = fields::<f64>(&header_line(&mut r, "spacing")?, "spacing")?;
    let dtype = match header_line(&mut r, "dtype")?.as_str() {
        "dtype f32" => DType::F32,
        "dtype u16" => DType::U16,
        other => return Err(VolumeError::MalformedHeader(format!("bad dtype line {other:?}"))),
    };
    let dims = Dims::new(nx, ny, nz);
    let spacing = Spacing::new(sx, sy, sz);
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(VolumeError::MalformedHeader(format!("zero dimension in {dims}")));
    }
    spacing.validate()?;
    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(|e| VolumeError::MalformedHeader(e.to_string()))?;
    let width = dtype.width();
    if body.len() % width != 0 {
        return Err(VolumeError::PayloadMismatch { expected_bytes: dims.len() * width, found_bytes: body.len() });
    }
    let count = body.len() / width;
    if count < dims.len() {
        return Err(VolumeError::PayloadMismatch { expected_bytes: dims.len() * width, found_bytes: body.len() });
    }
    if count != dims.len() {
        return Err(VolumeError::DimensionMismatch { expected: dims.len(), found: count });
    }
    let payload = match dtype {
        DType::F32 => Payload::F32(body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()),
        DType::U16 => Payload::U16(body.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect()),
    };
    Ok((Header { dims, spacing, dtype }, payload))
}

pub fn write_file(path: &Path, header: &Header, payload: &Payload) -> Result<(), VolumeError> {
    let mut f = fs::File::create(path).map_err(|e| VolumeError::io(path, e))?;
    f.write_all(&encode(header, payload)).map_err(|e| VolumeError::io(path, e))
}

pub fn read_file(path: &Path) -> Result<(Header, Payload), VolumeError> {
    let bytes = fs::read(path).map_err(|e| VolumeError::io(path, e))?;
    decode(&bytes)
}

pub fn save_volume(path: &Path, grid: &VoxelGrid) -> Result<(), VolumeError> {
    let header = Header { dims: grid.dims, spacing: grid.spacing, dtype: DType::F32 };
    write_file(path, &header, &Payload::F32(grid.values().to_vec()))
}

pub fn save_labels(path: &Path, grid: &LabelGrid) -> Result<(), VolumeError> {
    let header = Header { dims: grid.dims, spacing: grid.spacing, dtype: DType::U16 };
    write_file(path, &header, &Payload::U16(grid.labels().to_vec()))
}

/// Either kind of grid, as stored.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedGrid {
    Intensity(VoxelGrid),
    Labels(LabelGrid),
}

pub fn load_volume(path: &Path) -> Result<LoadedGrid, VolumeError> {
    let (h, p) = read_file(path)?;
    match p {
        Payload::F32(v) => Ok(LoadedGrid::Intensity(VoxelGrid::from_values(h.dims, h.spacing, v)?)),
        Payload::U16(v) => {
            let classes = v.iter().copied().max().unwrap_or(0).max(1);
            Ok(LoadedGrid::Labels(LabelGrid::from_labels(h.dims, h.spacing, classes, v)?))
        }
    }
}

pub fn load_intensity(path: &Path) -> Result<VoxelGrid, VolumeError> {
    match load_volume(path)? {
        LoadedGrid::Intensity(g) => Ok(g),
        LoadedGrid::Labels(_) => Err(VolumeError::WrongDType { path: path.display().to_string(), expected: "f32" }),
    }
}

/// Loads a label grid; `classes` overrides the class count inferred from the data.
pub fn load_labels(path: &Path, classes: Option<u16>) -> Result<LabelGrid, VolumeError> {
    match load_volume(path)? {
        LoadedGrid::Labels(g) => match classes {
            Some(c) => LabelGrid::from_labels(g.dims, g.spacing, c, g.labels().to_vec()),
            None => Ok(g),
        },
        LoadedGrid::Intensity(_) => Err(VolumeError::WrongDType { path: path.display().to_string(), expected: "u16" }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(n: usize) -> Header {
        Header { dims: Dims::cube(n), spacing: Spacing::new(0.5, 1.0, 2.25), dtype: DType::F32 }
    }

    #[test]
    fn file_round_trip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.spvol");
        let values: Vec<f32> = (0..512).map(|i| (i as f32 * 0.37).fract()).collect();
        let g = VoxelGrid::from_values(Dims::cube(8), Spacing::new(0.5, 1.0, 2.25), values).unwrap();
        save_volume(&path, &g).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"SPVOL 1\ndims 8 8 8\nspacing 0.5 1 2.25\ndtype f32\n"));
        assert_eq!(load_intensity(&path).unwrap(), g);
    }

    #[test]
    fn truncated_payload_is_reported() {
        let bytes = encode(&header(4), &Payload::F32(vec![0.5; 64]));
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(decode(cut), Err(VolumeError::PayloadMismatch { .. })));
    }

    #[test]
    fn element_count_mismatch_is_reported() {
        let bytes = encode(&header(4), &Payload::F32(vec![0.5; 63]));
        assert!(matches!(decode(&bytes), Err(VolumeError::PayloadMismatch { .. })));
        let bytes = encode(&header(4), &Payload::F32(vec![0.5; 65]));
        assert!(matches!(decode(&bytes), Err(VolumeError::DimensionMismatch { expected: 64, found: 65 })));
    }

    #[test]
    fn header_errors_are_distinct() {
        assert!(matches!(decode(b"SPVOL 2\n"), Err(VolumeError::UnsupportedVersion(v)) if v == "2"));
        assert!(matches!(decode(b"NOPE\n"), Err(VolumeError::MalformedHeader(_))));
        assert!(matches!(decode(b"SPVOL 1\ndims 4 4\n"), Err(VolumeError::MalformedHeader(_))));
        assert!(matches!(
            decode(b"SPVOL 1\ndims 2 2 2\nspacing 1 1 1\ndtype f64\n"),
            Err(VolumeError::MalformedHeader(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn round_trip_is_identity(nx in 2usize..20, ny in 2usize..20, nz in 2usize..20, seed in any::<u32>(), labels in any::<bool>()) {
            let dims = Dims::new(nx, ny, nz);
            let spacing = Spacing::new(0.1 + (seed % 7) as f64 * 0.3, 1.0 / 3.0, 2.0);
            let mut s = seed as u64 | 1;
            let mut next = || { s ^= s << 13; s ^= s >> 7; s ^= s << 17; s };
            let header = Header { dims, spacing, dtype: if labels { DType::U16 } else { DType::F32 } };
            let payload = if labels {
                Payload::U16((0..dims.len()).map(|_| (next() % 5) as u16).collect())
            } else {
                Payload::F32((0..dims.len()).map(|_| (next() % 1_000_001) as f32 / 1e6).collect())
            };
            let (h, p) = decode(&encode(&header, &payload)).unwrap();
            prop_assert_eq!(h, header);
            prop_assert_eq!(p, payload);
        }
    }
}
