use super::EvalError;
use crate::volume::{Dims, LabelGrid, Spacing, VoxelGrid};

fn same_dims(a: Dims, b: Dims) -> Result<(), EvalError> {
    if a != b {
        return Err(EvalError::Shape(format!("dims {a} and {b} differ")));
    }
    Ok(())
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// `10·log₁₀(range² / MSE)`; identical inputs give `f64::INFINITY`.
pub fn psnr_values(a: &[f64], b: &[f64], data_range: f64) -> Result<f64, EvalError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(EvalError::Shape(format!("value counts {} and {} differ or are empty", a.len(), b.len())));
    }
    let m = mse(a, b);
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / m).log10())
}

pub fn psnr(a: &VoxelGrid, b: &VoxelGrid, data_range: f64) -> Result<f64, EvalError> {
    same_dims(a.dims, b.dims)?;
    psnr_values(&a.to_f64(), &b.to_f64(), data_range)
}

const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_WIN: usize = 11;

fn gaussian_kernel(radius: usize, sigma: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-0.5 * x * x / (sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter evaluated only where the window fits; output is
/// `(nx − 2r) × (ny − 2r)`, x fastest.
fn filter_valid(img: &[f64], nx: usize, ny: usize, k: &[f64]) -> Vec<f64> {
    let r = k.len() / 2;
    let (vx, vy) = (nx - 2 * r, ny - 2 * r);
    let mut tmp = vec![0.0; vx * ny];
    for y in 0..ny {
        for x in 0..vx {
            tmp[y * vx + x] = k.iter().enumerate().map(|(t, &w)| w * img[y * nx + x + t]).sum();
        }
    }
    let mut out = vec![0.0; vx * vy];
    for y in 0..vy {
        for x in 0..vx {
            out[y * vx + x] = k.iter().enumerate().map(|(t, &w)| w * tmp[(y + t) * vx + x]).sum();
        }
    }
    out
}

/// Mean SSIM of one 2D slice over the region where the whole window fits.
pub fn ssim_2d(a: &[f64], b: &[f64], nx: usize, ny: usize, data_range: f64) -> f64 {
    let mut win = SSIM_WIN.min(nx).min(ny);
    if win % 2 == 0 {
        win -= 1;
    }
    if win < SSIM_WIN {
        log::warn!("SSIM window shrunk to {win}×{win} for a {nx}×{ny} slice");
    }
    let k = gaussian_kernel(win / 2, SSIM_SIGMA);
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
    let ux = filter_valid(a, nx, ny, &k);
    let uy = filter_valid(b, nx, ny, &k);
    let uxx = filter_valid(&prod(a, a), nx, ny, &k);
    let uyy = filter_valid(&prod(b, b), nx, ny, &k);
    let uxy = filter_valid(&prod(a, b), nx, ny, &k);
    let mut total = 0.0;
    for i in 0..ux.len() {
        let vx = uxx[i] - ux[i] * ux[i];
        let vy = uyy[i] - uy[i] * uy[i];
        let vxy = uxy[i] - ux[i] * uy[i];
        total += ((2.0 * ux[i] * uy[i] + c1) * (2.0 * vxy + c2)) / ((ux[i] * ux[i] + uy[i] * uy[i] + c1) * (vx + vy + c2));
    }
    total / ux.len() as f64
}

/// Slice-wise (constant z) SSIM averaged over slices, data range 1.
pub fn ssim(a: &VoxelGrid, b: &VoxelGrid) -> Result<f64, EvalError> {
    same_dims(a.dims, b.dims)?;
    let d = a.dims;
    let (fa, fb) = (a.to_f64(), b.to_f64());
    let plane = d.nx * d.ny;
    let mut total = 0.0;
    for z in 0..d.nz {
        total += ssim_2d(&fa[z * plane..(z + 1) * plane], &fb[z * plane..(z + 1) * plane], d.nx, d.ny, 1.0);
    }
    Ok(total / d.nz as f64)
}

/// `2|A∩B| / (|A| + |B|)`, defined as 1 when both masks are empty.
pub fn dice_masks(a: &[bool], b: &[bool]) -> f64 {
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    }
    if na + nb == 0 {
        return 1.0;
    }
    2.0 * inter as f64 / (na + nb) as f64
}

pub fn dice_metric(pred: &LabelGrid, truth: &LabelGrid, class: u16) -> Result<f64, EvalError> {
    same_dims(pred.dims, truth.dims)?;
    Ok(dice_masks(&pred.mask(class), &truth.mask(class)))
}

/// Mask voxels with at least one 6-neighbour outside the mask; the grid
/// border counts as outside.
pub fn boundary_voxels(mask: &[bool], dims: Dims) -> Vec<usize> {
    let mut out = Vec::new();
    for idx in 0..dims.len() {
        if !mask[idx] {
            continue;
        }
        let (i, j, k) = dims.coords(idx);
        let edge = i == 0 || j == 0 || k == 0 || i + 1 == dims.nx || j + 1 == dims.ny || k + 1 == dims.nz;
        let open = edge
            || !mask[dims.index(i - 1, j, k)]
            || !mask[dims.index(i + 1, j, k)]
            || !mask[dims.index(i, j - 1, k)]
            || !mask[dims.index(i, j + 1, k)]
            || !mask[dims.index(i, j, k - 1)]
            || !mask[dims.index(i, j, k + 1)];
        if open {
            out.push(idx);
        }
    }
    out
}

/// 1D squared distance transform (lower envelope of parabolas) with sample
/// spacing `h`, in place.
fn edt_1d(f: &mut [f64], h: f64, v: &mut Vec<usize>, z: &mut Vec<f64>, out: &mut Vec<f64>) {
    let n = f.len();
    v.clear();
    z.clear();
    out.clear();
    let pos = |q: usize| q as f64 * h;
    let first = match (0..n).find(|&q| f[q].is_finite()) {
        Some(q) => q,
        None => return,
    };
    v.push(first);
    z.push(f64::NEG_INFINITY);
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = *v.last().expect("envelope is non-empty");
            let s = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
            if s <= *z.last().expect("envelope is non-empty") {
                v.pop();
                z.pop();
                if v.is_empty() {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
            } else {
                v.push(q);
                z.push(s);
                break;
            }
        }
    }
    let mut k = 0;
    for q in 0..n {
        while k + 1 < v.len() && z[k + 1] < pos(q) {
            k += 1;
        }
        let d = pos(q) - pos(v[k]);
        out.push(d * d + f[v[k]]);
    }
    f.copy_from_slice(out);
}

/// Exact Euclidean distance (mm) from every voxel centre to the nearest
/// `sites` voxel centre. Empty `sites` gives all infinities.
pub fn distance_transform(sites: &[usize], dims: Dims, spacing: Spacing) -> Vec<f64> {
    let mut d = vec![f64::INFINITY; dims.len()];
    for &s in sites {
        d[s] = 0.0;
    }
    if sites.is_empty() {
        return d;
    }
    let (mut v, mut z, mut out) = (Vec::new(), Vec::new(), Vec::new());
    let mut line = Vec::new();
    let n = dims.as_array();
    let h = spacing.as_array();
    let strides = [1, dims.nx, dims.nx * dims.ny];
    for axis in 0..3 {
        let (a1, a2) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for p in 0..n[a1] {
            for q in 0..n[a2] {
                let base = p * strides[a1] + q * strides[a2];
                line.clear();
                line.extend((0..n[axis]).map(|t| d[base + t * strides[axis]]));
                edt_1d(&mut line, h[axis], &mut v, &mut z, &mut out);
                for t in 0..n[axis] {
                    d[base + t * strides[axis]] = line[t];
                }
            }
        }
    }
    d.iter().map(|x| x.sqrt()).collect()
}

/// Linear-interpolated percentile (`q` in `[0, 100]`) of unsorted values.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let pos = (s.len() - 1) as f64 * q / 100.0;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

/// Directed nearest-surface distances in both directions, or `None` if
/// either surface is empty.
pub fn surface_distances(a: &[bool], b: &[bool], dims: Dims, spacing: Spacing) -> Option<(Vec<f64>, Vec<f64>)> {
    let sa = boundary_voxels(a, dims);
    let sb = boundary_voxels(b, dims);
    if sa.is_empty() || sb.is_empty() {
        return None;
    }
    let da = distance_transform(&sa, dims, spacing);
    let db = distance_transform(&sb, dims, spacing);
    Some((sa.iter().map(|&i| db[i]).collect(), sb.iter().map(|&i| da[i]).collect()))
}

fn sentinel(dims: Dims, spacing: Spacing, what: &str) -> f64 {
    let e = [dims.nx as f64 * spacing.sx, dims.ny as f64 * spacing.sy, dims.nz as f64 * spacing.sz];
    log::warn!("{what} undefined for an empty mask; reporting the grid diagonal");
    (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt()
}

/// Symmetric 95th-percentile Hausdorff distance between mask surfaces (mm).
pub fn hd95(a: &[bool], b: &[bool], dims: Dims, spacing: Spacing) -> f64 {
    match surface_distances(a, b, dims, spacing) {
        Some((ab, ba)) => percentile(&ab, 95.0).max(percentile(&ba, 95.0)),
        None => sentinel(dims, spacing, "HD95"),
    }
}

/// Mean of the two directed mean surface distances (mm).
pub fn chamfer(a: &[bool], b: &[bool], dims: Dims, spacing: Spacing) -> f64 {
    match surface_distances(a, b, dims, spacing) {
        Some((ab, ba)) => {
            let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            0.5 * (m(&ab) + m(&ba))
        }
        None => sentinel(dims, spacing, "Chamfer distance"),
    }
}
