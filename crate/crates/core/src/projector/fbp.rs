use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::geometry::{dot, project_point};
use super::{Projection, ProjectorError};
use crate::volume::{Dims, Spacing, VolumeGeometry, VoxelGrid};

/// Applies the ramp filter `|ω|` along u to every detector row.
///
/// Rows are zero-padded to the next power of two ≥ 2·nu. The frequency
/// response is the DFT of the band-limited spatial ramp kernel
/// (`h[0] = 1/4τ²`, `h[odd n] = −1/(nπτ)²`), which avoids the DC bias of
/// sampling `|ω|` directly. Output carries units of a density (per mm).
pub fn ramp_filter_rows(values: &[f64], nu: usize, nv: usize, pitch_u: f64) -> Vec<f64> {
    let n = (2 * nu).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let tau = pitch_u;
    let mut kernel: Vec<Complex<f64>> = (0..n)
        .map(|i| {
            let m = if i <= n / 2 { i as i64 } else { i as i64 - n as i64 };
            let h = if m == 0 {
                1.0 / (4.0 * tau * tau)
            } else if m % 2 != 0 {
                -1.0 / ((m as f64) * std::f64::consts::PI * tau).powi(2)
            } else {
                0.0
            };
            Complex::new(h * tau, 0.0)
        })
        .collect();
    fwd.process(&mut kernel);
    let ramp: Vec<f64> = kernel.iter().map(|c| c.re).collect();
    let mut out = vec![0.0; nu * nv];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for b in 0..nv {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for a in 0..nu {
            buf[a].re = values[a + nu * b];
        }
        fwd.process(&mut buf);
        for (c, r) in buf.iter_mut().zip(&ramp) {
            *c *= *r;
        }
        inv.process(&mut buf);
        for a in 0..nu {
            out[a + nu * b] = buf[a].re / n as f64;
        }
    }
    out
}

fn sample_bilinear(img: &[f64], nu: usize, nv: usize, u: f64, v: f64) -> f64 {
    if u < 0.0 || v < 0.0 || u > (nu - 1) as f64 || v > (nv - 1) as f64 {
        return 0.0;
    }
    let a0 = (u.floor() as usize).min(nu - 2);
    let b0 = (v.floor() as usize).min(nv - 2);
    let fu = u - a0 as f64;
    let fv = v - b0 as f64;
    let at = |a: usize, b: usize| img[a + nu * b];
    (1.0 - fu) * (1.0 - fv) * at(a0, b0)
        + fu * (1.0 - fv) * at(a0 + 1, b0)
        + (1.0 - fu) * fv * at(a0, b0 + 1)
        + fu * fv * at(a0 + 1, b0 + 1)
}

/// Filtered backprojection from any set of parallel views rotated about a
/// common axis: ramp-filter each view along u, backproject by interpolating
/// the filtered image at every voxel centre, and scale by π / views.
/// The result is not clamped.
pub fn fbp(views: &[&Projection], geom: &VolumeGeometry) -> Result<Vec<f64>, ProjectorError> {
    if views.is_empty() {
        return Err(ProjectorError::Geometry("filtered backprojection needs at least one view".into()));
    }
    let mut acc = vec![0.0; geom.dims.len()];
    for p in views {
        p.pose.validate()?;
        let det = &p.detector;
        let q = ramp_filter_rows(&p.log_values, det.nu, det.nv, det.pitch_u);
        for (idx, slot) in acc.iter_mut().enumerate() {
            let (i, j, k) = geom.dims.coords(idx);
            let (u, v) = project_point(&p.pose, det, geom.voxel_center_mm(i, j, k));
            *slot += sample_bilinear(&q, det.nu, det.nv, u, v);
        }
    }
    let scale = std::f64::consts::PI / views.len() as f64;
    acc.iter_mut().for_each(|x| *x *= scale);
    Ok(acc)
}

/// Two-view analytic baseline clamped into `[0, 1]`.
pub fn fbp_two_view(p_pa: &Projection, p_lat: &Projection, dims: Dims, spacing: Spacing) -> Result<VoxelGrid, ProjectorError> {
    let c = dot(p_pa.pose.ray_direction, p_lat.pose.ray_direction);
    if c.abs() > 1e-9 {
        return Err(ProjectorError::Geometry(format!("views are not orthogonal (cos = {c})")));
    }
    let geom = VolumeGeometry::new(dims, spacing)?;
    let rec = fbp(&[p_pa, p_lat], &geom)?;
    Ok(VoxelGrid::from_clamped(dims, spacing, rec)?)
}
