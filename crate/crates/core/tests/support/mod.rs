//! Independent reference implementations shared by the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spider_recon::autodiff::{AutodiffError, ParamId, ParamStore, Tape, Tensor, Var};
use spider_recon::eval::ssim_2d;
use spider_recon::projector::{DetectorSpec, ViewId, ViewPose, Vec3};
use spider_recon::volume::{Dims, Spacing, VolumeGeometry};

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values with |x| in [0.1, 1], away from the kinks of abs and relu.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape,
        (0..n)
            .map(|_| {
                let m = rng.gen_range(0.1..1.0);
                if rng.gen_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect(),
    )
    .unwrap()
}

pub fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(0.5..2.0)).collect()).unwrap()
}

/// Reduces an op output to a scalar through a random fixed weighting.
pub fn weighted_sum(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var, AutodiffError> {
    let shape = tape.shape(out)?.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r = tape.constant(rand_tensor(&mut rng, &shape))?;
    let m = tape.mul(out, r)?;
    tape.sum(m)
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn unit(a: Vec3) -> Vec3 {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Random right-handed triad with the detector centred on the volume.
pub fn random_pose(rng: &mut ChaCha8Rng, geom: &VolumeGeometry, det: &DetectorSpec) -> ViewPose {
    let r = |rng: &mut ChaCha8Rng| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    let u = unit(r(rng));
    let t = r(rng);
    let v = unit(cross(cross(u, t), u));
    let c = geom.center();
    let (hu, hv) = ((det.nu as f64 - 1.0) / 2.0 * det.pitch_u, (det.nv as f64 - 1.0) / 2.0 * det.pitch_v);
    let origin = [0, 1, 2].map(|i| c[i] - hu * u[i] - hv * v[i] + rng.gen_range(-0.3..0.3));
    let pose = ViewPose { view_id: ViewId::Custom, ray_direction: cross(u, v), detector_u_axis: u, detector_v_axis: v, detector_origin: origin };
    pose.validate().unwrap();
    pose
}

/// Slab-method chord length of the line `o + t·d` through one voxel box.
pub fn chord(o: Vec3, d: Vec3, lo: Vec3, hi: Vec3) -> f64 {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..3 {
        if d[k].abs() < 1e-12 {
            if o[k] < lo[k] || o[k] >= hi[k] {
                return 0.0;
            }
        } else {
            let (a, b) = ((lo[k] - o[k]) / d[k], (hi[k] - o[k]) / d[k]);
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
    }
    (t1 - t0).max(0.0)
}

pub fn brute_force(values: &[f64], geom: &VolumeGeometry, pose: &ViewPose, det: &DetectorSpec) -> Vec<f64> {
    let s = geom.spacing.as_array();
    let mut out = Vec::new();
    for b in 0..det.nv {
        for a in 0..det.nu {
            let o = pose.pixel_point(det, a as f64, b as f64);
            let mut sum = 0.0;
            for idx in 0..geom.dims.len() {
                let (i, j, k) = geom.dims.coords(idx);
                let lo = [i as f64 * s[0], j as f64 * s[1], k as f64 * s[2]];
                let hi = [lo[0] + s[0], lo[1] + s[1], lo[2] + s[2]];
                sum += values[idx] * chord(o, pose.ray_direction, lo, hi);
            }
            out.push(sum);
        }
    }
    out
}

pub fn random_values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()
}

pub fn lcg(seed: u64, n: usize) -> Vec<f64> {
    let mut x = seed;
    (0..n)
        .map(|_| {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (x >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect()
}

pub fn slice_ssim(a: &[f64], b: &[f64], nx: usize, ny: usize, nz: usize) -> f64 {
    let p = nx * ny;
    (0..nz).map(|z| ssim_2d(&a[z * p..(z + 1) * p], &b[z * p..(z + 1) * p], nx, ny, 1.0)).sum::<f64>() / nz as f64
}

// Values from tests/oracles/ssim_reference.py (scikit-image, Gaussian σ 1.5,
// population covariance, data range 1).
pub const SSIM_REFERENCE: [(usize, usize, usize, u64, f64, f64); 3] = [
    (16, 16, 3, 1, 0.9623399602745947, -0.03734235756633667),
    (20, 13, 2, 2, 0.9591831441097851, -0.08505954018365589),
    (24, 17, 1, 3, 0.9542178954051609, -0.06054866837619942),
];

pub fn oracle_boundary(mask: &[bool], d: Dims) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for k in 0..d.nz {
        for j in 0..d.ny {
            for i in 0..d.nx {
                if !mask[i + d.nx * (j + d.ny * k)] {
                    continue;
                }
                let n = [(-1i64, 0i64, 0i64), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)];
                let open = n.iter().any(|&(a, b, c)| {
                    let (x, y, z) = (i as i64 + a, j as i64 + b, k as i64 + c);
                    if x < 0 || y < 0 || z < 0 || x >= d.nx as i64 || y >= d.ny as i64 || z >= d.nz as i64 {
                        return true;
                    }
                    !mask[x as usize + d.nx * (y as usize + d.ny * z as usize)]
                });
                if open {
                    out.push((i, j, k));
                }
            }
        }
    }
    out
}

pub fn oracle_directed(a: &[(usize, usize, usize)], b: &[(usize, usize, usize)], s: Spacing) -> Vec<f64> {
    a.iter()
        .map(|p| {
            b.iter()
                .map(|q| {
                    let dx = (p.0 as f64 - q.0 as f64) * s.sx;
                    let dy = (p.1 as f64 - q.1 as f64) * s.sy;
                    let dz = (p.2 as f64 - q.2 as f64) * s.sz;
                    (dx * dx + dy * dy + dz * dz).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

pub fn oracle_p95(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let r = 0.95 * (s.len() - 1) as f64;
    let (lo, hi) = (r.floor() as usize, r.ceil() as usize);
    s[lo] * (1.0 - (r - lo as f64)) + s[hi] * (r - lo as f64)
}

pub fn small_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let rank = rng.gen_range(1..=3);
    (0..rank).map(|_| rng.gen_range(1..=4)).collect()
}

pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let d = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let s = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(n.iter().map(|x| x * x).sum::<f64>().sqrt());
    if s < 1e-12 {
        d
    } else {
        d / s
    }
}

/// Central differences of `f` w.r.t. the listed entries of parameter `id`.
pub fn numeric_grad(store: &mut ParamStore<f64>, id: ParamId, entries: &[usize], h: f64, f: &dyn Fn(&ParamStore<f64>) -> f64) -> Vec<f64> {
    entries
        .iter()
        .map(|&k| {
            let x0 = store.get(id).value.data[k];
            store.get_mut(id).value.data[k] = x0 + h;
            let fp = f(store);
            store.get_mut(id).value.data[k] = x0 - h;
            let fm = f(store);
            store.get_mut(id).value.data[k] = x0;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}
