//! Exact ray–voxel intersection lengths for parallel rays.
//!
//! Every ray is the infinite line through a detector pixel centre along the
//! view direction. The crossings with all voxel planes are merged in ray
//! order; each interval between consecutive crossings lies in one voxel and
//! contributes its length. A direction component below `PARALLEL_EPS` is
//! treated as exactly parallel to that axis, in which case the voxel is
//! chosen half-open (`floor(x / s)`).

use super::geometry::{DetectorSpec, Vec3, ViewPose};
use crate::volume::VolumeGeometry;

pub(crate) const PARALLEL_EPS: f64 = 1e-12;

/// One voxel crossed by a ray: linear voxel offset and intersection length (mm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub voxel: usize,
    pub length: f64,
}

#[derive(Default)]
pub(crate) struct Tracer {
    crossings: [Vec<f64>; 3],
    merged: Vec<f64>,
}

impl Tracer {
    /// Appends the segments of the line `o + t·d` to `out`.
    pub fn trace(&mut self, geom: &VolumeGeometry, o: Vec3, d: Vec3, out: &mut Vec<Segment>) {
        let n = geom.dims.as_array();
        let s = geom.spacing.as_array();
        let e = geom.extent();

        let mut t_lo = f64::NEG_INFINITY;
        let mut t_hi = f64::INFINITY;
        let mut fixed = [None; 3];
        for a in 0..3 {
            if d[a].abs() < PARALLEL_EPS {
                if o[a] < 0.0 || o[a] >= e[a] {
                    return;
                }
                fixed[a] = Some(((o[a] / s[a]).floor() as usize).min(n[a] - 1));
            } else {
                let t0 = (0.0 - o[a]) / d[a];
                let t1 = (e[a] - o[a]) / d[a];
                t_lo = t_lo.max(t0.min(t1));
                t_hi = t_hi.min(t0.max(t1));
            }
        }
        if !(t_hi > t_lo) || !t_lo.is_finite() {
            return;
        }

        for a in 0..3 {
            let list = &mut self.crossings[a];
            list.clear();
            if fixed[a].is_some() {
                continue;
            }
            for k in 1..n[a] {
                let t = (k as f64 * s[a] - o[a]) / d[a];
                if t > t_lo && t < t_hi {
                    list.push(t);
                }
            }
            if d[a] < 0.0 {
                list.reverse();
            }
        }

        self.merged.clear();
        self.merged.push(t_lo);
        let (mut i0, mut i1, mut i2) = (0, 0, 0);
        let [c0, c1, c2] = &self.crossings;
        loop {
            let a = c0.get(i0).copied().unwrap_or(f64::INFINITY);
            let b = c1.get(i1).copied().unwrap_or(f64::INFINITY);
            let c = c2.get(i2).copied().unwrap_or(f64::INFINITY);
            let m = a.min(b).min(c);
            if m == f64::INFINITY {
                break;
            }
            if a == m {
                i0 += 1;
            } else if b == m {
                i1 += 1;
            } else {
                i2 += 1;
            }
            self.merged.push(m);
        }
        self.merged.push(t_hi);

        for w in self.merged.windows(2) {
            let len = w[1] - w[0];
            if len <= 0.0 {
                continue;
            }
            let tm = 0.5 * (w[0] + w[1]);
            let mut idx = [0usize; 3];
            for a in 0..3 {
                idx[a] = match fixed[a] {
                    Some(i) => i,
                    None => {
                        let x = o[a] + tm * d[a];
                        ((x / s[a]).floor().max(0.0) as usize).min(n[a] - 1)
                    }
                };
            }
            out.push(Segment { voxel: geom.dims.index(idx[0], idx[1], idx[2]), length: len });
        }
    }
}

/// Segments of the ray through detector pixel `(a, b)`.
pub fn ray_segments(geom: &VolumeGeometry, pose: &ViewPose, det: &DetectorSpec, a: usize, b: usize) -> Vec<Segment> {
    let mut out = Vec::new();
    Tracer::default().trace(geom, pose.pixel_point(det, a as f64, b as f64), pose.ray_direction, &mut out);
    out
}

/// Traces every pixel ray, splitting the pixel range over `workers` threads.
/// Returns, per pixel, the half-open range into the flat segment list.
pub(crate) fn trace_all(
    geom: &VolumeGeometry,
    pose: &ViewPose,
    det: &DetectorSpec,
    workers: usize,
) -> (Vec<Segment>, Vec<(usize, usize)>) {
    let pixels = det.pixels();
    let workers = workers.clamp(1, pixels);
    let chunk = pixels.div_ceil(workers);
    let run = |range: std::ops::Range<usize>| {
        let mut tracer = Tracer::default();
        let mut segs = Vec::new();
        let mut spans = Vec::with_capacity(range.len());
        for p in range {
            let start = segs.len();
            let (a, b) = (p % det.nu, p / det.nu);
            tracer.trace(geom, pose.pixel_point(det, a as f64, b as f64), pose.ray_direction, &mut segs);
            spans.push((start, segs.len()));
        }
        (segs, spans)
    };
    let parts: Vec<(Vec<Segment>, Vec<(usize, usize)>)> = if workers == 1 {
        vec![run(0..pixels)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let range = (w * chunk).min(pixels)..((w + 1) * chunk).min(pixels);
                    scope.spawn(move || run(range))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("projector worker panicked")).collect()
        })
    };
    let mut segs = Vec::new();
    let mut spans = Vec::with_capacity(pixels);
    for (s, sp) in parts {
        let base = segs.len();
        segs.extend(s);
        spans.extend(sp.into_iter().map(|(a, b)| (a + base, b + base)));
    }
    (segs, spans)
}
