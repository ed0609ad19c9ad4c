//! Procedural multi-class phantoms built from painted geometric primitives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::grid::{normalized_coord, Dims, LabelGrid, Spacing, VoxelGrid};
use super::VolumeError;
use crate::kv::KvMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// Axis-aligned ellipsoid with normalised semi-axes.
    Ellipsoid { radii: [f64; 3] },
    /// Axis-aligned box with normalised half-extents.
    Box { half_extents: [f64; 3] },
    /// Spherical shell `inner < |p - c| <= outer`.
    Shell { outer: f64, inner: f64 },
}

impl Shape {
    pub fn name(&self) -> &'static str {
        match self {
            Shape::Ellipsoid { .. } => "ellipsoid",
            Shape::Box { .. } => "box",
            Shape::Shell { .. } => "shell",
        }
    }

    fn scaled(&self, f: f64) -> Shape {
        match *self {
            Shape::Ellipsoid { radii } => Shape::Ellipsoid { radii: radii.map(|r| r * f) },
            Shape::Box { half_extents } => Shape::Box { half_extents: half_extents.map(|r| r * f) },
            Shape::Shell { outer, inner } => Shape::Shell { outer: outer * f, inner: inner * f },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub center: [f64; 3],
    pub intensity: f64,
    pub label: u16,
}

impl Primitive {
    /// Membership of a normalised point.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        match self.shape {
            Shape::Ellipsoid { radii } => {
                let s: f64 = (0..3).map(|a| (d[a] / radii[a]).powi(2)).sum();
                s <= 1.0
            }
            Shape::Box { half_extents } => (0..3).all(|a| d[a].abs() <= half_extents[a]),
            Shape::Shell { outer, inner } => {
                let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                r2 <= outer * outer && r2 > inner * inner
            }
        }
    }
}

/// Per-instance random perturbation applied by [`generate_phantom`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jitter {
    /// Max absolute centre shift per axis (normalised units).
    pub center: f64,
    /// Max relative size change.
    pub scale: f64,
    /// Max absolute intensity change.
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub class_count: u16,
    pub primitives: Vec<Primitive>,
    pub noise_sigma: f64,
    pub seed: u64,
    pub jitter: Jitter,
}

impl PhantomSpec {
    pub fn empty(class_count: u16) -> Self {
        Self { class_count, primitives: Vec::new(), noise_sigma: 0.0, seed: 0, jitter: Jitter::default() }
    }

    pub fn validate(&self) -> Result<(), VolumeError> {
        if self.class_count == 0 {
            return Err(VolumeError::InvalidClassCount(0));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(VolumeError::InvalidSpec("noise_sigma must be finite and >= 0".into()));
        }
        let j = self.jitter;
        if [j.center, j.scale, j.intensity].iter().any(|v| !(*v >= 0.0 && v.is_finite())) || j.scale >= 1.0 {
            return Err(VolumeError::InvalidSpec("jitter amplitudes must be in [0, 1)".into()));
        }
        for (n, p) in self.primitives.iter().enumerate() {
            let bad = |reason: String| VolumeError::InvalidPrimitive { index: n, reason };
            if p.label == 0 || p.label > self.class_count {
                return Err(bad(format!("label {} outside 1..={}", p.label, self.class_count)));
            }
            if !(0.0..=1.0).contains(&p.intensity) {
                return Err(bad(format!("intensity {} outside [0,1]", p.intensity)));
            }
            if p.center.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(bad(format!("center {:?} outside the unit cube", p.center)));
            }
            let sizes_ok = match p.shape {
                Shape::Ellipsoid { radii } => radii.iter().all(|r| *r > 0.0 && r.is_finite()),
                Shape::Box { half_extents } => half_extents.iter().all(|r| *r > 0.0 && r.is_finite()),
                Shape::Shell { outer, inner } => inner >= 0.0 && outer > inner && outer.is_finite(),
            };
            if !sizes_ok {
                return Err(bad(format!("non-positive or inconsistent size for {}", p.shape.name())));
            }
        }
        Ok(())
    }

    /// Primitives after the per-instance jitter drawn from `rng`.
    fn instance_primitives(&self, rng: &mut ChaCha8Rng) -> Vec<Primitive> {
        let j = self.jitter;
        self.primitives
            .iter()
            .map(|p| {
                let mut q = *p;
                if j.center > 0.0 {
                    for c in q.center.iter_mut() {
                        *c = (*c + rng.gen_range(-j.center..=j.center)).clamp(0.0, 1.0);
                    }
                }
                if j.scale > 0.0 {
                    q.shape = q.shape.scaled(1.0 + rng.gen_range(-j.scale..=j.scale));
                }
                if j.intensity > 0.0 {
                    q.intensity = (q.intensity + rng.gen_range(-j.intensity..=j.intensity)).clamp(0.0, 1.0);
                }
                q
            })
            .collect()
    }

    pub fn from_kv(map: &KvMap) -> Result<Self, VolumeError> {
        let class_count: u16 = map.parse_value("class_count", "u16")?.ok_or_else(|| {
            VolumeError::InvalidSpec("missing class_count".into())
        })?;
        let noise_sigma = map.parse_or("noise_sigma", 0.0, "f64")?;
        let seed = map.parse_or("seed", 0u64, "u64")?;
        let jitter = Jitter {
            center: map.parse_or("jitter.center", 0.0, "f64")?,
            scale: map.parse_or("jitter.scale", 0.0, "f64")?,
            intensity: map.parse_or("jitter.intensity", 0.0, "f64")?,
        };
        let mut primitives = Vec::new();
        for n in map.group_indices("primitive") {
            let key = |f: &str| format!("primitive.{n}.{f}");
            let bad = |reason: String| VolumeError::InvalidPrimitive { index: n, reason };
            let triple = |f: &str| -> Result<[f64; 3], VolumeError> {
                let v: Vec<f64> = map.parse_list(&key(f), "f64")?.ok_or_else(|| bad(format!("missing {f}")))?;
                <[f64; 3]>::try_from(v.as_slice()).map_err(|_| bad(format!("{f} needs 3 values")))
            };
            let shape = match map.require(&key("shape"))? {
                "ellipsoid" => Shape::Ellipsoid { radii: triple("radii")? },
                "box" => Shape::Box { half_extents: triple("half_extents")? },
                "shell" | "spherical-shell" => Shape::Shell {
                    outer: map.parse_value(&key("outer_radius"), "f64")?.ok_or_else(|| bad("missing outer_radius".into()))?,
                    inner: map.parse_value(&key("inner_radius"), "f64")?.ok_or_else(|| bad("missing inner_radius".into()))?,
                },
                other => return Err(bad(format!("unknown shape {other:?}"))),
            };
            primitives.push(Primitive {
                shape,
                center: triple("center")?,
                intensity: map.parse_value(&key("intensity"), "f64")?.ok_or_else(|| bad("missing intensity".into()))?,
                label: map.parse_value(&key("label"), "u16")?.ok_or_else(|| bad("missing label".into()))?,
            });
        }
        let spec = Self { class_count, primitives, noise_sigma, seed, jitter };
        spec.validate()?;
        Ok(spec)
    }

    pub fn parse(text: &str) -> Result<Self, VolumeError> {
        Self::from_kv(&KvMap::parse(text)?)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        let t = |v: [f64; 3]| format!("{} {} {}", v[0], v[1], v[2]);
        m.set("class_count", self.class_count);
        m.set("noise_sigma", self.noise_sigma);
        m.set("seed", self.seed);
        m.set("jitter.center", self.jitter.center);
        m.set("jitter.scale", self.jitter.scale);
        m.set("jitter.intensity", self.jitter.intensity);
        for (n, p) in self.primitives.iter().enumerate() {
            m.set(format!("primitive.{n}.shape"), p.shape.name());
            m.set(format!("primitive.{n}.center"), t(p.center));
            match p.shape {
                Shape::Ellipsoid { radii } => m.set(format!("primitive.{n}.radii"), t(radii)),
                Shape::Box { half_extents } => m.set(format!("primitive.{n}.half_extents"), t(half_extents)),
                Shape::Shell { outer, inner } => {
                    m.set(format!("primitive.{n}.outer_radius"), outer);
                    m.set(format!("primitive.{n}.inner_radius"), inner);
                }
            }
            m.set(format!("primitive.{n}.intensity"), p.intensity);
            m.set(format!("primitive.{n}.label"), p.label);
        }
        m
    }

    /// Head-like family with three structures (tissue, shell, jaw block).
    pub fn head_family() -> Self {
        Self {
            class_count: 3,
            primitives: vec![
                Primitive {
                    shape: Shape::Ellipsoid { radii: [0.36, 0.40, 0.40] },
                    center: [0.5, 0.5, 0.5],
                    intensity: 0.3,
                    label: 1,
                },
                Primitive {
                    shape: Shape::Shell { outer: 0.27, inner: 0.21 },
                    center: [0.5, 0.52, 0.58],
                    intensity: 0.9,
                    label: 2,
                },
                Primitive {
                    shape: Shape::Box { half_extents: [0.16, 0.07, 0.06] },
                    center: [0.5, 0.36, 0.24],
                    intensity: 0.65,
                    label: 3,
                },
            ],
            noise_sigma: 0.0,
            seed: 0,
            jitter: Jitter { center: 0.03, scale: 0.08, intensity: 0.04 },
        }
    }

    /// Out-of-family variant of [`PhantomSpec::head_family`]: the jaw block is
    /// dropped and opened away from the shell.
    pub fn head_family_open_jaw() -> Self {
        let mut spec = Self::head_family();
        spec.primitives[2].center = [0.5, 0.30, 0.17];
        spec.primitives[2].shape = Shape::Box { half_extents: [0.15, 0.09, 0.05] };
        spec
    }
}

fn instance_rng(spec_seed: u64, instance_seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(spec_seed);
    rng.set_stream(instance_seed);
    rng
}

/// Paints the spec's primitives in list order onto a fresh grid pair.
pub fn generate_phantom(
    spec: &PhantomSpec,
    instance_seed: u64,
    dims: Dims,
    spacing: Spacing,
) -> Result<(VoxelGrid, LabelGrid), VolumeError> {
    spec.validate()?;
    dims.validate()?;
    spacing.validate()?;
    let mut rng = instance_rng(spec.seed, instance_seed);
    let prims = spec.instance_primitives(&mut rng);

    let n = dims.len();
    let mut intensity = vec![0.0f64; n];
    let mut labels = vec![0u16; n];
    for idx in 0..n {
        let p = normalized_coord(dims.coords(idx), dims)?;
        for prim in &prims {
            if prim.contains(p) {
                intensity[idx] = prim.intensity;
                labels[idx] = prim.label;
            }
        }
    }
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| VolumeError::InvalidSpec(e.to_string()))?;
        for v in intensity.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    let grid = VoxelGrid::from_clamped(dims, spacing, intensity)?;
    let labels = LabelGrid::from_labels(dims, spacing, spec.class_count, labels)?;
    Ok((grid, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_prims() -> PhantomSpec {
        PhantomSpec {
            class_count: 2,
            primitives: vec![
                Primitive { shape: Shape::Ellipsoid { radii: [0.3, 0.2, 0.25] }, center: [0.45, 0.5, 0.55], intensity: 0.4, label: 1 },
                Primitive { shape: Shape::Box { half_extents: [0.1, 0.3, 0.12] }, center: [0.6, 0.4, 0.5], intensity: 0.9, label: 2 },
            ],
            noise_sigma: 0.0,
            seed: 3,
            jitter: Jitter::default(),
        }
    }

    #[test]
    fn empty_spec_gives_zero_grids() {
        let (g, l) = generate_phantom(&PhantomSpec::empty(1), 0, Dims::cube(8), Spacing::default()).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
        assert!(l.labels().iter().all(|&v| v == 0));
    }

    #[test]
    fn centered_ellipsoid_paints_center_not_corner() {
        let spec = PhantomSpec {
            primitives: vec![Primitive {
                shape: Shape::Ellipsoid { radii: [0.25; 3] },
                center: [0.5; 3],
                intensity: 0.8,
                label: 1,
            }],
            ..PhantomSpec::empty(1)
        };
        let (g, l) = generate_phantom(&spec, 0, Dims::cube(32), Spacing::default()).unwrap();
        assert_eq!(g.get(16, 16, 16), 0.8);
        assert_eq!(l.get(16, 16, 16), 1);
        assert_eq!(g.get(0, 0, 0), 0.0);
        assert_eq!(l.get(0, 0, 0), 0);
    }

    // Oracle: explicit per-voxel membership scan written independently of the painter.
    fn brute_force_foreground_fraction(n: usize) -> f64 {
        let mut hit = 0usize;
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let (x, y, z) = ((i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64, (k as f64 + 0.5) / n as f64);
                    let in_ell = ((x - 0.45) / 0.3).powi(2) + ((y - 0.5) / 0.2).powi(2) + ((z - 0.55) / 0.25).powi(2) <= 1.0;
                    let in_box = (x - 0.6).abs() <= 0.1 && (y - 0.4).abs() <= 0.3 && (z - 0.5).abs() <= 0.12;
                    if in_ell || in_box {
                        hit += 1;
                    }
                }
            }
        }
        hit as f64 / (n * n * n) as f64
    }

    #[test]
    fn foreground_fraction_matches_membership_oracle() {
        let expected = brute_force_foreground_fraction(16);
        // frozen from the oracle above
        assert_eq!(expected, 308.0 / 4096.0);
        let (_, l) = generate_phantom(&two_prims(), 0, Dims::cube(16), Spacing::default()).unwrap();
        let frac = l.labels().iter().filter(|&&v| v != 0).count() as f64 / 4096.0;
        assert_eq!(frac, expected);
    }

    #[test]
    fn later_primitives_win_and_intensity_tracks_label() {
        let (g, l) = generate_phantom(&two_prims(), 0, Dims::cube(16), Spacing::default()).unwrap();
        for (v, lab) in g.values().iter().zip(l.labels()) {
            match lab {
                0 => assert_eq!(*v, 0.0),
                1 => assert_eq!(*v, 0.4),
                2 => assert_eq!(*v, 0.9),
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn validation_names_offending_primitive() {
        let mut spec = two_prims();
        spec.primitives[1].label = 5;
        assert!(matches!(spec.validate(), Err(VolumeError::InvalidPrimitive { index: 1, .. })));
        let mut spec = two_prims();
        spec.primitives[0].shape = Shape::Ellipsoid { radii: [0.1, -0.1, 0.1] };
        assert!(matches!(spec.validate(), Err(VolumeError::InvalidPrimitive { index: 0, .. })));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let mut spec = PhantomSpec::head_family();
        spec.noise_sigma = 0.02;
        let d = Dims::cube(12);
        let a = generate_phantom(&spec, 4, d, Spacing::default()).unwrap();
        let b = generate_phantom(&spec, 4, d, Spacing::default()).unwrap();
        let c = generate_phantom(&spec, 5, d, Spacing::default()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn kv_round_trip() {
        let spec = PhantomSpec::head_family();
        let text = spec.to_kv().to_text();
        assert_eq!(PhantomSpec::parse(&text).unwrap(), spec);
    }
}
