use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spider_recon::projector::*;
use spider_recon::volume::{Dims, Spacing, VolumeGeometry, VoxelGrid};

mod support;
use support::*;

#[test]
fn matches_brute_force_intersections() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let geom = VolumeGeometry::new(Dims::cube(4), Spacing::new(1.0, 1.5, 0.75)).unwrap();
    let bp = BiplanarGeometry::fitted(geom, 4, 4).unwrap();
    for trial in 0..10 {
        let values = random_values(&mut rng, geom.dims.len());
        let mut poses = vec![(bp.pa, bp.detector_pa), (bp.lat, bp.detector_lat)];
        let det = DetectorSpec::new(6, 5, 1.1, 0.9).unwrap();
        poses.push((random_pose(&mut rng, &geom, &det), det));
        poses.push((ViewPose::rotated(0.3 + trial as f64, &geom, &det).unwrap(), det));
        for (pose, det) in poses {
            let got = forward_project(&values, &geom, &pose, &det, 1).unwrap();
            let want = brute_force(&values, &geom, &pose, &det);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-9, "{g} vs {w}");
            }
        }
    }
}

#[test]
fn adjoint_identity_holds() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for trial in 0..20 {
        let geom = VolumeGeometry::new(Dims::cube(4), Spacing::new(rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0))).unwrap();
        let det = DetectorSpec::new(8, 8, rng.gen_range(0.3..1.2), rng.gen_range(0.3..1.2)).unwrap();
        let pose = if trial % 2 == 0 { random_pose(&mut rng, &geom, &det) } else { ViewPose::pa(&geom, &det).unwrap() };
        let x = random_values(&mut rng, geom.dims.len());
        let y: Vec<f64> = (0..det.pixels()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ax = forward_project(&x, &geom, &pose, &det, 1).unwrap();
        let aty = back_project(&y, &geom, &pose, &det, 1).unwrap();
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        let norm = ax.iter().map(|v| v * v).sum::<f64>().sqrt() * y.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((lhs - rhs).abs() / norm < 1e-9, "trial {trial}");
    }
}

#[test]
fn single_pixel_backprojection_is_the_ray() {
    let geom = VolumeGeometry::new(Dims::cube(4), Spacing::isotropic(1.0)).unwrap();
    let det = DetectorSpec::new(8, 8, 0.7, 0.6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let pose = random_pose(&mut rng, &geom, &det);
    for (a, b) in [(3, 4), (4, 3), (2, 5)] {
        let mut y = vec![0.0; det.pixels()];
        y[a + det.nu * b] = 1.0;
        let acc = back_project(&y, &geom, &pose, &det, 1).unwrap();
        let o = pose.pixel_point(&det, a as f64, b as f64);
        for idx in 0..geom.dims.len() {
            let (i, j, k) = geom.dims.coords(idx);
            let lo = [i as f64, j as f64, k as f64];
            let want = chord(o, pose.ray_direction, lo, [lo[0] + 1.0, lo[1] + 1.0, lo[2] + 1.0]);
            assert!((acc[idx] - want).abs() < 1e-12);
        }
    }
    let zero = back_project(&vec![0.0; det.pixels()], &geom, &pose, &det, 1).unwrap();
    assert!(zero.iter().all(|&v| v == 0.0));
}

#[test]
fn beer_lambert_round_trip() {
    let geom = VolumeGeometry::new(Dims::cube(4), Spacing::isotropic(1.0)).unwrap();
    let bp = BiplanarGeometry::fitted(geom, 8, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut p = Projection::zeros(bp.pa, bp.detector_pa);
    assert!(attenuate(&p, 1.0).unwrap().iter().all(|&v| v == 1.0));
    p.log_values[5] = std::f64::consts::LN_2;
    assert!((attenuate(&p, 1.0).unwrap()[5] - 0.5).abs() < 1e-15);
    for _ in 0..20 {
        p.log_values = (0..64).map(|_| rng.gen_range(0.0..6.0)).collect();
        let back = log_transform(&attenuate(&p, 1.0).unwrap(), 1.0).unwrap();
        for (a, b) in back.iter().zip(&p.log_values) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    assert!(matches!(attenuate(&p, 0.0), Err(ProjectorError::Domain(_))));
    assert!(matches!(attenuate(&p, -1.0), Err(ProjectorError::Domain(_))));
}

#[test]
fn null_space_witness_is_invisible() {
    let geom = VolumeGeometry::new(Dims::cube(4), Spacing::isotropic(1.0)).unwrap();
    let bp = BiplanarGeometry::fitted(geom, 4, 4).unwrap();
    let views = [(bp.pa, bp.detector_pa), (bp.lat, bp.detector_lat)];
    let w = null_space_witness(&geom, &views, 3).unwrap();
    assert_eq!((w.measurements, w.unknowns), (32, 64));
    assert!(w.rank < 64);
    let max_diff = w.x.iter().zip(&w.x_prime).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(max_diff > 0.1);
    for (pose, det) in &views {
        let a = forward_project(&w.x, &geom, pose, det, 1).unwrap();
        let b = forward_project(&w.x_prime, &geom, pose, det, 1).unwrap();
        let inf = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(inf < 1e-8, "projections differ by {inf}");
    }
}

#[test]
fn projected_points_lie_on_their_pixel_ray() {
    let geom = VolumeGeometry::new(Dims::cube(6), Spacing::isotropic(1.0)).unwrap();
    let det = DetectorSpec::new(10, 9, 0.8, 0.9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let pose = random_pose(&mut rng, &geom, &det);
    for _ in 0..20 {
        let x = [rng.gen_range(1.0..5.0), rng.gen_range(1.0..5.0), rng.gen_range(1.0..5.0)];
        let (u, v) = project_point(&pose, &det, x);
        let (a, b) = (u.round() as usize, v.round() as usize);
        // Nearest ray by enumerating every pixel.
        let mut best = (usize::MAX, usize::MAX, f64::INFINITY);
        for bb in 0..det.nv {
            for aa in 0..det.nu {
                let o = pose.pixel_point(&det, aa as f64, bb as f64);
                let r = [x[0] - o[0], x[1] - o[1], x[2] - o[2]];
                let (du, dv) = (dot(r, pose.detector_u_axis) / det.pitch_u, dot(r, pose.detector_v_axis) / det.pitch_v);
                let dist = du.abs().max(dv.abs());
                if dist < best.2 {
                    best = (aa, bb, dist);
                }
            }
        }
        assert_eq!((a, b), (best.0, best.1));
        assert!(best.2 <= 0.5);
        let shifted = [0, 1, 2].map(|i| x[i] + 3.7 * pose.ray_direction[i]);
        let (u2, v2) = project_point(&pose, &det, shifted);
        assert!((u - u2).abs() < 1e-12 && (v - v2).abs() < 1e-12);
    }
}

fn sphere(n: usize) -> VoxelGrid {
    let d = Dims::cube(n);
    let c = (n as f64 - 1.0) / 2.0;
    let r = n as f64 * 0.3;
    let v = (0..d.len()).map(|i| {
        let (x, y, z) = d.coords(i);
        let q = (x as f64 - c).powi(2) + (y as f64 - c).powi(2) + (z as f64 - c).powi(2);
        if q <= r * r {
            0.5
        } else {
            0.0
        }
    });
    VoxelGrid::from_clamped(d, Spacing::isotropic(1.0), v).unwrap()
}

fn psnr(a: &[f64], b: &[f64]) -> f64 {
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    10.0 * (1.0 / mse).log10()
}

#[test]
fn two_view_fbp_is_far_below_many_view_fbp() {
    let g = sphere(24);
    let geom = g.geometry();
    let bp = BiplanarGeometry::fitted(geom, 48, 24).unwrap();
    let two = fbp_two_view(
        &project_parallel(&g, &bp.pa, &bp.detector_pa).unwrap(),
        &project_parallel(&g, &bp.lat, &bp.detector_lat).unwrap(),
        geom.dims,
        geom.spacing,
    )
    .unwrap();
    let det = DetectorSpec::new(48, 24, 0.75, 1.0).unwrap();
    let views: Vec<Projection> = (0..180)
        .map(|k| {
            let pose = ViewPose::rotated(std::f64::consts::PI * k as f64 / 180.0, &geom, &det).unwrap();
            project_parallel(&g, &pose, &det).unwrap()
        })
        .collect();
    let refs: Vec<&Projection> = views.iter().collect();
    let many: Vec<f64> = fbp(&refs, &geom).unwrap().into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let truth = g.to_f64();
    let p2 = psnr(&two.to_f64(), &truth);
    let p180 = psnr(&many, &truth);
    assert!(p180 - p2 > 10.0, "two views {p2} dB, 180 views {p180} dB");

    let zero = VoxelGrid::zeros(geom.dims, geom.spacing).unwrap();
    let z = fbp_two_view(
        &project_parallel(&zero, &bp.pa, &bp.detector_pa).unwrap(),
        &project_parallel(&zero, &bp.lat, &bp.detector_lat).unwrap(),
        geom.dims,
        geom.spacing,
    )
    .unwrap();
    assert!(z.values().iter().all(|&v| v == 0.0));
    let oblique = ViewPose::rotated(0.4, &geom, &bp.detector_pa).unwrap();
    let p = project_parallel(&g, &oblique, &bp.detector_pa).unwrap();
    assert!(fbp_two_view(&p, &project_parallel(&g, &bp.pa, &bp.detector_pa).unwrap(), geom.dims, geom.spacing).is_err());
}

#[test]
fn degenerate_pose_is_rejected() {
    let geom = VolumeGeometry::new(Dims::cube(4), Spacing::isotropic(1.0)).unwrap();
    let bp = BiplanarGeometry::fitted(geom, 4, 4).unwrap();
    let mut pose = bp.pa;
    pose.detector_u_axis = [1.0, 0.1, 0.0];
    let g = VoxelGrid::zeros(geom.dims, geom.spacing).unwrap();
    assert!(matches!(project_parallel(&g, &pose, &bp.detector_pa), Err(ProjectorError::Geometry(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn projection_is_linear_and_non_negative(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let geom = VolumeGeometry::new(Dims::new(5, 4, 3), Spacing::new(0.9, 1.1, 1.3)).unwrap();
        let det = DetectorSpec::new(7, 6, 0.8, 0.7).unwrap();
        let pose = random_pose(&mut rng, &geom, &det);
        let g1 = random_values(&mut rng, geom.dims.len());
        let g2 = random_values(&mut rng, geom.dims.len());
        let mix: Vec<f64> = g1.iter().zip(&g2).map(|(x, y)| a * x + b * y).collect();
        let p1 = forward_project(&g1, &geom, &pose, &det, 1).unwrap();
        let p2 = forward_project(&g2, &geom, &pose, &det, 1).unwrap();
        let pm = forward_project(&mix, &geom, &pose, &det, 3).unwrap();
        for i in 0..pm.len() {
            prop_assert!((pm[i] - (a * p1[i] + b * p2[i])).abs() < 1e-10);
            prop_assert!(p1[i] >= 0.0);
        }
    }
}
