use proptest::prelude::*;
use spider_recon::eval::*;
use spider_recon::volume::{Dims, LabelGrid, Spacing, VoxelGrid};

mod support;
use support::*;

#[test]
fn ssim_matches_reference_implementation() {
    for (nx, ny, nz, seed, correlated, independent) in SSIM_REFERENCE {
        let n = nx * ny * nz;
        let a = lcg(seed, n);
        let noise = lcg(seed + 100, n);
        let b: Vec<f64> = a.iter().zip(&noise).map(|(x, e)| (x + 0.3 * (e - 0.5)).clamp(0.0, 1.0)).collect();
        let c = lcg(seed + 200, n);
        assert!((slice_ssim(&a, &b, nx, ny, nz) - correlated).abs() < 1e-4);
        assert!((slice_ssim(&a, &c, nx, ny, nz) - independent).abs() < 1e-4);

        if nz < 2 {
            continue;
        }
        let d = Dims::new(nx, ny, nz);
        let s = Spacing::isotropic(1.0);
        let ga = VoxelGrid::from_clamped(d, s, a.clone()).unwrap();
        let gb = VoxelGrid::from_clamped(d, s, b.clone()).unwrap();
        assert!((ssim(&ga, &gb).unwrap() - correlated).abs() < 1e-4);
    }
}

#[test]
fn ssim_closed_forms() {
    let d = Dims::new(12, 12, 2);
    let s = Spacing::isotropic(1.0);
    let zero = VoxelGrid::zeros(d, s).unwrap();
    let one = VoxelGrid::from_clamped(d, s, vec![1.0; d.len()]).unwrap();
    // Flat images: S = C1 / (1 + C1) with C1 = (0.01·1)².
    let c1 = 1e-4;
    assert!((ssim(&zero, &one).unwrap() - c1 / (1.0 + c1)).abs() < 1e-15);
    assert!((ssim(&zero, &one).unwrap() - 9.999000099990001e-5).abs() < 1e-15);
    let g = VoxelGrid::from_clamped(d, s, lcg(9, d.len())).unwrap();
    assert!((ssim(&g, &g).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn ssim_shrinks_window_for_small_slices() {
    let d = Dims::new(6, 9, 2);
    let s = Spacing::isotropic(1.0);
    let g = VoxelGrid::from_clamped(d, s, lcg(4, d.len())).unwrap();
    let h = VoxelGrid::from_clamped(d, s, lcg(5, d.len())).unwrap();
    assert!((ssim(&g, &g).unwrap() - 1.0).abs() < 1e-12);
    let v = ssim(&g, &h).unwrap();
    assert!(v.is_finite() && v.abs() <= 1.0);
}

#[test]
fn shape_mismatches_are_errors() {
    let s = Spacing::isotropic(1.0);
    let a = VoxelGrid::zeros(Dims::cube(4), s).unwrap();
    let b = VoxelGrid::zeros(Dims::new(4, 4, 5), s).unwrap();
    assert!(matches!(psnr(&a, &b, 1.0), Err(EvalError::Shape(_))));
    assert!(matches!(ssim(&a, &b), Err(EvalError::Shape(_))));
    let la = LabelGrid::zeros(Dims::cube(4), s, 2).unwrap();
    let lb = LabelGrid::zeros(Dims::new(4, 4, 5), s, 2).unwrap();
    assert!(matches!(dice_metric(&la, &lb, 1), Err(EvalError::Shape(_))));
}

#[test]
fn psnr_of_known_mse() {
    let a = vec![0.2; 50];
    let b = vec![0.3; 50];
    assert!((psnr_values(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-12);
    assert_eq!(psnr_values(&a, &a, 1.0).unwrap(), f64::INFINITY);
}

#[test]
fn psnr_falls_as_noise_grows() {
    let d = Dims::cube(16);
    let s = Spacing::isotropic(1.0);
    let base: Vec<f64> = lcg(21, d.len()).iter().map(|v| 0.25 + 0.5 * v).collect();
    let clean = VoxelGrid::from_clamped(d, s, base.clone()).unwrap();
    let noise: Vec<f64> = lcg(22, d.len()).iter().map(|v| v - 0.5).collect();
    let mut last = f64::INFINITY;
    for sigma in [0.05, 0.1, 0.2] {
        let noisy = VoxelGrid::from_clamped(d, s, base.iter().zip(&noise).map(|(b, e)| b + sigma * e)).unwrap();
        let p = psnr(&noisy, &clean, 1.0).unwrap();
        assert!(p < last, "PSNR {p} at σ {sigma} is not below {last}");
        last = p;
    }
}

#[test]
fn dice_examples() {
    let d = Dims::cube(2);
    let s = Spacing::isotropic(1.0);
    let a = LabelGrid::from_labels(d, s, 2, vec![1, 1, 0, 2, 0, 0, 0, 0]).unwrap();
    let b = LabelGrid::from_labels(d, s, 2, vec![1, 0, 1, 0, 0, 0, 0, 0]).unwrap();
    assert_eq!(dice_metric(&a, &a, 1).unwrap(), 1.0);
    assert_eq!(dice_metric(&a, &b, 1).unwrap(), 0.5);
    assert_eq!(dice_metric(&a, &b, 2).unwrap(), 0.0);
    let empty = LabelGrid::zeros(d, s, 2).unwrap();
    assert_eq!(dice_metric(&empty, &empty, 1).unwrap(), 1.0);
}

fn mask_strategy() -> impl Strategy<Value = (Dims, Vec<bool>, Vec<bool>, Spacing)> {
    (2usize..7, 2usize..7, 2usize..6, 0.3f64..2.0, 0.3f64..2.0, 0.3f64..2.0).prop_flat_map(|(nx, ny, nz, sx, sy, sz)| {
        let d = Dims::new(nx, ny, nz);
        (Just(d), prop::collection::vec(any::<bool>(), d.len()), prop::collection::vec(any::<bool>(), d.len()), Just(Spacing::new(sx, sy, sz)))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn surface_distances_match_brute_force((d, a, b, s) in mask_strategy()) {
        let ba = oracle_boundary(&a, d);
        let bb = oracle_boundary(&b, d);
        let h = hd95(&a, &b, d, s);
        let c = chamfer(&a, &b, d, s);
        if ba.is_empty() || bb.is_empty() {
            let e = [d.nx as f64 * s.sx, d.ny as f64 * s.sy, d.nz as f64 * s.sz];
            let diag = (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
            prop_assert_eq!(h, diag);
            prop_assert_eq!(c, diag);
        } else {
            let ab = oracle_directed(&ba, &bb, s);
            let bab = oracle_directed(&bb, &ba, s);
            let want_h = oracle_p95(&ab).max(oracle_p95(&bab));
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let want_c = 0.5 * (mean(&ab) + mean(&bab));
            prop_assert!((h - want_h).abs() < 1e-9, "hd95 {} vs {}", h, want_h);
            prop_assert!((c - want_c).abs() < 1e-9, "chamfer {} vs {}", c, want_c);
        }
        prop_assert_eq!(h, hd95(&b, &a, d, s));
        prop_assert!((c - chamfer(&b, &a, d, s)).abs() < 1e-12);
        prop_assert_eq!(hd95(&a, &a, d, s) == 0.0, !ba.is_empty());
    }

    #[test]
    fn distance_transform_matches_brute_force((d, a, _b, s) in mask_strategy()) {
        let sites: Vec<usize> = (0..d.len()).filter(|&i| a[i]).collect();
        prop_assume!(!sites.is_empty());
        let dt = distance_transform(&sites, d, s);
        for idx in 0..d.len() {
            let (i, j, k) = d.coords(idx);
            let want = sites.iter().map(|&q| {
                let (x, y, z) = d.coords(q);
                let v = [(i as f64 - x as f64) * s.sx, (j as f64 - y as f64) * s.sy, (k as f64 - z as f64) * s.sz];
                (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
            }).fold(f64::INFINITY, f64::min);
            prop_assert!((dt[idx] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn boundary_matches_oracle((d, a, _b, _s) in mask_strategy()) {
        let got: Vec<(usize, usize, usize)> = boundary_voxels(&a, d).into_iter().map(|i| d.coords(i)).collect();
        let mut want = oracle_boundary(&a, d);
        want.sort_by_key(|&(i, j, k)| (k, j, i));
        prop_assert_eq!(got, want);
    }

    #[test]
    fn psnr_and_dice_match_direct_loops(v in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, any::<bool>(), any::<bool>()), 1..200)) {
        let a: Vec<f64> = v.iter().map(|t| t.0).collect();
        let b: Vec<f64> = v.iter().map(|t| t.1).collect();
        let mut se = 0.0;
        for i in 0..a.len() {
            se += (a[i] - b[i]) * (a[i] - b[i]);
        }
        let want = 10.0 * (1.0 / (se / a.len() as f64)).log10();
        prop_assert!((psnr_values(&a, &b, 1.0).unwrap() - want).abs() < 1e-10);

        let ma: Vec<bool> = v.iter().map(|t| t.2).collect();
        let mb: Vec<bool> = v.iter().map(|t| t.3).collect();
        let (mut inter, mut total) = (0.0, 0.0);
        for i in 0..ma.len() {
            if ma[i] && mb[i] { inter += 1.0; }
            if ma[i] { total += 1.0; }
            if mb[i] { total += 1.0; }
        }
        let want = if total == 0.0 { 1.0 } else { 2.0 * inter / total };
        prop_assert!((dice_masks(&ma, &mb) - want).abs() < 1e-10);
    }

    #[test]
    fn extracted_meshes_are_closed_and_valid((d, a, _b, s) in mask_strategy()) {
        let v: Vec<f64> = a.iter().map(|&x| if x { 1.0 } else { 0.0 }).collect();
        let m = marching_cubes(&v, d, s, 0.5).unwrap();
        prop_assert_eq!(m.triangles.is_empty(), !a.iter().any(|&x| x));
        for t in &m.triangles {
            prop_assert!(t.iter().all(|&i| i < m.vertices.len()));
            let p = t.map(|i| m.vertices[i]);
            let u = [p[1][0] - p[0][0], p[1][1] - p[0][1], p[1][2] - p[0][2]];
            let w = [p[2][0] - p[0][0], p[2][1] - p[0][1], p[2][2] - p[0][2]];
            let c = [u[1] * w[2] - u[2] * w[1], u[2] * w[0] - u[0] * w[2], u[0] * w[1] - u[1] * w[0]];
            prop_assert!(0.5 * (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt() > 1e-12);
        }
        prop_assert!(m.is_closed_oriented());
        prop_assert!(m.signed_volume() >= 0.0);

        let mut smooth = m.clone();
        smooth.laplacian_smooth(10, 0.5);
        prop_assert_eq!(smooth.vertices.len(), m.vertices.len());
        prop_assert_eq!(&smooth.triangles, &m.triangles);
    }
}

#[test]
fn marching_cubes_examples() {
    let d = Dims::cube(4);
    let s = Spacing::new(1.0, 2.0, 3.0);
    assert!(marching_cubes(&vec![0.0; d.len()], d, s, 0.5).unwrap().triangles.is_empty());

    let mut v = vec![0.0; d.len()];
    v[d.index(1, 2, 1)] = 1.0;
    let m = marching_cubes(&v, d, s, 0.5).unwrap();
    assert_eq!(m.euler_characteristic(), 2);
    // The octahedron's vertices are the edge midpoints around the voxel centre.
    let c = [1.5, 5.0, 4.5];
    for p in &m.vertices {
        let off = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
        let moved: Vec<usize> = (0..3).filter(|&k| off[k].abs() > 1e-12).collect();
        assert_eq!(moved.len(), 1);
        let k = moved[0];
        assert!((off[k].abs() - 0.5 * s.as_array()[k]).abs() < 1e-12);
    }

    let mut same = m.clone();
    same.laplacian_smooth(0, 0.5);
    assert_eq!(same, m);
}

#[test]
fn torus_has_euler_characteristic_zero() {
    let d = Dims::new(5, 5, 3);
    let mut v = vec![0.0; d.len()];
    for i in 1..4 {
        for j in 1..4 {
            if (i, j) != (2, 2) {
                v[d.index(i, j, 1)] = 1.0;
            }
        }
    }
    let m = marching_cubes(&v, d, Spacing::isotropic(1.0), 0.5).unwrap();
    assert!(m.is_closed_oriented());
    assert_eq!(m.euler_characteristic(), 0);
}

#[test]
fn reports_identical_volumes() {
    let d = Dims::cube(8);
    let s = Spacing::isotropic(1.0);
    let vol = VoxelGrid::from_clamped(d, s, lcg(3, d.len())).unwrap();
    let labels = LabelGrid::from_labels(d, s, 3, (0..d.len()).map(|i| if i % 7 == 0 { 1 } else if i % 11 == 0 { 2 } else { 0 }).collect()).unwrap();
    let r = evaluate("s", "self", &vol, Some(&labels), &vol, &labels).unwrap();
    assert_eq!(r.psnr, f64::INFINITY);
    assert!((r.ssim - 1.0).abs() < 1e-12);
    assert!(r.classes.iter().filter(|c| c.present).all(|c| c.dice == 1.0 && c.hd95 == 0.0 && c.chamfer == 0.0));
    assert!(!r.classes[2].present);
    assert_eq!(r.mean_dice(), 1.0);
    let row = r.csv_row();
    assert_eq!(row.split(',').count(), MetricsReport::csv_header(3).split(',').count());
}
