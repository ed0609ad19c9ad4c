use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{forward_project, DetectorSpec, ProjectorError, ViewPose};
use crate::volume::VolumeGeometry;

/// Two volumes with identical projections in every supplied view.
#[derive(Debug, Clone)]
pub struct NullSpaceWitness {
    pub x: Vec<f64>,
    pub x_prime: Vec<f64>,
    /// Stacked measurement count M.
    pub measurements: usize,
    /// Unknown count N.
    pub unknowns: usize,
    pub rank: usize,
}

/// Dense stacked system matrix, assembled by projecting each unit basis volume.
pub fn system_matrix(geom: &VolumeGeometry, views: &[(ViewPose, DetectorSpec)]) -> Result<DMatrix<f64>, ProjectorError> {
    let n = geom.dims.len();
    let m: usize = views.iter().map(|(_, d)| d.pixels()).sum();
    let mut a = DMatrix::zeros(m, n);
    let mut basis = vec![0.0; n];
    for col in 0..n {
        basis[col] = 1.0;
        let mut row = 0;
        for (pose, det) in views {
            let p = forward_project(&basis, geom, pose, det, 1)?;
            for (r, v) in p.into_iter().enumerate() {
                a[(row + r, col)] = v;
            }
            row += det.pixels();
        }
        basis[col] = 0.0;
    }
    Ok(a)
}

/// Finds `x ≠ x′` whose stacked projections agree, by taking the eigenvector
/// of `AᵀA` with the smallest eigenvalue. `x` is uniform in `[0, 1]`;
/// `x′ − x` has max-norm 0.5.
pub fn null_space_witness(
    geom: &VolumeGeometry,
    views: &[(ViewPose, DetectorSpec)],
    seed: u64,
) -> Result<NullSpaceWitness, ProjectorError> {
    let n = geom.dims.len();
    if n > 6 * 6 * 6 {
        return Err(ProjectorError::Geometry(format!("dense assembly limited to 6^3 voxels, got {}", geom.dims)));
    }
    let a = system_matrix(geom, views)?;
    let ata = a.transpose() * &a;
    let eig = SymmetricEigen::new(ata);
    let max_ev = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let tol = max_ev * 1e-12 * n as f64;
    let rank = eig.eigenvalues.iter().filter(|&&e| e > tol).count();
    if rank >= n {
        return Err(ProjectorError::NoWitness(rank));
    }
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, &e)| if e < best.1 { (i, e) } else { best });
    let v = eig.eigenvectors.column(imin);
    let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    let x_prime: Vec<f64> = x.iter().zip(v.iter()).map(|(xi, vi)| xi + 0.5 * vi / vmax).collect();
    Ok(NullSpaceWitness { x, x_prime, measurements: a.nrows(), unknowns: n, rank })
}
