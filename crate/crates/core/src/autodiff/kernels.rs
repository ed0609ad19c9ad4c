use super::{BilinearTap, Real};

/// Unfolds `x: [cin, h, w]` into `col: [cin·k·k, h·w]` with zero padding `k/2`.
pub(crate) fn im2col<T: Real>(x: &[T], cin: usize, h: usize, w: usize, k: usize, col: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for c in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((c * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &x[c * hw + sy as usize * w..][..w];
                    for (xx, v) in dst.iter_mut().enumerate() {
                        let sx = xx as isize + dx;
                        *v = if sx < 0 || sx >= w as isize { T::zero() } else { src[sx as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `col` back into `dx`.
pub(crate) fn col2im<T: Real>(col: &[T], cin: usize, h: usize, w: usize, k: usize, dx: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for c in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((c * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dxo = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut dx[c * hw + sy as usize * w..][..w];
                    for xx in 0..w {
                        let sx = xx as isize + dxo;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] += row[y * w + xx];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn bilinear_weights<T: Real>(tap: &BilinearTap<T>) -> [T; 4] {
    let one = T::one();
    [(one - tap.fx) * (one - tap.fy), tap.fx * (one - tap.fy), (one - tap.fx) * tap.fy, tap.fx * tap.fy]
}
