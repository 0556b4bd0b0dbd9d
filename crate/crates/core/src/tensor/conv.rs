//! 3×3×3 same-padded convolution via im2col + GEMM, with a slice-wise
//! variant that applies only the central through-plane kernel slice.

use super::kernels::{gemm, gemm_strided};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum KernelDepth {
    /// Full 3×3×3 kernel.
    Full,
    /// Central `[:, :, :, :, 1]` slice, applied per slice along axis 2.
    Central,
}

impl KernelDepth {
    /// (offset, index into the 27-tap kernel) for every active tap.
    fn taps(self) -> Vec<([isize; 3], usize)> {
        let mut out = Vec::with_capacity(27);
        for dx in -1isize..=1 {
            for dy in -1isize..=1 {
                for dz in -1isize..=1 {
                    if self == KernelDepth::Central && dz != 0 {
                        continue;
                    }
                    let idx = ((dx + 1) * 9 + (dy + 1) * 3 + (dz + 1)) as usize;
                    out.push(([dx, dy, dz], idx));
                }
            }
        }
        out
    }
}

pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub spatial: [usize; 3],
    pub depth: KernelDepth,
}

impl ConvGeom {
    fn voxels(&self) -> usize {
        self.spatial.iter().product()
    }
}

fn valid_range(n: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (n as isize - off.max(0)).max(0) as usize;
    (lo.min(n), hi.max(lo.min(n)))
}

/// Output planes along axis 0 per tile, keeping a column block near 1 MB.
fn slab_planes(rows: usize, sp: [usize; 3]) -> usize {
    let plane = sp[1] * sp[2];
    (COL_BUDGET / (rows * plane).max(1)).clamp(1, sp[0].max(1))
}

const COL_BUDGET: usize = 1 << 17;

/// Columns for output planes `i0..i1`: row `c·K + t` holds input channel
/// `c` shifted by tap `t`, zero outside the volume.
fn im2col(x: &[f64], cin: usize, sp: [usize; 3], taps: &[([isize; 3], usize)], (i0, i1): (usize, usize), col: &mut [f64]) {
    let v = sp[0] * sp[1] * sp[2];
    let sv = (i1 - i0) * sp[1] * sp[2];
    let k = taps.len();
    col[..cin * k * sv].iter_mut().for_each(|c| *c = 0.0);
    for c in 0..cin {
        let xs = &x[c * v..(c + 1) * v];
        for (t, (off, _)) in taps.iter().enumerate() {
            let row = &mut col[(c * k + t) * sv..(c * k + t + 1) * sv];
            let (i_lo, i_hi) = valid_range(sp[0], off[0]);
            let (j_lo, j_hi) = valid_range(sp[1], off[1]);
            let (k_lo, k_hi) = valid_range(sp[2], off[2]);
            if k_lo >= k_hi {
                continue;
            }
            for i in i_lo.max(i0)..i_hi.min(i1) {
                let si = (i as isize + off[0]) as usize;
                for j in j_lo..j_hi {
                    let sj = (j as isize + off[1]) as usize;
                    let dst = ((i - i0) * sp[1] + j) * sp[2];
                    let src = (si * sp[1] + sj) * sp[2];
                    let sk_lo = (k_lo as isize + off[2]) as usize;
                    row[dst + k_lo..dst + k_hi].copy_from_slice(&xs[src + sk_lo..src + sk_lo + (k_hi - k_lo)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`], accumulating into `dx`.
fn col2im(col: &[f64], cin: usize, sp: [usize; 3], taps: &[([isize; 3], usize)], (i0, i1): (usize, usize), dx: &mut [f64]) {
    let v = sp[0] * sp[1] * sp[2];
    let sv = (i1 - i0) * sp[1] * sp[2];
    let k = taps.len();
    for c in 0..cin {
        let xs = &mut dx[c * v..(c + 1) * v];
        for (t, (off, _)) in taps.iter().enumerate() {
            let row = &col[(c * k + t) * sv..(c * k + t + 1) * sv];
            let (i_lo, i_hi) = valid_range(sp[0], off[0]);
            let (j_lo, j_hi) = valid_range(sp[1], off[1]);
            let (k_lo, k_hi) = valid_range(sp[2], off[2]);
            if k_lo >= k_hi {
                continue;
            }
            for i in i_lo.max(i0)..i_hi.min(i1) {
                let si = (i as isize + off[0]) as usize;
                for j in j_lo..j_hi {
                    let sj = (j as isize + off[1]) as usize;
                    let dst = ((i - i0) * sp[1] + j) * sp[2];
                    let src = (si * sp[1] + sj) * sp[2];
                    let sk_lo = (k_lo as isize + off[2]) as usize;
                    for (a, b) in xs[src + sk_lo..src + sk_lo + (k_hi - k_lo)].iter_mut().zip(&row[dst + k_lo..dst + k_hi]) {
                        *a += *b;
                    }
                }
            }
        }
    }
}

/// Gather the active taps of a [cout, cin, 27] kernel into a [cout, cin·K] matrix.
fn weight_matrix(w: &[f64], g: &ConvGeom, taps: &[([isize; 3], usize)]) -> Vec<f64> {
    let k = taps.len();
    let mut m = vec![0.0; g.cout * g.cin * k];
    for o in 0..g.cout {
        for c in 0..g.cin {
            for (t, (_, idx)) in taps.iter().enumerate() {
                m[(o * g.cin + c) * k + t] = w[(o * g.cin + c) * 27 + idx];
            }
        }
    }
    m
}

fn slabs(g: &ConvGeom, rows: usize) -> impl Iterator<Item = (usize, usize)> {
    let step = slab_planes(rows, g.spatial);
    let n = g.spatial[0];
    (0..n).step_by(step).map(move |i0| (i0, (i0 + step).min(n)))
}

pub(crate) fn conv_forward(x: &[f64], w: &[f64], b: &[f64], g: &ConvGeom) -> Vec<f64> {
    let taps = g.depth.taps();
    let k = taps.len();
    let v = g.voxels();
    let plane = g.spatial[1] * g.spatial[2];
    let rows = g.cin * k;
    let wm = weight_matrix(w, g, &taps);
    let mut col = vec![0.0; rows * slab_planes(rows, g.spatial) * plane];
    let mut out = vec![0.0; g.batch * g.cout * v];
    for n in 0..g.batch {
        let xn = &x[n * g.cin * v..(n + 1) * g.cin * v];
        let on = &mut out[n * g.cout * v..(n + 1) * g.cout * v];
        for (o, chunk) in on.chunks_exact_mut(v).enumerate() {
            chunk.iter_mut().for_each(|c| *c = b[o]);
        }
        for (i0, i1) in slabs(g, rows) {
            let sv = (i1 - i0) * plane;
            im2col(xn, g.cin, g.spatial, &taps, (i0, i1), &mut col);
            gemm_strided(g.cout, rows, sv, &wm, (rows, 1), &col, (sv, 1), 1.0, &mut on[i0 * plane..], (v, 1));
        }
    }
    out
}

pub(crate) fn conv_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    g: &ConvGeom,
    mut dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let taps = g.depth.taps();
    let k = taps.len();
    let v = g.voxels();
    let plane = g.spatial[1] * g.spatial[2];
    let rows = g.cin * k;
    let wm = weight_matrix(w, g, &taps);
    let cap = rows * slab_planes(rows, g.spatial) * plane;
    let mut col = vec![0.0; cap];
    let mut dcol = vec![0.0; if dx.is_some() { cap } else { 0 }];
    let mut dwm = vec![0.0; g.cout * rows];
    let want_w = dw.is_some();
    for n in 0..g.batch {
        let dyn_ = &dy[n * g.cout * v..(n + 1) * g.cout * v];
        for (i0, i1) in slabs(g, rows) {
            let sv = (i1 - i0) * plane;
            let dys = &dyn_[i0 * plane..];
            if want_w {
                im2col(&x[n * g.cin * v..(n + 1) * g.cin * v], g.cin, g.spatial, &taps, (i0, i1), &mut col);
                gemm(g.cout, sv, rows, dys, (v, 1), &col, (1, sv), 1.0, &mut dwm);
            }
            if let Some(dx) = dx.as_deref_mut() {
                gemm(rows, g.cout, sv, &wm, (1, rows), dys, (v, 1), 0.0, &mut dcol);
                col2im(&dcol, g.cin, g.spatial, &taps, (i0, i1), &mut dx[n * g.cin * v..(n + 1) * g.cin * v]);
            }
        }
    }
    if let Some(dw) = dw {
        for o in 0..g.cout {
            for c in 0..g.cin {
                for (t, (_, idx)) in taps.iter().enumerate() {
                    dw[(o * g.cin + c) * 27 + idx] += dwm[(o * g.cin + c) * k + t];
                }
            }
        }
    }
    if let Some(db) = db {
        for n in 0..g.batch {
            for (o, chunk) in dy[n * g.cout * v..(n + 1) * g.cout * v].chunks_exact(v).enumerate() {
                db[o] += chunk.iter().sum::<f64>();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct 7-loop convolution with zero padding.
    fn naive(x: &[f64], w: &[f64], b: &[f64], g: &ConvGeom) -> Vec<f64> {
        let sp = g.spatial;
        let v = sp.iter().product::<usize>();
        let mut out = vec![0.0; g.batch * g.cout * v];
        for n in 0..g.batch {
            for o in 0..g.cout {
                for i in 0..sp[0] {
                    for j in 0..sp[1] {
                        for kk in 0..sp[2] {
                            let mut acc = b[o];
                            for c in 0..g.cin {
                                for (off, idx) in g.depth.taps() {
                                    let (si, sj, sk) = (i as isize + off[0], j as isize + off[1], kk as isize + off[2]);
                                    if si < 0 || sj < 0 || sk < 0 || si >= sp[0] as isize || sj >= sp[1] as isize || sk >= sp[2] as isize {
                                        continue;
                                    }
                                    let xi = ((n * g.cin + c) * sp[0] + si as usize) * sp[1] * sp[2] + sj as usize * sp[2] + sk as usize;
                                    acc += w[(o * g.cin + c) * 27 + idx] * x[xi];
                                }
                            }
                            out[((n * g.cout + o) * sp[0] + i) * sp[1] * sp[2] + j * sp[2] + kk] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn tiled_forward_and_backward_agree_with_naive() {
        let g = ConvGeom { batch: 2, cin: 4, cout: 2, spatial: [20, 20, 6], depth: KernelDepth::Full };
        assert!(slab_planes(g.cin * 27, g.spatial) < g.spatial[0]);
        let n = 2 * 4 * 2400;
        let x: Vec<f64> = (0..n).map(|i| ((i * 37 % 17) as f64 - 8.0) * 0.1).collect();
        let w: Vec<f64> = (0..2 * 4 * 27).map(|i| ((i * 13 % 11) as f64 - 5.0) * 0.05).collect();
        let b = [0.3, -0.2];
        let got = conv_forward(&x, &w, &b, &g);
        let want = naive(&x, &w, &b, &g);
        assert!(got.iter().zip(&want).all(|(a, e)| (a - e).abs() < 1e-10));
        // the loss Σ y·r has gradient r; compare with the adjoint by linearity
        let r: Vec<f64> = (0..got.len()).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect();
        let mut dx = vec![0.0; n];
        let mut dw = vec![0.0; w.len()];
        conv_backward(&x, &w, &r, &g, Some(&mut dx), Some(&mut dw), None);
        let zero_b = [0.0, 0.0];
        let lin = |x: &[f64], w: &[f64]| naive(x, w, &zero_b, &g).iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
        let fx: f64 = lin(&x, &w);
        assert!((dx.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() - fx).abs() < 1e-8 * fx.abs().max(1.0));
        assert!((dw.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() - fx).abs() < 1e-8 * fx.abs().max(1.0));
    }

    #[test]
    fn matches_naive_loops() {
        for depth in [KernelDepth::Full, KernelDepth::Central] {
            let g = ConvGeom { batch: 2, cin: 3, cout: 2, spatial: [4, 3, 5], depth };
            let x: Vec<f64> = (0..2 * 3 * 60).map(|i| ((i * 37 % 17) as f64 - 8.0) * 0.1).collect();
            let w: Vec<f64> = (0..2 * 3 * 27).map(|i| ((i * 13 % 11) as f64 - 5.0) * 0.05).collect();
            let b = [0.3, -0.2];
            let got = conv_forward(&x, &w, &b, &g);
            let want = naive(&x, &w, &b, &g);
            for (a, e) in got.iter().zip(&want) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }
}
