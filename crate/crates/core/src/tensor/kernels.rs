//! Numeric kernels shared by the tape ops.

/// `c[m×n] = a[m×k]·b[k×n] + beta·c`, `c` row-major, `a`/`b` strided.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: (usize, usize),
    b: &[f64],
    sb: (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    gemm_strided(m, k, n, a, sa, b, sb, beta, c, (n, 1));
}

/// `c = a·b + beta·c` with an explicitly strided output.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_strided(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c[i * rsc + j * csc] *= beta;
            }
        }
        return;
    }
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: bounds of all three operands are asserted above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Split a shape around `axis` into (outer, dim, inner).
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax(x: &[f64], outer: usize, dim: usize, inner: usize) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * dim * inner + i;
            let mut mx = f64::NEG_INFINITY;
            for d in 0..dim {
                mx = mx.max(x[base + d * inner]);
            }
            let mut sum = 0.0;
            for d in 0..dim {
                let e = (x[base + d * inner] - mx).exp();
                y[base + d * inner] = e;
                sum += e;
            }
            for d in 0..dim {
                y[base + d * inner] /= sum;
            }
        }
    }
    y
}

pub(crate) fn softmax_backward(y: &[f64], dy: &[f64], dx: &mut [f64], outer: usize, dim: usize, inner: usize) {
    for o in 0..outer {
        for i in 0..inner {
            let base = o * dim * inner + i;
            let dot: f64 = (0..dim).map(|d| y[base + d * inner] * dy[base + d * inner]).sum();
            for d in 0..dim {
                let p = base + d * inner;
                dx[p] += y[p] * (dy[p] - dot);
            }
        }
    }
}

/// Normalise consecutive blocks of `block` values (one block per group).
/// Returns output and per-block reciprocal std.
pub(crate) fn block_norm(x: &[f64], block: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; x.len()];
    let mut rstd = Vec::with_capacity(x.len() / block);
    for (xs, ys) in x.chunks_exact(block).zip(y.chunks_exact_mut(block)) {
        let mean = xs.iter().sum::<f64>() / block as f64;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / block as f64;
        let r = 1.0 / (var + eps).sqrt();
        for (o, &v) in ys.iter_mut().zip(xs) {
            *o = (v - mean) * r;
        }
        rstd.push(r);
    }
    (y, rstd)
}

pub(crate) fn block_norm_backward(y: &[f64], rstd: &[f64], dy: &[f64], dx: &mut [f64], block: usize) {
    for (((ys, dys), dxs), &r) in y.chunks_exact(block).zip(dy.chunks_exact(block)).zip(dx.chunks_exact_mut(block)).zip(rstd) {
        let n = block as f64;
        let mean_dy = dys.iter().sum::<f64>() / n;
        let mean_dyy = dys.iter().zip(ys).map(|(a, b)| a * b).sum::<f64>() / n;
        for ((d, &g), &yv) in dxs.iter_mut().zip(dys).zip(ys) {
            *d += r * (g - mean_dy - yv * mean_dyy);
        }
    }
}

/// One trilinear tap along an axis.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tap {
    pub i0: usize,
    pub i1: usize,
    pub f: f64,
}

/// Output voxel `i` samples input coordinate `(i + 0.5)·ratio − 0.5`,
/// clamped to the input range.
pub(crate) fn axis_taps(n_out: usize, n_in: usize, ratio: f64) -> Vec<Tap> {
    (0..n_out)
        .map(|i| {
            let x = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = x.floor() as usize;
            Tap { i0, i1: (i0 + 1).min(n_in - 1), f: x - i0 as f64 }
        })
        .collect()
}

/// Trilinear resize of `channels` volumes of shape `src` to `dst`.
pub(crate) fn resize(x: &[f64], channels: usize, src: [usize; 3], taps: &[Vec<Tap>; 3]) -> Vec<f64> {
    let dst = [taps[0].len(), taps[1].len(), taps[2].len()];
    let vs: usize = src.iter().product();
    let vd: usize = dst.iter().product();
    let mut out = vec![0.0; channels * vd];
    for c in 0..channels {
        let xs = &x[c * vs..(c + 1) * vs];
        let os = &mut out[c * vd..(c + 1) * vd];
        let mut o = 0;
        for tx in &taps[0] {
            for ty in &taps[1] {
                for tz in &taps[2] {
                    let mut acc = 0.0;
                    for (ix, wx) in [(tx.i0, 1.0 - tx.f), (tx.i1, tx.f)] {
                        for (iy, wy) in [(ty.i0, 1.0 - ty.f), (ty.i1, ty.f)] {
                            let row = (ix * src[1] + iy) * src[2];
                            let w = wx * wy;
                            acc += w * ((1.0 - tz.f) * xs[row + tz.i0] + tz.f * xs[row + tz.i1]);
                        }
                    }
                    os[o] = acc;
                    o += 1;
                }
            }
        }
    }
    out
}

pub(crate) fn resize_backward(dy: &[f64], dx: &mut [f64], channels: usize, src: [usize; 3], taps: &[Vec<Tap>; 3]) {
    let dst = [taps[0].len(), taps[1].len(), taps[2].len()];
    let vs: usize = src.iter().product();
    let vd: usize = dst.iter().product();
    for c in 0..channels {
        let gs = &dy[c * vd..(c + 1) * vd];
        let xs = &mut dx[c * vs..(c + 1) * vs];
        let mut o = 0;
        for tx in &taps[0] {
            for ty in &taps[1] {
                for tz in &taps[2] {
                    let g = gs[o];
                    o += 1;
                    for (ix, wx) in [(tx.i0, 1.0 - tx.f), (tx.i1, tx.f)] {
                        for (iy, wy) in [(ty.i0, 1.0 - ty.f), (ty.i1, ty.f)] {
                            let row = (ix * src[1] + iy) * src[2];
                            let w = wx * wy * g;
                            xs[row + tz.i0] += w * (1.0 - tz.f);
                            xs[row + tz.i1] += w * tz.f;
                        }
                    }
                }
            }
        }
    }
}

/// Max pooling with per-axis factors; partial edge windows are kept.
/// Returns output and the flat source index of each maximum.
pub(crate) fn max_pool(x: &[f64], channels: usize, src: [usize; 3], f: [usize; 3]) -> (Vec<f64>, Vec<usize>, [usize; 3]) {
    let dst: [usize; 3] = std::array::from_fn(|a| src[a].div_ceil(f[a]));
    let vs: usize = src.iter().product();
    let vd: usize = dst.iter().product();
    let mut out = Vec::with_capacity(channels * vd);
    let mut arg = Vec::with_capacity(channels * vd);
    for c in 0..channels {
        let base = c * vs;
        for i in 0..dst[0] {
            for j in 0..dst[1] {
                for k in 0..dst[2] {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for a in i * f[0]..((i + 1) * f[0]).min(src[0]) {
                        for b in j * f[1]..((j + 1) * f[1]).min(src[1]) {
                            for d in k * f[2]..((k + 1) * f[2]).min(src[2]) {
                                let idx = base + (a * src[1] + b) * src[2] + d;
                                if x[idx] > best {
                                    best = x[idx];
                                    best_i = idx;
                                }
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_i);
                }
            }
        }
    }
    (out, arg, dst)
}
