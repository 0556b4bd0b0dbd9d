//! Attention kernels: per-voxel attention across streams, and causal
//! multi-head self-attention over a token sequence.

/// Per-voxel attention over `s` streams. `q`, `k`, `v` are `[s, b, vox]`.
/// Returns output `[s, b, vox]` and attention weights `[vox, s, s]`.
pub(crate) fn stream_attention(q: &[f64], k: &[f64], v: &[f64], s: usize, b: usize, vox: usize, scale: f64) -> (Vec<f64>, Vec<f64>) {
    let mut out = vec![0.0; s * b * vox];
    let mut probs = vec![0.0; vox * s * s];
    let mut scores = vec![0.0; s];
    for p in 0..vox {
        for i in 0..s {
            let mut mx = f64::NEG_INFINITY;
            for (j, sc) in scores.iter_mut().enumerate() {
                let mut dot = 0.0;
                for c in 0..b {
                    dot += q[(i * b + c) * vox + p] * k[(j * b + c) * vox + p];
                }
                *sc = dot * scale;
                mx = mx.max(*sc);
            }
            let mut sum = 0.0;
            for sc in scores.iter_mut() {
                *sc = (*sc - mx).exp();
                sum += *sc;
            }
            let row = &mut probs[(p * s + i) * s..(p * s + i + 1) * s];
            for (r, sc) in row.iter_mut().zip(&scores) {
                *r = sc / sum;
            }
            for c in 0..b {
                let mut acc = 0.0;
                for j in 0..s {
                    acc += row[j] * v[(j * b + c) * vox + p];
                }
                out[(i * b + c) * vox + p] = acc;
            }
        }
    }
    (out, probs)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn stream_attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    dout: &[f64],
    (s, b, vox): (usize, usize, usize),
    scale: f64,
    dq: &mut [f64],
    dk: &mut [f64],
    dv: &mut [f64],
) {
    let mut dp = vec![0.0; s];
    for p in 0..vox {
        for i in 0..s {
            let row = &probs[(p * s + i) * s..(p * s + i + 1) * s];
            for j in 0..s {
                let mut acc = 0.0;
                for c in 0..b {
                    let g = dout[(i * b + c) * vox + p];
                    acc += g * v[(j * b + c) * vox + p];
                    dv[(j * b + c) * vox + p] += row[j] * g;
                }
                dp[j] = acc;
            }
            let dot: f64 = row.iter().zip(&dp).map(|(a, b)| a * b).sum();
            for j in 0..s {
                let ds = row[j] * (dp[j] - dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                for c in 0..b {
                    dq[(i * b + c) * vox + p] += ds * k[(j * b + c) * vox + p];
                    dk[(j * b + c) * vox + p] += ds * q[(i * b + c) * vox + p];
                }
            }
        }
    }
}

/// Causal multi-head attention. `q`, `k`, `v` are `[t, d]` with `d = heads·dh`.
/// Returns output `[t, d]` and weights `[heads, t, t]` (upper triangle zero).
pub(crate) fn causal_attention(q: &[f64], k: &[f64], v: &[f64], t: usize, d: usize, heads: usize) -> (Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; t * d];
    let mut probs = vec![0.0; heads * t * t];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..t {
            let row = &mut probs[(h * t + i) * t..(h * t + i + 1) * t];
            let qi = &q[i * d + off..i * d + off + dh];
            let mut mx = f64::NEG_INFINITY;
            for j in 0..=i {
                let kj = &k[j * d + off..j * d + off + dh];
                let s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                row[j] = s;
                mx = mx.max(s);
            }
            let mut sum = 0.0;
            for r in row.iter_mut().take(i + 1) {
                *r = (*r - mx).exp();
                sum += *r;
            }
            for r in row.iter_mut().take(i + 1) {
                *r /= sum;
            }
            let oi = &mut out[i * d + off..i * d + off + dh];
            for j in 0..=i {
                let w = row[j];
                let vj = &v[j * d + off..j * d + off + dh];
                for (o, x) in oi.iter_mut().zip(vj) {
                    *o += w * x;
                }
            }
        }
    }
    (out, probs)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn causal_attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    dout: &[f64],
    (t, d, heads): (usize, usize, usize),
    dq: &mut [f64],
    dk: &mut [f64],
    dv: &mut [f64],
) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dp = vec![0.0; t];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..t {
            let row = &probs[(h * t + i) * t..(h * t + i + 1) * t];
            let go = &dout[i * d + off..i * d + off + dh];
            for j in 0..=i {
                let vj = &v[j * d + off..j * d + off + dh];
                dp[j] = go.iter().zip(vj).map(|(a, b)| a * b).sum();
                let w = row[j];
                for (dvv, g) in dv[j * d + off..j * d + off + dh].iter_mut().zip(go) {
                    *dvv += w * g;
                }
            }
            let dot: f64 = (0..=i).map(|j| row[j] * dp[j]).sum();
            for j in 0..=i {
                let ds = row[j] * (dp[j] - dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                for c in 0..dh {
                    dq[i * d + off + c] += ds * k[j * d + off + c];
                    dk[j * d + off + c] += ds * q[i * d + off + c];
                }
            }
        }
    }
}
