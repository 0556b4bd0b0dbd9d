//! Training augmentations. Spatial transforms are shared by all volumes
//! and masks of one instance; intensity transforms touch volumes only.

use super::TaskError;
use crate::voxelcore::{extract_box, flat_index, mask_bbox, resample_spacing, resample_to_geometry, sample_point, Affine, BinaryMask, Interp, VoxelGrid};
use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub p_affine: f64,
    pub max_rotation_deg: f64,
    pub max_zoom: f64,
    pub max_shift_mm: f64,
    pub p_bias: f64,
    /// Peak relative amplitude of the multiplicative bias field.
    pub bias_strength: f64,
    pub p_gamma: f64,
    /// γ = exp(u), u uniform in ±this.
    pub max_log_gamma: f64,
    pub p_flip: f64,
    pub p_crop: f64,
    pub p_mask: f64,
    pub p_resize: f64,
    /// Relative voxel-size range for resizing.
    pub resize: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p_affine: 0.5,
            max_rotation_deg: 10.0,
            max_zoom: 0.1,
            max_shift_mm: 1.5,
            p_bias: 0.5,
            bias_strength: 0.15,
            p_gamma: 0.5,
            max_log_gamma: 0.25,
            p_flip: 0.5,
            p_crop: 0.25,
            p_mask: 0.25,
            p_resize: 0.25,
            resize: (0.8, 1.25),
        }
    }
}

/// Mirror the values along the first (left-right) voxel axis.
pub fn flip_lateral(g: &VoxelGrid) -> VoxelGrid {
    let s = g.shape();
    let mut out = vec![0.0f32; g.len()];
    for i in 0..s[0] {
        for j in 0..s[1] {
            for k in 0..s[2] {
                out[flat_index(s, s[0] - 1 - i, j, k)] = g.get(i, j, k);
            }
        }
    }
    g.with_values(out).expect("same geometry")
}

pub fn flip_mask(m: &BinaryMask) -> BinaryMask {
    BinaryMask::from_grid(&flip_lateral(&m.to_grid()))
}

/// Rotation by Euler angles (radians), uniform zoom and a shift (mm)
/// about the grid centre, as a world-to-world transform.
pub fn warp_transform(g: &VoxelGrid, angles: [f64; 3], zoom: f64, shift: [f64; 3]) -> Affine {
    let [a, b, c] = angles;
    let rz = [[a.cos(), -a.sin(), 0.0], [a.sin(), a.cos(), 0.0], [0.0, 0.0, 1.0]];
    let ry = [[b.cos(), 0.0, b.sin()], [0.0, 1.0, 0.0], [-b.sin(), 0.0, b.cos()]];
    let rx = [[1.0, 0.0, 0.0], [0.0, c.cos(), -c.sin()], [0.0, c.sin(), c.cos()]];
    let mm = |p: [[f64; 3]; 3], q: [[f64; 3]; 3]| -> [[f64; 3]; 3] { std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| p[i][k] * q[k][j]).sum())) };
    let r = mm(mm(rz, ry), rx);
    let s = g.shape();
    let center = g.affine().apply(std::array::from_fn(|a| (s[a] as f64 - 1.0) / 2.0));
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = r[i][j] * zoom;
        }
        // x' = zR(x - c) + c + t
        m[i][3] = center[i] + shift[i] - (0..3).map(|j| m[i][j] * center[j]).sum::<f64>();
    }
    m[3][3] = 1.0;
    Affine(m)
}

/// Resample `g` through the world transform `t`: output(x) = g(t⁻¹ x).
pub fn warp(g: &VoxelGrid, t: &Affine, interp: Interp) -> Result<VoxelGrid, TaskError> {
    let to_src = g.affine().inverse()?.compose(&t.inverse()?).compose(g.affine());
    let s = g.shape();
    let mut out = Vec::with_capacity(g.len());
    for i in 0..s[0] {
        for j in 0..s[1] {
            for k in 0..s[2] {
                let p = to_src.apply([i as f64, j as f64, k as f64]);
                let inside = (0..3).all(|a| p[a] > -0.5 && p[a] < s[a] as f64 - 0.5);
                out.push(if inside { sample_point(g.values(), s, p, interp) } else { 0.0 });
            }
        }
    }
    Ok(g.with_values(out)?)
}

pub fn warp_mask(m: &BinaryMask, t: &Affine) -> Result<BinaryMask, TaskError> {
    Ok(BinaryMask::from_grid(&warp(&m.to_grid(), t, Interp::Nearest)?))
}

/// Multiply by a smooth field `1 + Σ c·cos(π f x)` built from a few
/// low-frequency terms.
pub fn bias_field(g: &VoxelGrid, strength: f64, rng: &mut impl Rng) -> VoxelGrid {
    let s = g.shape();
    let terms: Vec<([f64; 3], f64)> = (0..4)
        .map(|_| (std::array::from_fn(|_| rng.random_range(0.0..=1.0)), rng.random_range(-strength..=strength) / 2.0))
        .collect();
    let mut out = g.values().to_vec();
    for i in 0..s[0] {
        for j in 0..s[1] {
            for k in 0..s[2] {
                let u = [i as f64 / s[0] as f64, j as f64 / s[1] as f64, k as f64 / s[2] as f64];
                let f: f64 = 1.0 + terms.iter().map(|(fr, c)| c * (std::f64::consts::PI * (fr[0] * u[0] + fr[1] * u[1] + fr[2] * u[2])).cos()).sum::<f64>();
                let idx = flat_index(s, i, j, k);
                out[idx] = (out[idx] as f64 * f.max(0.0)) as f32;
            }
        }
    }
    g.with_values(out).expect("same geometry")
}

/// `lo + (hi - lo)·((v - lo)/(hi - lo))^γ` over the volume's range.
pub fn gamma(g: &VoxelGrid, gamma: f64) -> VoxelGrid {
    let (lo, hi) = g.values().iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return g.clone();
    }
    let r = (hi - lo) as f64;
    let vals = g.values().iter().map(|&v| (lo as f64 + r * (((v - lo) as f64) / r).powf(gamma)) as f32).collect();
    g.with_values(vals).expect("same geometry")
}

fn union(masks: &[BinaryMask]) -> Option<BinaryMask> {
    let mut it = masks.iter();
    let first = it.next()?.clone();
    Some(it.fold(first, |a, b| a.or(b).expect("masks share geometry")))
}

/// Apply a random subset of the augmentations.
pub fn augment(volumes: &[VoxelGrid], masks: &[BinaryMask], cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<(Vec<VoxelGrid>, Vec<BinaryMask>), TaskError> {
    let Some(first) = volumes.first() else {
        return Ok((Vec::new(), masks.to_vec()));
    };
    for v in volumes {
        if !v.same_geometry(first.shape(), first.affine()) {
            return Err(TaskError::Spec("augment needs geometry-matched volumes".into()));
        }
    }
    for m in masks {
        if !m.matches(first) {
            return Err(TaskError::Spec("augment needs masks on the volume grid".into()));
        }
    }
    let mut vols = volumes.to_vec();
    let mut ms = masks.to_vec();

    if rng.random_bool(cfg.p_flip) {
        vols = vols.iter().map(flip_lateral).collect();
        ms = ms.iter().map(flip_mask).collect();
    }
    if rng.random_bool(cfg.p_affine) {
        let d = cfg.max_rotation_deg.to_radians();
        let angles = std::array::from_fn(|_| rng.random_range(-d..=d));
        let zoom = 1.0 + rng.random_range(-cfg.max_zoom..=cfg.max_zoom);
        let shift = std::array::from_fn(|_| rng.random_range(-cfg.max_shift_mm..=cfg.max_shift_mm));
        let t = warp_transform(&vols[0], angles, zoom, shift);
        vols = vols.iter().map(|v| warp(v, &t, Interp::Linear)).collect::<Result<_, _>>()?;
        ms = ms.iter().map(|m| warp_mask(m, &t)).collect::<Result<_, _>>()?;
    }
    if rng.random_bool(cfg.p_crop) {
        // keep every mask inside the crop
        let s = vols[0].shape();
        let keep = union(&ms).and_then(|u| mask_bbox(&u));
        let (klo, khi) = keep.unwrap_or(([s[0] / 2, s[1] / 2, s[2] / 2], [s[0] / 2, s[1] / 2, s[2] / 2]));
        let lo: [usize; 3] = std::array::from_fn(|a| rng.random_range(0..=klo[a].min(s[a] / 8)));
        let hi: [usize; 3] = std::array::from_fn(|a| s[a] - 1 - rng.random_range(0..=(s[a] - 1 - khi[a]).min(s[a] / 8)));
        vols = vols.iter().map(|v| extract_box(v, lo, hi)).collect::<Result<_, _>>()?;
        ms = ms.iter().map(|m| extract_box(&m.to_grid(), lo, hi).map(|g| BinaryMask::from_grid(&g))).collect::<Result<_, _>>()?;
    }
    if rng.random_bool(cfg.p_resize) {
        let f = rng.random_range(cfg.resize.0..=cfg.resize.1);
        let vs = vols[0].voxel_sizes();
        let target = vs.map(|v| v * f);
        vols = vols.iter().map(|v| resample_spacing(v, target)).collect::<Result<_, _>>()?;
        let (shape, affine) = (vols[0].shape(), *vols[0].affine());
        ms = ms.iter().map(|m| resample_to_geometry(&m.to_grid(), shape, &affine, Interp::Nearest).map(|g| BinaryMask::from_grid(&g))).collect::<Result<_, _>>()?;
    }
    if rng.random_bool(cfg.p_mask) {
        // strip everything outside the foreground of the first volume
        let fg = BinaryMask::threshold(&vols[0], 0.05).dilate();
        vols = vols.iter().map(|v| v.with_values(v.values().iter().zip(fg.bits()).map(|(&x, &b)| if b == 1 { x } else { 0.0 }).collect())).collect::<Result<_, _>>()?;
    }
    if rng.random_bool(cfg.p_bias) {
        vols = vols.iter().map(|v| bias_field(v, cfg.bias_strength, rng)).collect();
    }
    if rng.random_bool(cfg.p_gamma) {
        let g = rng.random_range(-cfg.max_log_gamma..=cfg.max_log_gamma).exp();
        vols = vols.iter().map(|v| gamma(v, g)).collect();
    }
    Ok((vols, ms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxelcore::dice;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ball(shape: [usize; 3], r: f64) -> VoxelGrid {
        let a = Affine::from_spacing([1.0; 3], [0.0; 3]);
        let g = VoxelGrid::filled(shape, 0.0, a).unwrap();
        let c: [f64; 3] = std::array::from_fn(|i| (shape[i] as f64 - 1.0) / 2.0 + 1.3);
        BinaryMask::from_fn(&g, |i, j, k| ((i as f64 - c[0]).powi(2) + (j as f64 - c[1]).powi(2) + (k as f64 - c[2]).powi(2)) <= r * r).to_grid()
    }

    #[test]
    fn flip_twice_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = VoxelGrid::new([5, 4, 3], (0..60).map(|_| rng.random::<f32>()).collect(), Affine::identity()).unwrap();
        assert_eq!(flip_lateral(&flip_lateral(&g)), g);
        let m = BinaryMask::threshold(&g, 0.5);
        assert_eq!(flip_mask(&flip_mask(&m)), m);
    }

    #[test]
    fn warp_keeps_volume_and_mask_consistent() {
        let g = ball([24, 24, 24], 7.0);
        let m = BinaryMask::from_grid(&g);
        let t = warp_transform(&g, [0.15, -0.1, 0.12], 1.08, [1.2, -0.7, 0.4]);
        let wv = warp(&g, &t, Interp::Linear).unwrap();
        let wm = warp_mask(&m, &t).unwrap();
        let d = dice(&wm, &BinaryMask::threshold(&wv, 0.5)).unwrap();
        assert!(d >= 0.95, "dice {d}");
    }

    #[test]
    fn resize_preserves_extent() {
        let g = ball([20, 20, 12], 4.0);
        let m = BinaryMask::from_grid(&g);
        let cfg = AugmentConfig { p_affine: 0.0, p_bias: 0.0, p_gamma: 0.0, p_flip: 0.0, p_crop: 0.0, p_mask: 0.0, p_resize: 1.0, ..Default::default() };
        let (v, ms) = augment(std::slice::from_ref(&g), &[m], &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        for a in 0..3 {
            let before = g.shape()[a] as f64 * g.voxel_sizes()[a];
            let after = v[0].shape()[a] as f64 * v[0].voxel_sizes()[a];
            assert!((before - after).abs() <= v[0].voxel_sizes()[a] + 1e-9, "axis {a}: {before} vs {after}");
        }
        assert!(ms[0].matches(&v[0]));
    }

    #[test]
    fn full_pipeline_keeps_geometry_shared() {
        let g = ball([16, 16, 16], 4.0);
        let m = BinaryMask::from_grid(&g);
        let cfg = AugmentConfig { p_affine: 1.0, p_bias: 1.0, p_gamma: 1.0, p_flip: 1.0, p_crop: 1.0, p_mask: 1.0, p_resize: 1.0, ..Default::default() };
        for seed in 0..5 {
            let (v, ms) = augment(&[g.clone(), g.clone()], std::slice::from_ref(&m), &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert!(v[1].same_geometry(v[0].shape(), v[0].affine()));
            assert!(ms[0].matches(&v[0]));
            assert!(ms[0].count() > 0);
        }
    }
}
