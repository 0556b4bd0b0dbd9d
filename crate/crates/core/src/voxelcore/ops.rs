//! Geometry-changing operations on voxel grids.

use super::grid::flat_index;
use super::{Affine, BinaryMask, Spacing, VoxelError, VoxelGrid};

const AXIS_PERMUTATIONS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// Reorder and flip voxel axes so that axis directions point toward
/// +Right, +Anterior, +Superior as closely as possible. The set of
/// (world coordinate, value) pairs is preserved.
pub fn conform_ras(g: &VoxelGrid) -> Result<VoxelGrid, VoxelError> {
    let a = g.affine();
    a.inverse()?;
    let sizes = a.voxel_sizes();
    let cosines: Vec<[f64; 3]> = (0..3)
        .map(|j| {
            let c = a.column(j);
            [c[0] / sizes[j], c[1] / sizes[j], c[2] / sizes[j]]
        })
        .collect();

    // new world axis w is fed by old voxel axis perm[w]
    let perm = AXIS_PERMUTATIONS
        .iter()
        .copied()
        .max_by(|p, q| {
            let score = |p: &[usize; 3]| (0..3).map(|w| cosines[p[w]][w].abs()).sum::<f64>();
            score(p).total_cmp(&score(q))
        })
        .unwrap();
    let flip: [bool; 3] = std::array::from_fn(|w| cosines[perm[w]][w] < 0.0);

    if perm == [0, 1, 2] && !flip.iter().any(|&f| f) {
        return Ok(g.clone());
    }

    let old_shape = g.shape();
    let shape: [usize; 3] = std::array::from_fn(|w| old_shape[perm[w]]);

    let mut affine = *a;
    let mut origin = a.origin();
    for w in 0..3 {
        let col = a.column(perm[w]);
        if flip[w] {
            let n = (old_shape[perm[w]] - 1) as f64;
            for r in 0..3 {
                origin[r] += col[r] * n;
            }
            affine.set_column(w, [-col[0], -col[1], -col[2]]);
        } else {
            affine.set_column(w, col);
        }
    }
    affine.set_column(3, origin);

    let src = g.values();
    let mut values = Vec::with_capacity(src.len());
    let mut old = [0usize; 3];
    for a0 in 0..shape[0] {
        for a1 in 0..shape[1] {
            for a2 in 0..shape[2] {
                for (w, &aw) in [a0, a1, a2].iter().enumerate() {
                    old[perm[w]] = if flip[w] { shape[w] - 1 - aw } else { aw };
                }
                values.push(src[flat_index(old_shape, old[0], old[1], old[2])]);
            }
        }
    }
    VoxelGrid::new(shape, values, affine)
}

/// Same permutation/flip applied to a mask.
pub fn conform_mask_ras(m: &BinaryMask) -> Result<BinaryMask, VoxelError> {
    let g = conform_ras(&m.to_grid())?;
    Ok(BinaryMask::from_grid(&g))
}

/// Min-max scale to [0,1]; a constant image maps to zeros.
pub fn normalize01(g: &VoxelGrid) -> VoxelGrid {
    let (lo, hi) = g.values().iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    let values = if range > 0.0 {
        g.values().iter().map(|&v| (v - lo) / range).collect()
    } else {
        vec![0.0; g.len()]
    };
    g.with_values(values).expect("geometry unchanged")
}

/// Voxel-index bounding box of the foreground, inclusive.
pub fn mask_bbox(m: &BinaryMask) -> Option<([usize; 3], [usize; 3])> {
    let [nx, ny, nz] = m.shape();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                if m.get(i, j, k) {
                    any = true;
                    for (a, v) in [i, j, k].into_iter().enumerate() {
                        lo[a] = lo[a].min(v);
                        hi[a] = hi[a].max(v);
                    }
                }
            }
        }
    }
    any.then_some((lo, hi))
}

/// Extract the sub-grid `lo..=hi`, shifting the affine origin so world
/// coordinates of retained voxels are unchanged.
pub fn extract_box(g: &VoxelGrid, lo: [usize; 3], hi: [usize; 3]) -> Result<VoxelGrid, VoxelError> {
    let src_shape = g.shape();
    let shape: [usize; 3] = std::array::from_fn(|a| hi[a] - lo[a] + 1);
    let mut values = Vec::with_capacity(shape.iter().product());
    for i in lo[0]..=hi[0] {
        for j in lo[1]..=hi[1] {
            let start = flat_index(src_shape, i, j, lo[2]);
            values.extend_from_slice(&g.values()[start..start + shape[2]]);
        }
    }
    let mut affine = *g.affine();
    affine.set_column(3, g.world_of(lo[0], lo[1], lo[2]));
    VoxelGrid::new(shape, values, affine)
}

/// Crop to the mask's bounding box grown by `margin_mm` per side, clamped
/// to the field of view.
pub fn crop_margin(g: &VoxelGrid, m: &BinaryMask, margin_mm: f64) -> Result<VoxelGrid, VoxelError> {
    if !m.matches(g) {
        return Err(VoxelError::Domain("mask geometry does not match grid".into()));
    }
    if !(margin_mm >= 0.0) {
        return Err(VoxelError::Domain(format!("margin must be non-negative, got {margin_mm}")));
    }
    let (lo, hi) = mask_bbox(m).ok_or_else(|| VoxelError::Domain("cannot crop to an empty mask".into()))?;
    let sizes = g.voxel_sizes();
    let shape = g.shape();
    let mut lo2 = [0; 3];
    let mut hi2 = [0; 3];
    for a in 0..3 {
        let pad = (margin_mm / sizes[a] + 1e-9).floor() as usize;
        lo2[a] = lo[a].saturating_sub(pad);
        hi2[a] = (hi[a] + pad).min(shape[a] - 1);
    }
    extract_box(g, lo2, hi2)
}

#[derive(Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    f: f64,
}

fn axis_taps(n_out: usize, n_in: usize, ratio: f64, offset: f64) -> Vec<Tap> {
    (0..n_out)
        .map(|i| {
            let x = ((i as f64 + 0.5) * ratio - 0.5 + offset).clamp(0.0, (n_in - 1) as f64);
            let i0 = x.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            Tap { i0, i1, f: x - i0 as f64 }
        })
        .collect()
}

fn separable_trilinear(src: &[f32], shape: [usize; 3], taps: &[Vec<Tap>; 3]) -> Vec<f32> {
    let out_shape = [taps[0].len(), taps[1].len(), taps[2].len()];
    let mut out = Vec::with_capacity(out_shape.iter().product());
    for tx in &taps[0] {
        for ty in &taps[1] {
            for tz in &taps[2] {
                let mut acc = 0.0f64;
                for (ix, wx) in [(tx.i0, 1.0 - tx.f), (tx.i1, tx.f)] {
                    if wx == 0.0 {
                        continue;
                    }
                    for (iy, wy) in [(ty.i0, 1.0 - ty.f), (ty.i1, ty.f)] {
                        if wy == 0.0 {
                            continue;
                        }
                        for (iz, wz) in [(tz.i0, 1.0 - tz.f), (tz.i1, tz.f)] {
                            if wz == 0.0 {
                                continue;
                            }
                            acc += wx * wy * wz * src[flat_index(shape, ix, iy, iz)] as f64;
                        }
                    }
                }
                out.push(acc as f32);
            }
        }
    }
    out
}

/// Resample to per-axis voxel sizes `target` (mm). New shape is
/// `ceil(extent / target)`; the first new voxel's corner coincides with
/// the old field-of-view corner.
pub fn resample_spacing(g: &VoxelGrid, target: [f64; 3]) -> Result<VoxelGrid, VoxelError> {
    if target.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
        return Err(VoxelError::Domain(format!("target spacing must be positive, got {target:?}")));
    }
    let sizes = g.voxel_sizes();
    let shape = g.shape();
    let ratio: [f64; 3] = std::array::from_fn(|a| target[a] / sizes[a]);
    let new_shape: [usize; 3] = std::array::from_fn(|a| ((shape[a] as f64 / ratio[a]) - 1e-9).ceil().max(1.0) as usize);
    let taps: [Vec<Tap>; 3] = std::array::from_fn(|a| axis_taps(new_shape[a], shape[a], ratio[a], 0.0));
    let values = separable_trilinear(g.values(), shape, &taps);

    let a = g.affine();
    let mut affine = *a;
    for j in 0..3 {
        let c = a.column(j);
        affine.set_column(j, [c[0] * ratio[j], c[1] * ratio[j], c[2] * ratio[j]]);
    }
    affine.set_column(3, a.apply(std::array::from_fn(|j| 0.5 * ratio[j] - 0.5)));
    VoxelGrid::new(new_shape, values, affine)
}

/// Trilinear resampling to an in-plane/slice spacing pair.
pub fn resample(g: &VoxelGrid, target: Spacing) -> Result<VoxelGrid, VoxelError> {
    resample_spacing(g, [target.inplane(), target.inplane(), target.sep()])
}

/// How to interpolate when mapping onto a new geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interp {
    Linear,
    Nearest,
}

/// Sample `g` at the voxel centres of a target geometry through world
/// space. Out-of-field positions clamp to the nearest edge voxel.
pub fn resample_to_geometry(g: &VoxelGrid, shape: [usize; 3], affine: &Affine, interp: Interp) -> Result<VoxelGrid, VoxelError> {
    let to_src = g.affine().inverse()?.compose(affine);
    let src_shape = g.shape();
    let src = g.values();
    let mut values = Vec::with_capacity(shape.iter().product());
    for i in 0..shape[0] {
        for j in 0..shape[1] {
            for k in 0..shape[2] {
                let p = to_src.apply([i as f64, j as f64, k as f64]);
                values.push(sample_point(src, src_shape, p, interp));
            }
        }
    }
    VoxelGrid::new(shape, values, *affine)
}

/// Sample at a continuous voxel index with edge clamping.
pub fn sample_point(src: &[f32], shape: [usize; 3], p: [f64; 3], interp: Interp) -> f32 {
    let c: [f64; 3] = std::array::from_fn(|a| p[a].clamp(0.0, (shape[a] - 1) as f64));
    match interp {
        Interp::Nearest => {
            let r: [usize; 3] = std::array::from_fn(|a| (c[a] + 0.5).floor().min((shape[a] - 1) as f64) as usize);
            src[flat_index(shape, r[0], r[1], r[2])]
        }
        Interp::Linear => {
            let i0: [usize; 3] = std::array::from_fn(|a| c[a].floor() as usize);
            let f: [f64; 3] = std::array::from_fn(|a| c[a] - i0[a] as f64);
            let mut acc = 0.0f64;
            for dx in 0..2 {
                for dy in 0..2 {
                    for dz in 0..2 {
                        let w = [dx, dy, dz]
                            .iter()
                            .enumerate()
                            .map(|(a, &d)| if d == 0 { 1.0 - f[a] } else { f[a] })
                            .product::<f64>();
                        if w == 0.0 {
                            continue;
                        }
                        let idx: [usize; 3] = std::array::from_fn(|a| (i0[a] + [dx, dy, dz][a]).min(shape[a] - 1));
                        acc += w * src[flat_index(shape, idx[0], idx[1], idx[2])] as f64;
                    }
                }
            }
            acc as f32
        }
    }
}

/// Conform to RAS and, when the two in-plane spacings differ by more than
/// 1e-3 relative, resample in-plane to the finer of the two.
pub fn conform_for_network(g: &VoxelGrid) -> Result<VoxelGrid, VoxelError> {
    let c = conform_ras(g)?;
    let s = c.voxel_sizes();
    if (s[0] - s[1]).abs() > 1e-3 * s[0].max(s[1]) {
        let inp = s[0].min(s[1]);
        return resample_spacing(&c, [inp, inp, s[2]]);
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: [usize; 3], affine: Affine) -> VoxelGrid {
        let n: usize = shape.iter().product();
        VoxelGrid::new(shape, (0..n).map(|v| v as f32).collect(), affine).unwrap()
    }

    fn world_value_set(g: &VoxelGrid) -> Vec<([i64; 3], u32)> {
        let [nx, ny, nz] = g.shape();
        let mut out = Vec::new();
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    let w = g.world_of(i, j, k);
                    out.push((std::array::from_fn(|a| (w[a] * 1e6).round() as i64), g.get(i, j, k).to_bits()));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn conform_identity_is_noop() {
        let g = ramp([3, 4, 5], Affine::identity());
        assert_eq!(conform_ras(&g).unwrap(), g);
    }

    #[test]
    fn conform_negated_first_column() {
        let mut a = Affine::identity();
        a.0[0][0] = -1.0;
        let g = ramp([3, 2, 2], a);
        let c = conform_ras(&g).unwrap();
        assert_eq!(c.affine().0[0][0], 1.0);
        assert_eq!(c.affine().origin(), [-2.0, 0.0, 0.0]);
        // axis 0 reversed
        assert_eq!(c.get(0, 0, 0), g.get(2, 0, 0));
        assert_eq!(c.get(2, 1, 1), g.get(0, 1, 1));
        assert_eq!(world_value_set(&c), world_value_set(&g));
    }

    #[test]
    fn conform_lps_to_ras() {
        // LPS: axis0 → -R, axis1 → -A, axis2 → +S
        let mut a = Affine::from_spacing([1.0, 2.0, 3.0], [10.0, 20.0, -5.0]);
        a.0[0][0] = -1.0;
        a.0[1][1] = -2.0;
        let g = ramp([4, 3, 2], a);
        let c = conform_ras(&g).unwrap();
        for j in 0..3 {
            let col = c.affine().column(j);
            assert!(col[j] > 0.0);
        }
        assert_eq!(world_value_set(&c), world_value_set(&g));
    }

    #[test]
    fn conform_permuted_axes() {
        // axis0 → S, axis1 → R, axis2 → A
        let mut a = Affine(Default::default());
        a.0[2][0] = 2.0;
        a.0[0][1] = 1.0;
        a.0[1][2] = -1.0;
        a.0[3][3] = 1.0;
        let g = ramp([2, 3, 4], a);
        let c = conform_ras(&g).unwrap();
        assert_eq!(c.shape(), [3, 4, 2]);
        assert_eq!(world_value_set(&c), world_value_set(&g));
    }

    #[test]
    fn normalize_examples() {
        let g = VoxelGrid::new([3, 1, 1], vec![2.0, 4.0, 6.0], Affine::identity()).unwrap();
        assert_eq!(normalize01(&g).values(), &[0.0, 0.5, 1.0]);
        let c = VoxelGrid::filled([2, 2, 2], 7.0, Affine::identity()).unwrap();
        assert!(normalize01(&c).values().iter().all(|&v| v == 0.0));
        let m = VoxelGrid::new([3, 1, 1], vec![-1.0, 1.0, 3.0], Affine::identity()).unwrap();
        assert_eq!(normalize01(&m).values()[1], 0.5);
    }

    #[test]
    fn crop_examples() {
        let g = ramp([9, 9, 9], Affine::identity());
        let full = BinaryMask::from_fn(&g, |_, _, _| true);
        assert_eq!(crop_margin(&g, &full, 5.0).unwrap(), g);

        let centre = BinaryMask::from_fn(&g, |i, j, k| (i, j, k) == (4, 4, 4));
        let c0 = crop_margin(&g, &centre, 0.0).unwrap();
        assert_eq!(c0.shape(), [1, 1, 1]);
        assert_eq!(c0.get(0, 0, 0), g.get(4, 4, 4));
        assert_eq!(c0.world_of(0, 0, 0), [4.0, 4.0, 4.0]);

        let c2 = crop_margin(&g, &centre, 2.0).unwrap();
        assert_eq!(c2.shape(), [5, 5, 5]);
        for i in 0..5 {
            for j in 0..5 {
                for k in 0..5 {
                    assert_eq!(c2.get(i, j, k), g.get(i + 2, j + 2, k + 2));
                    assert_eq!(c2.world_of(i, j, k), g.world_of(i + 2, j + 2, k + 2));
                }
            }
        }
        let empty = BinaryMask::empty_like(&g);
        assert!(crop_margin(&g, &empty, 1.0).is_err());
    }

    #[test]
    fn resample_same_spacing_is_identity() {
        let g = ramp([4, 5, 6], Affine::from_spacing([1.0, 1.0, 2.0], [3.0, 0.0, 0.0]));
        let r = resample(&g, Spacing::new(1.0, 2.0).unwrap()).unwrap();
        assert_eq!(r, g);
    }

    #[test]
    fn resample_constant_stays_constant() {
        let g = VoxelGrid::filled([5, 4, 3], 0.3, Affine::from_spacing([1.0, 1.0, 3.0], [0.0; 3])).unwrap();
        for (inp, sep) in [(0.7, 1.3), (2.0, 2.0), (0.5, 4.5)] {
            let r = resample(&g, Spacing::new(inp, sep).unwrap()).unwrap();
            assert!(r.values().iter().all(|&v| (v - 0.3).abs() < 1e-6));
        }
    }

    #[test]
    fn resample_ramp_matches_line() {
        // value = axis-0 index along a 1 mm grid; halve the spacing
        let n = 8;
        let mut vals = Vec::new();
        for i in 0..n {
            for _ in 0..2 {
                for _ in 0..2 {
                    vals.push(i as f32);
                }
            }
        }
        let g = VoxelGrid::new([n, 2, 2], vals, Affine::identity()).unwrap();
        let r = resample_spacing(&g, [0.5, 1.0, 1.0]).unwrap();
        assert_eq!(r.shape(), [16, 2, 2]);
        for i in 0..16 {
            // new centre in old index coordinates
            let x = (i as f64 + 0.5) * 0.5 - 0.5;
            let expect = x.clamp(0.0, (n - 1) as f64);
            assert!((r.get(i, 0, 0) as f64 - expect).abs() < 1e-6, "i={i}");
            // world position agrees with the analytic sample location
            assert!((r.world_of(i, 0, 0)[0] - x).abs() < 1e-12);
        }
    }

    #[test]
    fn conform_for_network_equalises_inplane() {
        let g = VoxelGrid::filled([4, 4, 2], 1.0, Affine::from_spacing([1.0, 2.0, 3.0], [0.0; 3])).unwrap();
        let c = conform_for_network(&g).unwrap();
        let s = c.voxel_sizes();
        assert!((s[0] - s[1]).abs() < 1e-9);
        assert_eq!(c.shape(), [4, 8, 2]);
    }
}
