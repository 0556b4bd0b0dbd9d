use super::{BinaryMask, VoxelError, VoxelGrid};

/// Dice overlap `2|A∩B| / (|A|+|B|)`. Two empty masks score 1.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64, VoxelError> {
    if !a.same_geometry(b) {
        return Err(VoxelError::Domain("dice: mask geometry mismatch".into()));
    }
    let mut inter = 0usize;
    let mut total = 0usize;
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += (x & y) as usize;
        total += x as usize + y as usize;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Morphometric and intensity summary of a masked region.
#[derive(Clone, Debug, PartialEq)]
pub struct RoiReport {
    pub volume_mm3: f64,
    /// Bounding-box extent along world R, A, S in mm.
    pub extents_mm: [f64; 3],
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// `mean / std`, absent when `std <= 1e-8`.
    pub snr: Option<f64>,
}

impl RoiReport {
    pub fn degenerate_statistics(&self) -> bool {
        self.snr.is_none()
    }
}

pub fn roi_report(g: &VoxelGrid, m: &BinaryMask) -> Result<RoiReport, VoxelError> {
    if !m.matches(g) {
        return Err(VoxelError::Domain("roi_report: mask geometry does not match grid".into()));
    }
    let a = g.affine();
    let [nx, ny, nz] = g.shape();
    let mut count = 0usize;
    let mut sum = 0.0f64;
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                if !m.get(i, j, k) {
                    continue;
                }
                count += 1;
                sum += g.get(i, j, k) as f64;
                let w = a.apply([i as f64, j as f64, k as f64]);
                for ax in 0..3 {
                    lo[ax] = lo[ax].min(w[ax]);
                    hi[ax] = hi[ax].max(w[ax]);
                }
            }
        }
    }
    if count == 0 {
        return Err(VoxelError::Domain("roi_report: empty mask".into()));
    }
    let mean = sum / count as f64;
    let mut var = 0.0f64;
    for (&v, &b) in g.values().iter().zip(m.bits()) {
        if b == 1 {
            let d = v as f64 - mean;
            var += d * d;
        }
    }
    let std = (var / count as f64).sqrt();
    // each voxel covers the projection of its cell onto each world axis
    let footprint: [f64; 3] = std::array::from_fn(|w| (0..3).map(|j| a.0[w][j].abs()).sum());
    let extents_mm = std::array::from_fn(|w| (hi[w] - lo[w]) + footprint[w]);
    Ok(RoiReport {
        volume_mm3: count as f64 * a.voxel_volume(),
        extents_mm,
        mean,
        std,
        snr: (std > 1e-8).then(|| mean / std),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxelcore::Affine;

    fn grid(shape: [usize; 3], spacing: [f64; 3]) -> VoxelGrid {
        VoxelGrid::filled(shape, 1.0, Affine::from_spacing(spacing, [0.0; 3])).unwrap()
    }

    #[test]
    fn dice_examples() {
        let g = grid([4, 4, 4], [1.0; 3]);
        let a = BinaryMask::from_fn(&g, |i, _, _| i == 0);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let b = BinaryMask::from_fn(&g, |i, _, _| i == 3);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        let e = BinaryMask::empty_like(&g);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        // |A| = |B| = 4, overlap 2
        let c = BinaryMask::from_fn(&g, |i, j, _| i == 0 && j == 0);
        let d = BinaryMask::from_fn(&g, |i, j, k| j == 0 && k < 2 && i < 2);
        assert_eq!(c.count(), 4);
        assert_eq!(d.count(), 4);
        assert_eq!(dice(&c, &d).unwrap(), 0.5);
    }

    #[test]
    fn dice_geometry_mismatch() {
        let a = BinaryMask::empty_like(&grid([2, 2, 2], [1.0; 3]));
        let b = BinaryMask::empty_like(&grid([2, 2, 3], [1.0; 3]));
        assert!(dice(&a, &b).is_err());
    }

    #[test]
    fn report_volume_and_extents() {
        let g = grid([6, 6, 6], [1.0, 1.0, 2.0]);
        let m = BinaryMask::from_fn(&g, |i, j, k| i < 3 && j < 4 && k < 5);
        assert_eq!(m.count(), 60);
        let r = roi_report(&g, &m).unwrap();
        assert_eq!(r.volume_mm3, 120.0);

        let iso = grid([6, 6, 6], [1.0; 3]);
        let m = BinaryMask::from_fn(&iso, |i, j, k| i < 3 && j < 4 && k < 5);
        assert_eq!(roi_report(&iso, &m).unwrap().extents_mm, [3.0, 4.0, 5.0]);
    }

    #[test]
    fn report_statistics() {
        let g = VoxelGrid::new([2, 1, 1], vec![4.0, 6.0], Affine::identity()).unwrap();
        let m = BinaryMask::from_fn(&g, |_, _, _| true);
        let r = roi_report(&g, &m).unwrap();
        assert_eq!((r.mean, r.std, r.snr), (5.0, 1.0, Some(5.0)));

        let flat = grid([2, 2, 2], [1.0; 3]);
        let r = roi_report(&flat, &BinaryMask::from_fn(&flat, |_, _, _| true)).unwrap();
        assert!(r.degenerate_statistics());
        assert!(roi_report(&flat, &BinaryMask::empty_like(&flat)).is_err());
    }
}
