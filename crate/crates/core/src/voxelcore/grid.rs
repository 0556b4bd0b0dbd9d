use super::{Affine, VoxelError};

/// In-plane and through-plane voxel spacing in mm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spacing {
    inplane: f64,
    sep: f64,
}

impl Spacing {
    pub fn new(inplane: f64, sep: f64) -> Result<Self, VoxelError> {
        if !(inplane > 0.0 && sep > 0.0) || !inplane.is_finite() || !sep.is_finite() {
            return Err(VoxelError::Domain(format!("spacing must be positive, got ({inplane}, {sep})")));
        }
        Ok(Spacing { inplane, sep })
    }

    pub fn inplane(&self) -> f64 {
        self.inplane
    }

    pub fn sep(&self) -> f64 {
        self.sep
    }

    /// Slice-to-in-plane ratio.
    pub fn omega(&self) -> f64 {
        self.sep / self.inplane
    }
}

/// A 3D scalar field with a voxel-to-world affine. Values are stored in C
/// order with axis 2 varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    shape: [usize; 3],
    values: Vec<f32>,
    affine: Affine,
}

#[inline]
pub fn flat_index(shape: [usize; 3], i: usize, j: usize, k: usize) -> usize {
    (i * shape[1] + j) * shape[2] + k
}

impl VoxelGrid {
    pub fn new(shape: [usize; 3], values: Vec<f32>, affine: Affine) -> Result<Self, VoxelError> {
        if shape.contains(&0) {
            return Err(VoxelError::Domain(format!("grid shape must be positive, got {shape:?}")));
        }
        let n = shape[0] * shape[1] * shape[2];
        if values.len() != n {
            return Err(VoxelError::Domain(format!("expected {n} values for shape {shape:?}, got {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(VoxelError::Domain("grid values must be finite".into()));
        }
        affine.inverse()?;
        Ok(VoxelGrid { shape, values, affine })
    }

    pub fn filled(shape: [usize; 3], value: f32, affine: Affine) -> Result<Self, VoxelError> {
        Self::new(shape, vec![value; shape.iter().product()], affine)
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn affine(&self) -> &Affine {
        &self.affine
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.values[flat_index(self.shape, i, j, k)]
    }

    /// Replace values, keeping geometry.
    pub fn with_values(&self, values: Vec<f32>) -> Result<Self, VoxelError> {
        Self::new(self.shape, values, self.affine)
    }

    pub fn voxel_sizes(&self) -> [f64; 3] {
        self.affine.voxel_sizes()
    }

    /// In-plane spacing is the mean of axes 0 and 1; axis 2 is the slice axis.
    pub fn spacing(&self) -> Spacing {
        let s = self.voxel_sizes();
        Spacing { inplane: 0.5 * (s[0] + s[1]), sep: s[2] }
    }

    pub fn same_geometry(&self, other_shape: [usize; 3], other_affine: &Affine) -> bool {
        self.shape == other_shape && self.affine == *other_affine
    }

    pub fn world_of(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        self.affine.apply([i as f64, j as f64, k as f64])
    }
}

/// A {0,1} mask sharing the geometry of a reference grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    shape: [usize; 3],
    bits: Vec<u8>,
    affine: AffineBits,
}

// Bit-exact affine so the mask can be Eq.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct AffineBits([u64; 16]);

impl AffineBits {
    fn of(a: &Affine) -> Self {
        let v = a.to_row_major();
        let mut out = [0u64; 16];
        for (o, x) in out.iter_mut().zip(v) {
            *o = x.to_bits();
        }
        AffineBits(out)
    }

    fn affine(&self) -> Affine {
        let mut v = [0.0; 16];
        for (o, x) in v.iter_mut().zip(self.0) {
            *o = f64::from_bits(x);
        }
        Affine::from_row_major(&v)
    }
}

impl BinaryMask {
    pub fn new(shape: [usize; 3], bits: Vec<u8>, affine: Affine) -> Result<Self, VoxelError> {
        let n: usize = shape.iter().product();
        if n == 0 || bits.len() != n {
            return Err(VoxelError::Domain(format!("mask needs {n} entries for shape {shape:?}, got {}", bits.len())));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(VoxelError::Domain("mask values must be 0 or 1".into()));
        }
        Ok(BinaryMask { shape, bits, affine: AffineBits::of(&affine) })
    }

    pub fn empty_like(g: &VoxelGrid) -> Self {
        BinaryMask { shape: g.shape(), bits: vec![0; g.len()], affine: AffineBits::of(g.affine()) }
    }

    pub fn from_fn(g: &VoxelGrid, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let [nx, ny, nz] = g.shape();
        let mut bits = Vec::with_capacity(g.len());
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    bits.push(f(i, j, k) as u8);
                }
            }
        }
        BinaryMask { shape: g.shape(), bits, affine: AffineBits::of(g.affine()) }
    }

    /// Threshold a grid: value > `thresh` becomes foreground.
    pub fn threshold(g: &VoxelGrid, thresh: f32) -> Self {
        let bits = g.values().iter().map(|&v| (v > thresh) as u8).collect();
        BinaryMask { shape: g.shape(), bits, affine: AffineBits::of(g.affine()) }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn affine(&self) -> Affine {
        self.affine.affine()
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.bits[flat_index(self.shape, i, j, k)] == 1
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn matches(&self, g: &VoxelGrid) -> bool {
        g.same_geometry(self.shape, &self.affine())
    }

    pub fn same_geometry(&self, other: &BinaryMask) -> bool {
        self.shape == other.shape && self.affine == other.affine
    }

    /// The mask as a 0/1 valued grid.
    pub fn to_grid(&self) -> VoxelGrid {
        VoxelGrid {
            shape: self.shape,
            values: self.bits.iter().map(|&b| b as f32).collect(),
            affine: self.affine(),
        }
    }

    pub fn from_grid(g: &VoxelGrid) -> Self {
        Self::threshold(g, 0.5)
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask, VoxelError> {
        self.combine(other, |a, b| a & b)
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask, VoxelError> {
        self.combine(other, |a, b| a | b)
    }

    pub fn and_not(&self, other: &BinaryMask) -> Result<BinaryMask, VoxelError> {
        self.combine(other, |a, b| a & (1 - b))
    }

    fn combine(&self, other: &BinaryMask, f: impl Fn(u8, u8) -> u8) -> Result<BinaryMask, VoxelError> {
        if !self.same_geometry(other) {
            return Err(VoxelError::Domain("mask geometry mismatch".into()));
        }
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect();
        Ok(BinaryMask { shape: self.shape, bits, affine: self.affine })
    }

    /// One step of 6-connected binary dilation.
    pub fn dilate(&self) -> BinaryMask {
        self.morph(true)
    }

    /// One step of 6-connected binary erosion (outside counts as background).
    pub fn erode(&self) -> BinaryMask {
        self.morph(false)
    }

    fn morph(&self, dilate: bool) -> BinaryMask {
        let [nx, ny, nz] = self.shape;
        let mut out = self.bits.clone();
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    let idx = flat_index(self.shape, i, j, k);
                    let neighbours = [
                        (i.wrapping_sub(1), j, k),
                        (i + 1, j, k),
                        (i, j.wrapping_sub(1), k),
                        (i, j + 1, k),
                        (i, j, k.wrapping_sub(1)),
                        (i, j, k + 1),
                    ];
                    let mut hit = false;
                    let mut all = true;
                    for (a, b, c) in neighbours {
                        let v = if a < nx && b < ny && c < nz { self.bits[flat_index(self.shape, a, b, c)] } else { 0 };
                        hit |= v == 1;
                        all &= v == 1;
                    }
                    out[idx] = if dilate { (self.bits[idx] == 1 || hit) as u8 } else { (self.bits[idx] == 1 && all) as u8 };
                }
            }
        }
        BinaryMask { shape: self.shape, bits: out, affine: self.affine }
    }
}
