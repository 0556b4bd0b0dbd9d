//! Model-based lesion synthesis: a boundary sphere inside the target
//! structure, a union of random ellipsoids, random morphology and a smooth
//! deformation, clipped to the sphere and in-painted relative to the
//! surrounding tissue.

use super::phantom::{Contrast, Phantom, Structure};
use super::TaskError;
use crate::voxelcore::{BinaryMask, VoxelGrid};
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum IntensityClass {
    Hyper,
    Hypo,
    Iso,
}

impl IntensityClass {
    pub const ALL: [IntensityClass; 3] = [IntensityClass::Hyper, IntensityClass::Hypo, IntensityClass::Iso];

    pub fn key(self) -> &'static str {
        match self {
            IntensityClass::Hyper => "hyperintense",
            IntensityClass::Hypo => "hypointense",
            IntensityClass::Iso => "isointense",
        }
    }

    pub fn from_key(k: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.key() == k)
    }
}

/// Intensity offset ranges relative to the shell mean.
pub const CONTRAST_OFFSET: (f64, f64) = (0.25, 0.45);
pub const ISO_OFFSET: f64 = 0.02;
/// Thickness of the surrounding shell used as reference tissue, voxels.
pub const SHELL_VOXELS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct LesionSpec {
    pub target: Structure,
    pub radius_mm: f64,
    /// Intensity class per contrast; every contrast of the phantom needs one.
    pub classes: Vec<(Contrast, IntensityClass)>,
    pub heterogeneous: bool,
    pub ellipsoids: (usize, usize),
    pub max_dilate: usize,
    pub max_erode: usize,
    /// Peak displacement of the deformation, voxels (at most 2).
    pub deform_vox: f64,
    /// Largest scale the geometry will be rasterized at; the boundary
    /// sphere is placed to fit at this scale.
    pub max_scale: f64,
}

impl LesionSpec {
    pub fn new(target: Structure, radius_mm: f64, classes: Vec<(Contrast, IntensityClass)>) -> Self {
        LesionSpec { target, radius_mm, classes, heterogeneous: false, ellipsoids: (2, 4), max_dilate: 1, max_erode: 1, deform_vox: 1.0, max_scale: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Ellipsoid {
    /// Offset from the sphere centre as a fraction of the radius.
    offset: [f64; 3],
    /// Semi-axes as fractions of the radius.
    axes: [f64; 3],
    rot: [[f64; 3]; 3],
}

/// Sampled lesion shape, reusable at several scales.
#[derive(Clone, Debug, PartialEq)]
pub struct LesionGeometry {
    /// Sphere centre, world mm.
    pub center: [f64; 3],
    pub radius_mm: f64,
    ellipsoids: Vec<Ellipsoid>,
    /// Positive: dilations; negative: erosions.
    morph: i32,
    /// Displacement control points on a 4×4×4 lattice, voxels.
    field: Vec<[f64; 3]>,
}

#[derive(Clone, Debug)]
pub struct Lesion {
    pub mask: BinaryMask,
    pub geometry: LesionGeometry,
    pub volumes: Vec<(Contrast, VoxelGrid)>,
    pub classes: Vec<(Contrast, IntensityClass)>,
}

fn rotation(rng: &mut impl Rng) -> [[f64; 3]; 3] {
    let (a, b, c) = (rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..std::f64::consts::TAU));
    let rz = [[a.cos(), -a.sin(), 0.0], [a.sin(), a.cos(), 0.0], [0.0, 0.0, 1.0]];
    let ry = [[b.cos(), 0.0, b.sin()], [0.0, 1.0, 0.0], [-b.sin(), 0.0, b.cos()]];
    let rx = [[1.0, 0.0, 0.0], [0.0, c.cos(), -c.sin()], [0.0, c.sin(), c.cos()]];
    matmul(matmul(rz, ry), rx)
}

fn matmul(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// Voxels whose centre lies within `r` mm of `center`.
fn sphere_mask(g: &VoxelGrid, center: [f64; 3], r: f64) -> BinaryMask {
    BinaryMask::from_fn(g, |i, j, k| dist2(g.world_of(i, j, k), center) <= r * r)
}

impl LesionGeometry {
    /// Place a boundary sphere inside `spec.target` and sample the shape.
    pub fn sample(phantom: &Phantom, spec: &LesionSpec, rng: &mut impl Rng) -> Result<LesionGeometry, TaskError> {
        if spec.deform_vox > 2.0 || spec.deform_vox < 0.0 {
            return Err(TaskError::Spec(format!("deformation {} outside [0, 2] voxels", spec.deform_vox)));
        }
        if spec.ellipsoids.0 == 0 || spec.ellipsoids.0 > spec.ellipsoids.1 {
            return Err(TaskError::Spec("bad ellipsoid count range".into()));
        }
        let g = phantom.grid_like();
        let target = phantom.structure_mask(spec.target);
        let candidates: Vec<[usize; 3]> = {
            let [nx, ny, nz] = g.shape();
            let mut v = Vec::new();
            for i in 0..nx {
                for j in 0..ny {
                    for k in 0..nz {
                        if target.get(i, j, k) {
                            v.push([i, j, k]);
                        }
                    }
                }
            }
            v
        };
        if candidates.is_empty() {
            return Err(TaskError::Placement(format!("structure {} is empty", spec.target.key())));
        }
        let reach = spec.radius_mm * spec.max_scale;
        let vs = g.voxel_sizes();
        let lo = vs.iter().cloned().fold(f64::INFINITY, f64::min);
        let center = (0..500).find_map(|_| {
            let c = candidates[rng.random_range(0..candidates.len())];
            let w = g.world_of(c[0], c[1], c[2]);
            // the sphere must stay inside the grid and the target
            let span: [isize; 3] = std::array::from_fn(|a| (reach / vs[a]).ceil() as isize + 1);
            let shape = g.shape();
            for a in 0..3 {
                if (c[a] as isize) < span[a] - 1 || c[a] as isize + span[a] > shape[a] as isize {
                    return None;
                }
            }
            for di in -span[0]..=span[0] {
                for dj in -span[1]..=span[1] {
                    for dk in -span[2]..=span[2] {
                        let (i, j, k) = (c[0] as isize + di, c[1] as isize + dj, c[2] as isize + dk);
                        if i < 0 || j < 0 || k < 0 || i >= shape[0] as isize || j >= shape[1] as isize || k >= shape[2] as isize {
                            continue;
                        }
                        let (i, j, k) = (i as usize, j as usize, k as usize);
                        if dist2(g.world_of(i, j, k), w) <= (reach + 0.5 * lo).powi(2) && !target.get(i, j, k) {
                            return None;
                        }
                    }
                }
            }
            Some(w)
        });
        let center = center.ok_or_else(|| TaskError::Placement(format!("no room for a {:.1} mm lesion in the {}", reach, spec.target.name())))?;
        let n = rng.random_range(spec.ellipsoids.0..=spec.ellipsoids.1);
        let ellipsoids = (0..n)
            .map(|_| {
                let offset = std::array::from_fn(|_| rng.random_range(-0.4..=0.4));
                let axes = std::array::from_fn(|_| rng.random_range(0.35..=0.75));
                Ellipsoid { offset, axes, rot: rotation(rng) }
            })
            .collect();
        let morph = if rng.random_bool(0.5) { rng.random_range(0..=spec.max_dilate as i32) } else { -rng.random_range(0..=spec.max_erode as i32) };
        // per-component bound keeps the displacement norm within deform_vox
        let m = spec.deform_vox / 3f64.sqrt();
        let field = (0..64).map(|_| std::array::from_fn(|_| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 })).collect();
        Ok(LesionGeometry { center, radius_mm: spec.radius_mm, ellipsoids, morph, field })
    }

    /// Smooth displacement at voxel `ijk`, voxels.
    fn displacement(&self, shape: [usize; 3], ijk: [usize; 3]) -> [f64; 3] {
        let t: [f64; 3] = std::array::from_fn(|a| if shape[a] > 1 { ijk[a] as f64 / (shape[a] - 1) as f64 * 3.0 } else { 0.0 });
        let i0: [usize; 3] = std::array::from_fn(|a| (t[a].floor() as usize).min(2));
        let f: [f64; 3] = std::array::from_fn(|a| t[a] - i0[a] as f64);
        let mut d = [0.0; 3];
        for c in 0..8 {
            let o = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
            let w: f64 = (0..3).map(|a| if o[a] == 1 { f[a] } else { 1.0 - f[a] }).product();
            let p = &self.field[(i0[0] + o[0]) * 16 + (i0[1] + o[1]) * 4 + i0[2] + o[2]];
            for a in 0..3 {
                d[a] += w * p[a];
            }
        }
        d
    }

    /// Rasterize at `scale` on the phantom grid.
    pub fn rasterize(&self, g: &VoxelGrid, scale: f64) -> BinaryMask {
        let r = self.radius_mm * scale;
        let raw = BinaryMask::from_fn(g, |i, j, k| {
            let w = g.world_of(i, j, k);
            self.ellipsoids.iter().any(|e| {
                let d: [f64; 3] = std::array::from_fn(|a| w[a] - (self.center[a] + e.offset[a] * r));
                // rotate into the ellipsoid frame: q = Rᵀ d
                let q: [f64; 3] = std::array::from_fn(|a| (0..3).map(|b| e.rot[b][a] * d[b]).sum());
                (0..3).map(|a| (q[a] / (e.axes[a] * r)).powi(2)).sum::<f64>() <= 1.0
            })
        });
        let mut m = raw;
        for _ in 0..self.morph.max(0) {
            m = m.dilate();
        }
        for _ in 0..(-self.morph).max(0) {
            m = m.erode();
        }
        let shape = g.shape();
        let warped = BinaryMask::from_fn(g, |i, j, k| {
            let d = self.displacement(shape, [i, j, k]);
            let src: [isize; 3] = std::array::from_fn(|a| ([i, j, k][a] as f64 + d[a]).round() as isize);
            (0..3).all(|a| src[a] >= 0 && src[a] < shape[a] as isize) && m.get(src[0] as usize, src[1] as usize, src[2] as usize)
        });
        let sphere = sphere_mask(g, self.center, r);
        warped.and(&sphere).expect("same grid")
    }

    pub fn boundary(&self, g: &VoxelGrid, scale: f64) -> BinaryMask {
        sphere_mask(g, self.center, self.radius_mm * scale)
    }
}

/// `dilate^SHELL_VOXELS(m) \ m`.
pub fn shell(m: &BinaryMask) -> BinaryMask {
    let mut d = m.clone();
    for _ in 0..SHELL_VOXELS {
        d = d.dilate();
    }
    d.and_not(m).expect("same grid")
}

fn masked_mean(g: &VoxelGrid, m: &BinaryMask) -> f64 {
    let (s, n) = g.values().iter().zip(m.bits()).filter(|(_, &b)| b == 1).fold((0.0, 0usize), |(s, n), (&v, _)| (s + v as f64, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn offset(class: IntensityClass, rng: &mut impl Rng) -> f64 {
    match class {
        IntensityClass::Hyper => rng.random_range(CONTRAST_OFFSET.0..=CONTRAST_OFFSET.1),
        IntensityClass::Hypo => -rng.random_range(CONTRAST_OFFSET.0..=CONTRAST_OFFSET.1),
        IntensityClass::Iso => rng.random_range(-ISO_OFFSET..=ISO_OFFSET),
    }
}

/// In-paint `mask` into each volume with its class fill relative to the
/// shell mean, plus the phantom noise. A heterogeneous lesion gets a
/// secondary ellipsoid with a half-strength fill of the same class.
pub fn paint(
    volumes: &[(Contrast, VoxelGrid)],
    mask: &BinaryMask,
    classes: &[(Contrast, IntensityClass)],
    noise: f64,
    heterogeneous: bool,
    rng: &mut impl Rng,
) -> Result<Vec<(Contrast, VoxelGrid)>, TaskError> {
    let sh = shell(mask);
    let first = &volumes.first().ok_or_else(|| TaskError::Spec("no volumes to paint".into()))?.1;
    let secondary = if heterogeneous && mask.count() > 0 {
        let idx: Vec<usize> = mask.bits().iter().enumerate().filter(|(_, &b)| b == 1).map(|(i, _)| i).collect();
        let c = idx[rng.random_range(0..idx.len())];
        let [_, ny, nz] = first.shape();
        let (ci, cj, ck) = (c / (ny * nz), (c / nz) % ny, c % nz);
        let cw = first.world_of(ci, cj, ck);
        let r = 0.5 * first.voxel_sizes().iter().cloned().fold(0.0, f64::max) * rng.random_range(1.5..=3.0);
        let s = sphere_mask(first, cw, r);
        Some(s.and(mask)?)
    } else {
        None
    };
    let normal = Normal::new(0.0, noise.max(0.0)).map_err(|e| TaskError::Spec(e.to_string()))?;
    let mut out = Vec::new();
    for (c, g) in volumes {
        let class = classes.iter().find(|(k, _)| k == c).map(|(_, cl)| *cl).ok_or_else(|| TaskError::Spec(format!("no intensity class for {}", c.key())))?;
        let base = masked_mean(g, &sh);
        let main = base + offset(class, rng);
        let second = base + 0.5 * (main - base) + if class == IntensityClass::Iso { offset(class, rng) * 0.5 } else { 0.0 };
        let mut vals = g.values().to_vec();
        for (i, v) in vals.iter_mut().enumerate() {
            if mask.bits()[i] == 1 {
                let fill = if secondary.as_ref().is_some_and(|s| s.bits()[i] == 1) { second } else { main };
                *v = (fill + normal.sample(rng)).max(0.0) as f32;
            }
        }
        out.push((*c, g.with_values(vals)?));
    }
    Ok(out)
}

/// Sample, rasterize and in-paint one lesion into the phantom's volumes.
pub fn synth_lesion(phantom: &Phantom, spec: &LesionSpec, rng: &mut impl Rng) -> Result<Lesion, TaskError> {
    for (c, _) in &phantom.volumes {
        if !spec.classes.iter().any(|(k, _)| k == c) {
            return Err(TaskError::Spec(format!("no intensity class for {}", c.key())));
        }
    }
    let g = phantom.grid_like();
    for _ in 0..20 {
        let geometry = LesionGeometry::sample(phantom, spec, rng)?;
        let mask = geometry.rasterize(g, 1.0);
        if mask.count() == 0 {
            continue;
        }
        let volumes = paint(&phantom.volumes, &mask, &spec.classes, phantom.spec.noise, spec.heterogeneous, rng)?;
        return Ok(Lesion { mask, geometry, volumes, classes: spec.classes.clone() });
    }
    Err(TaskError::Placement("lesion geometry stayed empty after 20 draws".into()))
}
