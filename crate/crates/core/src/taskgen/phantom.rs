//! Parametric head phantoms.
//!
//! Geometry is specified in normalized coordinates: each axis of the field
//! of view maps to [-1, 1], so one spec rasterizes at any grid size.

use super::TaskError;
use crate::voxelcore::{flat_index, Affine, BinaryMask, VoxelGrid};
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Structure {
    FrontalLobe,
    OccipitalLobe,
    Ventricles,
    Thalamus,
    Cerebellum,
}

impl Structure {
    pub const ALL: [Structure; 5] = [Structure::FrontalLobe, Structure::OccipitalLobe, Structure::Ventricles, Structure::Thalamus, Structure::Cerebellum];

    pub fn key(self) -> &'static str {
        match self {
            Structure::FrontalLobe => "frontal_lobe",
            Structure::OccipitalLobe => "occipital_lobe",
            Structure::Ventricles => "ventricles",
            Structure::Thalamus => "thalamus",
            Structure::Cerebellum => "cerebellum",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Structure::FrontalLobe => "frontal lobe",
            Structure::OccipitalLobe => "occipital lobe",
            Structure::Ventricles => "ventricles",
            Structure::Thalamus => "thalamus",
            Structure::Cerebellum => "cerebellum",
        }
    }

    pub fn from_key(k: &str) -> Option<Structure> {
        Structure::ALL.into_iter().find(|s| s.key() == k)
    }

    /// Label value in the label map; 0 is outside the head.
    pub fn label(self) -> u8 {
        self as u8 + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Contrast {
    T1,
    T2,
    Flair,
}

impl Contrast {
    pub const ALL: [Contrast; 3] = [Contrast::T1, Contrast::T2, Contrast::Flair];

    pub fn key(self) -> &'static str {
        match self {
            Contrast::T1 => "t1",
            Contrast::T2 => "t2",
            Contrast::Flair => "flair",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Contrast::T1 => "T1",
            Contrast::T2 => "T2",
            Contrast::Flair => "FLAIR",
        }
    }

    pub fn from_key(k: &str) -> Option<Contrast> {
        Contrast::ALL.into_iter().find(|c| c.key() == k)
    }
}

/// Default intensity of a structure in a contrast. Each contrast has a
/// unique brightest structure.
pub fn tissue_intensity(s: Structure, c: Contrast) -> f64 {
    use Contrast::*;
    use Structure::*;
    match (s, c) {
        (FrontalLobe, T1) => 0.72,
        (FrontalLobe, T2) => 0.35,
        (FrontalLobe, Flair) => 0.45,
        (OccipitalLobe, T1) => 0.66,
        (OccipitalLobe, T2) => 0.38,
        (OccipitalLobe, Flair) => 0.42,
        (Ventricles, T1) => 0.15,
        (Ventricles, T2) => 0.92,
        (Ventricles, Flair) => 0.10,
        (Thalamus, T1) => 0.55,
        (Thalamus, T2) => 0.50,
        (Thalamus, Flair) => 0.62,
        (Cerebellum, T1) => 0.60,
        (Cerebellum, T2) => 0.44,
        (Cerebellum, Flair) => 0.52,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Solid {
    Ellipsoid { center: [f64; 3], axes: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
    Cuboid { center: [f64; 3], half: [f64; 3] },
}

impl Solid {
    pub fn contains(&self, u: [f64; 3]) -> bool {
        match *self {
            Solid::Ellipsoid { center, axes } => (0..3).map(|a| ((u[a] - center[a]) / axes[a]).powi(2)).sum::<f64>() <= 1.0,
            Solid::Sphere { center, radius } => (0..3).map(|a| (u[a] - center[a]).powi(2)).sum::<f64>() <= radius * radius,
            Solid::Cuboid { center, half } => (0..3).all(|a| (u[a] - center[a]).abs() <= half[a]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub shape: [usize; 3],
    pub voxel_mm: [f64; 3],
    pub head: Solid,
    /// Solid inner structures. The lobes fill the rest of the head, split
    /// at `lobe_split` along the anterior axis.
    pub inner: Vec<(Structure, Solid)>,
    pub lobe_split: f64,
    pub contrasts: Vec<Contrast>,
    /// Per-structure intensities, indexed `[structure][contrast]`.
    pub intensity: [[f64; 3]; 5],
    pub noise: f64,
}

impl PhantomSpec {
    pub fn standard(shape: [usize; 3], voxel_mm: [f64; 3], contrasts: Vec<Contrast>, noise: f64) -> Self {
        let mut intensity = [[0.0; 3]; 5];
        for s in Structure::ALL {
            for c in Contrast::ALL {
                intensity[s as usize][c as usize] = tissue_intensity(s, c);
            }
        }
        PhantomSpec {
            shape,
            voxel_mm,
            head: Solid::Ellipsoid { center: [0.0; 3], axes: [0.85, 0.92, 0.85] },
            inner: vec![
                (Structure::Ventricles, Solid::Ellipsoid { center: [0.0, 0.05, 0.1], axes: [0.22, 0.4, 0.18] }),
                (Structure::Thalamus, Solid::Cuboid { center: [0.0, -0.02, -0.3], half: [0.22, 0.13, 0.09] }),
                (Structure::Cerebellum, Solid::Ellipsoid { center: [0.0, -0.5, -0.4], axes: [0.36, 0.17, 0.16] }),
            ],
            lobe_split: 0.0,
            contrasts,
            intensity,
            noise,
        }
    }

    /// The standard layout with positions jittered by up to ±0.03 and
    /// sizes by ±8%.
    pub fn random(shape: [usize; 3], voxel_mm: [f64; 3], contrasts: Vec<Contrast>, noise: f64, rng: &mut impl Rng) -> Self {
        let mut s = Self::standard(shape, voxel_mm, contrasts, noise);
        fn jitter(v: &mut [f64; 3], d: f64, rng: &mut impl Rng) {
            v.iter_mut().for_each(|c| *c += rng.random_range(-d..=d));
        }
        for (_, solid) in &mut s.inner {
            match solid {
                Solid::Ellipsoid { center, axes } => {
                    jitter(center, 0.03, rng);
                    axes.iter_mut().for_each(|a| *a *= 1.0 + rng.random_range(-0.08..=0.08));
                }
                Solid::Sphere { center, radius } => {
                    jitter(center, 0.03, rng);
                    *radius *= 1.0 + rng.random_range(-0.08..=0.08);
                }
                Solid::Cuboid { center, half } => {
                    jitter(center, 0.03, rng);
                    half.iter_mut().for_each(|a| *a *= 1.0 + rng.random_range(-0.08..=0.08));
                }
            }
        }
        s.lobe_split += rng.random_range(-0.1..=0.1);
        s
    }

    pub fn affine(&self) -> Affine {
        let origin = std::array::from_fn(|a| -(self.shape[a] as f64 - 1.0) / 2.0 * self.voxel_mm[a]);
        Affine::from_spacing(self.voxel_mm, origin)
    }

    /// Normalized coordinate of a voxel centre.
    pub fn unit_coord(&self, ijk: [usize; 3]) -> [f64; 3] {
        std::array::from_fn(|a| (ijk[a] as f64 + 0.5) / self.shape[a] as f64 * 2.0 - 1.0)
    }
}

#[derive(Clone, Debug)]
pub struct Phantom {
    pub spec: PhantomSpec,
    /// Flat label map, [`Structure::label`] values, 0 outside the head.
    pub labels: Vec<u8>,
    pub volumes: Vec<(Contrast, VoxelGrid)>,
}

impl Phantom {
    pub fn grid_like(&self) -> &VoxelGrid {
        &self.volumes[0].1
    }

    pub fn structure_mask(&self, s: Structure) -> BinaryMask {
        let l = s.label();
        BinaryMask::new(self.spec.shape, self.labels.iter().map(|&x| (x == l) as u8).collect(), self.spec.affine()).expect("label map matches shape")
    }

    pub fn head_mask(&self) -> BinaryMask {
        BinaryMask::new(self.spec.shape, self.labels.iter().map(|&x| (x > 0) as u8).collect(), self.spec.affine()).expect("label map matches shape")
    }

    pub fn volume(&self, c: Contrast) -> Option<&VoxelGrid> {
        self.volumes.iter().find(|(k, _)| *k == c).map(|(_, g)| g)
    }
}

/// Rasterize labels and render every contrast with additive Gaussian noise.
pub fn synth_phantom(spec: &PhantomSpec, rng: &mut impl Rng) -> Result<Phantom, TaskError> {
    if spec.contrasts.is_empty() {
        return Err(TaskError::Spec("phantom needs at least one contrast".into()));
    }
    if spec.noise < 0.0 || !spec.noise.is_finite() {
        return Err(TaskError::Spec(format!("bad noise level {}", spec.noise)));
    }
    let [nx, ny, nz] = spec.shape;
    let mut labels = vec![0u8; nx * ny * nz];
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let u = spec.unit_coord([i, j, k]);
                let inside: Vec<Structure> = spec.inner.iter().filter(|(_, s)| s.contains(u)).map(|(t, _)| *t).collect();
                let in_head = spec.head.contains(u);
                if inside.len() > 1 {
                    return Err(TaskError::Spec(format!("structures {} and {} overlap", inside[0].key(), inside[1].key())));
                }
                if !inside.is_empty() && !in_head {
                    return Err(TaskError::Spec(format!("structure {} extends outside the head", inside[0].key())));
                }
                let l = match (inside.first(), in_head) {
                    (Some(s), _) => s.label(),
                    (None, true) if u[1] >= spec.lobe_split => Structure::FrontalLobe.label(),
                    (None, true) => Structure::OccipitalLobe.label(),
                    (None, false) => 0,
                };
                labels[flat_index(spec.shape, i, j, k)] = l;
            }
        }
    }
    let noise = Normal::new(0.0, spec.noise).map_err(|e| TaskError::Spec(e.to_string()))?;
    let affine = spec.affine();
    let mut volumes = Vec::new();
    for &c in &spec.contrasts {
        let values = labels
            .iter()
            .map(|&l| {
                let base = if l == 0 { 0.0 } else { spec.intensity[l as usize - 1][c as usize] };
                (base + noise.sample(rng)) as f32
            })
            .collect();
        volumes.push((c, VoxelGrid::new(spec.shape, values, affine)?));
    }
    Ok(Phantom { spec: spec.clone(), labels, volumes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rasterizes_all_structures() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = PhantomSpec::random([24, 24, 24], [1.0; 3], vec![Contrast::T1, Contrast::T2], 0.02, &mut rng);
        let p = synth_phantom(&spec, &mut rng).unwrap();
        for s in Structure::ALL {
            assert!(p.structure_mask(s).count() > 0, "{}", s.key());
        }
        assert_eq!(p.volumes[0].1.shape(), p.volumes[1].1.shape());
        assert_eq!(p.volumes[0].1.affine(), p.volumes[1].1.affine());
    }

    #[test]
    fn overlap_is_rejected() {
        let mut spec = PhantomSpec::standard([16; 3], [1.0; 3], vec![Contrast::T1], 0.0);
        spec.inner.push((Structure::Thalamus, Solid::Sphere { center: [0.0, 0.05, 0.1], radius: 0.2 }));
        assert!(matches!(synth_phantom(&spec, &mut ChaCha8Rng::seed_from_u64(0)), Err(TaskError::Spec(_))));
        let mut spec = PhantomSpec::standard([16; 3], [1.0; 3], vec![Contrast::T1], 0.0);
        spec.inner[0].1 = Solid::Sphere { center: [0.9, 0.0, 0.0], radius: 0.3 };
        assert!(matches!(synth_phantom(&spec, &mut ChaCha8Rng::seed_from_u64(0)), Err(TaskError::Spec(_))));
    }
}
