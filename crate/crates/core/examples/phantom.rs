//! Synthesize a phantom with one lesion and print per-structure statistics.
//! With an argument, the first contrast and the lesion mask are written
//! there as VXV1 files.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use voxagent::taskgen::{synth_lesion, synth_phantom, Contrast, IntensityClass, LesionSpec, PhantomSpec, Structure};
use voxagent::voxelcore::{roi_report, save_volume, VolumeFormat};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let contrasts = vec![Contrast::T1, Contrast::T2];
    let spec = PhantomSpec::random([32; 3], [1.0; 3], contrasts, 0.03, &mut rng);
    let ph = synth_phantom(&spec, &mut rng).expect("valid phantom spec");
    for s in Structure::ALL {
        let m = ph.structure_mask(s);
        let r = roi_report(ph.grid_like(), &m).expect("mask matches grid");
        println!("{:<15} {:>6} voxels  mean {:.3}  std {:.3}", s.name(), m.count(), r.mean, r.std);
    }
    let classes = vec![(Contrast::T1, IntensityClass::Hypo), (Contrast::T2, IntensityClass::Hyper)];
    let lesion = synth_lesion(&ph, &LesionSpec::new(Structure::FrontalLobe, 3.0, classes), &mut rng).expect("lesion fits");
    for (c, g) in &lesion.volumes {
        let r = roi_report(g, &lesion.mask).expect("mask matches grid");
        println!("lesion {:<3} {:>5} voxels  mean {:.3}", c.key(), lesion.mask.count(), r.mean);
    }
    if let Some(dir) = std::env::args().nth(1) {
        let dir = std::path::Path::new(&dir);
        std::fs::create_dir_all(dir).expect("output directory");
        std::fs::write(dir.join("t1.vxv"), save_volume(&lesion.volumes[0].1, VolumeFormat::Vxv1).expect("VXV1 writes")).expect("write volume");
        std::fs::write(dir.join("lesion.vxv"), save_volume(&lesion.mask.to_grid(), VolumeFormat::Vxv1).expect("VXV1 writes")).expect("write mask");
        println!("wrote {}", dir.display());
    }
}
