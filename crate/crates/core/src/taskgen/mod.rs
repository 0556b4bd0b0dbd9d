//! Synthetic task factory: prompt grammar, head phantoms, lesions,
//! ground-truth programs and augmentation.

pub mod augment;
mod grammar;
mod lesion;
mod phantom;
mod shard;
mod tasks;

pub use augment::{augment, AugmentConfig};
pub use grammar::{Grammar, GrammarError, MAX_DEPTH};
pub use lesion::{paint, shell, synth_lesion, IntensityClass, Lesion, LesionGeometry, LesionSpec, CONTRAST_OFFSET, ISO_OFFSET, SHELL_VOXELS};
pub use phantom::{synth_phantom, tissue_intensity, Contrast, Phantom, PhantomSpec, Solid, Structure};
pub use shard::{read_shard, write_shard};
pub use tasks::{build_task, RoiMetric, Target, TaskConfig, TaskInstance, TaskKind};

use crate::voxelcore::VoxelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error("placement failed: {0}")]
    Placement(String),
    #[error("ground-truth program failed: {0}")]
    Execution(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Voxel(#[from] VoxelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> TaskConfig {
        TaskConfig { shape: [20; 3], ..Default::default() }
    }

    #[test]
    fn every_kind_builds_and_replays() {
        let g = Grammar::shipped();
        for kind in TaskKind::ALL {
            for seed in 0..3 {
                let t = build_task(kind, &g, &small(), seed).unwrap_or_else(|e| panic!("{} seed {seed}: {e}", kind.key()));
                assert!(g.accepts(kind.key(), &t.prompt), "{}", t.prompt);
                assert_eq!(t.oracle_answer().unwrap(), t.answer);
                let slots: usize = t.program.iter().map(|s| s.matches("<MOD>").count()).sum();
                assert!(slots >= t.volumes.len());
            }
        }
    }

    #[test]
    fn step_skeletons() {
        let g = Grammar::shipped();
        let t = build_task(TaskKind::Segment, &g, &small(), 9).unwrap();
        assert!(t.program[0].starts_with("e = encode(v1, <MOD>)") && t.program[0].contains("read(e)"));
        assert!(t.program[1].contains("segment(e, <MOD>)") && t.program[1].ends_with("stop()"));
        let t = build_task(TaskKind::ClassifyIntensity, &g, &small(), 9).unwrap();
        assert!(t.masks.is_empty() && !t.program.concat().contains("segment"));
        assert!(t.program.last().unwrap().starts_with("respond("));
        assert_eq!(t.answer, format!("The lesion is {}.", t.label.as_deref().unwrap()));
    }

    #[test]
    fn deterministic_by_seed() {
        let g = Grammar::shipped();
        let a = build_task(TaskKind::Longitudinal, &g, &small(), 4).unwrap();
        let b = build_task(TaskKind::Longitudinal, &g, &small(), 4).unwrap();
        assert_eq!(a.prompt, b.prompt);
        assert_eq!(a.answer, b.answer);
        assert_eq!(a.volumes[1].grid, b.volumes[1].grid);
        assert_eq!(a.masks, b.masks);
    }

    #[test]
    fn shard_roundtrip() {
        let g = Grammar::shipped();
        let tasks: Vec<_> = [TaskKind::Longitudinal, TaskKind::ClassifyLocation].iter().map(|&k| build_task(k, &g, &small(), 2).unwrap()).collect();
        let dir = tempfile::tempdir().unwrap();
        write_shard(dir.path(), &tasks).unwrap();
        let back = read_shard(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in tasks.iter().zip(&back) {
            assert_eq!((a.kind, a.seed, &a.prompt, &a.program, &a.answer, &a.label), (b.kind, b.seed, &b.prompt, &b.program, &b.answer, &b.label));
            assert_eq!(a.masks, b.masks);
            assert_eq!(a.volumes.iter().map(|v| (&v.meta, &v.grid)).collect::<Vec<_>>(), b.volumes.iter().map(|v| (&v.meta, &v.grid)).collect::<Vec<_>>());
        }
    }

    #[test]
    fn augmented_tasks_still_replay() {
        let g = Grammar::shipped();
        let cfg = TaskConfig { augment: Some(AugmentConfig::default()), ..small() };
        for seed in 0..4 {
            let t = build_task(TaskKind::RoiMetric, &g, &cfg, seed).unwrap();
            assert_eq!(t.oracle_answer().unwrap(), t.answer);
        }
    }

    #[test]
    fn lesion_inside_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = PhantomSpec::random([24; 3], [1.0; 3], vec![Contrast::T1], 0.02, &mut rng);
        let p = synth_phantom(&spec, &mut rng).unwrap();
        let ls = LesionSpec::new(Structure::FrontalLobe, 2.5, vec![(Contrast::T1, IntensityClass::Hyper)]);
        let l = synth_lesion(&p, &ls, &mut rng).unwrap();
        let b = l.geometry.boundary(p.grid_like(), 1.0);
        assert_eq!(l.mask.and_not(&b).unwrap().count(), 0);
        assert!(l.mask.count() > 0);
    }

    #[test]
    fn tiny_target_fails_placement() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = PhantomSpec::standard([16; 3], [1.0; 3], vec![Contrast::T1], 0.0);
        let p = synth_phantom(&spec, &mut rng).unwrap();
        let ls = LesionSpec::new(Structure::Thalamus, 6.0, vec![(Contrast::T1, IntensityClass::Hyper)]);
        assert!(matches!(synth_lesion(&p, &ls, &mut rng), Err(TaskError::Placement(_))));
    }
}
