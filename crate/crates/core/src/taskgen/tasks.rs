use super::augment::{augment, AugmentConfig};
use super::grammar::Grammar;
use super::lesion::{paint, synth_lesion, IntensityClass, LesionGeometry, LesionSpec};
use super::phantom::{synth_phantom, Contrast, Phantom, PhantomSpec, Structure};
use super::TaskError;
use crate::agent::{VolumeMeta, Vocabulary};
use crate::runtime::{run_loop, InputVolume, LoopConfig, OracleBackend, ScriptedAgent};
use crate::tensor::Tape;
use crate::voxelcore::BinaryMask;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskKind {
    Segment,
    RoiMetric,
    CompareMulti,
    Longitudinal,
    ClassifyIntensity,
    ClassifyLocation,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] =
        [TaskKind::Segment, TaskKind::RoiMetric, TaskKind::CompareMulti, TaskKind::Longitudinal, TaskKind::ClassifyIntensity, TaskKind::ClassifyLocation];

    pub fn key(self) -> &'static str {
        match self {
            TaskKind::Segment => "segment",
            TaskKind::RoiMetric => "roi_metric",
            TaskKind::CompareMulti => "compare_multi",
            TaskKind::Longitudinal => "longitudinal",
            TaskKind::ClassifyIntensity => "classify_intensity",
            TaskKind::ClassifyLocation => "classify_location",
        }
    }

    pub fn from_key(k: &str) -> Option<TaskKind> {
        TaskKind::ALL.into_iter().find(|t| t.key() == k)
    }
}

/// What a segmentation targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Target {
    Lesion,
    Structure(Structure),
}

impl Target {
    pub fn key(self) -> &'static str {
        match self {
            Target::Lesion => "lesion",
            Target::Structure(s) => s.key(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Target::Lesion => "lesion",
            Target::Structure(s) => s.name(),
        }
    }

    pub fn from_key(k: &str) -> Option<Target> {
        if k == "lesion" {
            Some(Target::Lesion)
        } else {
            Structure::from_key(k).map(Target::Structure)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskConfig {
    pub shape: [usize; 3],
    pub voxel_mm: [f64; 3],
    pub noise: f64,
    pub targets: Vec<Target>,
    /// Structures a lesion may be placed in.
    pub lesion_hosts: Vec<Structure>,
    pub intensity_classes: Vec<IntensityClass>,
    /// Lesion radius range as a fraction of the smallest half field of view.
    pub lesion_radius: (f64, f64),
    /// Metrics `roi_metric` tasks may ask for; with both, each is drawn
    /// with probability one half.
    pub roi_metrics: Vec<RoiMetric>,
    pub augment: Option<AugmentConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoiMetric {
    Volume,
    Mean,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            shape: [24; 3],
            voxel_mm: [1.0; 3],
            noise: 0.03,
            targets: vec![Target::Lesion, Target::Structure(Structure::Ventricles), Target::Structure(Structure::Thalamus), Target::Structure(Structure::Cerebellum)],
            lesion_hosts: vec![Structure::FrontalLobe, Structure::OccipitalLobe],
            intensity_classes: IntensityClass::ALL.to_vec(),
            lesion_radius: (0.18, 0.26),
            roi_metrics: vec![RoiMetric::Volume, RoiMetric::Mean],
            augment: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TaskInstance {
    pub kind: TaskKind,
    pub seed: u64,
    pub prompt: String,
    pub volumes: Vec<InputVolume>,
    /// Ground-truth program, one entry per step.
    pub program: Vec<String>,
    /// Target masks in `segment` call order.
    pub masks: Vec<BinaryMask>,
    pub answer: String,
    pub label: Option<String>,
}

impl TaskInstance {
    /// Run the ground-truth program with the target masks as oracle and
    /// return the answer text.
    pub fn oracle_answer(&self) -> Result<String, TaskError> {
        let vocab = Vocabulary::build::<&str>(&[], 0);
        let mut agent = ScriptedAgent::new(&vocab, self.program.clone(), 1);
        let mut backend = OracleBackend::new(1, self.masks.clone());
        let mut tape = Tape::new();
        let cfg = LoopConfig { max_steps: self.program.len(), state_cap: usize::MAX };
        let t = run_loop(&mut agent, &mut backend, &vocab, &self.prompt, &self.volumes, &mut tape, cfg).map_err(|e| TaskError::Execution(e.to_string()))?;
        if let Some(err) = t.steps.iter().find_map(|s| s.error.clone()) {
            return Err(TaskError::Execution(err));
        }
        t.answer.ok_or_else(|| TaskError::Execution("ground-truth program did not finish".into()))
    }
}

const ENCODE_READ: &str = "e = encode(v1, <MOD>)\nread(e)";

fn date(rng: &mut impl Rng) -> (i32, u32, u32) {
    (rng.random_range(2015..=2022), rng.random_range(1..=12), rng.random_range(1..=28))
}

fn fmt_date((y, m, d): (i32, u32, u32)) -> String {
    format!("{y:04}-{m:02}-{d:02}")
}

fn later((y, m, d): (i32, u32, u32), rng: &mut impl Rng) -> (i32, u32, u32) {
    let months = rng.random_range(3..=18) + m - 1;
    (y + (months / 12) as i32, months % 12 + 1, d)
}

fn visible(rng: &mut impl Rng) -> IntensityClass {
    *[IntensityClass::Hyper, IntensityClass::Hypo].choose(rng).unwrap()
}

struct Scene {
    phantom: Phantom,
    lesion_mask: BinaryMask,
    volumes: Vec<(Contrast, crate::voxelcore::VoxelGrid)>,
    host: Structure,
}

fn radius(cfg: &TaskConfig, rng: &mut impl Rng) -> f64 {
    let half = (0..3).map(|a| cfg.shape[a] as f64 * cfg.voxel_mm[a] / 2.0).fold(f64::INFINITY, f64::min);
    half * rng.random_range(cfg.lesion_radius.0..=cfg.lesion_radius.1)
}

fn scene(cfg: &TaskConfig, contrasts: &[(Contrast, IntensityClass)], rng: &mut impl Rng) -> Result<Scene, TaskError> {
    let host = *cfg.lesion_hosts.choose(rng).ok_or_else(|| TaskError::Spec("no lesion hosts configured".into()))?;
    let spec = PhantomSpec::random(cfg.shape, cfg.voxel_mm, contrasts.iter().map(|c| c.0).collect(), cfg.noise, rng);
    let phantom = synth_phantom(&spec, rng)?;
    let mut ls = LesionSpec::new(host, radius(cfg, rng), contrasts.to_vec());
    ls.heterogeneous = rng.random_bool(0.3);
    let lesion = synth_lesion(&phantom, &ls, rng)?;
    Ok(Scene { lesion_mask: lesion.mask, volumes: lesion.volumes, phantom, host })
}

fn target_mask(s: &Scene, t: Target) -> BinaryMask {
    match t {
        Target::Lesion => s.lesion_mask.clone(),
        Target::Structure(st) => s.phantom.structure_mask(st),
    }
}

fn inputs(vols: Vec<(Contrast, crate::voxelcore::VoxelGrid)>, dates: &[String]) -> Vec<InputVolume> {
    vols.into_iter()
        .enumerate()
        .map(|(i, (c, g))| InputVolume { meta: VolumeMeta::new(&format!("v{}", i + 1), c.key(), &dates[i.min(dates.len() - 1)]), grid: g })
        .collect()
}

/// Assemble one instance. A pure function of `(kind, grammar, cfg, seed)`.
fn pick_metric(metrics: &[RoiMetric], rng: &mut impl Rng) -> Result<RoiMetric, TaskError> {
    match metrics {
        [] => Err(TaskError::Spec("no ROI metrics configured".into())),
        [m] => Ok(*m),
        [a, b] => Ok(if rng.random_bool(0.5) { *a } else { *b }),
        _ => Ok(metrics[rng.random_range(0..metrics.len())]),
    }
}

pub fn build_task(kind: TaskKind, grammar: &Grammar, cfg: &TaskConfig, seed: u64) -> Result<TaskInstance, TaskError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let d0 = date(rng);
    let today = fmt_date(d0);
    let contrast = *Contrast::ALL.choose(rng).unwrap();
    let mut bindings: Vec<(&str, &str)> = vec![("modality", contrast.key())];
    let (volumes, program, masks, label) = match kind {
        TaskKind::Segment | TaskKind::RoiMetric => {
            let target = *cfg.targets.choose(rng).ok_or_else(|| TaskError::Spec("no targets configured".into()))?;
            let s = scene(cfg, &[(contrast, visible(rng))], rng)?;
            bindings.push(("target", target.key()));
            let mut program = vec![ENCODE_READ.to_string()];
            if kind == TaskKind::Segment {
                program.push("m = segment(e, <MOD>)\nstop()".into());
            } else if pick_metric(&cfg.roi_metrics, rng)? == RoiMetric::Volume {
                bindings.push(("metric", "volume"));
                program.push("m = segment(e, <MOD>)\nx = volume_of(m)\nread(x)".into());
                program.push(format!("respond(\"The {} volume is {{0}} mm3.\", x)", target.name()));
            } else {
                bindings.push(("metric", "mean"));
                program.push("m = segment(e, <MOD>)\nx = mean_in(v1, m)\nread(x)".into());
                program.push(format!("respond(\"The mean {} intensity is {{0}}.\", x)", target.name()));
            }
            let m = target_mask(&s, target);
            (inputs(s.volumes, &[today]), program, vec![m], None)
        }
        TaskKind::CompareMulti => {
            let target = *cfg.targets.choose(rng).ok_or_else(|| TaskError::Spec("no targets configured".into()))?;
            let other = *Contrast::ALL.iter().filter(|&&c| c != contrast).collect::<Vec<_>>().choose(rng).unwrap();
            let s = scene(cfg, &[(contrast, visible(rng)), (*other, *IntensityClass::ALL.choose(rng).unwrap())], rng)?;
            bindings.push(("target", target.key()));
            bindings.push(("modality2", other.key()));
            let program = vec![
                "e = encode(v1, <MOD>, v2, <MOD>)\nread(e)".to_string(),
                "m = segment(e, <MOD>)\na = mean_in(v1, m)\nb = mean_in(v2, m)\nr = div(b, a)\nread(r)".into(),
                format!("respond(\"The {} signal ratio of {} to {} is {{0}}.\", r)", target.name(), other.name(), contrast.name()),
            ];
            let m = target_mask(&s, target);
            (inputs(s.volumes, &[today]), program, vec![m], None)
        }
        TaskKind::Longitudinal => {
            bindings.push(("target", "lesion"));
            let host = *cfg.lesion_hosts.choose(rng).ok_or_else(|| TaskError::Spec("no lesion hosts configured".into()))?;
            let class = visible(rng);
            let spec = PhantomSpec::random(cfg.shape, cfg.voxel_mm, vec![contrast], cfg.noise, rng);
            let p1 = synth_phantom(&spec, rng)?;
            let p2 = synth_phantom(&spec, rng)?;
            let scale = if rng.random_bool(0.5) { rng.random_range(1.2..=1.5) } else { rng.random_range(0.6..=0.85) };
            let mut ls = LesionSpec::new(host, radius(cfg, rng) / 1.5, vec![(contrast, class)]);
            ls.max_scale = 1.5;
            let (m1, m2) = (0..20)
                .find_map(|_| {
                    let g = LesionGeometry::sample(&p1, &ls, rng).ok()?;
                    let (a, b) = (g.rasterize(p1.grid_like(), 1.0), g.rasterize(p1.grid_like(), scale));
                    (a.count() > 0 && b.count() > 0).then_some((a, b))
                })
                .ok_or_else(|| TaskError::Placement("could not place a longitudinal lesion".into()))?;
            let v1 = paint(&p1.volumes, &m1, &[(contrast, class)], cfg.noise, false, rng)?;
            let v2 = paint(&p2.volumes, &m2, &[(contrast, class)], cfg.noise, false, rng)?;
            let follow = fmt_date(later(d0, rng));
            let program = vec![
                "e1 = encode(v1, <MOD>)\nread(e1)\ne2 = encode(v2, <MOD>)\nread(e2)".to_string(),
                "m1 = segment(e1, <MOD>)\nm2 = segment(e2, <MOD>)\na = volume_of(m1)\nb = volume_of(m2)\ng = sub(b, a)\nread(g)".into(),
                "respond(\"The lesion volume changed by {0} mm3.\", g)".into(),
            ];
            let vols = vec![v1.into_iter().next().unwrap(), v2.into_iter().next().unwrap()];
            (inputs(vols, &[today, follow]), program, vec![m1, m2], None)
        }
        TaskKind::ClassifyIntensity => {
            let class = *cfg.intensity_classes.choose(rng).ok_or_else(|| TaskError::Spec("no intensity classes configured".into()))?;
            let s = scene(cfg, &[(contrast, class)], rng)?;
            let program = vec![ENCODE_READ.to_string(), format!("respond(\"The lesion is {}.\")", class.key())];
            (inputs(s.volumes, &[today]), program, vec![], Some(class.key().to_string()))
        }
        TaskKind::ClassifyLocation => {
            let s = scene(cfg, &[(contrast, visible(rng))], rng)?;
            let program = vec![ENCODE_READ.to_string(), format!("respond(\"The lesion is in the {}.\")", s.host.name())];
            let host = s.host.key().to_string();
            (inputs(s.volumes, &[today]), program, vec![], Some(host))
        }
    };
    let prompt = grammar.expand(kind.key(), &bindings, rng)?;
    let (volumes, masks) = match &cfg.augment {
        None => (volumes, masks),
        Some(a) => {
            let grids: Vec<_> = volumes.iter().map(|v| v.grid.clone()).collect();
            let (g, m) = augment(&grids, &masks, a, rng)?;
            let vols = volumes.into_iter().zip(g).map(|(v, grid)| InputVolume { meta: v.meta, grid }).collect();
            (vols, m)
        }
    };
    let mut t = TaskInstance { kind, seed, prompt, volumes, program, masks, answer: String::new(), label };
    t.answer = t.oracle_answer()?;
    Ok(t)
}
