//! Optimization: batch size one, gradient accumulation, Adam, and a
//! plateau-halving learning-rate schedule.

use super::config::TrainConfig;
use super::loss::teacher_forced_losses;
use super::models::Models;
use super::TrainError;
use crate::taskgen::{build_task, Grammar, TaskConfig, TaskInstance};
use crate::tensor::{adam_step, clip_global_norm, AdamConfig, AdamState, Checkpoint, Tape};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleAction {
    Continue,
    Halve,
    Stop,
}

/// Halve the rate when `patience` steps pass without a new best loss;
/// the plateau after `max_halvings` halvings ends training.
#[derive(Clone, Debug, PartialEq)]
pub struct Plateau {
    pub patience: usize,
    pub max_halvings: u32,
    pub best: f64,
    pub since: usize,
    pub halvings: u32,
}

impl Plateau {
    pub fn new(patience: usize, max_halvings: u32) -> Self {
        Plateau { patience, max_halvings, best: f64::INFINITY, since: 0, halvings: 0 }
    }

    /// Record the loss of an update covering `steps` steps.
    pub fn observe(&mut self, loss: f64, steps: usize) -> ScheduleAction {
        if loss < self.best {
            self.best = loss;
            self.since = 0;
            return ScheduleAction::Continue;
        }
        self.since += steps;
        if self.since < self.patience {
            return ScheduleAction::Continue;
        }
        self.since = 0;
        if self.halvings >= self.max_halvings {
            return ScheduleAction::Stop;
        }
        self.halvings += 1;
        ScheduleAction::Halve
    }
}

/// Where training instances come from.
#[derive(Clone, Copy)]
pub enum DataSource<'a> {
    /// A fixed set, visited in a fresh shuffled order every epoch.
    Fixed(&'a [TaskInstance]),
    /// Fresh instances with kinds drawn from the mix weights.
    Generator { grammar: &'a Grammar, tasks: &'a TaskConfig },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxSteps,
    Schedule,
}

/// Emitted after every update.
#[derive(Clone, Debug)]
pub struct Progress {
    pub step: usize,
    pub loss: f64,
    pub ce: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    /// Total loss of every step.
    pub losses: Vec<f64>,
    pub ce: Vec<f64>,
    pub steps: usize,
    pub lr: f64,
    pub schedule: Plateau,
    pub stop: StopReason,
    pub adam: AdamState,
}

impl TrainRun {
    pub fn checkpoint(&self, models: &Models, cfg: &TrainConfig) -> Checkpoint {
        models.checkpoint(self.steps as u64, &self.adam, meta(cfg, self.lr, &self.schedule))
    }
}

fn meta(cfg: &TrainConfig, lr: f64, s: &Plateau) -> Vec<(String, String)> {
    let mut kv = super::config::KvConfig::default();
    cfg.write(&mut kv);
    vec![
        ("train".into(), kv.to_text()),
        ("lr".into(), lr.to_string()),
        ("halvings".into(), s.halvings.to_string()),
        ("best".into(), s.best.to_string()),
    ]
}

struct Sampler<'a> {
    source: DataSource<'a>,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    kinds: Option<WeightedIndex<f64>>,
}

impl Sampler<'_> {
    fn next(&mut self, cfg: &TrainConfig) -> Result<TaskInstance, TrainError> {
        match self.source {
            DataSource::Fixed(set) => {
                if set.is_empty() {
                    return Err(TrainError::Config("training set is empty".into()));
                }
                if self.order.is_empty() {
                    self.order = (0..set.len()).collect();
                    self.order.shuffle(&mut self.rng);
                    self.order.reverse();
                }
                Ok(set[self.order.pop().unwrap()].clone())
            }
            DataSource::Generator { grammar, tasks } => {
                let w = self.kinds.get_or_insert_with(|| WeightedIndex::new(cfg.mix.iter().map(|(_, w)| *w)).expect("validated mix"));
                let kind = cfg.mix[w.sample(&mut self.rng)].0;
                let seed: u64 = self.rng.random();
                Ok(build_task(kind, grammar, tasks, seed)?)
            }
        }
    }
}

/// Train in place. `progress` sees every update; a checkpoint is written
/// to `ckpt_dir/last.vxck` on the configured cadence and at the end.
pub fn train(models: &mut Models, source: DataSource, cfg: &TrainConfig, ckpt_dir: Option<&Path>, progress: &mut dyn FnMut(&Progress)) -> Result<TrainRun, TrainError> {
    cfg.validate()?;
    let mut sampler = Sampler { source, rng: ChaCha8Rng::seed_from_u64(cfg.seed), order: Vec::new(), kinds: None };
    let mut run = TrainRun {
        losses: Vec::new(),
        ce: Vec::new(),
        steps: 0,
        lr: cfg.lr,
        schedule: Plateau::new(cfg.patience, cfg.max_halvings),
        stop: StopReason::MaxSteps,
        adam: AdamState::new(&models.params),
    };
    let mut acc = models.params.zero_grads();
    let mut window = (0.0, 0.0, 0usize);
    let save = |run: &TrainRun, models: &Models| -> Result<(), TrainError> {
        if let Some(dir) = ckpt_dir {
            std::fs::create_dir_all(dir)?;
            run.checkpoint(models, cfg).save(&dir.join("last.vxck"))?;
        }
        Ok(())
    };
    while run.steps < cfg.max_steps {
        let task = sampler.next(cfg)?;
        let mut tape = Tape::new();
        let p = models.params.bind(&mut tape);
        let tf = teacher_forced_losses(models, &p, &mut tape, &task, cfg.lambda, cfg.state_cap)?;
        let (total, ce) = (tape.data(tf.total)[0], tape.data(tf.ce)[0]);
        if !total.is_finite() {
            let mut dump = String::new();
            writeln!(dump, "step {}", run.steps).unwrap();
            writeln!(dump, "kind {} seed {}", task.kind.key(), task.seed).unwrap();
            writeln!(dump, "prompt {}", task.prompt).unwrap();
            writeln!(dump, "ce {ce}").unwrap();
            for (i, l) in tf.images.iter().enumerate() {
                writeln!(dump, "dice_loss.{i} {}", tape.data(*l)[0]).unwrap();
            }
            writeln!(dump, "lr {}", run.lr).unwrap();
            if let Some(dir) = ckpt_dir {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("diagnostic.txt"), &dump)?;
            }
            return Err(TrainError::NonFinite { step: run.steps, dump });
        }
        let grads = tape.backward(tf.total)?;
        p.accumulate(&grads, &mut acc);
        run.losses.push(total);
        run.ce.push(ce);
        run.steps += 1;
        window = (window.0 + total, window.1 + ce, window.2 + 1);
        if window.2 == cfg.accum || run.steps == cfg.max_steps {
            let n = window.2 as f64;
            acc.iter_mut().flatten().for_each(|g| *g /= n);
            let grad_norm = if cfg.clip > 0.0 { clip_global_norm(&mut acc, cfg.clip) } else { acc.iter().flatten().map(|g| g * g).sum::<f64>().sqrt() };
            if !grad_norm.is_finite() {
                return Err(TrainError::NonFinite { step: run.steps, dump: format!("gradient norm {grad_norm}") });
            }
            adam_step(&mut models.params, &acc, &mut run.adam, &AdamConfig { lr: run.lr, ..AdamConfig::default() });
            acc.iter_mut().flatten().for_each(|g| *g = 0.0);
            let loss = window.0 / n;
            progress(&Progress { step: run.steps, loss, ce: window.1 / n, lr: run.lr, grad_norm });
            let action = run.schedule.observe(loss, window.2);
            window = (0.0, 0.0, 0);
            match action {
                ScheduleAction::Continue => {}
                ScheduleAction::Halve => run.lr /= 2.0,
                ScheduleAction::Stop => {
                    run.stop = StopReason::Schedule;
                    break;
                }
            }
            if cfg.checkpoint_every > 0 && run.steps % cfg.checkpoint_every < cfg.accum {
                save(&run, models)?;
            }
        }
    }
    save(&run, models)?;
    Ok(run)
}
