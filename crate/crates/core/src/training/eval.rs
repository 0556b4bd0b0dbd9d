//! Free-running evaluation against ground truth.

use super::loss::teacher_forced_losses;
use super::models::Models;
use super::TrainError;
use crate::agent::Vocabulary;
use crate::runtime::{run_loop, LoopConfig, NetworkBackend, NeuralAgent, OracleBackend, ScriptedAgent, Transcript};
use crate::taskgen::{TaskInstance, TaskKind};
use crate::tensor::Tape;
use crate::voxelcore::dice;
use std::fmt::Write as _;
use std::path::Path;

/// Who writes the programs.
#[derive(Clone, Copy)]
pub enum Policy<'a> {
    Model(&'a Models),
    /// Replays φ* with the target masks as segmentation output.
    Oracle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskResult {
    pub kind: TaskKind,
    pub seed: u64,
    /// Mean over target masks; `None` when the task has none.
    pub dice: Option<f64>,
    pub token_correct: usize,
    pub token_total: usize,
    pub exact: bool,
    /// Every step parsed and executed and the loop answered.
    pub valid: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub dice: Option<f64>,
    pub token_accuracy: f64,
    pub exact_match: f64,
    pub validity: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub results: Vec<TaskResult>,
}

fn summarize<'a>(rs: impl Iterator<Item = &'a TaskResult>) -> Summary {
    let rs: Vec<_> = rs.collect();
    let n = rs.len();
    if n == 0 {
        return Summary::default();
    }
    let dices: Vec<f64> = rs.iter().filter_map(|r| r.dice).collect();
    let (c, t) = rs.iter().fold((0, 0), |(c, t), r| (c + r.token_correct, t + r.token_total));
    Summary {
        count: n,
        dice: (!dices.is_empty()).then(|| dices.iter().sum::<f64>() / dices.len() as f64),
        token_accuracy: if t == 0 { 1.0 } else { c as f64 / t as f64 },
        exact_match: rs.iter().filter(|r| r.exact).count() as f64 / n as f64,
        validity: rs.iter().filter(|r| r.valid).count() as f64 / n as f64,
    }
}

fn put(s: &mut String, prefix: &str, m: &Summary) {
    writeln!(s, "{prefix}.count {}", m.count).unwrap();
    match m.dice {
        Some(d) => writeln!(s, "{prefix}.dice {d:.6}").unwrap(),
        None => writeln!(s, "{prefix}.dice n/a").unwrap(),
    }
    writeln!(s, "{prefix}.token_accuracy {:.6}", m.token_accuracy).unwrap();
    writeln!(s, "{prefix}.exact_match {:.6}", m.exact_match).unwrap();
    writeln!(s, "{prefix}.validity {:.6}", m.validity).unwrap();
}

impl EvalReport {
    pub fn overall(&self) -> Summary {
        summarize(self.results.iter())
    }

    pub fn kind(&self, k: TaskKind) -> Summary {
        summarize(self.results.iter().filter(|r| r.kind == k))
    }

    /// One `key value` line per metric; empty for an empty task list.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if self.results.is_empty() {
            return s;
        }
        put(&mut s, "overall", &self.overall());
        for k in TaskKind::ALL {
            if self.results.iter().any(|r| r.kind == k) {
                put(&mut s, k.key(), &self.kind(k));
            }
        }
        for (i, r) in self.results.iter().enumerate() {
            writeln!(s, "task.{i}.kind {}", r.kind.key()).unwrap();
            match r.dice {
                Some(d) => writeln!(s, "task.{i}.dice {d:.6}").unwrap(),
                None => writeln!(s, "task.{i}.dice n/a").unwrap(),
            }
            writeln!(s, "task.{i}.exact {}", r.exact as u8).unwrap();
            writeln!(s, "task.{i}.valid {}", r.valid as u8).unwrap();
        }
        s
    }
}

/// Mean Dice of the masks bound at the end of the loop against the target
/// masks, matched in order; missing or misshapen masks score 0.
pub fn transcript_dice(t: &Transcript, targets: &[crate::voxelcore::BinaryMask]) -> Option<f64> {
    if targets.is_empty() {
        return None;
    }
    let sum: f64 = targets.iter().enumerate().map(|(k, w)| t.masks.get(k).and_then(|(_, m)| dice(m, w).ok()).unwrap_or(0.0)).sum();
    Some(sum / targets.len() as f64)
}

/// Run every task. With `out_dir`, each transcript and its masks are
/// saved under `out_dir/task{i}/`.
pub fn evaluate(policy: Policy, tasks: &[TaskInstance], out_dir: Option<&Path>, cfg: LoopConfig) -> Result<EvalReport, TrainError> {
    let mut report = EvalReport::default();
    let empty = Vocabulary::build::<&str>(&[], 0);
    for (i, task) in tasks.iter().enumerate() {
        let mut tape = Tape::new();
        let (t, token_correct, token_total) = match policy {
            Policy::Model(m) => {
                let (c, n) = {
                    let mut tf_tape = Tape::new();
                    let p = m.params.bind_frozen(&mut tf_tape);
                    let tf = teacher_forced_losses(m, &p, &mut tf_tape, task, 0.0, cfg.state_cap)?;
                    (tf.correct, tf.tokens)
                };
                let p = m.params.bind_frozen(&mut tape);
                let mut agent = NeuralAgent { net: &m.agent, params: &p, vocab: &m.vocab };
                let mut backend = NetworkBackend { net: &m.vision, params: &p };
                let t = run_loop(&mut agent, &mut backend, &m.vocab, &task.prompt, &task.volumes, &mut tape, cfg)?;
                (t, c, n)
            }
            Policy::Oracle => {
                let mut agent = ScriptedAgent::new(&empty, task.program.clone(), 1);
                let mut backend = OracleBackend::new(1, task.masks.clone());
                let t = run_loop(&mut agent, &mut backend, &empty, &task.prompt, &task.volumes, &mut tape, cfg)?;
                let n: usize = task.program.iter().map(|c| crate::agent::instruction_tokens(&empty, c).len()).sum();
                (t, n, n)
            }
        };
        if let Some(dir) = out_dir {
            t.save(&dir.join(format!("task{i}")))?;
        }
        report.results.push(TaskResult {
            kind: task.kind,
            seed: task.seed,
            dice: transcript_dice(&t, &task.masks),
            token_correct,
            token_total,
            exact: t.answer.as_deref() == Some(task.answer.as_str()),
            valid: t.complete && t.steps.iter().all(|s| s.error.is_none()),
        });
    }
    Ok(report)
}
