//! Teacher-forced loss of one task instance.

use super::models::Models;
use super::TrainError;
use crate::agent::vocab::MOD;
use crate::agent::{instruction_tokens, Item, StateMu, VolumeMeta};
use crate::runtime::{embed_feedback, execute, parse, Env, TeacherBackend, Value};
use crate::taskgen::TaskInstance;
use crate::tensor::{BoundParams, Tape, Var};

#[derive(Clone, Debug)]
pub struct TeacherForced {
    /// Mean cross-entropy over every target token of every step.
    pub ce: Var,
    /// Soft Dice loss per generated volume, in `segment` call order.
    pub images: Vec<Var>,
    /// `ce + λ·Σ images`.
    pub total: Var,
    /// Argmax predictions equal to the target token.
    pub correct: usize,
    pub tokens: usize,
}

impl TeacherForced {
    pub fn token_accuracy(&self) -> f64 {
        if self.tokens == 0 {
            1.0
        } else {
            self.correct as f64 / self.tokens as f64
        }
    }
}

/// Run φ* step by step: the state holds the ground-truth instructions and
/// the feedback of executing them with the current networks, while every
/// `segment` hands the target mask to the environment.
pub fn teacher_forced_losses(models: &Models, p: &BoundParams, tape: &mut Tape, task: &TaskInstance, lambda: f64, state_cap: usize) -> Result<TeacherForced, TrainError> {
    let vocab = &models.vocab;
    let metas: Vec<VolumeMeta> = task.volumes.iter().map(|v| v.meta.clone()).collect();
    let mut mu = StateMu::initial(vocab, &task.prompt, &metas, state_cap)?;
    let mut env = Env::new();
    for v in &task.volumes {
        env.set(&v.meta.name, Value::Volume(v.grid.clone()));
    }
    let mut backend = TeacherBackend::new(&models.vision, p, task.masks.clone());
    let mut logits = Vec::new();
    let mut targets = Vec::new();
    for (s, code) in task.program.iter().enumerate() {
        let eta = instruction_tokens(vocab, code);
        let mut items = mu.items().to_vec();
        items.extend(eta.iter().map(|&t| Item::Token(t)));
        if items.len() > state_cap || items.len() > models.config.agent.max_seq {
            return Err(TrainError::GroundTruth(format!("step {s} needs {} state positions", items.len())));
        }
        let h = models.agent.forward(tape, p, &items)?;
        // position i of the state predicts token i + 1
        let hs = tape.narrow(h, 0, mu.len() - 1, eta.len())?;
        logits.push(models.agent.logits(tape, p, hs)?);
        targets.extend(eta.iter().enumerate().map(|(i, &t)| if i > 0 && eta[i - 1] == MOD { None } else { Some(t) }));
        let mods: Vec<usize> = eta.iter().enumerate().filter(|(_, &t)| t == MOD).map(|(i, _)| mu.len() + i).collect();
        let phi = models.agent.phi(tape, p, h, &mods)?;
        let program = parse(code).map_err(|e| TrainError::GroundTruth(format!("step {s}: {e}")))?;
        let out = execute(&program, &mut env, &mut backend, tape, &phi);
        if let Some(e) = out.error {
            return Err(TrainError::GroundTruth(format!("step {s}: {e}")));
        }
        if s + 1 < task.program.len() {
            let block = embed_feedback(&out.feedback, vocab);
            mu = mu.append(&eta, &block.items, state_cap)?;
        }
    }
    let all = tape.concat(&logits, 0)?;
    let ce = tape.cross_entropy(all, &targets)?;
    let (rows, classes) = (targets.len(), vocab.len());
    let data = tape.data(all);
    let mut correct = 0;
    for (r, t) in targets.iter().enumerate().take(rows) {
        if let Some(t) = *t {
            let row = &data[r * classes..(r + 1) * classes];
            let best = (0..classes).fold(0, |b, i| if row[i] > row[b] { i } else { b });
            correct += (best == t) as usize;
        }
    }
    let tokens = targets.iter().flatten().count();
    let generated = std::mem::take(&mut backend.generated);
    let images = generated.iter().map(|(probs, target)| tape.soft_dice(*probs, target)).collect::<Result<Vec<_>, _>>()?;
    let mut total = ce;
    for &l in &images {
        let w = tape.scale(l, lambda);
        total = tape.add(total, w)?;
    }
    Ok(TeacherForced { ce, images, total, correct, tokens })
}
