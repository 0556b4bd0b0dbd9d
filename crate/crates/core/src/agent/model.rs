use super::state::{code_text, Item, StateMu};
use super::vocab::{Vocabulary, EOS_STEP, MOD, PAD};
use super::AgentError;
use crate::tensor::{BoundParams, ParamId, ParamStore, Tape, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AgentConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ff: usize,
    /// Total state cap (positions).
    pub max_seq: usize,
    /// Instruction tokens per step.
    pub step_cap: usize,
    pub phi_dim: usize,
}

impl AgentConfig {
    pub fn desk() -> Self {
        AgentConfig { layers: 2, d_model: 64, heads: 4, ff: 128, max_seq: 1024, step_cap: 128, phi_dim: 8 }
    }

    pub fn full() -> Self {
        AgentConfig { layers: 16, d_model: 512, heads: 32, ff: 2048, max_seq: 1024, step_cap: 128, phi_dim: 32 }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.layers == 0 || self.d_model == 0 || self.ff == 0 || self.phi_dim == 0 || self.max_seq == 0 || self.step_cap == 0 {
            return Err(AgentError::Config("all sizes must be positive".into()));
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(AgentError::Config(format!("d_model {} not divisible by {} heads", self.d_model, self.heads)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct LayerIds {
    norm1: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    norm2: ParamId,
    ff1_w: ParamId,
    ff1_b: ParamId,
    ff2_w: ParamId,
    ff2_b: ParamId,
}

/// Decoder-only transformer with a language-model head and a φ head.
#[derive(Clone, Debug)]
pub struct AgentNet {
    cfg: AgentConfig,
    vocab_size: usize,
    tok: ParamId,
    pos: ParamId,
    layers: Vec<LayerIds>,
    norm_f: ParamId,
    head: ParamId,
    head_b: ParamId,
    phi_w: ParamId,
    phi_b: ParamId,
}

/// Output of one greedy instruction step.
#[derive(Clone, Debug)]
pub struct DecodeResult {
    /// Argmax token at every decoded position, slot tokens included.
    pub emitted: Vec<usize>,
    /// The ids appended to the state (slot positions as PAD).
    pub eta: Vec<usize>,
    /// Code text with slot tokens and EOS_STEP removed.
    pub code: String,
    /// State positions of the MOD inputs whose hidden states gave φ.
    pub mod_positions: Vec<usize>,
    /// One `[1, phi_dim]` vector per MOD token.
    pub phi: Vec<Var>,
    /// The step cap was hit before EOS_STEP.
    pub truncated: bool,
}

fn normal(store: &mut ParamStore, rng: &mut impl Rng, name: String, shape: Vec<usize>, std: f64) -> ParamId {
    let n = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("finite std");
    store.add(name, shape, (0..n).map(|_| dist.sample(rng) as f32).collect())
}

fn fill(store: &mut ParamStore, name: String, shape: Vec<usize>, v: f32) -> ParamId {
    let n = shape.iter().product();
    store.add(name, shape, vec![v; n])
}

impl AgentNet {
    pub fn new(cfg: AgentConfig, vocab_size: usize, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self, AgentError> {
        cfg.validate()?;
        let d = cfg.d_model;
        let lin = (1.0 / d as f64).sqrt();
        let resid = lin / (2.0 * cfg.layers as f64).sqrt();
        let tok = normal(store, rng, "agent.tok".into(), vec![vocab_size, d], 0.1);
        let pos = normal(store, rng, "agent.pos".into(), vec![cfg.max_seq, d], 0.02);
        let layers = (0..cfg.layers)
            .map(|l| {
                let p = |s: &str| format!("agent.layer.{l}.{s}");
                LayerIds {
                    norm1: fill(store, p("norm1"), vec![d], 1.0),
                    wq: normal(store, rng, p("wq"), vec![d, d], lin),
                    wk: normal(store, rng, p("wk"), vec![d, d], lin),
                    wv: normal(store, rng, p("wv"), vec![d, d], lin),
                    wo: normal(store, rng, p("wo"), vec![d, d], resid),
                    norm2: fill(store, p("norm2"), vec![d], 1.0),
                    ff1_w: normal(store, rng, p("ff1.w"), vec![cfg.ff, d], lin),
                    ff1_b: fill(store, p("ff1.b"), vec![cfg.ff], 0.0),
                    ff2_w: normal(store, rng, p("ff2.w"), vec![d, cfg.ff], (1.0 / cfg.ff as f64).sqrt() / (2.0 * cfg.layers as f64).sqrt()),
                    ff2_b: fill(store, p("ff2.b"), vec![d], 0.0),
                }
            })
            .collect();
        let norm_f = fill(store, "agent.norm_f".into(), vec![d], 1.0);
        let head = normal(store, rng, "agent.head.w".into(), vec![vocab_size, d], lin);
        let head_b = fill(store, "agent.head.b".into(), vec![vocab_size], 0.0);
        let phi_w = normal(store, rng, "agent.phi.w".into(), vec![cfg.phi_dim, d], lin);
        let phi_b = fill(store, "agent.phi.b".into(), vec![cfg.phi_dim], 0.0);
        Ok(AgentNet { cfg, vocab_size, tok, pos, layers, norm_f, head, head_b, phi_w, phi_b })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Embed a state: token runs through the embedding table, vectors as
    /// given, plus learned absolute positions. Returns `[T, d]`.
    pub fn embed(&self, tape: &mut Tape, p: &BoundParams, items: &[Item]) -> Result<Var, AgentError> {
        let d = self.cfg.d_model;
        if items.is_empty() {
            return Err(AgentError::EmptyPrompt);
        }
        if items.len() > self.cfg.max_seq {
            return Err(AgentError::StateOverflow { len: items.len(), cap: self.cfg.max_seq });
        }
        let mut parts = Vec::new();
        let mut run = Vec::new();
        for item in items {
            match *item {
                Item::Token(id) => run.push(id),
                Item::Vector(v) => {
                    if !run.is_empty() {
                        parts.push(tape.rows(p.var(self.tok), &run)?);
                        run.clear();
                    }
                    if tape.shape(v) != [1, d] {
                        return Err(AgentError::VectorWidth { expected: d, got: tape.shape(v).to_vec() });
                    }
                    parts.push(v);
                }
            }
        }
        if !run.is_empty() {
            parts.push(tape.rows(p.var(self.tok), &run)?);
        }
        let x = if parts.len() == 1 { parts[0] } else { tape.concat(&parts, 0)? };
        let positions: Vec<usize> = (0..items.len()).collect();
        let pe = tape.rows(p.var(self.pos), &positions)?;
        Ok(tape.add(x, pe)?)
    }

    /// Final-normalised hidden states `[T, d]`.
    pub fn forward(&self, tape: &mut Tape, p: &BoundParams, items: &[Item]) -> Result<Var, AgentError> {
        let mut h = self.embed(tape, p, items)?;
        for l in &self.layers {
            let a = tape.rms_norm(h, p.var(l.norm1))?;
            let q = tape.linear(a, p.var(l.wq), None)?;
            let k = tape.linear(a, p.var(l.wk), None)?;
            let v = tape.linear(a, p.var(l.wv), None)?;
            let att = tape.causal_attention(q, k, v, self.cfg.heads)?;
            let o = tape.linear(att, p.var(l.wo), None)?;
            h = tape.add(h, o)?;
            let m = tape.rms_norm(h, p.var(l.norm2))?;
            let f = tape.linear(m, p.var(l.ff1_w), Some(p.var(l.ff1_b)))?;
            let f = tape.silu(f);
            let f = tape.linear(f, p.var(l.ff2_w), Some(p.var(l.ff2_b)))?;
            h = tape.add(h, f)?;
        }
        Ok(tape.rms_norm(h, p.var(self.norm_f))?)
    }

    /// Vocabulary logits for `hidden [n, d]`.
    pub fn logits(&self, tape: &mut Tape, p: &BoundParams, hidden: Var) -> Result<Var, AgentError> {
        Ok(tape.linear(hidden, p.var(self.head), Some(p.var(self.head_b)))?)
    }

    /// φ = SiLU(FC(hidden)) at each listed position, one `[1, phi_dim]` each.
    pub fn phi(&self, tape: &mut Tape, p: &BoundParams, hidden: Var, positions: &[usize]) -> Result<Vec<Var>, AgentError> {
        if positions.is_empty() {
            return Ok(Vec::new());
        }
        let h = tape.rows(hidden, positions)?;
        let f = tape.linear(h, p.var(self.phi_w), Some(p.var(self.phi_b)))?;
        let f = tape.silu(f);
        (0..positions.len()).map(|i| Ok(tape.narrow(f, 0, i, 1)?)).collect()
    }

    /// Greedy decoding of one instruction step. The full sequence is
    /// re-run for every token and the tape rolled back afterwards; a final
    /// pass over `μ ∥ η` produces the φ vectors, which stay on the tape.
    pub fn decode_step(&self, tape: &mut Tape, p: &BoundParams, vocab: &Vocabulary, mu: &StateMu) -> Result<DecodeResult, AgentError> {
        let mut items = mu.items().to_vec();
        let mut emitted = Vec::new();
        let mut eta = Vec::new();
        let mut truncated = true;
        while emitted.len() < self.cfg.step_cap && items.len() < self.cfg.max_seq {
            let mark = tape.len();
            let h = self.forward(tape, p, &items)?;
            let last = tape.narrow(h, 0, items.len() - 1, 1)?;
            let logits = self.logits(tape, p, last)?;
            let tok = argmax(tape.data(logits));
            tape.truncate(mark);
            let slot = eta.last() == Some(&MOD);
            let input = if slot { PAD } else { tok };
            emitted.push(tok);
            eta.push(input);
            items.push(Item::Token(input));
            if !slot && tok == EOS_STEP {
                truncated = false;
                break;
            }
        }
        let mod_positions: Vec<usize> = eta.iter().enumerate().filter(|(_, &t)| t == MOD).map(|(i, _)| mu.len() + i).collect();
        let phi = if mod_positions.is_empty() {
            Vec::new()
        } else {
            let h = self.forward(tape, p, &items)?;
            self.phi(tape, p, h, &mod_positions)?
        };
        Ok(DecodeResult { code: code_text(vocab, &emitted), emitted, eta, mod_positions, phi, truncated })
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
