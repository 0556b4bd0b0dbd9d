use super::backend::VisionBackend;
use super::dsl::parse;
use super::exec::{embed_feedback, execute, FeedbackItem};
use super::value::{Env, Value};
use crate::agent::{instruction_tokens, AgentError, AgentNet, StateMu, VolumeMeta, Vocabulary};
use crate::tensor::{BoundParams, Tape, Tensor, Var};
use crate::voxelcore::{io::write_vxv1, io::read_vxv1, BinaryMask, VoxelGrid};
use std::fmt::Write as _;
use std::path::Path;

/// What an agent proposes for one step.
#[derive(Clone, Debug)]
pub struct AgentStep {
    pub code: String,
    /// Instruction ids appended to the state.
    pub eta: Vec<usize>,
    pub phi: Vec<Var>,
    pub truncated: bool,
}

pub trait Agent {
    fn step(&mut self, tape: &mut Tape, mu: &StateMu) -> Result<AgentStep, AgentError>;
}

/// Greedy decoding with the language model.
pub struct NeuralAgent<'a> {
    pub net: &'a AgentNet,
    pub params: &'a BoundParams,
    pub vocab: &'a Vocabulary,
}

impl Agent for NeuralAgent<'_> {
    fn step(&mut self, tape: &mut Tape, mu: &StateMu) -> Result<AgentStep, AgentError> {
        let r = self.net.decode_step(tape, self.params, self.vocab, mu)?;
        Ok(AgentStep { code: r.code, eta: r.eta, phi: r.phi, truncated: r.truncated })
    }
}

/// Replays a fixed program one step at a time with zero φ vectors.
pub struct ScriptedAgent<'a> {
    vocab: &'a Vocabulary,
    steps: Vec<String>,
    next: usize,
    phi_dim: usize,
}

impl<'a> ScriptedAgent<'a> {
    pub fn new(vocab: &'a Vocabulary, steps: Vec<String>, phi_dim: usize) -> Self {
        ScriptedAgent { vocab, steps, next: 0, phi_dim }
    }
}

impl Agent for ScriptedAgent<'_> {
    fn step(&mut self, tape: &mut Tape, _mu: &StateMu) -> Result<AgentStep, AgentError> {
        let code = self.steps.get(self.next).cloned().unwrap_or_default();
        self.next += 1;
        let slots = code.matches(crate::agent::vocab::MOD_TEXT).count();
        let phi = (0..slots).map(|_| tape.constant(Tensor::zeros(&[1, self.phi_dim]))).collect();
        Ok(AgentStep { eta: instruction_tokens(self.vocab, &code), code, phi, truncated: false })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub code: String,
    pub phi_count: usize,
    /// `None` when the step ran cleanly.
    pub error: Option<String>,
    pub feedback: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transcript {
    pub prompt: String,
    pub steps: Vec<StepRecord>,
    pub answer: Option<String>,
    pub complete: bool,
    /// Masks bound when the loop ended.
    pub masks: Vec<(String, BinaryMask)>,
}

#[derive(Clone, Copy, Debug)]
pub struct LoopConfig {
    pub max_steps: usize,
    pub state_cap: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig { max_steps: 8, state_cap: 1024 }
    }
}

/// A named input volume with its metadata.
#[derive(Clone, Debug)]
pub struct InputVolume {
    pub meta: VolumeMeta,
    pub grid: VoxelGrid,
}

/// Decode, parse, execute and feed back until the program answers or
/// `max_steps` run out. Overflowing the state cap ends the loop
/// incomplete.
pub fn run_loop(
    agent: &mut dyn Agent,
    backend: &mut dyn VisionBackend,
    vocab: &Vocabulary,
    prompt: &str,
    volumes: &[InputVolume],
    tape: &mut Tape,
    cfg: LoopConfig,
) -> Result<Transcript, AgentError> {
    let metas: Vec<VolumeMeta> = volumes.iter().map(|v| v.meta.clone()).collect();
    let mut mu = StateMu::initial(vocab, prompt, &metas, cfg.state_cap)?;
    let mut env = Env::new();
    for v in volumes {
        env.set(&v.meta.name, Value::Volume(v.grid.clone()));
    }
    let mut t = Transcript { prompt: prompt.to_string(), steps: Vec::new(), answer: None, complete: false, masks: Vec::new() };
    for _ in 0..cfg.max_steps {
        let step = match agent.step(tape, &mu) {
            Ok(s) => s,
            Err(AgentError::StateOverflow { .. }) => break,
            Err(e) => return Err(e),
        };
        let (feedback, error, answer) = match parse(&step.code) {
            Err(e) => (vec![FeedbackItem::Text(format!("error: {e}"))], Some(e.to_string()), None),
            Ok(program) => {
                let out = execute(&program, &mut env, backend, tape, &step.phi);
                (out.feedback, out.error.map(|e| e.to_string()), out.answer)
            }
        };
        let block = embed_feedback(&feedback, vocab);
        t.steps.push(StepRecord { code: step.code, phi_count: step.phi.len(), error, feedback: block.rendering });
        if let Some(a) = answer {
            t.answer = Some(a);
            t.complete = true;
            break;
        }
        mu = match mu.append(&step.eta, &block.items, cfg.state_cap) {
            Ok(m) => m,
            Err(AgentError::StateOverflow { .. }) => break,
            Err(e) => return Err(e),
        };
    }
    t.masks = env.masks();
    Ok(t)
}

fn esc(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n")
}

fn unesc(s: &str) -> String {
    let mut out = String::new();
    let mut it = s.chars();
    while let Some(c) = it.next() {
        if c == '\\' {
            match it.next() {
                Some('n') => out.push('\n'),
                Some(o) => out.push(o),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

impl Transcript {
    /// Structured text. Masks are referenced as `<name>.vxv` files.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "prompt: {}", esc(&self.prompt)).unwrap();
        for (i, st) in self.steps.iter().enumerate() {
            writeln!(s, "step {}", i + 1).unwrap();
            writeln!(s, "  phi: {}", st.phi_count).unwrap();
            match &st.error {
                None => writeln!(s, "  outcome: ok").unwrap(),
                Some(e) => writeln!(s, "  outcome: error: {}", esc(e)).unwrap(),
            }
            writeln!(s, "  code:").unwrap();
            for l in st.code.lines() {
                writeln!(s, "    {l}").unwrap();
            }
            writeln!(s, "  feedback:").unwrap();
            for l in st.feedback.lines() {
                writeln!(s, "    {l}").unwrap();
            }
        }
        match &self.answer {
            Some(a) => writeln!(s, "answer: {}", esc(a)).unwrap(),
            None => writeln!(s, "answer: <none>").unwrap(),
        }
        writeln!(s, "complete: {}", self.complete).unwrap();
        for (name, _) in &self.masks {
            writeln!(s, "mask {name}: {name}.vxv").unwrap();
        }
        s
    }

    /// Write `transcript.txt` plus one VXV1 file per mask.
    pub fn save(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("transcript.txt"), self.to_text())?;
        for (name, m) in &self.masks {
            std::fs::write(dir.join(format!("{name}.vxv")), write_vxv1(&m.to_grid()))?;
        }
        Ok(())
    }

    /// Parse [`Transcript::to_text`] output. Masks are loaded from `dir`
    /// when given, otherwise left out.
    pub fn parse(text: &str, dir: Option<&Path>) -> Result<Transcript, String> {
        let mut t = Transcript { prompt: String::new(), steps: Vec::new(), answer: None, complete: false, masks: Vec::new() };
        #[derive(PartialEq)]
        enum Block {
            None,
            Code,
            Feedback,
        }
        let mut block = Block::None;
        for (n, line) in text.lines().enumerate() {
            let bad = || format!("transcript line {}: unexpected {line:?}", n + 1);
            if let Some(body) = line.strip_prefix("    ") {
                let st = t.steps.last_mut().ok_or_else(bad)?;
                let field = match block {
                    Block::Code => &mut st.code,
                    Block::Feedback => &mut st.feedback,
                    Block::None => return Err(bad()),
                };
                if !field.is_empty() {
                    field.push('\n');
                }
                field.push_str(body);
                continue;
            }
            block = Block::None;
            if let Some(p) = line.strip_prefix("prompt: ") {
                t.prompt = unesc(p);
            } else if line.starts_with("step ") {
                t.steps.push(StepRecord { code: String::new(), phi_count: 0, error: None, feedback: String::new() });
            } else if let Some(v) = line.strip_prefix("  phi: ") {
                t.steps.last_mut().ok_or_else(bad)?.phi_count = v.parse().map_err(|_| bad())?;
            } else if let Some(v) = line.strip_prefix("  outcome: ") {
                let st = t.steps.last_mut().ok_or_else(bad)?;
                st.error = match v {
                    "ok" => None,
                    e => Some(unesc(e.strip_prefix("error: ").ok_or_else(bad)?)),
                };
            } else if line == "  code:" {
                block = Block::Code;
            } else if line == "  feedback:" {
                block = Block::Feedback;
            } else if let Some(a) = line.strip_prefix("answer: ") {
                t.answer = if a == "<none>" { None } else { Some(unesc(a)) };
            } else if let Some(c) = line.strip_prefix("complete: ") {
                t.complete = c.parse().map_err(|_| bad())?;
            } else if let Some(rest) = line.strip_prefix("mask ") {
                let (name, file) = rest.split_once(": ").ok_or_else(bad)?;
                if let Some(dir) = dir {
                    let bytes = std::fs::read(dir.join(file)).map_err(|e| format!("{file}: {e}"))?;
                    let g = read_vxv1(&bytes).map_err(|e| format!("{file}: {e}"))?;
                    t.masks.push((name.to_string(), BinaryMask::from_grid(&g)));
                }
            } else if !line.is_empty() {
                return Err(bad());
            }
        }
        Ok(t)
    }
}
