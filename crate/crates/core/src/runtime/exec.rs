use super::backend::VisionBackend;
use super::dsl::{Arg, Program, Stmt};
use super::value::{Env, Unit, Value};
use crate::agent::{Item, Vocabulary};
use crate::tensor::{Tape, Var};
use crate::voxelcore::{crop_margin, roi_report, BinaryMask, VoxelGrid};
use thiserror::Error;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum ExecError {
    #[error("line {line}: undefined variable {name}")]
    Undefined { line: usize, name: String },
    #[error("line {line}: {func} expects {expected}, got {got}")]
    Type { line: usize, func: String, expected: String, got: String },
    #[error("line {line}: {func} takes {expected} arguments, got {got}")]
    Arity { line: usize, func: String, expected: String, got: usize },
    #[error("modulation count mismatch: program has {slots} <MOD> slots, got {vectors} vectors")]
    PhiCount { slots: usize, vectors: usize },
    #[error("line {line}: unknown function {name}")]
    UnknownFunction { line: usize, name: String },
    #[error("line {line}: {func}: {msg}")]
    Failed { line: usize, func: String, msg: String },
}

/// One `read`: encodings pass their vectors through, everything else is
/// read as text.
#[derive(Clone, Debug)]
pub enum FeedbackItem {
    Vectors(Vec<Var>),
    Text(String),
}

impl FeedbackItem {
    pub fn render(&self) -> String {
        match self {
            FeedbackItem::Vectors(v) => format!("[{} encoding vector{}]", v.len(), if v.len() == 1 { "" } else { "s" }),
            FeedbackItem::Text(t) => t.clone(),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct StepOutcome {
    pub feedback: Vec<FeedbackItem>,
    pub error: Option<ExecError>,
    /// Set by `respond`; `stop` sets it to the empty string.
    pub answer: Option<String>,
}

impl StepOutcome {
    pub fn complete(&self) -> bool {
        self.answer.is_some()
    }
}

/// Feedback ready to append to the agent state.
#[derive(Clone, Debug, Default)]
pub struct FeedbackBlock {
    pub items: Vec<Item>,
    pub rendering: String,
}

/// Text items are tokenized; encoding vectors are passed through. Items
/// keep their read order.
pub fn embed_feedback(items: &[FeedbackItem], vocab: &Vocabulary) -> FeedbackBlock {
    let mut block = FeedbackBlock::default();
    for (i, it) in items.iter().enumerate() {
        match it {
            FeedbackItem::Vectors(v) => block.items.extend(v.iter().map(|&x| Item::Vector(x))),
            FeedbackItem::Text(t) => block.items.extend(vocab.encode(t).into_iter().map(Item::Token)),
        }
        if i > 0 {
            block.rendering.push('\n');
        }
        block.rendering.push_str(&it.render());
    }
    block
}

/// Run a program. Statements execute in order until one fails, `respond`
/// or `stop` runs, or the program ends; a failure becomes an error
/// feedback item and keeps the bindings made before it.
pub fn execute(program: &Program, env: &mut Env, backend: &mut dyn VisionBackend, tape: &mut Tape, phi: &[Var]) -> StepOutcome {
    let mut out = StepOutcome::default();
    let slots = program.mod_count();
    if slots != phi.len() {
        let e = ExecError::PhiCount { slots, vectors: phi.len() };
        out.feedback.push(FeedbackItem::Text(format!("error: {e}")));
        out.error = Some(e);
        return out;
    }
    let mut cx = Ctx { env, backend, tape, phi, out: &mut out };
    for stmt in &program.stmts {
        if let Err(e) = cx.run(stmt) {
            cx.out.feedback.push(FeedbackItem::Text(format!("error: {e}")));
            cx.out.error = Some(e);
            break;
        }
        if cx.out.answer.is_some() {
            break;
        }
    }
    out
}

struct Ctx<'a> {
    env: &'a mut Env,
    backend: &'a mut dyn VisionBackend,
    tape: &'a mut Tape,
    phi: &'a [Var],
    out: &'a mut StepOutcome,
}

/// Evaluated argument.
enum Val<'v> {
    V(&'v Value),
    Owned(Value),
    Slot(usize),
}

impl Val<'_> {
    fn value(&self) -> Option<&Value> {
        match self {
            Val::V(v) => Some(v),
            Val::Owned(v) => Some(v),
            Val::Slot(_) => None,
        }
    }

    fn type_name(&self) -> &'static str {
        self.value().map_or("<MOD>", Value::type_name)
    }
}

impl Ctx<'_> {
    fn run(&mut self, s: &Stmt) -> Result<(), ExecError> {
        let env: &Env = self.env;
        let mut args = Vec::with_capacity(s.args.len());
        for a in &s.args {
            args.push(match a {
                Arg::Var(n) => Val::V(env.get(n).ok_or_else(|| ExecError::Undefined { line: s.line, name: n.clone() })?),
                Arg::Number(x) => Val::Owned(Value::Number(*x, Unit::None)),
                Arg::Str(t) => Val::Owned(Value::Text(t.clone())),
                Arg::ModSlot(k) => Val::Slot(*k),
            });
        }
        let f = Call { line: s.line, func: &s.func };
        let result = match s.func.as_str() {
            "encode" => {
                let (vols, slots) = f.pairs(&args, "volume", |v| match v {
                    Value::Volume(g) => Some(g.clone()),
                    _ => None,
                })?;
                if vols.is_empty() {
                    return Err(f.arity(">= 2", 0));
                }
                let phi: Vec<Var> = slots.iter().map(|&k| self.phi[k]).collect();
                let enc = self.backend.encode(self.tape, &vols, &phi).map_err(|m| f.fail(m))?;
                Some(Value::Encodings(enc))
            }
            "segment" => {
                let [head, rest @ ..] = args.as_slice() else { return Err(f.arity(">= 2", 0)) };
                let Some(Value::Encodings(enc)) = head.value() else { return Err(f.ty("encodings", head.type_name())) };
                let mut phi = Vec::new();
                for a in rest {
                    match a {
                        Val::Slot(k) => phi.push(self.phi[*k]),
                        other => return Err(f.ty("<MOD>", other.type_name())),
                    }
                }
                if phi.len() != 1 && phi.len() != enc.streams() {
                    return Err(f.fail(format!("needs 1 or {} <MOD> slots, got {}", enc.streams(), phi.len())));
                }
                let enc = enc.clone();
                Some(Value::Mask(self.backend.segment(self.tape, &enc, &phi).map_err(|m| f.fail(m))?))
            }
            "read" => {
                let [a] = args.as_slice() else { return Err(f.arity("1", args.len())) };
                let v = a.value().ok_or_else(|| f.ty("a value", "<MOD>"))?;
                self.out.feedback.push(match v {
                    Value::Encodings(e) => FeedbackItem::Vectors(e.pooled.clone()),
                    other => FeedbackItem::Text(other.render()),
                });
                None
            }
            "volume_of" => {
                let m = f.mask1(&args)?;
                let r = roi_report(&m.to_grid(), m).map_err(|e| f.fail(e.to_string()))?;
                Some(Value::Number(r.volume_mm3, Unit::Mm3))
            }
            "extents_of" => {
                let m = f.mask1(&args)?;
                let r = roi_report(&m.to_grid(), m).map_err(|e| f.fail(e.to_string()))?;
                Some(Value::Triple(r.extents_mm, Unit::Mm))
            }
            "mean_in" | "snr_in" => {
                let (g, m) = f.volume_mask(&args)?;
                let r = roi_report(g, m).map_err(|e| f.fail(e.to_string()))?;
                if r.volume_mm3 == 0.0 {
                    return Err(f.fail("empty mask"));
                }
                if s.func == "mean_in" {
                    Some(Value::Number(r.mean, Unit::None))
                } else {
                    Some(Value::Number(r.snr.ok_or_else(|| f.fail("degenerate statistics"))?, Unit::None))
                }
            }
            "add" | "sub" | "mul" | "div" => {
                let [a, b] = args.as_slice() else { return Err(f.arity("2", args.len())) };
                let (Some(Value::Number(x, ux)), Some(Value::Number(y, uy))) = (a.value(), b.value()) else {
                    return Err(f.ty("two numbers", &format!("{}, {}", a.type_name(), b.type_name())));
                };
                Some(arith(&f, x, *ux, y, *uy)?)
            }
            "mask_apply" | "mask_remove" => {
                let (g, m) = f.volume_mask(&args)?;
                let keep = s.func == "mask_apply";
                let vals = g.values().iter().zip(m.bits()).map(|(&v, &b)| if (b == 1) == keep { v } else { 0.0 }).collect();
                Some(Value::Volume(g.with_values(vals).map_err(|e| f.fail(e.to_string()))?))
            }
            "crop_to" => {
                let [a, b, c] = args.as_slice() else { return Err(f.arity("3", args.len())) };
                let (g, m) = f.volume_mask_of(a, b)?;
                let Some(Value::Number(margin, _)) = c.value() else { return Err(f.ty("a margin number", c.type_name())) };
                Some(Value::Volume(crop_margin(g, m, *margin).map_err(|e| f.fail(e.to_string()))?))
            }
            "respond" => {
                let [t, rest @ ..] = args.as_slice() else { return Err(f.arity(">= 1", 0)) };
                let Some(Value::Text(template)) = t.value() else { return Err(f.ty("a template string", t.type_name())) };
                let mut subs = Vec::new();
                for a in rest {
                    subs.push(a.value().ok_or_else(|| f.ty("a value", "<MOD>"))?.answer_text());
                }
                self.out.answer = Some(fill_template(template, &subs).map_err(|m| f.fail(m))?);
                None
            }
            "stop" => {
                if !args.is_empty() {
                    return Err(f.arity("0", args.len()));
                }
                self.out.answer = Some(String::new());
                None
            }
            _ => return Err(ExecError::UnknownFunction { line: s.line, name: s.func.clone() }),
        };
        match (result, &s.target) {
            (Some(v), Some(t)) => self.env.set(t, v),
            (None, Some(_)) => return Err(f.fail("returns no value to assign")),
            _ => {}
        }
        Ok(())
    }
}

struct Call<'s> {
    line: usize,
    func: &'s str,
}

impl Call<'_> {
    fn fail(&self, msg: impl Into<String>) -> ExecError {
        ExecError::Failed { line: self.line, func: self.func.into(), msg: msg.into() }
    }

    fn ty(&self, expected: &str, got: &str) -> ExecError {
        ExecError::Type { line: self.line, func: self.func.into(), expected: expected.into(), got: got.into() }
    }

    fn arity(&self, expected: &str, got: usize) -> ExecError {
        ExecError::Arity { line: self.line, func: self.func.into(), expected: expected.into(), got }
    }

    /// `(value, <MOD>)` pairs.
    fn pairs<T>(&self, args: &[Val], what: &str, pick: impl Fn(&Value) -> Option<T>) -> Result<(Vec<T>, Vec<usize>), ExecError> {
        if !args.len().is_multiple_of(2) {
            return Err(self.fail(format!("expects {what}, <MOD> pairs")));
        }
        let mut items = Vec::new();
        let mut slots = Vec::new();
        for pair in args.chunks(2) {
            let v = pair[0].value().and_then(&pick).ok_or_else(|| self.ty(what, pair[0].type_name()))?;
            let Val::Slot(k) = pair[1] else { return Err(self.ty("<MOD>", pair[1].type_name())) };
            items.push(v);
            slots.push(k);
        }
        Ok((items, slots))
    }

    fn mask1<'v>(&self, args: &'v [Val]) -> Result<&'v BinaryMask, ExecError> {
        let [a] = args else { return Err(self.arity("1", args.len())) };
        match a.value() {
            Some(Value::Mask(m)) => Ok(&m.mask),
            _ => Err(self.ty("mask", a.type_name())),
        }
    }

    fn volume_mask<'v>(&self, args: &'v [Val]) -> Result<(&'v VoxelGrid, &'v BinaryMask), ExecError> {
        let [a, b] = args else { return Err(self.arity("2", args.len())) };
        self.volume_mask_of(a, b)
    }

    fn volume_mask_of<'v>(&self, a: &'v Val, b: &'v Val) -> Result<(&'v VoxelGrid, &'v BinaryMask), ExecError> {
        let Some(Value::Volume(g)) = a.value() else { return Err(self.ty("volume", a.type_name())) };
        let Some(Value::Mask(m)) = b.value() else { return Err(self.ty("mask", b.type_name())) };
        if !m.mask.matches(g) {
            return Err(self.fail("mask geometry does not match the volume"));
        }
        Ok((g, &m.mask))
    }
}

fn arith(f: &Call, x: &f64, ux: Unit, y: &f64, uy: Unit) -> Result<Value, ExecError> {
    let (x, y) = (*x, *y);
    let unit_err = || f.fail(format!("incompatible units {} and {}", unit_name(ux), unit_name(uy)));
    Ok(match f.func {
        "add" | "sub" => {
            if ux != uy {
                return Err(unit_err());
            }
            Value::Number(if f.func == "add" { x + y } else { x - y }, ux)
        }
        "mul" => match (ux, uy) {
            (Unit::None, u) | (u, Unit::None) => Value::Number(x * y, u),
            _ => return Err(unit_err()),
        },
        _ => {
            if y == 0.0 {
                return Err(f.fail("division by zero"));
            }
            let u = match (ux, uy) {
                (u, Unit::None) => u,
                (a, b) if a == b => Unit::None,
                _ => return Err(unit_err()),
            };
            Value::Number(x / y, u)
        }
    })
}

fn unit_name(u: Unit) -> &'static str {
    match u {
        Unit::None => "none",
        u => u.tag(),
    }
}

/// Replace `{k}` with `subs[k]`; `{{` and `}}` are literal braces.
pub fn fill_template(t: &str, subs: &[String]) -> Result<String, String> {
    let mut out = String::new();
    let mut chars = t.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' if chars.peek() == Some(&'{') => {
                chars.next();
                out.push('{');
            }
            '}' if chars.peek() == Some(&'}') => {
                chars.next();
                out.push('}');
            }
            '{' => {
                let mut idx = String::new();
                loop {
                    match chars.next() {
                        Some('}') => break,
                        Some(d) if d.is_ascii_digit() => idx.push(d),
                        _ => return Err("malformed placeholder in template".into()),
                    }
                }
                let k: usize = idx.parse().map_err(|_| "empty placeholder in template".to_string())?;
                out.push_str(subs.get(k).ok_or_else(|| format!("placeholder {{{k}}} has no argument"))?);
            }
            '}' => return Err("unmatched '}' in template".into()),
            c => out.push(c),
        }
    }
    Ok(out)
}
