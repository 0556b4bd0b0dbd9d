//! Instruction language, persistent environment, execution and the agent
//! loop.

mod agent_loop;
mod backend;
pub mod dsl;
mod exec;
mod value;

pub use agent_loop::{run_loop, Agent, AgentStep, InputVolume, LoopConfig, NeuralAgent, ScriptedAgent, StepRecord, Transcript};
pub use backend::{NetworkBackend, OracleBackend, TeacherBackend, VisionBackend};
pub use dsl::{parse, Arg, Program, Stmt, SyntaxError};
pub use exec::{embed_feedback, execute, fill_template, ExecError, FeedbackBlock, FeedbackItem, StepOutcome};
pub use value::{fmt_number, Encodings, Env, MaskValue, Unit, Value};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{Item, VolumeMeta, Vocabulary};
    use crate::tensor::{Tape, Tensor, Var};
    use crate::voxelcore::{Affine, BinaryMask, VoxelGrid};

    fn grid() -> VoxelGrid {
        VoxelGrid::filled([8, 8, 8], 1.0, Affine::identity()).unwrap()
    }

    fn cube(n: usize) -> BinaryMask {
        // first n voxels in flat order
        let mut c = 0;
        BinaryMask::from_fn(&grid(), |_, _, _| {
            c += 1;
            c <= n
        })
    }

    fn zeros(tape: &mut Tape, n: usize) -> Vec<Var> {
        (0..n).map(|_| tape.constant(Tensor::zeros(&[1, 8]))).collect()
    }

    fn run(code: &str, env: &mut Env, masks: Vec<BinaryMask>) -> StepOutcome {
        let p = parse(code).unwrap();
        let mut tape = Tape::new();
        let phi = zeros(&mut tape, p.mod_count());
        execute(&p, env, &mut OracleBackend::new(16, masks), &mut tape, &phi)
    }

    fn env() -> Env {
        let mut e = Env::new();
        e.set("v1", Value::Volume(grid()));
        e
    }

    #[test]
    fn volume_of_mask() {
        let mut e = env();
        let out = run("e = encode(v1, <MOD>)\nm = segment(e, <MOD>)\nx = volume_of(m)\nread(x)", &mut e, vec![cube(120)]);
        assert!(out.error.is_none(), "{:?}", out.error);
        assert!(matches!(e.get("x"), Some(Value::Number(v, Unit::Mm3)) if *v == 120.0));
        assert_eq!(out.feedback[0].render(), "120.0 mm3");
    }

    #[test]
    fn respond_formats_one_decimal() {
        let mut e = env();
        e.set("n", Value::Number(50.0, Unit::Mm3));
        let out = run("respond(\"growth is {0} mm3\", n)", &mut e, vec![]);
        assert_eq!(out.answer.as_deref(), Some("growth is 50.0 mm3"));
    }

    #[test]
    fn phi_mismatch_leaves_env() {
        let mut e = env();
        let p = parse("e = encode(v1, <MOD>)").unwrap();
        let mut tape = Tape::new();
        let out = execute(&p, &mut e, &mut OracleBackend::new(16, vec![]), &mut tape, &[]);
        assert!(matches!(out.error, Some(ExecError::PhiCount { slots: 1, vectors: 0 })));
        assert_eq!(e.len(), 1);
    }

    #[test]
    fn errors_become_feedback() {
        let mut e = env();
        let out = run("a = volume_of(nope)", &mut e, vec![]);
        assert!(matches!(out.error, Some(ExecError::Undefined { .. })));
        assert!(out.feedback[0].render().contains("undefined variable nope"));
        let out = run("a = frobnicate(v1)", &mut e, vec![]);
        assert!(matches!(out.error, Some(ExecError::UnknownFunction { .. })));
        let out = run("a = volume_of(v1)", &mut e, vec![]);
        assert!(matches!(out.error, Some(ExecError::Type { .. })));
        let out = run("x = add(1, 2)\ny = sub(x, v1)\nz = add(1, 1)", &mut e, vec![]);
        assert!(matches!(out.error, Some(ExecError::Type { line: 2, .. })));
        assert!(e.get("x").is_some() && e.get("z").is_none());
    }

    #[test]
    fn arithmetic_units() {
        let mut e = env();
        e.set("a", Value::Number(150.0, Unit::Mm3));
        e.set("b", Value::Number(100.0, Unit::Mm3));
        run("d = sub(a, b)\nr = div(a, b)\nh = mul(b, 0.5)", &mut e, vec![]);
        assert!(matches!(e.get("d"), Some(Value::Number(v, Unit::Mm3)) if *v == 50.0));
        assert!(matches!(e.get("r"), Some(Value::Number(v, Unit::None)) if *v == 1.5));
        assert!(matches!(e.get("h"), Some(Value::Number(v, Unit::Mm3)) if *v == 50.0));
        let out = run("x = div(a, 0)", &mut e, vec![]);
        assert!(out.error.is_some());
    }

    #[test]
    fn reads_concatenate_in_order() {
        let vocab = Vocabulary::build(&["volume"], 512);
        let mut e = env();
        e.set("n", Value::Number(12.5, Unit::Mm3));
        let out = run("w = encode(v1, <MOD>, v1, <MOD>)\nread(w)\nread(n)", &mut e, vec![]);
        let block = embed_feedback(&out.feedback, &vocab);
        let toks = vocab.encode("12.5 mm3");
        assert_eq!(block.items.len(), 2 + toks.len());
        assert!(matches!(block.items[0], Item::Vector(_)) && matches!(block.items[1], Item::Vector(_)));
        let tail: Vec<usize> = block.items[2..].iter().map(|i| if let Item::Token(t) = i { *t } else { usize::MAX }).collect();
        assert_eq!(tail, toks);
    }

    #[test]
    fn template_errors() {
        assert_eq!(fill_template("{0} and {{x}}", &["a".into()]).unwrap(), "a and {x}");
        assert!(fill_template("{1}", &["a".into()]).is_err());
        assert!(fill_template("{0", &["a".into()]).is_err());
    }

    fn inputs() -> Vec<InputVolume> {
        vec![InputVolume { meta: VolumeMeta::new("v1", "t1", "2020-01-01"), grid: grid() }]
    }

    #[test]
    fn scripted_loop_completes_and_roundtrips() {
        let vocab = Vocabulary::build(&["segment"], 512);
        let steps = vec!["e = encode(v1, <MOD>)\nread(e)".to_string(), "m = segment(e, <MOD>)\nx = volume_of(m)\nread(x)".into(), "respond(\"{0} mm3\", x)".into()];
        let mut agent = ScriptedAgent::new(&vocab, steps, 8);
        let mut backend = OracleBackend::new(16, vec![cube(40)]);
        let mut tape = Tape::new();
        let t = run_loop(&mut agent, &mut backend, &vocab, "measure it", &inputs(), &mut tape, LoopConfig::default()).unwrap();
        assert!(t.complete);
        assert_eq!(t.answer.as_deref(), Some("40.0 mm3"));
        assert_eq!(t.steps.len(), 3);
        assert_eq!(t.masks.len(), 1);
        let dir = tempfile::tempdir().unwrap();
        t.save(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("transcript.txt")).unwrap();
        assert_eq!(Transcript::parse(&text, Some(dir.path())).unwrap(), t);
    }

    #[test]
    fn undefined_variable_then_continue() {
        let vocab = Vocabulary::build(&["x"], 512);
        let steps = vec!["read(ghost)".to_string(), "stop()".into()];
        let mut agent = ScriptedAgent::new(&vocab, steps, 8);
        let mut tape = Tape::new();
        let t = run_loop(&mut agent, &mut OracleBackend::new(16, vec![]), &vocab, "p", &inputs(), &mut tape, LoopConfig::default()).unwrap();
        assert!(t.steps[0].error.is_some());
        assert!(t.complete);
    }

    #[test]
    fn exhausting_steps_is_incomplete() {
        let vocab = Vocabulary::build(&["x"], 512);
        let mut agent = ScriptedAgent::new(&vocab, vec!["read(v1)".to_string(); 20], 8);
        let mut tape = Tape::new();
        let t = run_loop(&mut agent, &mut OracleBackend::new(16, vec![]), &vocab, "p", &inputs(), &mut tape, LoopConfig::default()).unwrap();
        assert_eq!(t.steps.len(), 8);
        assert!(!t.complete && t.answer.is_none());
    }
}
