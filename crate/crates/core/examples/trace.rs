//! Save a transcript with its masks, parse it back, and pretty-print it.

use voxagent::agent::Vocabulary;
use voxagent::cli::pretty_transcript;
use voxagent::runtime::{run_loop, LoopConfig, OracleBackend, ScriptedAgent, Transcript};
use voxagent::taskgen::{build_task, Grammar, TaskConfig, TaskKind};
use voxagent::tensor::Tape;

fn main() {
    let task = build_task(TaskKind::Longitudinal, &Grammar::shipped(), &TaskConfig::default(), 8).expect("task builds");
    let vocab = Vocabulary::build::<&str>(&[], 0);
    let mut agent = ScriptedAgent::new(&vocab, task.program.clone(), 1);
    let mut backend = OracleBackend::new(1, task.masks.clone());
    let t = run_loop(&mut agent, &mut backend, &vocab, &task.prompt, &task.volumes, &mut Tape::new(), LoopConfig::default()).expect("loop runs");
    let dir = tempfile_dir();
    t.save(&dir).expect("transcript saves");
    let text = std::fs::read_to_string(dir.join("transcript.txt")).expect("transcript exists");
    let back = Transcript::parse(&text, Some(&dir)).expect("transcript parses");
    assert_eq!(back, t);
    print!("{}", pretty_transcript(&back));
    println!("saved under {}", dir.display());
}

fn tempfile_dir() -> std::path::PathBuf {
    std::env::temp_dir().join(format!("voxagent_trace_{}", std::process::id()))
}
