//! Build one task of each kind and replay its ground-truth program through
//! the agent loop with the oracle vision backend.

use voxagent::agent::Vocabulary;
use voxagent::runtime::{run_loop, LoopConfig, OracleBackend, ScriptedAgent};
use voxagent::taskgen::{build_task, Grammar, TaskConfig, TaskKind};
use voxagent::tensor::Tape;

fn main() {
    let g = Grammar::shipped();
    let cfg = TaskConfig::default();
    let vocab = Vocabulary::build::<&str>(&[], 0);
    for kind in TaskKind::ALL {
        let task = build_task(kind, &g, &cfg, 3).expect("task builds");
        let mut agent = ScriptedAgent::new(&vocab, task.program.clone(), 1);
        let mut backend = OracleBackend::new(1, task.masks.clone());
        let t = run_loop(&mut agent, &mut backend, &vocab, &task.prompt, &task.volumes, &mut Tape::new(), LoopConfig::default()).expect("loop runs");
        println!("== {} ==\n{}", kind.key(), t.to_text());
        assert_eq!(t.answer.as_deref(), Some(task.answer.as_str()));
    }
}
