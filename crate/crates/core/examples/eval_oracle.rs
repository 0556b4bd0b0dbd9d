//! Evaluate the oracle policy over every task kind. The report is the same
//! text `voxagent eval` prints; every metric should be 1 here.

use voxagent::runtime::LoopConfig;
use voxagent::taskgen::{build_task, Grammar, TaskConfig, TaskKind};
use voxagent::training::{evaluate, Policy};

fn main() {
    let g = Grammar::shipped();
    let cfg = TaskConfig::default();
    let tasks: Vec<_> = TaskKind::ALL.iter().flat_map(|&k| (0..2).map(move |s| (k, s))).map(|(k, s)| build_task(k, &g, &cfg, s).expect("task builds")).collect();
    let report = evaluate(Policy::Oracle, &tasks, None, LoopConfig::default()).expect("evaluation runs");
    for line in report.to_text().lines().filter(|l| !l.starts_with("task.")) {
        println!("{line}");
    }
}
