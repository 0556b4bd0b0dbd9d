//! Write a small dataset shard and read it back.
//!
//! `cargo run --example gen_shard -- [dir]`

use voxagent::taskgen::{build_task, read_shard, write_shard, Grammar, TaskConfig, TaskKind};

fn main() {
    let dir = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("voxagent_shard"));
    let g = Grammar::shipped();
    let cfg = TaskConfig::default();
    let tasks: Vec<_> = TaskKind::ALL.iter().enumerate().map(|(i, &k)| build_task(k, &g, &cfg, i as u64).expect("task builds")).collect();
    write_shard(&dir, &tasks).expect("shard writes");
    let back = read_shard(&dir).expect("shard reads");
    for t in &back {
        println!("{:<20} {:>2} volume(s) {:>2} mask(s)  {}", t.kind.key(), t.volumes.len(), t.masks.len(), t.prompt);
    }
    println!("{} instances in {}", back.len(), dir.display());
}
