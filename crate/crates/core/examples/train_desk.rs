//! End-to-end learning at desk scale: train on a small fixed set of
//! segmentation and ROI-measurement tasks, then evaluate on the training
//! set and on held-out phantoms.
//!
//! `cargo run --release --example train_desk -- [steps] [lambda] [patience]`

use std::time::Instant;
use voxagent::runtime::LoopConfig;
use voxagent::taskgen::{build_task, Grammar, RoiMetric, Structure, Target, TaskConfig, TaskKind};
use voxagent::training::{build_vocab, evaluate, train, DataSource, ModelConfig, Models, Policy, TrainConfig};

fn main() {
    let arg = |i: usize| std::env::args().nth(i).and_then(|s| s.parse::<f64>().ok());
    let steps = arg(1).map_or(6000, |v| v as usize);
    let lambda = arg(2).unwrap_or(1.0);
    let patience = arg(3).map_or(2000, |v| v as usize);
    let g = Grammar::shipped();
    let tc = TaskConfig {
        targets: [Structure::Ventricles, Structure::Thalamus, Structure::Cerebellum].map(Target::Structure).to_vec(),
        roi_metrics: vec![RoiMetric::Mean],
        ..TaskConfig::default()
    };
    let kinds = [TaskKind::Segment, TaskKind::RoiMetric];
    let make = |offset: u64, n: u64| -> Vec<_> { (0..n).map(|i| build_task(kinds[(i % 2) as usize], &g, &tc, offset + i).expect("task builds")).collect() };
    let t0 = Instant::now();
    let train_set = make(0, 64);
    let held_out = make(10_000, 16);
    let vocab = build_vocab(&g, &train_set, 512);
    println!("data {:.1?}, vocab {}", t0.elapsed(), vocab.len());
    let mut models = Models::new(ModelConfig::desk(), vocab, 1).expect("desk config is valid");
    let cfg = TrainConfig { lr: 2e-3, max_steps: steps, patience, lambda, mix: kinds.iter().map(|&k| (k, 1.0)).collect(), ..Default::default() };
    let t1 = Instant::now();
    let run = train(&mut models, DataSource::Fixed(&train_set), &cfg, None, &mut |p| {
        if p.step % 100 == 0 {
            println!("step {:5} loss {:.4} ce {:.4} lr {:.1e} |g| {:.3} {:.0?}", p.step, p.loss, p.ce, p.lr, p.grad_norm, t1.elapsed());
        }
    })
    .expect("training runs");
    println!("trained {} steps in {:.1?} ({:?})", run.steps, t1.elapsed(), run.stop);
    let lc = LoopConfig::default();
    let tr = evaluate(Policy::Model(&models), &train_set, None, lc).expect("evaluation runs");
    let ho = evaluate(Policy::Model(&models), &held_out, None, lc).expect("evaluation runs");
    let (a, b) = (tr.overall(), ho.overall());
    println!("train    tokens {:.4} dice {:.3} exact {:.3} valid {:.3}", a.token_accuracy, a.dice.unwrap_or(0.0), a.exact_match, a.validity);
    println!("held-out tokens {:.4} dice {:.3} exact {:.3} valid {:.3}", b.token_accuracy, b.dice.unwrap_or(0.0), b.exact_match, b.validity);
    println!("total {:.1?}", t0.elapsed());
}
