//! Command-line contracts, driven in-process.

use std::path::Path;
use voxagent::taskgen::{build_task, read_shard, Grammar, TaskConfig, TaskKind};
use voxagent::voxelcore::{load_volume, save_volume, VolumeFormat};

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn cli_in(args: &[&str], input: &str) -> Out {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut stdin = input.as_bytes();
    let code = voxagent::cli::main_with_input(std::iter::once("voxagent").chain(args.iter().copied()), &mut stdin, &mut out, &mut err);
    Out { code, stdout: String::from_utf8(out).unwrap(), stderr: String::from_utf8(err).unwrap() }
}

fn cli(args: &[&str]) -> Out {
    cli_in(args, "")
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

/// A 16³ phantom volume written as VXV1.
fn volume(dir: &Path) -> String {
    let t = build_task(TaskKind::Segment, &Grammar::shipped(), &TaskConfig { shape: [16; 3], ..Default::default() }, 2).unwrap();
    let p = dir.join("a.vxv");
    std::fs::write(&p, save_volume(&t.volumes[0].grid, VolumeFormat::Vxv1).unwrap()).unwrap();
    s(&p)
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = cli(&["gen-data", "--bogus", "1"]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("Usage"), "{}", o.stderr);
    assert_eq!(cli(&["frobnicate"]).code, 1);
    assert_eq!(cli(&[]).code, 1);
}

#[test]
fn help_succeeds() {
    let o = cli(&["--help"]);
    assert_eq!(o.code, 0);
    for sub in ["gen-data", "train", "eval", "run", "repl", "trace", "grad-check"] {
        assert!(o.stdout.contains(sub), "{sub} missing from help");
    }
    let o = cli(&["train", "--help"]);
    assert_eq!(o.code, 0);
    assert!(o.stdout.contains("--log-every"));
}

#[test]
fn config_file_keys_are_checked_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("gen.conf");
    let shard = tmp.path().join("shard");
    std::fs::write(&cfg, format!("# data\nout = {}\ncount = 3\nshape = 12\nmix = segment:1\n", s(&shard))).unwrap();
    let o = cli(&["gen-data", "--config", &s(&cfg), "--count", "2"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let tasks = read_shard(&shard).unwrap();
    assert_eq!(tasks.len(), 2);
    assert!(tasks.iter().all(|t| t.kind == TaskKind::Segment && t.volumes[0].grid.shape() == [12; 3]));

    std::fs::write(&cfg, "count = 3\ncolour = blue\n").unwrap();
    let o = cli(&["gen-data", "--config", &s(&cfg), "--out", &s(&shard)]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("colour"), "{}", o.stderr);

    assert_eq!(cli(&["gen-data", "--count", "1"]).code, 1, "missing --out");
    assert_eq!(cli(&["gen-data", "--out", &s(&shard), "--mix", "segment:-1"]).code, 1);
}

#[test]
fn seeded_gen_data_repeats() {
    let tmp = tempfile::tempdir().unwrap();
    let read = |d: &Path| {
        let mut v: Vec<_> = std::fs::read_dir(d).unwrap().map(|e| e.unwrap().path()).collect();
        v.sort();
        v.into_iter().map(|p| std::fs::read(p).unwrap()).collect::<Vec<_>>()
    };
    for run in ["a", "b"] {
        let o = cli(&["gen-data", "--out", &s(&tmp.path().join(run)), "--count", "3", "--seed", "9", "--shape", "12"]);
        assert_eq!(o.code, 0, "{}", o.stderr);
    }
    assert_eq!(read(&tmp.path().join("a")), read(&tmp.path().join("b")));
}

#[test]
fn oracle_eval_and_empty_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let shard = tmp.path().join("shard");
    assert_eq!(cli(&["gen-data", "--out", &s(&shard), "--count", "3", "--shape", "12", "--mix", "segment:1,roi_metric:1"]).code, 0);
    let out = tmp.path().join("eval");
    let o = cli(&["eval", "--oracle", "--data", &s(&shard), "--out", &s(&out)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(o.stdout.contains("overall.validity 1.000000"), "{}", o.stdout);
    assert!(o.stdout.contains("overall.exact_match 1.000000"));
    assert_eq!(std::fs::read_to_string(out.join("report.txt")).unwrap(), o.stdout);
    assert!(out.join("task0/transcript.txt").exists());

    let empty = tmp.path().join("empty");
    assert_eq!(cli(&["gen-data", "--out", &s(&empty), "--count", "0"]).code, 0);
    let o = cli(&["eval", "--oracle", "--data", &s(&empty)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert_eq!(o.stdout, "");

    assert_eq!(cli(&["eval", "--data", &s(&shard)]).code, 1, "needs a checkpoint or --oracle");
}

#[test]
fn run_prints_transcript_and_writes_mask() {
    let tmp = tempfile::tempdir().unwrap();
    let vol = volume(tmp.path());
    let program = tmp.path().join("prog.txt");
    std::fs::write(&program, "e = encode(v1, <MOD>)\nread(e)\n---\nm = segment(e, <MOD>)\nstop()\n").unwrap();
    let out = tmp.path().join("out");
    let o = cli(&["run", "--prompt", "segment the lesion", "--vol", &vol, "--program", &s(&program), "--out", &s(&out)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(o.stdout.starts_with("prompt: segment the lesion\n"), "{}", o.stdout);
    assert!(o.stdout.contains("mask m: m.vxv"));
    let mask = load_volume(&std::fs::read(out.join("m.vxv")).unwrap(), None).unwrap();
    assert_eq!(mask.shape(), [16; 3]);
    assert_eq!(std::fs::read_to_string(out.join("transcript.txt")).unwrap(), o.stdout);

    let t = cli(&["trace", &s(&out)]);
    assert_eq!(t.code, 0, "{}", t.stderr);
    assert!(t.stdout.contains("Prompt: segment the lesion"));
    assert!(t.stdout.contains("  | m = segment(e, <MOD>)"));
    assert!(t.stdout.contains("Mask m:"));

    // untrained networks decode something; the loop still reports
    let o = cli(&["run", "--prompt", "segment the lesion", "--vol", &vol, "--out", &s(&tmp.path().join("neural")), "--max-steps", "1"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(!o.stdout.is_empty());
}

#[test]
fn run_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.vxv");
    assert_eq!(cli(&["run", "--prompt", "x", "--vol", &s(&missing)]).code, 2);
    assert_eq!(cli(&["run", "--prompt", "x"]).code, 1, "--vol is required");
    let vol = volume(tmp.path());
    let bad = tmp.path().join("bad.txt");
    std::fs::write(&bad, "m = = segment(\n").unwrap();
    assert_eq!(cli(&["run", "--prompt", "x", "--vol", &vol, "--program", &s(&bad)]).code, 1);
    assert_eq!(cli(&["run", "--prompt", "x", "--vol", &vol, "--checkpoint", &s(&missing)]).code, 2);
    assert_eq!(cli(&["trace", &s(&missing)]).code, 2);
}

#[test]
fn repl_runs_each_line_like_run() {
    let tmp = tempfile::tempdir().unwrap();
    let vol = volume(tmp.path());
    let program = tmp.path().join("prog.txt");
    std::fs::write(&program, "e = encode(v1, <MOD>)\n---\nm = segment(e, <MOD>)\nstop()\n").unwrap();
    let out = tmp.path().join("repl");
    let args = ["repl", "--vol", &vol, "--program", &s(&program), "--out", &s(&out)];
    let o = cli_in(&args, "segment the thalamus\n\nsegment the cerebellum\n:quit\nnever reached\n");
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(out.join("turn1/m.vxv").exists() && out.join("turn2/m.vxv").exists());
    assert!(!out.join("turn3").exists());
    let single = tmp.path().join("single");
    let r = cli(&["run", "--prompt", "segment the thalamus", "--vol", &vol, "--program", &s(&program), "--out", &s(&single)]);
    assert_eq!(std::fs::read(single.join("transcript.txt")).unwrap(), std::fs::read(out.join("turn1/transcript.txt")).unwrap());
    assert!(o.stdout.contains(&r.stdout));
}

#[test]
fn grad_check_prints_table() {
    let o = cli(&["grad-check"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(o.stdout.contains("max_rel_err"));
    assert!(o.stdout.lines().count() > 10);
}
