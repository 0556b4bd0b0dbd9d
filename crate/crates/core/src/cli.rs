//! Command-line entry points. Every subcommand takes `--config FILE`
//! (`key = value` lines); flags given on the command line override the
//! file, and keys a subcommand does not know are rejected.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use crate::agent::VolumeMeta;
use crate::runtime::{parse, run_loop, Agent, InputVolume, LoopConfig, NetworkBackend, NeuralAgent, ScriptedAgent, Transcript};
use crate::taskgen::{build_task, read_shard, write_shard, AugmentConfig, Grammar, TaskConfig, TaskInstance};
use crate::tensor::{gradcheck_suite, Checkpoint, Tape};
use crate::training::{
    build_vocab, evaluate, parse_mix, train, DataSource, KvConfig, ModelConfig, Models, Policy, TrainConfig, MODEL_KEYS, TRAIN_KEYS,
};
use crate::voxelcore::load_volume;
use clap::{Args, Parser, Subcommand};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(name = "voxagent", about = "Language agent for instructable volumetric vision networks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Write a dataset shard of synthetic task instances.
    GenData(GenArgs),
    /// Train the agent and vision networks; writes OUT/last.vxck.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or the oracle) on a shard.
    Eval(EvalArgs),
    /// Answer one prompt about the given volumes.
    Run(RunArgs),
    /// Read prompts from standard input, one per line, and answer each.
    Repl(ReplArgs),
    /// Pretty-print a saved transcript.
    Trace(TraceArgs),
    /// Finite-difference check of every differentiable op.
    GradCheck(GradArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Config file (keys: out, count, seed, mix, shape, noise, augment).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Task mix, e.g. `segment:1,roi_metric:1`.
    #[arg(long)]
    mix: Option<String>,
    /// Grid size per axis.
    #[arg(long)]
    shape: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    augment: Option<bool>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Config file (training, model, and data keys).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fixed training shard; without it instances are generated.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    /// `desk` or `full`.
    #[arg(long)]
    model: Option<String>,
    /// Print progress every this many updates (0 = never).
    #[arg(long)]
    log_every: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Config file (keys: checkpoint, data, out, max_steps).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Save transcripts and masks here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replay the ground-truth programs instead of a checkpoint.
    #[arg(long)]
    oracle: bool,
    #[arg(long)]
    max_steps: Option<usize>,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Config file (keys: checkpoint, out, seed, max_steps, modality, date).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Without a checkpoint, freshly initialized desk networks are used.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Input volume (VXV1 or NIfTI-1); repeat for several, bound as v1, v2, ...
    #[arg(long = "vol", required = true)]
    vols: Vec<PathBuf>,
    /// Modality per volume, in order.
    #[arg(long)]
    modality: Vec<String>,
    /// Acquisition date per volume, in order.
    #[arg(long)]
    date: Vec<String>,
    /// Where the transcript and masks are written.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Replay this program (steps separated by `---` lines) instead of
    /// decoding with the agent; the vision networks still run.
    #[arg(long)]
    program: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    prompt: String,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct ReplArgs {
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct TraceArgs {
    /// transcript.txt or the directory holding it.
    path: PathBuf,
}

#[derive(Args, Debug)]
struct GradArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

type Outcome = Result<(), Failure>;

fn rt<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Parse `argv` (program name first) and run; returns the exit code.
/// `repl` reads standard input.
pub fn main<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    main_with_input(argv, &mut std::io::stdin().lock(), out, err)
}

/// [`main`] with `repl` reading from `input`.
pub fn main_with_input<I, T>(argv: I, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    let result = match cli.cmd {
        Cmd::GenData(a) => gen_data(a, out),
        Cmd::Train(a) => train_cmd(a, out),
        Cmd::Eval(a) => eval_cmd(a, out),
        Cmd::Run(a) => run_cmd(a, out),
        Cmd::Repl(a) => repl_cmd(a, input, out),
        Cmd::Trace(a) => trace_cmd(a, out),
        Cmd::GradCheck(a) => grad_check(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}\n\nFor more information, try '--help'.");
            1
        }
        Err(Failure::Runtime(m)) => {
            let _ = writeln!(err, "error: {m}");
            2
        }
    }
}

/// The config file (if any) restricted to `allowed` keys.
fn load_config(path: Option<&Path>, allowed: &[&str]) -> Result<KvConfig, Failure> {
    let Some(path) = path else {
        return Ok(KvConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let kv = KvConfig::parse(&text).map_err(|e| Failure::Usage(e.to_string()))?;
    kv.reject_unknown(allowed).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    Ok(kv)
}

fn set_opt<T: ToString>(kv: &mut KvConfig, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        kv.set(key, v.to_string());
    }
}

fn typed<T: std::str::FromStr>(kv: &KvConfig, key: &str) -> Result<Option<T>, Failure> {
    kv.typed(key).map_err(|e| Failure::Usage(e.to_string()))
}

fn required(kv: &KvConfig, key: &str) -> Result<PathBuf, Failure> {
    kv.get(key).map(PathBuf::from).ok_or_else(|| Failure::Usage(format!("--{key} is required")))
}

fn task_config(kv: &KvConfig) -> Result<TaskConfig, Failure> {
    let mut tc = TaskConfig::default();
    if let Some(n) = typed::<usize>(kv, "shape")? {
        if n < 8 {
            return Err(Failure::Usage("shape must be at least 8".into()));
        }
        tc.shape = [n; 3];
    }
    if let Some(v) = typed::<f64>(kv, "noise")? {
        tc.noise = v;
    }
    if typed::<bool>(kv, "augment")?.unwrap_or(false) {
        tc.augment = Some(AugmentConfig::default());
    }
    Ok(tc)
}

const GEN_KEYS: &[&str] = &["out", "count", "seed", "mix", "shape", "noise", "augment"];

/// Instances for seeds drawn from one seeded stream, kinds by mix weight.
pub fn generate_tasks(grammar: &Grammar, tc: &TaskConfig, mix: &[(crate::taskgen::TaskKind, f64)], count: usize, seed: u64) -> Result<Vec<TaskInstance>, String> {
    let w = WeightedIndex::new(mix.iter().map(|(_, w)| *w)).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let kind = mix[w.sample(&mut rng)].0;
            let s: u64 = rng.random();
            build_task(kind, grammar, tc, s).map_err(|e| e.to_string())
        })
        .collect()
}

fn gen_data(a: GenArgs, out: &mut dyn Write) -> Outcome {
    let mut kv = load_config(a.config.as_deref(), GEN_KEYS)?;
    set_opt(&mut kv, "out", &a.out.as_ref().map(|p| p.display().to_string()));
    set_opt(&mut kv, "count", &a.count);
    set_opt(&mut kv, "seed", &a.seed);
    set_opt(&mut kv, "mix", &a.mix);
    set_opt(&mut kv, "shape", &a.shape);
    set_opt(&mut kv, "noise", &a.noise);
    set_opt(&mut kv, "augment", &a.augment);
    let dir = required(&kv, "out")?;
    let count = typed::<usize>(&kv, "count")?.unwrap_or(16);
    let seed = typed::<u64>(&kv, "seed")?.unwrap_or(0);
    let mix = match kv.get("mix") {
        Some(m) => parse_mix(m).map_err(|e| Failure::Usage(e.to_string()))?,
        None => TrainConfig::default().mix,
    };
    let tc = task_config(&kv)?;
    let tasks = generate_tasks(&Grammar::shipped(), &tc, &mix, count, seed).map_err(Failure::Runtime)?;
    write_shard(&dir, &tasks).map_err(rt)?;
    writeln!(out, "wrote {count} instances to {}", dir.display()).map_err(rt)
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> Outcome {
    let extra = ["out", "data", "model", "log_every", "shape", "noise", "augment"];
    let allowed: Vec<&str> = TRAIN_KEYS.iter().chain(MODEL_KEYS).chain(extra.iter()).copied().collect();
    let mut kv = load_config(a.config.as_deref(), &allowed)?;
    set_opt(&mut kv, "out", &a.out.as_ref().map(|p| p.display().to_string()));
    set_opt(&mut kv, "data", &a.data.as_ref().map(|p| p.display().to_string()));
    set_opt(&mut kv, "max_steps", &a.steps);
    set_opt(&mut kv, "seed", &a.seed);
    set_opt(&mut kv, "lr", &a.lr);
    set_opt(&mut kv, "model", &a.model);
    set_opt(&mut kv, "log_every", &a.log_every);
    let dir = required(&kv, "out")?;
    let usage = |e: crate::training::TrainError| Failure::Usage(e.to_string());
    let cfg = TrainConfig::read(&kv, TrainConfig::default()).map_err(usage)?;
    let base = match kv.get("model").unwrap_or("desk") {
        "desk" => ModelConfig::desk(),
        "full" => ModelConfig::full(),
        other => return Err(Failure::Usage(format!("unknown model {other}; expected desk or full"))),
    };
    let mc = ModelConfig::read(&kv, base).map_err(usage)?;
    let log_every = typed::<usize>(&kv, "log_every")?.unwrap_or(10);
    let grammar = Grammar::shipped();
    let tc = task_config(&kv)?;
    let fixed = match kv.get("data") {
        Some(d) => Some(read_shard(Path::new(d)).map_err(rt)?),
        None => None,
    };
    let vocab_sample = match &fixed {
        Some(t) => t.clone(),
        None => generate_tasks(&grammar, &tc, &cfg.mix, 32, cfg.seed).map_err(Failure::Runtime)?,
    };
    let vocab = build_vocab(&grammar, &vocab_sample, mc.vocab_size);
    let mut models = Models::new(mc, vocab, cfg.seed).map_err(rt)?;
    let source = match &fixed {
        Some(t) => DataSource::Fixed(t),
        None => DataSource::Generator { grammar: &grammar, tasks: &tc },
    };
    let mut updates = 0usize;
    let mut log_err = None;
    let run = train(&mut models, source, &cfg, Some(&dir), &mut |p| {
        updates += 1;
        if log_every > 0 && updates.is_multiple_of(log_every) {
            if let Err(e) = writeln!(out, "step {} loss {:.6} ce {:.6} lr {:e}", p.step, p.loss, p.ce, p.lr) {
                log_err = Some(e);
            }
        }
    })
    .map_err(rt)?;
    if let Some(e) = log_err {
        return Err(rt(e));
    }
    writeln!(out, "trained {} steps ({:?}); checkpoint {}", run.steps, run.stop, dir.join("last.vxck").display()).map_err(rt)
}

fn load_models(path: &Path) -> Result<Models, Failure> {
    let ck = Checkpoint::load(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    Ok(Models::from_checkpoint(&ck).map_err(rt)?.0)
}

fn eval_cmd(a: EvalArgs, out: &mut dyn Write) -> Outcome {
    let mut kv = load_config(a.config.as_deref(), &["checkpoint", "data", "out", "max_steps"])?;
    set_opt(&mut kv, "checkpoint", &a.checkpoint.as_ref().map(|p| p.display().to_string()));
    set_opt(&mut kv, "data", &a.data.as_ref().map(|p| p.display().to_string()));
    set_opt(&mut kv, "out", &a.out.as_ref().map(|p| p.display().to_string()));
    set_opt(&mut kv, "max_steps", &a.max_steps);
    let data = required(&kv, "data")?;
    let tasks = read_shard(&data).map_err(rt)?;
    let lc = LoopConfig { max_steps: typed(&kv, "max_steps")?.unwrap_or(8), ..LoopConfig::default() };
    let save = kv.get("out").map(PathBuf::from);
    let report = if a.oracle {
        evaluate(Policy::Oracle, &tasks, save.as_deref(), lc).map_err(rt)?
    } else {
        let models = load_models(&required(&kv, "checkpoint")?)?;
        evaluate(Policy::Model(&models), &tasks, save.as_deref(), lc).map_err(rt)?
    };
    let text = report.to_text();
    if let Some(dir) = &save {
        std::fs::create_dir_all(dir).map_err(rt)?;
        std::fs::write(dir.join("report.txt"), &text).map_err(rt)?;
    }
    write!(out, "{text}").map_err(rt)
}

/// A loaded model plus the volumes of one session; `run` is one prompt,
/// `repl` many.
struct Session {
    models: Models,
    volumes: Vec<InputVolume>,
    program: Option<Vec<String>>,
    loop_cfg: LoopConfig,
    out: PathBuf,
}

const RUN_KEYS: &[&str] = &["checkpoint", "out", "seed", "max_steps"];

impl Session {
    fn open(a: &ModelArgs) -> Result<Session, Failure> {
        let mut kv = load_config(a.config.as_deref(), RUN_KEYS)?;
        set_opt(&mut kv, "checkpoint", &a.checkpoint.as_ref().map(|p| p.display().to_string()));
        set_opt(&mut kv, "out", &a.out.as_ref().map(|p| p.display().to_string()));
        set_opt(&mut kv, "seed", &a.seed);
        set_opt(&mut kv, "max_steps", &a.max_steps);
        let models = match kv.get("checkpoint") {
            Some(p) => load_models(Path::new(p))?,
            None => {
                let vocab = build_vocab(&Grammar::shipped(), &[], ModelConfig::desk().vocab_size);
                Models::new(ModelConfig::desk(), vocab, typed(&kv, "seed")?.unwrap_or(0)).map_err(rt)?
            }
        };
        if a.modality.len() > a.vols.len() || a.date.len() > a.vols.len() {
            return Err(Failure::Usage("more --modality/--date values than volumes".into()));
        }
        let mut volumes = Vec::new();
        for (i, path) in a.vols.iter().enumerate() {
            let bytes = std::fs::read(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
            let grid = load_volume(&bytes, None).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
            let modality = a.modality.get(i).map_or("unknown", String::as_str);
            let date = a.date.get(i).map_or("unknown", String::as_str);
            volumes.push(InputVolume { meta: VolumeMeta::new(&format!("v{}", i + 1), modality, date), grid });
        }
        let program = match &a.program {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?;
                let steps = split_program(&text);
                for (i, s) in steps.iter().enumerate() {
                    parse(s).map_err(|e| Failure::Usage(format!("{} step {}: {e}", p.display(), i + 1)))?;
                }
                Some(steps)
            }
            None => None,
        };
        Ok(Session {
            models,
            volumes,
            program,
            loop_cfg: LoopConfig { max_steps: typed(&kv, "max_steps")?.unwrap_or(8), ..LoopConfig::default() },
            out: kv.get("out").map_or_else(|| PathBuf::from("."), PathBuf::from),
        })
    }

    /// Answer one prompt; the transcript and masks go to `dir`.
    fn run(&self, prompt: &str, dir: &Path) -> Result<Transcript, Failure> {
        let m = &self.models;
        let mut tape = Tape::new();
        let p = m.params.bind_frozen(&mut tape);
        let mut backend = NetworkBackend { net: &m.vision, params: &p };
        let mut neural;
        let mut scripted;
        let agent: &mut dyn Agent = match &self.program {
            Some(steps) => {
                scripted = ScriptedAgent::new(&m.vocab, steps.clone(), m.config.agent.phi_dim);
                &mut scripted
            }
            None => {
                neural = NeuralAgent { net: &m.agent, params: &p, vocab: &m.vocab };
                &mut neural
            }
        };
        let t = run_loop(agent, &mut backend, &m.vocab, prompt, &self.volumes, &mut tape, self.loop_cfg).map_err(rt)?;
        t.save(dir).map_err(rt)?;
        Ok(t)
    }
}

/// Steps are separated by lines consisting of `---`.
fn split_program(text: &str) -> Vec<String> {
    let mut steps = vec![String::new()];
    for line in text.lines() {
        if line.trim() == "---" {
            steps.push(String::new());
            continue;
        }
        let s = steps.last_mut().unwrap();
        if !s.is_empty() {
            s.push('\n');
        }
        s.push_str(line);
    }
    steps.retain(|s| !s.trim().is_empty());
    steps
}

fn run_cmd(a: RunArgs, out: &mut dyn Write) -> Outcome {
    let s = Session::open(&a.model)?;
    let t = s.run(&a.prompt, &s.out)?;
    write!(out, "{}", t.to_text()).map_err(rt)
}

fn repl_cmd(a: ReplArgs, input: &mut dyn BufRead, out: &mut dyn Write) -> Outcome {
    let s = Session::open(&a.model)?;
    let mut turn = 0;
    let mut line = String::new();
    loop {
        write!(out, "> ").and_then(|_| out.flush()).map_err(rt)?;
        line.clear();
        if input.read_line(&mut line).map_err(rt)? == 0 {
            writeln!(out).map_err(rt)?;
            return Ok(());
        }
        let prompt = line.trim();
        if prompt.is_empty() {
            continue;
        }
        if prompt == ":quit" || prompt == ":q" {
            return Ok(());
        }
        turn += 1;
        let dir = s.out.join(format!("turn{turn}"));
        let t = s.run(prompt, &dir)?;
        write!(out, "{}", t.to_text()).map_err(rt)?;
        writeln!(out, "saved to {}", dir.display()).map_err(rt)?;
    }
}

/// Human-readable rendering of a transcript.
pub fn pretty_transcript(t: &Transcript) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    writeln!(s, "Prompt: {}", t.prompt).unwrap();
    for (i, st) in t.steps.iter().enumerate() {
        let status = match &st.error {
            None => "ok".to_string(),
            Some(e) => format!("error: {e}"),
        };
        writeln!(s, "\n[{}] {} modulation vector(s), {status}", i + 1, st.phi_count).unwrap();
        for l in st.code.lines() {
            writeln!(s, "  | {l}").unwrap();
        }
        for l in st.feedback.lines() {
            writeln!(s, "  > {l}").unwrap();
        }
    }
    let answer = match &t.answer {
        Some(a) if a.is_empty() => "(no text answer)".to_string(),
        Some(a) => a.clone(),
        None => "(none)".to_string(),
    };
    writeln!(s, "\nAnswer: {answer}").unwrap();
    if !t.complete {
        writeln!(s, "Loop ended without an answer.").unwrap();
    }
    for (name, m) in &t.masks {
        writeln!(s, "Mask {name}: {} voxels", m.count()).unwrap();
    }
    s
}

fn trace_cmd(a: TraceArgs, out: &mut dyn Write) -> Outcome {
    let (file, dir) = if a.path.is_dir() { (a.path.join("transcript.txt"), Some(a.path.clone())) } else { (a.path.clone(), a.path.parent().map(Path::to_path_buf)) };
    let text = std::fs::read_to_string(&file).map_err(|e| Failure::Runtime(format!("{}: {e}", file.display())))?;
    let t = Transcript::parse(&text, dir.as_deref()).map_err(Failure::Runtime)?;
    write!(out, "{}", pretty_transcript(&t)).map_err(rt)
}

fn grad_check(a: GradArgs, out: &mut dyn Write) -> Outcome {
    let report = gradcheck_suite(a.seed, a.eps).map_err(rt)?;
    writeln!(out, "{report} (tolerance {:.0e}, {:.2?})", a.tol, report.elapsed()).map_err(rt)?;
    if report.passed(a.tol) {
        Ok(())
    } else {
        Err(Failure::Runtime("gradient check failed".into()))
    }
}
