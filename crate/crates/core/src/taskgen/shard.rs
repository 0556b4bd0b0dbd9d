//! Dataset shards: a directory of VXV1 files plus `manifest.txt`.
//!
//! ```text
//! instance 0
//!   kind: segment
//!   seed: 17
//!   prompt: Please segment the lesion.
//!   volume v1 t1 2019-04-02: i0_v1.vxv
//!   mask: i0_m0.vxv
//!   label: hyperintense
//!   answer: The lesion is hyperintense.
//!   step:
//!     e = encode(v1, <MOD>)
//!     read(e)
//! ```
//! Single-line fields escape backslashes and newlines.

use super::tasks::{TaskInstance, TaskKind};
use super::TaskError;
use crate::agent::VolumeMeta;
use crate::runtime::InputVolume;
use crate::voxelcore::io::{read_vxv1, write_vxv1};
use crate::voxelcore::BinaryMask;
use std::fmt::Write as _;
use std::path::Path;

fn esc(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n")
}

fn unesc(s: &str) -> String {
    let mut out = String::new();
    let mut it = s.chars();
    while let Some(c) = it.next() {
        match (c, c == '\\') {
            (_, true) => match it.next() {
                Some('n') => out.push('\n'),
                Some(o) => out.push(o),
                None => out.push('\\'),
            },
            (c, false) => out.push(c),
        }
    }
    out
}

pub fn write_shard(dir: &Path, tasks: &[TaskInstance]) -> Result<(), TaskError> {
    std::fs::create_dir_all(dir)?;
    let mut man = String::new();
    for (i, t) in tasks.iter().enumerate() {
        writeln!(man, "instance {i}").unwrap();
        writeln!(man, "  kind: {}", t.kind.key()).unwrap();
        writeln!(man, "  seed: {}", t.seed).unwrap();
        writeln!(man, "  prompt: {}", esc(&t.prompt)).unwrap();
        for v in &t.volumes {
            let file = format!("i{i}_{}.vxv", v.meta.name);
            std::fs::write(dir.join(&file), write_vxv1(&v.grid))?;
            writeln!(man, "  volume {} {} {}: {file}", v.meta.name, v.meta.modality, v.meta.date).unwrap();
        }
        for (k, m) in t.masks.iter().enumerate() {
            let file = format!("i{i}_m{k}.vxv");
            std::fs::write(dir.join(&file), write_vxv1(&m.to_grid()))?;
            writeln!(man, "  mask: {file}").unwrap();
        }
        if let Some(l) = &t.label {
            writeln!(man, "  label: {}", esc(l)).unwrap();
        }
        writeln!(man, "  answer: {}", esc(&t.answer)).unwrap();
        for step in &t.program {
            writeln!(man, "  step:").unwrap();
            for l in step.lines() {
                writeln!(man, "    {l}").unwrap();
            }
        }
    }
    std::fs::write(dir.join("manifest.txt"), man)?;
    Ok(())
}

pub fn read_shard(dir: &Path) -> Result<Vec<TaskInstance>, TaskError> {
    let text = std::fs::read_to_string(dir.join("manifest.txt"))?;
    let mut out: Vec<TaskInstance> = Vec::new();
    let load = |file: &str| -> Result<_, TaskError> {
        let bytes = std::fs::read(dir.join(file))?;
        read_vxv1(&bytes).map_err(|e| TaskError::Manifest(format!("{file}: {e}")))
    };
    for (n, line) in text.lines().enumerate() {
        let bad = |what: &str| TaskError::Manifest(format!("manifest line {}: {what}", n + 1));
        if line.starts_with("instance ") {
            out.push(TaskInstance {
                kind: TaskKind::Segment,
                seed: 0,
                prompt: String::new(),
                volumes: Vec::new(),
                program: Vec::new(),
                masks: Vec::new(),
                answer: String::new(),
                label: None,
            });
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let t = out.last_mut().ok_or_else(|| bad("field before any instance"))?;
        if let Some(code) = line.strip_prefix("    ") {
            let step = t.program.last_mut().ok_or_else(|| bad("code outside a step"))?;
            if !step.is_empty() {
                step.push('\n');
            }
            step.push_str(code);
        } else if line == "  step:" {
            t.program.push(String::new());
        } else if let Some(k) = line.strip_prefix("  kind: ") {
            t.kind = TaskKind::from_key(k).ok_or_else(|| bad("unknown kind"))?;
        } else if let Some(s) = line.strip_prefix("  seed: ") {
            t.seed = s.parse().map_err(|_| bad("bad seed"))?;
        } else if let Some(p) = line.strip_prefix("  prompt: ") {
            t.prompt = unesc(p);
        } else if let Some(rest) = line.strip_prefix("  volume ") {
            let (head, file) = rest.split_once(": ").ok_or_else(|| bad("volume needs a file"))?;
            let parts: Vec<&str> = head.split(' ').collect();
            let [name, modality, date] = parts[..] else { return Err(bad("volume needs name, modality and date")) };
            t.volumes.push(InputVolume { meta: VolumeMeta::new(name, modality, date), grid: load(file)? });
        } else if let Some(file) = line.strip_prefix("  mask: ") {
            t.masks.push(BinaryMask::from_grid(&load(file)?));
        } else if let Some(l) = line.strip_prefix("  label: ") {
            t.label = Some(unesc(l));
        } else if let Some(a) = line.strip_prefix("  answer: ") {
            t.answer = unesc(a);
        } else {
            return Err(bad("unrecognised line"));
        }
    }
    Ok(out)
}
