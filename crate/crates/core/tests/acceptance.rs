//! The ten acceptance criteria, each with an oracle built here rather than
//! borrowed from the library. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.
//!
//! `cargo test --release --test acceptance`; `-- 3 5` runs a subset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::time::{Duration, Instant};
use voxagent::runtime::{fmt_number, LoopConfig};
use voxagent::taskgen::{
    build_task, synth_lesion, synth_phantom, Contrast, Grammar, IntensityClass, LesionSpec, PhantomSpec, RoiMetric, Structure, Target, TaskConfig, TaskKind, MAX_DEPTH,
};
use voxagent::tensor::{gradcheck_suite, Tape, Tensor, Var};
use voxagent::training::{build_vocab, evaluate, train, DataSource, ModelConfig, Models, Policy, TrainConfig};
use voxagent::visionnet::{native_conv, spacing_schedule, stream_attention_block, AttentionWeights};
use voxagent::voxelcore::{dice, load_volume, save_volume, Affine, BinaryMask, ParseError, Spacing, VolumeFormat, VoxelGrid};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

// 1 ---------------------------------------------------------------------

fn gradient_suite() -> Check {
    let t0 = Instant::now();
    let report = gradcheck_suite(7, 1e-5).map_err(|e| e.to_string())?;
    let wall = t0.elapsed();
    ensure(!report.rows.is_empty(), "empty suite")?;
    for r in &report.rows {
        ensure(r.max_rel_err < 1e-4, format!("{}: rel err {:.3e}", r.op, r.max_rel_err))?;
    }
    ensure(wall < Duration::from_secs(120), format!("suite took {wall:.1?}"))?;
    Ok(format!("{} ops, worst {:.2e}, {wall:.1?}", report.rows.len(), report.worst()))
}

// 2 ---------------------------------------------------------------------

fn spacing_tables() -> Check {
    let run = |inp, sep, levels| -> Vec<(f64, f64)> { spacing_schedule(Spacing::new(inp, sep).unwrap(), levels).iter().map(|s| (s.inplane(), s.sep())).collect() };
    let cases: [(f64, f64, usize, Vec<(f64, f64)>); 3] = [
        (1.0, 1.0, 4, vec![(1.0, 1.0), (2.0, 2.0), (4.0, 4.0), (8.0, 8.0)]),
        (1.0, 6.0, 4, vec![(1.0, 6.0), (2.0, 6.0), (4.0, 6.0), (8.0, 8.0)]),
        (1.0, 2.0, 3, vec![(1.0, 2.0), (2.0, 2.0), (4.0, 4.0)]),
    ];
    for (inp, sep, levels, want) in cases {
        let got = run(inp, sep, levels);
        ensure(got == want, format!("({inp},{sep}): got {got:?}, want {want:?}"))?;
    }
    Ok("3 tables exact".into())
}

// 3 ---------------------------------------------------------------------

/// Same-padded convolution over `[1, C, X, Y, Z]` with the kernel taps
/// along the slice axis restricted to `dz_taps`.
fn conv_oracle(x: &[f64], w: &[f64], b: &[f64], c: usize, o: usize, s: [usize; 3], dz_taps: &[i64]) -> Vec<f64> {
    let [nx, ny, nz] = s;
    let at = |ch: usize, i: i64, j: i64, k: i64| -> f64 {
        if i < 0 || j < 0 || k < 0 || i >= nx as i64 || j >= ny as i64 || k >= nz as i64 {
            0.0
        } else {
            x[((ch * nx + i as usize) * ny + j as usize) * nz + k as usize]
        }
    };
    let mut out = vec![0.0; o * nx * ny * nz];
    for oc in 0..o {
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    let mut acc = b[oc];
                    for ch in 0..c {
                        for di in -1i64..=1 {
                            for dj in -1i64..=1 {
                                for &dk in dz_taps {
                                    let wi = (((oc * c + ch) * 3 + (di + 1) as usize) * 3 + (dj + 1) as usize) * 3 + (dk + 1) as usize;
                                    acc += w[wi] * at(ch, i as i64 + di, j as i64 + dj, k as i64 + dk);
                                }
                            }
                        }
                    }
                    out[((oc * nx + i) * ny + j) * nz + k] = acc;
                }
            }
        }
    }
    out
}

fn native_conv_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (c, o, s) = (2, 3, [6, 5, 4]);
    let n: usize = s.iter().product();
    let (xv, wv, bv) = (randn(&mut rng, c * n), randn(&mut rng, o * c * 27), randn(&mut rng, o));
    let run = |omega: f64, full: bool| -> Vec<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, c, s[0], s[1], s[2]], xv.clone()).unwrap());
        let w = tape.constant(Tensor::new(vec![o, c, 3, 3, 3], wv.clone()).unwrap());
        let b = tape.constant(Tensor::new(vec![o], bv.clone()).unwrap());
        let y = if full { tape.conv3d(x, w, b).unwrap() } else { native_conv(&mut tape, x, w, b, Spacing::new(1.0, omega).unwrap()).unwrap() };
        tape.data(y).to_vec()
    };
    let slicewise = conv_oracle(&xv, &wv, &bv, c, o, s, &[0]);
    let mut worst: f64 = 0.0;
    for omega in [2.5, 3.0, 5.0] {
        let got = run(omega, false);
        let err = got.iter().zip(&slicewise).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ensure(err <= 1e-6, format!("ω = {omega}: max err {err:.3e}"))?;
        worst = worst.max(err);
    }
    let native = run(1.0, false);
    let plain = run(1.0, true);
    ensure(native.iter().zip(&plain).all(|(a, b)| a.to_bits() == b.to_bits()), "ω = 1 differs from conv3d")?;
    let full = conv_oracle(&xv, &wv, &bv, c, o, s, &[-1, 0, 1]);
    let err = native.iter().zip(&full).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(err <= 1e-9, format!("ω = 1 vs 3D oracle: {err:.3e}"))?;
    Ok(format!("slicewise max err {worst:.1e}; ω = 1 bit-identical to conv3d"))
}

// 4 ---------------------------------------------------------------------

struct AttnParams {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    fw: Vec<f64>,
    fb: Vec<f64>,
}

const C: usize = 4;
const B: usize = 3;

fn attn_block(p: &AttnParams, a: &[f64], s: usize, vox: usize) -> Vec<f64> {
    let mut tape = Tape::new();
    let t = |tape: &mut Tape, shape: Vec<usize>, d: &[f64]| -> Var { tape.constant(Tensor::new(shape, d.to_vec()).unwrap()) };
    let w = AttentionWeights {
        q: t(&mut tape, vec![B, C], &p.q),
        k: t(&mut tape, vec![B, C], &p.k),
        v: t(&mut tape, vec![B, C], &p.v),
        f_w: t(&mut tape, vec![C, B], &p.fw),
        f_b: t(&mut tape, vec![C], &p.fb),
    };
    let av = t(&mut tape, vec![s, C, vox, 1, 1], a);
    let out = stream_attention_block(&mut tape, av, &w).unwrap();
    tape.data(out).to_vec()
}

/// `B_s = f(Σ_t softmax_t(q_s·k_t · scale) v_t) + A_s`, voxel by voxel.
fn attn_oracle(p: &AttnParams, a: &[f64], s: usize, vox: usize, scale: f64) -> Vec<f64> {
    let proj = |w: &[f64], st: usize, x: usize| -> Vec<f64> { (0..B).map(|r| (0..C).map(|c| w[r * C + c] * a[(st * C + c) * vox + x]).sum()).collect() };
    let mut out = vec![0.0; s * C * vox];
    for x in 0..vox {
        let q: Vec<_> = (0..s).map(|st| proj(&p.q, st, x)).collect();
        let k: Vec<_> = (0..s).map(|st| proj(&p.k, st, x)).collect();
        let v: Vec<_> = (0..s).map(|st| proj(&p.v, st, x)).collect();
        for st in 0..s {
            let logits: Vec<f64> = (0..s).map(|u| (0..B).map(|r| q[st][r] * k[u][r]).sum::<f64>() * scale).collect();
            let m = logits.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            let att: Vec<f64> = (0..B).map(|r| (0..s).map(|u| e[u] / z * v[u][r]).sum()).collect();
            for c in 0..C {
                let f = p.fb[c] + (0..B).map(|r| p.fw[c * B + r] * att[r]).sum::<f64>();
                out[(st * C + c) * vox + x] = f + a[(st * C + c) * vox + x];
            }
        }
    }
    out
}

fn stream_attention() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = AttnParams { q: randn(&mut rng, B * C), k: randn(&mut rng, B * C), v: randn(&mut rng, B * C), fw: randn(&mut rng, C * B), fb: randn(&mut rng, C) };
    let vox = 5;
    for s in 2..=4 {
        let a = randn(&mut rng, s * C * vox);
        let out = attn_block(&p, &a, s, vox);
        let mut perm: Vec<usize> = (0..s).collect();
        perm.rotate_left(1);
        perm.swap(0, s - 1);
        let permute = |d: &[f64]| -> Vec<f64> { perm.iter().flat_map(|&st| d[st * C * vox..(st + 1) * C * vox].to_vec()).collect() };
        let out_p = attn_block(&p, &permute(&a), s, vox);
        let err = out_p.iter().zip(permute(&out)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        ensure(err <= 1e-5, format!("S = {s}: permutation error {err:.3e}"))?;
    }
    // one stream: softmax over a single entry is 1
    let a = randn(&mut rng, C * vox);
    let out = attn_block(&p, &a, 1, vox);
    for x in 0..vox {
        let v: Vec<f64> = (0..B).map(|r| (0..C).map(|c| p.v[r * C + c] * a[c * vox + x]).sum()).collect();
        for c in 0..C {
            let want = p.fb[c] + (0..B).map(|r| p.fw[c * B + r] * v[r]).sum::<f64>() + a[c * vox + x];
            ensure((out[c * vox + x] - want).abs() <= 1e-12, "S = 1 is not f(V) + A")?;
        }
    }
    // two streams by hand, with and without the 1/√b factor
    let a = randn(&mut rng, 2 * C * vox);
    let out = attn_block(&p, &a, 2, vox);
    let want = attn_oracle(&p, &a, 2, vox, 1.0 / (B as f64).sqrt());
    let unscaled = attn_oracle(&p, &a, 2, vox, 1.0);
    let err = out.iter().zip(&want).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let miss = out.iter().zip(&unscaled).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    ensure(err <= 1e-12, format!("S = 2 hand case error {err:.3e}"))?;
    ensure(miss > 1e-6, "hand case cannot tell the scale factor apart")?;
    Ok(format!("equivariant for S = 2..4; S = 2 hand case err {err:.1e}"))
}

// 5 ---------------------------------------------------------------------

fn dice_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let aff = Affine::identity();
    for pair in 0..100 {
        // densities from empty to full so the edge cases show up
        let (pa, pb) = (rng.random_range(0.0..=1.0f64).powi(2), rng.random_range(0.0..=1.0f64).powi(2));
        let pa = if pair == 0 { 0.0 } else { pa };
        let pb = if pair < 2 { 0.0 } else { pb };
        let a: Vec<u8> = (0..512).map(|_| rng.random_bool(pa) as u8).collect();
        let b: Vec<u8> = (0..512).map(|_| rng.random_bool(pb) as u8).collect();
        let (ma, mb) = (BinaryMask::new([8; 3], a, aff).unwrap(), BinaryMask::new([8; 3], b, aff).unwrap());
        let (mut both, mut na, mut nb) = (0u32, 0u32, 0u32);
        for i in 0..8 {
            for j in 0..8 {
                for k in 0..8 {
                    let (x, y) = (ma.get(i, j, k), mb.get(i, j, k));
                    both += (x && y) as u32;
                    na += x as u32;
                    nb += y as u32;
                }
            }
        }
        let want = if na + nb == 0 { 1.0 } else { 2.0 * both as f64 / (na + nb) as f64 };
        let got = dice(&ma, &mb).map_err(|e| e.to_string())?;
        ensure(got == want, format!("pair {pair}: {got} vs {want}"))?;
    }
    Ok("100 pairs exact".into())
}

// 6 ---------------------------------------------------------------------

fn grounding() -> Check {
    let g = Grammar::shipped();
    let tc = TaskConfig::default();
    let tasks: Vec<_> = (0..20).map(|s| build_task(TaskKind::Longitudinal, &g, &tc, 600 + s)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let report = evaluate(Policy::Oracle, &tasks, None, LoopConfig::default()).map_err(|e| e.to_string())?;
    let mut hits = 0;
    for (t, r) in tasks.iter().zip(&report.results) {
        let vol = |m: &BinaryMask| m.bits().iter().map(|&b| b as f64).sum::<f64>() * m.affine().voxel_volume();
        let growth = vol(&t.masks[1]) - vol(&t.masks[0]);
        let want = format!("The lesion volume changed by {} mm3.", fmt_number(growth));
        ensure(t.answer == want, format!("seed {}: generator answer {:?}, want {want:?}", t.seed, t.answer))?;
        hits += r.exact as usize;
    }
    ensure(hits == 20, format!("{hits}/20 exact"))?;
    Ok("20/20 exact".into())
}

// 7 ---------------------------------------------------------------------

fn end_to_end_learning() -> Check {
    let t0 = Instant::now();
    let g = Grammar::shipped();
    let tc = TaskConfig {
        targets: [Structure::Ventricles, Structure::Thalamus, Structure::Cerebellum].map(Target::Structure).to_vec(),
        roi_metrics: vec![RoiMetric::Mean],
        ..TaskConfig::default()
    };
    let kinds = [TaskKind::Segment, TaskKind::RoiMetric];
    let make = |offset: u64, n: u64| -> Result<Vec<_>, String> { (0..n).map(|i| build_task(kinds[(i % 2) as usize], &g, &tc, offset + i).map_err(|e| e.to_string())).collect() };
    let train_set = make(0, 64)?;
    let held_out = make(10_000, 16)?;
    let vocab = build_vocab(&g, &train_set, 512);
    let mut models = Models::new(ModelConfig::desk(), vocab, 1).map_err(|e| e.to_string())?;
    let cfg = TrainConfig { lr: 2e-3, lambda: 1.0, patience: 2000, max_steps: 6000, mix: kinds.iter().map(|&k| (k, 1.0)).collect(), ..TrainConfig::default() };
    let budget = Duration::from_secs(30 * 60);
    let eval_reserve = Duration::from_secs(120);
    let mut out_of_time = false;
    let run = train(&mut models, DataSource::Fixed(&train_set), &cfg, None, &mut |p| {
        if !out_of_time && t0.elapsed() + eval_reserve > budget {
            out_of_time = true;
            eprintln!("  learning: time budget reached at step {}", p.step);
        }
    })
    .map_err(|e| e.to_string())?;
    let lc = LoopConfig::default();
    let tr = evaluate(Policy::Model(&models), &train_set, None, lc).map_err(|e| e.to_string())?.overall();
    let ho = evaluate(Policy::Model(&models), &held_out, None, lc).map_err(|e| e.to_string())?.overall();
    let wall = t0.elapsed();
    let summary = format!(
        "{} steps; train tokens {:.4} dice {:.3}; held-out dice {:.3} exact {:.3}; {wall:.0?}",
        run.steps,
        tr.token_accuracy,
        tr.dice.unwrap_or(0.0),
        ho.dice.unwrap_or(0.0),
        ho.exact_match
    );
    ensure(tr.token_accuracy >= 0.99, format!("token accuracy below 0.99: {summary}"))?;
    ensure(tr.dice.unwrap_or(0.0) >= 0.90, format!("train dice below 0.90: {summary}"))?;
    ensure(ho.dice.unwrap_or(0.0) >= 0.80, format!("held-out dice below 0.80: {summary}"))?;
    ensure(ho.exact_match >= 0.80, format!("held-out exact match below 0.80: {summary}"))?;
    ensure(wall <= budget, format!("over 30 minutes: {summary}"))?;
    Ok(summary)
}

// 8 ---------------------------------------------------------------------

fn grammar_membership() -> Check {
    let g = Grammar::shipped();
    let kinds = g.kinds();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for n in 0..1000 {
        let kind = kinds[n % kinds.len()];
        let p = g.expand(kind, &[], &mut rng).map_err(|e| format!("expansion {n} ({kind}): {e}"))?;
        ensure(g.accepts(kind, &p), format!("not re-parsed: {p:?}"))?;
    }
    Ok(format!("1000 expansions over {} kinds, depth cap {MAX_DEPTH} never hit", kinds.len()))
}

// 9 ---------------------------------------------------------------------

/// Voxels outside `m` within 3 face-steps of it.
fn shell_oracle(m: &BinaryMask) -> Vec<bool> {
    let [nx, ny, nz] = m.shape();
    let on: Vec<(i64, i64, i64)> = (0..nx * ny * nz).filter(|&f| m.bits()[f] == 1).map(|f| ((f / (ny * nz)) as i64, ((f / nz) % ny) as i64, (f % nz) as i64)).collect();
    (0..nx * ny * nz)
        .map(|f| {
            let (i, j, k) = ((f / (ny * nz)) as i64, ((f / nz) % ny) as i64, (f % nz) as i64);
            m.bits()[f] == 0 && on.iter().any(|&(a, b, c)| (a - i).abs() + (b - j).abs() + (c - k).abs() <= 3)
        })
        .collect()
}

fn lesion_classes() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut rates = Vec::new();
    for class in IntensityClass::ALL {
        let mut confirmed = 0;
        for draw in 0..100 {
            let spec = PhantomSpec::random([32; 3], [1.0; 3], vec![Contrast::T1], 0.03, &mut rng);
            let ph = synth_phantom(&spec, &mut rng).map_err(|e| e.to_string())?;
            let host = if draw % 2 == 0 { Structure::FrontalLobe } else { Structure::OccipitalLobe };
            let radius = rng.random_range(2.5..=3.5);
            let l = synth_lesion(&ph, &LesionSpec::new(host, radius, vec![(Contrast::T1, class)]), &mut rng).map_err(|e| e.to_string())?;
            let g = &l.volumes[0].1;
            let [_, ny, nz] = g.shape();
            for (f, &b) in l.mask.bits().iter().enumerate() {
                if b == 1 {
                    let w = g.world_of(f / (ny * nz), (f / nz) % ny, f % nz);
                    let d2: f64 = (0..3).map(|a| (w[a] - l.geometry.center[a]).powi(2)).sum();
                    ensure(d2 <= l.geometry.radius_mm.powi(2) + 1e-9, format!("{} draw {draw}: voxel outside the boundary sphere", class.key()))?;
                }
            }
            let sh = shell_oracle(&l.mask);
            let mean = |sel: &dyn Fn(usize) -> bool| {
                let (s, n) = (0..g.values().len()).filter(|&f| sel(f)).fold((0.0, 0), |(s, n), f| (s + g.values()[f] as f64, n + 1));
                s / n as f64
            };
            let delta = mean(&|f| l.mask.bits()[f] == 1) - mean(&|f| sh[f]);
            let seen = if delta > 0.05 {
                IntensityClass::Hyper
            } else if delta < -0.05 {
                IntensityClass::Hypo
            } else {
                IntensityClass::Iso
            };
            confirmed += (seen == class) as usize;
        }
        ensure(confirmed >= 95, format!("{}: {confirmed}/100 confirmed", class.key()))?;
        rates.push(format!("{} {confirmed}", class.key()));
    }
    Ok(format!("{} of 100; all masks inside their spheres", rates.join(", ")))
}

// 10 --------------------------------------------------------------------

fn cli(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = voxagent::cli::main(std::iter::once("voxagent").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8_lossy(&out).into_owned(), String::from_utf8_lossy(&err).into_owned())
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_file()).collect();
    files.sort();
    files.into_iter().map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())).collect()
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let s = |p: &Path| p.display().to_string();

    let mut ckpts = Vec::new();
    let dir = root.join("train");
    for _ in 0..2 {
        let _ = std::fs::remove_dir_all(&dir);
        let (code, out, err) = cli(&["train", "--out", &s(&dir), "--steps", "100", "--seed", "3", "--log-every", "1"]);
        ensure(code == 0, format!("train exit {code}: {err}"))?;
        ckpts.push((out, std::fs::read(dir.join("last.vxck")).map_err(|e| e.to_string())?));
    }
    ensure(ckpts[0] == ckpts[1], "two seeded training runs differ")?;

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let aff = Affine::from_spacing([0.9, 1.1, 2.5], [-7.25, 3.0, 11.0]);
    let grid = VoxelGrid::new([7, 6, 5], (0..210).map(|_| rng.random::<f32>() * 1e3 - 500.0).collect(), aff).map_err(|e| e.to_string())?;
    let bytes = save_volume(&grid, VolumeFormat::Vxv1).map_err(|e| e.to_string())?;
    let back = load_volume(&bytes, None).map_err(|e| e.to_string())?;
    ensure(back.shape() == grid.shape(), "VXV1 shape changed")?;
    ensure(back.values().iter().zip(grid.values()).all(|(a, b)| a.to_bits() == b.to_bits()), "VXV1 values changed")?;
    ensure((0..4).all(|r| (0..4).all(|c| back.affine().0[r][c].to_bits() == grid.affine().0[r][c].to_bits())), "VXV1 affine changed")?;
    ensure(save_volume(&back, VolumeFormat::Vxv1).map_err(|e| e.to_string())? == bytes, "VXV1 re-encode differs")?;

    let vol = root.join("a.vxv");
    let task = build_task(TaskKind::Segment, &Grammar::shipped(), &TaskConfig { shape: [16; 3], ..TaskConfig::default() }, 1).map_err(|e| e.to_string())?;
    std::fs::write(&vol, save_volume(&task.volumes[0].grid, VolumeFormat::Vxv1).unwrap()).map_err(|e| e.to_string())?;
    let ck = dir.join("last.vxck");
    let mut runs = Vec::new();
    for run in 0..2 {
        let out_dir = root.join(format!("run{run}"));
        let (code, out, err) = cli(&["run", "--prompt", "segment the lesion", "--vol", &s(&vol), "--checkpoint", &s(&ck), "--out", &s(&out_dir), "--max-steps", "3"]);
        ensure(code == 0, format!("run exit {code}: {err}"))?;
        runs.push((out, read_tree(&out_dir)));
    }
    ensure(runs[0] == runs[1], "two runs differ")?;

    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let good = load_volume(&std::fs::read(fixtures.join("small.nii")).unwrap(), None).map_err(|e| format!("NIfTI fixture: {e}"))?;
    ensure(good.shape() == [4, 3, 2], "NIfTI shape")?;
    // stored value i + 10j + 100k, scaled by 0.5 and shifted by 1
    for (i, j, k) in [(0, 0, 0), (3, 0, 0), (1, 2, 1), (3, 2, 1)] {
        let want = (i + 10 * j + 100 * k) as f32 * 0.5 + 1.0;
        ensure(good.get(i, j, k) == want, format!("NIfTI voxel ({i},{j},{k}) = {}", good.get(i, j, k)))?;
    }
    ensure(good.world_of(1, 1, 1) == [-1.0, 0.0, 8.0], format!("NIfTI affine maps (1,1,1) to {:?}", good.world_of(1, 1, 1)))?;
    let bad = load_volume(&std::fs::read(fixtures.join("bad_magic.nii")).unwrap(), None);
    ensure(matches!(bad, Err(ParseError::BadMagic(_))), format!("corrupted magic gave {bad:?}"))?;
    Ok("train and run repeat bit for bit; VXV1 exact; NIfTI fixtures behave".into())
}

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("gradient suite", gradient_suite),
        ("spacing schedule", spacing_tables),
        ("native convolution", native_conv_equivalence),
        ("stream attention", stream_attention),
        ("dice oracle", dice_oracle),
        ("grounding", grounding),
        ("end-to-end learning", end_to_end_learning),
        ("grammar", grammar_membership),
        ("lesion synthesis", lesion_classes),
        ("determinism", determinism),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, (name, f)) in criteria.iter().enumerate().map(|(i, c)| (i + 1, c)) {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let r = std::panic::catch_unwind(f).unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into())));
        match r {
            Ok(msg) => println!("criterion {n:>2} PASS {name}: {msg} [{:.1?}]", t0.elapsed()),
            Err(msg) => {
                failed += 1;
                println!("criterion {n:>2} FAIL {name}: {msg} [{:.1?}]", t0.elapsed());
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
