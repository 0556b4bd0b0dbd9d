//! Central-difference gradient verification.

use super::tape::{OpKind, Tape};
use super::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::time::{Duration, Instant};

/// Denominator floor for the relative error, so gradients that are
/// numerically zero compare on an absolute scale.
const REL_FLOOR: f64 = 1e-3;

/// One op input: its value and whether it is differentiated.
pub type CheckInput = (Tensor, bool);

/// Fixed pseudo-random projection weights so non-scalar outputs reduce to
/// a scalar with a generic gradient.
fn projection(n: usize) -> Vec<f64> {
    (0..n).map(|i| (1.3 * i as f64 + 0.7).sin()).collect()
}

fn scalar_loss(kind: &OpKind, inputs: &[CheckInput]) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|(t, g)| tape.leaf(t.clone(), *g)).collect();
    let out = tape.forward_op(kind, &vars)?;
    let root = if tape.value(out).numel() == 1 {
        out
    } else {
        let w = tape.constant(Tensor::new(tape.shape(out).to_vec(), projection(tape.value(out).numel()))?);
        let p = tape.mul(out, w)?;
        tape.sum(p)
    };
    let loss = tape.data(root)[0];
    if !tape.requires_grad(root) {
        return Ok((loss, inputs.iter().map(|(t, _)| vec![0.0; t.numel()]).collect()));
    }
    let grads = tape.backward(root)?;
    let g = vars
        .iter()
        .zip(inputs)
        .map(|(v, (t, _))| grads.get(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    Ok((loss, g))
}

/// Worst relative error `|a − n| / max(|a|, |n|, 1e-3)` between the
/// backward gradient `a` and the central difference `n` over every element
/// of every differentiated input.
pub fn finite_diff_check(kind: &OpKind, inputs: &[CheckInput], eps: f64) -> Result<f64> {
    let (_, analytic) = scalar_loss(kind, inputs)?;
    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (i, (t, diff)) in inputs.iter().enumerate() {
        if !diff {
            continue;
        }
        for j in 0..t.numel() {
            let orig = t.data()[j];
            probe[i].0.data_mut()[j] = orig + eps;
            let (up, _) = scalar_loss(kind, &probe)?;
            probe[i].0.data_mut()[j] = orig - eps;
            let (down, _) = scalar_loss(kind, &probe)?;
            probe[i].0.data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[i][j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug)]
pub struct GradCheckRow {
    pub op: &'static str,
    pub max_rel_err: f64,
    pub elapsed: Duration,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub rows: Vec<GradCheckRow>,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.rows.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.rows.iter().all(|r| r.max_rel_err < tol)
    }

    pub fn elapsed(&self) -> Duration {
        self.rows.iter().map(|r| r.elapsed).sum()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<22} {:>12} {:>10}", "op", "max_rel_err", "ms")?;
        for r in &self.rows {
            writeln!(f, "{:<22} {:>12.3e} {:>10.1}", r.op, r.max_rel_err, r.elapsed.as_secs_f64() * 1e3)?;
        }
        write!(f, "worst {:.3e}", self.worst())
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values that are pairwise at least 0.01 apart, so ±eps never flips a max.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - 0.5).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
    Tensor::new(shape.to_vec(), v).unwrap()
}

/// Sample inputs for every op kind.
pub fn suite_cases(seed: u64) -> Vec<(OpKind, Vec<CheckInput>)> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut r;
    let vol = [1usize, 2, 4, 3, 3];
    vec![
        (OpKind::Linear, vec![(uniform(r, &[3, 4], -1.0, 1.0), true), (uniform(r, &[5, 4], -1.0, 1.0), true), (uniform(r, &[5], -1.0, 1.0), true)]),
        (OpKind::Conv3d, vec![(uniform(r, &vol, -1.0, 1.0), true), (uniform(r, &[3, 2, 3, 3, 3], -0.5, 0.5), true), (uniform(r, &[3], -0.5, 0.5), true)]),
        (OpKind::Conv2dSlicewise, vec![(uniform(r, &vol, -1.0, 1.0), true), (uniform(r, &[3, 2, 3, 3, 3], -0.5, 0.5), true), (uniform(r, &[3], -0.5, 0.5), true)]),
        (OpKind::ChannelLinear, vec![(uniform(r, &[2, 3, 2, 2, 2], -1.0, 1.0), true), (uniform(r, &[4, 3], -1.0, 1.0), true), (uniform(r, &[4], -1.0, 1.0), true)]),
        (OpKind::Softmax { axis: 1 }, vec![(uniform(r, &[3, 5], -2.0, 2.0), true)]),
        (OpKind::Silu, vec![(uniform(r, &[10], -3.0, 3.0), true)]),
        (OpKind::Sigmoid, vec![(uniform(r, &[10], -3.0, 3.0), true)]),
        (OpKind::GroupNorm, vec![(uniform(r, &[2, 8, 2, 2, 1], -1.0, 1.0), true)]),
        (OpKind::RmsNorm, vec![(uniform(r, &[3, 6], -1.0, 1.0), true), (uniform(r, &[6], 0.5, 1.5), true)]),
        (OpKind::MaxPool { factors: [2, 2, 1] }, vec![(distinct(r, &[1, 2, 3, 4, 2]), true)]),
        (OpKind::TrilinearResize { out: [4, 4, 3], ratio: [0.5, 0.5, 4.0 / 3.0] }, vec![(uniform(r, &[1, 2, 2, 2, 4], -1.0, 1.0), true)]),
        (OpKind::GlobalMax, vec![(distinct(r, &[2, 3, 2, 2, 2]), true)]),
        (OpKind::Concat { axis: 1 }, vec![(uniform(r, &[2, 2, 3], -1.0, 1.0), true), (uniform(r, &[2, 1, 3], -1.0, 1.0), true)]),
        (OpKind::Narrow { axis: 0, start: 1, len: 2 }, vec![(uniform(r, &[4, 3], -1.0, 1.0), true)]),
        (OpKind::Embedding { ids: vec![2, 0, 2, 4] }, vec![(uniform(r, &[5, 3], -1.0, 1.0), true)]),
        (OpKind::BroadcastSpatial { spatial: [2, 1, 3] }, vec![(uniform(r, &[2, 3], -1.0, 1.0), true)]),
        (OpKind::Add, vec![(uniform(r, &[6], -1.0, 1.0), true), (uniform(r, &[6], -1.0, 1.0), true)]),
        (OpKind::Mul, vec![(uniform(r, &[6], -1.0, 1.0), true), (uniform(r, &[6], -1.0, 1.0), true)]),
        (OpKind::Scale { factor: -1.7 }, vec![(uniform(r, &[6], -1.0, 1.0), true)]),
        (OpKind::Sum, vec![(uniform(r, &[6], -1.0, 1.0), true)]),
        (
            OpKind::StreamAttention,
            vec![(uniform(r, &[3, 4, 2, 1, 2], -1.0, 1.0), true), (uniform(r, &[3, 4, 2, 1, 2], -1.0, 1.0), true), (uniform(r, &[3, 4, 2, 1, 2], -1.0, 1.0), true)],
        ),
        (
            OpKind::CausalAttention { heads: 2 },
            vec![(uniform(r, &[4, 6], -1.0, 1.0), true), (uniform(r, &[4, 6], -1.0, 1.0), true), (uniform(r, &[4, 6], -1.0, 1.0), true)],
        ),
        (OpKind::CrossEntropy { targets: vec![Some(3), None, Some(0), Some(4)] }, vec![(uniform(r, &[4, 6], -2.0, 2.0), true)]),
        (OpKind::SoftDice { target: vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0] }, vec![(uniform(r, &[8], 0.1, 0.9), true)]),
    ]
}

/// Run [`finite_diff_check`] on every registered op kind.
pub fn gradcheck_suite(seed: u64, eps: f64) -> Result<GradCheckReport> {
    let mut rows = Vec::new();
    for (kind, inputs) in suite_cases(seed) {
        let t0 = Instant::now();
        let err = finite_diff_check(&kind, &inputs, eps)?;
        rows.push(GradCheckRow { op: kind.name(), max_rel_err: err, elapsed: t0.elapsed() });
    }
    Ok(GradCheckReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_covers_every_kind() {
        let names: Vec<_> = suite_cases(0).iter().map(|(k, _)| k.name()).collect();
        for n in OpKind::NAMES {
            assert!(names.contains(&n), "{n} missing from the suite");
        }
    }

    #[test]
    fn wrong_gradient_would_be_caught() {
        // an input that is not differentiated contributes no error
        let inputs = vec![(Tensor::scalar(2.0), false)];
        assert_eq!(finite_diff_check(&OpKind::Silu, &inputs, 1e-5).unwrap(), 0.0);
    }
}
