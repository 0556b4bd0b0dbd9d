//! Named `f32` parameters, their binding onto a tape, and Adam.

use super::tape::{Gradients, Tape, Var};
use super::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<f32>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f32>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter name {name}");
        assert_eq!(shape.iter().product::<usize>(), values.len(), "parameter {name}: shape/value mismatch");
        self.names.push(name);
        self.shapes.push(shape);
        self.values.push(values);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.shapes[id.0]
    }

    pub fn get(&self, id: ParamId) -> &[f32] {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f32] {
        &mut self.values[id.0]
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn tensor(&self, id: ParamId) -> Tensor {
        Tensor::from_f32(self.shapes[id.0].clone(), &self.values[id.0]).expect("store keeps shapes consistent")
    }

    /// Upload every parameter as a gradient-tracking leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams { vars: self.ids().map(|id| tape.param(self.tensor(id))).collect() }
    }

    /// Upload every parameter as a constant (inference only).
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundParams {
        BoundParams { vars: self.ids().map(|id| tape.constant(self.tensor(id))).collect() }
    }

    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.values.iter().map(|v| vec![0.0; v.len()]).collect()
    }
}

/// Tape handles for every parameter of a store.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Add this pass's parameter gradients into `acc`.
    pub fn accumulate(&self, grads: &Gradients, acc: &mut [Vec<f64>]) {
        for (var, a) in self.vars.iter().zip(acc.iter_mut()) {
            if let Some(g) = grads.get(*var) {
                a.iter_mut().zip(g).for_each(|(x, y)| *x += y);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f32>> = store.values.iter().map(|v| vec![0.0; v.len()]).collect();
        AdamState { t: 0, m: zeros.clone(), v: zeros }
    }
}

/// Bias-corrected Adam update of every parameter in `store`.
pub fn adam_step(store: &mut ParamStore, grads: &[Vec<f64>], state: &mut AdamState, cfg: &AdamConfig) {
    assert_eq!(grads.len(), store.len(), "one gradient buffer per parameter");
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in store.values.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            let mn = cfg.beta1 * *m as f64 + (1.0 - cfg.beta1) * g;
            let vn = cfg.beta2 * *v as f64 + (1.0 - cfg.beta2) * g * g;
            *m = mn as f32;
            *v = vn as f32;
            let step = cfg.lr * (mn / bc1) / ((vn / bc2).sqrt() + cfg.eps);
            *p = (*p as f64 - step) as f32;
        }
    }
}

/// Rescale `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f32) -> (ParamStore, AdamState) {
        let mut s = ParamStore::new();
        s.add("w", vec![1], vec![v]);
        let st = AdamState::new(&s);
        (s, st)
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let (mut s, mut st) = one(0.75);
        adam_step(&mut s, &[vec![0.0]], &mut st, &AdamConfig::default());
        assert_eq!(s.get(ParamId(0)), &[0.75]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0, -0.02] {
            let (mut s, mut st) = one(1.0);
            let cfg = AdamConfig { lr: 1e-2, ..Default::default() };
            adam_step(&mut s, &[vec![g]], &mut st, &cfg);
            let moved = 1.0 - s.get(ParamId(0))[0] as f64;
            assert!((moved - 1e-2 * g.signum()).abs() < 1e-6, "{moved}");
        }
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        let (mut s, mut st) = one(0.0);
        let cfg = AdamConfig { lr: 1e-3, ..Default::default() };
        let mut prev = 0.0;
        for _ in 0..2 {
            adam_step(&mut s, &[vec![0.5]], &mut st, &cfg);
            let now = s.get(ParamId(0))[0];
            assert!(now < prev);
            prev = now;
        }
    }
}
