use crate::tensor::Var;
use crate::visionnet::EncodingSet;
use crate::voxelcore::{Affine, BinaryMask, VoxelGrid};
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unit {
    Mm3,
    Mm,
    None,
}

impl Unit {
    pub fn tag(self) -> &'static str {
        match self {
            Unit::Mm3 => "mm3",
            Unit::Mm => "mm",
            Unit::None => "",
        }
    }
}

/// One decimal place; never renders a negative zero.
pub fn fmt_number(v: f64) -> String {
    let s = format!("{v:.1}");
    if s == "-0.0" {
        "0.0".into()
    } else {
        s
    }
}

/// Pooled encodings of one `encode` call.
#[derive(Clone, Debug)]
pub struct Encodings {
    /// ε° per stream, each `[1, d]`.
    pub pooled: Vec<Var>,
    /// Full multi-scale features; absent for backends without a network.
    pub set: Option<EncodingSet>,
    pub reference_shape: [usize; 3],
    pub reference_affine: Affine,
}

impl Encodings {
    pub fn streams(&self) -> usize {
        self.pooled.len()
    }
}

#[derive(Clone, Debug)]
pub struct MaskValue {
    pub mask: BinaryMask,
    /// Generator probabilities kept on the tape for the image loss.
    pub probs: Option<Var>,
}

#[derive(Clone, Debug)]
pub enum Value {
    Volume(VoxelGrid),
    VolumeList(Vec<VoxelGrid>),
    Encodings(Encodings),
    Mask(MaskValue),
    Number(f64, Unit),
    Triple([f64; 3], Unit),
    Text(String),
}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Volume(_) => "volume",
            Value::VolumeList(_) => "volume list",
            Value::Encodings(_) => "encodings",
            Value::Mask(_) => "mask",
            Value::Number(..) => "number",
            Value::Triple(..) => "triple",
            Value::Text(_) => "text",
        }
    }

    /// Text rendering used by `read` for everything except encodings.
    pub fn render(&self) -> String {
        match self {
            Value::Volume(g) => {
                let [x, y, z] = g.shape();
                format!("volume {x}x{y}x{z}")
            }
            Value::VolumeList(v) => format!("{} volumes", v.len()),
            Value::Encodings(e) => format!("{} encoded streams", e.streams()),
            Value::Mask(m) => format!("mask of {} voxels", m.mask.count()),
            Value::Number(v, u) => with_unit(fmt_number(*v), *u),
            Value::Triple(t, u) => with_unit(t.iter().map(|&v| fmt_number(v)).collect::<Vec<_>>().join(" x "), *u),
            Value::Text(s) => s.clone(),
        }
    }

    /// Substitution text for `respond`: numbers without their unit.
    pub fn answer_text(&self) -> String {
        match self {
            Value::Number(v, _) => fmt_number(*v),
            Value::Triple(t, _) => t.iter().map(|&v| fmt_number(v)).collect::<Vec<_>>().join(" x "),
            other => other.render(),
        }
    }
}

fn with_unit(s: String, u: Unit) -> String {
    match u {
        Unit::None => s,
        u => format!("{s} {}", u.tag()),
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Variable store, ordered by first binding. Rebinding replaces the value
/// in place.
#[derive(Clone, Debug, Default)]
pub struct Env {
    entries: Vec<(String, Value)>,
}

impl Env {
    pub fn new() -> Self {
        Env::default()
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn set(&mut self, name: &str, value: Value) {
        match self.entries.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((name.to_string(), value)),
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Masks bound at the moment, in binding order.
    pub fn masks(&self) -> Vec<(String, BinaryMask)> {
        self.entries
            .iter()
            .filter_map(|(n, v)| match v {
                Value::Mask(m) => Some((n.clone(), m.mask.clone())),
                _ => None,
            })
            .collect()
    }
}
