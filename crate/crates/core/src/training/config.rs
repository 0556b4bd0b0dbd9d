//! `key = value` configuration text shared by checkpoints and the CLI.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are unique.

use super::TrainError;
use crate::agent::AgentConfig;
use crate::taskgen::TaskKind;
use crate::visionnet::NetConfig;
use std::fmt::Write as _;
use std::str::FromStr;

/// Parsed key/value pairs in file order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvConfig {
    entries: Vec<(String, String)>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self, TrainError> {
        let mut out = KvConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| TrainError::Config(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(TrainError::Config(format!("line {}: empty key", n + 1)));
            }
            if out.get(k).is_some() {
                return Err(TrainError::Config(format!("line {}: duplicate key {k}", n + 1)));
            }
            out.entries.push((k.to_string(), v.to_string()));
        }
        Ok(out)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Insert or replace.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    /// Every key must be in `allowed`.
    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<(), TrainError> {
        match self.keys().find(|k| !allowed.contains(k)) {
            Some(k) => Err(TrainError::Config(format!("unknown key {k}"))),
            None => Ok(()),
        }
    }

    pub fn typed<T: FromStr>(&self, key: &str) -> Result<Option<T>, TrainError> {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|_| TrainError::Config(format!("bad value for {key}: {v}"))))
            .transpose()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }
}

/// Network shapes of the agent and the vision networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub agent: AgentConfig,
    pub net: NetConfig,
    pub vocab_size: usize,
}

pub const MODEL_KEYS: &[&str] = &[
    "agent.layers",
    "agent.d_model",
    "agent.heads",
    "agent.ff",
    "agent.max_seq",
    "agent.step_cap",
    "agent.phi_dim",
    "vision.levels",
    "vision.top_channels",
    "vision.deep_channels",
    "vision.attn_dim",
    "vision.summary_dim",
    "vision.phi_dim",
    "vocab_size",
];

impl ModelConfig {
    /// d = 64, two layers, four levels, ~512-token vocabulary.
    pub fn desk() -> Self {
        ModelConfig { agent: AgentConfig::desk(), net: NetConfig::desk(), vocab_size: 512 }
    }

    pub fn full() -> Self {
        ModelConfig { agent: AgentConfig::full(), net: NetConfig::full(), vocab_size: 4096 }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.agent.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        self.net.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        if self.agent.d_model != self.net.summary_dim {
            return Err(TrainError::Config(format!("agent width {} differs from encoding width {}", self.agent.d_model, self.net.summary_dim)));
        }
        if self.agent.phi_dim != self.net.phi_dim {
            return Err(TrainError::Config(format!("agent emits {}-wide φ, vision expects {}", self.agent.phi_dim, self.net.phi_dim)));
        }
        Ok(())
    }

    pub fn write(&self, kv: &mut KvConfig) {
        let a = &self.agent;
        let n = &self.net;
        for (k, v) in [
            ("agent.layers", a.layers),
            ("agent.d_model", a.d_model),
            ("agent.heads", a.heads),
            ("agent.ff", a.ff),
            ("agent.max_seq", a.max_seq),
            ("agent.step_cap", a.step_cap),
            ("agent.phi_dim", a.phi_dim),
            ("vision.levels", n.levels),
            ("vision.top_channels", n.top_channels),
            ("vision.deep_channels", n.deep_channels),
            ("vision.attn_dim", n.attn_dim),
            ("vision.summary_dim", n.summary_dim),
            ("vision.phi_dim", n.phi_dim),
            ("vocab_size", self.vocab_size),
        ] {
            kv.set(k, v.to_string());
        }
    }

    /// Missing keys keep the values of `base`.
    pub fn read(kv: &KvConfig, base: ModelConfig) -> Result<Self, TrainError> {
        let mut c = base;
        let fields: [(&str, &mut usize); 14] = [
            ("agent.layers", &mut c.agent.layers),
            ("agent.d_model", &mut c.agent.d_model),
            ("agent.heads", &mut c.agent.heads),
            ("agent.ff", &mut c.agent.ff),
            ("agent.max_seq", &mut c.agent.max_seq),
            ("agent.step_cap", &mut c.agent.step_cap),
            ("agent.phi_dim", &mut c.agent.phi_dim),
            ("vision.levels", &mut c.net.levels),
            ("vision.top_channels", &mut c.net.top_channels),
            ("vision.deep_channels", &mut c.net.deep_channels),
            ("vision.attn_dim", &mut c.net.attn_dim),
            ("vision.summary_dim", &mut c.net.summary_dim),
            ("vision.phi_dim", &mut c.net.phi_dim),
            ("vocab_size", &mut c.vocab_size),
        ];
        for (k, slot) in fields {
            if let Some(v) = kv.typed::<usize>(k)? {
                *slot = v;
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        let mut kv = KvConfig::default();
        self.write(&mut kv);
        kv.to_text()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Instances per optimizer update.
    pub accum: usize,
    /// Weight of the summed soft-Dice terms.
    pub lambda: f64,
    /// Steps without a new best update loss before the rate is halved.
    pub patience: usize,
    pub max_halvings: u32,
    pub seed: u64,
    /// Relative sampling weight per task kind.
    pub mix: Vec<(TaskKind, f64)>,
    /// Hard cap on steps (instances seen).
    pub max_steps: usize,
    /// Global gradient-norm clip; 0 disables.
    pub clip: f64,
    /// Save a checkpoint every this many steps; 0 only at the end.
    pub checkpoint_every: usize,
    pub state_cap: usize,
}

pub const TRAIN_KEYS: &[&str] =
    &["lr", "accum", "lambda", "patience", "max_halvings", "seed", "mix", "max_steps", "clip", "checkpoint_every", "state_cap"];

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            accum: 10,
            lambda: 0.1,
            patience: 500,
            max_halvings: 4,
            seed: 0,
            mix: TaskKind::ALL.iter().map(|&k| (k, 1.0)).collect(),
            max_steps: 10_000,
            clip: 1.0,
            checkpoint_every: 0,
            state_cap: 1024,
        }
    }
}

/// `segment:1,roi_metric:2`
pub fn parse_mix(s: &str) -> Result<Vec<(TaskKind, f64)>, TrainError> {
    let bad = || TrainError::Config(format!("bad mix {s:?}; expected kind:weight,..."));
    let mix = s
        .split(',')
        .map(|part| {
            let (k, w) = part.trim().split_once(':').ok_or_else(bad)?;
            let kind = TaskKind::from_key(k.trim()).ok_or_else(|| TrainError::Config(format!("unknown task kind {k}")))?;
            let w: f64 = w.trim().parse().map_err(|_| bad())?;
            Ok((kind, w))
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    if mix.iter().any(|(_, w)| !w.is_finite() || *w < 0.0) || mix.iter().all(|(_, w)| *w == 0.0) {
        return Err(TrainError::Config("mix weights must be non-negative with a positive total".into()));
    }
    Ok(mix)
}

pub fn mix_text(mix: &[(TaskKind, f64)]) -> String {
    mix.iter().map(|(k, w)| format!("{}:{w}", k.key())).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let err = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return err("lr must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return err("lambda must be >= 0");
        }
        if self.patience == 0 {
            return err("patience must be >= 1");
        }
        if self.accum == 0 {
            return err("accum must be >= 1");
        }
        if !(self.clip >= 0.0) {
            return err("clip must be >= 0");
        }
        if self.mix.is_empty() || self.mix.iter().all(|(_, w)| *w <= 0.0) {
            return err("mix needs a positive weight");
        }
        Ok(())
    }

    pub fn write(&self, kv: &mut KvConfig) {
        kv.set("lr", self.lr.to_string());
        kv.set("accum", self.accum.to_string());
        kv.set("lambda", self.lambda.to_string());
        kv.set("patience", self.patience.to_string());
        kv.set("max_halvings", self.max_halvings.to_string());
        kv.set("seed", self.seed.to_string());
        kv.set("mix", mix_text(&self.mix));
        kv.set("max_steps", self.max_steps.to_string());
        kv.set("clip", self.clip.to_string());
        kv.set("checkpoint_every", self.checkpoint_every.to_string());
        kv.set("state_cap", self.state_cap.to_string());
    }

    pub fn read(kv: &KvConfig, base: TrainConfig) -> Result<Self, TrainError> {
        let mut c = base;
        if let Some(v) = kv.typed("lr")? {
            c.lr = v;
        }
        if let Some(v) = kv.typed("accum")? {
            c.accum = v;
        }
        if let Some(v) = kv.typed("lambda")? {
            c.lambda = v;
        }
        if let Some(v) = kv.typed("patience")? {
            c.patience = v;
        }
        if let Some(v) = kv.typed("max_halvings")? {
            c.max_halvings = v;
        }
        if let Some(v) = kv.typed("seed")? {
            c.seed = v;
        }
        if let Some(v) = kv.get("mix") {
            c.mix = parse_mix(v)?;
        }
        if let Some(v) = kv.typed("max_steps")? {
            c.max_steps = v;
        }
        if let Some(v) = kv.typed("clip")? {
            c.clip = v;
        }
        if let Some(v) = kv.typed("checkpoint_every")? {
            c.checkpoint_every = v;
        }
        if let Some(v) = kv.typed("state_cap")? {
            c.state_cap = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_roundtrip_and_errors() {
        let kv = KvConfig::parse("# c\nlr = 0.01\n\nmix = segment:1,roi_metric:2\n").unwrap();
        assert_eq!(kv.get("lr"), Some("0.01"));
        assert_eq!(KvConfig::parse(&kv.to_text()).unwrap(), kv);
        assert!(KvConfig::parse("lr = 1\nlr = 2").is_err());
        assert!(KvConfig::parse("just words").is_err());
        assert!(kv.reject_unknown(&["lr"]).is_err());
        let t = TrainConfig::read(&kv, TrainConfig::default()).unwrap();
        assert_eq!(t.lr, 0.01);
        assert_eq!(t.mix, vec![(TaskKind::Segment, 1.0), (TaskKind::RoiMetric, 2.0)]);
    }

    #[test]
    fn model_config_text_roundtrip() {
        let m = ModelConfig::desk();
        let back = ModelConfig::read(&KvConfig::parse(&m.to_text()).unwrap(), ModelConfig::full()).unwrap();
        assert_eq!(back, m);
        let mut kv = KvConfig::default();
        kv.set("vision.summary_dim", "32");
        assert!(ModelConfig::read(&kv, m).is_err());
    }

    #[test]
    fn train_config_limits() {
        let mut kv = KvConfig::default();
        kv.set("lambda", "-0.1");
        assert!(TrainConfig::read(&kv, TrainConfig::default()).is_err());
        kv.set("lambda", "0");
        kv.set("patience", "0");
        assert!(TrainConfig::read(&kv, TrainConfig::default()).is_err());
        assert!(parse_mix("segment:0").is_err());
        assert!(parse_mix("nonsense:1").is_err());
    }
}
