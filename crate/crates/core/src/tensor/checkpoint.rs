//! Checkpoint container.
//!
//! ```text
//! magic        "VXCK"
//! version      u32 = 1
//! step         u64
//! fingerprint  32 bytes, SHA-256 of the config text
//! config       str
//! vocab        u32 count, then str per token
//! meta         u32 count, then (str key, str value)
//! params       u32 count, then per param:
//!                str name, u32 ndim, u32 dims…, f32 values…
//! adam t       u64
//! adam m, v    per param, f32 values in param order
//! ```
//!
//! Integers and floats are little-endian; `str` is a u32 byte length
//! followed by UTF-8.

use super::optim::{AdamState, ParamStore};
use sha2::{Digest, Sha256};
use thiserror::Error;

const MAGIC: &[u8; 4] = b"VXCK";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("config fingerprint does not match the stored config text")]
    Fingerprint,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub config: String,
    pub vocab: Vec<String>,
    /// Free-form key/value state (schedule position and similar).
    pub meta: Vec<(String, String)>,
    pub params: ParamStore,
    pub adam: AdamState,
}

pub fn fingerprint(config: &str) -> [u8; 32] {
    Sha256::digest(config.as_bytes()).into()
}

pub fn fingerprint_hex(config: &str) -> String {
    fingerprint(config).iter().map(|b| format!("{b:02x}")).collect()
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    b: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let s = self.b.get(self.at..self.at + n).ok_or(CheckpointError::Truncated(self.at))?;
        self.at += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| CheckpointError::Malformed(e.to_string()))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, CheckpointError> {
        Ok(self.take(4 * n)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&fingerprint(&self.config));
        put_str(&mut out, &self.config);
        out.extend_from_slice(&(self.vocab.len() as u32).to_le_bytes());
        for t in &self.vocab {
            put_str(&mut out, t);
        }
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for id in self.params.ids() {
            put_str(&mut out, self.params.name(id));
            let shape = self.params.shape(id);
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            put_f32s(&mut out, self.params.get(id));
        }
        out.extend_from_slice(&self.adam.t.to_le_bytes());
        for m in &self.adam.m {
            put_f32s(&mut out, m);
        }
        for v in &self.adam.v {
            put_f32s(&mut out, v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { b: bytes, at: 0 };
        if r.take(4)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let step = r.u64()?;
        let fp: [u8; 32] = r.take(32)?.try_into().unwrap();
        let config = r.str()?;
        if fingerprint(&config) != fp {
            return Err(CheckpointError::Fingerprint);
        }
        let vocab = (0..r.u32()?).map(|_| r.str()).collect::<Result<Vec<_>, _>>()?;
        let meta = (0..r.u32()?).map(|_| Ok((r.str()?, r.str()?))).collect::<Result<Vec<_>, CheckpointError>>()?;
        let mut params = ParamStore::new();
        for _ in 0..r.u32()? {
            let name = r.str()?;
            if params.find(&name).is_some() {
                return Err(CheckpointError::Malformed(format!("duplicate parameter {name}")));
            }
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let values = r.f32s(shape.iter().product())?;
            params.add(name, shape, values);
        }
        let mut adam = AdamState::new(&params);
        adam.t = r.u64()?;
        for i in 0..params.len() {
            adam.m[i] = r.f32s(adam.m[i].len())?;
        }
        for i in 0..params.len() {
            adam.v[i] = r.f32s(adam.v[i].len())?;
        }
        if r.at != bytes.len() {
            return Err(CheckpointError::Malformed(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        Ok(Checkpoint { step, config, vocab, meta, params, adam })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), CheckpointError> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut params = ParamStore::new();
        params.add("a.w", vec![2, 3], vec![0.1, -0.2, 0.3, 1e-7, f32::MAX, -0.0]);
        params.add("a.b", vec![2], vec![1.5, 2.5]);
        let mut adam = AdamState::new(&params);
        adam.t = 7;
        adam.m[1] = vec![0.25, -0.5];
        Checkpoint {
            step: 42,
            config: "lr=0.001\n".into(),
            vocab: vec!["<pad>".into(), " the".into()],
            meta: vec![("lr".into(), "0.001".into())],
            params,
            adam,
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let c = sample();
        let b = c.to_bytes();
        assert_eq!(b, c.to_bytes());
        assert_eq!(Checkpoint::from_bytes(&b).unwrap(), c);
    }

    #[test]
    fn corruption_is_detected() {
        let mut b = sample().to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&b[..b.len() - 3]), Err(CheckpointError::Truncated(_))));
        let cfg_at = 4 + 4 + 8 + 32 + 4;
        b[cfg_at] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&b), Err(CheckpointError::Fingerprint)));
        b[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&b), Err(CheckpointError::BadMagic)));
    }
}
