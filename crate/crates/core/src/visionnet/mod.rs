//! Instructable volume encoder and generator.
//!
//! Every stream (one per input volume) runs through the same weights. Each
//! level applies a resolution-aware convolution, mixes in the stream's
//! modulation vector φ, lets streams attend to each other voxel by voxel,
//! and group-normalises. Feature maps are laid out `[S, C, X, Y, Z]`.

mod blocks;
mod net;

pub use blocks::{native_conv, phi_mix, stream_attention_block, AttentionWeights};
pub use net::{EncodingSet, GenOutput, VisionNet};

use crate::tensor::TensorError;
use crate::voxelcore::{Spacing, VoxelError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VisionError {
    #[error("encode needs at least one volume")]
    NoVolumes,
    #[error("expected {expected} modulation vectors, got {got}")]
    PhiCount { expected: usize, got: usize },
    #[error("modulation vector has width {got}, expected {expected}")]
    PhiWidth { expected: usize, got: usize },
    #[error("encoding has {got} levels, network expects {expected}")]
    LevelMismatch { expected: usize, got: usize },
    #[error("invalid network config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Voxel(#[from] VoxelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetConfig {
    pub levels: usize,
    pub top_channels: usize,
    pub deep_channels: usize,
    pub attn_dim: usize,
    pub summary_dim: usize,
    pub phi_dim: usize,
}

impl NetConfig {
    pub fn desk() -> Self {
        NetConfig { levels: 4, top_channels: 8, deep_channels: 16, attn_dim: 8, summary_dim: 64, phi_dim: 8 }
    }

    pub fn full() -> Self {
        NetConfig { levels: 6, top_channels: 32, deep_channels: 96, attn_dim: 32, summary_dim: 512, phi_dim: 32 }
    }

    pub fn validate(&self) -> Result<(), VisionError> {
        if self.levels < 2 {
            return Err(VisionError::Config(format!("levels must be at least 2, got {}", self.levels)));
        }
        for (name, v) in [("top_channels", self.top_channels), ("deep_channels", self.deep_channels)] {
            if v == 0 || v % 4 != 0 {
                return Err(VisionError::Config(format!("{name} must be a positive multiple of 4, got {v}")));
            }
        }
        for (name, v) in [("attn_dim", self.attn_dim), ("summary_dim", self.summary_dim), ("phi_dim", self.phi_dim)] {
            if v == 0 {
                return Err(VisionError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        if level == 0 {
            self.top_channels
        } else {
            self.deep_channels
        }
    }
}

/// Per-level spacings: in-plane doubles each level; the slice separation
/// stays at its original value while the level is more than 2× anisotropic,
/// then tracks the in-plane spacing.
pub fn spacing_schedule(s0: Spacing, levels: usize) -> Vec<Spacing> {
    let mut out = vec![s0];
    for _ in 1..levels {
        let cur = *out.last().unwrap();
        let inp = 2.0 * cur.inplane();
        let sep = if cur.omega() > 2.0 { s0.sep() } else { inp };
        out.push(Spacing::new(inp, sep).expect("doubling keeps spacings positive"));
    }
    out
}
