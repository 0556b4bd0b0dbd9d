//! Joint training of the agent and the vision networks, and evaluation.
//!
//! The loss of one instance is the token cross-entropy of the whole
//! ground-truth program plus `λ` times the soft Dice loss of every volume
//! the program generates.

mod config;
mod eval;
mod loss;
mod models;
mod train;

pub use config::{mix_text, parse_mix, KvConfig, ModelConfig, TrainConfig, MODEL_KEYS, TRAIN_KEYS};
pub use eval::{evaluate, transcript_dice, EvalReport, Policy, Summary, TaskResult};
pub use loss::{teacher_forced_losses, TeacherForced};
pub use models::{build_vocab, vocab_corpus, Models};
pub use train::{train, DataSource, Plateau, Progress, ScheduleAction, StopReason, TrainRun};

use crate::agent::AgentError;
use crate::taskgen::TaskError;
use crate::tensor::{CheckpointError, TensorError};
use crate::visionnet::VisionError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(String),
    #[error("ground-truth program failed under teacher forcing: {0}")]
    GroundTruth(String),
    #[error("non-finite loss at step {step}:\n{dump}")]
    NonFinite { step: usize, dump: String },
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Vision(#[from] VisionError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
