//! The agent, the vision networks and the vocabulary as one unit.

use super::config::{KvConfig, ModelConfig};
use super::TrainError;
use crate::agent::{AgentNet, Vocabulary};
use crate::taskgen::{Grammar, TaskInstance, TaskKind};
use crate::tensor::{AdamState, Checkpoint, ParamStore};
use crate::visionnet::VisionNet;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct Models {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub agent: AgentNet,
    pub vision: VisionNet,
    /// Agent parameters first, then the vision networks.
    pub params: ParamStore,
}

impl Models {
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self, TrainError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let agent = AgentNet::new(config.agent, vocab.len(), &mut params, &mut rng)?;
        let vision = VisionNet::new(config.net, &mut params, &mut rng)?;
        Ok(Models { config, vocab, agent, vision, params })
    }

    /// Model config text as stored in checkpoints.
    pub fn config_text(&self) -> String {
        self.config.to_text()
    }

    pub fn checkpoint(&self, step: u64, adam: &AdamState, meta: Vec<(String, String)>) -> Checkpoint {
        Checkpoint {
            step,
            config: self.config_text(),
            vocab: self.vocab.to_lines().lines().map(str::to_string).collect(),
            meta,
            params: self.params.clone(),
            adam: adam.clone(),
        }
    }

    /// Rebuild the networks from a checkpoint; parameter names and shapes
    /// must match the stored config exactly.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Models, AdamState), TrainError> {
        let config = ModelConfig::read(&KvConfig::parse(&ck.config)?, ModelConfig::desk())?;
        let vocab = Vocabulary::from_lines(&ck.vocab.join("\n")).map_err(TrainError::Config)?;
        let mut m = Models::new(config, vocab, 0)?;
        if m.params.len() != ck.params.len() {
            return Err(TrainError::Config(format!("checkpoint has {} parameters, config implies {}", ck.params.len(), m.params.len())));
        }
        for id in m.params.ids() {
            let (name, shape) = (m.params.name(id), m.params.shape(id));
            if ck.params.find(name) != Some(id) || ck.params.shape(id) != shape {
                return Err(TrainError::Config(format!("checkpoint parameter {name} missing or reshaped")));
            }
        }
        m.params = ck.params.clone();
        Ok((m, ck.adam.clone()))
    }
}

/// Text a vocabulary should cover: sampled prompts for every kind, plus
/// the programs, answers and labels of `tasks`.
pub fn vocab_corpus(grammar: &Grammar, tasks: &[TaskInstance], prompts_per_kind: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = Vec::new();
    for kind in TaskKind::ALL {
        for _ in 0..prompts_per_kind {
            if let Ok(p) = grammar.expand(kind.key(), &[], &mut rng) {
                corpus.push(p);
            }
        }
    }
    for t in tasks {
        corpus.push(t.prompt.clone());
        corpus.extend(t.program.iter().cloned());
        corpus.push(t.answer.clone());
        for v in &t.volumes {
            corpus.push(v.meta.line());
        }
    }
    corpus
}

pub fn build_vocab(grammar: &Grammar, tasks: &[TaskInstance], max_size: usize) -> Vocabulary {
    Vocabulary::build(&vocab_corpus(grammar, tasks, 200, 0), max_size)
}
