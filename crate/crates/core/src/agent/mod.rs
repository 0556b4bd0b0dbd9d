//! The language agent: vocabulary, state construction and greedy
//! instruction decoding with the latent modulation channel.
//!
//! Code containing `<MOD>` is tokenized with the MOD special followed by a
//! slot position. The hidden state at the MOD input (the one that predicts
//! the slot) is projected to a φ vector; whatever token the slot receives
//! is not part of the code text.

mod model;
mod state;
pub mod vocab;

pub use model::{AgentConfig, AgentNet, DecodeResult};
pub use state::{code_text, instruction_tokens, Item, Provenance, StateMu, VolumeMeta};
pub use vocab::Vocabulary;

use crate::tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("state length {len} exceeds the cap of {cap}")]
    StateOverflow { len: usize, cap: usize },
    #[error("feedback vector has shape {got:?}, expected [1, {expected}]")]
    VectorWidth { expected: usize, got: Vec<usize> },
    #[error("invalid agent config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[cfg(test)]
mod tests {
    use super::vocab::{EOS_STEP, MOD};
    use super::*;
    use crate::tensor::{ParamStore, Tape, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (Vocabulary, AgentNet, ParamStore) {
        let vocab = Vocabulary::build(&["segment the lesion", "e = encode(v1, <MOD>)\nread(e)"], 512);
        let mut store = ParamStore::new();
        let cfg = AgentConfig { step_cap: 20, ..AgentConfig::desk() };
        let net = AgentNet::new(cfg, vocab.len(), &mut store, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        (vocab, net, store)
    }

    fn force(store: &mut ParamStore, token: usize) {
        let nf = store.find("agent.norm_f").unwrap();
        store.get_mut(nf).iter_mut().for_each(|v| *v = 0.0);
        let hb = store.find("agent.head.b").unwrap();
        store.get_mut(hb)[token] = 1.0;
    }

    #[test]
    fn greedy_is_deterministic() {
        let (vocab, net, store) = setup();
        let mu = StateMu::initial(&vocab, "segment the lesion", &[VolumeMeta::new("v1", "t1", "2020-01-01")], 1024).unwrap();
        let run = || {
            let mut tape = Tape::new();
            let p = store.bind_frozen(&mut tape);
            let r = net.decode_step(&mut tape, &p, &vocab, &mu).unwrap();
            (r.emitted, r.phi.iter().map(|&v| tape.data(v).to_vec()).collect::<Vec<_>>())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn phi_count_matches_mod_count() {
        let (vocab, net, mut store) = setup();
        force(&mut store, MOD);
        let mu = StateMu::initial(&vocab, "segment", &[], 1024).unwrap();
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let r = net.decode_step(&mut tape, &p, &vocab, &mu).unwrap();
        assert!(r.truncated);
        assert_eq!(r.emitted.len(), 20);
        assert_eq!(r.phi.len(), 10);
        assert_eq!(r.phi.len(), r.eta.iter().filter(|&&t| t == MOD).count());
        assert_eq!(r.code, "<MOD>".repeat(10));
        assert_eq!(tape.shape(r.phi[0]), [1, 8]);
    }

    #[test]
    fn no_mod_means_no_phi() {
        let (vocab, net, mut store) = setup();
        force(&mut store, EOS_STEP);
        let mu = StateMu::initial(&vocab, "segment", &[], 1024).unwrap();
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let r = net.decode_step(&mut tape, &p, &vocab, &mu).unwrap();
        assert!(!r.truncated);
        assert!(r.phi.is_empty());
        assert_eq!(r.code, "");
    }

    #[test]
    fn feedback_vectors_enter_directly() {
        let (vocab, net, store) = setup();
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let mu = StateMu::initial(&vocab, "segment", &[], 1024).unwrap();
        let z = tape.constant(Tensor::new(vec![1, 64], vec![0.5; 64]).unwrap());
        let mu2 = mu.append(&[], &[Item::Vector(z)], 1024).unwrap();
        let h = net.forward(&mut tape, &p, mu2.items()).unwrap();
        assert_eq!(tape.shape(h), [mu.len() + 1, 64]);
        let bad = tape.constant(Tensor::new(vec![1, 3], vec![0.0; 3]).unwrap());
        assert!(matches!(net.embed(&mut tape, &p, &[Item::Vector(bad)]), Err(AgentError::VectorWidth { .. })));
    }
}
