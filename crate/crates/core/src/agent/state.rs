use super::vocab::{Vocabulary, BOS, EOS_STEP, MOD, PAD};
use super::AgentError;
use crate::tensor::Var;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Prompt,
    Metadata,
    Instruction,
    Feedback,
}

/// One position of the state: a token to embed, or a ready-made `[1, d]`
/// embedding on the tape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Item {
    Token(usize),
    Vector(Var),
}

/// Acquisition metadata for one input volume.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VolumeMeta {
    pub name: String,
    pub modality: String,
    pub date: String,
}

impl VolumeMeta {
    pub fn new(name: &str, modality: &str, date: &str) -> Self {
        VolumeMeta { name: name.into(), modality: modality.into(), date: date.into() }
    }

    pub fn line(&self) -> String {
        format!("\nvol {}: modality={}, date={}", self.name, self.modality, self.date)
    }
}

/// The agent's input sequence with per-position provenance.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StateMu {
    items: Vec<Item>,
    tags: Vec<Provenance>,
}

impl StateMu {
    /// BOS, the prompt, then one metadata line per volume in input order.
    pub fn initial(vocab: &Vocabulary, prompt: &str, volumes: &[VolumeMeta], cap: usize) -> Result<Self, AgentError> {
        if prompt.is_empty() {
            return Err(AgentError::EmptyPrompt);
        }
        let mut s = StateMu::default();
        s.push_tokens(&[BOS], Provenance::Prompt);
        s.push_tokens(&vocab.encode(prompt), Provenance::Prompt);
        for v in volumes {
            s.push_tokens(&vocab.encode(&v.line()), Provenance::Metadata);
        }
        s.check(cap)?;
        Ok(s)
    }

    fn push_tokens(&mut self, ids: &[usize], tag: Provenance) {
        self.items.extend(ids.iter().map(|&i| Item::Token(i)));
        self.tags.extend(std::iter::repeat_n(tag, ids.len()));
    }

    fn check(&self, cap: usize) -> Result<(), AgentError> {
        if self.items.len() > cap {
            return Err(AgentError::StateOverflow { len: self.items.len(), cap });
        }
        Ok(())
    }

    /// `μ ∥ η ∥ z`. `eta` are instruction token ids (slot positions after
    /// MOD already filled with PAD); `z` is the feedback.
    pub fn append(&self, eta: &[usize], z: &[Item], cap: usize) -> Result<StateMu, AgentError> {
        let mut s = self.clone();
        s.push_tokens(eta, Provenance::Instruction);
        s.items.extend_from_slice(z);
        s.tags.extend(std::iter::repeat_n(Provenance::Feedback, z.len()));
        s.check(cap)?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn tags(&self) -> &[Provenance] {
        &self.tags
    }
}

/// Instruction ids for one step of code: MOD is followed by a PAD slot and
/// the step ends with EOS_STEP.
pub fn instruction_tokens(vocab: &Vocabulary, code: &str) -> Vec<usize> {
    let mut out = Vec::new();
    for id in vocab.encode_code(code) {
        out.push(id);
        if id == MOD {
            out.push(PAD);
        }
    }
    out.push(EOS_STEP);
    out
}

/// Code text of emitted ids: slot tokens after MOD and EOS_STEP dropped.
pub fn code_text(vocab: &Vocabulary, emitted: &[usize]) -> String {
    let mut keep = Vec::with_capacity(emitted.len());
    let mut after_mod = false;
    for &id in emitted {
        if after_mod {
            after_mod = false;
            continue;
        }
        if id == EOS_STEP {
            break;
        }
        after_mod = id == MOD;
        keep.push(id);
    }
    vocab.decode(&keep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::build(&["segment the lesion", "e = encode(v1, <MOD>)"], 512)
    }

    #[test]
    fn initial_lengths() {
        let v = vocab();
        let s = StateMu::initial(&v, "segment the lesion", &[], 1024).unwrap();
        assert_eq!(s.len(), 1 + v.encode("segment the lesion").len());
        let metas = [VolumeMeta::new("v1", "t1", "2021-03-04"), VolumeMeta::new("v2", "flair", "2022-03-04")];
        let s2 = StateMu::initial(&v, "segment the lesion", &metas, 1024).unwrap();
        let l1 = v.encode(&metas[0].line()).len();
        assert_eq!(s2.tags().iter().filter(|t| **t == Provenance::Metadata).count(), l1 + v.encode(&metas[1].line()).len());
        assert_eq!(s2, StateMu::initial(&v, "segment the lesion", &metas, 1024).unwrap());
        assert!(matches!(StateMu::initial(&v, "", &[], 1024), Err(AgentError::EmptyPrompt)));
    }

    #[test]
    fn append_concatenates() {
        let v = vocab();
        let s = StateMu::initial(&v, "segment", &[], 1024).unwrap();
        let eta = instruction_tokens(&v, "e = encode(v1, <MOD>)");
        let t = s.append(&eta, &[], 1024).unwrap();
        assert_eq!(t.len(), s.len() + eta.len());
        assert_eq!(&t.items()[..s.len()], s.items());
        assert!(matches!(s.append(&eta, &[], s.len() + 1), Err(AgentError::StateOverflow { .. })));
    }

    #[test]
    fn slots_are_dropped_from_code() {
        let v = vocab();
        let code = "e = encode(v1, <MOD>)";
        let mut emitted = instruction_tokens(&v, code);
        let slot = emitted.iter().position(|&i| i == MOD).unwrap() + 1;
        emitted[slot] = v.id_of(" lesion").unwrap();
        assert_eq!(code_text(&v, &emitted), code);
    }
}
