//! Word-level vocabulary with character and byte fallback.
//!
//! Text is split into pieces: an optional single leading space followed by
//! a run of ASCII letters/underscores, a single digit, or a single other
//! character. Known pieces map to one id; unknown pieces decompose into
//! single-character tokens, and characters outside printable ASCII into
//! byte tokens, so tokenization never fails and always round-trips.

use std::collections::HashMap;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS_STEP: usize = 2;
pub const MOD: usize = 3;

pub const MOD_TEXT: &str = "<MOD>";
const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<mod>"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    index: HashMap<Token, usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum Token {
    Special(usize),
    Text(String),
    Byte(u8),
}

fn covered_char(c: char) -> bool {
    c == '\n' || c == '\t' || (' '..='~').contains(&c)
}

fn is_word(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

/// Split text into pieces (see module docs). Concatenating the pieces
/// reproduces the input.
pub fn pieces(text: &str) -> Vec<&str> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < text.len() {
        let start = i;
        if b[i] == b' ' && i + 1 < b.len() && b[i + 1] != b' ' && b[i + 1] != b'\n' {
            i += 1;
        }
        let c = text[i..].chars().next().unwrap();
        if is_word(c) {
            while i < b.len() && is_word(b[i] as char) {
                i += 1;
            }
        } else {
            i += c.len_utf8();
        }
        out.push(&text[start..i]);
    }
    out
}

impl Vocabulary {
    /// Build from a corpus. Multi-character ASCII pieces are ranked by
    /// frequency (ties broken lexicographically) and kept while the total
    /// size stays within `max_size`.
    pub fn build<S: AsRef<str>>(corpus: &[S], max_size: usize) -> Vocabulary {
        let mut tokens: Vec<Token> = (0..SPECIALS.len()).map(Token::Special).collect();
        for c in ('\t'..='\t').chain('\n'..='\n').chain(' '..='~') {
            tokens.push(Token::Text(c.to_string()));
        }
        for byte in 0u8..=255 {
            if !(byte < 0x80 && covered_char(byte as char)) {
                tokens.push(Token::Byte(byte));
            }
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for line in corpus {
            for p in pieces(line.as_ref()) {
                if p.len() > 1 && p.chars().all(covered_char) {
                    *counts.entry(p).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let room = max_size.saturating_sub(tokens.len());
        tokens.extend(ranked.into_iter().take(room).map(|(p, _)| Token::Text(p.to_string())));
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<Token>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id_of(&self, piece: &str) -> Option<usize> {
        self.index.get(&Token::Text(piece.to_string())).copied()
    }

    /// Tokenize plain text; never produces special ids.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        let mut out = Vec::new();
        for p in pieces(text) {
            if let Some(id) = self.id_of(p) {
                out.push(id);
                continue;
            }
            for c in p.chars() {
                if covered_char(c) {
                    out.push(self.index[&Token::Text(c.to_string())]);
                } else {
                    let mut buf = [0u8; 4];
                    out.extend(c.encode_utf8(&mut buf).bytes().map(|b| self.index[&Token::Byte(b)]));
                }
            }
        }
        out
    }

    /// Tokenize instruction code: every literal `<MOD>` becomes the MOD id.
    pub fn encode_code(&self, code: &str) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, part) in code.split(MOD_TEXT).enumerate() {
            if i > 0 {
                out.push(MOD);
            }
            out.extend(self.encode(part));
        }
        out
    }

    /// Inverse of [`Vocabulary::encode`] / [`Vocabulary::encode_code`];
    /// MOD renders as `<MOD>`, other specials as nothing.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut bytes = Vec::new();
        for &id in ids {
            match self.tokens.get(id) {
                Some(Token::Text(s)) => bytes.extend_from_slice(s.as_bytes()),
                Some(Token::Byte(b)) => bytes.push(*b),
                Some(Token::Special(MOD)) => bytes.extend_from_slice(MOD_TEXT.as_bytes()),
                _ => {}
            }
        }
        String::from_utf8_lossy(&bytes).into_owned()
    }

    /// One token per line, id = line number. Specials and bytes use
    /// `<...>` forms; text escapes `\`, newline and tab.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            match t {
                Token::Special(i) => out.push_str(SPECIALS[*i]),
                Token::Byte(b) => out.push_str(&format!("<0x{b:02X}>")),
                Token::Text(s) => {
                    out.push('=');
                    out.push_str(&s.replace('\\', "\\\\").replace('\n', "\\n").replace('\t', "\\t"));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_lines(text: &str) -> Result<Self, String> {
        let mut tokens = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let tok = if let Some(rest) = line.strip_prefix('=') {
                let mut s = String::new();
                let mut chars = rest.chars();
                while let Some(c) = chars.next() {
                    if c == '\\' {
                        match chars.next() {
                            Some('n') => s.push('\n'),
                            Some('t') => s.push('\t'),
                            Some('\\') => s.push('\\'),
                            other => return Err(format!("line {}: bad escape {other:?}", n + 1)),
                        }
                    } else {
                        s.push(c);
                    }
                }
                Token::Text(s)
            } else if let Some(i) = SPECIALS.iter().position(|s| *s == line) {
                Token::Special(i)
            } else if let Some(hex) = line.strip_prefix("<0x").and_then(|r| r.strip_suffix('>')) {
                Token::Byte(u8::from_str_radix(hex, 16).map_err(|e| format!("line {}: {e}", n + 1))?)
            } else {
                return Err(format!("line {}: unrecognised token {line:?}", n + 1));
            };
            tokens.push(tok);
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if tokens.get(i) != Some(&Token::Special(i)) {
                return Err(format!("special {s} must have id {i}"));
            }
        }
        let v = Self::from_tokens(tokens);
        if v.index.len() != v.tokens.len() {
            return Err("duplicate tokens".into());
        }
        Ok(v)
    }

    /// Printable form of one token, for traces.
    pub fn display(&self, id: usize) -> String {
        match self.tokens.get(id) {
            Some(Token::Special(i)) => SPECIALS[*i].to_string(),
            Some(Token::Byte(b)) => format!("<0x{b:02X}>"),
            Some(Token::Text(s)) => format!("{s:?}"),
            None => format!("<unk {id}>"),
        }
    }
}
