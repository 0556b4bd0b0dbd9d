//! Recursive prompt grammar.
//!
//! ```text
//! # comment
//! @segment = Segment the {target}. | Outline the {target} on this {scan}.
//! scan = scan | image | {modality} scan
//! target@lesion = lesion | {adj} lesion
//! ```
//!
//! `@kind` lines are the templates of a task kind. `name@variant` choice
//! sets are selected by a binding `name -> variant`; unbound, any variant
//! may be used. Repeated names add alternatives.

use rand::Rng;
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

pub const MAX_DEPTH: usize = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GrammarError {
    #[error("grammar line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("no choice set for placeholder {{{0}}}")]
    MissingRule(String),
    #[error("no templates for task kind {0}")]
    UnknownKind(String),
    #[error("placeholder expansion exceeded depth {0}")]
    Recursion(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Part {
    Lit(String),
    Ref(String),
}

type Alt = Vec<Part>;

#[derive(Clone, Debug, Default)]
pub struct Grammar {
    rules: BTreeMap<String, Vec<Alt>>,
}

const SHIPPED: &str = include_str!("grammar.txt");

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == b'_')
}

fn parse_alt(text: &str, line: usize) -> Result<Alt, GrammarError> {
    let mut parts = Vec::new();
    let mut rest = text;
    while let Some(i) = rest.find(['{', '}']) {
        if rest.as_bytes()[i] == b'}' {
            return Err(GrammarError::Syntax { line, msg: "unmatched '}'".into() });
        }
        if i > 0 {
            parts.push(Part::Lit(rest[..i].to_string()));
        }
        let close = rest[i..].find('}').ok_or(GrammarError::Syntax { line, msg: "unclosed '{'".into() })? + i;
        let name = &rest[i + 1..close];
        if !valid_name(name) {
            return Err(GrammarError::Syntax { line, msg: format!("bad placeholder {{{name}}}") });
        }
        parts.push(Part::Ref(name.to_string()));
        rest = &rest[close + 1..];
    }
    if !rest.is_empty() {
        parts.push(Part::Lit(rest.to_string()));
    }
    if parts.is_empty() {
        return Err(GrammarError::Syntax { line, msg: "empty alternative".into() });
    }
    Ok(parts)
}

impl Grammar {
    pub fn parse(text: &str) -> Result<Grammar, GrammarError> {
        let mut g = Grammar::default();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let l = raw.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let (lhs, rhs) = l.split_once(" = ").ok_or(GrammarError::Syntax { line, msg: "expected 'name = alternatives'".into() })?;
            let lhs = lhs.trim();
            let ok = match lhs.strip_prefix('@') {
                Some(kind) => valid_name(kind),
                None => match lhs.split_once('@') {
                    Some((a, b)) => valid_name(a) && valid_name(b),
                    None => valid_name(lhs),
                },
            };
            if !ok {
                return Err(GrammarError::Syntax { line, msg: format!("bad rule name {lhs:?}") });
            }
            let alts = rhs.split(" | ").map(|a| parse_alt(a.trim(), line)).collect::<Result<Vec<_>, _>>()?;
            g.rules.entry(lhs.to_string()).or_default().extend(alts);
        }
        for alts in g.rules.values() {
            for p in alts.iter().flatten() {
                if let Part::Ref(r) = p {
                    if g.choices(r, None).is_empty() {
                        return Err(GrammarError::MissingRule(r.clone()));
                    }
                }
            }
        }
        Ok(g)
    }

    /// The grammar shipped with the crate.
    pub fn shipped() -> Grammar {
        Grammar::parse(SHIPPED).expect("shipped grammar is well-formed")
    }

    pub fn kinds(&self) -> Vec<&str> {
        self.rules.keys().filter_map(|k| k.strip_prefix('@')).collect()
    }

    /// Number of distinct literal alternatives (alternatives without
    /// placeholders).
    pub fn leaf_count(&self) -> usize {
        self.rules.values().flatten().filter(|a| a.iter().all(|p| matches!(p, Part::Lit(_)))).count()
    }

    /// Variants available for a placeholder, e.g. the `lesion` in
    /// `target@lesion`.
    pub fn variants(&self, name: &str) -> Vec<&str> {
        let prefix = format!("{name}@");
        self.rules.keys().filter_map(|k| k.strip_prefix(&prefix)).collect()
    }

    fn choices(&self, name: &str, binding: Option<&str>) -> Vec<&Alt> {
        if let Some(v) = binding {
            return self.rules.get(&format!("{name}@{v}")).map(|a| a.iter().collect()).unwrap_or_default();
        }
        if let Some(a) = self.rules.get(name) {
            return a.iter().collect();
        }
        let prefix = format!("{name}@");
        self.rules.iter().filter(|(k, _)| k.starts_with(&prefix)).flat_map(|(_, a)| a).collect()
    }

    /// Sample a template of `kind` and fill every placeholder recursively.
    pub fn expand(&self, kind: &str, bindings: &[(&str, &str)], rng: &mut impl Rng) -> Result<String, GrammarError> {
        let templates = self.rules.get(&format!("@{kind}")).ok_or_else(|| GrammarError::UnknownKind(kind.into()))?;
        let t = &templates[rng.random_range(0..templates.len())];
        let mut out = String::new();
        self.fill(t, bindings, rng, 0, &mut out)?;
        Ok(out)
    }

    fn fill(&self, alt: &Alt, bindings: &[(&str, &str)], rng: &mut impl Rng, depth: usize, out: &mut String) -> Result<(), GrammarError> {
        for p in alt {
            match p {
                Part::Lit(s) => out.push_str(s),
                Part::Ref(r) => {
                    if depth + 1 > MAX_DEPTH {
                        return Err(GrammarError::Recursion(MAX_DEPTH));
                    }
                    let bound = bindings.iter().find(|(k, _)| k == r).map(|(_, v)| *v);
                    let choices = self.choices(r, bound);
                    if choices.is_empty() {
                        return Err(GrammarError::MissingRule(match bound {
                            Some(v) => format!("{r}@{v}"),
                            None => r.clone(),
                        }));
                    }
                    let c = choices[rng.random_range(0..choices.len())];
                    self.fill(c, bindings, rng, depth + 1, out)?;
                }
            }
        }
        Ok(())
    }

    /// Whether some expansion of `kind` (any bindings) equals `text`.
    pub fn accepts(&self, kind: &str, text: &str) -> bool {
        let Some(templates) = self.rules.get(&format!("@{kind}")) else {
            return false;
        };
        let mut m = Matcher { g: self, text, memo: HashMap::new() };
        templates.iter().any(|t| m.seq(t, 0, 0).contains(&text.len()))
    }
}

struct Matcher<'a> {
    g: &'a Grammar,
    text: &'a str,
    memo: HashMap<(String, usize, usize), Vec<usize>>,
}

impl Matcher<'_> {
    /// End positions reachable by matching `alt` from `pos`.
    fn seq(&mut self, alt: &Alt, pos: usize, depth: usize) -> Vec<usize> {
        let mut cur = vec![pos];
        for p in alt {
            let mut next = Vec::new();
            for &c in &cur {
                match p {
                    Part::Lit(s) => {
                        if self.text[c..].starts_with(s.as_str()) {
                            next.push(c + s.len());
                        }
                    }
                    Part::Ref(r) => next.extend(self.rule(r, c, depth + 1)),
                }
            }
            next.sort_unstable();
            next.dedup();
            if next.is_empty() {
                return next;
            }
            cur = next;
        }
        cur
    }

    fn rule(&mut self, name: &str, pos: usize, depth: usize) -> Vec<usize> {
        if depth > MAX_DEPTH {
            return Vec::new();
        }
        let key = (name.to_string(), pos, depth);
        if let Some(v) = self.memo.get(&key) {
            return v.clone();
        }
        let g = self.g;
        let mut ends = Vec::new();
        for alt in g.choices(name, None) {
            ends.extend(self.seq(alt, pos, depth));
        }
        ends.sort_unstable();
        ends.dedup();
        self.memo.insert(key, ends.clone());
        ends
    }
}
