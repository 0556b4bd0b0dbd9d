//! Instruction language.
//!
//! ```text
//! program := stmt*
//! stmt    := [ident "="] ident "(" [arg ("," arg)*] ")"
//! arg     := ident | number | string | "<MOD>"
//! ident   := [a-z][a-z0-9_]*
//! ```
//!
//! Statements are separated by whitespace or newlines. Strings use double
//! quotes with `\"`, `\\` and `\n` escapes.

use std::fmt;
use thiserror::Error;

#[derive(Clone, Debug, PartialEq)]
pub enum Arg {
    Var(String),
    Number(f64),
    Str(String),
    /// 0-based ordinal of the `<MOD>` in textual order.
    ModSlot(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stmt {
    pub target: Option<String>,
    pub func: String,
    pub args: Vec<Arg>,
    pub line: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Program {
    pub stmts: Vec<Stmt>,
}

impl Program {
    pub fn mod_count(&self) -> usize {
        self.stmts.iter().flat_map(|s| &s.args).filter(|a| matches!(a, Arg::ModSlot(_))).count()
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("syntax error at line {line}, column {col}: {msg}")]
pub struct SyntaxError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
    mods: usize,
}

impl<'a> Lexer<'a> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T, SyntaxError> {
        Err(SyntaxError { line: self.line, col: self.col, msg: msg.into() })
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.peek()?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\n' | b'\r')) {
            self.bump();
        }
    }

    fn expect(&mut self, c: u8, what: &str) -> Result<(), SyntaxError> {
        self.skip_ws();
        match self.peek() {
            Some(x) if x == c => {
                self.bump();
                Ok(())
            }
            Some(x) => self.err(format!("expected {what}, found '{}'", x as char)),
            None => self.err(format!("expected {what}, found end of input")),
        }
    }

    fn ident(&mut self) -> Result<String, SyntaxError> {
        self.skip_ws();
        match self.peek() {
            Some(c) if c.is_ascii_lowercase() => {}
            Some(c) => return self.err(format!("expected identifier, found '{}'", c as char)),
            None => return self.err("expected identifier, found end of input"),
        }
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_lowercase() || c.is_ascii_digit() || c == b'_') {
            self.bump();
        }
        Ok(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
    }

    fn number(&mut self) -> Result<f64, SyntaxError> {
        let (line, col) = (self.line, self.col);
        let start = self.pos;
        if self.peek() == Some(b'-') {
            self.bump();
        }
        let digits = |l: &mut Self| {
            let s = l.pos;
            while matches!(l.peek(), Some(c) if c.is_ascii_digit()) {
                l.bump();
            }
            l.pos > s
        };
        if !digits(self) {
            return self.err("expected digits");
        }
        if self.peek() == Some(b'.') {
            self.bump();
            if !digits(self) {
                return self.err("expected digits after '.'");
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse().map_err(|_| SyntaxError { line, col, msg: format!("bad number {text}") })
    }

    fn string(&mut self) -> Result<String, SyntaxError> {
        self.bump();
        let mut out = Vec::new();
        loop {
            match self.bump() {
                None => return self.err("unterminated string"),
                Some(b'"') => break,
                Some(b'\\') => match self.bump() {
                    Some(b'"') => out.push(b'"'),
                    Some(b'\\') => out.push(b'\\'),
                    Some(b'n') => out.push(b'\n'),
                    _ => return self.err("bad escape in string"),
                },
                Some(c) => out.push(c),
            }
        }
        String::from_utf8(out).or_else(|_| self.err("string is not valid UTF-8"))
    }

    fn arg(&mut self) -> Result<Arg, SyntaxError> {
        self.skip_ws();
        match self.peek() {
            Some(b'"') => Ok(Arg::Str(self.string()?)),
            Some(b'<') => {
                if self.src[self.pos..].starts_with(b"<MOD>") {
                    for _ in 0..5 {
                        self.bump();
                    }
                    self.mods += 1;
                    Ok(Arg::ModSlot(self.mods - 1))
                } else {
                    self.err("expected <MOD>")
                }
            }
            Some(c) if c == b'-' || c.is_ascii_digit() => Ok(Arg::Number(self.number()?)),
            Some(c) if c.is_ascii_lowercase() => Ok(Arg::Var(self.ident()?)),
            Some(c) => self.err(format!("unexpected '{}' in argument list", c as char)),
            None => self.err("unexpected end of input in argument list"),
        }
    }

    fn stmt(&mut self) -> Result<Stmt, SyntaxError> {
        self.skip_ws();
        let line = self.line;
        let first = self.ident()?;
        self.skip_ws();
        let (target, func) = if self.peek() == Some(b'=') {
            self.bump();
            (Some(first), self.ident()?)
        } else {
            (None, first)
        };
        self.expect(b'(', "'('")?;
        let mut args = Vec::new();
        self.skip_ws();
        if self.peek() == Some(b')') {
            self.bump();
        } else {
            loop {
                args.push(self.arg()?);
                self.skip_ws();
                match self.peek() {
                    Some(b',') => {
                        self.bump();
                    }
                    Some(b')') => {
                        self.bump();
                        break;
                    }
                    Some(c) => return self.err(format!("expected ',' or ')', found '{}'", c as char)),
                    None => return self.err("unclosed '(' at end of input"),
                }
            }
        }
        Ok(Stmt { target, func, args, line })
    }
}

pub fn parse(text: &str) -> Result<Program, SyntaxError> {
    let mut lx = Lexer { src: text.as_bytes(), pos: 0, line: 1, col: 1, mods: 0 };
    let mut stmts = Vec::new();
    loop {
        lx.skip_ws();
        if lx.peek().is_none() {
            break;
        }
        stmts.push(lx.stmt()?);
    }
    Ok(Program { stmts })
}

impl fmt::Display for Arg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arg::Var(v) => f.write_str(v),
            Arg::Number(n) => write!(f, "{n}"),
            Arg::Str(s) => write!(f, "\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', "\\n")),
            Arg::ModSlot(_) => f.write_str("<MOD>"),
        }
    }
}

impl fmt::Display for Stmt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(t) = &self.target {
            write!(f, "{t} = ")?;
        }
        write!(f, "{}(", self.func)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str(")")
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.stmts.iter().enumerate() {
            if i > 0 {
                f.write_str("\n")?;
            }
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignment_with_mod() {
        let p = parse("e = encode(v1, <MOD>)").unwrap();
        assert_eq!(
            p.stmts,
            [Stmt { target: Some("e".into()), func: "encode".into(), args: vec![Arg::Var("v1".into()), Arg::ModSlot(0)], line: 1 }]
        );
    }

    #[test]
    fn bare_call_and_ordinals() {
        let p = parse("read(e)\ne2 = encode(v1, <MOD>, v2, <MOD>)\nstop()").unwrap();
        assert_eq!(p.stmts[0].target, None);
        assert_eq!(p.stmts[1].args[3], Arg::ModSlot(1));
        assert_eq!(p.stmts[2].line, 3);
        assert_eq!(p.mod_count(), 2);
    }

    #[test]
    fn unclosed_paren() {
        let e = parse("x = volume_of(m").unwrap_err();
        assert_eq!((e.line, e.col), (1, 16));
        let e = parse("read(e)\nx = f(1,,2)").unwrap_err();
        assert_eq!((e.line, e.col), (2, 9));
    }

    #[test]
    fn literals_and_display_roundtrip() {
        let src = "respond(\"growth is {0} \\\"mm3\\\"\", g, -2.5, 3)";
        let p = parse(src).unwrap();
        assert_eq!(p.stmts[0].args[0], Arg::Str("growth is {0} \"mm3\"".into()));
        assert_eq!(p.stmts[0].args[2], Arg::Number(-2.5));
        assert_eq!(parse(&p.to_string()).unwrap(), p);
    }

    #[test]
    fn identifiers_are_lowercase() {
        assert!(parse("X = f()").is_err());
        assert!(parse("_x = f()").is_err());
        assert!(parse("x_1 = f_2()").is_ok());
    }
}
