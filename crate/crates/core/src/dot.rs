use std::fmt::Write as _;

use thiserror::Error;

use crate::sexpr::flat;
use crate::skeleton::{Node, Skeleton};
use crate::terms::Dir;

fn node_id(n: Node) -> String {
    format!("n{}_{}", n.strand, n.pos)
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

/// A strand diagram: one column cluster per strand, double-headed edges
/// between successive events of a strand, and single-headed edges for the
/// cross-strand precedence relation.
pub fn to_dot(sk: &Skeleton, title: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "digraph {} {{", quote(title));
    let _ = writeln!(out, "  rankdir=TB;");
    let _ = writeln!(out, "  node [shape=box, fontsize=10];");
    for (s, strand) in sk.strands.iter().enumerate() {
        let _ = writeln!(out, "  subgraph cluster_{s} {{");
        let _ = writeln!(out, "    label={};", quote(&format!("{} {}", sk.role_name(s), s)));
        for (p, ev) in strand.trace.iter().enumerate() {
            let sign = if ev.dir == Dir::Send { "+" } else { "-" };
            let label = format!("{sign} {}", flat(&ev.msg.to_sexpr()));
            let _ = writeln!(out, "    {} [label={}];", node_id(Node::new(s, p)), quote(&label));
        }
        for p in 1..strand.trace.len() {
            let _ = writeln!(
                out,
                "    {} -> {} [arrowhead=normalnormal];",
                node_id(Node::new(s, p - 1)),
                node_id(Node::new(s, p))
            );
        }
        let _ = writeln!(out, "  }}");
    }
    for (a, b) in &sk.precedes {
        let _ = writeln!(out, "  {} -> {};", node_id(*a), node_id(*b));
    }
    out.push_str("}\n");
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    Id(String),
    Punct(char),
    EdgeOp(&'static str),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DotError {
    #[error("unexpected character {0:?} at byte {1}")]
    BadChar(char, usize),
    #[error("unterminated string")]
    Unterminated,
    #[error("syntax error at token {0}: {1}")]
    Syntax(usize, String),
}

pub fn tokenize(text: &str) -> Result<Vec<Token>, DotError> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut i = 0;
    let mut out = Vec::new();
    while i < chars.len() {
        let (at, c) = chars[i];
        match c {
            _ if c.is_whitespace() => i += 1,
            '{' | '}' | '[' | ']' | ';' | '=' | ',' | ':' => {
                out.push(Token::Punct(c));
                i += 1;
            }
            '-' if matches!(chars.get(i + 1), Some((_, '>'))) => {
                out.push(Token::EdgeOp("->"));
                i += 2;
            }
            '-' if matches!(chars.get(i + 1), Some((_, '-'))) => {
                out.push(Token::EdgeOp("--"));
                i += 2;
            }
            '"' => {
                let mut s = String::new();
                i += 1;
                loop {
                    let Some(&(_, d)) = chars.get(i) else { return Err(DotError::Unterminated) };
                    i += 1;
                    match d {
                        '"' => break,
                        '\\' => {
                            let Some(&(_, e)) = chars.get(i) else { return Err(DotError::Unterminated) };
                            if e != '"' {
                                s.push('\\');
                            }
                            s.push(e);
                            i += 1;
                        }
                        _ => s.push(d),
                    }
                }
                out.push(Token::Id(s));
            }
            _ if c.is_alphanumeric() || c == '_' || c == '.' || c == '-' => {
                let start = i;
                while i < chars.len() && (chars[i].1.is_alphanumeric() || chars[i].1 == '_' || chars[i].1 == '.') {
                    i += 1;
                }
                if i == start {
                    i += 1;
                }
                out.push(Token::Id(chars[start..i].iter().map(|p| p.1).collect()));
            }
            _ => return Err(DotError::BadChar(c, at)),
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: &'a [Token],
    pos: usize,
    directed: bool,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos)
    }

    fn err(&self, what: &str) -> DotError {
        DotError::Syntax(self.pos, what.to_string())
    }

    fn punct(&mut self, c: char) -> Result<(), DotError> {
        if self.peek() == Some(&Token::Punct(c)) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected {c:?}")))
        }
    }

    fn eat_punct(&mut self, c: char) -> bool {
        self.punct(c).is_ok()
    }

    fn id(&mut self) -> Result<String, DotError> {
        match self.peek() {
            Some(Token::Id(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.err("expected identifier")),
        }
    }

    fn keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Token::Id(s)) if s.eq_ignore_ascii_case(kw))
    }

    fn graph(&mut self) -> Result<(), DotError> {
        if self.keyword("strict") {
            self.pos += 1;
        }
        if self.keyword("digraph") {
            self.directed = true;
        } else if !self.keyword("graph") {
            return Err(self.err("expected graph or digraph"));
        }
        self.pos += 1;
        if matches!(self.peek(), Some(Token::Id(_))) {
            self.pos += 1;
        }
        self.punct('{')?;
        self.stmt_list()?;
        self.punct('}')?;
        if self.pos != self.toks.len() {
            return Err(self.err("trailing tokens"));
        }
        Ok(())
    }

    fn stmt_list(&mut self) -> Result<(), DotError> {
        while !matches!(self.peek(), Some(Token::Punct('}')) | None) {
            self.stmt()?;
            self.eat_punct(';');
        }
        Ok(())
    }

    fn attr_list(&mut self) -> Result<(), DotError> {
        while self.eat_punct('[') {
            while !self.eat_punct(']') {
                self.id()?;
                if self.eat_punct('=') {
                    self.id()?;
                }
                if !self.eat_punct(',') {
                    self.eat_punct(';');
                }
            }
        }
        Ok(())
    }

    fn subgraph(&mut self) -> Result<(), DotError> {
        if self.keyword("subgraph") {
            self.pos += 1;
            if matches!(self.peek(), Some(Token::Id(_))) {
                self.pos += 1;
            }
        }
        self.punct('{')?;
        self.stmt_list()?;
        self.punct('}')
    }

    fn endpoint(&mut self) -> Result<(), DotError> {
        if self.keyword("subgraph") || self.peek() == Some(&Token::Punct('{')) {
            return self.subgraph();
        }
        self.id()?;
        if self.eat_punct(':') {
            self.id()?;
            if self.eat_punct(':') {
                self.id()?;
            }
        }
        Ok(())
    }

    fn stmt(&mut self) -> Result<(), DotError> {
        if self.keyword("graph") || self.keyword("node") || self.keyword("edge") {
            self.pos += 1;
            return self.attr_list();
        }
        let is_id = matches!(self.peek(), Some(Token::Id(_))) && !self.keyword("subgraph");
        if is_id && self.toks.get(self.pos + 1) == Some(&Token::Punct('=')) {
            self.pos += 2;
            self.id()?;
            return Ok(());
        }
        self.endpoint()?;
        let want = if self.directed { "->" } else { "--" };
        while let Some(Token::EdgeOp(op)) = self.peek() {
            if *op != want {
                return Err(self.err("edge operator does not match graph kind"));
            }
            self.pos += 1;
            self.endpoint()?;
        }
        self.attr_list()
    }
}

/// Check text against the DOT grammar (no HTML labels or ports beyond
/// `id:port:compass`).
pub fn check_syntax(text: &str) -> Result<(), DotError> {
    let toks = tokenize(text)?;
    Parser { toks: &toks, pos: 0, directed: false }.graph()
}
