use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone)]
pub enum Kind {
    Symbol(String),
    Str(String),
    Int(i64),
    List(Vec<SExpr>),
}

/// Equality ignores source positions.
#[derive(Debug, Clone)]
pub struct SExpr {
    pub kind: Kind,
    pub pos: Pos,
}

impl PartialEq for SExpr {
    fn eq(&self, other: &Self) -> bool {
        match (&self.kind, &other.kind) {
            (Kind::Symbol(a), Kind::Symbol(b)) => a == b,
            (Kind::Str(a), Kind::Str(b)) => a == b,
            (Kind::Int(a), Kind::Int(b)) => a == b,
            (Kind::List(a), Kind::List(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for SExpr {}

impl SExpr {
    pub fn sym(s: impl Into<String>) -> SExpr {
        SExpr { kind: Kind::Symbol(s.into()), pos: Pos::default() }
    }

    pub fn string(s: impl Into<String>) -> SExpr {
        SExpr { kind: Kind::Str(s.into()), pos: Pos::default() }
    }

    pub fn int(n: i64) -> SExpr {
        SExpr { kind: Kind::Int(n), pos: Pos::default() }
    }

    pub fn list(items: Vec<SExpr>) -> SExpr {
        SExpr { kind: Kind::List(items), pos: Pos::default() }
    }

    pub fn as_symbol(&self) -> Option<&str> {
        match &self.kind {
            Kind::Symbol(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[SExpr]> {
        match &self.kind {
            Kind::List(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match &self.kind {
            Kind::Int(n) => Some(*n),
            _ => None,
        }
    }

    /// The head symbol of a non-empty list whose first element is a symbol.
    pub fn head(&self) -> Option<&str> {
        self.as_list().and_then(|l| l.first()).and_then(|h| h.as_symbol())
    }

    /// Arguments after the head of a list form.
    pub fn tail(&self) -> &[SExpr] {
        match self.as_list() {
            Some(l) if !l.is_empty() => &l[1..],
            _ => &[],
        }
    }

    pub fn is_form(&self, name: &str) -> bool {
        self.head() == Some(name)
    }
}

impl fmt::Display for SExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&flat(self))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReadError {
    #[error("{pos}: unbalanced close parenthesis")]
    UnexpectedClose { pos: Pos },
    #[error("{pos}: list opened here is never closed")]
    Unclosed { pos: Pos },
    #[error("{pos}: unterminated string")]
    UnterminatedString { pos: Pos },
    #[error("{pos}: illegal character {ch:?}")]
    IllegalChar { pos: Pos, ch: char },
}

impl ReadError {
    pub fn pos(&self) -> Pos {
        match self {
            ReadError::UnexpectedClose { pos }
            | ReadError::Unclosed { pos }
            | ReadError::UnterminatedString { pos }
            | ReadError::IllegalChar { pos, .. } => *pos,
        }
    }
}

struct Reader<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    col: usize,
}

impl<'a> Reader<'a> {
    fn pos(&self) -> Pos {
        Pos { line: self.line, col: self.col }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn skip_space(&mut self) {
        while let Some(&c) = self.chars.peek() {
            if c.is_whitespace() {
                self.bump();
            } else if c == ';' {
                while let Some(c) = self.bump() {
                    if c == '\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn read(&mut self) -> Result<Option<SExpr>, ReadError> {
        self.skip_space();
        let pos = self.pos();
        let Some(&c) = self.chars.peek() else {
            return Ok(None);
        };
        match c {
            '(' => {
                self.bump();
                let mut items = Vec::new();
                loop {
                    self.skip_space();
                    match self.chars.peek() {
                        None => return Err(ReadError::Unclosed { pos }),
                        Some(')') => {
                            self.bump();
                            return Ok(Some(SExpr { kind: Kind::List(items), pos }));
                        }
                        Some(_) => {
                            let item = self.read()?.expect("peeked a character");
                            items.push(item);
                        }
                    }
                }
            }
            ')' => Err(ReadError::UnexpectedClose { pos }),
            '"' => {
                self.bump();
                let mut s = String::new();
                loop {
                    match self.bump() {
                        None => return Err(ReadError::UnterminatedString { pos }),
                        Some('"') => break,
                        Some('\\') => match self.bump() {
                            None => return Err(ReadError::UnterminatedString { pos }),
                            Some(e) => s.push(e),
                        },
                        Some(ch) => s.push(ch),
                    }
                }
                Ok(Some(SExpr { kind: Kind::Str(s), pos }))
            }
            _ => {
                let mut s = String::new();
                while let Some(&ch) = self.chars.peek() {
                    if ch.is_whitespace() || ch == '(' || ch == ')' || ch == ';' {
                        break;
                    }
                    if ch == '"' || ch.is_control() {
                        return Err(ReadError::IllegalChar { pos: self.pos(), ch });
                    }
                    s.push(ch);
                    self.bump();
                }
                let kind = match parse_int(&s) {
                    Some(n) => Kind::Int(n),
                    None => Kind::Symbol(s),
                };
                Ok(Some(SExpr { kind, pos }))
            }
        }
    }
}

fn parse_int(s: &str) -> Option<i64> {
    let digits = s.strip_prefix('-').unwrap_or(s);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

pub fn read_all(text: &str) -> Result<Vec<SExpr>, ReadError> {
    let mut r = Reader { chars: text.chars().peekable(), line: 1, col: 1 };
    let mut out = Vec::new();
    while let Some(e) = r.read()? {
        out.push(e);
    }
    Ok(out)
}

fn atom_text(e: &SExpr) -> String {
    match &e.kind {
        Kind::Symbol(s) => s.clone(),
        Kind::Int(n) => n.to_string(),
        Kind::Str(s) => {
            let mut out = String::with_capacity(s.len() + 2);
            out.push('"');
            for ch in s.chars() {
                if ch == '"' || ch == '\\' {
                    out.push('\\');
                }
                out.push(ch);
            }
            out.push('"');
            out
        }
        Kind::List(_) => unreachable!("not an atom"),
    }
}

/// Single-line rendering.
pub fn flat(e: &SExpr) -> String {
    let mut out = String::new();
    write_flat(e, &mut out);
    out
}

fn write_flat(e: &SExpr, out: &mut String) {
    match &e.kind {
        Kind::List(items) => {
            out.push('(');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                write_flat(item, out);
            }
            out.push(')');
        }
        _ => out.push_str(&atom_text(e)),
    }
}

fn flat_len(e: &SExpr) -> usize {
    match &e.kind {
        Kind::List(items) => {
            2 + items.iter().map(flat_len).sum::<usize>() + items.len().saturating_sub(1)
        }
        _ => atom_text(e).chars().count(),
    }
}

/// Pretty-print with a fill layout: children stay on the current line while
/// they fit, otherwise a new line is started two columns in from the
/// enclosing open parenthesis.
pub fn write(e: &SExpr, width: usize) -> String {
    let mut out = String::new();
    let mut col = 0;
    layout(e, width.max(20), &mut col, &mut out);
    out
}

fn layout(e: &SExpr, width: usize, col: &mut usize, out: &mut String) {
    let len = flat_len(e);
    let items = match &e.kind {
        Kind::List(items) if *col + len > width && !items.is_empty() => items,
        _ => {
            write_flat(e, out);
            *col += len;
            return;
        }
    };
    let open = *col;
    out.push('(');
    *col += 1;
    let inner = open + 2;
    for (i, item) in items.iter().enumerate() {
        let ilen = flat_len(item);
        if i > 0 {
            // the closing parens of this list count against the last child
            let tail = if i + 1 == items.len() { 1 } else { 0 };
            let fits = *col + 1 + ilen + tail <= width;
            let lead_atom = i == 1 && !matches!(items[0].kind, Kind::List(_));
            if fits || (lead_atom && !matches!(item.kind, Kind::List(_))) {
                out.push(' ');
                *col += 1;
            } else {
                out.push('\n');
                out.extend(std::iter::repeat(' ').take(inner));
                *col = inner;
            }
        }
        layout(item, width, col, out);
    }
    out.push(')');
    *col += 1;
}

/// Render a sequence of top-level forms, separated by newlines.
pub fn write_forms(forms: &[SExpr], width: usize) -> String {
    let mut out = String::new();
    for f in forms {
        out.push_str(&write(f, width));
        out.push('\n');
    }
    out
}
