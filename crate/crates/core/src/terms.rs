use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::sexpr::{Kind, SExpr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sort {
    Mesg,
    Text,
    Data,
    Name,
    Skey,
    Akey,
}

impl Sort {
    /// Printing order used for variable declarations and maplets.
    pub const ALL: [Sort; 6] = [Sort::Mesg, Sort::Text, Sort::Data, Sort::Name, Sort::Skey, Sort::Akey];

    pub fn parse(s: &str) -> Option<Sort> {
        Some(match s {
            "mesg" => Sort::Mesg,
            "text" => Sort::Text,
            "data" => Sort::Data,
            "name" => Sort::Name,
            "skey" => Sort::Skey,
            "akey" => Sort::Akey,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Sort::Mesg => "mesg",
            Sort::Text => "text",
            Sort::Data => "data",
            Sort::Name => "name",
            Sort::Skey => "skey",
            Sort::Akey => "akey",
        }
    }

    pub fn is_base(self) -> bool {
        self != Sort::Mesg
    }
}

impl fmt::Display for Sort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var {
    pub name: Arc<str>,
    pub sort: Sort,
}

impl Var {
    pub fn new(name: &str, sort: Sort) -> Var {
        Var { name: Arc::from(name), sort }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Var(Var),
    Tag(Arc<str>),
    Pubk(Box<Term>),
    Privk(Box<Term>),
    Invk(Box<Term>),
    Ltk(Box<Term>, Box<Term>),
    Enc(Box<Term>, Box<Term>),
    Cat(Box<Term>, Box<Term>),
}

pub type Subst = BTreeMap<Var, Term>;

impl Term {
    pub fn var(name: &str, sort: Sort) -> Term {
        Term::Var(Var::new(name, sort))
    }

    pub fn tag(s: &str) -> Term {
        Term::Tag(Arc::from(s))
    }

    pub fn pubk(a: Term) -> Term {
        Term::Pubk(Box::new(a))
    }

    pub fn privk(a: Term) -> Term {
        Term::Privk(Box::new(a))
    }

    pub fn ltk(a: Term, b: Term) -> Term {
        Term::Ltk(Box::new(a), Box::new(b))
    }

    pub fn enc(body: Term, key: Term) -> Term {
        Term::Enc(Box::new(body), Box::new(key))
    }

    pub fn cat(a: Term, b: Term) -> Term {
        Term::Cat(Box::new(a), Box::new(b))
    }

    /// Right-associated concatenation of a non-empty list.
    pub fn cat_list(mut parts: Vec<Term>) -> Term {
        let mut acc = parts.pop().expect("cat of nothing");
        while let Some(p) = parts.pop() {
            acc = Term::cat(p, acc);
        }
        acc
    }

    /// Normalizing inverse constructor.
    pub fn invk(k: Term) -> Term {
        match k {
            Term::Invk(inner) => *inner,
            Term::Pubk(a) => Term::Privk(a),
            Term::Privk(a) => Term::Pubk(a),
            other => Term::Invk(Box::new(other)),
        }
    }

    pub fn sort(&self) -> Sort {
        match self {
            Term::Var(v) => v.sort,
            Term::Pubk(_) | Term::Privk(_) | Term::Invk(_) => Sort::Akey,
            Term::Ltk(..) => Sort::Skey,
            Term::Tag(_) | Term::Enc(..) | Term::Cat(..) => Sort::Mesg,
        }
    }

    pub fn is_atom(&self) -> bool {
        match self {
            Term::Var(v) => v.sort.is_base(),
            Term::Pubk(_) | Term::Privk(_) | Term::Invk(_) | Term::Ltk(..) => true,
            _ => false,
        }
    }

    pub fn as_var(&self) -> Option<&Var> {
        match self {
            Term::Var(v) => Some(v),
            _ => None,
        }
    }

    /// The key that opens an encryption made with `self`.
    pub fn decryption_key(&self) -> Term {
        if self.sort() == Sort::Akey {
            Term::invk(self.clone())
        } else {
            self.clone()
        }
    }

    pub fn carries(&self, t: &Term) -> bool {
        if self == t {
            return true;
        }
        match self {
            Term::Enc(b, _) => b.carries(t),
            Term::Cat(a, b) => a.carries(t) || b.carries(t),
            _ => false,
        }
    }

    /// Does `v` occur anywhere in the term (carried or not)?
    pub fn occurs(&self, v: &Var) -> bool {
        match self {
            Term::Var(w) => w == v,
            Term::Tag(_) => false,
            Term::Pubk(a) | Term::Privk(a) | Term::Invk(a) => a.occurs(v),
            Term::Ltk(a, b) | Term::Enc(a, b) | Term::Cat(a, b) => a.occurs(v) || b.occurs(v),
        }
    }

    pub fn vars_into(&self, out: &mut Vec<Var>) {
        match self {
            Term::Var(w) => {
                if !out.contains(w) {
                    out.push(w.clone())
                }
            }
            Term::Tag(_) => {}
            Term::Pubk(a) | Term::Privk(a) | Term::Invk(a) => a.vars_into(out),
            Term::Ltk(a, b) | Term::Enc(a, b) | Term::Cat(a, b) => {
                a.vars_into(out);
                b.vars_into(out);
            }
        }
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.vars_into(&mut out);
        out
    }

    /// Every subterm, including keys and the term itself.
    pub fn subterms_into(&self, out: &mut BTreeSet<Term>) {
        if !out.insert(self.clone()) {
            return;
        }
        match self {
            Term::Var(_) | Term::Tag(_) => {}
            Term::Pubk(a) | Term::Privk(a) | Term::Invk(a) => a.subterms_into(out),
            Term::Ltk(a, b) | Term::Enc(a, b) | Term::Cat(a, b) => {
                a.subterms_into(out);
                b.subterms_into(out);
            }
        }
    }

    /// The carried subterms, in left-to-right preorder.
    pub fn carried(&self) -> Vec<&Term> {
        let mut out = Vec::new();
        fn go<'a>(t: &'a Term, out: &mut Vec<&'a Term>) {
            out.push(t);
            match t {
                Term::Enc(b, _) => go(b, out),
                Term::Cat(a, b) => {
                    go(a, out);
                    go(b, out);
                }
                _ => {}
            }
        }
        go(self, &mut out);
        out
    }

    pub fn size(&self) -> usize {
        match self {
            Term::Var(_) | Term::Tag(_) => 1,
            Term::Pubk(a) | Term::Privk(a) | Term::Invk(a) => 1 + a.size(),
            Term::Ltk(a, b) | Term::Enc(a, b) | Term::Cat(a, b) => 1 + a.size() + b.size(),
        }
    }

    pub fn is_normal(&self) -> bool {
        match self {
            Term::Invk(k) => !matches!(**k, Term::Invk(_) | Term::Pubk(_) | Term::Privk(_)) && k.is_normal(),
            Term::Var(_) | Term::Tag(_) => true,
            Term::Pubk(a) | Term::Privk(a) => a.is_normal(),
            Term::Ltk(a, b) | Term::Enc(a, b) | Term::Cat(a, b) => a.is_normal() && b.is_normal(),
        }
    }

    /// Flattened elements of a right-nested concatenation.
    pub fn cat_elements(&self) -> Vec<&Term> {
        let mut out = Vec::new();
        let mut t = self;
        while let Term::Cat(a, b) = t {
            out.push(&**a);
            t = b;
        }
        out.push(t);
        out
    }

    pub fn to_sexpr(&self) -> SExpr {
        match self {
            Term::Var(v) => SExpr::sym(&*v.name),
            Term::Tag(s) => SExpr::string(&**s),
            Term::Pubk(a) => SExpr::list(vec![SExpr::sym("pubk"), a.to_sexpr()]),
            Term::Privk(a) => SExpr::list(vec![SExpr::sym("privk"), a.to_sexpr()]),
            Term::Invk(a) => SExpr::list(vec![SExpr::sym("invk"), a.to_sexpr()]),
            Term::Ltk(a, b) => SExpr::list(vec![SExpr::sym("ltk"), a.to_sexpr(), b.to_sexpr()]),
            Term::Enc(b, k) => {
                let mut items = vec![SExpr::sym("enc")];
                items.extend(b.cat_elements().into_iter().map(Term::to_sexpr));
                items.push(k.to_sexpr());
                SExpr::list(items)
            }
            Term::Cat(..) => {
                let mut items = vec![SExpr::sym("cat")];
                items.extend(self.cat_elements().into_iter().map(Term::to_sexpr));
                SExpr::list(items)
            }
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_sexpr())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TermError {
    #[error("{pos}: undeclared variable {name}")]
    Undeclared { name: String, pos: crate::sexpr::Pos },
    #[error("{pos}: {op} expects {expected}, got {got}")]
    SortClash { op: String, expected: String, got: String, pos: crate::sexpr::Pos },
    #[error("{pos}: malformed term {form}")]
    Malformed { form: String, pos: crate::sexpr::Pos },
}

/// Variable environment used when parsing terms.
pub trait VarScope {
    fn lookup(&self, name: &str) -> Option<Var>;
}

impl VarScope for BTreeMap<String, Sort> {
    fn lookup(&self, name: &str) -> Option<Var> {
        self.get(name).map(|s| Var::new(name, *s))
    }
}

impl VarScope for [Var] {
    fn lookup(&self, name: &str) -> Option<Var> {
        self.iter().find(|v| &*v.name == name).cloned()
    }
}

impl VarScope for Vec<Var> {
    fn lookup(&self, name: &str) -> Option<Var> {
        self.as_slice().lookup(name)
    }
}

fn expect_sort(t: Term, want: Sort, op: &str, e: &SExpr) -> Result<Term, TermError> {
    if t.sort() == want {
        Ok(t)
    } else {
        Err(TermError::SortClash {
            op: op.to_string(),
            expected: want.to_string(),
            got: format!("{} of sort {}", t, t.sort()),
            pos: e.pos,
        })
    }
}

pub fn parse_term(e: &SExpr, scope: &(impl VarScope + ?Sized)) -> Result<Term, TermError> {
    let malformed = || TermError::Malformed { form: e.to_string(), pos: e.pos };
    match &e.kind {
        Kind::Symbol(s) => scope
            .lookup(s)
            .map(Term::Var)
            .ok_or_else(|| TermError::Undeclared { name: s.clone(), pos: e.pos }),
        Kind::Str(s) => Ok(Term::tag(s)),
        Kind::Int(_) => Err(malformed()),
        Kind::List(items) => {
            let head = e.head().ok_or_else(malformed)?;
            let args = &items[1..];
            let arg = |i: usize| parse_term(&args[i], scope);
            match (head, args.len()) {
                ("pubk", 1) => Ok(Term::pubk(expect_sort(arg(0)?, Sort::Name, "pubk", &args[0])?)),
                ("privk", 1) => Ok(Term::privk(expect_sort(arg(0)?, Sort::Name, "privk", &args[0])?)),
                ("invk", 1) => Ok(Term::invk(expect_sort(arg(0)?, Sort::Akey, "invk", &args[0])?)),
                ("ltk", 2) => Ok(Term::ltk(
                    expect_sort(arg(0)?, Sort::Name, "ltk", &args[0])?,
                    expect_sort(arg(1)?, Sort::Name, "ltk", &args[1])?,
                )),
                ("enc", n) if n >= 2 => {
                    let parts = args[..n - 1].iter().map(|a| parse_term(a, scope)).collect::<Result<Vec<_>, _>>()?;
                    let key = arg(n - 1)?;
                    if !matches!(key.sort(), Sort::Skey | Sort::Akey | Sort::Mesg) || matches!(key, Term::Enc(..) | Term::Cat(..) | Term::Tag(_)) {
                        return Err(TermError::SortClash {
                            op: "enc".into(),
                            expected: "a key".into(),
                            got: key.to_string(),
                            pos: args[n - 1].pos,
                        });
                    }
                    Ok(Term::enc(Term::cat_list(parts), key))
                }
                ("cat", n) if n >= 1 => {
                    let parts = args.iter().map(|a| parse_term(a, scope)).collect::<Result<Vec<_>, _>>()?;
                    Ok(Term::cat_list(parts))
                }
                _ => Err(malformed()),
            }
        }
    }
}

pub fn apply(s: &Subst, t: &Term) -> Term {
    if s.is_empty() {
        return t.clone();
    }
    match t {
        Term::Var(v) => s.get(v).cloned().unwrap_or_else(|| t.clone()),
        Term::Tag(_) => t.clone(),
        Term::Pubk(a) => Term::pubk(apply(s, a)),
        Term::Privk(a) => Term::privk(apply(s, a)),
        Term::Invk(a) => Term::invk(apply(s, a)),
        Term::Ltk(a, b) => Term::ltk(apply(s, a), apply(s, b)),
        Term::Enc(a, b) => Term::enc(apply(s, a), apply(s, b)),
        Term::Cat(a, b) => Term::cat(apply(s, a), apply(s, b)),
    }
}

/// `after ∘ before`: apply `before` first, then `after`.
pub fn compose(after: &Subst, before: &Subst) -> Subst {
    let mut out: Subst = before.iter().map(|(v, t)| (v.clone(), apply(after, t))).collect();
    for (v, t) in after {
        out.entry(v.clone()).or_insert_with(|| t.clone());
    }
    out.retain(|v, t| t.as_var() != Some(v));
    out
}

fn bind(s: &mut Subst, v: Var, t: Term) -> bool {
    if t.as_var() == Some(&v) {
        return true;
    }
    if t.occurs(&v) {
        return false;
    }
    if v.sort.is_base() && t.sort() != v.sort {
        return false;
    }
    if v.sort.is_base() && !t.is_atom() {
        return false;
    }
    let single: Subst = [(v.clone(), t.clone())].into_iter().collect();
    for val in s.values_mut() {
        *val = apply(&single, val);
    }
    s.insert(v, t);
    true
}

/// Most general unifier extending `seed`.  When two variables meet, the one
/// on the left is bound to the one on the right, so callers put the terms
/// whose names they would rather lose on the left.
pub fn unify_with(t1: &Term, t2: &Term, seed: &Subst) -> Option<Subst> {
    let mut s = seed.clone();
    let mut work = vec![(t1.clone(), t2.clone())];
    while let Some((a, b)) = work.pop() {
        let a = apply(&s, &a);
        let b = apply(&s, &b);
        if a == b {
            continue;
        }
        match (a, b) {
            (Term::Var(x), Term::Var(y)) => {
                let ok = if y.sort == Sort::Mesg && x.sort != Sort::Mesg {
                    bind(&mut s, y, Term::Var(x))
                } else {
                    bind(&mut s, x, Term::Var(y))
                };
                if !ok {
                    return None;
                }
            }
            (Term::Var(x), t) | (t, Term::Var(x)) => {
                if !bind(&mut s, x, t) {
                    return None;
                }
            }
            (Term::Invk(x), t) | (t, Term::Invk(x)) => {
                if t.sort() != Sort::Akey {
                    return None;
                }
                work.push((*x, Term::invk(t)));
            }
            (Term::Tag(p), Term::Tag(q)) => {
                if p != q {
                    return None;
                }
            }
            (Term::Pubk(p), Term::Pubk(q)) | (Term::Privk(p), Term::Privk(q)) => work.push((*p, *q)),
            (Term::Ltk(p1, p2), Term::Ltk(q1, q2))
            | (Term::Enc(p1, p2), Term::Enc(q1, q2))
            | (Term::Cat(p1, p2), Term::Cat(q1, q2)) => {
                work.push((*p2, *q2));
                work.push((*p1, *q1));
            }
            _ => return None,
        }
    }
    Some(s)
}

pub fn unify(t1: &Term, t2: &Term) -> Option<Subst> {
    unify_with(t1, t2, &Subst::new())
}

/// One-way matching: variables of `pattern` are bound, variables of `target`
/// are treated as constants.
pub fn match_term(pattern: &Term, target: &Term, seed: &Subst) -> Option<Subst> {
    let mut s = seed.clone();
    if match_into(pattern, target, &mut s) {
        Some(s)
    } else {
        None
    }
}

fn match_into(p: &Term, t: &Term, s: &mut Subst) -> bool {
    match (p, t) {
        (Term::Var(x), _) => {
            if let Some(bound) = s.get(x) {
                return bound == t;
            }
            if x.sort.is_base() && (t.sort() != x.sort || !t.is_atom()) {
                return false;
            }
            s.insert(x.clone(), t.clone());
            true
        }
        (Term::Invk(x), _) => t.sort() == Sort::Akey && match_into(x, &Term::invk(t.clone()), s),
        (Term::Tag(a), Term::Tag(b)) => a == b,
        (Term::Pubk(a), Term::Pubk(b)) | (Term::Privk(a), Term::Privk(b)) => match_into(a, b, s),
        (Term::Ltk(a1, a2), Term::Ltk(b1, b2))
        | (Term::Enc(a1, a2), Term::Enc(b1, b2))
        | (Term::Cat(a1, a2), Term::Cat(b1, b2)) => match_into(a1, b1, s) && match_into(a2, b2, s),
        _ => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Dir {
    Send,
    Recv,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Event {
    pub dir: Dir,
    pub msg: Term,
}

impl Event {
    pub fn send(msg: Term) -> Event {
        Event { dir: Dir::Send, msg }
    }

    pub fn recv(msg: Term) -> Event {
        Event { dir: Dir::Recv, msg }
    }

    pub fn apply(&self, s: &Subst) -> Event {
        Event { dir: self.dir, msg: apply(s, &self.msg) }
    }

    pub fn to_sexpr(&self) -> SExpr {
        let d = match self.dir {
            Dir::Send => "send",
            Dir::Recv => "recv",
        };
        SExpr::list(vec![SExpr::sym(d), self.msg.to_sexpr()])
    }
}

pub fn originates_at(trace: &[Event], atom: &Term) -> Option<usize> {
    let i = trace.iter().position(|e| e.msg.carries(atom))?;
    (trace[i].dir == Dir::Send).then_some(i)
}

pub fn acquired_at(trace: &[Event], v: &Var) -> Option<usize> {
    let i = trace.iter().position(|e| e.msg.occurs(v))?;
    let e = &trace[i];
    (e.dir == Dir::Recv && e.msg.carries(&Term::Var(v.clone()))).then_some(i)
}
