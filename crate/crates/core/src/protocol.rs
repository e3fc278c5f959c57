use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::annotations::{parse_formula, Formula, FormulaError};
use crate::sexpr::{Pos, SExpr};
use crate::terms::{apply, originates_at, parse_term, Dir, Event, Sort, Subst, Term, TermError, Var};

pub const LISTENER: &str = "listener";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error(transparent)]
    Term(#[from] TermError),
    #[error(transparent)]
    Formula(#[from] FormulaError),
    #[error("{pos}: {msg}")]
    Form { msg: String, pos: Pos },
    #[error("role {role}: unknown sort {sort}")]
    UnknownSort { role: String, sort: String },
    #[error("role {role}: trace is empty")]
    EmptyTrace { role: String },
    #[error("role {role}: uniq-orig atom {atom} does not originate in the trace")]
    NotOriginating { role: String, atom: String },
    #[error("role {role}: {atom} is not an atom")]
    NotAtom { role: String, atom: String },
    #[error("role {role}: variable {var} of non-orig atom {atom} does not occur in the trace")]
    NonOrigVar { role: String, var: String, atom: String },
    #[error("role {role}: height {height} out of range 1..{len}")]
    Height { role: String, height: i64, len: usize },
    #[error("role {role}: annotation position {at} out of range")]
    AnnotationPos { role: String, at: i64 },
    #[error("duplicate role {0}")]
    DuplicateRole(String),
    #[error("role name {0} is reserved")]
    ReservedRole(String),
    #[error("unsupported algebra {0}")]
    Algebra(String),
}

fn form_err(msg: impl Into<String>, e: &SExpr) -> ProtocolError {
    ProtocolError::Form { msg: msg.into(), pos: e.pos }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Role {
    pub name: String,
    pub vars: Vec<Var>,
    pub trace: Vec<Event>,
    pub non_orig: Vec<(Option<usize>, Term)>,
    pub uniq_orig: Vec<Term>,
    pub principal: Option<Term>,
    pub annotations: BTreeMap<usize, Formula>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Protocol {
    pub name: String,
    pub roles: Vec<Role>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Inherited {
    pub non_orig: BTreeSet<Term>,
    pub uniq_orig: BTreeSet<Term>,
    /// Atoms held back because some of their variables are not yet present
    /// in the truncated trace.
    pub deferred: Vec<Term>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Herald {
    pub title: String,
    pub bound: Option<usize>,
    pub check_nonces: bool,
}

impl Herald {
    pub fn parse(e: &SExpr) -> Result<Herald, ProtocolError> {
        let args = e.tail();
        let title = match args.first().map(|a| &a.kind) {
            Some(crate::sexpr::Kind::Str(s)) => s.clone(),
            Some(crate::sexpr::Kind::Symbol(s)) => s.clone(),
            _ => return Err(form_err("herald needs a title", e)),
        };
        let mut h = Herald { title, bound: None, check_nonces: false };
        for opt in &args[1..] {
            match opt.head() {
                Some("bound") => {
                    let n = opt.tail().first().and_then(|n| n.as_int()).filter(|n| *n > 0);
                    h.bound = Some(n.ok_or_else(|| form_err("bound needs a positive integer", opt))? as usize);
                }
                Some("check-nonces") => h.check_nonces = true,
                _ => {}
            }
        }
        Ok(h)
    }

    pub fn to_sexpr(&self) -> SExpr {
        let mut items = vec![SExpr::sym("herald"), SExpr::string(&self.title)];
        if let Some(b) = self.bound {
            items.push(SExpr::list(vec![SExpr::sym("bound"), SExpr::int(b as i64)]));
        }
        if self.check_nonces {
            items.push(SExpr::list(vec![SExpr::sym("check-nonces")]));
        }
        SExpr::list(items)
    }
}

pub fn parse_var_decls(decls: &[SExpr], owner: &str) -> Result<Vec<Var>, ProtocolError> {
    let mut out: Vec<Var> = Vec::new();
    for d in decls {
        let items = d.as_list().filter(|l| l.len() >= 2).ok_or_else(|| form_err("bad variable declaration", d))?;
        let sort_sym = items.last().unwrap().as_symbol().ok_or_else(|| form_err("bad sort", d))?;
        let sort = Sort::parse(sort_sym)
            .ok_or_else(|| ProtocolError::UnknownSort { role: owner.to_string(), sort: sort_sym.to_string() })?;
        for n in &items[..items.len() - 1] {
            let name = n.as_symbol().ok_or_else(|| form_err("variable names are symbols", n))?;
            if out.iter().any(|v| &*v.name == name) {
                return Err(form_err(format!("variable {name} declared twice"), n));
            }
            out.push(Var::new(name, sort));
        }
    }
    Ok(out)
}

/// Declarations grouped by runs of equal sort, in the given order.
pub fn var_decls_sexpr(vars: &[Var]) -> SExpr {
    let mut items = vec![SExpr::sym("vars")];
    let mut i = 0;
    while i < vars.len() {
        let sort = vars[i].sort;
        let mut group = Vec::new();
        while i < vars.len() && vars[i].sort == sort {
            group.push(SExpr::sym(&*vars[i].name));
            i += 1;
        }
        group.push(SExpr::sym(sort.name()));
        items.push(SExpr::list(group));
    }
    SExpr::list(items)
}

fn parse_event(e: &SExpr, vars: &[Var]) -> Result<Event, ProtocolError> {
    let dir = match e.head() {
        Some("send") => Dir::Send,
        Some("recv") => Dir::Recv,
        _ => return Err(form_err("expected send or recv", e)),
    };
    let [arg] = e.tail() else {
        return Err(form_err("an event has exactly one message", e));
    };
    Ok(Event { dir, msg: parse_term(arg, vars)? })
}

impl Role {
    pub fn parse(form: &SExpr) -> Result<Role, ProtocolError> {
        let args = form.tail();
        let name = args.first().and_then(|n| n.as_symbol()).ok_or_else(|| form_err("defrole needs a name", form))?;
        let name = name.to_string();
        let mut vars = Vec::new();
        let mut trace = Vec::new();
        let mut non_orig = Vec::new();
        let mut uniq_orig = Vec::new();
        let mut principal = None;
        let mut annotations = BTreeMap::new();
        let mut annotation_forms = None;
        if let Some(v) = args.iter().skip(1).find(|a| a.is_form("vars")) {
            vars = parse_var_decls(v.tail(), &name)?;
        }
        for clause in args.iter().skip(1) {
            match clause.head() {
                Some("vars") => {}
                Some("trace") => {
                    trace = clause.tail().iter().map(|e| parse_event(e, &vars)).collect::<Result<_, _>>()?;
                }
                Some("non-orig") => {
                    for item in clause.tail() {
                        let (h, t) = match item.as_list() {
                            Some([h, t]) if h.as_int().is_some() => (h.as_int(), t),
                            _ => (None, item),
                        };
                        let atom = parse_term(t, &vars)?;
                        let h = match h {
                            Some(h) if h < 1 => {
                                return Err(ProtocolError::Height { role: name.clone(), height: h, len: 0 })
                            }
                            Some(h) => Some(h as usize),
                            None => None,
                        };
                        non_orig.push((h, atom));
                    }
                }
                Some("uniq-orig") => {
                    for item in clause.tail() {
                        uniq_orig.push(parse_term(item, &vars)?);
                    }
                }
                Some("annotations") => annotation_forms = Some(clause),
                _ => {}
            }
        }
        if trace.is_empty() {
            return Err(ProtocolError::EmptyTrace { role: name });
        }
        if let Some(clause) = annotation_forms {
            let rest = clause.tail();
            let p = rest.first().ok_or_else(|| form_err("annotations need a principal", clause))?;
            principal = Some(parse_term(p, &vars)?);
            for item in &rest[1..] {
                let pair = item.as_list().filter(|l| l.len() == 2).ok_or_else(|| form_err("expected (position formula)", item))?;
                let at = pair[0].as_int().ok_or_else(|| form_err("annotation position must be an integer", item))?;
                if at < 0 || at as usize >= trace.len() {
                    return Err(ProtocolError::AnnotationPos { role: name, at });
                }
                let f = parse_formula(&pair[1], &vars)?;
                if !f.is_trivial() {
                    annotations.insert(at as usize, f);
                }
            }
        }
        let role = Role { name, vars, trace, non_orig, uniq_orig, principal, annotations };
        role.check()?;
        Ok(role)
    }

    fn check(&self) -> Result<(), ProtocolError> {
        let name = || self.name.clone();
        for (h, atom) in &self.non_orig {
            if !atom.is_atom() {
                return Err(ProtocolError::NotAtom { role: name(), atom: atom.to_string() });
            }
            if let Some(h) = h {
                if *h > self.trace.len() {
                    return Err(ProtocolError::Height { role: name(), height: *h as i64, len: self.trace.len() });
                }
            }
            for v in atom.vars() {
                if !self.trace.iter().any(|e| e.msg.occurs(&v)) {
                    return Err(ProtocolError::NonOrigVar { role: name(), var: v.name.to_string(), atom: atom.to_string() });
                }
            }
        }
        for atom in &self.uniq_orig {
            if !atom.is_atom() {
                return Err(ProtocolError::NotAtom { role: name(), atom: atom.to_string() });
            }
            if originates_at(&self.trace, atom).is_none() {
                return Err(ProtocolError::NotOriginating { role: name(), atom: atom.to_string() });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.trace.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trace.is_empty()
    }

    /// Role variables occurring in the first `height` events, in declaration order.
    pub fn vars_upto(&self, height: usize) -> Vec<Var> {
        self.vars
            .iter()
            .filter(|v| self.trace[..height].iter().any(|e| e.msg.occurs(v)))
            .cloned()
            .collect()
    }

    pub fn unused_vars(&self) -> Vec<Var> {
        let used = self.vars_upto(self.len());
        self.vars.iter().filter(|v| !used.contains(v)).cloned().collect()
    }

    pub fn inherited_assumptions(&self, height: usize, subst: &Subst) -> Inherited {
        let present = self.vars_upto(height);
        let ready = |t: &Term| t.vars().iter().all(|v| present.contains(v));
        let mut out = Inherited::default();
        for (h, atom) in &self.non_orig {
            if h.map_or(true, |h| h <= height) {
                if ready(atom) {
                    out.non_orig.insert(apply(subst, atom));
                } else {
                    out.deferred.push(atom.clone());
                }
            }
        }
        for atom in &self.uniq_orig {
            if ready(atom) {
                out.uniq_orig.insert(apply(subst, atom));
            } else {
                out.deferred.push(atom.clone());
            }
        }
        out
    }

    pub fn to_sexpr(&self) -> SExpr {
        let mut items = vec![SExpr::sym("defrole"), SExpr::sym(&self.name), var_decls_sexpr(&self.vars)];
        let mut trace = vec![SExpr::sym("trace")];
        trace.extend(self.trace.iter().map(Event::to_sexpr));
        items.push(SExpr::list(trace));
        if !self.non_orig.is_empty() {
            let mut l = vec![SExpr::sym("non-orig")];
            for (h, t) in &self.non_orig {
                l.push(match h {
                    Some(h) => SExpr::list(vec![SExpr::int(*h as i64), t.to_sexpr()]),
                    None => t.to_sexpr(),
                });
            }
            items.push(SExpr::list(l));
        }
        if !self.uniq_orig.is_empty() {
            let mut l = vec![SExpr::sym("uniq-orig")];
            l.extend(self.uniq_orig.iter().map(Term::to_sexpr));
            items.push(SExpr::list(l));
        }
        if let Some(p) = &self.principal {
            let mut l = vec![SExpr::sym("annotations"), p.to_sexpr()];
            for (at, f) in &self.annotations {
                l.push(SExpr::list(vec![SExpr::int(*at as i64), f.to_sexpr()]));
            }
            items.push(SExpr::list(l));
        }
        SExpr::list(items)
    }
}

impl Protocol {
    pub fn parse(form: &SExpr) -> Result<Protocol, ProtocolError> {
        if !form.is_form("defprotocol") {
            return Err(form_err("expected defprotocol", form));
        }
        let args = form.tail();
        let name = args.first().and_then(|n| n.as_symbol()).ok_or_else(|| form_err("defprotocol needs a name", form))?;
        let algebra = args.get(1).and_then(|n| n.as_symbol()).ok_or_else(|| form_err("defprotocol needs an algebra", form))?;
        if algebra != "basic" {
            return Err(ProtocolError::Algebra(algebra.to_string()));
        }
        let mut roles: Vec<Role> = Vec::new();
        let mut warnings = Vec::new();
        for r in args.iter().skip(2).filter(|r| r.is_form("defrole")) {
            let role = Role::parse(r)?;
            if role.name == LISTENER {
                return Err(ProtocolError::ReservedRole(role.name));
            }
            if roles.iter().any(|o| o.name == role.name) {
                return Err(ProtocolError::DuplicateRole(role.name));
            }
            for v in role.unused_vars() {
                warnings.push(format!("role {}: variable {} is declared but never used", role.name, v.name));
            }
            roles.push(role);
        }
        if roles.is_empty() {
            return Err(form_err("a protocol needs at least one role", form));
        }
        Ok(Protocol { name: name.to_string(), roles, warnings })
    }

    pub fn role(&self, name: &str) -> Option<&Role> {
        self.roles.iter().find(|r| r.name == name)
    }

    pub fn role_index(&self, name: &str) -> Option<usize> {
        self.roles.iter().position(|r| r.name == name)
    }

    pub fn to_sexpr(&self) -> SExpr {
        let mut items = vec![SExpr::sym("defprotocol"), SExpr::sym(&self.name), SExpr::sym("basic")];
        items.extend(self.roles.iter().map(Role::to_sexpr));
        SExpr::list(items)
    }
}
