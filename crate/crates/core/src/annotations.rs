use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::protocol::parse_var_decls;
use crate::sexpr::{Kind, Pos, SExpr};
use crate::skeleton::{Node, Skeleton, StrandKind};
use crate::terms::{apply, parse_term, Dir, Sort, Subst, Term, TermError, Var, VarScope};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FTerm {
    Term(Term),
    App(Arc<str>, Vec<FTerm>),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Formula {
    Pred(Arc<str>, Vec<FTerm>),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Implies(Vec<Formula>, Box<Formula>),
    Iff(Box<Formula>, Box<Formula>),
    Says(Term, Box<Formula>),
    Forall(Vec<Var>, Box<Formula>),
    Exists(Vec<Var>, Box<Formula>),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormulaError {
    #[error("{pos}: unbound variable {name}")]
    Unbound { name: String, pos: Pos },
    #[error("{pos}: malformed formula {form}")]
    Malformed { form: String, pos: Pos },
    #[error(transparent)]
    Term(#[from] TermError),
}

const TERM_HEADS: [&str; 6] = ["pubk", "privk", "invk", "ltk", "enc", "cat"];

struct Scoped<'a> {
    inner: &'a [Var],
    outer: &'a dyn VarScope,
}

impl VarScope for Scoped<'_> {
    fn lookup(&self, name: &str) -> Option<Var> {
        self.inner.lookup(name).or_else(|| self.outer.lookup(name))
    }
}

/// Scope in which every symbol names a message constant; used for fact files
/// where there are no declarations.
pub struct OpenScope;

impl VarScope for OpenScope {
    fn lookup(&self, name: &str) -> Option<Var> {
        Some(Var::new(name, Sort::Mesg))
    }
}

fn parse_fterm(e: &SExpr, scope: &(impl VarScope + ?Sized)) -> Result<FTerm, FormulaError> {
    match &e.kind {
        Kind::Symbol(s) => scope
            .lookup(s)
            .map(|v| FTerm::Term(Term::Var(v)))
            .ok_or_else(|| FormulaError::Unbound { name: s.clone(), pos: e.pos }),
        Kind::Str(s) => Ok(FTerm::Term(Term::tag(s))),
        Kind::List(_) => match e.head() {
            Some(h) if TERM_HEADS.contains(&h) => Ok(FTerm::Term(parse_term(e, scope)?)),
            Some(h) => Ok(FTerm::App(
                Arc::from(h),
                e.tail().iter().map(|a| parse_fterm(a, scope)).collect::<Result<_, _>>()?,
            )),
            None => Err(FormulaError::Malformed { form: e.to_string(), pos: e.pos }),
        },
        Kind::Int(_) => Err(FormulaError::Malformed { form: e.to_string(), pos: e.pos }),
    }
}

pub fn parse_formula(e: &SExpr, scope: &(impl VarScope + ?Sized)) -> Result<Formula, FormulaError> {
    parse_dyn(e, &Scoped { inner: &[], outer: &ScopeRef(scope) })
}

struct ScopeRef<'a, S: ?Sized>(&'a S);

impl<S: VarScope + ?Sized> VarScope for ScopeRef<'_, S> {
    fn lookup(&self, name: &str) -> Option<Var> {
        self.0.lookup(name)
    }
}

fn parse_dyn(e: &SExpr, scope: &dyn VarScope) -> Result<Formula, FormulaError> {
    let malformed = || FormulaError::Malformed { form: e.to_string(), pos: e.pos };
    let head = e.head().ok_or_else(malformed)?;
    let args = e.tail();
    let sub = |a: &SExpr| parse_dyn(a, scope);
    let all = || args.iter().map(sub).collect::<Result<Vec<_>, _>>();
    Ok(match (head, args.len()) {
        ("and", _) => Formula::And(all()?),
        ("or", _) => Formula::Or(all()?),
        ("not", 1) => Formula::Not(Box::new(sub(&args[0])?)),
        ("implies", n) if n >= 1 => {
            let mut parts = all()?;
            let last = parts.pop().unwrap();
            Formula::Implies(parts, Box::new(last))
        }
        ("iff", 2) => Formula::Iff(Box::new(sub(&args[0])?), Box::new(sub(&args[1])?)),
        ("says", 2) => Formula::Says(parse_term(&args[0], scope)?, Box::new(sub(&args[1])?)),
        (q @ ("forall" | "exists"), 2) => {
            let decls = args[0].as_list().ok_or_else(malformed)?;
            let bound = parse_var_decls(decls, q).map_err(|_| malformed())?;
            let inner = Scoped { inner: &bound, outer: scope };
            let body = Box::new(parse_dyn(&args[1], &inner)?);
            if q == "forall" {
                Formula::Forall(bound, body)
            } else {
                Formula::Exists(bound, body)
            }
        }
        ("not" | "iff" | "says" | "implies" | "forall" | "exists", _) => return Err(malformed()),
        (p, _) => Formula::Pred(Arc::from(p), args.iter().map(|a| parse_fterm(a, scope)).collect::<Result<_, _>>()?),
    })
}

impl FTerm {
    pub fn to_sexpr(&self) -> SExpr {
        match self {
            FTerm::Term(t) => t.to_sexpr(),
            FTerm::App(f, args) => {
                let mut items = vec![SExpr::sym(&**f)];
                items.extend(args.iter().map(FTerm::to_sexpr));
                SExpr::list(items)
            }
        }
    }

    fn apply(&self, s: &Subst) -> FTerm {
        match self {
            FTerm::Term(t) => FTerm::Term(apply(s, t)),
            FTerm::App(f, args) => FTerm::App(f.clone(), args.iter().map(|a| a.apply(s)).collect()),
        }
    }

    fn vars_into(&self, out: &mut Vec<Var>) {
        match self {
            FTerm::Term(t) => t.vars_into(out),
            FTerm::App(_, args) => args.iter().for_each(|a| a.vars_into(out)),
        }
    }
}

fn decls_sexpr(vars: &[Var]) -> SExpr {
    let full = crate::protocol::var_decls_sexpr(vars);
    SExpr::list(full.tail().to_vec())
}

impl Formula {
    pub fn truth() -> Formula {
        Formula::And(Vec::new())
    }

    pub fn falsehood() -> Formula {
        Formula::Or(Vec::new())
    }

    pub fn is_trivial(&self) -> bool {
        matches!(self, Formula::And(v) if v.is_empty())
    }

    pub fn says(p: Term, f: Formula) -> Formula {
        Formula::Says(p, Box::new(f))
    }

    pub fn to_sexpr(&self) -> SExpr {
        let list = |head: &str, rest: Vec<SExpr>| {
            let mut items = vec![SExpr::sym(head)];
            items.extend(rest);
            SExpr::list(items)
        };
        match self {
            Formula::Pred(p, args) => list(p, args.iter().map(FTerm::to_sexpr).collect()),
            Formula::Not(f) => list("not", vec![f.to_sexpr()]),
            Formula::And(fs) => list("and", fs.iter().map(Formula::to_sexpr).collect()),
            Formula::Or(fs) => list("or", fs.iter().map(Formula::to_sexpr).collect()),
            Formula::Implies(ants, c) => {
                let mut parts: Vec<SExpr> = ants.iter().map(Formula::to_sexpr).collect();
                parts.push(c.to_sexpr());
                list("implies", parts)
            }
            Formula::Iff(a, b) => list("iff", vec![a.to_sexpr(), b.to_sexpr()]),
            Formula::Says(p, f) => list("says", vec![p.to_sexpr(), f.to_sexpr()]),
            Formula::Forall(vs, f) => list("forall", vec![decls_sexpr(vs), f.to_sexpr()]),
            Formula::Exists(vs, f) => list("exists", vec![decls_sexpr(vs), f.to_sexpr()]),
        }
    }

    /// Substitute free variables; quantified variables shadow the substitution.
    pub fn instantiate(&self, s: &Subst) -> Formula {
        match self {
            Formula::Pred(p, args) => Formula::Pred(p.clone(), args.iter().map(|a| a.apply(s)).collect()),
            Formula::Not(f) => Formula::Not(Box::new(f.instantiate(s))),
            Formula::And(fs) => Formula::And(fs.iter().map(|f| f.instantiate(s)).collect()),
            Formula::Or(fs) => Formula::Or(fs.iter().map(|f| f.instantiate(s)).collect()),
            Formula::Implies(ants, c) => {
                Formula::Implies(ants.iter().map(|f| f.instantiate(s)).collect(), Box::new(c.instantiate(s)))
            }
            Formula::Iff(a, b) => Formula::Iff(Box::new(a.instantiate(s)), Box::new(b.instantiate(s))),
            Formula::Says(p, f) => Formula::Says(apply(s, p), Box::new(f.instantiate(s))),
            Formula::Forall(vs, f) | Formula::Exists(vs, f) => {
                let inner: Subst = s.iter().filter(|(v, _)| !vs.contains(v)).map(|(v, t)| (v.clone(), t.clone())).collect();
                let body = Box::new(f.instantiate(&inner));
                if matches!(self, Formula::Forall(..)) {
                    Formula::Forall(vs.clone(), body)
                } else {
                    Formula::Exists(vs.clone(), body)
                }
            }
        }
    }

    pub fn free_vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.free_vars_into(&mut out);
        out
    }

    fn free_vars_into(&self, out: &mut Vec<Var>) {
        match self {
            Formula::Pred(_, args) => args.iter().for_each(|a| a.vars_into(out)),
            Formula::Not(f) => f.free_vars_into(out),
            Formula::And(fs) | Formula::Or(fs) => fs.iter().for_each(|f| f.free_vars_into(out)),
            Formula::Implies(ants, c) => {
                ants.iter().for_each(|f| f.free_vars_into(out));
                c.free_vars_into(out);
            }
            Formula::Iff(a, b) => {
                a.free_vars_into(out);
                b.free_vars_into(out);
            }
            Formula::Says(p, f) => {
                p.vars_into(out);
                f.free_vars_into(out);
            }
            Formula::Forall(vs, f) | Formula::Exists(vs, f) => {
                let mut inner = Vec::new();
                f.free_vars_into(&mut inner);
                for v in inner {
                    if !vs.contains(&v) && !out.contains(&v) {
                        out.push(v);
                    }
                }
            }
        }
    }

    pub fn has_quantifier(&self) -> bool {
        match self {
            Formula::Forall(..) | Formula::Exists(..) => true,
            Formula::Pred(..) => false,
            Formula::Not(f) | Formula::Says(_, f) => f.has_quantifier(),
            Formula::And(fs) | Formula::Or(fs) => fs.iter().any(Formula::has_quantifier),
            Formula::Implies(ants, c) => ants.iter().any(Formula::has_quantifier) || c.has_quantifier(),
            Formula::Iff(a, b) => a.has_quantifier() || b.has_quantifier(),
        }
    }

    pub fn predicates(&self) -> BTreeSet<Arc<str>> {
        let mut out = BTreeSet::new();
        fn go(f: &Formula, out: &mut BTreeSet<Arc<str>>) {
            match f {
                Formula::Pred(p, _) => {
                    out.insert(p.clone());
                }
                Formula::Not(f) | Formula::Says(_, f) | Formula::Forall(_, f) | Formula::Exists(_, f) => go(f, out),
                Formula::And(fs) | Formula::Or(fs) => fs.iter().for_each(|f| go(f, out)),
                Formula::Implies(ants, c) => {
                    ants.iter().for_each(|f| go(f, out));
                    go(c, out);
                }
                Formula::Iff(a, b) => {
                    go(a, out);
                    go(b, out);
                }
            }
        }
        go(self, &mut out);
        out
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_sexpr())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Guarantee,
    Rely,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedNode {
    pub node: Node,
    pub principal: Term,
    pub formula: Formula,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Obligation {
    pub node: Node,
    pub principal: Term,
    pub formula: Formula,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnnotationError {
    #[error("strand {strand}: role {role} has no annotations")]
    NoAnnotations { strand: usize, role: String },
    #[error("node {node}: annotation leaves variable {var} unbound")]
    FreeVariable { node: Node, var: String },
}

pub fn shape_annotations(sk: &Skeleton) -> Result<Vec<AnnotatedNode>, AnnotationError> {
    let mut out = Vec::new();
    for (si, strand) in sk.strands.iter().enumerate() {
        let StrandKind::Role { role, subst, .. } = &strand.kind else {
            continue;
        };
        let role = &sk.protocol.roles[*role];
        let Some(principal) = &role.principal else {
            return Err(AnnotationError::NoAnnotations { strand: si, role: role.name.clone() });
        };
        for (&pos, f) in role.annotations.range(..strand.height()) {
            let node = Node::new(si, pos);
            let mut needed = f.free_vars();
            principal.vars_into(&mut needed);
            if let Some(v) = needed.iter().find(|v| !subst.contains_key(*v)) {
                return Err(AnnotationError::FreeVariable { node, var: v.name.to_string() });
            }
            let polarity = match strand.trace[pos].dir {
                Dir::Send => Polarity::Guarantee,
                Dir::Recv => Polarity::Rely,
            };
            out.push(AnnotatedNode {
                node,
                principal: apply(subst, principal),
                formula: f.instantiate(subst),
                polarity,
            });
        }
    }
    out.sort_by_key(|a| a.node);
    Ok(out)
}

pub fn shape_obligations(sk: &Skeleton) -> Result<Vec<Obligation>, AnnotationError> {
    let anns = shape_annotations(sk)?;
    let order = sk.order();
    let mut out = Vec::new();
    for rely in anns.iter().filter(|a| a.polarity == Polarity::Rely) {
        let ants = anns
            .iter()
            .filter(|g| g.polarity == Polarity::Guarantee && order.before(g.node, rely.node))
            .map(|g| {
                if g.node.strand == rely.node.strand {
                    g.formula.clone()
                } else {
                    Formula::says(g.principal.clone(), g.formula.clone())
                }
            })
            .collect();
        out.push(Obligation {
            node: rely.node,
            principal: rely.principal.clone(),
            formula: Formula::Implies(ants, Box::new(rely.formula.clone())),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Discharge {
    Valid,
    Unknown,
}

pub fn discharge(ob: &Obligation) -> Discharge {
    let Formula::Implies(ants, consequent) = &ob.formula else {
        return Discharge::Unknown;
    };
    if ob.formula.has_quantifier() {
        return Discharge::Unknown;
    }
    if ants.contains(consequent) {
        return Discharge::Valid;
    }
    if let Formula::Says(p, psi) = &**consequent {
        for a in ants {
            if let Formula::Says(q, phi) = a {
                if p == q && (phi == psi || matches!(&**phi, Formula::And(xs) if xs.contains(psi))) {
                    return Discharge::Valid;
                }
            }
        }
    }
    Discharge::Unknown
}

fn node_sexpr(n: Node) -> SExpr {
    SExpr::list(vec![SExpr::int(n.strand as i64), SExpr::int(n.pos as i64)])
}

pub fn annotations_sexpr(anns: &[AnnotatedNode]) -> SExpr {
    let mut items = vec![SExpr::sym("annotations")];
    for a in anns {
        items.push(SExpr::list(vec![node_sexpr(a.node), a.principal.to_sexpr(), a.formula.to_sexpr()]));
    }
    SExpr::list(items)
}

pub fn obligations_sexpr(obs: &[Obligation]) -> SExpr {
    let mut items = vec![SExpr::sym("obligations")];
    for o in obs {
        items.push(SExpr::list(vec![node_sexpr(o.node), o.principal.to_sexpr(), o.formula.to_sexpr()]));
    }
    SExpr::list(items)
}

/// A definite clause over sort-free S-expressions.  Symbols listed in `vars`
/// are pattern variables; everything else must match literally, including
/// the contents of `says` facts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HornRule {
    pub vars: BTreeSet<String>,
    pub head: SExpr,
    pub body: Vec<SExpr>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TheoryError {
    #[error("{pos}: rule head variable {var} does not occur in the body")]
    NotRangeRestricted { var: String, pos: Pos },
    #[error("{pos}: malformed theory entry {form}")]
    Malformed { form: String, pos: Pos },
}

fn symbols(e: &SExpr, out: &mut BTreeSet<String>) {
    match &e.kind {
        Kind::Symbol(s) => {
            out.insert(s.clone());
        }
        Kind::List(items) => items.iter().for_each(|i| symbols(i, out)),
        _ => {}
    }
}

impl HornRule {
    pub fn new(vars: &[&str], head: SExpr, body: Vec<SExpr>) -> Result<HornRule, TheoryError> {
        let vars: BTreeSet<String> = vars.iter().map(|s| s.to_string()).collect();
        let mut in_head = BTreeSet::new();
        symbols(&head, &mut in_head);
        let mut in_body = BTreeSet::new();
        body.iter().for_each(|b| symbols(b, &mut in_body));
        if let Some(v) = in_head.iter().find(|s| vars.contains(*s) && !in_body.contains(*s)) {
            return Err(TheoryError::NotRangeRestricted { var: v.clone(), pos: head.pos });
        }
        Ok(HornRule { vars, head, body })
    }

    /// `(rule (vars x ...) head body ...)`
    pub fn parse(e: &SExpr) -> Result<HornRule, TheoryError> {
        let malformed = || TheoryError::Malformed { form: e.to_string(), pos: e.pos };
        let args = e.tail();
        if !e.is_form("rule") || args.len() < 2 || !args[0].is_form("vars") {
            return Err(malformed());
        }
        let vars: Vec<&str> = args[0].tail().iter().map(|v| v.as_symbol().ok_or_else(malformed)).collect::<Result<_, _>>()?;
        HornRule::new(&vars, args[1].clone(), args[2..].to_vec())
    }
}

fn match_sexpr(p: &SExpr, t: &SExpr, vars: &BTreeSet<String>, b: &mut BTreeMap<String, SExpr>) -> bool {
    if let Kind::Symbol(s) = &p.kind {
        if vars.contains(s) {
            return match b.get(s) {
                Some(bound) => bound == t,
                None => {
                    b.insert(s.clone(), t.clone());
                    true
                }
            };
        }
    }
    match (&p.kind, &t.kind) {
        (Kind::List(ps), Kind::List(ts)) => {
            ps.len() == ts.len() && ps.iter().zip(ts).all(|(p, t)| match_sexpr(p, t, vars, b))
        }
        _ => p == t,
    }
}

fn subst_sexpr(e: &SExpr, b: &BTreeMap<String, SExpr>) -> SExpr {
    match &e.kind {
        Kind::Symbol(s) => b.get(s).cloned().unwrap_or_else(|| e.clone()),
        Kind::List(items) => SExpr::list(items.iter().map(|i| subst_sexpr(i, b)).collect()),
        _ => e.clone(),
    }
}

/// Least fixpoint of the rules over the facts.
pub fn forward_chain_sexpr(rules: &[HornRule], facts: &BTreeSet<String>) -> BTreeSet<String> {
    let mut known: Vec<SExpr> = facts.iter().filter_map(|f| crate::sexpr::read_all(f).ok()?.pop()).collect();
    let mut keys: BTreeSet<String> = known.iter().map(|f| f.to_string()).collect();
    loop {
        let mut fresh = Vec::new();
        for rule in rules {
            let mut partial = vec![BTreeMap::new()];
            for atom in &rule.body {
                let mut next = Vec::new();
                for b in &partial {
                    for f in &known {
                        let mut b2 = b.clone();
                        if match_sexpr(atom, f, &rule.vars, &mut b2) {
                            next.push(b2);
                        }
                    }
                }
                partial = next;
            }
            for b in &partial {
                let derived = subst_sexpr(&rule.head, b);
                let key = derived.to_string();
                if !keys.contains(&key) {
                    keys.insert(key);
                    fresh.push(derived);
                }
            }
        }
        if fresh.is_empty() {
            return keys;
        }
        known.extend(fresh);
    }
}

pub fn forward_chain(rules: &[HornRule], facts: &BTreeSet<Formula>) -> BTreeSet<Formula> {
    let keys: BTreeSet<String> = facts.iter().map(|f| f.to_string()).collect();
    let derived = forward_chain_sexpr(rules, &keys);
    let mut out = facts.clone();
    for d in derived.difference(&keys) {
        let e = crate::sexpr::read_all(d).expect("printed facts re-read").remove(0);
        if let Ok(f) = parse_formula(&e, &OpenScope) {
            out.insert(f);
        }
    }
    out
}

/// Initial theory of one principal: ground facts written over the role's
/// variable names, and inference rules.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Theory {
    pub facts: Vec<SExpr>,
    pub rules: Vec<HornRule>,
}

impl Theory {
    pub fn parse(text: &str) -> Result<Theory, TheoryError> {
        let forms = crate::sexpr::read_all(text)
            .map_err(|e| TheoryError::Malformed { form: e.to_string(), pos: e.pos() })?;
        let mut th = Theory::default();
        for f in forms {
            match f.head() {
                Some("fact") if f.tail().len() == 1 => th.facts.push(f.tail()[0].clone()),
                Some("rule") => th.rules.push(HornRule::parse(&f)?),
                Some("comment") => {}
                _ => return Err(TheoryError::Malformed { form: f.to_string(), pos: f.pos }),
            }
        }
        Ok(th)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuaranteeCheck {
    pub node: Node,
    pub principal: Term,
    pub formula: Formula,
    pub justified: bool,
}

/// Replay the trust argument on a shape: each principal starts from its
/// initial theory plus the rely formulas it has received so far, and must
/// derive every guarantee it makes.
pub fn trust_argument(sk: &Skeleton, theories: &BTreeMap<String, Theory>) -> Result<Vec<GuaranteeCheck>, AnnotationError> {
    let anns = shape_annotations(sk)?;
    let mut out = Vec::new();
    for (si, strand) in sk.strands.iter().enumerate() {
        let StrandKind::Role { role, subst, .. } = &strand.kind else {
            continue;
        };
        let role = &sk.protocol.roles[*role];
        let Some(theory) = theories.get(&role.name) else {
            continue;
        };
        let renaming: BTreeMap<String, SExpr> =
            subst.iter().map(|(v, t)| (v.name.to_string(), t.to_sexpr())).collect();
        let mut facts: BTreeSet<String> = theory.facts.iter().map(|f| subst_sexpr(f, &renaming).to_string()).collect();
        for a in anns.iter().filter(|a| a.node.strand == si) {
            match a.polarity {
                Polarity::Rely => {
                    facts.insert(a.formula.to_string());
                }
                Polarity::Guarantee => {
                    let known = forward_chain_sexpr(&theory.rules, &facts);
                    let goals = match &a.formula {
                        Formula::And(parts) => parts.clone(),
                        f => vec![f.clone()],
                    };
                    let justified = goals.iter().all(|g| known.contains(&g.to_string()));
                    out.push(GuaranteeCheck {
                        node: a.node,
                        principal: a.principal.clone(),
                        formula: a.formula.clone(),
                        justified,
                    });
                }
            }
        }
    }
    out.sort_by_key(|g| g.node);
    Ok(out)
}
