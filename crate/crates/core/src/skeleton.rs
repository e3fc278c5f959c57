use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::protocol::{parse_var_decls, Protocol, ProtocolError, Role};
use crate::sexpr::{Pos, SExpr};
use crate::terms::{apply, compose, match_term, originates_at, parse_term, Dir, Event, Sort, Subst, Term, TermError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Node {
    pub strand: usize,
    pub pos: usize,
}

impl Node {
    pub fn new(strand: usize, pos: usize) -> Node {
        Node { strand, pos }
    }

    pub fn to_sexpr(self) -> SExpr {
        SExpr::list(vec![SExpr::int(self.strand as i64), SExpr::int(self.pos as i64)])
    }

    pub fn parse(e: &SExpr) -> Option<Node> {
        match e.as_list()? {
            [s, p] => Some(Node::new(s.as_int()?.try_into().ok()?, p.as_int()?.try_into().ok()?)),
            _ => None,
        }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({} {})", self.strand, self.pos)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StrandKind {
    /// `subst` maps the role variables that occur in the truncated trace.
    Role { role: usize, subst: Subst },
    Listener(Term),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Strand {
    pub kind: StrandKind,
    pub trace: Vec<Event>,
}

impl Strand {
    pub fn role_instance(role_idx: usize, role: &Role, height: usize, subst: Subst) -> Strand {
        let keep = role.vars_upto(height);
        let subst: Subst = subst.into_iter().filter(|(v, _)| keep.contains(v)).collect();
        let trace = role.trace[..height].iter().map(|e| e.apply(&subst)).collect();
        Strand { kind: StrandKind::Role { role: role_idx, subst }, trace }
    }

    pub fn listener(t: Term) -> Strand {
        Strand { trace: vec![Event::recv(t.clone()), Event::send(t.clone())], kind: StrandKind::Listener(t) }
    }

    pub fn height(&self) -> usize {
        self.trace.len()
    }

    pub fn role_index(&self) -> Option<usize> {
        match &self.kind {
            StrandKind::Role { role, .. } => Some(*role),
            StrandKind::Listener(_) => None,
        }
    }

    pub fn apply(&self, s: &Subst) -> Strand {
        match &self.kind {
            StrandKind::Role { role, subst } => Strand {
                kind: StrandKind::Role { role: *role, subst: subst.iter().map(|(v, t)| (v.clone(), apply(s, t))).collect() },
                trace: self.trace.iter().map(|e| e.apply(s)).collect(),
            },
            StrandKind::Listener(t) => Strand::listener(apply(s, t)),
        }
    }

    /// Same role (or both listeners).
    pub fn same_kind(&self, other: &Strand) -> bool {
        match (&self.kind, &other.kind) {
            (StrandKind::Role { role: a, .. }, StrandKind::Role { role: b, .. }) => a == b,
            (StrandKind::Listener(_), StrandKind::Listener(_)) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SkelError {
    #[error(transparent)]
    Term(#[from] TermError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("{pos}: {msg}")]
    Form { msg: String, pos: Pos },
    #[error("unknown protocol {0}")]
    UnknownProtocol(String),
    #[error("unknown role {0}")]
    UnknownRole(String),
    #[error("role {role}: height {height} out of range 1..{len}")]
    Height { role: String, height: i64, len: usize },
    #[error("maplet for {var} has the wrong sort: {term}")]
    MapletSort { var: String, term: String },
    #[error("uniquely originating atom {0} originates on more than one strand")]
    MultipleOrigination(String),
    #[error("node ordering has a cycle")]
    Cycle,
    #[error("ordering {0} -> {1} does not run from a transmission to a reception")]
    BadEdge(Node, Node),
    #[error("node {0} does not exist")]
    NoSuchNode(Node),
    #[error("non-originating atom {atom} is carried at {node}")]
    NonOrigCarried { atom: String, node: Node },
    #[error("variable {var} of non-originating atom {atom} occurs in no event")]
    NonOrigFree { var: String, atom: String },
    #[error("{atom} is not an atom")]
    NotAtom { atom: String },
    #[error("uniquely originating atom {atom} is received at {recv} without following its origin {orig}")]
    UniqOrder { atom: String, orig: Node, recv: Node },
    #[error("strand {strand} must originate {atom} but does not")]
    LostOrigin { atom: String, strand: usize },
}

fn form_err(msg: impl Into<String>, e: &SExpr) -> SkelError {
    SkelError::Form { msg: msg.into(), pos: e.pos }
}

/// Strict order on nodes: the transitive closure of the precedes relation
/// together with strand succession.
#[derive(Debug, Clone)]
pub struct Order {
    offsets: Vec<usize>,
    reach: Vec<Vec<bool>>,
}

impl Order {
    fn idx(&self, n: Node) -> usize {
        self.offsets[n.strand] + n.pos
    }

    pub fn before(&self, a: Node, b: Node) -> bool {
        self.reach[self.idx(a)][self.idx(b)]
    }

    pub fn is_cyclic(&self) -> bool {
        (0..self.reach.len()).any(|i| self.reach[i][i])
    }

    pub fn len(&self) -> usize {
        self.reach.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reach.is_empty()
    }
}

pub fn order_of(heights: &[usize], edges: &BTreeSet<(Node, Node)>) -> Order {
    let mut offsets = Vec::with_capacity(heights.len());
    let mut total = 0;
    for h in heights {
        offsets.push(total);
        total += h;
    }
    let mut succ = vec![Vec::new(); total];
    for (s, &h) in heights.iter().enumerate() {
        for p in 1..h {
            succ[offsets[s] + p - 1].push(offsets[s] + p);
        }
    }
    for (a, b) in edges {
        succ[offsets[a.strand] + a.pos].push(offsets[b.strand] + b.pos);
    }
    let mut reach = vec![vec![false; total]; total];
    for (start, row) in reach.iter_mut().enumerate() {
        let mut stack = succ[start].clone();
        while let Some(n) = stack.pop() {
            if !row[n] {
                row[n] = true;
                stack.extend(succ[n].iter().copied());
            }
        }
    }
    Order { offsets, reach }
}

/// Minimal cross-strand relation with the same closure as `rel` (plus the
/// implicit succession among the nodes of each strand).
pub fn transitive_reduce(rel: &BTreeSet<(Node, Node)>) -> BTreeSet<(Node, Node)> {
    let mut heights: Vec<usize> = Vec::new();
    for (a, b) in rel {
        for n in [a, b] {
            if heights.len() <= n.strand {
                heights.resize(n.strand + 1, 0);
            }
            heights[n.strand] = heights[n.strand].max(n.pos + 1);
        }
    }
    let order = order_of(&heights, rel);
    reduce_with(&order, &heights, rel)
}

fn reduce_with(order: &Order, heights: &[usize], rel: &BTreeSet<(Node, Node)>) -> BTreeSet<(Node, Node)> {
    let all: Vec<Node> = heights.iter().enumerate().flat_map(|(s, &h)| (0..h).map(move |p| Node::new(s, p))).collect();
    let mut out = BTreeSet::new();
    for &(a, b) in rel {
        if a.strand == b.strand {
            continue;
        }
        let implied = all.iter().any(|&c| c != a && c != b && order.before(a, c) && order.before(c, b));
        if !implied {
            out.insert((a, b));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Skeleton {
    pub protocol: Arc<Protocol>,
    pub strands: Vec<Strand>,
    pub precedes: BTreeSet<(Node, Node)>,
    pub non_orig: BTreeSet<Term>,
    pub uniq_orig: BTreeSet<Term>,
}

impl PartialEq for Skeleton {
    fn eq(&self, other: &Self) -> bool {
        self.protocol.name == other.protocol.name
            && self.strands == other.strands
            && self.precedes == other.precedes
            && self.non_orig == other.non_orig
            && self.uniq_orig == other.uniq_orig
    }
}

fn strip_suffix(name: &str) -> &str {
    if let Some((base, n)) = name.rsplit_once('-') {
        if !base.is_empty() && !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()) {
            return base;
        }
    }
    name
}

pub fn fresh_name(base: &str, taken: &BTreeSet<String>) -> String {
    if !taken.contains(base) {
        return base.to_string();
    }
    let stem = strip_suffix(base);
    (0..).map(|i| format!("{stem}-{i}")).find(|n| !taken.contains(n)).unwrap()
}

impl Skeleton {
    pub fn new(protocol: Arc<Protocol>) -> Skeleton {
        Skeleton {
            protocol,
            strands: Vec::new(),
            precedes: BTreeSet::new(),
            non_orig: BTreeSet::new(),
            uniq_orig: BTreeSet::new(),
        }
    }

    pub fn heights(&self) -> Vec<usize> {
        self.strands.iter().map(Strand::height).collect()
    }

    pub fn nodes(&self) -> impl Iterator<Item = Node> + '_ {
        self.strands.iter().enumerate().flat_map(|(s, st)| (0..st.height()).map(move |p| Node::new(s, p)))
    }

    pub fn event(&self, n: Node) -> &Event {
        &self.strands[n.strand].trace[n.pos]
    }

    pub fn order(&self) -> Order {
        order_of(&self.heights(), &self.precedes)
    }

    pub fn role_name(&self, strand: usize) -> &str {
        match &self.strands[strand].kind {
            StrandKind::Role { role, .. } => &self.protocol.roles[*role].name,
            StrandKind::Listener(_) => crate::protocol::LISTENER,
        }
    }

    /// All variables, in order of first appearance.
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for s in &self.strands {
            for e in &s.trace {
                e.msg.vars_into(&mut out);
            }
        }
        for t in self.non_orig.iter().chain(&self.uniq_orig) {
            t.vars_into(&mut out);
        }
        out
    }

    pub fn var_names(&self) -> BTreeSet<String> {
        self.vars().iter().map(|v| v.name.to_string()).collect()
    }

    /// A strand of `role` with every role variable not fixed by `fixed`
    /// renamed apart from the skeleton.
    pub fn fresh_instance(&self, role_idx: usize, height: usize, fixed: &Subst, taken: &mut BTreeSet<String>) -> Strand {
        let role = &self.protocol.roles[role_idx];
        let mut subst = fixed.clone();
        for v in role.vars_upto(height) {
            if subst.contains_key(&v) {
                continue;
            }
            let name = fresh_name(&v.name, taken);
            taken.insert(name.clone());
            subst.insert(v.clone(), Term::var(&name, v.sort));
        }
        Strand::role_instance(role_idx, role, height, subst)
    }

    /// Union in the assumptions every strand inherits from its role.
    pub fn refresh_inherited(&mut self) {
        for s in &self.strands {
            if let StrandKind::Role { role, subst } = &s.kind {
                let inh = self.protocol.roles[*role].inherited_assumptions(s.height(), subst);
                self.non_orig.extend(inh.non_orig);
                self.uniq_orig.extend(inh.uniq_orig);
            }
        }
    }

    pub fn apply(&self, s: &Subst) -> Skeleton {
        let mut out = Skeleton {
            protocol: self.protocol.clone(),
            strands: self.strands.iter().map(|st| st.apply(s)).collect(),
            precedes: self.precedes.clone(),
            non_orig: self.non_orig.iter().map(|t| apply(s, t)).collect(),
            uniq_orig: self.uniq_orig.iter().map(|t| apply(s, t)).collect(),
        };
        out.refresh_inherited();
        out
    }

    /// Nodes at which `atom` originates, one per originating strand.
    pub fn origins(&self, atom: &Term) -> Vec<Node> {
        self.strands
            .iter()
            .enumerate()
            .filter_map(|(s, st)| originates_at(&st.trace, atom).map(|p| Node::new(s, p)))
            .collect()
    }

    /// Map each uniquely originating atom to its origin, when it has exactly one.
    pub fn uniq_origins(&self) -> BTreeMap<Term, Node> {
        self.uniq_orig
            .iter()
            .filter_map(|u| match self.origins(u).as_slice() {
                [n] => Some((u.clone(), *n)),
                _ => None,
            })
            .collect()
    }

    /// Replace the stored precedes with its transitive reduction.
    pub fn reduce(&mut self) {
        let order = self.order();
        self.precedes = reduce_with(&order, &self.heights(), &self.precedes);
    }

    pub fn to_skeleton(&self) -> Result<Skeleton, SkelError> {
        let mut sk = self.clone();
        sk.refresh_inherited();
        for u in &self.uniq_orig {
            let origins = sk.origins(u);
            if origins.len() > 1 {
                return Err(SkelError::MultipleOrigination(u.to_string()));
            }
            let Some(&o) = origins.first() else { continue };
            for n in self.nodes() {
                if n.strand != o.strand && sk.event(n).dir == Dir::Recv && sk.event(n).msg.carries(u) {
                    sk.precedes.insert((o, n));
                }
            }
        }
        let order = sk.order();
        if order.is_cyclic() {
            return Err(SkelError::Cycle);
        }
        sk.precedes = reduce_with(&order, &sk.heights(), &sk.precedes);
        Ok(sk)
    }

    pub fn validate(&self) -> Result<(), SkelError> {
        self.validate_pre()?;
        for (i, st) in self.strands.iter().enumerate() {
            if let StrandKind::Role { role, subst } = &st.kind {
                let r = &self.protocol.roles[*role];
                for u in r.inherited_assumptions(st.height(), subst).uniq_orig {
                    if originates_at(&st.trace, &u).is_none() {
                        return Err(SkelError::LostOrigin { atom: u.to_string(), strand: i });
                    }
                }
            }
        }
        for u in &self.uniq_orig {
            if self.origins(u).len() > 1 {
                return Err(SkelError::MultipleOrigination(u.to_string()));
            }
        }
        let order = self.order();
        for (u, o) in self.uniq_origins() {
            for n in self.nodes() {
                let ev = self.event(n);
                if ev.dir == Dir::Recv && ev.msg.carries(&u) && !order.before(o, n) {
                    return Err(SkelError::UniqOrder { atom: u.to_string(), orig: o, recv: n });
                }
            }
        }
        Ok(())
    }

    /// The conditions a preskeleton must already meet.
    pub fn validate_pre(&self) -> Result<(), SkelError> {
        for &(a, b) in &self.precedes {
            for n in [a, b] {
                if n.strand >= self.strands.len() || n.pos >= self.strands[n.strand].height() {
                    return Err(SkelError::NoSuchNode(n));
                }
            }
            if self.event(a).dir != Dir::Send || self.event(b).dir != Dir::Recv {
                return Err(SkelError::BadEdge(a, b));
            }
        }
        if self.order().is_cyclic() {
            return Err(SkelError::Cycle);
        }
        for u in &self.uniq_orig {
            if !u.is_atom() {
                return Err(SkelError::NotAtom { atom: u.to_string() });
            }
        }
        let vars = self.trace_vars();
        for a in &self.non_orig {
            if !a.is_atom() {
                return Err(SkelError::NotAtom { atom: a.to_string() });
            }
            for n in self.nodes() {
                if self.event(n).msg.carries(a) {
                    return Err(SkelError::NonOrigCarried { atom: a.to_string(), node: n });
                }
            }
            for v in a.vars() {
                if !vars.contains(&v) {
                    return Err(SkelError::NonOrigFree { var: v.name.to_string(), atom: a.to_string() });
                }
            }
        }
        Ok(())
    }

    fn trace_vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for s in &self.strands {
            for e in &s.trace {
                e.msg.vars_into(&mut out);
            }
        }
        out
    }

    pub fn vars_sexpr(&self) -> SExpr {
        let vars = self.vars();
        let mut items = vec![SExpr::sym("vars")];
        for sort in Sort::ALL {
            let group: Vec<SExpr> = vars.iter().filter(|v| v.sort == sort).map(|v| SExpr::sym(&*v.name)).collect();
            if !group.is_empty() {
                let mut g = group;
                g.push(SExpr::sym(sort.name()));
                items.push(SExpr::list(g));
            }
        }
        SExpr::list(items)
    }

    pub fn strand_sexpr(&self, s: usize) -> SExpr {
        let st = &self.strands[s];
        match &st.kind {
            StrandKind::Listener(t) => SExpr::list(vec![SExpr::sym("deflistener"), t.to_sexpr()]),
            StrandKind::Role { role, subst } => {
                let role = &self.protocol.roles[*role];
                let mut items = vec![SExpr::sym("defstrand"), SExpr::sym(&role.name), SExpr::int(st.height() as i64)];
                let present = role.vars_upto(st.height());
                for sort in Sort::ALL {
                    for v in present.iter().filter(|v| v.sort == sort) {
                        if let Some(t) = subst.get(v) {
                            items.push(SExpr::list(vec![SExpr::sym(&*v.name), t.to_sexpr()]));
                        }
                    }
                }
                SExpr::list(items)
            }
        }
    }

    /// The defskeleton form up to and including the assumption lists.
    pub fn header_forms(&self) -> Vec<SExpr> {
        let mut items = vec![SExpr::sym("defskeleton"), SExpr::sym(&self.protocol.name), self.vars_sexpr()];
        for s in 0..self.strands.len() {
            items.push(self.strand_sexpr(s));
        }
        if !self.precedes.is_empty() {
            let mut p = vec![SExpr::sym("precedes")];
            for (a, b) in &self.precedes {
                p.push(SExpr::list(vec![a.to_sexpr(), b.to_sexpr()]));
            }
            items.push(SExpr::list(p));
        }
        for (key, set) in [("non-orig", &self.non_orig), ("uniq-orig", &self.uniq_orig)] {
            if !set.is_empty() {
                let mut l = vec![SExpr::sym(key)];
                l.extend(set.iter().map(Term::to_sexpr));
                items.push(SExpr::list(l));
            }
        }
        items
    }

    pub fn traces_sexpr(&self) -> SExpr {
        let mut items = vec![SExpr::sym("traces")];
        for s in &self.strands {
            items.push(SExpr::list(s.trace.iter().map(Event::to_sexpr).collect()));
        }
        SExpr::list(items)
    }

    pub fn to_sexpr(&self) -> SExpr {
        let mut items = self.header_forms();
        items.push(self.traces_sexpr());
        SExpr::list(items)
    }

    /// Cheap isomorphism invariant.
    pub fn fingerprint(&self) -> (Vec<(Option<usize>, usize)>, usize, usize, usize) {
        let mut kinds: Vec<(Option<usize>, usize)> = self.strands.iter().map(|s| (s.role_index(), s.height())).collect();
        kinds.sort();
        (kinds, self.precedes.len(), self.non_orig.len(), self.uniq_orig.len())
    }
}

/// Parse a `defskeleton` form into a preskeleton.
pub fn parse_problem(form: &SExpr, protocols: &BTreeMap<String, Arc<Protocol>>) -> Result<Skeleton, SkelError> {
    if !form.is_form("defskeleton") {
        return Err(form_err("expected defskeleton", form));
    }
    let args = form.tail();
    let pname = args.first().and_then(|a| a.as_symbol()).ok_or_else(|| form_err("defskeleton needs a protocol", form))?;
    let protocol = protocols.get(pname).cloned().ok_or_else(|| SkelError::UnknownProtocol(pname.to_string()))?;
    let decls = args.iter().find(|a| a.is_form("vars")).map(|v| v.tail()).unwrap_or(&[]);
    let scope = parse_var_decls(decls, "defskeleton")?;
    let mut taken: BTreeSet<String> = scope.iter().map(|v| v.name.to_string()).collect();
    let mut sk = Skeleton::new(protocol.clone());
    let mut declared_non = Vec::new();
    let mut declared_uniq = Vec::new();
    let mut edges = Vec::new();
    for clause in &args[1..] {
        match clause.head() {
            Some("defstrand") => {
                let rest = clause.tail();
                let rname = rest.first().and_then(|r| r.as_symbol()).ok_or_else(|| form_err("defstrand needs a role", clause))?;
                let ridx = protocol.role_index(rname).ok_or_else(|| SkelError::UnknownRole(rname.to_string()))?;
                let role = &protocol.roles[ridx];
                let h = rest.get(1).and_then(|h| h.as_int()).ok_or_else(|| form_err("defstrand needs a height", clause))?;
                if h < 1 || h as usize > role.len() {
                    return Err(SkelError::Height { role: rname.to_string(), height: h, len: role.len() });
                }
                let mut fixed = Subst::new();
                for m in &rest[2..] {
                    let [k, v] = m.as_list().unwrap_or(&[]) else {
                        return Err(form_err("maplet must be (variable term)", m));
                    };
                    let kname = k.as_symbol().ok_or_else(|| form_err("maplet key must be a symbol", k))?;
                    let rv = role.vars.iter().find(|v| &*v.name == kname).ok_or_else(|| form_err(format!("{kname} is not a variable of {rname}"), k))?;
                    let t = parse_term(v, &scope)?;
                    if rv.sort.is_base() && (t.sort() != rv.sort || !t.is_atom()) {
                        return Err(SkelError::MapletSort { var: kname.to_string(), term: t.to_string() });
                    }
                    fixed.insert(rv.clone(), t);
                }
                let st = sk.fresh_instance(ridx, h as usize, &fixed, &mut taken);
                sk.strands.push(st);
            }
            Some("deflistener") => {
                let [t] = clause.tail() else {
                    return Err(form_err("deflistener takes one term", clause));
                };
                sk.strands.push(Strand::listener(parse_term(t, &scope)?));
            }
            Some("precedes") => {
                for pair in clause.tail() {
                    let nodes = pair.as_list().filter(|l| l.len() == 2).ok_or_else(|| form_err("ordering must be a node pair", pair))?;
                    let a = Node::parse(&nodes[0]).ok_or_else(|| form_err("bad node", &nodes[0]))?;
                    let b = Node::parse(&nodes[1]).ok_or_else(|| form_err("bad node", &nodes[1]))?;
                    edges.push((a, b));
                }
            }
            Some("non-orig") => {
                for t in clause.tail() {
                    declared_non.push(parse_term(t, &scope)?);
                }
            }
            Some("uniq-orig") => {
                for t in clause.tail() {
                    declared_uniq.push(parse_term(t, &scope)?);
                }
            }
            _ => {}
        }
    }
    sk.precedes = edges.into_iter().collect();
    sk.non_orig.extend(declared_non);
    sk.uniq_orig.extend(declared_uniq);
    sk.refresh_inherited();
    sk.validate_pre()?;
    Ok(sk)
}

/// A strand map plus a substitution carrying one skeleton into another.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hom {
    pub strands: Vec<usize>,
    pub subst: Subst,
}

#[derive(Clone, Copy)]
struct HomOpts {
    iso: bool,
    fixed: usize,
}

fn hom_search(a: &Skeleton, b: &Skeleton, opts: HomOpts) -> Option<Hom> {
    if a.protocol.name != b.protocol.name {
        return None;
    }
    if opts.iso && (a.strands.len() != b.strands.len() || a.fingerprint() != b.fingerprint()) {
        return None;
    }
    let b_order = b.order();
    let a_origins = a.uniq_origins();
    let mut map = Vec::with_capacity(a.strands.len());
    let mut used = vec![false; b.strands.len()];
    search(a, b, opts, &b_order, &a_origins, &mut map, &mut used, Subst::new())
}

#[allow(clippy::too_many_arguments)]
fn search(
    a: &Skeleton,
    b: &Skeleton,
    opts: HomOpts,
    b_order: &Order,
    a_origins: &BTreeMap<Term, Node>,
    map: &mut Vec<usize>,
    used: &mut [bool],
    subst: Subst,
) -> Option<Hom> {
    let i = map.len();
    if i == a.strands.len() {
        return finish(a, b, opts, b_order, a_origins, map, subst);
    }
    let sa = &a.strands[i];
    let candidates: Vec<usize> = if i < opts.fixed { vec![i] } else { (0..b.strands.len()).collect() };
    for j in candidates {
        if j >= b.strands.len() || (opts.iso && used[j]) {
            continue;
        }
        let sb = &b.strands[j];
        if !sa.same_kind(sb) || sa.height() > sb.height() || (opts.iso && sa.height() != sb.height()) {
            continue;
        }
        let mut s = Some(subst.clone());
        for (ea, eb) in sa.trace.iter().zip(&sb.trace) {
            s = s.and_then(|s| if ea.dir == eb.dir { match_term(&ea.msg, &eb.msg, &s) } else { None });
        }
        let Some(s) = s else { continue };
        if opts.iso && !is_renaming(&s) {
            continue;
        }
        map.push(j);
        used[j] = true;
        let found = search(a, b, opts, b_order, a_origins, map, used, s);
        map.pop();
        used[j] = false;
        if found.is_some() {
            return found;
        }
    }
    None
}

fn is_renaming(s: &Subst) -> bool {
    let mut seen = BTreeSet::new();
    s.iter().all(|(v, t)| matches!(t, Term::Var(w) if w.sort == v.sort && seen.insert(w.clone())))
}

fn finish(
    a: &Skeleton,
    b: &Skeleton,
    opts: HomOpts,
    b_order: &Order,
    a_origins: &BTreeMap<Term, Node>,
    map: &[usize],
    subst: Subst,
) -> Option<Hom> {
    let phi = |n: Node| Node::new(map[n.strand], n.pos);
    let non: BTreeSet<Term> = a.non_orig.iter().map(|t| apply(&subst, t)).collect();
    let uniq: BTreeSet<Term> = a.uniq_orig.iter().map(|t| apply(&subst, t)).collect();
    if opts.iso {
        if non != b.non_orig || uniq != b.uniq_orig {
            return None;
        }
        let a_order = a.order();
        for x in a.nodes() {
            for y in a.nodes() {
                if x.strand != y.strand && a_order.before(x, y) != b_order.before(phi(x), phi(y)) {
                    return None;
                }
            }
        }
    } else {
        if !non.is_subset(&b.non_orig) || !uniq.is_subset(&b.uniq_orig) {
            return None;
        }
        for &(x, y) in &a.precedes {
            if !b_order.before(phi(x), phi(y)) {
                return None;
            }
        }
        for (u, n) in a_origins {
            if !b.origins(&apply(&subst, u)).contains(&phi(*n)) {
                return None;
            }
        }
    }
    Some(Hom { strands: map.to_vec(), subst })
}

pub fn isomorphic(a: &Skeleton, b: &Skeleton) -> bool {
    isomorphism(a, b).is_some()
}

pub fn isomorphism(a: &Skeleton, b: &Skeleton) -> Option<Hom> {
    hom_search(a, b, HomOpts { iso: true, fixed: 0 })
}

/// A homomorphism from `general` into `specific`, if one exists.
pub fn specializes(general: &Skeleton, specific: &Skeleton) -> Option<Hom> {
    hom_search(general, specific, HomOpts { iso: false, fixed: 0 })
}

/// Like `specializes`, but the first `fixed` strands must map to themselves.
pub fn specializes_fixing(general: &Skeleton, specific: &Skeleton, fixed: usize) -> Option<Hom> {
    hom_search(general, specific, HomOpts { iso: false, fixed })
}

pub fn compose_subst(after: &Subst, before: &Subst) -> Subst {
    compose(after, before)
}
