use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::adversary::{unrealized_with, DerivationContext, Knowledge};
use crate::protocol::Herald;
use crate::sexpr::SExpr;
use crate::skeleton::{isomorphic, specializes_fixing, Node, Order, Skeleton, Strand, StrandKind};
use crate::terms::{apply, compose, match_term, unify_with, Dir, Event, Subst, Term, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolverConfig {
    pub strand_bound: usize,
    pub check_nonces_first: bool,
    pub step_limit: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { strand_bound: 12, check_nonces_first: false, step_limit: 2000 }
    }
}

impl SolverConfig {
    pub fn from_herald(h: Option<&Herald>) -> SolverConfig {
        let mut cfg = SolverConfig::default();
        if let Some(h) = h {
            if let Some(b) = h.bound {
                cfg.strand_bound = b;
            }
            cfg.check_nonces_first = h.check_nonces;
        }
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TestTag {
    Nonce,
    Encryption,
}

impl TestTag {
    pub fn name(self) -> &'static str {
        match self {
            TestTag::Nonce => "nonce-test",
            TestTag::Encryption => "encryption-test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestKind {
    pub tag: TestTag,
    pub critical: Term,
    pub node: Node,
    /// Escape set, each member paired with the transmission it was found in.
    pub escape: Vec<(Term, Node)>,
}

impl TestKind {
    pub fn escape_terms(&self) -> Vec<Term> {
        self.escape.iter().map(|(t, _)| t.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Contracted(Vec<(Var, Term)>),
    AddedStrand { role: String, height: usize },
    AddedListener(Term),
    Displaced { old: usize, new: usize, role: String, height: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperationRecord {
    pub tag: TestTag,
    pub action: Action,
    pub critical: Term,
    pub node: Node,
    pub escape: Vec<Term>,
}

impl OperationRecord {
    pub fn to_sexpr(&self) -> SExpr {
        let action = match &self.action {
            Action::Contracted(maplets) => {
                let mut items = vec![SExpr::sym("contracted")];
                items.extend(maplets.iter().map(|(v, t)| SExpr::list(vec![SExpr::sym(&*v.name), t.to_sexpr()])));
                SExpr::list(items)
            }
            Action::AddedStrand { role, height } => {
                SExpr::list(vec![SExpr::sym("added-strand"), SExpr::sym(role), SExpr::int(*height as i64)])
            }
            Action::AddedListener(t) => SExpr::list(vec![SExpr::sym("added-listener"), t.to_sexpr()]),
            Action::Displaced { old, new, role, height } => SExpr::list(vec![
                SExpr::sym("displaced"),
                SExpr::int(*old as i64),
                SExpr::int(*new as i64),
                SExpr::sym(role),
                SExpr::int(*height as i64),
            ]),
        };
        let mut items = vec![SExpr::sym("operation"), SExpr::sym(self.tag.name()), action, self.critical.to_sexpr()];
        items.push(self.node.to_sexpr());
        items.extend(self.escape.iter().map(Term::to_sexpr));
        SExpr::list(items)
    }

    pub fn action_name(&self) -> &'static str {
        match self.action {
            Action::Contracted(_) => "contracted",
            Action::AddedStrand { .. } => "added-strand",
            Action::AddedListener(_) => "added-listener",
            Action::Displaced { .. } => "displaced",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Obstacle {
    Nonce(Term),
    Encryption(Term),
}

fn obstacles(t: &Term, know: &Knowledge, out: &mut Vec<Obstacle>) {
    if know.synth(t) {
        return;
    }
    match t {
        Term::Cat(a, b) => {
            obstacles(a, know, out);
            obstacles(b, know, out);
        }
        Term::Enc(body, key) => {
            if know.synth(key) {
                obstacles(body, know, out);
            } else {
                out.push(Obstacle::Encryption(t.clone()));
            }
        }
        _ if know.ctx.uniq_orig.contains_key(t) => out.push(Obstacle::Nonce(t.clone())),
        _ => {}
    }
}

/// Outermost encryptions in `t` that carry `c` and that the adversary cannot
/// open.  Returns whether some occurrence of `c` is left unprotected.
fn outer_protectors(t: &Term, c: &Term, know: &Knowledge, out: &mut Vec<Term>) -> bool {
    if t == c {
        return true;
    }
    match t {
        Term::Cat(a, b) => {
            let l = outer_protectors(a, c, know, out);
            let r = outer_protectors(b, c, know, out);
            l || r
        }
        Term::Enc(body, key) if body.carries(c) => {
            if know.synth(&key.decryption_key()) {
                outer_protectors(body, c, know, out)
            } else {
                if !out.contains(t) {
                    out.push(t.clone());
                }
                false
            }
        }
        _ => false,
    }
}

fn escape_set(sk: &Skeleton, order: &Order, n: Node, c: &Term, know: &Knowledge) -> Vec<(Term, Node)> {
    let mut out: Vec<(Term, Node)> = Vec::new();
    for m in sk.nodes() {
        if !order.before(m, n) || sk.event(m).dir != Dir::Send {
            continue;
        }
        let mut prot = Vec::new();
        outer_protectors(&sk.event(m).msg, c, know, &mut prot);
        for p in prot {
            if !out.iter().any(|(q, _)| *q == p) {
                out.push((p, m));
            }
        }
    }
    out
}

/// Pick the authentication test to solve next.
pub fn select_test(sk: &Skeleton, unrealized: &[Node], cfg: &SolverConfig) -> Option<TestKind> {
    let order = sk.order();
    let mut first_nonce = None;
    let mut first_any = None;
    for &n in unrealized {
        let ctx = DerivationContext::at(sk, &order, n);
        let know = ctx.analyze();
        let mut obs = Vec::new();
        obstacles(&sk.event(n).msg, &know, &mut obs);
        for o in obs {
            if first_any.is_none() {
                first_any = Some((n, o.clone()));
            }
            if first_nonce.is_none() && matches!(o, Obstacle::Nonce(_)) {
                first_nonce = Some((n, o));
            }
        }
    }
    let chosen = if cfg.check_nonces_first { first_nonce.or(first_any) } else { first_any };
    let (n, o) = chosen?;
    let ctx = DerivationContext::at(sk, &order, n);
    let know = ctx.analyze();
    let (tag, critical) = match o {
        Obstacle::Nonce(t) => (TestTag::Nonce, t),
        Obstacle::Encryption(t) => (TestTag::Encryption, t),
    };
    let escape = escape_set(sk, &order, n, &critical, &know);
    Some(TestKind { tag, critical, node: n, escape })
}

/// Unify, binding variables of the term from the later strand when two
/// variables meet.
fn unify_pref(a: &Term, a_strand: usize, b: &Term, b_strand: usize, seed: &Subst) -> Option<Subst> {
    if a_strand >= b_strand {
        unify_with(a, b, seed)
    } else {
        unify_with(b, a, seed)
    }
}

/// Encryptions enclosing each carried occurrence of `c` in `t`.
fn enclosing(t: &Term, c: &Term, path: &mut Vec<Term>, out: &mut Vec<Term>) {
    if t == c {
        for p in path.iter() {
            if !out.contains(p) {
                out.push(p.clone());
            }
        }
        return;
    }
    match t {
        Term::Cat(a, b) => {
            enclosing(a, c, path, out);
            enclosing(b, c, path, out);
        }
        Term::Enc(body, _) if body.carries(c) => {
            path.push(t.clone());
            enclosing(body, c, path, out);
            path.pop();
        }
        _ => {}
    }
}

/// Find an occurrence of `c` carried outside every member of `escape`;
/// return the encryptions enclosing it.
fn outside_occurrence(t: &Term, c: &Term, escape: &[Term]) -> Option<Vec<Term>> {
    fn go(t: &Term, c: &Term, escape: &[Term], path: &mut Vec<Term>) -> Option<Vec<Term>> {
        if escape.contains(t) {
            return None;
        }
        if t == c {
            return Some(path.clone());
        }
        match t {
            Term::Cat(a, b) => go(a, c, escape, path).or_else(|| go(b, c, escape, path)),
            Term::Enc(body, _) => {
                path.push(t.clone());
                let r = go(body, c, escape, path);
                path.pop();
                r
            }
            _ => None,
        }
    }
    go(t, c, escape, &mut Vec::new())
}

const REFINE_DEPTH: usize = 3;

/// Substitutions under which the last event of `trace` (a transmission) is
/// the first to carry `c` outside `escape`.
fn transforming_substs(trace: &[Event], c: &Term, escape: &[Term]) -> Vec<Subst> {
    let last = trace.len() - 1;
    let mut seeds = Vec::new();
    for t in trace[last].msg.carried() {
        if let Some(s) = unify_with(t, c, &Subst::new()) {
            seeds.push(s);
        }
    }
    for e in &trace[..last] {
        if e.dir != Dir::Recv {
            continue;
        }
        for t in e.msg.carried() {
            if !matches!(t, Term::Enc(..)) {
                continue;
            }
            for x in escape {
                if let Some(s) = unify_with(t, x, &Subst::new()) {
                    seeds.push(s);
                }
            }
        }
    }
    let mut out: Vec<Subst> = Vec::new();
    let mut traces: Vec<Vec<Event>> = Vec::new();
    for seed in seeds {
        refine(trace, c, escape, seed, 0, &mut out, &mut traces);
    }
    out
}


fn refine(
    trace: &[Event],
    c: &Term,
    escape: &[Term],
    s: Subst,
    depth: usize,
    out: &mut Vec<Subst>,
    seen: &mut Vec<Vec<Event>>,
) {
    let last = trace.len() - 1;
    let tr: Vec<Event> = trace.iter().map(|e| e.apply(&s)).collect();
    let c2 = apply(&s, c);
    let esc: Vec<Term> = escape.iter().map(|x| apply(&s, x)).collect();
    for e in &tr[..last] {
        if let Some(path) = outside_occurrence(&e.msg, &c2, &esc) {
            if depth >= REFINE_DEPTH {
                return;
            }
            for enc in &path {
                for x in &esc {
                    if let Some(s2) = unify_with(enc, x, &s) {
                        refine(trace, c, escape, s2, depth + 1, out, seen);
                    }
                }
            }
            return;
        }
    }
    if outside_occurrence(&tr[last].msg, &c2, &esc).is_some() {
        if !seen.contains(&tr) {
            seen.push(tr);
            out.push(s);
        }
    }
}

fn remap_node(n: Node, from: usize, to: usize) -> Node {
    let strand = if n.strand == from {
        to
    } else if n.strand > from {
        n.strand - 1
    } else {
        n.strand
    };
    Node::new(strand, n.pos)
}

/// Remove strand `drop`, moving its orderings onto strand `keep`.  Fails if
/// that would order a node before itself.
fn fold_strand(sk: &mut Skeleton, drop: usize, keep: usize) -> bool {
    let target = if keep > drop { keep - 1 } else { keep };
    sk.strands.remove(drop);
    let mut edges = BTreeSet::new();
    for &(a, b) in &sk.precedes {
        let a2 = remap_node(a, drop, target);
        let b2 = remap_node(b, drop, target);
        if a2.strand == b2.strand {
            if a2.pos >= b2.pos {
                return false;
            }
            continue;
        }
        edges.insert((a2, b2));
    }
    sk.precedes = edges;
    true
}

/// Identify strands `a` and `b` of the same role, unifying their traces on
/// the common prefix.  Strand `b` disappears into `a`.
fn merge_strands(sk: &Skeleton, a: usize, b: usize) -> Option<(Skeleton, Subst)> {
    let (sa, sb) = (&sk.strands[a], &sk.strands[b]);
    let (StrandKind::Role { role, subst: subst_a }, StrandKind::Role { role: rb, subst: subst_b }) = (&sa.kind, &sb.kind)
    else {
        return None;
    };
    if role != rb {
        return None;
    }
    let mut s = Subst::new();
    for (ea, eb) in sa.trace.iter().zip(&sb.trace) {
        if ea.dir != eb.dir {
            return None;
        }
        s = unify_pref(&eb.msg, b, &ea.msg, a, &s)?;
    }
    let mut out = sk.apply(&s);
    let height = sa.height().max(sb.height());
    let mut merged: Subst = subst_b.iter().map(|(v, t)| (v.clone(), apply(&s, t))).collect();
    for (v, t) in subst_a {
        merged.insert(v.clone(), apply(&s, t));
    }
    let r = &sk.protocol.roles[*role];
    out.strands[a] = Strand::role_instance(*role, r, height, merged);
    if !fold_strand(&mut out, b, a) {
        return None;
    }
    out.refresh_inherited();
    Some((out, s))
}

/// Merge strands that originate the same uniquely originating atom.
fn merge_origins(mut sk: Skeleton) -> Option<Skeleton> {
    loop {
        let mut conflict = None;
        for u in &sk.uniq_orig {
            let o = sk.origins(u);
            if o.len() > 1 {
                conflict = Some((o[0], o[1]));
                break;
            }
        }
        let Some((x, y)) = conflict else { return Some(sk) };
        if x.pos != y.pos {
            return None;
        }
        sk = merge_strands(&sk, x.strand, y.strand)?.0;
    }
}

fn strand_vars(s: &Strand) -> Vec<Var> {
    let mut out = Vec::new();
    for e in &s.trace {
        e.msg.vars_into(&mut out);
    }
    out
}

/// Drop strands that add nothing: the strand maps into another strand of the
/// same role by renaming only variables no other strand mentions, and its
/// orderings already hold for the image.
fn prune_redundant(mut sk: Skeleton, fixed: usize) -> Skeleton {
    'outer: loop {
        let order = sk.order();
        for s in (fixed..sk.strands.len()).rev() {
            let mine = strand_vars(&sk.strands[s]);
            let mut elsewhere = Vec::new();
            for (i, st) in sk.strands.iter().enumerate() {
                if i != s {
                    for e in &st.trace {
                        e.msg.vars_into(&mut elsewhere);
                    }
                }
            }
            for t in 0..sk.strands.len() {
                if t == s || !sk.strands[s].same_kind(&sk.strands[t]) || sk.strands[s].height() > sk.strands[t].height() {
                    continue;
                }
                let mut sub = Some(Subst::new());
                for (es, et) in sk.strands[s].trace.iter().zip(&sk.strands[t].trace) {
                    sub = sub.and_then(|m| if es.dir == et.dir { match_term(&es.msg, &et.msg, &m) } else { None });
                }
                let Some(sub) = sub else { continue };
                let private_only = sub.iter().all(|(v, img)| img.as_var() == Some(v) || !elsewhere.contains(v));
                if !private_only || mine.iter().any(|v| elsewhere.contains(v) && sub.get(v).is_some_and(|i| i.as_var() != Some(v))) {
                    continue;
                }
                let implied = sk.precedes.iter().all(|&(a, b)| {
                    if b.strand == s {
                        a.strand == t || order.before(a, Node::new(t, b.pos))
                    } else if a.strand == s {
                        b.strand == t || order.before(Node::new(t, a.pos), b)
                    } else {
                        true
                    }
                });
                let no: BTreeSet<Term> = sk.non_orig.iter().map(|x| apply(&sub, x)).collect();
                let un: BTreeSet<Term> = sk.uniq_orig.iter().map(|x| apply(&sub, x)).collect();
                if !implied || !no.is_subset(&sk.non_orig) || !un.is_subset(&sk.uniq_orig) {
                    continue;
                }
                let mut next = sk.clone();
                next.non_orig = no;
                next.uniq_orig = un;
                if fold_strand(&mut next, s, t) {
                    next.reduce();
                    sk = next;
                    continue 'outer;
                }
            }
        }
        return sk;
    }
}

/// Turn a raw refinement into a skeleton, or reject it.
pub fn finish_child(pre: Skeleton, fixed: usize) -> Option<Skeleton> {
    let merged = merge_origins(pre)?;
    let pruned = prune_redundant(merged, fixed);
    let sk = pruned.to_skeleton().ok()?;
    sk.validate().ok()?;
    Some(sk)
}

fn contracted_maplets(parent: &Skeleton, s: &Subst) -> Vec<(Var, Term)> {
    let vars = parent.vars();
    s.iter()
        .filter(|(v, t)| vars.contains(v) && t.as_var() != Some(*v))
        .map(|(v, t)| (v.clone(), t.clone()))
        .collect()
}

/// All refinements of `sk` produced by solving `test`.
pub fn cohort(sk: &Skeleton, test: &TestKind, fixed: usize) -> Vec<(OperationRecord, Skeleton)> {
    let order = sk.order();
    let n = test.node;
    let c = &test.critical;
    let esc = test.escape_terms();
    let record = |action: Action| OperationRecord {
        tag: test.tag,
        action,
        critical: c.clone(),
        node: n,
        escape: if test.tag == TestTag::Nonce { esc.clone() } else { Vec::new() },
    };
    let mut raw: Vec<(OperationRecord, Skeleton, Option<Subst>)> = Vec::new();

    // contraction
    let mut encs = Vec::new();
    enclosing(&sk.event(n).msg, c, &mut Vec::new(), &mut encs);
    for enc in &encs {
        for (x, m) in &test.escape {
            if let Some(s) = unify_pref(x, m.strand, enc, n.strand, &Subst::new()) {
                let mut child = sk.apply(&s);
                child.precedes.insert((*m, n));
                raw.push((record(Action::Contracted(contracted_maplets(sk, &s))), child, Some(s)));
            }
        }
    }
    for m in sk.nodes() {
        if m == n || order.before(n, m) || order.before(m, n) || sk.event(m).dir != Dir::Send {
            continue;
        }
        let msg = &sk.event(m).msg;
        match test.tag {
            TestTag::Nonce => {
                let earlier = (0..m.pos).any(|p| outside_occurrence(&sk.event(Node::new(m.strand, p)).msg, c, &esc).is_some());
                if !earlier && outside_occurrence(msg, c, &esc).is_some() {
                    let mut child = sk.clone();
                    child.precedes.insert((m, n));
                    raw.push((record(Action::Contracted(Vec::new())), child, Some(Subst::new())));
                }
            }
            TestTag::Encryption => {
                let mut tried = Vec::new();
                for t in msg.carried() {
                    if !matches!(t, Term::Enc(..)) || tried.contains(t) {
                        continue;
                    }
                    tried.push(t.clone());
                    if let Some(s) = unify_pref(t, m.strand, c, n.strand, &Subst::new()) {
                        let mut child = sk.apply(&s);
                        let esc2: Vec<Term> = esc.iter().map(|x| apply(&s, x)).collect();
                        if outside_occurrence(&child.event(m).msg, &apply(&s, c), &esc2).is_none() {
                            continue;
                        }
                        child.precedes.insert((m, n));
                        raw.push((record(Action::Contracted(contracted_maplets(sk, &s))), child, Some(s)));
                    }
                }
            }
        }
    }

    // augmentation, then displacement of the new strand onto existing ones
    let new_index = sk.strands.len();
    for (ri, role) in sk.protocol.roles.iter().enumerate() {
        for h in (1..=role.len()).rev() {
            if role.trace[h - 1].dir != Dir::Send {
                continue;
            }
            let mut taken = sk.var_names();
            let inst = sk.fresh_instance(ri, h, &Subst::new(), &mut taken);
            for s in transforming_substs(&inst.trace, c, &esc) {
                let mut base = sk.clone();
                base.strands.push(inst.clone());
                base.precedes.insert((Node::new(new_index, h - 1), n));
                let child = base.apply(&s);
                if !solves(&child, test, &s) {
                    continue;
                }
                for (old, st) in child.strands.iter().enumerate().take(new_index) {
                    if st.role_index() == Some(ri) {
                        if let Some((d, ms)) = merge_strands(&child, old, new_index) {
                            if !solves(&d, test, &compose(&ms, &s)) {
                                continue;
                            }
                            let action = Action::Displaced { old, new: new_index, role: role.name.clone(), height: h };
                            raw.push((record(action), d, None));
                        }
                    }
                }
                raw.push((record(Action::AddedStrand { role: role.name.clone(), height: h }), child, None));
            }
        }
    }

    // listeners
    let mut keys: Vec<Term> = esc
        .iter()
        .filter_map(|x| match x {
            Term::Enc(_, k) => Some(k.decryption_key()),
            _ => None,
        })
        .collect();
    if test.tag == TestTag::Encryption {
        if let Term::Enc(_, k) = c {
            keys.push((**k).clone());
        }
    }
    let mut done = Vec::new();
    for k in keys {
        if done.contains(&k) || sk.non_orig.contains(&k) {
            continue;
        }
        done.push(k.clone());
        let mut child = sk.clone();
        child.strands.push(Strand::listener(k.clone()));
        child.precedes.insert((Node::new(new_index, 1), n));
        raw.push((record(Action::AddedListener(k)), child, Some(Subst::new())));
    }

    let mut out: Vec<(OperationRecord, Skeleton)> = Vec::new();
    for (op, pre, s) in raw {
        if s.is_some_and(|s| !solves(&pre, test, &s)) {
            continue;
        }
        if let Some(child) = finish_child(pre, fixed) {
            if specializes_fixing(sk, &child, fixed).is_none() {
                continue;
            }
            if !out.iter().any(|(_, o)| isomorphic(o, &child)) {
                out.push((op, child));
            }
        }
    }
    out
}

/// Does the refined skeleton answer the test?  `pre` keeps the test node's
/// index and is the tested skeleton under `s`, possibly with more strands.
fn solves(pre: &Skeleton, test: &TestKind, s: &Subst) -> bool {
    let n = test.node;
    let c = apply(s, &test.critical);
    let esc: Vec<Term> = test.escape.iter().map(|(x, _)| apply(s, x)).collect();
    let order = pre.order();
    let ctx = DerivationContext::at(pre, &order, n);
    let know = ctx.analyze();
    let mut encs = Vec::new();
    enclosing(&pre.event(n).msg, &c, &mut Vec::new(), &mut encs);
    if encs.iter().any(|e| esc.contains(e)) {
        return true;
    }
    if esc.iter().any(|x| matches!(x, Term::Enc(_, k) if know.synth(&k.decryption_key()))) {
        return true;
    }
    if test.tag == TestTag::Encryption {
        if let Term::Enc(_, k) = &c {
            if know.synth(k) {
                return true;
            }
        }
    }
    if know.synth(&c) {
        return true;
    }
    pre.nodes().any(|m| {
        pre.event(m).dir == Dir::Send
            && order.before(m, n)
            && outside_occurrence(&pre.event(m).msg, &c, &esc).is_some()
    })
}

#[derive(Debug, Clone)]
pub struct TreeNode {
    pub label: usize,
    pub skeleton: Skeleton,
    pub parent: Option<usize>,
    pub operation: Option<OperationRecord>,
    pub unrealized: Vec<Node>,
    pub realized: bool,
    pub shape: bool,
    pub children: Vec<usize>,
    pub cohort_size: usize,
    pub seen: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SearchTree {
    /// The problem as stated, before ordering edges implied by origination
    /// are added.
    pub problem: Skeleton,
    pub problem_unrealized: Vec<Node>,
    pub nodes: Vec<TreeNode>,
    pub fixed: usize,
    pub incomplete: bool,
    pub bound_pruned: usize,
    pub error: Option<String>,
}

impl SearchTree {
    pub fn shapes(&self) -> Vec<&TreeNode> {
        self.nodes.iter().filter(|n| n.shape).collect()
    }
}

pub fn search(problem: &Skeleton, cfg: &SolverConfig) -> SearchTree {
    let problem_unrealized = unrealized_with(problem, &problem.order());
    let fixed = problem.strands.len();
    let mut tree = SearchTree {
        problem: problem.clone(),
        problem_unrealized,
        nodes: Vec::new(),
        fixed,
        incomplete: false,
        bound_pruned: 0,
        error: None,
    };
    let root = match problem.to_skeleton().and_then(|s| s.validate().map(|_| s)) {
        Ok(s) => s,
        Err(e) => {
            tree.error = Some(e.to_string());
            return tree;
        }
    };
    let mut seen: BTreeMap<_, Vec<usize>> = BTreeMap::new();
    seen.entry(root.fingerprint()).or_default().push(0);
    tree.nodes.push(TreeNode {
        label: 0,
        skeleton: root,
        parent: None,
        operation: None,
        unrealized: Vec::new(),
        realized: false,
        shape: false,
        children: Vec::new(),
        cohort_size: 0,
        seen: Vec::new(),
    });
    let mut queue = VecDeque::from([0usize]);
    let mut found: Vec<usize> = Vec::new();
    let mut steps = 0;
    while let Some(id) = queue.pop_front() {
        if steps >= cfg.step_limit {
            tree.incomplete = true;
            break;
        }
        steps += 1;
        let sk = tree.nodes[id].skeleton.clone();
        let order = sk.order();
        let unrealized = unrealized_with(&sk, &order);
        tree.nodes[id].unrealized = unrealized.clone();
        if unrealized.is_empty() {
            tree.nodes[id].realized = true;
            if !found.iter().any(|&f| specializes_fixing(&tree.nodes[f].skeleton, &sk, fixed).is_some()) {
                found.push(id);
            }
            continue;
        }
        if found.iter().any(|&f| specializes_fixing(&tree.nodes[f].skeleton, &sk, fixed).is_some()) {
            continue;
        }
        let Some(test) = select_test(&sk, &unrealized, cfg) else { continue };
        let kids = cohort(&sk, &test, fixed);
        tree.nodes[id].cohort_size = kids.len();
        for (op, child) in kids {
            if child.strands.len() > cfg.strand_bound {
                tree.bound_pruned += 1;
                continue;
            }
            let fp = child.fingerprint();
            if let Some(prev) =
                seen.get(&fp).and_then(|ids| ids.iter().copied().find(|&p| isomorphic(&tree.nodes[p].skeleton, &child)))
            {
                tree.nodes[id].seen.push(prev);
                continue;
            }
            let label = tree.nodes.len();
            seen.entry(fp).or_default().push(label);
            tree.nodes[id].children.push(label);
            tree.nodes.push(TreeNode {
                label,
                skeleton: child,
                parent: Some(id),
                operation: Some(op),
                unrealized: Vec::new(),
                realized: false,
                shape: false,
                children: Vec::new(),
                cohort_size: 0,
                seen: Vec::new(),
            });
            queue.push_back(label);
        }
    }
    for &f in &found {
        let minimal = !found.iter().any(|&g| {
            g != f && specializes_fixing(&tree.nodes[g].skeleton, &tree.nodes[f].skeleton, fixed).is_some()
        });
        if minimal {
            tree.nodes[f].shape = true;
        }
    }
    tree
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::unrealized_nodes;
    use crate::terms::Sort;
    use crate::corpus;

    fn caves() -> corpus::Fixture {
        corpus::load_fixture("caves").unwrap()
    }

    fn cfg() -> SolverConfig {
        SolverConfig { strand_bound: 12, check_nonces_first: true, step_limit: 2000 }
    }

    #[test]
    fn label_zero_picks_nonce_test() {
        let fx = caves();
        let sk = fx.scenarios[0].problem.to_skeleton().unwrap();
        let un = unrealized_nodes(&sk);
        let t = select_test(&sk, &un, &cfg()).unwrap();
        assert_eq!(t.tag, TestTag::Nonce);
        assert_eq!(t.critical, Term::var("nv", Sort::Data));
        assert_eq!(t.node, Node::new(0, 3));
    }

    #[test]
    fn attester_picks_encryption_test() {
        let fx = caves();
        let sk = fx.scenarios[2].problem.to_skeleton().unwrap();
        let un = unrealized_nodes(&sk);
        let t = select_test(&sk, &un, &cfg()).unwrap();
        assert_eq!(t.tag, TestTag::Encryption);
        assert_eq!(t.critical, sk.event(Node::new(0, 0)).msg);
        let kids = cohort(&sk, &t, 1);
        assert!(kids.iter().any(|(op, _)| op.action == Action::AddedStrand { role: "client".into(), height: 3 }));
    }

    #[test]
    fn verifier_height_four_adds_server() {
        let fx = caves();
        let sk = fx.scenarios[1].problem.to_skeleton().unwrap();
        let un = unrealized_nodes(&sk);
        let t = select_test(&sk, &un, &cfg()).unwrap();
        let kids = cohort(&sk, &t, 1);
        assert!(kids.iter().any(|(op, _)| op.action == Action::AddedStrand { role: "server".into(), height: 4 }));
    }

    #[test]
    fn realized_problem_is_its_own_shape() {
        let fx = caves();
        let tree = search(&fx.scenarios[3].problem, &cfg());
        let shapes = tree.shapes();
        assert_eq!(shapes.len(), 1);
        assert_eq!(shapes[0].label, 0);
    }
}
