use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::skeleton::{Node, Order, Skeleton};
use crate::terms::{Dir, Sort, Term};

#[derive(Debug, Clone, Default)]
pub struct DerivationContext {
    pub available: Vec<Term>,
    pub non_orig: BTreeSet<Term>,
    /// Origin of each uniquely originating atom; `None` when it originates
    /// on no regular strand.
    pub uniq_orig: BTreeMap<Term, Option<Node>>,
    pub target: Option<Node>,
}

impl DerivationContext {
    pub fn at(sk: &Skeleton, order: &Order, n: Node) -> DerivationContext {
        let available = sk.nodes().filter(|&m| order.before(m, n)).map(|m| sk.event(m).msg.clone()).collect();
        DerivationContext {
            available,
            non_orig: sk.non_orig.clone(),
            uniq_orig: uniq_map(sk),
            target: Some(n),
        }
    }

    /// May the adversary make up this atom?
    pub fn creatable(&self, t: &Term) -> bool {
        match t {
            Term::Tag(_) => true,
            Term::Var(v) if v.sort == Sort::Mesg => true,
            _ if t.is_atom() => !self.non_orig.contains(t) && !matches!(self.uniq_orig.get(t), Some(Some(_))),
            _ => false,
        }
    }

    pub fn analyze(&self) -> Knowledge<'_> {
        let mut k = Knowledge { ctx: self, known: BTreeSet::new() };
        let mut pending: Vec<Term> = Vec::new();
        let mut queue: Vec<Term> = self.available.clone();
        loop {
            while let Some(t) = queue.pop() {
                if k.known.contains(&t) || self.non_orig.contains(&t) {
                    continue;
                }
                match &t {
                    Term::Cat(a, b) => {
                        queue.push((**a).clone());
                        queue.push((**b).clone());
                    }
                    Term::Enc(..) => pending.push(t.clone()),
                    _ => {}
                }
                k.known.insert(t);
            }
            let mut opened = false;
            pending.retain(|e| {
                let Term::Enc(b, key) = e else { return false };
                if k.synth(&key.decryption_key()) {
                    queue.push((**b).clone());
                    opened = true;
                    false
                } else {
                    true
                }
            });
            if !opened {
                return k;
            }
        }
    }

    pub fn derivable(&self, goal: &Term) -> bool {
        self.analyze().synth(goal)
    }
}

pub fn uniq_map(sk: &Skeleton) -> BTreeMap<Term, Option<Node>> {
    sk.uniq_orig
        .iter()
        .map(|u| {
            let o = sk.origins(u);
            (u.clone(), o.first().copied())
        })
        .collect()
}

/// The analyzed knowledge of a context, reusable for many goals.
#[derive(Debug, Clone)]
pub struct Knowledge<'a> {
    pub ctx: &'a DerivationContext,
    pub known: BTreeSet<Term>,
}

impl Knowledge<'_> {
    pub fn synth(&self, t: &Term) -> bool {
        if self.known.contains(t) {
            return true;
        }
        match t {
            Term::Cat(a, b) | Term::Enc(a, b) => self.synth(a) && self.synth(b),
            _ => self.ctx.creatable(t),
        }
    }
}

pub fn derivable(ctx: &DerivationContext, goal: &Term) -> bool {
    ctx.derivable(goal)
}

pub fn unrealized_nodes(sk: &Skeleton) -> Vec<Node> {
    let order = sk.order();
    unrealized_with(sk, &order)
}

pub fn unrealized_with(sk: &Skeleton, order: &Order) -> Vec<Node> {
    let uniq = uniq_map(sk);
    sk.nodes()
        .filter(|&n| sk.event(n).dir == Dir::Recv)
        .filter(|&n| {
            let ctx = DerivationContext {
                available: sk.nodes().filter(|&m| order.before(m, n)).map(|m| sk.event(m).msg.clone()).collect(),
                non_orig: sk.non_orig.clone(),
                uniq_orig: uniq.clone(),
                target: Some(n),
            };
            !ctx.derivable(&sk.event(n).msg)
        })
        .collect()
}

/// An indented account of how the adversary builds `goal`, or where it
/// gets stuck.
pub fn explain(ctx: &DerivationContext, goal: &Term) -> String {
    let k = ctx.analyze();
    let mut out = String::new();
    if let Some(n) = ctx.target {
        let _ = writeln!(out, "target {n}");
    }
    let _ = writeln!(out, "available");
    for t in &ctx.available {
        let _ = writeln!(out, "  {t}");
    }
    let _ = writeln!(out, "derivation of {goal}");
    explain_rec(&k, goal, 1, &mut out);
    out
}

fn explain_rec(k: &Knowledge, t: &Term, depth: usize, out: &mut String) -> bool {
    let pad = "  ".repeat(depth);
    if k.known.contains(t) {
        let _ = writeln!(out, "{pad}known {t}");
        return true;
    }
    match t {
        Term::Cat(a, b) => {
            let _ = writeln!(out, "{pad}pair {t}");
            let l = explain_rec(k, a, depth + 1, out);
            let r = explain_rec(k, b, depth + 1, out);
            l && r
        }
        Term::Enc(a, b) => {
            let _ = writeln!(out, "{pad}encrypt {t}");
            let l = explain_rec(k, a, depth + 1, out);
            let r = explain_rec(k, b, depth + 1, out);
            l && r
        }
        _ if k.ctx.creatable(t) => {
            let _ = writeln!(out, "{pad}create {t}");
            true
        }
        _ => {
            let why = if k.ctx.non_orig.contains(t) {
                "non-originating"
            } else if k.ctx.uniq_orig.contains_key(t) {
                "uniquely originating and not yet transmitted"
            } else {
                "not available"
            };
            let _ = writeln!(out, "{pad}stuck on {t} ({why})");
            false
        }
    }
}
