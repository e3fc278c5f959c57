#![allow(dead_code)]

pub mod oracle;
pub mod criteria;
pub mod props;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use shapekit::adversary::DerivationContext;
use shapekit::sexpr::SExpr;
use shapekit::skeleton::Node;
use shapekit::terms::{Sort, Term};

pub fn v(name: &str, sort: Sort) -> Term {
    Term::var(name, sort)
}

/// Base atoms of a small signature.
pub fn atoms() -> Vec<Term> {
    let a = v("a", Sort::Name);
    let b = v("b", Sort::Name);
    vec![
        a.clone(),
        b.clone(),
        v("x", Sort::Text),
        v("n", Sort::Data),
        v("k", Sort::Skey),
        v("p", Sort::Akey),
        Term::pubk(a.clone()),
        Term::privk(a.clone()),
        Term::pubk(b.clone()),
        Term::privk(b.clone()),
        Term::invk(v("p", Sort::Akey)),
        Term::ltk(a.clone(), b.clone()),
        Term::ltk(a.clone(), a),
    ]
}

pub fn keys() -> Vec<Term> {
    atoms().into_iter().filter(|t| matches!(t.sort(), Sort::Skey | Sort::Akey)).collect()
}

pub fn leaves() -> Vec<Term> {
    let mut out = atoms();
    out.push(Term::tag("t"));
    out.push(v("z", Sort::Mesg));
    out
}

/// A random term of depth at most `depth` over the small signature.
pub fn random_term(rng: &mut impl Rng, depth: usize) -> Term {
    if depth == 0 || rng.gen_bool(0.35) {
        return leaves().choose(rng).unwrap().clone();
    }
    if rng.gen_bool(0.5) {
        Term::cat(random_term(rng, depth - 1), random_term(rng, depth - 1))
    } else {
        Term::enc(random_term(rng, depth - 1), keys().choose(rng).unwrap().clone())
    }
}

/// A random derivation problem: available terms, origination assumptions,
/// and a goal that is often a subterm of something available.
pub fn random_context(rng: &mut impl Rng) -> (DerivationContext, Term) {
    let count = rng.gen_range(0..=8);
    let available: Vec<Term> = (0..count).map(|_| random_term(rng, 4)).collect();
    let mut non_orig = BTreeSet::new();
    let mut uniq_orig = BTreeMap::new();
    for a in atoms() {
        match rng.gen_range(0..6) {
            0 | 1 => {
                non_orig.insert(a);
            }
            2 => {
                uniq_orig.insert(a, Some(Node::new(0, 0)));
            }
            3 => {
                uniq_orig.insert(a, None);
            }
            _ => {}
        }
    }
    let goal = if !available.is_empty() && rng.gen_bool(0.6) {
        let mut subs = BTreeSet::new();
        for t in &available {
            t.subterms_into(&mut subs);
        }
        let subs: Vec<Term> = subs.into_iter().collect();
        let s = subs.choose(rng).unwrap().clone();
        if rng.gen_bool(0.3) {
            Term::cat(s, random_term(rng, 1))
        } else {
            s
        }
    } else {
        random_term(rng, 3)
    };
    (DerivationContext { available, non_orig, uniq_orig, target: None }, goal)
}

/// Every term of depth at most `depth`, with encryption keys drawn from
/// `keys()`.
pub fn all_terms(depth: usize) -> Vec<Term> {
    let mut level = leaves();
    let mut all = level.clone();
    for _ in 0..depth {
        let mut next = Vec::new();
        for a in &all {
            for b in &all {
                next.push(Term::cat(a.clone(), b.clone()));
            }
            for k in keys() {
                next.push(Term::enc(a.clone(), k));
            }
        }
        level = next;
        all.extend(level.iter().cloned());
        all.sort();
        all.dedup();
    }
    all
}

pub fn term_strategy(depth: u32) -> impl Strategy<Value = Term> {
    let leaf = proptest::sample::select(leaves());
    leaf.prop_recursive(depth, 64, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Term::cat(a, b)),
            (inner, proptest::sample::select(keys())).prop_map(|(b, k)| Term::enc(b, k)),
        ]
    })
}

fn symbol_strategy() -> impl Strategy<Value = String> {
    "[a-z*+<>=!?][a-z0-9*+<>=!?.-]{0,8}"
}

pub fn sexpr_strategy() -> impl Strategy<Value = SExpr> {
    let leaf = prop_oneof![
        symbol_strategy().prop_map(SExpr::sym),
        "[ -~]{0,10}".prop_map(SExpr::string),
        any::<i64>().prop_map(SExpr::int),
    ];
    leaf.prop_recursive(5, 80, 6, |inner| proptest::collection::vec(inner, 0..6).prop_map(SExpr::list))
}
