use std::collections::BTreeSet;

use rand::Rng;
use shapekit::terms::{apply, match_term, unify, Sort, Subst, Term, Var};

use super::v;

pub fn check_carries(a: &Term, universe: &[Term]) -> Result<(), String> {
    if !a.carries(a) {
        return Err(format!("{a} does not carry itself"));
    }
    let carried: Vec<&Term> = a.carried();
    for b in universe {
        if a.carries(b) != carried.contains(&b) {
            return Err(format!("carries({a}, {b}) disagrees with the carried list"));
        }
    }
    for b in &carried {
        for c in b.carried() {
            if !a.carries(c) {
                return Err(format!("{a} carries {b} which carries {c}, but not {c}"));
            }
        }
    }
    Ok(())
}

pub fn check_match(p: &Term, t: &Term) -> Result<(), String> {
    if let Some(s) = match_term(p, t, &Subst::new()) {
        if apply(&s, p) != *t {
            return Err(format!("match({p}, {t}) = {s:?} does not reproduce the target"));
        }
    }
    Ok(())
}

pub fn check_unify(a: &Term, b: &Term) -> Result<(), String> {
    if let Some(s) = unify(a, b) {
        let (x, y) = (apply(&s, a), apply(&s, b));
        if x != y {
            return Err(format!("unify({a}, {b}) gives {x} and {y}"));
        }
        if apply(&s, &x) != x {
            return Err(format!("unifier of {a} and {b} is not idempotent"));
        }
    }
    Ok(())
}

fn fresh(prefix: &str, sort: Sort, counter: &mut usize) -> Var {
    *counter += 1;
    Var::new(&format!("{prefix}{counter}"), sort)
}

/// Replace random subterms of `u` by fresh variables, recording the
/// replaced subterm for each.
pub fn generalize(u: &Term, prefix: &str, rng: &mut impl Rng, theta: &mut Subst, counter: &mut usize) -> Term {
    if rng.gen_bool(0.25) {
        let sort = if u.is_atom() { u.sort() } else { Sort::Mesg };
        let x = fresh(prefix, sort, counter);
        theta.insert(x.clone(), u.clone());
        return Term::Var(x);
    }
    match u {
        Term::Cat(a, b) => Term::cat(generalize(a, prefix, rng, theta, counter), generalize(b, prefix, rng, theta, counter)),
        Term::Enc(a, b) => Term::enc(generalize(a, prefix, rng, theta, counter), generalize(b, prefix, rng, theta, counter)),
        Term::Pubk(a) => Term::pubk(generalize(a, prefix, rng, theta, counter)),
        Term::Privk(a) => Term::privk(generalize(a, prefix, rng, theta, counter)),
        Term::Invk(a) => Term::invk(generalize(a, prefix, rng, theta, counter)),
        Term::Ltk(a, b) => Term::ltk(generalize(a, prefix, rng, theta, counter), generalize(b, prefix, rng, theta, counter)),
        Term::Var(_) | Term::Tag(_) => u.clone(),
    }
}

/// Two independent generalizations of `u` are unifiable, and the known
/// unifier factors through the computed one.
pub fn check_most_general(u: &Term, rng: &mut impl Rng) -> Result<(), String> {
    let mut theta = Subst::new();
    let mut counter = 0;
    let a = generalize(u, "l", rng, &mut theta, &mut counter);
    let b = generalize(u, "r", rng, &mut theta, &mut counter);
    if apply(&theta, &a) != *u || apply(&theta, &b) != *u {
        return Err(format!("generalizations of {u} do not instantiate back"));
    }
    let s = unify(&a, &b).ok_or_else(|| format!("{a} and {b} have the unifier {theta:?} but unify fails"))?;
    check_unify(&a, &b)?;
    let mut vars = a.vars();
    b.vars_into(&mut vars);
    for w in vars {
        let direct = apply(&theta, &Term::Var(w.clone()));
        let through = apply(&theta, &apply(&s, &Term::Var(w.clone())));
        if direct != through {
            return Err(format!("unifier of {a} and {b} does not factor through the mgu at {}", w.name));
        }
    }
    Ok(())
}

/// Akey terms whose `Invk` wrappers have not been normalized.
pub fn raw_akey_terms(depth: usize) -> Vec<Term> {
    let a = v("a", Sort::Name);
    let mut all = vec![v("p", Sort::Akey), Term::Pubk(Box::new(a.clone())), Term::Privk(Box::new(a))];
    for _ in 0..depth {
        let wrapped: Vec<Term> = all.iter().map(|t| Term::Invk(Box::new(t.clone()))).collect();
        all.extend(wrapped);
        all.sort();
        all.dedup();
    }
    all
}

fn rewrite_root(t: &Term) -> Option<Term> {
    let Term::Invk(x) = t else { return None };
    match &**x {
        Term::Invk(y) => Some((**y).clone()),
        Term::Pubk(a) => Some(Term::Privk(a.clone())),
        Term::Privk(a) => Some(Term::Pubk(a.clone())),
        _ => None,
    }
}

/// Every term reachable by one rewrite step at any position.
fn one_step(t: &Term) -> Vec<Term> {
    let mut out: Vec<Term> = rewrite_root(t).into_iter().collect();
    let wrap1 = |inner: &Term, f: &dyn Fn(Box<Term>) -> Term| -> Vec<Term> {
        one_step(inner).into_iter().map(|r| f(Box::new(r))).collect()
    };
    match t {
        Term::Invk(a) => out.extend(wrap1(a, &Term::Invk)),
        Term::Pubk(a) => out.extend(wrap1(a, &Term::Pubk)),
        Term::Privk(a) => out.extend(wrap1(a, &Term::Privk)),
        Term::Ltk(a, b) | Term::Enc(a, b) | Term::Cat(a, b) => {
            let rebuild = |x: Term, y: Term| match t {
                Term::Ltk(..) => Term::Ltk(Box::new(x), Box::new(y)),
                Term::Enc(..) => Term::Enc(Box::new(x), Box::new(y)),
                _ => Term::Cat(Box::new(x), Box::new(y)),
            };
            out.extend(one_step(a).into_iter().map(|r| rebuild(r, (**b).clone())));
            out.extend(one_step(b).into_iter().map(|r| rebuild((**a).clone(), r)));
        }
        Term::Var(_) | Term::Tag(_) => {}
    }
    out
}

fn normal_forms(t: &Term, seen: &mut BTreeSet<Term>, out: &mut BTreeSet<Term>) {
    if !seen.insert(t.clone()) {
        return;
    }
    let next = one_step(t);
    if next.is_empty() {
        out.insert(t.clone());
    }
    for n in next {
        if n.size() >= t.size() {
            continue;
        }
        normal_forms(&n, seen, out);
    }
}

/// The library's normalization: rebuild with the smart constructors.
pub fn library_normal(t: &Term) -> Term {
    match t {
        Term::Invk(a) => Term::invk(library_normal(a)),
        Term::Pubk(a) => Term::pubk(library_normal(a)),
        Term::Privk(a) => Term::privk(library_normal(a)),
        Term::Ltk(a, b) => Term::ltk(library_normal(a), library_normal(b)),
        Term::Enc(a, b) => Term::enc(library_normal(a), library_normal(b)),
        Term::Cat(a, b) => Term::cat(library_normal(a), library_normal(b)),
        Term::Var(_) | Term::Tag(_) => t.clone(),
    }
}

/// Every rewrite sequence ends in the same normal form, which is the one
/// the library computes.
pub fn check_invk_confluent(raw: &Term) -> Result<(), String> {
    let mut forms = BTreeSet::new();
    normal_forms(raw, &mut BTreeSet::new(), &mut forms);
    if one_step(raw).iter().any(|n| n.size() >= raw.size()) {
        return Err(format!("a rewrite of {raw:?} does not shrink it"));
    }
    if forms.len() != 1 {
        return Err(format!("{raw:?} has {} normal forms", forms.len()));
    }
    let nf = forms.into_iter().next().unwrap();
    if !nf.is_normal() || nf != library_normal(raw) {
        return Err(format!("{raw:?} normalizes to {nf} but the library gives {}", library_normal(raw)));
    }
    Ok(())
}

/// A random term with unnormalized key wrappers, depth at most `depth`.
pub fn random_raw_term(rng: &mut impl Rng, depth: usize) -> Term {
    let raw = raw_akey_terms(2);
    if depth <= 1 || rng.gen_bool(0.3) {
        return raw[rng.gen_range(0..raw.len())].clone();
    }
    match rng.gen_range(0..4) {
        0 => Term::Invk(Box::new(random_raw_term(rng, depth - 1))),
        1 => Term::Cat(Box::new(random_raw_term(rng, depth - 1)), Box::new(super::random_term(rng, depth - 1))),
        _ => Term::Enc(Box::new(super::random_term(rng, depth - 1)), Box::new(random_raw_term(rng, depth - 1))),
    }
}
