use std::collections::BTreeSet;

use shapekit::adversary::DerivationContext;
use shapekit::terms::{Sort, Term};

fn opening_key(k: &Term) -> Term {
    match k {
        Term::Pubk(a) => Term::Privk(a.clone()),
        Term::Privk(a) => Term::Pubk(a.clone()),
        Term::Invk(x) => (**x).clone(),
        Term::Var(v) if v.sort == Sort::Akey => Term::Invk(Box::new(k.clone())),
        _ => k.clone(),
    }
}

fn subterms(t: &Term, out: &mut BTreeSet<Term>) {
    if !out.insert(t.clone()) {
        return;
    }
    match t {
        Term::Cat(a, b) => {
            subterms(a, out);
            subterms(b, out);
        }
        Term::Enc(a, k) => {
            subterms(a, out);
            subterms(k, out);
            subterms(&opening_key(k), out);
        }
        Term::Pubk(a) | Term::Privk(a) | Term::Invk(a) => subterms(a, out),
        Term::Ltk(a, b) => {
            subterms(a, out);
            subterms(b, out);
        }
        Term::Var(_) | Term::Tag(_) => {}
    }
}

fn fresh_for_adversary(ctx: &DerivationContext, t: &Term) -> bool {
    match t {
        Term::Tag(_) => true,
        Term::Var(v) if v.sort == Sort::Mesg => true,
        Term::Var(_) | Term::Pubk(_) | Term::Privk(_) | Term::Invk(_) | Term::Ltk(..) => {
            !ctx.non_orig.contains(t) && !matches!(ctx.uniq_orig.get(t), Some(Some(_)))
        }
        Term::Enc(..) | Term::Cat(..) => false,
    }
}

/// Saturate the adversary's knowledge over the finite set of subterms of the
/// problem, applying every rule until nothing changes.
pub fn derivable(ctx: &DerivationContext, goal: &Term) -> bool {
    let mut universe = BTreeSet::new();
    for t in &ctx.available {
        subterms(t, &mut universe);
    }
    subterms(goal, &mut universe);
    let universe: Vec<Term> = universe.into_iter().collect();
    let mut known: BTreeSet<Term> = BTreeSet::new();
    loop {
        let mut changed = false;
        for t in &universe {
            if known.contains(t) {
                continue;
            }
            let secret = ctx.non_orig.contains(t);
            let given = !secret && ctx.available.contains(t);
            let built = match t {
                Term::Cat(a, b) | Term::Enc(a, b) => known.contains(&**a) && known.contains(&**b),
                _ => false,
            };
            let extracted = !secret
                && known.iter().any(|u| match u {
                    Term::Cat(a, b) => **a == *t || **b == *t,
                    Term::Enc(body, key) => **body == *t && known.contains(&opening_key(key)),
                    _ => false,
                });
            if given || built || extracted || fresh_for_adversary(ctx, t) {
                known.insert(t.clone());
                changed = true;
            }
        }
        if !changed {
            return known.contains(goal);
        }
    }
}
