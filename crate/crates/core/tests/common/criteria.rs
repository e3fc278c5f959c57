use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::TestRunner;
use rand::rngs::StdRng;
use rand::SeedableRng;
use shapekit::adversary::unrealized_nodes;
use shapekit::annotations::{discharge, shape_obligations, Discharge};
use shapekit::corpus::{load_fixture, parse_block, Fixture, CAVES_FLAWED_INPUT};
use shapekit::diff::compare_decorations;
use shapekit::output::{node_block, run_scenarios, ScenarioRun};
use shapekit::sexpr::{read_all, write, SExpr};
use shapekit::skeleton::{isomorphism, parse_problem, specializes, Skeleton, StrandKind};
use shapekit::solver::{search, SearchTree, SolverConfig};
use shapekit::terms::Term;

use super::props::*;
use super::{all_terms, oracle, random_context, random_term, sexpr_strategy};

pub type Outcome = Result<String, String>;

/// Every fixture analyzed once: CAVES, the flawed variant, and the flawed
/// problem posed against the original protocol.
pub struct Runs {
    pub caves: Fixture,
    pub caves_runs: Vec<ScenarioRun>,
    pub caves_elapsed: Duration,
    pub flawed: Fixture,
    pub flawed_tree: SearchTree,
    pub restored_tree: SearchTree,
}

/// The flawed scenario's problem statement with the protocol swapped for
/// the original one.
pub fn restored_problem(caves: &Fixture) -> Skeleton {
    let form = read_all(CAVES_FLAWED_INPUT).unwrap().into_iter().find(|f| f.is_form("defskeleton")).unwrap();
    let mut items = form.as_list().unwrap().to_vec();
    items[1] = SExpr::sym("caves");
    parse_problem(&SExpr::list(items), &caves.protocols).unwrap()
}

impl Runs {
    pub fn compute() -> Runs {
        let caves = load_fixture("caves").unwrap();
        let cfg = SolverConfig::from_herald(caves.herald.as_ref());
        let problems: Vec<Skeleton> = caves.scenarios.iter().map(|s| s.problem.clone()).collect();
        let t0 = Instant::now();
        let caves_runs = run_scenarios(&problems, &cfg);
        let caves_elapsed = t0.elapsed();
        let flawed = load_fixture("caves-flawed").unwrap();
        let fcfg = SolverConfig::from_herald(flawed.herald.as_ref());
        let flawed_tree = search(&flawed.scenarios[0].problem, &fcfg);
        let restored_tree = search(&restored_problem(&caves), &fcfg);
        Runs { caves, caves_runs, caves_elapsed, flawed, flawed_tree, restored_tree }
    }
}

pub fn golden_reproduction(r: &Runs) -> Outcome {
    let mut notes = Vec::new();
    for (sc, run) in r.caves.scenarios.iter().zip(&r.caves_runs) {
        let shapes = run.tree.shapes();
        if shapes.len() != sc.golden.len() {
            return Err(format!("{}: {} shapes, expected {}", sc.name, shapes.len(), sc.golden.len()));
        }
        for g in &sc.golden {
            if !shapes.iter().any(|s| isomorphism(&s.skeleton, g).is_some()) {
                return Err(format!("{}: no shape isomorphic to the golden shape", sc.name));
            }
        }
        notes.push(format!("{}={}", sc.name, shapes.len()));
    }
    let secs = r.caves_elapsed.as_secs_f64();
    if secs >= 60.0 {
        return Err(format!("analysis took {secs:.1}s"));
    }
    Ok(format!("{} in {secs:.1}s", notes.join(" ")))
}

pub fn restatement_unrealized(r: &Runs) -> Outcome {
    let expected: [(&str, &str); 6] = [
        ("full-verifier", "(0 1) (0 3)"),
        ("verifier-height-4", "(0 1) (0 3)"),
        ("attester-safe-channel", "(0 0)"),
        ("full-server", "(0 2) (0 6)"),
        ("d-listener", "(0 2) (0 6) (1 0)"),
        ("full-client", "(0 1) (0 3)"),
    ];
    for (name, want) in expected {
        let i = r.caves.scenarios.iter().position(|s| s.name == name).unwrap();
        let got: Vec<String> = r.caves_runs[i].tree.problem_unrealized.iter().map(|n| n.to_string()).collect();
        if got.join(" ") != want {
            return Err(format!("{name}: unrealized {}, expected {want}", got.join(" ")));
        }
        let recorded = r.caves.scenarios[i].restatement.as_ref().and_then(|b| b.unrealized.clone()).unwrap_or_default();
        if recorded != r.caves_runs[i].tree.problem_unrealized {
            return Err(format!("{name}: disagrees with the recorded restatement"));
        }
    }
    Ok("6 restatements exact".into())
}

pub fn decorations(r: &Runs) -> Outcome {
    let (mut shapes, mut obligations) = (0, 0);
    for (sc, run) in r.caves.scenarios.iter().zip(&r.caves_runs) {
        for node in run.tree.shapes() {
            let mine = parse_block(&node_block(run, node), &r.caves.protocols).map_err(|e| e.to_string())?;
            let (golden, hom) = sc
                .golden_blocks
                .iter()
                .filter(|b| b.shape)
                .find_map(|b| isomorphism(&node.skeleton, &b.skeleton).map(|h| (b, h)))
                .ok_or_else(|| format!("{}: shape has no golden counterpart", sc.name))?;
            for key in ["annotations", "obligations"] {
                if golden.decoration(key).is_none() {
                    return Err(format!("{}: golden block lacks {key}", sc.name));
                }
            }
            compare_decorations(&mine, golden, &hom).map_err(|e| format!("{}: {e}", sc.name))?;
            let obs = shape_obligations(&node.skeleton).map_err(|e| e.to_string())?;
            if let Some(o) = obs.iter().find(|o| discharge(o) != Discharge::Valid) {
                return Err(format!("{}: obligation at {} does not discharge", sc.name, o.node));
            }
            shapes += 1;
            obligations += obs.len();
        }
    }
    Ok(format!("{shapes} shapes match, {obligations} obligations valid"))
}

fn binding(sk: &Skeleton, strand: usize, name: &str) -> Option<Term> {
    let StrandKind::Role { role, subst } = &sk.strands[strand].kind else { return None };
    let var = sk.protocol.roles[*role].vars.iter().find(|v| &*v.name == name)?;
    subst.get(var).cloned()
}

pub fn strand_multiset(sk: &Skeleton) -> Vec<String> {
    let mut v: Vec<String> = (0..sk.strands.len()).map(|i| format!("{} {}", sk.role_name(i), sk.strands[i].height())).collect();
    v.sort();
    v
}

/// Some client strand names a server and session key different from those
/// of some server strand.
pub fn disagreement(sk: &Skeleton) -> bool {
    let of = |role: &str| (0..sk.strands.len()).filter(|&i| sk.role_name(i) == role).collect::<Vec<_>>();
    of("server").iter().any(|&s| {
        of("client").iter().any(|&c| {
            let differ = |n| binding(sk, c, n).is_some() && binding(sk, c, n) != binding(sk, s, n);
            differ("s") && differ("k")
        })
    })
}

fn has_listener(sk: &Skeleton) -> bool {
    sk.strands.iter().any(|s| matches!(s.kind, StrandKind::Listener(_)))
}

pub fn flawed_variant(r: &Runs) -> Outcome {
    let golden = &r.flawed.scenarios[0].golden[0];
    if !disagreement(golden) {
        return Err("golden mapping lacks the disagreement".into());
    }
    let want = strand_multiset(golden);
    let shapes = r.flawed_tree.shapes();
    let attack: Vec<&Skeleton> = shapes
        .iter()
        .map(|n| &n.skeleton)
        .filter(|s| disagreement(s) && has_listener(s) && unrealized_nodes(s).is_empty())
        .collect();
    let restored: Vec<&Skeleton> =
        r.restored_tree.shapes().into_iter().map(|n| &n.skeleton).filter(|s| disagreement(s)).collect();
    let matching = attack.iter().filter(|s| strand_multiset(s) == want).count();
    let summary = format!(
        "{} flawed shapes, {} with disagreement and satisfied listener, {} with the golden strands; restored: {} shapes, {} with disagreement",
        shapes.len(),
        attack.len(),
        matching,
        r.restored_tree.shapes().len(),
        restored.len()
    );
    if matching == 0 {
        let got: Vec<String> = attack.iter().map(|s| strand_multiset(s).join(", ")).collect();
        return Err(format!("{summary}; expected strands [{}], got [{}]", want.join(", "), got.join("] [")));
    }
    if !restored.is_empty() {
        return Err(format!("{summary}; restoring S does not remove the shape"));
    }
    Ok(summary)
}

pub fn derivability(cases: usize) -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let t0 = Instant::now();
    let mut positive = 0;
    for i in 0..cases {
        let (ctx, goal) = random_context(&mut rng);
        let got = ctx.derivable(&goal);
        if got != oracle::derivable(&ctx, &goal) {
            return Err(format!("case {i}: derivable({goal}) = {got} disagrees with the oracle for {ctx:?}"));
        }
        positive += got as usize;
    }
    let secs = t0.elapsed().as_secs_f64();
    if secs >= 300.0 {
        return Err(format!("{cases} cases took {secs:.0}s"));
    }
    Ok(format!("{cases} contexts agree ({positive} derivable, {} not) in {secs:.1}s", cases - positive))
}

fn all_trees(r: &Runs) -> Vec<(String, &SearchTree)> {
    let mut out: Vec<(String, &SearchTree)> =
        r.caves.scenarios.iter().zip(&r.caves_runs).map(|(s, run)| (s.name.clone(), &run.tree)).collect();
    out.push(("flawed d-listener".into(), &r.flawed_tree));
    out.push(("restored d-listener".into(), &r.restored_tree));
    out
}

pub fn skeleton_invariants(r: &Runs) -> Outcome {
    let (mut nodes, mut shapes) = (0, 0);
    for (name, tree) in all_trees(r) {
        if let Some(e) = &tree.error {
            return Err(format!("{name}: {e}"));
        }
        let root = &tree.nodes[0].skeleton;
        for n in &tree.nodes {
            n.skeleton.validate().map_err(|e| format!("{name} node {}: {e}", n.label))?;
            if specializes(root, &n.skeleton).is_none() {
                return Err(format!("{name} node {} loses the problem statement", n.label));
            }
            nodes += 1;
        }
        let found = tree.shapes();
        for (i, a) in found.iter().enumerate() {
            if !unrealized_nodes(&a.skeleton).is_empty() {
                return Err(format!("{name}: shape {} is unrealized", a.label));
            }
            for (j, b) in found.iter().enumerate() {
                if i != j && specializes(&a.skeleton, &b.skeleton).is_some() {
                    return Err(format!("{name}: shape {} specializes into shape {}", a.label, b.label));
                }
            }
            shapes += 1;
        }
    }
    Ok(format!("{nodes} skeletons valid, {shapes} shapes realized and minimal"))
}

fn fixture_texts() -> Vec<(String, String)> {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    let mut out = Vec::new();
    let mut stack = vec![root];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.display().to_string(), std::fs::read_to_string(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn round_trip(forms: &[SExpr], width: usize) -> Result<(), String> {
    let printed: String = forms.iter().map(|e| write(e, width) + "\n").collect();
    let again = read_all(&printed).map_err(|e| e.to_string())?;
    if again != forms {
        return Err("read/write/read changed the structure".into());
    }
    let reprinted: String = again.iter().map(|e| write(e, width) + "\n").collect();
    if reprinted != printed {
        return Err("printing is not a fixpoint".into());
    }
    Ok(())
}

pub fn parser_round_trip(random: usize) -> Outcome {
    let files = fixture_texts();
    for (name, text) in &files {
        let forms = read_all(text).map_err(|e| format!("{name}: {e}"))?;
        round_trip(&forms, 72).map_err(|e| format!("{name}: {e}"))?;
    }
    let mut runner = TestRunner::deterministic();
    let strategy = sexpr_strategy();
    for i in 0..random {
        let e = strategy.new_tree(&mut runner).unwrap().current();
        round_trip(std::slice::from_ref(&e), 20 + i % 80).map_err(|err| format!("random tree {i}: {err}"))?;
    }
    Ok(format!("{} fixture files and {random} random trees", files.len()))
}

pub fn term_properties(random: usize) -> Outcome {
    let space = all_terms(1);
    for a in &space {
        check_carries(a, &space)?;
        for b in &space {
            check_match(a, b)?;
            check_unify(a, b)?;
        }
    }
    let raw = raw_akey_terms(3);
    for t in &raw {
        check_invk_confluent(t)?;
    }
    let mut rng = StdRng::seed_from_u64(8);
    for u in &space {
        check_most_general(u, &mut rng)?;
    }
    for _ in 0..random {
        let a = random_term(&mut rng, 5);
        let b = random_term(&mut rng, 5);
        let mut subs = std::collections::BTreeSet::new();
        a.subterms_into(&mut subs);
        check_carries(&a, &subs.into_iter().collect::<Vec<_>>())?;
        check_match(&b, &a)?;
        check_unify(&a, &b)?;
        check_most_general(&a, &mut rng)?;
        check_invk_confluent(&random_raw_term(&mut rng, 5))?;
    }
    Ok(format!("{} small terms exhaustively, {} akey terms, {random} random cases at depth 5", space.len(), raw.len()))
}

/// Criterion number, short name, outcome.
pub fn all(r: &Runs) -> BTreeMap<u8, (&'static str, Outcome)> {
    let mut out = BTreeMap::new();
    out.insert(1, ("golden reproduction", golden_reproduction(r)));
    out.insert(2, ("restatement unrealized lists", restatement_unrealized(r)));
    out.insert(3, ("annotations and obligations", decorations(r)));
    out.insert(4, ("flawed variant", flawed_variant(r)));
    out.insert(5, ("derivability oracle", derivability(10_000)));
    out.insert(6, ("skeleton invariants", skeleton_invariants(r)));
    out.insert(7, ("parser round trip", parser_round_trip(1000)));
    out.insert(8, ("term algebra properties", term_properties(2000)));
    out
}
