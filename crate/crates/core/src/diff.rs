use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::annotations::{parse_formula, Formula};
use crate::corpus::Block;
use crate::protocol::Protocol;
use crate::sexpr::flat;
use crate::skeleton::{isomorphism, Hom, Node, Skeleton};
use crate::terms::{apply, parse_term, Term};

/// One annotation or obligation entry: node, principal, formula.
pub type Entry = (Node, Term, Formula);

/// Group blocks into scenarios: every block without a parent opens a new one.
pub fn split_scenarios(blocks: Vec<Block>) -> Vec<Vec<Block>> {
    let mut out: Vec<Vec<Block>> = Vec::new();
    for b in blocks {
        if b.parent.is_none() || out.is_empty() {
            out.push(Vec::new());
        }
        out.last_mut().expect("pushed above").push(b);
    }
    out
}

fn normalize(f: Formula) -> Formula {
    match f {
        Formula::Implies(mut ants, c) => {
            ants.sort();
            Formula::Implies(ants, c)
        }
        other => other,
    }
}

/// Read the entries of an `(annotations ...)` or `(obligations ...)` form,
/// resolving variables against the block's skeleton.
pub fn read_entries(block: &Block, key: &str) -> Result<Option<Vec<Entry>>, String> {
    let Some(form) = block.decoration(key) else { return Ok(None) };
    let scope = block.skeleton.vars();
    let mut out = Vec::new();
    for e in form.tail() {
        let parts = e.as_list().filter(|p| p.len() == 3).ok_or_else(|| format!("malformed {key} entry {e}"))?;
        let node = Node::parse(&parts[0]).ok_or_else(|| format!("bad node in {e}"))?;
        let principal = parse_term(&parts[1], &scope).map_err(|err| err.to_string())?;
        let formula = parse_formula(&parts[2], &scope).map_err(|err| err.to_string())?;
        out.push((node, principal, normalize(formula)));
    }
    out.sort();
    Ok(Some(out))
}

/// Carry entries along a homomorphism and put them in canonical order.
pub fn transport(entries: &[Entry], hom: &Hom) -> Vec<Entry> {
    let mut out: Vec<Entry> = entries
        .iter()
        .map(|(n, p, f)| {
            (Node::new(hom.strands[n.strand], n.pos), apply(&hom.subst, p), normalize(f.instantiate(&hom.subst)))
        })
        .collect();
    out.sort();
    out
}

fn describe(entries: &[Entry]) -> String {
    entries.iter().map(|(n, p, f)| format!("{n} {p} {}", flat(&f.to_sexpr()))).collect::<Vec<_>>().join("; ")
}

/// Compare decorations of two printed blocks whose skeletons are related by
/// `hom` (actual into expected).  Keys absent from the expected block are
/// not compared.
pub fn compare_decorations(actual: &Block, expected: &Block, hom: &Hom) -> Result<(), String> {
    for key in ["annotations", "obligations"] {
        let Some(want) = read_entries(expected, key)? else { continue };
        let got = read_entries(actual, key)?.ok_or_else(|| format!("missing {key}"))?;
        let got = transport(&got, hom);
        if got != want {
            let extra: Vec<Entry> = got.iter().filter(|e| !want.contains(e)).cloned().collect();
            let missing: Vec<Entry> = want.iter().filter(|e| !got.contains(e)).cloned().collect();
            return Err(format!("{key} differ: unexpected [{}] missing [{}]", describe(&extra), describe(&missing)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mismatch {
    ScenarioCount { actual: usize, expected: usize },
    ShapeCount { scenario: usize, actual: usize, expected: usize },
    NoIsomorph { scenario: usize, expected_label: Option<i64>, witness: String },
    Decorations { scenario: usize, expected_label: Option<i64>, detail: String },
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = |l: &Option<i64>| l.map_or_else(|| "?".to_string(), |l| l.to_string());
        match self {
            Mismatch::ScenarioCount { actual, expected } => {
                write!(f, "{actual} scenarios, expected {expected}")
            }
            Mismatch::ShapeCount { scenario, actual, expected } => {
                write!(f, "scenario {scenario}: {actual} shapes, expected {expected}")
            }
            Mismatch::NoIsomorph { scenario, expected_label, witness } => {
                write!(f, "scenario {scenario}: no shape isomorphic to expected label {}; {witness}", label(expected_label))
            }
            Mismatch::Decorations { scenario, expected_label, detail } => {
                write!(f, "scenario {scenario}: expected label {}: {detail}", label(expected_label))
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScenarioDiff {
    pub actual_shapes: usize,
    pub expected_shapes: usize,
    /// (actual label, expected label) for each paired shape.
    pub pairs: Vec<(Option<i64>, Option<i64>)>,
}

#[derive(Debug, Clone, Default)]
pub struct DiffReport {
    pub scenarios: Vec<ScenarioDiff>,
    pub mismatches: Vec<Mismatch>,
}

impl DiffReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Explain the closest near-miss between a shape and candidates of the same
/// size: which strands could not be matched.
fn witness(expected: &Skeleton, candidates: &[&Block]) -> String {
    let kinds = |s: &Skeleton| {
        let mut v: Vec<String> =
            (0..s.strands.len()).map(|i| format!("{} {}", s.role_name(i), s.strands[i].height())).collect();
        v.sort();
        v
    };
    let want = kinds(expected);
    if candidates.is_empty() {
        return format!("no actual shape; expected strands [{}]", want.join(", "));
    }
    let best = candidates
        .iter()
        .min_by_key(|b| {
            let got = kinds(&b.skeleton);
            got.iter().filter(|k| !want.contains(k)).count() + want.iter().filter(|k| !got.contains(k)).count()
        })
        .expect("nonempty");
    let got = kinds(&best.skeleton);
    if got == want {
        format!("label {:?} has the same strands but differs in bindings or ordering", best.label)
    } else {
        format!("closest actual label {:?} has strands [{}], expected [{}]", best.label, got.join(", "), want.join(", "))
    }
}

/// Pair the shapes of each scenario by isomorphism and compare their
/// decorations.
pub fn diff_scenarios(actual: &[Vec<Block>], expected: &[Vec<Block>]) -> DiffReport {
    let mut report = DiffReport::default();
    if actual.len() != expected.len() {
        report.mismatches.push(Mismatch::ScenarioCount { actual: actual.len(), expected: expected.len() });
    }
    for (i, (a, e)) in actual.iter().zip(expected).enumerate() {
        let a_shapes: Vec<&Block> = a.iter().filter(|b| b.shape).collect();
        let e_shapes: Vec<&Block> = e.iter().filter(|b| b.shape).collect();
        let mut sd = ScenarioDiff { actual_shapes: a_shapes.len(), expected_shapes: e_shapes.len(), pairs: Vec::new() };
        if a_shapes.len() != e_shapes.len() {
            report.mismatches.push(Mismatch::ShapeCount {
                scenario: i,
                actual: a_shapes.len(),
                expected: e_shapes.len(),
            });
        }
        let mut used = vec![false; a_shapes.len()];
        for want in &e_shapes {
            let hit = a_shapes
                .iter()
                .enumerate()
                .filter(|(j, _)| !used[*j])
                .find_map(|(j, got)| isomorphism(&got.skeleton, &want.skeleton).map(|h| (j, h)));
            match hit {
                Some((j, hom)) => {
                    used[j] = true;
                    sd.pairs.push((a_shapes[j].label, want.label));
                    if let Err(detail) = compare_decorations(a_shapes[j], want, &hom) {
                        report.mismatches.push(Mismatch::Decorations { scenario: i, expected_label: want.label, detail });
                    }
                }
                None => report.mismatches.push(Mismatch::NoIsomorph {
                    scenario: i,
                    expected_label: want.label,
                    witness: witness(&want.skeleton, &a_shapes),
                }),
            }
        }
        report.scenarios.push(sd);
    }
    report
}

/// Parse an output stream into scenarios of blocks.
pub fn stream_scenarios(
    text: &str,
    protocols: &BTreeMap<String, Arc<Protocol>>,
) -> Result<Vec<Vec<Block>>, crate::corpus::CorpusError> {
    Ok(split_scenarios(crate::corpus::parse_blocks(text, protocols)?))
}
