use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::adversary::unrealized_nodes;
use crate::annotations::{Theory, TheoryError};
use crate::protocol::{Herald, Protocol, ProtocolError};
use crate::sexpr::{read_all, ReadError, SExpr};
use crate::skeleton::{parse_problem, Node, SkelError, Skeleton};

pub const CAVES_INPUT: &str = include_str!("../../../fixtures/caves/input.scm");
pub const CAVES_FLAWED_INPUT: &str = include_str!("../../../fixtures/caves-flawed/input.scm");

const CAVES_GOLDEN: &[(&str, &str)] = &[
    ("full-verifier", include_str!("../../../fixtures/caves/golden/01-full-verifier.out")),
    ("verifier-height-4", include_str!("../../../fixtures/caves/golden/02-verifier-height-4.out")),
    ("attester-safe-channel", include_str!("../../../fixtures/caves/golden/03-attester-safe-channel.out")),
    ("attester-compromised", include_str!("../../../fixtures/caves/golden/04-attester-compromised.out")),
    ("jo-listener", include_str!("../../../fixtures/caves/golden/05-jo-listener.out")),
    ("p-listener", include_str!("../../../fixtures/caves/golden/06-p-listener.out")),
    ("full-server", include_str!("../../../fixtures/caves/golden/07-full-server.out")),
    ("d-listener", include_str!("../../../fixtures/caves/golden/08-d-listener.out")),
    ("full-client", include_str!("../../../fixtures/caves/golden/09-full-client.out")),
];

const CAVES_FLAWED_GOLDEN: &[(&str, &str)] =
    &[("d-listener", include_str!("../../../fixtures/caves-flawed/golden/01-d-listener.out"))];

const THEORIES: &[(&str, &str)] = &[
    ("attester", include_str!("../../../fixtures/caves/theory/attester.facts")),
    ("epca", include_str!("../../../fixtures/caves/theory/epca.facts")),
    ("server", include_str!("../../../fixtures/caves/theory/server.facts")),
    ("verifier", include_str!("../../../fixtures/caves/theory/verifier.facts")),
];

pub const FIXTURES: &[&str] = &["caves", "caves-flawed"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("unknown fixture {0}")]
    UnknownFixture(String),
    #[error(transparent)]
    Read(#[from] ReadError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Skeleton(#[from] SkelError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error("{fixture}: golden block {label} fails validation: {reason}")]
    Golden { fixture: String, label: String, reason: String },
    #[error("{0} problem statements but {1} golden files")]
    GoldenCount(usize, usize),
}

/// A parsed input file: herald, protocols, and problem statements in order.
#[derive(Debug, Clone)]
pub struct Input {
    pub herald: Option<Herald>,
    pub protocols: BTreeMap<String, Arc<Protocol>>,
    pub problems: Vec<Skeleton>,
}

pub fn parse_input(text: &str) -> Result<Input, CorpusError> {
    let forms = read_all(text)?;
    parse_forms(&forms, &BTreeMap::new())
}

/// Parse forms, resolving `defskeleton` protocol names against both the
/// protocols defined in `forms` and those in `known`.
pub fn parse_forms(forms: &[SExpr], known: &BTreeMap<String, Arc<Protocol>>) -> Result<Input, CorpusError> {
    let mut input = Input { herald: None, protocols: known.clone(), problems: Vec::new() };
    for f in forms {
        match f.head() {
            Some("herald") => input.herald = Some(Herald::parse(f)?),
            Some("defprotocol") => {
                let p = Protocol::parse(f)?;
                input.protocols.insert(p.name.clone(), Arc::new(p));
            }
            Some("defskeleton") => input.problems.push(parse_problem(f, &input.protocols)?),
            _ => {}
        }
    }
    Ok(input)
}

/// One printed skeleton from an output stream, with its decorations.
#[derive(Debug, Clone)]
pub struct Block {
    pub skeleton: Skeleton,
    pub form: SExpr,
    pub label: Option<i64>,
    pub parent: Option<i64>,
    pub unrealized: Option<Vec<Node>>,
    pub shape: bool,
}

impl Block {
    pub fn decoration(&self, key: &str) -> Option<&SExpr> {
        self.form.tail().iter().find(|c| c.is_form(key))
    }
}

pub fn parse_block(form: &SExpr, protocols: &BTreeMap<String, Arc<Protocol>>) -> Result<Block, CorpusError> {
    let skeleton = parse_problem(form, protocols)?;
    let find = |k: &str| form.tail().iter().find(|c| c.is_form(k));
    let int = |k: &str| find(k).and_then(|c| c.tail().first()).and_then(SExpr::as_int);
    Ok(Block {
        skeleton,
        form: form.clone(),
        label: int("label"),
        parent: int("parent"),
        unrealized: find("unrealized").map(|u| u.tail().iter().filter_map(Node::parse).collect()),
        shape: find("shape").is_some(),
    })
}

/// Read every `defskeleton` block of an output stream.
pub fn parse_blocks(text: &str, protocols: &BTreeMap<String, Arc<Protocol>>) -> Result<Vec<Block>, CorpusError> {
    let forms = read_all(text)?;
    let mut protocols = protocols.clone();
    let mut out = Vec::new();
    for f in &forms {
        if f.is_form("defprotocol") {
            let p = Protocol::parse(f)?;
            protocols.insert(p.name.clone(), Arc::new(p));
        } else if f.is_form("defskeleton") {
            out.push(parse_block(f, &protocols)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub problem: Skeleton,
    /// The expected restatement of the problem, when recorded.
    pub restatement: Option<Block>,
    pub golden_blocks: Vec<Block>,
    /// Expected shapes.
    pub golden: Vec<Skeleton>,
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: String,
    pub input: &'static str,
    pub herald: Option<Herald>,
    pub protocols: BTreeMap<String, Arc<Protocol>>,
    pub scenarios: Vec<Scenario>,
    pub theories: BTreeMap<String, Theory>,
    pub notes: &'static str,
}

pub fn scenario_names(fixture: &str) -> Vec<&'static str> {
    match fixture {
        "caves" => CAVES_GOLDEN.iter().map(|g| g.0).collect(),
        "caves-flawed" => CAVES_FLAWED_GOLDEN.iter().map(|g| g.0).collect(),
        _ => Vec::new(),
    }
}

pub fn load_fixture(name: &str) -> Result<Fixture, CorpusError> {
    let (input, golden, notes, realized_golden): (&'static str, &[(&str, &str)], &'static str, bool) = match name {
        "caves" => (CAVES_INPUT, CAVES_GOLDEN, "CAVES attestation protocol with nine problem statements", true),
        "caves-flawed" => (
            CAVES_FLAWED_INPUT,
            CAVES_FLAWED_GOLDEN,
            "CAVES with the server name removed from the attester messages; the golden file holds only strand mappings",
            false,
        ),
        _ => return Err(CorpusError::UnknownFixture(name.to_string())),
    };
    let parsed = parse_input(input)?;
    if parsed.problems.len() != golden.len() {
        return Err(CorpusError::GoldenCount(parsed.problems.len(), golden.len()));
    }
    let mut theories = BTreeMap::new();
    for (principal, text) in THEORIES {
        theories.insert(principal.to_string(), Theory::parse(text)?);
    }
    let mut scenarios = Vec::new();
    for (problem, (sname, text)) in parsed.problems.into_iter().zip(golden) {
        let blocks = parse_blocks(text, &parsed.protocols)?;
        let bad = |b: &Block, reason: String| CorpusError::Golden {
            fixture: name.to_string(),
            label: b.label.map_or_else(|| sname.to_string(), |l| l.to_string()),
            reason,
        };
        for b in &blocks {
            if realized_golden && b.shape {
                b.skeleton.validate().map_err(|e| bad(b, e.to_string()))?;
                if b.shape && !unrealized_nodes(&b.skeleton).is_empty() {
                    return Err(bad(b, "shape is not realized".into()));
                }
            } else {
                b.skeleton.validate_pre().map_err(|e| bad(b, e.to_string()))?;
            }
        }
        let restatement = blocks.iter().find(|b| b.parent.is_none() && b.unrealized.is_some()).cloned();
        let golden: Vec<Skeleton> = blocks
            .iter()
            .filter(|b| b.shape || !realized_golden)
            .map(|b| b.skeleton.clone())
            .collect();
        scenarios.push(Scenario { name: sname.to_string(), problem, restatement, golden_blocks: blocks, golden });
    }
    Ok(Fixture {
        name: name.to_string(),
        input,
        herald: parsed.herald,
        protocols: parsed.protocols,
        scenarios,
        theories,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sexpr::write;

    #[test]
    fn caves_loads() {
        let fx = load_fixture("caves").unwrap();
        let counts: Vec<usize> = fx.scenarios.iter().map(|s| s.golden.len()).collect();
        assert_eq!(counts, vec![1, 1, 1, 1, 0, 0, 1, 0, 1]);
        let h = fx.herald.unwrap();
        assert_eq!((h.bound, h.check_nonces), (Some(12), true));
        let first = &fx.scenarios[0].golden[0];
        let roles: Vec<&str> = (0..first.strands.len()).map(|i| first.role_name(i)).collect();
        assert_eq!(roles, vec!["verifier", "epca", "server", "attester", "client"]);
        assert_eq!(fx.scenarios[1].golden[0].strands.len(), 4);
        assert_eq!(fx.scenarios[8].golden[0].precedes.len(), 10);
        assert_eq!(fx.theories.len(), 4);
    }

    #[test]
    fn unknown_fixture() {
        assert!(matches!(load_fixture("nope"), Err(CorpusError::UnknownFixture(_))));
    }

    #[test]
    fn flawed_loads() {
        let fx = load_fixture("caves-flawed").unwrap();
        assert_eq!(fx.scenarios.len(), 1);
        let g = &fx.scenarios[0].golden[0];
        assert_eq!(g.strands.len(), 6);
    }

    #[test]
    fn caves_text_round_trips() {
        let forms = read_all(CAVES_INPUT).unwrap();
        let printed: Vec<String> = forms.iter().map(|f| write(f, 72)).collect();
        let again = read_all(&printed.join("\n")).unwrap();
        assert_eq!(forms, again);
        let p = &load_fixture("caves").unwrap().protocols["caves"];
        let reparsed = Protocol::parse(&p.to_sexpr()).unwrap();
        assert_eq!(&reparsed, &**p);
    }

    fn atoms(e: &SExpr, out: &mut Vec<String>) {
        match e.as_list() {
            Some(items) => items.iter().for_each(|i| atoms(i, out)),
            None => out.push(e.to_string()),
        }
    }

    #[test]
    fn flawed_differs_only_by_server_name() {
        let get = |text: &str| read_all(text).unwrap().into_iter().find(|f| f.is_form("defprotocol")).unwrap();
        let good = get(CAVES_INPUT);
        let bad = get(CAVES_FLAWED_INPUT);
        let roles = |p: &SExpr| p.tail()[2..].to_vec();
        for (g, b) in roles(&good).iter().zip(roles(&bad)) {
            let name = g.tail()[0].to_string();
            let (mut ga, mut ba) = (Vec::new(), Vec::new());
            atoms(g, &mut ga);
            atoms(&b, &mut ba);
            let removed: Vec<&String> = {
                let mut i = 0;
                let mut out = Vec::new();
                for a in &ga {
                    if ba.get(i) == Some(a) {
                        i += 1;
                    } else {
                        out.push(a);
                    }
                }
                assert_eq!(i, ba.len(), "role {name} gained atoms");
                out
            };
            assert!(removed.iter().all(|a| *a == "s"), "role {name} lost {removed:?}");
            let expected = match name.as_str() {
                "attester" => 3,
                "client" | "verifier" => 1,
                _ => 0,
            };
            assert_eq!(removed.len(), expected, "role {name}");
        }
    }
}
