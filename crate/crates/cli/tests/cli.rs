use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use shapekit::corpus::{parse_blocks, CAVES_INPUT};
use shapekit::diff::split_scenarios;
use shapekit::dot::check_syntax;
use shapekit::sexpr::{read_all, write_forms};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shapekit")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// The CAVES herald and protocol followed by the selected problems.
fn caves_subset(dir: &Path, name: &str, keep: &[usize]) -> PathBuf {
    let forms = read_all(CAVES_INPUT).unwrap();
    let mut out = Vec::new();
    let mut k = 0;
    for f in forms {
        if f.is_form("defskeleton") {
            if keep.contains(&k) {
                out.push(f);
            }
            k += 1;
        } else {
            out.push(f);
        }
    }
    let path = dir.join(name);
    std::fs::write(&path, write_forms(&out, 72)).unwrap();
    path
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn analyze_caves_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("caves.out");
    let input = root().join("fixtures/caves/input.scm");
    let o = run(&["analyze", arg(&input), "--output", arg(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let protocols = shapekit::corpus::load_fixture("caves").unwrap().protocols;
    let scenarios = split_scenarios(parse_blocks(&text, &protocols).unwrap());
    let counts: Vec<usize> = scenarios.iter().map(|s| s.iter().filter(|b| b.shape).count()).collect();
    assert_eq!(counts, vec![1, 1, 1, 1, 0, 0, 1, 0, 1]);

    let golden = root().join("fixtures/caves/golden");
    let d = run(&["diff", arg(&out), arg(&golden)]);
    assert_eq!(d.status.code(), Some(0), "{}", stdout(&d));
    assert!(stdout(&d).ends_with("pass\n"));

    let self_diff = run(&["diff", arg(&out), arg(&out)]);
    assert_eq!(self_diff.status.code(), Some(0));

    let flawed = root().join("fixtures/caves-flawed/golden");
    let bad = run(&["diff", arg(&out), arg(&flawed), "--protocols", arg(&root().join("fixtures/caves-flawed/input.scm"))]);
    assert_eq!(bad.status.code(), Some(1), "{}", stdout(&bad));
    assert!(stdout(&bad).contains("mismatch"));
}

#[test]
fn analyze_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let input = caves_subset(dir.path(), "in.scm", &[1, 2, 3, 4]);
    let a = run(&["analyze", arg(&input), "--tree"]);
    let b = run(&["analyze", arg(&input), "--tree"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).contains("(parent "));
}

#[test]
fn bound_one_prunes_augmentations() {
    let dir = tempfile::tempdir().unwrap();
    let input = caves_subset(dir.path(), "in.scm", &[0]);
    let o = run(&["shapes", arg(&input), "--bound", "1"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(!stdout(&o).contains("(shape)"));
    let full = run(&["analyze", arg(&input), "--bound", "1"]);
    assert!(stdout(&full).contains("pruned by the strand bound"));
}

#[test]
fn shapes_prints_only_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let input = caves_subset(dir.path(), "in.scm", &[2, 3]);
    let o = run(&["shapes", arg(&input)]);
    let text = stdout(&o);
    assert_eq!(text.matches("(defskeleton").count(), 2);
    assert_eq!(text.matches("(shape)").count(), 2);
    assert!(!text.contains("defprotocol"));
}

#[test]
fn missing_input_is_status_two() {
    let o = run(&["analyze", "missing.scm"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_input_is_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.scm");
    std::fs::write(&p, "(defprotocol broken basic (defrole").unwrap();
    assert_eq!(run(&["analyze", arg(&p)]).status.code(), Some(2));
    assert_eq!(run(&["analyze", arg(&p), "--bound", "0"]).status.code(), Some(2));
}

#[test]
fn step_limit_is_status_three() {
    let dir = tempfile::tempdir().unwrap();
    let input = caves_subset(dir.path(), "in.scm", &[0]);
    let o = run(&["analyze", arg(&input), "--step-limit", "1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("search incomplete"));
}

#[test]
fn graph_emits_valid_dot() {
    let dir = tempfile::tempdir().unwrap();
    let input = caves_subset(dir.path(), "in.scm", &[1, 3]);
    let o = run(&["graph", arg(&input)]);
    assert_eq!(o.status.code(), Some(0));
    let dot = stdout(&o);
    check_syntax(&dot).unwrap();
    assert_eq!(dot.matches("subgraph cluster_").count(), 4);
    let single = run(&["graph", arg(&input), "--shape", "1"]);
    let dot = stdout(&single);
    assert_eq!(dot.matches("subgraph cluster_").count(), 1);
    assert!(!dot.lines().any(|l| l.starts_with("  n") && l.contains("->")));
    assert_eq!(run(&["graph", arg(&input), "--shape", "2"]).status.code(), Some(2));
}

#[test]
fn graph_reads_printed_shapes() {
    let golden = root().join("fixtures/caves/golden/09-full-client.out");
    let dir = tempfile::tempdir().unwrap();
    let stream = dir.path().join("client.out");
    let mut text = read_all(CAVES_INPUT).unwrap().into_iter().find(|f| f.is_form("defprotocol")).unwrap().to_string();
    text.push('\n');
    text.push_str(&std::fs::read_to_string(golden).unwrap());
    std::fs::write(&stream, text).unwrap();
    let o = run(&["graph", arg(&stream)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let dot = stdout(&o);
    let cross = dot.lines().filter(|l| l.starts_with("  n") && l.contains("->")).count();
    assert_eq!(cross, 10);
    check_syntax(&dot).unwrap();
}

#[test]
fn explain_names_the_obstacle() {
    let dir = tempfile::tempdir().unwrap();
    let input = caves_subset(dir.path(), "in.scm", &[2]);
    let o = run(&["explain", arg(&input), "--scenario", "0"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("stuck on (ltk a a) (non-originating)"), "{}", stdout(&o));
    assert_eq!(run(&["explain", arg(&input), "--scenario", "5"]).status.code(), Some(2));
}
