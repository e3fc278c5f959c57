use std::time::{Duration, Instant};

use crate::annotations::{annotations_sexpr, obligations_sexpr, shape_annotations, shape_obligations};
use crate::corpus::Input;
use crate::sexpr::{flat, write, SExpr};
use crate::skeleton::{Node, Skeleton};
use crate::solver::{search, SearchTree, SolverConfig, TreeNode};

pub const TOOL_NAME: &str = "shapekit";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const WIDTH: usize = 72;

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub tree: SearchTree,
    pub elapsed: Duration,
    /// Label of the tree root in the printed stream.
    pub offset: usize,
}

impl ScenarioRun {
    pub fn shape_labels(&self) -> Vec<usize> {
        self.tree.shapes().iter().map(|n| n.label + self.offset).collect()
    }
}

/// Search every problem, one thread per scenario, and assign global label
/// offsets in input order.
pub fn run_scenarios(problems: &[Skeleton], cfg: &SolverConfig) -> Vec<ScenarioRun> {
    let timed: Vec<(SearchTree, Duration)> = std::thread::scope(|scope| {
        let handles: Vec<_> = problems
            .iter()
            .map(|p| {
                scope.spawn(move || {
                    let t0 = Instant::now();
                    let tree = search(p, cfg);
                    (tree, t0.elapsed())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("search thread panicked")).collect()
    });
    let mut offset = 0;
    timed
        .into_iter()
        .map(|(tree, elapsed)| {
            let run = ScenarioRun { offset, elapsed, tree };
            offset += run.tree.nodes.len().max(1);
            run
        })
        .collect()
}

pub fn banner(cfg: &SolverConfig) -> Vec<SExpr> {
    let comment = |s: String| SExpr::list(vec![SExpr::sym("comment"), SExpr::string(s)]);
    let mut out = vec![
        comment(format!("{TOOL_NAME} {TOOL_VERSION}")),
        comment("All input read".into()),
        comment(format!("Strand count bounded at {}", cfg.strand_bound)),
    ];
    if cfg.check_nonces_first {
        out.push(comment("Nonces checked first".into()));
    }
    out
}

fn node_list(key: &str, nodes: &[Node]) -> SExpr {
    let mut items = vec![SExpr::sym(key)];
    items.extend(nodes.iter().map(|n| n.to_sexpr()));
    SExpr::list(items)
}

fn tagged_int(key: &str, n: usize) -> SExpr {
    SExpr::list(vec![SExpr::sym(key), SExpr::int(n as i64)])
}

fn comment(text: String) -> SExpr {
    SExpr::list(vec![SExpr::sym("comment"), SExpr::string(text)])
}

/// Annotation and obligation forms for a realized skeleton, or a comment
/// when the protocol carries no usable annotations.
pub fn decorations(sk: &Skeleton) -> Vec<SExpr> {
    match (shape_annotations(sk), shape_obligations(sk)) {
        (Ok(a), Ok(o)) => vec![annotations_sexpr(&a), obligations_sexpr(&o)],
        (Err(e), _) | (_, Err(e)) => vec![comment(format!("no annotations: {e}"))],
    }
}

/// The printed block for one search node.
pub fn node_block(run: &ScenarioRun, node: &TreeNode) -> SExpr {
    let sk = &node.skeleton;
    let mut items = sk.header_forms();
    if let Some(op) = &node.operation {
        items.push(op.to_sexpr());
    }
    items.push(sk.traces_sexpr());
    items.push(tagged_int("label", node.label + run.offset));
    if let Some(p) = node.parent {
        items.push(tagged_int("parent", p + run.offset));
    }
    items.push(node_list("unrealized", &node.unrealized));
    if node.shape {
        items.push(SExpr::list(vec![SExpr::sym("shape")]));
        items.extend(decorations(sk));
    } else if !node.realized && node.cohort_size == 0 && node.children.is_empty() && node.seen.is_empty() {
        items.push(comment("empty cohort".into()));
    }
    SExpr::list(items)
}

/// The problem as stated, with its unrealized receptions and cohort summary.
pub fn restatement_block(run: &ScenarioRun) -> SExpr {
    let tree = &run.tree;
    if let Some(root) = tree.nodes.first() {
        if root.shape {
            return node_block(run, root);
        }
    }
    let mut items = tree.problem.to_sexpr().as_list().map(<[SExpr]>::to_vec).unwrap_or_default();
    items.push(tagged_int("label", run.offset));
    items.push(node_list("unrealized", &tree.problem_unrealized));
    if let Some(e) = &tree.error {
        items.push(comment(format!("not a skeleton: {e}")));
    } else if let Some(root) = tree.nodes.first() {
        let fresh = root.cohort_size.saturating_sub(root.seen.len());
        items.push(comment(format!("{} in cohort - {} not yet seen", root.cohort_size, fresh)));
    }
    SExpr::list(items)
}

fn status_comments(run: &ScenarioRun) -> Vec<SExpr> {
    let mut out = Vec::new();
    if run.tree.incomplete {
        out.push(comment("Step limit exceeded; search incomplete".into()));
    }
    if run.tree.bound_pruned > 0 {
        out.push(comment(format!("{} skeletons pruned by the strand bound", run.tree.bound_pruned)));
    }
    if run.tree.shapes().is_empty() && run.tree.error.is_none() {
        out.push(comment("No shapes".into()));
    }
    out
}

/// The printed forms for one scenario: restatement, then shapes (or every
/// node when `tree` is set).
pub fn scenario_forms(run: &ScenarioRun, tree: bool) -> Vec<SExpr> {
    let mut out = vec![restatement_block(run)];
    for node in run.tree.nodes.iter().skip(1) {
        if tree || node.shape {
            out.push(node_block(run, node));
        }
    }
    out.extend(status_comments(run));
    out
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RenderOptions {
    pub tree: bool,
}

/// Render the full output stream: banner, the herald and protocols echoed
/// from the input, then every scenario in input order.
pub fn render(input: &Input, runs: &[ScenarioRun], cfg: &SolverConfig, opts: RenderOptions) -> String {
    let mut forms = banner(cfg);
    if let Some(h) = &input.herald {
        forms.push(h.to_sexpr());
    }
    let mut echoed: Vec<&str> = Vec::new();
    for (problem, run) in input.problems.iter().zip(runs) {
        let name = problem.protocol.name.as_str();
        if !echoed.contains(&name) {
            forms.push(problem.protocol.to_sexpr());
            echoed.push(name);
        }
        forms.extend(scenario_forms(run, opts.tree));
    }
    let mut out = String::new();
    for f in &forms {
        out.push_str(&write_block(f, WIDTH));
        out.push_str("\n\n");
    }
    out
}

/// Pretty-print a top-level form with each item after the head and name
/// on its own line, unless the whole form fits on one line.
pub fn write_block(e: &SExpr, width: usize) -> String {
    let Some(items) = e.as_list().filter(|i| i.len() > 2) else { return write(e, width) };
    let one_line = flat(e);
    if one_line.len() <= width {
        return one_line;
    }
    let mut out = format!("({} {}", flat(&items[0]), flat(&items[1]));
    for item in &items[2..] {
        out.push_str("\n  ");
        out.push_str(&write(item, width - 2).replace('\n', "\n  "));
    }
    out.push(')');
    out
}
