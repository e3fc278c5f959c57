use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use shapekit::adversary::{explain, unrealized_nodes, DerivationContext};
use shapekit::annotations::{discharge, shape_obligations, Discharge};
use shapekit::corpus::{parse_blocks, parse_input, Block, Input};
use shapekit::diff::{diff_scenarios, split_scenarios};
use shapekit::dot::to_dot;
use shapekit::output::{node_block, render, run_scenarios, write_block, RenderOptions, ScenarioRun, WIDTH};
use shapekit::protocol::Protocol;
use shapekit::skeleton::Skeleton;
use shapekit::solver::SolverConfig;

#[derive(Parser)]
#[command(name = "shapekit", version, about = "Strand-space shape analysis with rely-guarantee obligations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze every problem in an input file and print the full output stream
    Analyze {
        input: PathBuf,
        #[command(flatten)]
        search: SearchFlags,
        /// Print every skeleton of the search tree, not just the shapes
        #[arg(long)]
        tree: bool,
    },
    /// Print only the shapes found for each problem
    Shapes {
        input: PathBuf,
        #[command(flatten)]
        search: SearchFlags,
    },
    /// Compare an output stream against golden output (a file or a directory of .out files)
    Diff {
        actual: PathBuf,
        golden: PathBuf,
        /// Input file supplying protocol definitions missing from both streams
        #[arg(long)]
        protocols: Option<PathBuf>,
    },
    /// Emit a DOT strand diagram for one shape
    Graph {
        input: PathBuf,
        #[command(flatten)]
        search: SearchFlags,
        /// Index of the shape across all problems, counting from zero
        #[arg(long, default_value_t = 0)]
        shape: usize,
    },
    /// Explain why each reception of each problem is or is not derivable
    Explain {
        input: PathBuf,
        /// Restrict to one problem, counting from zero
        #[arg(long)]
        scenario: Option<usize>,
    },
}

#[derive(Args, Clone)]
struct SearchFlags {
    /// Maximum number of strands in a skeleton (overrides the herald)
    #[arg(long)]
    bound: Option<usize>,
    /// Prefer encryption tests over nonce tests (overrides the herald)
    #[arg(long)]
    no_check_nonces: bool,
    /// Maximum number of skeletons expanded per problem
    #[arg(long)]
    step_limit: Option<usize>,
    /// Write the output here instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
}

impl SearchFlags {
    fn config(&self, input: &Input) -> Result<SolverConfig, Failure> {
        let mut cfg = SolverConfig::from_herald(input.herald.as_ref());
        if let Some(b) = self.bound {
            if b == 0 {
                return Err(Failure::Input(anyhow!("--bound must be positive")));
            }
            cfg.strand_bound = b;
        }
        if self.no_check_nonces {
            cfg.check_nonces_first = false;
        }
        if let Some(n) = self.step_limit {
            if n == 0 {
                return Err(Failure::Input(anyhow!("--step-limit must be positive")));
            }
            cfg.step_limit = n;
        }
        Ok(cfg)
    }
}

enum Failure {
    Check(anyhow::Error),
    Input(anyhow::Error),
    Incomplete,
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Input(_) => 2,
            Failure::Incomplete => 3,
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(Failure::Input)
}

fn load_input(path: &Path) -> Result<Input, Failure> {
    let text = read(path)?;
    parse_input(&text).with_context(|| format!("parsing {}", path.display())).map_err(Failure::Input)
}

fn emit(text: &str, output: Option<&Path>) -> Result<(), Failure> {
    match output {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())).map_err(Failure::Input),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn summarize(runs: &[ScenarioRun]) {
    for (i, run) in runs.iter().enumerate() {
        let shapes = run.tree.shapes();
        let (mut valid, mut total) = (0, 0);
        for s in &shapes {
            if let Ok(obs) = shape_obligations(&s.skeleton) {
                total += obs.len();
                valid += obs.iter().filter(|o| discharge(o) == Discharge::Valid).count();
            }
        }
        let labels: Vec<String> = run.shape_labels().iter().map(usize::to_string).collect();
        eprintln!(
            "problem {i}: {} skeletons, {} shapes [{}], obligations {valid}/{total} valid, {:.2}s{}",
            run.tree.nodes.len(),
            shapes.len(),
            labels.join(" "),
            run.elapsed.as_secs_f64(),
            if run.tree.incomplete { ", incomplete" } else { "" }
        );
        if let Some(e) = &run.tree.error {
            eprintln!("problem {i}: {e}");
        }
    }
}

fn analyze(input: &Path, search: &SearchFlags, tree: bool, shapes_only: bool) -> Result<(), Failure> {
    let parsed = load_input(input)?;
    let cfg = search.config(&parsed)?;
    let runs = run_scenarios(&parsed.problems, &cfg);
    let text = if shapes_only {
        let mut out = String::new();
        for run in &runs {
            for node in run.tree.shapes() {
                out.push_str(&write_block(&node_block(run, node), WIDTH));
                out.push_str("\n\n");
            }
        }
        out
    } else {
        render(&parsed, &runs, &cfg, RenderOptions { tree })
    };
    emit(&text, search.output.as_deref())?;
    summarize(&runs);
    if let Some(e) = runs.iter().find_map(|r| r.tree.error.as_ref()) {
        return Err(Failure::Input(anyhow!("problem is not a skeleton: {e}")));
    }
    if runs.iter().any(|r| r.tree.incomplete) {
        return Err(Failure::Incomplete);
    }
    Ok(())
}

fn protocols_in(text: &str) -> Result<BTreeMap<String, Arc<Protocol>>> {
    let mut out = BTreeMap::new();
    for f in shapekit::sexpr::read_all(text)? {
        if f.is_form("defprotocol") {
            let p = Protocol::parse(&f)?;
            out.insert(p.name.clone(), Arc::new(p));
        }
    }
    Ok(out)
}

fn golden_scenarios(path: &Path, protocols: &BTreeMap<String, Arc<Protocol>>) -> Result<Vec<Vec<Block>>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "out"))
            .collect();
        files.sort();
        files
            .iter()
            .map(|f| {
                let text = std::fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
                parse_blocks(&text, protocols).with_context(|| format!("parsing {}", f.display()))
            })
            .collect()
    } else {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(split_scenarios(parse_blocks(&text, protocols)?))
    }
}

fn diff(actual: &Path, golden: &Path, protocols: Option<&Path>) -> Result<(), Failure> {
    let actual_text = read(actual)?;
    let mut known = match protocols {
        Some(p) => protocols_in(&read(p)?).map_err(Failure::Input)?,
        None => BTreeMap::new(),
    };
    known.extend(protocols_in(&actual_text).map_err(Failure::Input)?);
    let actual_blocks = parse_blocks(&actual_text, &known)
        .with_context(|| format!("parsing {}", actual.display()))
        .map_err(Failure::Input)?;
    let expected = golden_scenarios(golden, &known).map_err(Failure::Input)?;
    let report = diff_scenarios(&split_scenarios(actual_blocks), &expected);
    for (i, s) in report.scenarios.iter().enumerate() {
        println!("scenario {i}: {} shapes, expected {}", s.actual_shapes, s.expected_shapes);
    }
    if let Some(first) = report.mismatches.first() {
        for m in &report.mismatches {
            println!("mismatch: {m}");
        }
        return Err(Failure::Check(anyhow!("{first}")));
    }
    println!("pass");
    Ok(())
}

fn graph(input: &Path, search: &SearchFlags, index: usize) -> Result<(), Failure> {
    let text = read(input)?;
    let printed = protocols_in(&text)
        .and_then(|p| Ok(parse_blocks(&text, &p)?))
        .map(|blocks| blocks.into_iter().filter(|b| b.shape).map(|b| b.skeleton).collect::<Vec<Skeleton>>())
        .unwrap_or_default();
    let shapes: Vec<(String, Skeleton)> = if printed.is_empty() {
        let parsed = load_input(input)?;
        let cfg = search.config(&parsed)?;
        run_scenarios(&parsed.problems, &cfg)
            .iter()
            .flat_map(|run| {
                run.tree.shapes().into_iter().map(|n| (format!("shape {}", n.label + run.offset), n.skeleton.clone()))
            })
            .collect()
    } else {
        printed.into_iter().enumerate().map(|(i, s)| (format!("shape {i}"), s)).collect()
    };
    let Some((title, sk)) = shapes.get(index) else {
        return Err(Failure::Input(anyhow!("shape {index} requested but only {} found", shapes.len())));
    };
    emit(&to_dot(sk, title), search.output.as_deref())
}

fn explain_cmd(input: &Path, only: Option<usize>) -> Result<(), Failure> {
    let parsed = load_input(input)?;
    if let Some(k) = only {
        if k >= parsed.problems.len() {
            return Err(Failure::Input(anyhow!("problem {k} requested but the input has {}", parsed.problems.len())));
        }
    }
    for (i, p) in parsed.problems.iter().enumerate() {
        if only.is_some_and(|k| k != i) {
            continue;
        }
        let order = p.order();
        let unrealized = unrealized_nodes(p);
        println!("problem {i}: {} unrealized", unrealized.len());
        for n in unrealized {
            let ctx = DerivationContext::at(p, &order, n);
            print!("{}", explain(&ctx, &p.event(n).msg));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Analyze { input, search, tree } => analyze(input, search, *tree, false),
        Command::Shapes { input, search } => analyze(input, search, false, true),
        Command::Diff { actual, golden, protocols } => diff(actual, golden, protocols.as_deref()),
        Command::Graph { input, search, shape } => graph(input, search, *shape),
        Command::Explain { input, scenario } => explain_cmd(input, *scenario),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Check(e) | Failure::Input(e) => eprintln!("error: {e:#}"),
                Failure::Incomplete => eprintln!("error: search incomplete (step limit reached)"),
            }
            ExitCode::from(f.code())
        }
    }
}
