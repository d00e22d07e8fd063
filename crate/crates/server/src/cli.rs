//! The `run`, `verify` and `fixture` commands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use portrule::akap;
use portrule::derivation::{DerivationTree, MetricSeries, TreeNodeId};
use portrule::doc::{from_json, to_json, BundleDoc, GraphDoc, RuleDoc};
use portrule::error::{BranchError, FormatError, TreeError};
use portrule::model::Model;
use portrule::strategy::{EvalConfig, SearchMode, Status};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Format { path: PathBuf, source: FormatError },
    #[error(transparent)]
    Branch(#[from] BranchError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Search {
    Committed,
    Deep,
}

impl From<Search> for SearchMode {
    fn from(s: Search) -> Self {
        match s {
            Search::Committed => SearchMode::Committed,
            Search::Deep => SearchMode::Deep,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Model bundle: signature, initial graph and optionally rules.
    #[arg(long)]
    pub model: PathBuf,
    /// Rule documents, appended to the bundled rules.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Strategy file.
    #[arg(long)]
    pub strategy: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Maximum number of rule attempts.
    #[arg(long)]
    pub budget: Option<u64>,
    #[arg(long, value_enum, default_value_t = Search::Committed)]
    pub search: Search,
    /// Where to write the derivation tree document.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Node name to count along the final path; repeatable. The CSV goes
    /// to stdout.
    #[arg(long = "metric")]
    pub metrics: Vec<String>,
    /// Where to write the final graph document.
    #[arg(long)]
    pub final_state: Option<PathBuf>,
}

impl RunArgs {
    pub fn config(&self) -> EvalConfig {
        let mut cfg = EvalConfig::with_seed(self.seed);
        if let Some(b) = self.budget {
            cfg.step_budget = b;
        }
        cfg.search = self.search.into();
        cfg
    }
}

pub struct RunReport {
    pub status: Status,
    pub frontier: TreeNodeId,
    pub tree: DerivationTree,
    pub model: Model,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_doc<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    from_json(&read(path)?).map_err(|source| CliError::Format {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(model: &Path, rules: Option<&Path>) -> Result<Model, CliError> {
    let bundle: BundleDoc = parse_doc(model)?;
    let extra: Vec<RuleDoc> = match rules {
        Some(p) => parse_doc(p)?,
        None => Vec::new(),
    };
    Model::from_docs(&bundle, &extra).map_err(|source| CliError::Format {
        path: model.to_path_buf(),
        source,
    })
}

/// Runs the strategy from the model's initial state and records the run in
/// a fresh tree. Writes nothing.
pub fn execute(args: &RunArgs) -> Result<RunReport, CliError> {
    let model = load_model(&args.model, args.rules.as_deref())?;
    let strategy = read(&args.strategy)?;
    let mut tree = DerivationTree::new(model.initial.clone());
    let out = tree.branch(tree.root(), &strategy, &model, &args.config())?;
    Ok(RunReport {
        status: out.status,
        frontier: out.frontier,
        tree,
        model,
    })
}

/// One row per node on the path from the root to `node`.
pub fn metrics_csv(tree: &DerivationTree, model: &Model, node: TreeNodeId, names: &[String]) -> Result<String, CliError> {
    let series: Vec<MetricSeries> = names
        .iter()
        .map(|n| tree.series(node, n, &model.signature))
        .collect::<Result<_, _>>()?;
    let mut out = String::from("node,step");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    let rows = series.first().map_or(0, |s| s.points.len());
    for i in 0..rows {
        let p = &series[0].points[i];
        out.push_str(&format!("{},{}", p.node, p.step));
        for s in &series {
            out.push_str(&format!(",{}", s.points[i].value));
        }
        out.push('\n');
    }
    Ok(out)
}

/// The `run` command. Returns the process exit code: 0 when the strategy
/// succeeded, 1 when it failed, 2 on any error.
pub fn run(args: &RunArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    match run_inner(args, stdout, stderr) {
        Ok(Status::Fail) => 1,
        Ok(_) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            2
        }
    }
}

fn run_inner(args: &RunArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<Status, CliError> {
    let report = execute(args)?;
    if let Some(path) = &args.out {
        write(path, &report.tree.to_json())?;
    }
    if let Some(path) = &args.final_state {
        let state = &report.tree.node(report.frontier)?.state;
        write(path, &to_json(&GraphDoc::from_graph(&state.graph, true)))?;
    }
    if !args.metrics.is_empty() {
        let csv = metrics_csv(&report.tree, &report.model, report.frontier, &args.metrics)?;
        stdout
            .write_all(csv.as_bytes())
            .map_err(|e| CliError::Other(e.to_string()))?;
    }
    let label = match report.status {
        Status::Fail => "fail",
        _ => "id",
    };
    let _ = writeln!(stderr, "{label} after {} tree nodes", report.tree.len());
    Ok(report.status)
}

/// Re-imports a tree document and replays every rule step against the
/// model. Returns the problems found.
pub fn verify(tree: &Path, model: &Path, rules: Option<&Path>) -> Result<Vec<String>, CliError> {
    let model = load_model(model, rules)?;
    let tree = DerivationTree::from_json(&read(tree)?).map_err(|source| CliError::Format {
        path: tree.to_path_buf(),
        source,
    })?;
    let mut problems = tree.verify(&model);
    if tree.node(tree.root())?.state.graph.fingerprint() != model.initial.graph.fingerprint() {
        problems.insert(0, "root state differs from the model's initial graph".to_string());
    }
    Ok(problems)
}

pub const FIXTURES: &[&str] = &["akap"];

/// Bundle and strategy files of a built-in model.
pub fn fixture_files(name: &str) -> Result<Vec<(String, String)>, CliError> {
    match name {
        "akap" => Ok(vec![
            ("akap.bundle.json".to_string(), to_json(&akap::model().to_doc())),
            ("akap.strat".to_string(), akap::STRATEGY.to_string()),
        ]),
        other => Err(CliError::Other(format!(
            "unknown fixture {other}; available: {}",
            FIXTURES.join(", ")
        ))),
    }
}

pub fn write_fixture(name: &str, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    for (file, text) in fixture_files(name)? {
        let path = dir.join(file);
        write(&path, &text)?;
        written.push(path);
    }
    Ok(written)
}
