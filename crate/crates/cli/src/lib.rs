//! Command implementations behind the `graphnlp` binary.
//!
//! Every command returns `Ok(code)` or a [`Failure`] carrying the process exit
//! code: 0 optimal/success, 1 solver failure, 2 parse or validation error.

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use graphnlp::graph::{
    adjacency_csv, adjacency_export, aggregate, flatten, heuristic_partition, partition, to_dot, FlatNlp, Partition,
};
use graphnlp::ipm::{solve_with_observer, IpmError, IterationEvent, SolveReport, SolveStatus, SolverOptions};
use graphnlp::kkt::{BackendKind, KktError};
use graphnlp::modelfile::{Metadata, ModelFile};
use graphnlp::models::{
    build_gas, build_pid, demand_csv, pid_time_partition, GasConfig, NodeOrdering, PidConfig, MASTER_LABEL,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_SOLVER: u8 = 1;
pub const EXIT_INPUT: u8 = 2;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn input(e: impl Into<anyhow::Error>) -> Self {
        Failure { code: EXIT_INPUT, error: e.into() }
    }

    pub fn solver(e: impl Into<anyhow::Error>) -> Self {
        Failure { code: EXIT_SOLVER, error: e.into() }
    }
}

pub type CmdResult = Result<u8, Failure>;

#[derive(Parser, Debug)]
#[command(name = "graphnlp", version, about = "Graph-structured nonlinear optimization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a benchmark model as a JSON model file.
    Generate {
        #[command(subcommand)]
        model: ModelArgs,
        /// Output path; standard output when omitted.
        #[arg(short, long, global = true)]
        output: Option<PathBuf>,
    },
    /// Solve a model file.
    Solve(SolveArgs),
    /// Regroup the nodes of a model file into subgraphs.
    Partition(PartitionArgs),
    /// Export the node adjacency structure.
    Export(ExportArgs),
    /// Time backends and thread counts on a generated model.
    Bench(BenchArgs),
}

#[derive(Subcommand, Debug, Clone)]
pub enum ModelArgs {
    /// Stochastic PID controller tuning.
    Pid(PidArgs),
    /// Stochastic gas pipeline network.
    Gas(GasArgs),
}

#[derive(Args, Debug, Clone)]
pub struct PidArgs {
    /// JSON file with a full configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of scenarios.
    #[arg(long)]
    pub ns: Option<usize>,
    /// Number of time points.
    #[arg(long)]
    pub n: Option<usize>,
    /// Horizon length.
    #[arg(long)]
    pub tf: Option<f64>,
    #[arg(long, value_enum)]
    pub ordering: Option<Ordering>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ordering {
    ScenarioMajor,
    TimeMajor,
}

#[derive(Args, Debug, Clone)]
pub struct GasArgs {
    /// JSON file with a full configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scenarios: Option<usize>,
    /// Time points.
    #[arg(long)]
    pub nt: Option<usize>,
    /// Space points per pipeline.
    #[arg(long)]
    pub nx: Option<usize>,
    /// Seed of the demand profiles.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the demand profiles here as CSV (time by scenario).
    #[arg(long, value_name = "PATH")]
    pub demand_csv: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Monolithic,
    SchurDual,
    SchurTree,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Monolithic => "monolithic",
            Backend::SchurDual => "schur-dual",
            Backend::SchurTree => "schur-tree",
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct SolverFlags {
    /// Worker threads for the Schur backends.
    #[arg(long, env = "GRAPHNLP_THREADS", default_value_t = 1)]
    pub threads: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Solve on the node graph as given instead of collapsing each top-level
    /// subgraph into one block.
    #[arg(long)]
    pub no_aggregate: bool,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    pub file: PathBuf,
    #[arg(long, value_enum, default_value_t = Backend::Monolithic)]
    pub backend: Backend,
    #[command(flatten)]
    pub solver: SolverFlags,
    /// Append a run report row to this CSV file.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Write the final KKT system (and Schur matrix) as Matrix Market files here.
    #[arg(long)]
    pub dump_kkt: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
pub struct PartitionMode {
    /// Greedy breadth-first partition into P parts.
    #[arg(long, value_name = "P")]
    pub parts: Option<usize>,
    /// File with one 0-based part index per node in file order.
    #[arg(long, value_name = "PATH")]
    pub membership: Option<PathBuf>,
    /// Contiguous time windows across all scenarios (labels ending in `.t<k>`).
    #[arg(long, value_name = "P")]
    pub by_time: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PartitionArgs {
    pub file: PathBuf,
    #[command(flatten)]
    pub mode: PartitionMode,
    /// Output path; standard output when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Dot,
    AdjacencyCsv,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    pub file: PathBuf,
    #[arg(long, value_enum)]
    pub format: ExportFormat,
    /// Output path; standard output when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(subcommand)]
    pub model: ModelArgs,
    /// Comma-separated backends.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "monolithic", global = true)]
    pub backends: Vec<Backend>,
    /// Comma-separated thread counts.
    #[arg(long, value_delimiter = ',', default_value = "1", global = true)]
    pub threads: Vec<usize>,
    /// Timed runs per configuration, after one discarded warm-up run.
    #[arg(long, default_value_t = 3, global = true)]
    pub repeats: usize,
    #[arg(long, default_value_t = 1e-8, global = true)]
    pub tol: f64,
    #[arg(long, default_value_t = 500, global = true)]
    pub max_iter: usize,
    /// Output CSV path; standard output when omitted.
    #[arg(short, long, global = true)]
    pub output: Option<PathBuf>,
}

pub fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Generate { model, output } => cmd_generate(&model, output.as_deref()),
        Command::Solve(a) => cmd_solve(&a),
        Command::Partition(a) => cmd_partition(&a),
        Command::Export(a) => cmd_export(&a),
        Command::Bench(a) => cmd_bench(&a),
    }
}

fn read_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = path else { return Ok(T::default()) };
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(Failure::input)?;
    serde_json::from_str(&text).with_context(|| format!("config {}", path.display())).map_err(Failure::input)
}

pub fn pid_config(a: &PidArgs) -> Result<PidConfig, Failure> {
    let mut cfg: PidConfig = read_config(a.config.as_deref())?;
    if let Some(ns) = a.ns {
        let sized = PidConfig::with_size(ns, cfg.n);
        cfg.ns = ns;
        cfg.d = sized.d;
        cfg.xsp = sized.xsp;
    }
    if let Some(n) = a.n {
        cfg.n = n;
    }
    if let Some(tf) = a.tf {
        cfg.tf = tf;
    }
    match a.ordering {
        Some(Ordering::ScenarioMajor) => cfg.ordering = NodeOrdering::ScenarioMajor,
        Some(Ordering::TimeMajor) => cfg.ordering = NodeOrdering::TimeMajor,
        None => {}
    }
    Ok(cfg)
}

pub fn gas_config(a: &GasArgs) -> Result<GasConfig, Failure> {
    let mut cfg: GasConfig = read_config(a.config.as_deref())?;
    if let Some(s) = a.scenarios {
        cfg.scenarios = s;
    }
    if let Some(nt) = a.nt {
        cfg.nt = nt;
    }
    if let Some(nx) = a.nx {
        cfg.nx = nx;
    }
    if let Some(seed) = a.seed {
        cfg.demand.seed = seed;
    }
    Ok(cfg)
}

/// Builds the model described by `args` with its metadata.
pub fn generate(args: &ModelArgs) -> Result<ModelFile, Failure> {
    let generator = format!("graphnlp {}", env!("CARGO_PKG_VERSION"));
    let (graph, name, config) = match args {
        ModelArgs::Pid(a) => {
            let cfg = pid_config(a)?;
            let g = build_pid(&cfg).map_err(Failure::input)?;
            (g, "pid", serde_json::to_value(&cfg).map_err(Failure::input)?)
        }
        ModelArgs::Gas(a) => {
            let cfg = gas_config(a)?;
            let g = build_gas(&cfg).map_err(Failure::input)?;
            if let Some(path) = &a.demand_csv {
                write_output(Some(path), demand_csv(&cfg.demands()).as_bytes())?;
            }
            (g, "gas", serde_json::to_value(&cfg).map_err(Failure::input)?)
        }
    };
    let meta = Metadata { name: name.into(), generator, config, master: Some(MASTER_LABEL.into()) };
    Ok(ModelFile::new(graph, meta))
}

fn write_output(output: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match output {
        Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display())).map_err(Failure::input),
        None => std::io::stdout().write_all(bytes).context("writing standard output").map_err(Failure::input),
    }
}

pub fn cmd_generate(model: &ModelArgs, output: Option<&Path>) -> CmdResult {
    let mf = generate(model)?;
    eprintln!(
        "generated {}: {} nodes, {} variables, {} links",
        mf.metadata.name,
        mf.graph.num_nodes(),
        mf.graph.num_variables(),
        mf.graph.num_links()
    );
    write_output(output, mf.to_json_string().as_bytes())?;
    Ok(EXIT_OK)
}

pub fn load(path: &Path) -> Result<ModelFile, Failure> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(Failure::input)?;
    ModelFile::parse(&text).with_context(|| format!("model file {}", path.display())).map_err(Failure::input)
}

/// Flattened problem and backend choice for `mf`. With `aggregate_blocks`
/// every top-level subgraph becomes one block; schur-tree takes its master
/// block from the node labelled by `metadata.master`.
pub fn prepare(mf: &ModelFile, backend: Backend, aggregate_blocks: bool) -> Result<(FlatNlp, BackendKind), Failure> {
    let graph = if aggregate_blocks { aggregate(&mf.graph) } else { mf.graph.clone() };
    let flat = flatten(&graph).context("flattening model").map_err(Failure::input)?;
    let kind = match backend {
        Backend::Monolithic => BackendKind::Monolithic,
        Backend::SchurDual => BackendKind::SchurDual,
        Backend::SchurTree => {
            let label = mf.metadata.master.as_deref().ok_or_else(|| {
                Failure::input(anyhow!("schur-tree needs metadata.master naming the first-stage node"))
            })?;
            let node = graph.nodes().iter().find(|n| n.label == label).ok_or_else(|| {
                Failure::input(anyhow!("schur-tree: no top-level node labelled {label:?} after aggregation"))
            })?;
            BackendKind::SchurTree { master: node.id() }
        }
    };
    Ok((flat, kind))
}

fn solver_failure(e: IpmError) -> Failure {
    let structural = matches!(
        e,
        IpmError::InvalidOptions(_)
            | IpmError::InconsistentBounds { .. }
            | IpmError::NonFiniteStart { .. }
            | IpmError::Kkt(
                KktError::NonAffineLink { .. }
                    | KktError::NotTwoStage { .. }
                    | KktError::UnknownMaster(_)
                    | KktError::CrossBlockEntry { .. }
            )
    );
    if structural {
        Failure::input(e)
    } else {
        Failure::solver(e)
    }
}

/// One row of the solve report CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub model: String,
    pub backend: String,
    pub threads: usize,
    pub status: String,
    pub iterations: usize,
    pub objective: f64,
    pub kkt_error: f64,
    pub schur_dim: usize,
    pub total_s: f64,
    pub linear_s: f64,
    pub function_s: f64,
    pub derivative_s: f64,
}

impl RunReport {
    pub const HEADER: &'static str =
        "model,backend,threads,status,iterations,objective,kkt_error,schur_dim,total_s,linear_s,function_s,derivative_s";
    /// Columns that carry wall-clock times.
    pub const TIMING_COLUMNS: std::ops::Range<usize> = 8..12;

    pub fn new(model: &str, backend: Backend, threads: usize, r: &SolveReport) -> Self {
        RunReport {
            model: model.to_string(),
            backend: backend.name().to_string(),
            threads,
            status: status_name(&r.status).to_string(),
            iterations: r.iterations,
            objective: r.objective,
            kkt_error: r.kkt_error,
            schur_dim: r.schur_dim,
            total_s: r.timings.total,
            linear_s: r.timings.linear_solve,
            function_s: r.timings.function_eval,
            derivative_s: r.timings.derivative_eval,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.12e},{:.6e},{},{:.6},{:.6},{:.6},{:.6}",
            self.model.replace(',', ";"),
            self.backend,
            self.threads,
            self.status,
            self.iterations,
            self.objective,
            self.kkt_error,
            self.schur_dim,
            self.total_s,
            self.linear_s,
            self.function_s,
            self.derivative_s
        )
    }

    /// Appends the row, writing the header first if the file is new or empty.
    pub fn append_to(&self, path: &Path) -> std::io::Result<()> {
        let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            writeln!(f, "{}", Self::HEADER)?;
        }
        writeln!(f, "{}", self.csv_row())
    }
}

pub fn status_name(s: &SolveStatus) -> &'static str {
    match s {
        SolveStatus::Optimal => "optimal",
        SolveStatus::MaxIterations => "max_iter",
        SolveStatus::LineSearchFailure => "infeasible_step",
        SolveStatus::Error(_) => "error",
    }
}

fn options(flags: &SolverFlags, kind: BackendKind) -> SolverOptions {
    SolverOptions {
        tol: flags.tol,
        max_iter: flags.max_iter,
        backend: kind,
        threads: flags.threads,
        ..Default::default()
    }
}

pub fn cmd_solve(a: &SolveArgs) -> CmdResult {
    let mf = load(&a.file)?;
    let (flat, kind) = prepare(&mf, a.backend, !a.solver.no_aggregate)?;
    let mut opts = options(&a.solver, kind);
    if let Some(dir) = &a.dump_kkt {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(Failure::input)?;
        opts.dump_kkt = Some(dir.clone());
    }
    eprintln!(
        "{}: {} variables, {} constraints, {} blocks, backend {}, {} thread(s)",
        a.file.display(),
        flat.n_vars,
        flat.n_cons,
        flat.blocks.len(),
        a.backend.name(),
        opts.threads
    );
    let mut out = std::io::BufWriter::new(std::io::stdout());
    let _ = writeln!(out, "{}", IterationEvent::CSV_HEADER);
    let report = solve_with_observer(&flat, &opts, &mut |e| {
        let _ = writeln!(out, "{}", e.csv_line());
    })
    .map_err(solver_failure)?;
    let _ = out.flush();
    let model = if mf.metadata.name.is_empty() { a.file.display().to_string() } else { mf.metadata.name.clone() };
    let row = RunReport::new(&model, a.backend, opts.threads, &report);
    if report.schur_dim > 0 {
        eprintln!("schur dimension: {}", report.schur_dim);
    }
    eprintln!(
        "status {}, objective {:.10e}, {} iterations, {:.3} s total, {:.3} s linear solve",
        report.status, report.objective, report.iterations, report.timings.total, report.timings.linear_solve
    );
    if let Some(path) = &a.report {
        row.append_to(path).with_context(|| format!("writing {}", path.display())).map_err(Failure::input)?;
    }
    Ok(if report.status == SolveStatus::Optimal { EXIT_OK } else { EXIT_SOLVER })
}

/// Parses whitespace- or comma-separated part indices.
pub fn parse_membership(text: &str) -> anyhow::Result<Vec<usize>> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .enumerate()
        .map(|(i, t)| t.parse::<usize>().with_context(|| format!("membership entry {i}: {t:?} is not a part index")))
        .collect()
}

pub fn cmd_partition(a: &PartitionArgs) -> CmdResult {
    let mf = load(&a.file)?;
    let m = &a.mode;
    let part = if let Some(p) = m.parts {
        heuristic_partition(&mf.graph, p).map_err(Failure::input)?
    } else if let Some(p) = m.by_time {
        pid_time_partition(&mf.graph, p).map_err(Failure::input)?
    } else if let Some(path) = &m.membership {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(Failure::input)?;
        Partition::new(parse_membership(&text).map_err(Failure::input)?)
    } else {
        unreachable!("clap requires one partition mode")
    };
    let sizes = part.part_sizes();
    let graph = partition(mf.graph, &part).context("partition").map_err(Failure::input)?;
    eprintln!("{} parts, sizes {:?}", sizes.len(), sizes);
    let out = ModelFile::new(graph, mf.metadata);
    write_output(a.output.as_deref(), out.to_json_string().as_bytes())?;
    Ok(EXIT_OK)
}

pub fn cmd_export(a: &ExportArgs) -> CmdResult {
    let mf = load(&a.file)?;
    let text = match a.format {
        ExportFormat::Dot => to_dot(&mf.graph),
        ExportFormat::AdjacencyCsv => adjacency_csv(&adjacency_export(&mf.graph)),
    };
    write_output(a.output.as_deref(), text.as_bytes())?;
    Ok(EXIT_OK)
}

/// Averaged timings of one bench configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub model: String,
    pub backend: Backend,
    pub threads: usize,
    pub repeats: usize,
    pub status: String,
    pub iterations: usize,
    pub objective: f64,
    pub total_s: f64,
    pub linear_s: f64,
    pub function_s: f64,
}

impl BenchRow {
    pub const HEADER: &'static str = "model,backend,threads,repeats,status,iterations,objective,total_s,linear_s,function_s,total_per_iter_s,linear_per_iter_s,function_per_iter_s";

    pub fn csv_row(&self) -> String {
        let per = |t: f64| if self.iterations > 0 { t / self.iterations as f64 } else { 0.0 };
        format!(
            "{},{},{},{},{},{},{:.12e},{:.6},{:.6},{:.6},{:.6e},{:.6e},{:.6e}",
            self.model,
            self.backend.name(),
            self.threads,
            self.repeats,
            self.status,
            self.iterations,
            self.objective,
            self.total_s,
            self.linear_s,
            self.function_s,
            per(self.total_s),
            per(self.linear_s),
            per(self.function_s)
        )
    }
}

/// Calls `run` `repeats + 1` times, drops the first result and averages the
/// timings of the rest. Status, iterations and objective come from the last run.
pub fn bench_config(
    model: &str,
    backend: Backend,
    threads: usize,
    repeats: usize,
    run: &mut dyn FnMut() -> Result<SolveReport, Failure>,
) -> Result<BenchRow, Failure> {
    if repeats == 0 {
        return Err(Failure::input(anyhow!("--repeats must be at least 1")));
    }
    run()?;
    let (mut total, mut linear, mut func) = (0.0, 0.0, 0.0);
    let mut last = None;
    for _ in 0..repeats {
        let r = run()?;
        total += r.timings.total;
        linear += r.timings.linear_solve;
        func += r.timings.function_eval + r.timings.derivative_eval;
        last = Some(r);
    }
    let r = last.expect("repeats >= 1");
    let k = repeats as f64;
    Ok(BenchRow {
        model: model.to_string(),
        backend,
        threads,
        repeats,
        status: status_name(&r.status).to_string(),
        iterations: r.iterations,
        objective: r.objective,
        total_s: total / k,
        linear_s: linear / k,
        function_s: func / k,
    })
}

pub fn cmd_bench(a: &BenchArgs) -> CmdResult {
    let mf = generate(&a.model)?;
    let mut csv = String::from(BenchRow::HEADER);
    csv.push('\n');
    for &backend in &a.backends {
        let (flat, kind) = prepare(&mf, backend, true)?;
        for &threads in &a.threads {
            let flags = SolverFlags { threads, tol: a.tol, max_iter: a.max_iter, no_aggregate: false };
            let opts = options(&flags, kind);
            eprintln!(
                "bench {} {} threads={}: 1 warm-up + {} timed runs",
                mf.metadata.name,
                backend.name(),
                threads,
                a.repeats
            );
            let row = bench_config(&mf.metadata.name, backend, threads, a.repeats, &mut || {
                solve_with_observer(&flat, &opts, &mut |_| {}).map_err(solver_failure)
            })?;
            let _ = writeln!(csv, "{}", row.csv_row());
        }
    }
    write_output(a.output.as_deref(), csv.as_bytes())?;
    Ok(EXIT_OK)
}
