//! Command-line front end: `estimate`, `train` and `table`.
//!
//! Exit codes: 0 success, 1 other failure, 2 missing artifact, 3 invalid or
//! singular operator, 4 training divergence.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::diffgraph::Checkpoint;
use crate::error::{Error, Result};
use crate::estimators::{
    append_rows, check_operator, kl_bound_estimate, mc_estimate, mean_std, vde_estimate, EstimateReport, Method, ResultRow,
};
use crate::flows::{FlowSpec, SphericalFlow};
use crate::operators::{load_fixture, LinearOperator, OperatorHandle};
use crate::train::{default_flow_spec, train, Profile, TrainConfig, TrainStatus};

pub const DEFAULT_GRID: [usize; 4] = [100, 1_000, 10_000, 100_000];
pub const TABLE1_FIXTURES: [&str; 5] = ["A1", "A2", "A3", "A4", "A5"];
pub const TABLE2_FIXTURE: &str = "conv16";

#[derive(Debug, Parser)]
#[command(name = "detflow", version, about = "Determinant estimation with spherical normalizing flows")]
pub struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo and/or VDE estimates over a sample grid.
    Estimate(EstimateArgs),
    /// Train a flow proposal for one operator.
    Train(TrainArgs),
    /// Reproduce a results table.
    Table(TableArgs),
}

#[derive(Debug, Clone, Args)]
pub struct OperatorArgs {
    /// Built-in fixture: A1..A5, cover3x3, conv16 (alias conv_filter), identity10.
    #[arg(long, conflicts_with = "operator")]
    pub fixture: Option<String>,
    /// Operator JSON file.
    #[arg(long)]
    pub operator: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Mc,
    Vde,
    Both,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub op: OperatorArgs,
    #[arg(long, value_enum, default_value = "mc")]
    pub method: MethodArg,
    /// Sample counts, comma separated; `1e5` notation accepted.
    #[arg(long, value_delimiter = ',', value_parser = parse_count)]
    pub samples: Vec<usize>,
    #[arg(long, env = "DETFLOW_SEED")]
    pub seed: Option<u64>,
    /// Checkpoint holding the proposal (required for VDE).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Independent seeds per cell.
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Print every report as a JSON line.
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub op: OperatorArgs,
    #[arg(long, default_value = "desk", value_parser = parse_profile)]
    pub profile: Profile,
    #[arg(long, env = "DETFLOW_SEED")]
    pub seed: Option<u64>,
    /// Experiment spec JSON.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Full training config JSON (overrides profile and spec).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Held-out evaluation cadence in iterations.
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Output directory (default `runs/<operator>-<profile>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableKind {
    Table1,
    Table2,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    #[arg(value_enum)]
    pub table: TableKind,
    #[arg(long, default_value = "desk", value_parser = parse_profile)]
    pub profile: Profile,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    /// Train missing checkpoints instead of failing.
    #[arg(long)]
    pub train_first: bool,
    #[arg(long, value_delimiter = ',', value_parser = parse_count)]
    pub samples: Vec<usize>,
    #[arg(long, env = "DETFLOW_SEED")]
    pub seed: Option<u64>,
    /// Override the profile's iteration count.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

/// Experiment description read by `--spec`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    #[serde(default)]
    pub fixture: Option<String>,
    #[serde(default)]
    pub operator: Option<PathBuf>,
    #[serde(default)]
    pub flow: Option<FlowSpec>,
    #[serde(default = "default_profile")]
    pub profile: Profile,
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default = "default_grid")]
    pub samples: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

fn default_profile() -> Profile {
    Profile::Desk
}
fn default_grid() -> Vec<usize> {
    DEFAULT_GRID.to_vec()
}
fn default_trials() -> usize {
    1
}

impl ExperimentSpec {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let spec: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fixture.is_some() == self.operator.is_some() {
            return Err(Error::Invalid("experiment spec needs exactly one of `fixture` and `operator`".into()));
        }
        if self.samples.is_empty() || self.samples.windows(2).any(|w| w[0] >= w[1]) || self.samples[0] == 0 {
            return Err(Error::Invalid("sample grid must be positive and strictly ascending".into()));
        }
        if self.trials == 0 {
            return Err(Error::Invalid("trials must be >= 1".into()));
        }
        Ok(())
    }
}

fn parse_count(s: &str) -> std::result::Result<usize, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("not a number: `{s}`"))?;
    if !(v >= 1.0) || v.fract() != 0.0 || v > 1e12 {
        return Err(format!("sample count must be a positive integer, got `{s}`"));
    }
    Ok(v as usize)
}

fn parse_profile(s: &str) -> std::result::Result<Profile, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Exit code for an error, per the scripting contract.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::MissingArtifact(_) => 2,
        Error::Singular | Error::InvalidOperator(_) | Error::UnknownFixture(_) | Error::NotSquare { .. } => 3,
        Error::Diverged { .. } => 4,
        _ => 1,
    }
}

/// A resolved operator with a display name.
pub struct NamedOperator {
    pub name: String,
    pub op: OperatorHandle,
}

fn resolve_operator(fixture: Option<&str>, file: Option<&Path>) -> Result<NamedOperator> {
    let named = match (fixture, file) {
        (Some(f), None) => NamedOperator { name: f.to_string(), op: load_fixture(f)? },
        (None, Some(p)) => {
            let op = OperatorHandle::from_json_file(p).map_err(|e| match e {
                Error::MissingArtifact(_) => e,
                Error::Io(_) | Error::Json(_) | Error::Invalid(_) | Error::NonFinite(_) => {
                    Error::InvalidOperator(format!("{}: {e}", p.display()))
                }
                other => other,
            })?;
            let name = p.file_stem().map_or("operator".into(), |s| s.to_string_lossy().into_owned());
            NamedOperator { name, op }
        }
        _ => return Err(Error::Invalid("pass exactly one of --fixture and --operator".into())),
    };
    check_operator(&named.op)?;
    Ok(named)
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(w) = cli.workers {
        // ignore the error if a pool already exists (tests call run repeatedly)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global();
    }
    match cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Train(a) => cmd_train(a),
        Command::Table(a) => cmd_table(a),
    }
}

fn cmd_estimate(args: EstimateArgs) -> Result<()> {
    let spec = args.spec.as_deref().map(ExperimentSpec::from_json_file).transpose()?;
    let fixture = args.op.fixture.clone().or_else(|| spec.as_ref().and_then(|s| s.fixture.clone()));
    let file = args.op.operator.clone().or_else(|| spec.as_ref().and_then(|s| s.operator.clone()));
    let named = resolve_operator(fixture.as_deref(), file.as_deref())?;
    let seed = args.seed.or(spec.as_ref().map(|s| s.seed)).unwrap_or(0);
    let grid = if !args.samples.is_empty() {
        args.samples.clone()
    } else {
        spec.as_ref().map_or(DEFAULT_GRID.to_vec(), |s| s.samples.clone())
    };
    let methods: Vec<Method> = match args.method {
        MethodArg::Mc => vec![Method::Mc],
        MethodArg::Vde => vec![Method::Vde],
        MethodArg::Both => vec![Method::Vde, Method::Mc],
    };
    let flow = if methods.contains(&Method::Vde) {
        let path = args.checkpoint.clone().ok_or_else(|| Error::MissingArtifact(PathBuf::from("<--checkpoint>")))?;
        Some(load_flow(&path, named.op.dim())?)
    } else {
        None
    };
    let truth = check_operator(&named.op)?.abs_det();
    fs::create_dir_all(&args.out)?;
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &n in &grid {
        for &m in &methods {
            for t in 0..args.trials {
                let s = trial_seed(seed, t);
                let r = match (m, &flow) {
                    (Method::Vde, Some(f)) => vde_estimate(&named.op, f, n, s)?,
                    _ => mc_estimate(&named.op, n, s)?,
                }
                .with_truth(truth)?;
                if args.json {
                    println!("{}", serde_json::to_string(&r)?);
                }
                rows.push(ResultRow::new(&named.name, &r));
                reports.push(r);
            }
        }
    }
    append_rows(&args.out.join("results.csv"), &rows)?;
    let summary = estimate_summary(&named.name, truth, &grid, &methods, &reports);
    print!("{summary}");
    fs::write(args.out.join("summary.txt"), summary)?;
    Ok(())
}

fn load_flow(path: &Path, n: usize) -> Result<SphericalFlow> {
    let flow = Checkpoint::load(path)?.flow()?;
    if flow.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: flow.dim() });
    }
    Ok(flow)
}

/// Seed of trial `t` under a master seed.
pub fn trial_seed(master: u64, t: usize) -> u64 {
    master.wrapping_add(1_000_003u64.wrapping_mul(t as u64))
}

fn pct(mean: f64, std: f64) -> String {
    format!("{:.1} ± {:.1} %", 100.0 * mean, 100.0 * std)
}

fn estimate_summary(name: &str, truth: f64, grid: &[usize], methods: &[Method], reports: &[EstimateReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{name}: oracle |det| = {truth:.6}, log|det| = {:.6}", truth.ln());
    let _ = write!(s, "{:<8}", "method");
    for n in grid {
        let _ = write!(s, "{:>22}", format!("N={n}"));
    }
    let _ = writeln!(s);
    for m in methods {
        let _ = write!(s, "{:<8}", m.as_str().to_uppercase());
        for n in grid {
            let vals: Vec<f64> = reports
                .iter()
                .filter(|r| r.method == *m && r.n_samples == *n)
                .filter_map(|r| r.rel_abs_diff)
                .collect();
            let (mean, std) = mean_std(&vals);
            let _ = write!(s, "{:>22}", pct(mean, std));
        }
        let _ = writeln!(s);
    }
    s
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let spec = args.spec.as_deref().map(ExperimentSpec::from_json_file).transpose()?;
    let mut config = match &args.config {
        Some(p) => Some(TrainConfig::from_json_file(p)?),
        None => None,
    };
    let fixture = args
        .op
        .fixture
        .clone()
        .or_else(|| spec.as_ref().and_then(|s| s.fixture.clone()))
        .or_else(|| config.as_ref().filter(|c| load_fixture(&c.operator).is_ok()).map(|c| c.operator.clone()));
    let file = args
        .op
        .operator
        .clone()
        .or_else(|| spec.as_ref().and_then(|s| s.operator.clone()))
        .or_else(|| config.as_ref().filter(|c| load_fixture(&c.operator).is_err()).map(|c| PathBuf::from(&c.operator)));
    let named = resolve_operator(fixture.as_deref(), if fixture.is_some() { None } else { file.as_deref() })?;
    let profile = spec.as_ref().map_or(args.profile, |s| if args.profile == Profile::Desk { s.profile } else { args.profile });
    let seed = args.seed.or(spec.as_ref().map(|s| s.seed)).or(config.as_ref().map(|c| c.seed)).unwrap_or(0);
    let mut cfg = config.take().unwrap_or_else(|| {
        let flow = spec.as_ref().and_then(|s| s.flow.clone()).unwrap_or_else(|| default_flow_spec(named.op.dim()));
        TrainConfig::for_profile(profile, &named.name, flow, seed)
    });
    cfg.seed = seed;
    if let Some(s) = &spec {
        cfg.iterations = s.iterations.unwrap_or(cfg.iterations);
        cfg.batch_size = s.batch_size.unwrap_or(cfg.batch_size);
    }
    cfg.iterations = args.iterations.unwrap_or(cfg.iterations);
    cfg.batch_size = args.batch_size.unwrap_or(cfg.batch_size);
    cfg.learning_rate = args.learning_rate.unwrap_or(cfg.learning_rate);
    cfg.eval_every = args.eval_every.unwrap_or(cfg.eval_every);
    cfg.validate()?;
    let out = args
        .out
        .clone()
        .or_else(|| spec.as_ref().and_then(|s| s.out.clone()))
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-{}", named.name, profile_name(profile))));
    let summary = train_to_dir(&cfg, &named, &out)?;
    print!("{summary}");
    Ok(())
}

fn profile_name(p: Profile) -> &'static str {
    match p {
        Profile::Desk => "desk",
        Profile::PaperDense => "paper-dense",
        Profile::PaperConv => "paper-conv",
    }
}

/// Trains and writes `checkpoint.json`, `trace.csv`, `config.json` and
/// `summary.txt` under `out`. A divergence abort still writes everything
/// and then returns [`Error::Diverged`].
pub fn train_to_dir(cfg: &TrainConfig, named: &NamedOperator, out: &Path) -> Result<String> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    let outcome = train(cfg, &named.op, Some(&out.join("checkpoint.json")))?;
    outcome.trace.write_csv(&out.join("trace.csv"))?;
    let oracle = check_operator(&named.op)?;
    let obj = outcome.trace.objectives();
    let window = (obj.len() / 10).max(1);
    let first = obj.iter().take(window).sum::<f64>() / window.min(obj.len()).max(1) as f64;
    let last = obj.iter().rev().take(window).sum::<f64>() / window.min(obj.len()).max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(s, "operator {}  n = {}  oracle log|det| = {:.6}", named.name, named.op.dim(), oracle.logabs);
    let _ = writeln!(s, "iterations {}  batch {}  seed {}", outcome.steps, cfg.batch_size, cfg.seed);
    let _ = writeln!(s, "objective: first {window} mean {first:.6}, last {window} mean {last:.6}");
    if outcome.steps > 0 {
        let kl = kl_bound_estimate(&named.op, &outcome.flow, 10_000, cfg.seed.wrapping_add(0x5eed))?;
        let _ = writeln!(s, "kl bound (10^4 samples) {:.6} ± {:.6}", kl.value, kl.std_error);
    }
    let _ = writeln!(s, "checkpoint {}", out.join("checkpoint.json").display());
    fs::write(out.join("summary.txt"), &s)?;
    if let TrainStatus::Aborted { iteration, reason } = outcome.status {
        return Err(Error::Diverged { iteration, reason });
    }
    Ok(s)
}

/// Loads `dir/<fixture>/checkpoint.json`, training it first when allowed.
fn checkpoint_for(
    fixture: &str,
    dir: &Path,
    cfg: impl FnOnce(&NamedOperator) -> TrainConfig,
    train_first: bool,
) -> Result<(NamedOperator, SphericalFlow)> {
    let named = resolve_operator(Some(fixture), None)?;
    let run_dir = dir.join(fixture);
    let path = run_dir.join("checkpoint.json");
    if !path.exists() {
        if !train_first {
            return Err(Error::MissingArtifact(path));
        }
        let c = cfg(&named);
        eprintln!("training {fixture}: {} iterations, batch {}", c.iterations, c.batch_size);
        train_to_dir(&c, &named, &run_dir)?;
    }
    let flow = load_flow(&path, named.op.dim())?;
    Ok((named, flow))
}

fn cmd_table(args: TableArgs) -> Result<()> {
    let seed = args.seed.unwrap_or(0);
    if args.trials == 0 {
        return Err(Error::Invalid("trials must be >= 1".into()));
    }
    let grid = if args.samples.is_empty() { DEFAULT_GRID.to_vec() } else { args.samples.clone() };
    let dir = args.out.join(profile_name(args.profile));
    let make_cfg = |named: &NamedOperator| {
        let mut c = TrainConfig::for_profile(args.profile, &named.name, default_flow_spec(named.op.dim()), seed);
        c.iterations = args.iterations.unwrap_or(c.iterations);
        c.batch_size = args.batch_size.unwrap_or(c.batch_size);
        c.learning_rate = args.learning_rate.unwrap_or(c.learning_rate);
        c
    };
    fs::create_dir_all(&dir)?;
    let text = match args.table {
        TableKind::Table1 => {
            let mut runs = Vec::new();
            for f in TABLE1_FIXTURES {
                runs.push(checkpoint_for(f, &dir, make_cfg, args.train_first)?);
            }
            table1(&runs, &grid, args.trials, seed, &dir)?
        }
        TableKind::Table2 => {
            let run = checkpoint_for(TABLE2_FIXTURE, &dir, make_cfg, args.train_first)?;
            table2(&run, &grid, args.trials, seed, &dir)?
        }
    };
    print!("{text}");
    Ok(())
}

/// One evaluated cell: every (fixture, trial) value for a method and N.
struct Cell {
    method: Method,
    n: usize,
    rel: Vec<f64>,
    det: Vec<f64>,
    log_det: Vec<f64>,
}

fn evaluate_grid(
    runs: &[(NamedOperator, SphericalFlow)],
    grid: &[usize],
    trials: usize,
    seed: u64,
    rows: &mut Vec<ResultRow>,
) -> Result<Vec<Cell>> {
    let mut cells = Vec::new();
    for &n in grid {
        for method in [Method::Vde, Method::Mc] {
            let mut cell = Cell { method, n, rel: Vec::new(), det: Vec::new(), log_det: Vec::new() };
            for (named, flow) in runs {
                let truth = check_operator(&named.op)?.abs_det();
                for t in 0..trials {
                    let s = trial_seed(seed, t);
                    let r = match method {
                        Method::Vde => vde_estimate(&named.op, flow, n, s)?,
                        Method::Mc => mc_estimate(&named.op, n, s)?,
                    }
                    .with_truth(truth)?;
                    cell.rel.push(r.rel_abs_diff.expect("truth attached"));
                    cell.det.push(r.det_estimate);
                    cell.log_det.push(r.log_det_estimate);
                    rows.push(ResultRow::new(&named.name, &r));
                }
            }
            cells.push(cell);
        }
    }
    Ok(cells)
}

fn write_figures(dir: &Path, cells: &[Cell]) -> Result<()> {
    let mut a = String::from("# estimate vs N; plot both axes on a log scale\nmethod,N,det_mean,det_std,log_det_mean\n");
    let mut b = String::from("# mean absolute relative difference vs N; plot both axes on a log scale\nmethod,N,rel_abs_diff_mean,rel_abs_diff_std\n");
    for c in cells {
        let (dm, ds) = mean_std(&c.det);
        let (lm, _) = mean_std(&c.log_det);
        let (rm, rs) = mean_std(&c.rel);
        let _ = writeln!(a, "{},{},{dm},{ds},{lm}", c.method.as_str(), c.n);
        let _ = writeln!(b, "{},{},{rm},{rs}", c.method.as_str(), c.n);
    }
    fs::write(dir.join("fig2a.csv"), a)?;
    fs::write(dir.join("fig2b.csv"), b)?;
    Ok(())
}

fn reset_results(dir: &Path) -> Result<PathBuf> {
    let path = dir.join("results.csv");
    if path.exists() {
        fs::remove_file(&path)?;
    }
    Ok(path)
}

/// Mean ± std of the relative error across fixtures (and trials) for each
/// method and sample count.
pub fn table1(runs: &[(NamedOperator, SphericalFlow)], grid: &[usize], trials: usize, seed: u64, dir: &Path) -> Result<String> {
    let mut rows = Vec::new();
    let cells = evaluate_grid(runs, grid, trials, seed, &mut rows)?;
    append_rows(&reset_results(dir)?, &rows)?;
    write_figures(dir, &cells)?;
    let mut s = String::new();
    let _ = writeln!(s, "Mean absolute relative difference of |det| ({} matrices x {trials} trials)", runs.len());
    let _ = write!(s, "{:<8}", "");
    for n in grid {
        let _ = write!(s, "{:>20}", format!("N={n}"));
    }
    let _ = writeln!(s);
    for method in [Method::Vde, Method::Mc] {
        let _ = write!(s, "{:<8}", method.as_str().to_uppercase());
        for c in cells.iter().filter(|c| c.method == method) {
            let (m, sd) = mean_std(&c.rel);
            let _ = write!(s, "{:>20}", pct(m, sd));
        }
        let _ = writeln!(s);
    }
    fs::write(dir.join("summary.txt"), &s)?;
    Ok(s)
}

/// Determinant, log-determinant and relative error rows for one operator.
pub fn table2(run: &(NamedOperator, SphericalFlow), grid: &[usize], trials: usize, seed: u64, dir: &Path) -> Result<String> {
    let mut rows = Vec::new();
    let cells = evaluate_grid(std::slice::from_ref(run), grid, trials, seed, &mut rows)?;
    append_rows(&reset_results(dir)?, &rows)?;
    write_figures(dir, &cells)?;
    let oracle = check_operator(&run.0.op)?;
    let kl = kl_bound_estimate(&run.0.op, &run.1, 10_000, seed)?;
    let mut s = String::new();
    let _ = writeln!(s, "{}: true determinant {:.4}, true log determinant {:.4}", run.0.name, oracle.abs_det(), oracle.logabs);
    let _ = write!(s, "{:<22}", "");
    for n in grid {
        let _ = write!(s, "{:>16}", format!("N={n}"));
    }
    let _ = writeln!(s);
    let line = |s: &mut String, label: &str, method: Method, f: &dyn Fn(&Cell) -> String| {
        let _ = write!(s, "{label:<22}");
        for c in cells.iter().filter(|c| c.method == method) {
            let _ = write!(s, "{:>16}", f(c));
        }
        let _ = writeln!(s);
    };
    line(&mut s, "VDE det.", Method::Vde, &|c| format!("{:.4}", mean_std(&c.det).0));
    line(&mut s, "MC det.", Method::Mc, &|c| format!("{:.4}", mean_std(&c.det).0));
    line(&mut s, "VDE log det.", Method::Vde, &|c| format!("{:.4}", mean_std(&c.log_det).0));
    line(&mut s, "MC log det.", Method::Mc, &|c| format!("{:.4}", mean_std(&c.log_det).0));
    line(&mut s, "VDE rel. abs. diff.", Method::Vde, &|c| format!("{:.2} %", 100.0 * mean_std(&c.rel).0));
    line(&mut s, "MC rel. abs. diff.", Method::Mc, &|c| format!("{:.2} %", 100.0 * mean_std(&c.rel).0));
    let _ = writeln!(s, "KL bound (10^4 samples): {:.4} ± {:.4}", kl.value, kl.std_error);
    fs::write(dir.join("summary.txt"), &s)?;
    Ok(s)
}
