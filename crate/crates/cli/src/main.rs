use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use hardquad_core::harness::emit::{self, Format};
use hardquad_core::harness::verify::{self, Scale};
use hardquad_core::harness::{self, Deformation, ExperimentConfig, GridPoint, Tau0Policy};
use hardquad_core::instances::{Instance, InstanceDump, InstanceParams};
use hardquad_core::solvers::{self, SolverKind, SolverOptions};
use hardquad_core::{identities, linalg, oracle, replica, rng, spectral};

#[derive(Parser)]
#[command(name = "hardquad", version, about = "Hard random quadratics, a counted gradient oracle, and Monte-Carlo checks")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
    /// JSON file whose keys override the flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; JSON goes to stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample one instance and dump it.
    Gen(GenArgs),
    /// Spectral report and Stieltjes transfer check for one instance.
    Spectral(SpectralArgs),
    /// Resolvent decomposition of the minimizer/plant overlap.
    Overlap(InstanceArgs),
    /// tau-schedule with its gap check, and optionally a solver's per-query potential trace.
    Potential(PotentialArgs),
    /// Run one solver through the oracle.
    Solve(SolveArgs),
    /// Sweep a grid of instances (grid comes from --config).
    Sweep(SweepArgs),
    /// Replica-symmetric maximizer, or a table over lambda.
    Replica(ReplicaArgs),
    /// Importance-sampling estimate of the posterior cross term.
    MmseMc(MmseArgs),
    /// Run the acceptance suite.
    Verify(VerifyArgs),
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
struct InstanceArgs {
    #[arg(long, default_value_t = 500)]
    d: usize,
    #[arg(long, conflicts_with = "kappa")]
    lambda: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    /// Defaults to (lambda - 1)^2.
    #[arg(long)]
    tau0: Option<f64>,
    #[arg(skip)]
    seed: Option<u64>,
}

impl InstanceArgs {
    fn grid_point(&self) -> GridPoint {
        let deformation = match (self.lambda, self.kappa) {
            (_, Some(k)) => Deformation::Kappa(k),
            (Some(l), None) => Deformation::Lambda(l),
            (None, None) => Deformation::Lambda(1.25),
        };
        let tau0 = self.tau0.map_or(Tau0Policy::GapSquared, Tau0Policy::Fixed);
        GridPoint::new(self.d, deformation, tau0)
    }

    fn params(&self) -> Result<InstanceParams> {
        let p = self.grid_point().params(self.seed.unwrap_or(0))?;
        p.validate()?;
        Ok(p)
    }

    fn instance(&self) -> Result<Instance> {
        Ok(Instance::sample(self.params()?)?)
    }
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
struct GenArgs {
    #[command(flatten)]
    #[serde(flatten)]
    inst: InstanceArgs,
    /// Include W, M and A in the dump.
    #[arg(long)]
    #[serde(default)]
    full: bool,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
struct SpectralArgs {
    #[command(flatten)]
    #[serde(flatten)]
    inst: InstanceArgs,
    #[arg(long, default_value_t = std::f64::consts::SQRT_2)]
    nu: f64,
    #[arg(long, default_value_t = 0.01)]
    eps: f64,
    #[arg(long, default_value_t = spectral::DEFAULT_LIPSCHITZ_C)]
    lipschitz_c: f64,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
struct PotentialArgs {
    #[command(flatten)]
    #[serde(flatten)]
    inst: InstanceArgs,
    #[arg(long, default_value_t = 10)]
    rounds: usize,
    /// Failure level; defaults to the plug-in exp(-d lambda^2 tau0 (lambda - 1)).
    #[arg(long)]
    delta: Option<f64>,
    /// Also run this solver and emit one JSON line per query.
    #[arg(long)]
    solver: Option<SolverKind>,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
struct SolveArgs {
    #[command(flatten)]
    #[serde(flatten)]
    inst: InstanceArgs,
    #[arg(long, default_value = "cg")]
    solver: SolverKind,
    #[arg(long, default_value_t = 1000)]
    budget: usize,
    #[arg(long, default_value_t = 1e-10)]
    rtol: f64,
    #[arg(long, default_value_t = 10)]
    estimate_queries: usize,
    /// Include x_hat and the full history in the output.
    #[arg(long)]
    #[serde(default)]
    full: bool,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
struct SweepArgs {
    /// csv or json
    #[arg(long, default_value = "csv")]
    format: String,
    /// File stem for the emitted files.
    #[arg(long, default_value = "sweep")]
    name: String,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
struct ReplicaArgs {
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    mu: f64,
    /// Comma-separated lambdas for a table at tau0 = (lambda - 1)^2.
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    lambdas: Vec<f64>,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
struct MmseArgs {
    #[arg(long, default_value_t = 6)]
    d: usize,
    #[arg(long, default_value_t = 4.0)]
    rho: f64,
    #[arg(long, default_value_t = 0.5)]
    mu: f64,
    #[arg(long, default_value_t = 200_000)]
    samples: usize,
    #[arg(long, default_value_t = 20)]
    instances: usize,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug)]
struct VerifyArgs {
    /// Reduced dimensions and trial counts.
    #[arg(long)]
    #[serde(default)]
    quick: bool,
    /// Run only these criteria (comma-separated numbers).
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    only: Vec<u8>,
}

/// Flags first, then every key present in the config file on top.
fn overlay<T: Serialize + DeserializeOwned>(args: &T, config: Option<&Path>) -> Result<T> {
    let Some(path) = config else {
        return Ok(serde_json::from_value(serde_json::to_value(args)?)?);
    };
    let mut base = serde_json::to_value(args)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let over: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    merge(&mut base, over);
    serde_json::from_value(base).with_context(|| format!("config {} does not fit this subcommand", path.display()))
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>, file: &str) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let p = dir.join(file);
            fs::write(&p, text + "\n").with_context(|| format!("writing {}", p.display()))?;
            eprintln!("wrote {}", p.display());
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn with_seed(mut inst: InstanceArgs, cli: &Cli) -> InstanceArgs {
    if inst.seed.is_none() {
        inst.seed = Some(cli.seed.unwrap_or(0));
    }
    inst
}

fn init_threads(cli_threads: Option<usize>) {
    if let Some(n) = harness::thread_count(cli_threads) {
        // A second call only fails if a pool already exists, which is harmless here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

#[derive(Serialize)]
struct SpectralOutput {
    params: InstanceParams,
    gamma: f64,
    report: spectral::SpectralReport,
    stieltjes_s: f64,
    stieltjes_q: f64,
    transfer: spectral::StieltjesTransfer,
}

#[derive(Serialize)]
struct PotentialOutput {
    schedule: oracle::TauSchedule,
    gap_check: Vec<bool>,
}

#[derive(Serialize)]
struct SolveOutput {
    params: InstanceParams,
    result: solvers::SolverRow,
    phi: Vec<f64>,
    curve: Vec<(f64, Option<usize>)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    x_hat: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    history: Option<Vec<solvers::HistoryPoint>>,
}

fn run(cli: &Cli) -> Result<bool> {
    let cfg = cli.config.as_deref();
    let out = cli.out.as_deref();
    linalg::sequential();
    match &cli.cmd {
        Command::Gen(a) => {
            let a = overlay(&GenArgs { inst: with_seed(a.inst.clone(), cli), ..a.clone() }, cfg)?;
            let inst = a.inst.instance()?;
            emit_json(&InstanceDump::new(&inst, a.full), out, "instance.json")?;
        }
        Command::Spectral(a) => {
            let a = overlay(&SpectralArgs { inst: with_seed(a.inst.clone(), cli), ..a.clone() }, cfg)?;
            let inst = a.inst.instance()?;
            let (report, w_eigs) = spectral::spectral_report_with_eigs(&inst, a.nu)?;
            let transfer = spectral::stieltjes_transfer(&w_eigs, inst.params.lambda, a.eps, a.lipschitz_c)?;
            let o = SpectralOutput {
                params: inst.params,
                gamma: inst.gamma,
                report,
                stieltjes_s: spectral::stieltjes_s(inst.gamma)?,
                stieltjes_q: spectral::stieltjes_q(inst.gamma)?,
                transfer,
            };
            emit_json(&o, out, "spectral.json")?;
        }
        Command::Overlap(a) => {
            let a = overlay(&with_seed(a.clone(), cli), cfg)?;
            let inst = a.instance()?;
            emit_json(&identities::overlap_decomposition(&inst)?, out, "overlap.json")?;
        }
        Command::Potential(a) => {
            let a = overlay(&PotentialArgs { inst: with_seed(a.inst.clone(), cli), ..a.clone() }, cfg)?;
            let p = a.inst.params()?;
            let schedule = oracle::tau_schedule(p.lambda, p.tau0, p.d, a.delta, a.rounds)?;
            let gap_check = oracle::recursion_gap_check(&schedule);
            emit_json(&PotentialOutput { schedule, gap_check }, out, "potential.json")?;
            if let Some(kind) = a.solver {
                let inst = Instance::sample(p)?;
                let opts = SolverOptions { steps: a.rounds, rtol: 0.0, ..Default::default() };
                let budget = if kind == SolverKind::Cg { a.rounds } else { a.rounds + opts.estimate_queries };
                let o = solvers::solve_instance(kind, &inst, budget, &opts)?;
                let mut lines = String::new();
                for r in &o.trace {
                    lines.push_str(&serde_json::to_string(r)?);
                    lines.push('\n');
                }
                match out {
                    Some(dir) => {
                        let path = dir.join("trace.jsonl");
                        fs::write(&path, lines).with_context(|| format!("writing {}", path.display()))?;
                        eprintln!("wrote {}", path.display());
                    }
                    None => print!("{lines}"),
                }
            }
        }
        Command::Solve(a) => {
            let a = overlay(&SolveArgs { inst: with_seed(a.inst.clone(), cli), ..a.clone() }, cfg)?;
            let inst = a.inst.instance()?;
            let opts = SolverOptions { steps: a.budget, rtol: a.rtol, estimate_queries: a.estimate_queries, ..Default::default() };
            let o = solvers::solve_instance(a.solver, &inst, a.budget, &opts)?;
            let curve = solvers::query_complexity_curve(&o.result.history, &[0.9, 0.5, 0.25, 0.1, 0.05, 0.01, 1e-3, 1e-4, 1e-6]);
            let so = SolveOutput {
                params: inst.params,
                result: o.result.row(),
                phi: o.phi.clone(),
                curve,
                x_hat: a.full.then(|| o.result.x_hat.clone()),
                history: a.full.then(|| o.result.history.clone()),
            };
            emit_json(&so, out, "solve.json")?;
        }
        Command::Sweep(a) => {
            let a = overlay(a, None)?;
            let format: Format = a.format.parse()?;
            let Some(path) = cfg else { bail!("sweep needs --config with a grid") };
            let mut base = serde_json::json!({
                "trials": cli.trials.unwrap_or(1),
                "master_seed": cli.seed.unwrap_or(verify::DEFAULT_SEED),
                "threads": cli.threads,
                "out_dir": cli.out,
                "name": a.name,
            });
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            merge(&mut base, serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?);
            let exp: ExperimentConfig = serde_json::from_value(base).with_context(|| format!("config {}", path.display()))?;
            exp.validate()?;
            let dir = exp.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
            let o = harness::sweep(&exp)?;
            let stem = if exp.name.is_empty() { "sweep".to_string() } else { exp.name.clone() };
            for p in emit::emit(&dir, &stem, &o.records, &o.failures, format)? {
                eprintln!("wrote {}", p.display());
            }
            eprintln!("{} records, {} failed trials", o.records.len(), o.failures.len());
        }
        Command::Replica(a) => {
            let a = overlay(a, cfg)?;
            if !a.lambdas.is_empty() {
                let rows = replica::replica_table(&a.lambdas)?;
                let mut w = csv::Writer::from_writer(Vec::new());
                for r in &rows {
                    w.serialize(r)?;
                }
                let body = String::from_utf8(w.into_inner()?)?;
                let text = format!("{}\n{body}", emit::timestamp_line());
                match out {
                    Some(dir) => {
                        fs::create_dir_all(dir)?;
                        let p = dir.join("replica.csv");
                        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
                        eprintln!("wrote {}", p.display());
                    }
                    None => print!("{text}"),
                }
            } else {
                let Some(rho) = a.rho else { bail!("replica needs --rho or --lambdas") };
                let q = replica::q_star_closed(rho, a.mu)?;
                let point = replica::replica_point(rho, a.mu)?;
                let numeric = replica::q_star_numeric(rho, a.mu)?;
                emit_json(&serde_json::json!({"point": point, "sub_threshold": q.sub_threshold, "q_star_numeric": numeric}), out, "replica.json")?;
            }
        }
        Command::MmseMc(a) => {
            let a = overlay(a, cfg)?;
            init_threads(cli.threads);
            let mut r = rng::from_seed(cli.seed.unwrap_or(verify::DEFAULT_SEED));
            let pc = replica::posterior_cross_mc(a.d, a.rho, a.mu, a.samples, a.instances, &mut r)?;
            let summary = serde_json::json!({
                "d": a.d, "rho": a.rho, "mu": a.mu, "estimate": pc.estimate, "stderr": pc.stderr,
                "min_ess": pc.min_ess, "unreliable": pc.unreliable, "prior_cross": replica::prior_cross(a.d, a.mu),
                "per_instance": pc.per_instance,
            });
            emit_json(&summary, out, "mmse_mc.json")?;
        }
        Command::Verify(a) => {
            let a = overlay(a, cfg)?;
            init_threads(cli.threads);
            let scale = if a.quick { Scale::Quick } else { Scale::Full };
            let report = verify::run_verify(scale, cli.seed.unwrap_or(verify::DEFAULT_SEED), out, &a.only)?;
            let mut stdout = std::io::stdout().lock();
            for c in &report.criteria {
                writeln!(stdout, "{}", c.line())?;
                for l in c.supporting_lines() {
                    writeln!(stdout, "{l}")?;
                }
            }
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more claims failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
