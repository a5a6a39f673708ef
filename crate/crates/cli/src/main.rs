//! `lowrank` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 numerical failure.
//! Errors go to stderr as a single JSON line.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use lowrank::geometry::{nsp_check_with, WidthParams, DEFAULT_REFINE_STEPS};
use lowrank::harness::{
    run_phase_diagram, run_width_sweep, write_record, Experiment, ExperimentConfig, OutputFormat, PhaseDiagramParams,
    Tabular, WidthSweepParams,
};
use lowrank::io::{atomic_write, load_operator, load_square, load_vector, save_operator};
use lowrank::measurements::{
    estimate_restricted_constants_with, gaussian_operator_guarded, random_mask_operator, MeasurementOperator,
    DEFAULT_MEMORY_GUARD_MB,
};
use lowrank::solvers::{recover_nuclear, recover_schatten_p, SolveOptions};
use lowrank::stability::{hypothesis_holds, mu, stability_constants, verify_bounds, GammaProvenance};
use lowrank::{Error, Exec};

mod selftest;

#[derive(Parser, Debug)]
#[command(name = "lowrank", version, about = "Low-rank matrix recovery experiments")]
struct Cli {
    /// Master seed.
    #[arg(long, global = true, env = "LOWRANK_SEED", default_value_t = 0)]
    seed: u64,
    /// Monte Carlo trials (per cell for experiments).
    #[arg(long, global = true, env = "LOWRANK_TRIALS")]
    trials: Option<usize>,
    /// Output path; standard output when absent.
    #[arg(long, global = true, env = "LOWRANK_OUT")]
    out: Option<PathBuf>,
    #[arg(long, global = true, env = "LOWRANK_FORMAT", value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Worker threads; 1 keeps every run single-threaded.
    #[arg(long, global = true, env = "LOWRANK_THREADS", default_value_t = 1)]
    threads: usize,
    #[arg(long = "memory-guard-mb", global = true, env = "LOWRANK_MEMORY_GUARD_MB", default_value_t = DEFAULT_MEMORY_GUARD_MB)]
    memory_guard_mb: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a measurement operator and write its JSON header.
    GenOperator(GenOperator),
    /// Solve min ‖Z‖_{S_p} subject to the measurement constraint.
    Recover(Recover),
    /// Estimate the restricted extremal constants of an operator.
    RipProbe(RipProbe),
    /// Stability constants, or bound verification for a recovered matrix.
    StabilityReport(StabilityReportArgs),
    /// Sample the null-space property.
    NspCheck(NspCheck),
    /// Empirical Gelfand-width upper bounds and the fitted decay exponent.
    WidthSweep(WidthSweep),
    /// Success probability over a (rank, measurements) grid.
    PhaseDiagram(PhaseDiagram),
    /// Run the built-in example checks.
    Selftest,
}

#[derive(Args, Debug)]
struct OperatorSource {
    /// Operator JSON written by gen-operator.
    #[arg(long)]
    operator: Option<PathBuf>,
    /// Draw a Gaussian operator of this size instead (with --m).
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
}

impl OperatorSource {
    fn load(&self, seed: u64, guard_mb: usize) -> Result<MeasurementOperator, Error> {
        match (&self.operator, self.n, self.m) {
            (Some(path), None, None) => load_operator(path, guard_mb),
            (None, Some(n), Some(m)) => gaussian_operator_guarded(n, m, seed, guard_mb),
            _ => Err(Error::param("operator", "give either --operator or both --N and --m")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum OperatorKindArg {
    Gaussian,
    Mask,
}

#[derive(Args, Debug)]
struct GenOperator {
    #[arg(long = "N")]
    n: usize,
    #[arg(long)]
    m: usize,
    #[arg(long, value_enum, default_value_t = OperatorKindArg::Gaussian)]
    kind: OperatorKindArg,
    /// Entry scale for masks.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Also store the dense matrix as a sibling .smat file.
    #[arg(long)]
    payload: bool,
}

#[derive(Args, Debug, Clone)]
struct SolverFlags {
    #[arg(long = "max-iters", default_value_t = SolveOptions::default().max_iters)]
    max_iters: usize,
    #[arg(long = "tol-change", default_value_t = SolveOptions::default().tol_change)]
    tol_change: f64,
    #[arg(long, default_value_t = SolveOptions::default().penalty)]
    penalty: f64,
}

impl SolverFlags {
    fn options(&self) -> SolveOptions {
        SolveOptions {
            max_iters: self.max_iters,
            tol_change: self.tol_change,
            penalty: self.penalty,
            ..SolveOptions::default()
        }
    }
}

#[derive(Args, Debug)]
struct Recover {
    #[command(flatten)]
    source: OperatorSource,
    /// Measurements: JSON array or {"data": [...]}.
    #[arg(long)]
    y: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    #[arg(long, default_value_t = 0.0)]
    theta: f64,
    /// β₂ₛ for the relaxed constraint ‖A(Z) − y‖ ≤ β₂ₛ·θ.
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
    /// Include the per-iteration trace.
    #[arg(long)]
    trace: bool,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Args, Debug)]
struct RipProbe {
    #[command(flatten)]
    source: OperatorSource,
    #[arg(long)]
    s: usize,
    #[arg(long, default_value_t = 5)]
    refine: usize,
}

#[derive(Args, Debug)]
struct StabilityReportArgs {
    /// Caller-certified γ₂ₜ; otherwise probed from the operator.
    #[arg(long)]
    gamma: Option<f64>,
    #[command(flatten)]
    source: OperatorSource,
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    #[arg(long)]
    s: usize,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    theta: f64,
    /// Original matrix (SMAT or JSON); with --x-star, verify both bounds.
    #[arg(long)]
    x: Option<PathBuf>,
    #[arg(long = "x-star")]
    x_star: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    refine: usize,
}

#[derive(Args, Debug)]
struct NspCheck {
    #[command(flatten)]
    source: OperatorSource,
    #[arg(long)]
    s: usize,
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    #[arg(long, default_value_t = DEFAULT_REFINE_STEPS)]
    refine: usize,
}

#[derive(Args, Debug)]
struct WidthSweep {
    #[arg(long = "N")]
    n: usize,
    /// Comma-separated measurement counts.
    #[arg(long = "m-values", value_delimiter = ',', required = true)]
    m_values: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    #[arg(long, default_value_t = 2.0)]
    q: f64,
    #[arg(long = "c-delta", default_value_t = 6.0)]
    c_delta: f64,
    #[arg(long = "probe-trials", default_value_t = 200)]
    probe_trials: usize,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Args, Debug)]
struct PhaseDiagram {
    #[arg(long = "N")]
    n: usize,
    /// lo:hi, inclusive.
    #[arg(long = "s-range")]
    s_range: String,
    /// lo:hi:step, inclusive; values above N² are dropped.
    #[arg(long = "m-range")]
    m_range: String,
    /// Trials per cell; falls back to --trials.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    #[arg(long = "success-tol", default_value_t = 1e-3)]
    success_tol: f64,
    #[command(flatten)]
    solver: SolverFlags,
}

/// Failure with an exit code and a machine-readable line.
struct Failure {
    code: u8,
    kind: &'static str,
    field: Option<&'static str>,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind, field) = match &e {
            Error::Numerical(_) => (2, "numerical", None),
            Error::Parameter { field, .. } => (1, "parameter", Some(*field)),
            Error::Io(_) => (1, "io", None),
            Error::Format(_) => (1, "format", None),
            Error::Dimension { .. } => (1, "dimension", None),
            Error::Infeasible { .. } => (1, "infeasible", None),
            Error::HypothesisViolated { .. } => (1, "hypothesis", None),
            Error::MemoryGuard { .. } => (1, "memory-guard", None),
            Error::Input(_) => (1, "input", None),
        };
        Failure {
            code,
            kind,
            field,
            message: e.to_string(),
        }
    }
}

impl Failure {
    fn numerical(message: String) -> Self {
        Failure {
            code: 2,
            kind: "numerical",
            field: None,
            message,
        }
    }

    fn report(&self) {
        #[derive(Serialize)]
        struct Line<'a> {
            error: &'a str,
            #[serde(skip_serializing_if = "Option::is_none")]
            field: Option<&'a str>,
            message: &'a str,
            exit: u8,
        }
        let line = Line {
            error: self.kind,
            field: self.field,
            message: &self.message,
            exit: self.code,
        };
        eprintln!("{}", serde_json::to_string(&line).expect("plain struct"));
    }
}

type CliResult = Result<(), Failure>;

fn emit(out: Option<&Path>, bytes: &[u8]) -> CliResult {
    match out {
        Some(p) => atomic_write(p, bytes)?,
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(bytes).and_then(|_| so.flush()).map_err(Error::Io)?;
        }
    }
    Ok(())
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> CliResult {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(Error::from)?;
    bytes.push(b'\n');
    emit(out, &bytes)
}

fn emit_record<T: Tabular>(cli: &Cli, record: &T) -> CliResult {
    match &cli.out {
        Some(p) => write_record(record, p, cli.format.into())?,
        None => match cli.format {
            Format::Csv => emit(None, &record.table()?)?,
            Format::Json => emit_json(None, record)?,
        },
    }
    Ok(())
}

fn trials(cli: &Cli, default: usize) -> usize {
    cli.trials.unwrap_or(default)
}

fn parse_range(text: &str, field: &'static str) -> Result<Vec<usize>, Error> {
    let parts: Vec<&str> = text.split(':').collect();
    let num = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| Error::param(field, format!("bad integer {s:?} in {text:?}")))
    };
    let (lo, hi, step) = match parts.as_slice() {
        [lo, hi] => (num(lo)?, num(hi)?, 1),
        [lo, hi, step] => (num(lo)?, num(hi)?, num(step)?),
        _ => return Err(Error::param(field, format!("expected lo:hi or lo:hi:step, got {text:?}"))),
    };
    if step == 0 || lo > hi {
        return Err(Error::param(field, format!("empty range {text:?}")));
    }
    Ok((lo..=hi).step_by(step).collect())
}

fn run(cli: &Cli) -> CliResult {
    let guard = cli.memory_guard_mb;
    let exec = if cli.threads <= 1 { Exec::Sequential } else { Exec::Parallel };
    match &cli.command {
        Command::GenOperator(a) => {
            let op = match a.kind {
                OperatorKindArg::Gaussian => gaussian_operator_guarded(a.n, a.m, cli.seed, guard)?,
                OperatorKindArg::Mask => random_mask_operator(a.n, a.m, a.scale, cli.seed)?,
            };
            match &cli.out {
                Some(p) => save_operator(p, &op, a.payload)?,
                None => emit_json(None, &op.header())?,
            }
        }
        Command::Recover(a) => {
            let op = a.source.load(cli.seed, guard)?;
            let y = load_vector(&a.y)?;
            let opts = SolveOptions {
                trace: a.trace,
                ..a.solver.options()
            };
            let res = if a.p >= 1.0 {
                if a.p > 1.0 {
                    return Err(Error::param("p", format!("must lie in (0, 1], got {}", a.p)).into());
                }
                recover_nuclear(&op, &y, a.theta, a.beta, &opts)?
            } else {
                recover_schatten_p(&op, &y, a.p, a.theta, a.beta, &opts)?
            };
            emit_json(cli.out.as_deref(), &res)?;
            if !res.converged {
                return Err(Failure::numerical(res.status_note));
            }
        }
        Command::RipProbe(a) => {
            let op = a.source.load(cli.seed, guard)?;
            let rc = estimate_restricted_constants_with(&op, a.s, trials(cli, 200), a.refine, cli.seed, exec)?;
            emit_json(cli.out.as_deref(), &rc)?;
        }
        Command::StabilityReport(a) => {
            let t = a.t.unwrap_or(a.s);
            let (gamma, provenance) = match a.gamma {
                Some(g) => (g, GammaProvenance::User),
                None => {
                    let op = a.source.load(cli.seed, guard)?;
                    let rc = estimate_restricted_constants_with(&op, 2 * t, trials(cli, 200), a.refine, cli.seed, exec)?;
                    let g = rc
                        .gamma_hat
                        .ok_or_else(|| Failure::numerical("probe found a degenerate map: gamma is unbounded".into()))?;
                    (g, GammaProvenance::ProbeLowerEstimate)
                }
            };
            match (&a.x, &a.x_star) {
                (Some(x), Some(xs)) => {
                    let rep = verify_bounds(&load_square(x)?, &load_square(xs)?, a.s, t, a.p, a.theta, gamma, provenance)?;
                    emit_json(cli.out.as_deref(), &rep)?;
                }
                (None, None) => {
                    #[derive(Serialize)]
                    struct ConstantsOnly {
                        gamma_2t: f64,
                        gamma_provenance: GammaProvenance,
                        p: f64,
                        s: usize,
                        t: usize,
                        mu: f64,
                        hypothesis_holds: bool,
                        constants: Option<lowrank::stability::StabilityConstants>,
                    }
                    let holds = hypothesis_holds(gamma, a.p, a.s, t)?;
                    let out = ConstantsOnly {
                        gamma_2t: gamma,
                        gamma_provenance: provenance,
                        p: a.p,
                        s: a.s,
                        t,
                        mu: mu(gamma, a.p, a.s, t)?,
                        hypothesis_holds: holds,
                        constants: if holds { Some(stability_constants(gamma, a.p, a.s, t)?) } else { None },
                    };
                    emit_json(cli.out.as_deref(), &out)?;
                }
                _ => return Err(Error::param("x", "--x and --x-star go together").into()),
            }
        }
        Command::NspCheck(a) => {
            let op = a.source.load(cli.seed, guard)?;
            let rep = nsp_check_with(&op, a.s, a.p, trials(cli, 500), a.refine, cli.seed, exec)?;
            emit_json(cli.out.as_deref(), &rep)?;
        }
        Command::WidthSweep(a) => {
            let mut template = WidthParams::new(a.n, a.m_values[0], a.p, a.q, trials(cli, 20), cli.seed);
            template.c_delta = a.c_delta;
            template.probe_trials = a.probe_trials;
            template.solve = a.solver.options();
            let config = ExperimentConfig {
                threads: cli.threads,
                memory_guard_mb: guard,
                format: cli.format.into(),
                out: cli.out.clone(),
                ..ExperimentConfig::new(
                    cli.seed,
                    Experiment::WidthSweep(WidthSweepParams {
                        grid: a.m_values.iter().map(|&m| (a.n, m, a.p, a.q)).collect(),
                        template,
                    }),
                )
            };
            let rec = run_width_sweep(&config)?;
            emit_record(cli, &rec)?;
        }
        Command::PhaseDiagram(a) => {
            let s_values = parse_range(&a.s_range, "s_range")?;
            let all_m = parse_range(&a.m_range, "m_range")?;
            let m_values: Vec<usize> = all_m.iter().copied().filter(|&m| m <= a.n * a.n).collect();
            if m_values.len() < all_m.len() {
                eprintln!(
                    "note: dropped {} m values above N^2 = {}",
                    all_m.len() - m_values.len(),
                    a.n * a.n
                );
            }
            let mut params = PhaseDiagramParams::new(a.n, s_values, m_values, a.seeds.unwrap_or(trials(cli, 25)));
            params.p = a.p;
            params.success_tol = a.success_tol;
            params.solve = a.solver.options();
            let config = ExperimentConfig {
                threads: cli.threads,
                memory_guard_mb: guard,
                format: cli.format.into(),
                out: cli.out.clone(),
                ..ExperimentConfig::new(cli.seed, Experiment::PhaseDiagram(params))
            };
            let rec = run_phase_diagram(&config)?;
            emit_record(cli, &rec)?;
        }
        Command::Selftest => {
            let failed = selftest::run(&mut std::io::stdout().lock());
            if failed > 0 {
                return Err(Failure::numerical(format!("{failed} selftest checks failed")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            Failure {
                code: 1,
                kind: "usage",
                field: None,
                message: e.kind().to_string(),
            }
            .report();
            return ExitCode::from(1);
        }
    };
    if cli.threads == 0 {
        let f: Failure = Error::param("threads", "must be >= 1").into();
        f.report();
        return ExitCode::from(f.code);
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            Failure::numerical(format!("thread pool: {e}")).report();
            return ExitCode::from(2);
        }
    };
    match pool.install(|| run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            f.report();
            ExitCode::from(f.code)
        }
    }
}
