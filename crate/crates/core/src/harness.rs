//! Experiment configuration, seeded orchestration and result persistence.
//!
//! A run is described by an [`ExperimentConfig`]; executing it yields a
//! [`RunRecord`] whose rows depend only on the config (never on thread count
//! or wall clock). Tables go out as CSV with a JSON sidecar, or as a single
//! JSON record.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{width_scaling_experiment, ExponentFit, WidthEstimate, WidthParams};
use crate::io::atomic_write;
use crate::linalg::Mat;
use crate::measurements::{
    estimate_restricted_constants_with, gaussian_operator_guarded, DEFAULT_MEMORY_GUARD_MB,
};
use crate::rng::{derive_seed, normal_matrix, normal_vec, stream, Purpose};
use crate::solvers::{recover_nuclear, recover_schatten_p, SolveOptions, SolveResult};
use crate::stability::{verify_bounds, GammaProvenance};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseDiagramParams {
    pub n: usize,
    pub s_values: Vec<usize>,
    pub m_values: Vec<usize>,
    /// Trials (independent operator + planted matrix draws) per cell.
    pub trials: usize,
    pub p: f64,
    /// Success when ‖X* − X‖_{S_2} ≤ success_tol·‖X‖_{S_2}.
    pub success_tol: f64,
    pub solve: SolveOptions,
}

impl PhaseDiagramParams {
    pub fn new(n: usize, s_values: Vec<usize>, m_values: Vec<usize>, trials: usize) -> Self {
        PhaseDiagramParams {
            n,
            s_values,
            m_values,
            trials,
            p: 1.0,
            success_tol: 1e-3,
            solve: SolveOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if n == 0 {
            return Err(Error::param("n", "must be >= 1"));
        }
        if self.s_values.is_empty() {
            return Err(Error::param("s_values", "must be non-empty"));
        }
        if let Some(s) = self.s_values.iter().find(|&&s| s == 0 || s > n) {
            return Err(Error::param("s_values", format!("need 1 <= s <= N = {n}, got {s}")));
        }
        if self.m_values.is_empty() {
            return Err(Error::param("m_values", "must be non-empty"));
        }
        if let Some(m) = self.m_values.iter().find(|&&m| m == 0 || m > n * n) {
            return Err(Error::param("m_values", format!("need 1 <= m <= N^2 = {}, got {m}", n * n)));
        }
        if self.trials == 0 {
            return Err(Error::param("trials", "must be >= 1"));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::param("p", format!("must lie in (0, 1], got {}", self.p)));
        }
        if !(self.success_tol > 0.0 && self.success_tol.is_finite()) {
            return Err(Error::param("success_tol", "must be positive and finite"));
        }
        self.solve.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthSweepParams {
    pub grid: Vec<(usize, usize, f64, f64)>,
    /// Everything except (n, m, p, q), which come from the grid.
    pub template: WidthParams,
}

impl WidthSweepParams {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::param("grid", "must be non-empty"));
        }
        for &(n, m, p, q) in &self.grid {
            WidthParams {
                n,
                m,
                p,
                q,
                ..self.template.clone()
            }
            .validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityParams {
    pub n: usize,
    pub m: usize,
    pub s: usize,
    pub t: usize,
    pub p: f64,
    /// Frobenius size of the full-rank tail added to the unit rank-s part.
    pub tail: f64,
    pub thetas: Vec<f64>,
    pub trials: usize,
    pub probe_trials: usize,
    pub probe_refine: usize,
    pub solve: SolveOptions,
}

impl StabilityParams {
    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if n == 0 {
            return Err(Error::param("n", "must be >= 1"));
        }
        if self.m == 0 || self.m > n * n {
            return Err(Error::param("m", format!("need 1 <= m <= N^2 = {}, got {}", n * n, self.m)));
        }
        if self.s == 0 || self.s > n {
            return Err(Error::param("s", format!("need 1 <= s <= N = {n}, got {}", self.s)));
        }
        if self.t < self.s {
            return Err(Error::param("t", format!("must be >= s = {}, got {}", self.s, self.t)));
        }
        if 2 * self.t > n || 2 * self.s > n {
            return Err(Error::param("t", format!("2t must be <= N = {n}")));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::param("p", format!("must lie in (0, 1], got {}", self.p)));
        }
        if !(self.tail >= 0.0 && self.tail.is_finite()) {
            return Err(Error::param("tail", "must be >= 0 and finite"));
        }
        if self.thetas.is_empty() || self.thetas.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(Error::param("thetas", "must be a non-empty list of finite values >= 0"));
        }
        if self.trials == 0 {
            return Err(Error::param("trials", "must be >= 1"));
        }
        if self.probe_trials == 0 {
            return Err(Error::param("probe_trials", "must be >= 1"));
        }
        self.solve.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Experiment {
    PhaseDiagram(PhaseDiagramParams),
    WidthSweep(WidthSweepParams),
    Stability(StabilityParams),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// 1 runs trials sequentially; anything larger allows data parallelism.
    pub threads: usize,
    pub memory_guard_mb: usize,
    pub format: OutputFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub experiment: Experiment,
}

impl ExperimentConfig {
    pub fn new(seed: u64, experiment: Experiment) -> Self {
        ExperimentConfig {
            seed,
            threads: 1,
            memory_guard_mb: DEFAULT_MEMORY_GUARD_MB,
            format: OutputFormat::Csv,
            out: None,
            experiment,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.threads == 0 {
            return Err(Error::param("threads", "must be >= 1"));
        }
        if self.memory_guard_mb == 0 {
            return Err(Error::param("memory_guard_mb", "must be >= 1"));
        }
        match &self.experiment {
            Experiment::PhaseDiagram(p) => p.validate(),
            Experiment::WidthSweep(p) => p.validate(),
            Experiment::Stability(p) => p.validate(),
        }
    }

    pub fn exec(&self) -> Exec {
        if self.threads <= 1 {
            Exec::Sequential
        } else {
            Exec::Parallel
        }
    }

    pub fn command(&self) -> &'static str {
        match self.experiment {
            Experiment::PhaseDiagram(_) => "phase-diagram",
            Experiment::WidthSweep(_) => "width-sweep",
            Experiment::Stability(_) => "stability",
        }
    }

    /// Git-style object hash: SHA-256 of `blob <len>\0` followed by the
    /// canonical JSON of the config.
    pub fn content_hash(&self) -> Result<String> {
        let body = serde_json::to_vec(self)?;
        let mut h = Sha256::new();
        h.update(format!("blob {}\0", body.len()).as_bytes());
        h.update(&body);
        Ok(hex::encode(h.finalize()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord<R, S> {
    pub version: String,
    pub command: String,
    pub config: ExperimentConfig,
    pub input_hash: String,
    pub wall_clock_s: f64,
    pub rows: Vec<R>,
    pub summary: S,
}

impl<R, S> RunRecord<R, S> {
    fn new(config: &ExperimentConfig, started: Instant, rows: Vec<R>, summary: S) -> Result<Self> {
        Ok(RunRecord {
            version: VERSION.to_string(),
            command: config.command().to_string(),
            config: config.clone(),
            input_hash: config.content_hash()?,
            wall_clock_s: started.elapsed().as_secs_f64(),
            rows,
            summary,
        })
    }
}

// ---------------------------------------------------------------- phase diagram

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseTrial {
    pub s: usize,
    pub m: usize,
    pub trial: usize,
    pub seed: u64,
    /// NaN when the solver failed outright.
    pub rel_error: f64,
    pub success: bool,
    pub converged: bool,
    pub solver_failure: bool,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseCell {
    pub n: usize,
    pub s: usize,
    pub m: usize,
    pub trials: usize,
    pub successes: usize,
    pub probability: f64,
    pub solver_failures: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Midpoint {
    pub s: usize,
    /// First m where the success probability reaches 1/2, linearly
    /// interpolated between grid points; absent if it never does.
    pub m50: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub cells: Vec<PhaseCell>,
    pub midpoints: Vec<Midpoint>,
}

pub type PhaseRecord = RunRecord<PhaseTrial, PhaseSummary>;

fn phase_key(s: usize, m: usize, trial: usize) -> u64 {
    ((s as u64) << 48) | ((m as u64) << 24) | trial as u64
}

fn solve(op: &crate::measurements::MeasurementOperator, y: &[f64], p: f64, theta: f64, beta: f64, o: &SolveOptions) -> Result<SolveResult> {
    if p >= 1.0 {
        recover_nuclear(op, y, theta, beta, o)
    } else {
        recover_schatten_p(op, y, p, theta, beta, o)
    }
}

fn phase_trial(params: &PhaseDiagramParams, seed: u64, guard_mb: usize, s: usize, m: usize, trial: usize) -> Result<PhaseTrial> {
    let n = params.n;
    let key = phase_key(s, m, trial);
    let op_seed = derive_seed(seed, Purpose::PhaseCell, key);
    let op = gaussian_operator_guarded(n, m, op_seed, guard_mb)?;
    let mut rng = stream(seed, Purpose::PlantedMatrix, key);
    let g = normal_matrix(&mut rng, n, s);
    let h = normal_matrix(&mut rng, n, s);
    let x = Mat::wrap(g * h.transpose());
    let x = x.scale(1.0 / x.frobenius());
    let y = op.apply(&x)?;
    let mut row = PhaseTrial {
        s,
        m,
        trial,
        seed: op_seed,
        rel_error: f64::NAN,
        success: false,
        converged: false,
        solver_failure: true,
        note: String::new(),
    };
    match solve(&op, &y, params.p, 0.0, 0.0, &params.solve) {
        Ok(r) => {
            row.rel_error = (&r.minimizer - &x).frobenius();
            row.success = row.rel_error <= params.success_tol;
            row.converged = r.converged;
            row.solver_failure = !r.converged;
            row.note = r.status_note;
        }
        Err(e) if !e.is_validation() => row.note = e.to_string(),
        Err(e) => return Err(e),
    }
    Ok(row)
}

/// Interpolated first crossing of probability 1/2 along increasing m.
pub fn midpoint(cells: &[(usize, f64)]) -> Option<f64> {
    let mut sorted = cells.to_vec();
    sorted.sort_by_key(|c| c.0);
    let i = sorted.iter().position(|c| c.1 >= 0.5)?;
    if i == 0 {
        return Some(sorted[0].0 as f64);
    }
    let (m0, p0) = sorted[i - 1];
    let (m1, p1) = sorted[i];
    Some(m0 as f64 + (0.5 - p0) / (p1 - p0) * (m1 - m0) as f64)
}

pub fn run_phase_diagram(config: &ExperimentConfig) -> Result<PhaseRecord> {
    config.validate()?;
    let Experiment::PhaseDiagram(params) = &config.experiment else {
        return Err(Error::param("experiment", "expected a phase-diagram config"));
    };
    let started = Instant::now();
    let mut jobs = Vec::new();
    for &s in &params.s_values {
        for &m in &params.m_values {
            for t in 0..params.trials {
                jobs.push((s, m, t));
            }
        }
    }
    let rows = config
        .exec()
        .map_items(&jobs, |&(s, m, t)| phase_trial(params, config.seed, config.memory_guard_mb, s, m, t))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::new();
    for &s in &params.s_values {
        for &m in &params.m_values {
            let trials: Vec<&PhaseTrial> = rows.iter().filter(|r| r.s == s && r.m == m).collect();
            let successes = trials.iter().filter(|r| r.success).count();
            cells.push(PhaseCell {
                n: params.n,
                s,
                m,
                trials: trials.len(),
                successes,
                probability: successes as f64 / trials.len() as f64,
                solver_failures: trials.iter().filter(|r| r.solver_failure).count(),
                seed: config.seed,
            });
        }
    }
    let midpoints = params
        .s_values
        .iter()
        .map(|&s| Midpoint {
            s,
            m50: midpoint(&cells.iter().filter(|c| c.s == s).map(|c| (c.m, c.probability)).collect::<Vec<_>>()),
        })
        .collect();
    RunRecord::new(config, started, rows, PhaseSummary { cells, midpoints })
}

// ---------------------------------------------------------------- width sweep

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthSummary {
    pub fits: Vec<ExponentFit>,
    /// δ̂₂ₛ in the rows is a probe value; γ̂ is a lower estimate of γ.
    pub gamma_provenance: GammaProvenance,
}

pub type WidthRecord = RunRecord<WidthEstimate, WidthSummary>;

#[derive(Serialize)]
struct WidthCsvRow {
    #[serde(rename = "N")]
    n: usize,
    m: usize,
    p: f64,
    q: f64,
    r: f64,
    s: usize,
    trials: usize,
    estimate: f64,
    theory: f64,
    ratio: f64,
    seed: u64,
    solver_failures: usize,
}

pub fn run_width_sweep(config: &ExperimentConfig) -> Result<WidthRecord> {
    config.validate()?;
    let Experiment::WidthSweep(params) = &config.experiment else {
        return Err(Error::param("experiment", "expected a width-sweep config"));
    };
    let started = Instant::now();
    let template = WidthParams {
        seed: config.seed,
        ..params.template.clone()
    };
    let res = width_scaling_experiment(&params.grid, &template, config.exec())?;
    RunRecord::new(
        config,
        started,
        res.rows,
        WidthSummary {
            fits: res.fits,
            gamma_provenance: GammaProvenance::ProbeLowerEstimate,
        },
    )
}

// ---------------------------------------------------------------- stability

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityTrial {
    pub trial: usize,
    pub seed: u64,
    pub theta: f64,
    pub gamma_hat: Option<f64>,
    pub beta_hat: f64,
    pub hypothesis_holds: bool,
    pub err_sp: f64,
    pub err_s2: f64,
    pub bound_sp: Option<f64>,
    pub bound_s2: Option<f64>,
    pub satisfied_sp: Option<bool>,
    pub satisfied_s2: Option<bool>,
    pub converged: bool,
}

impl StabilityTrial {
    /// Both bounds exist and hold.
    pub fn covered(&self) -> bool {
        self.satisfied_sp == Some(true) && self.satisfied_s2 == Some(true)
    }

    /// The hypothesis held for γ̂ and a bound still failed.
    pub fn violated(&self) -> bool {
        self.hypothesis_holds && (self.satisfied_sp == Some(false) || self.satisfied_s2 == Some(false))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilitySummary {
    pub rows: usize,
    pub hypothesis_fraction: f64,
    /// Fraction of rows where both bounds exist and hold.
    pub coverage: f64,
    pub violations: usize,
    pub threshold_gamma: f64,
}

pub type StabilityRecord = RunRecord<StabilityTrial, StabilitySummary>;

fn stability_trial(params: &StabilityParams, seed: u64, guard_mb: usize, trial: usize) -> Result<Vec<StabilityTrial>> {
    let n = params.n;
    let op_seed = derive_seed(seed, Purpose::Operator, trial as u64);
    let op = gaussian_operator_guarded(n, params.m, op_seed, guard_mb)?;
    let rc = estimate_restricted_constants_with(&op, 2 * params.t, params.probe_trials, params.probe_refine, op_seed, Exec::Sequential)?;
    let beta = if 2 * params.s == 2 * params.t {
        rc.beta_hat
    } else {
        estimate_restricted_constants_with(&op, 2 * params.s, params.probe_trials, params.probe_refine, op_seed, Exec::Sequential)?.beta_hat
    };
    let mut rng = stream(seed, Purpose::PlantedMatrix, trial as u64);
    let g = normal_matrix(&mut rng, n, params.s);
    let h = normal_matrix(&mut rng, n, params.s);
    let low = Mat::wrap(g * h.transpose());
    let tail = Mat::wrap(normal_matrix(&mut rng, n, n));
    let x = &low.scale(1.0 / low.frobenius()) + &tail.scale(params.tail / tail.frobenius());
    let clean = op.apply(&x)?;
    let e = normal_vec(&mut rng, params.m);
    let e_norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();

    let mut out = Vec::with_capacity(params.thetas.len());
    for &theta in &params.thetas {
        // noise on the boundary of the admissible set ‖A X − y‖ ≤ β₂ₛ θ
        let y: Vec<f64> = clean.iter().zip(&e).map(|(c, ei)| c + ei * beta * theta / e_norm).collect();
        let sol = solve(&op, &y, params.p, theta, beta, &params.solve)?;
        let mut row = StabilityTrial {
            trial,
            seed: op_seed,
            theta,
            gamma_hat: rc.gamma_hat,
            beta_hat: beta,
            hypothesis_holds: false,
            err_sp: crate::schatten::schatten_norm(&(&x - &sol.minimizer), params.p)?,
            err_s2: (&x - &sol.minimizer).frobenius(),
            bound_sp: None,
            bound_s2: None,
            satisfied_sp: None,
            satisfied_s2: None,
            converged: sol.converged,
        };
        if let Some(gamma) = rc.gamma_hat {
            let rep = verify_bounds(&x, &sol.minimizer, params.s, params.t, params.p, theta, gamma, GammaProvenance::ProbeLowerEstimate)?;
            row.hypothesis_holds = rep.hypothesis_holds;
            row.bound_sp = rep.bound_sp;
            row.bound_s2 = rep.bound_s2;
            row.satisfied_sp = rep.satisfied_sp;
            row.satisfied_s2 = rep.satisfied_s2;
        }
        out.push(row);
    }
    Ok(out)
}

pub fn run_stability(config: &ExperimentConfig) -> Result<StabilityRecord> {
    config.validate()?;
    let Experiment::Stability(params) = &config.experiment else {
        return Err(Error::param("experiment", "expected a stability config"));
    };
    let started = Instant::now();
    let per_trial = config
        .exec()
        .map(params.trials, |t| stability_trial(params, config.seed, config.memory_guard_mb, t));
    let mut rows = Vec::new();
    for r in per_trial {
        rows.extend(r?);
    }
    let k = rows.len() as f64;
    let summary = StabilitySummary {
        rows: rows.len(),
        hypothesis_fraction: rows.iter().filter(|r| r.hypothesis_holds).count() as f64 / k,
        coverage: rows.iter().filter(|r| r.covered()).count() as f64 / k,
        violations: rows.iter().filter(|r| r.violated()).count(),
        threshold_gamma: crate::stability::exact_recovery_threshold(params.p, params.s, params.t)?,
    };
    RunRecord::new(config, started, rows, summary)
}

// ---------------------------------------------------------------- output

pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

/// Sidecar path for a CSV table: `table.csv` → `table.meta.json`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("meta.json")
}

/// Anything with a canonical CSV table.
pub trait Tabular: Serialize {
    fn table(&self) -> Result<Vec<u8>>;
}

impl Tabular for PhaseRecord {
    fn table(&self) -> Result<Vec<u8>> {
        csv_bytes(&self.summary.cells)
    }
}

impl Tabular for WidthRecord {
    fn table(&self) -> Result<Vec<u8>> {
        let rows: Vec<WidthCsvRow> = self
            .rows
            .iter()
            .map(|r| WidthCsvRow {
                n: r.n,
                m: r.m,
                p: r.p,
                q: r.q,
                r: r.r,
                s: r.s,
                trials: r.trials,
                estimate: r.estimate,
                theory: r.theory_value,
                ratio: r.ratio,
                seed: r.seed,
                solver_failures: r.solver_failures,
            })
            .collect();
        csv_bytes(&rows)
    }
}

impl Tabular for StabilityRecord {
    fn table(&self) -> Result<Vec<u8>> {
        csv_bytes(&self.rows)
    }
}

/// CSV: the table to `out` and the full record to the sidecar.
/// JSON: the full record to `out`.
pub fn write_record<T: Tabular>(record: &T, out: &Path, format: OutputFormat) -> Result<()> {
    let json = serde_json::to_vec_pretty(record)?;
    match format {
        OutputFormat::Csv => {
            atomic_write(out, &record.table()?)?;
            atomic_write(&sidecar_path(out), &json)
        }
        OutputFormat::Json => atomic_write(out, &json),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phase_config() -> ExperimentConfig {
        ExperimentConfig::new(3, Experiment::PhaseDiagram(PhaseDiagramParams::new(4, vec![1], vec![4, 12, 16], 2)))
    }

    #[test]
    fn config_round_trips_losslessly() {
        let mut c = phase_config();
        c.out = Some("x.csv".into());
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let w = ExperimentConfig::new(
            1,
            Experiment::WidthSweep(WidthSweepParams {
                grid: vec![(6, 12, 0.5, 1.0)],
                template: WidthParams::new(6, 12, 0.5, 1.0, 2, 1),
            }),
        );
        let back: ExperimentConfig = serde_json::from_slice(&serde_json::to_vec(&w).unwrap()).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.content_hash().unwrap(), w.content_hash().unwrap());
        assert_ne!(phase_config().content_hash().unwrap(), w.content_hash().unwrap());
    }

    #[test]
    fn validation_names_the_field() {
        let field = |c: ExperimentConfig| match c.validate() {
            Err(Error::Parameter { field, .. }) => field,
            other => panic!("{other:?}"),
        };
        let mut c = phase_config();
        c.threads = 0;
        assert_eq!(field(c), "threads");
        let mk = |f: &dyn Fn(&mut PhaseDiagramParams)| {
            let mut p = PhaseDiagramParams::new(4, vec![1], vec![8], 2);
            f(&mut p);
            ExperimentConfig::new(1, Experiment::PhaseDiagram(p))
        };
        assert_eq!(field(mk(&|p| p.m_values = vec![17])), "m_values");
        assert_eq!(field(mk(&|p| p.s_values = vec![0])), "s_values");
        assert_eq!(field(mk(&|p| p.trials = 0)), "trials");
        assert_eq!(field(mk(&|p| p.p = 1.5)), "p");
        assert_eq!(field(mk(&|p| p.solve.max_iters = 0)), "max_iters");
        let mut st = StabilityParams {
            n: 6,
            m: 30,
            s: 1,
            t: 1,
            p: 1.0,
            tail: 0.01,
            thetas: vec![0.0],
            trials: 1,
            probe_trials: 5,
            probe_refine: 0,
            solve: SolveOptions::default(),
        };
        st.t = 4;
        assert_eq!(field(ExperimentConfig::new(1, Experiment::Stability(st.clone()))), "t");
        st.t = 1;
        st.thetas = vec![-1.0];
        assert_eq!(field(ExperimentConfig::new(1, Experiment::Stability(st))), "thetas");
    }

    #[test]
    fn midpoint_interpolates_first_crossing() {
        assert_eq!(midpoint(&[(10, 0.0), (20, 0.25), (30, 0.75), (40, 1.0)]), Some(25.0));
        assert_eq!(midpoint(&[(30, 1.0), (10, 0.6)]), Some(10.0));
        assert_eq!(midpoint(&[(10, 0.1), (20, 0.2)]), None);
    }

    #[test]
    fn phase_diagram_full_measurements_always_succeed() {
        let rec = run_phase_diagram(&phase_config()).unwrap();
        assert_eq!(rec.rows.len(), 6);
        let full = rec.summary.cells.iter().find(|c| c.m == 16).unwrap();
        assert_eq!(full.probability, 1.0);
        // m = N below the 2N − 1 degrees of freedom of a rank-1 matrix
        let under = rec.summary.cells.iter().find(|c| c.m == 4).unwrap();
        assert_eq!(under.probability, 0.0);
        assert_eq!(rec.input_hash.len(), 64);
    }

    #[test]
    fn runs_are_deterministic_across_schedules() {
        let a = run_phase_diagram(&phase_config()).unwrap();
        let mut c = phase_config();
        c.threads = 4;
        let b = run_phase_diagram(&c).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.table().unwrap(), b.table().unwrap());
    }

    #[test]
    fn csv_and_sidecar_written_atomically() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("phase.csv");
        let rec = run_phase_diagram(&phase_config()).unwrap();
        write_record(&rec, &out, OutputFormat::Csv).unwrap();
        let text = std::fs::read_to_string(&out).unwrap();
        assert!(text.starts_with("n,s,m,trials,successes,probability,solver_failures,seed\n"));
        assert_eq!(text.lines().count(), 4);
        let meta: PhaseRecord = serde_json::from_slice(&std::fs::read(sidecar_path(&out)).unwrap()).unwrap();
        assert_eq!(meta.summary, rec.summary);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
    }

    #[test]
    fn width_csv_columns() {
        let mut t = WidthParams::new(4, 8, 1.0, 2.0, 1, 0);
        t.probe_trials = 0;
        let c = ExperimentConfig::new(
            5,
            Experiment::WidthSweep(WidthSweepParams {
                grid: vec![(4, 8, 1.0, 2.0)],
                template: t,
            }),
        );
        let rec = run_width_sweep(&c).unwrap();
        let text = String::from_utf8(rec.table().unwrap()).unwrap();
        assert!(text.starts_with("N,m,p,q,r,s,trials,estimate,theory,ratio,seed,solver_failures\n"));
        assert_eq!(rec.rows[0].seed, 5);
    }

    #[test]
    fn stability_rows_per_theta() {
        let p = StabilityParams {
            n: 6,
            m: 36,
            s: 1,
            t: 1,
            p: 1.0,
            tail: 0.01,
            thetas: vec![0.0, 0.01],
            trials: 2,
            probe_trials: 10,
            probe_refine: 0,
            solve: SolveOptions::default(),
        };
        let rec = run_stability(&ExperimentConfig::new(2, Experiment::Stability(p))).unwrap();
        assert_eq!(rec.rows.len(), 4);
        for r in &rec.rows {
            assert!(r.err_s2.is_finite());
            assert_eq!(r.bound_s2.is_some(), r.hypothesis_holds);
        }
        assert!((rec.summary.threshold_gamma - (4.0 * 2f64.sqrt() - 3.0)).abs() < 1e-12);
    }
}
