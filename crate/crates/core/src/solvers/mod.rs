//! Reconstruction maps: minimize ‖Z‖_{S_p} subject to A(Z) = y, or to the
//! relaxed constraint ‖A(Z) − y‖ ≤ β₂ₛ·θ.
//!
//! * p = 1: alternating splitting with singular-value soft-thresholding and
//!   exact constraint projections (convex, global).
//! * 0 < p < 1: iteratively reweighted least squares on the ε-smoothed
//!   objective Σ(σᵢ² + ε²)^{p/2}, warm-started from the p = 1 solution
//!   (local).
//! * [`oracle_recover_small`]: kernel-parametrized grid search for N ≤ 3,
//!   used only to cross-check the two solvers.

mod irls;
mod nuclear;
mod oracle;
pub(crate) mod projection;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::measurements::MeasurementOperator;

pub use irls::recover_schatten_p;
pub use nuclear::{recover_nuclear, svt};
pub use oracle::oracle_recover_small;

/// Default ε schedule: 0.5ᵏ down to 1e-9.
pub fn default_epsilon_schedule() -> Vec<f64> {
    let mut out = Vec::new();
    let mut e = 1.0;
    while e > 1e-9 {
        out.push(e);
        e *= 0.5;
    }
    out.push(1e-9);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub max_iters: usize,
    /// Relative feasibility tolerance: ‖A(X) − y‖ ≤ tol_residual·‖y‖.
    pub tol_residual: f64,
    /// Relative iterate-change / splitting-gap tolerance.
    pub tol_change: f64,
    /// Splitting parameter; the shrinkage threshold is 1/penalty on the
    /// problem normalized to ‖y‖ = 1.
    pub penalty: f64,
    /// Strictly decreasing smoothing levels for p < 1 (normalized units).
    pub epsilon_schedule: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warm_start: Option<Mat>,
    /// Record (iter, objective, residual) per iteration.
    #[serde(default)]
    pub trace: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iters: 5000,
            tol_residual: 1e-8,
            tol_change: 1e-9,
            penalty: 1.0,
            epsilon_schedule: default_epsilon_schedule(),
            warm_start: None,
            trace: false,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::param("max_iters", "must be >= 1"));
        }
        for (field, v) in [
            ("tol_residual", self.tol_residual),
            ("tol_change", self.tol_change),
            ("penalty", self.penalty),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(field, format!("must be positive and finite, got {v}")));
            }
        }
        let sched = &self.epsilon_schedule;
        if sched.is_empty() {
            return Err(Error::param("epsilon_schedule", "must be non-empty"));
        }
        if sched.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::param("epsilon_schedule", "must be strictly decreasing"));
        }
        if *sched.last().expect("non-empty") < 1e-10 || !sched[0].is_finite() {
            return Err(Error::param("epsilon_schedule", "levels must lie in [1e-10, inf)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveResult {
    pub minimizer: Mat,
    /// ‖X*‖_{S_p}.
    pub objective: f64,
    /// ‖A(X*) − y‖.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub status_note: String,
    pub p: f64,
    /// Feasibility budget β₂ₛ·θ that was enforced (0 in exact mode).
    pub budget: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceRow>>,
}

impl SolveResult {
    pub fn trace_csv(&self) -> Option<String> {
        let rows = self.trace.as_ref()?;
        let mut out = String::from("iter,objective,residual\n");
        for r in rows {
            out.push_str(&format!("{},{:e},{:e}\n", r.iter, r.objective, r.residual));
        }
        Some(out)
    }
}

pub(crate) fn check_inputs(op: &MeasurementOperator, y: &[f64], theta: f64, beta_2s: f64) -> Result<f64> {
    if y.len() != op.m() {
        return Err(Error::Dimension {
            expected: op.m(),
            got: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("measurements have non-finite entries".into()));
    }
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(Error::param("theta", format!("must be >= 0 and finite, got {theta}")));
    }
    if theta > 0.0 && !(beta_2s > 0.0 && beta_2s.is_finite()) {
        return Err(Error::param("beta_2s", format!("must be positive when theta > 0, got {beta_2s}")));
    }
    Ok(if theta > 0.0 { beta_2s * theta } else { 0.0 })
}

pub(crate) fn vec_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Zero solves the problem whenever it is feasible.
pub(crate) fn zero_result(n: usize, y_norm: f64, p: f64, budget: f64, note: &str) -> SolveResult {
    SolveResult {
        minimizer: Mat::zeros(n),
        objective: 0.0,
        residual: y_norm,
        iterations: 0,
        converged: true,
        status_note: note.to_string(),
        p,
        budget,
        trace: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_options_are_valid() {
        let o = SolveOptions::default();
        o.validate().unwrap();
        assert_eq!(*o.epsilon_schedule.last().unwrap(), 1e-9);
        assert_eq!(o.epsilon_schedule[0], 1.0);
    }

    #[test]
    fn option_validation() {
        let mut o = SolveOptions::default();
        o.tol_change = 0.0;
        assert!(o.validate().is_err());
        let mut o = SolveOptions::default();
        o.epsilon_schedule = vec![1.0, 1.0];
        assert!(o.validate().is_err());
        let mut o = SolveOptions::default();
        o.epsilon_schedule = vec![1.0, 1e-12];
        assert!(o.validate().is_err());
        let mut o = SolveOptions::default();
        o.max_iters = 0;
        assert!(o.validate().is_err());
    }
}
