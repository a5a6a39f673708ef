use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::{compose, svd_dense, Mat};
use super::{extremal_kernel_element, kernel_basis, DEFAULT_REFINE_STEPS};
use crate::measurements::{
    delta_from_gamma, estimate_restricted_constants_with, gaussian_operator, DEFAULT_MEMORY_GUARD_MB,
};
use crate::rng::{derive_seed, orthogonal, stream, Purpose};
use crate::schatten::schatten_of;
use crate::solvers::{recover_nuclear, recover_schatten_p, SolveOptions};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct WidthParams {
    pub n: usize,
    pub m: usize,
    pub p: f64,
    pub q: f64,
    pub trials: usize,
    pub seed: u64,
    /// RIP constant C in m ≥ C·s·N; drives rank selection.
    pub c_delta: f64,
    /// The zero map is used when m ≤ zero_map_factor·N.
    pub zero_map_factor: f64,
    /// Monte Carlo trials for the δ̂₂ₛ probe behind the chain check.
    pub probe_trials: usize,
    /// Ascent steps for one extra kernel sample per trial; kernel elements
    /// of the ball are mapped to zero, so their S_q norm is the error.
    /// `None` skips kernel samples.
    pub kernel_refine: Option<usize>,
    pub solve: SolveOptions,
}

impl WidthParams {
    pub fn new(n: usize, m: usize, p: f64, q: f64, trials: usize, seed: u64) -> Self {
        WidthParams {
            n,
            m,
            p,
            q,
            trials,
            seed,
            c_delta: 6.0,
            zero_map_factor: 1.0,
            probe_trials: 200,
            kernel_refine: Some(DEFAULT_REFINE_STEPS),
            solve: SolveOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::param("n", "must be >= 1"));
        }
        if self.m == 0 || self.m > self.n * self.n {
            return Err(Error::param("m", format!("must lie in [1, N^2 = {}], got {}", self.n * self.n, self.m)));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::param("p", format!("must lie in (0, 1], got {}", self.p)));
        }
        if !(self.q > self.p && self.q <= 2.0) {
            return Err(Error::param("q", format!("must lie in (p, 2], got {}", self.q)));
        }
        if self.trials == 0 {
            return Err(Error::param("trials", "must be >= 1"));
        }
        if !(self.c_delta > 0.0 && self.c_delta.is_finite()) {
            return Err(Error::param("c_delta", "must be positive and finite"));
        }
        if !(self.zero_map_factor >= 0.0 && self.zero_map_factor.is_finite()) {
            return Err(Error::param("zero_map_factor", "must be >= 0 and finite"));
        }
        self.solve.validate()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct WidthEstimate {
    pub n: usize,
    pub m: usize,
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub s: usize,
    pub trials: usize,
    /// Empirical sup of ‖X − Δ_r(A·X)‖_{S_q}; a lower estimate of the true sup.
    pub estimate: f64,
    /// min{1, N/m}^{1/p − 1/q}.
    pub theory_value: f64,
    pub ratio: f64,
    pub seed: u64,
    pub zero_map: bool,
    pub delta_hat_2s: Option<f64>,
    /// Whether δ̂₂ₛ ≤ 1/3 enabled the per-sample chain inequality check.
    pub chain_checked: bool,
    pub chain_violations: usize,
    pub solver_failures: usize,
}

/// s with m/(2CN) < s ≤ m/(CN), clamped to [1, ⌊N/2⌋].
pub fn select_rank(n: usize, m: usize, c_delta: f64) -> usize {
    let s = (m as f64 / (c_delta * n as f64)).floor() as usize;
    s.clamp(1, (n / 2).max(1))
}

fn check_pq(p: f64, q: f64) -> Result<()> {
    if !(p > 0.0 && q > p && q.is_finite()) {
        return Err(Error::param("q", format!("need 0 < p < q < inf, got p = {p}, q = {q}")));
    }
    Ok(())
}

/// D_{p,q} = (q/p − 1)^{−1/q}: ρ_s(X)_{S_q} ≤ D_{p,q} s^{1/q − 1/p} ‖X‖_{S_{p,∞}} for s ≥ 1.
pub fn weak_tail_constant(p: f64, q: f64) -> Result<f64> {
    check_pq(p, q)?;
    Ok((q / p - 1.0).powf(-1.0 / q))
}

/// (q/(q − p))^{1/q}: ‖X‖_{S_q} ≤ this · ‖X‖_{S_{p,∞}}, the bound the zero
/// map attains on the weak ball.
pub fn weak_ball_constant(p: f64, q: f64) -> Result<f64> {
    check_pq(p, q)?;
    Ok((q / (q - p)).powf(1.0 / q))
}

/// Extremal spectral profiles: flat rank-k with unit S_p norm for every k,
/// plus the weak-ball boundary k^{−1/p} when p < 1.
fn profiles(n: usize, p: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = (1..=n)
        .map(|k| {
            let v = (k as f64).powf(-1.0 / p);
            (0..n).map(|i| if i < k { v } else { 0.0 }).collect()
        })
        .collect();
    if p < 1.0 {
        out.push((1..=n).map(|k| (k as f64).powf(-1.0 / p)).collect());
    }
    out
}

fn cell_seed(seed: u64, n: usize, m: usize) -> u64 {
    derive_seed(seed, Purpose::Operator, ((n as u64) << 32) | m as u64)
}

/// Empirical upper bound on the Gelfand width through recovery by Δ_r,
/// r = min{1, q}, over extremal samples of the unit ball: rotated spectral
/// profiles plus one refined kernel element per trial.
pub fn width_upper_bound(params: &WidthParams, exec: Exec) -> Result<WidthEstimate> {
    params.validate()?;
    let WidthParams { n, m, p, q, trials, seed, .. } = *params;
    let r = q.min(1.0);
    let s = select_rank(n, m, params.c_delta);
    let zero_map = (m as f64) <= params.zero_map_factor * n as f64;
    let op_seed = cell_seed(seed, n, m);
    let op = if zero_map { None } else { Some(gaussian_operator(n, m, op_seed)?) };

    let delta_hat = match &op {
        Some(op) if 2 * s <= n && params.probe_trials > 0 => {
            let rc = estimate_restricted_constants_with(op, 2 * s, params.probe_trials, 5, op_seed, exec)?;
            rc.gamma_hat.map(delta_from_gamma).transpose()?
        }
        _ => None,
    };
    let chain_checked = delta_hat.is_some_and(|d| d <= 1.0 / 3.0);
    let chain_factor = 2f64.powf(1.0 / r)
        * 2f64.sqrt()
        * (2.0 * params.c_delta * n as f64 / m as f64).powf(1.0 / r - 1.0 / q);

    let kb = match (&op, params.kernel_refine) {
        (Some(op), Some(_)) => Some(kernel_basis(op, DEFAULT_MEMORY_GUARD_MB)?),
        _ => None,
    };
    let profs = profiles(n, p);
    let per_trial = exec.map(trials, |t| -> Result<(f64, usize, usize)> {
        let mut rng = stream(seed, Purpose::WidthSample, ((m as u64) << 32) | t as u64);
        let u = orthogonal(&mut rng, n);
        let v = orthogonal(&mut rng, n);
        let mut samples: Vec<Mat> = profs.iter().map(|sigma| Mat::wrap(compose(&u, sigma, &v))).collect();
        if let (Some(kb), Some(steps)) = (&kb, params.kernel_refine) {
            samples.extend(extremal_kernel_element(kb, &mut rng, p, q, steps));
        }
        let (mut best, mut violations, mut failures) = (0.0f64, 0, 0);
        for x in &samples {
            let err = match &op {
                None => schatten_of(&svd_dense(x.inner())?.1, q),
                Some(op) => {
                    let y = op.apply(x)?;
                    let sol = if r >= 1.0 {
                        recover_nuclear(op, &y, 0.0, 0.0, &params.solve)?
                    } else {
                        recover_schatten_p(op, &y, r, 0.0, 0.0, &params.solve)?
                    };
                    if !sol.converged {
                        failures += 1;
                    }
                    let e = x - &sol.minimizer;
                    let es = svd_dense(e.inner())?.1;
                    let eq = schatten_of(&es, q);
                    if chain_checked && eq > chain_factor * schatten_of(&es, r) * (1.0 + 1e-9) + 1e-12 {
                        violations += 1;
                    }
                    eq
                }
            };
            best = best.max(err);
        }
        Ok((best, violations, failures))
    });
    let mut estimate = 0.0f64;
    let (mut violations, mut failures) = (0, 0);
    for row in per_trial {
        let (b, v, f) = row?;
        estimate = estimate.max(b);
        violations += v;
        failures += f;
    }
    let theory_value = (n as f64 / m as f64).min(1.0).powf(1.0 / p - 1.0 / q);
    Ok(WidthEstimate {
        n,
        m,
        p,
        q,
        r,
        s,
        trials,
        estimate,
        theory_value,
        ratio: estimate / theory_value,
        seed,
        zero_map,
        delta_hat_2s: delta_hat,
        chain_checked,
        chain_violations: violations,
        solver_failures: failures,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ExponentFit {
    pub n: usize,
    pub p: f64,
    pub q: f64,
    /// Least-squares slope of log(estimate) against log(m) over N < m < N².
    pub exponent: Option<f64>,
    pub theory_exponent: f64,
    pub points: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct WidthScaling {
    pub rows: Vec<WidthEstimate>,
    pub fits: Vec<ExponentFit>,
}

/// Least-squares slope of log y against log x; `None` for fewer than two
/// distinct x or any non-positive value.
pub fn fit_exponent(points: &[(f64, f64)]) -> Option<f64> {
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return None;
    }
    let k = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if points.len() < 2 || sxx <= 1e-12 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

/// Run `width_upper_bound` over a grid of (N, m, p, q) and fit the decay
/// exponent in m for every (N, p, q) group.
pub fn width_scaling_experiment(
    grid: &[(usize, usize, f64, f64)],
    template: &WidthParams,
    exec: Exec,
) -> Result<WidthScaling> {
    if grid.is_empty() {
        return Err(Error::param("grid", "must be non-empty"));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &(n, m, p, q) in grid {
        let params = WidthParams {
            n,
            m,
            p,
            q,
            ..template.clone()
        };
        rows.push(width_upper_bound(&params, exec)?);
    }
    let mut groups: Vec<(usize, f64, f64)> = Vec::new();
    for r in &rows {
        if !groups.iter().any(|g| *g == (r.n, r.p, r.q)) {
            groups.push((r.n, r.p, r.q));
        }
    }
    let fits = groups
        .into_iter()
        .map(|(n, p, q)| {
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.n == n && r.p == p && r.q == q && r.m > n && r.m < n * n)
                .map(|r| (r.m as f64, r.estimate))
                .collect();
            ExponentFit {
                n,
                p,
                q,
                exponent: fit_exponent(&pts),
                theory_exponent: -(1.0 / p - 1.0 / q),
                points: pts.len(),
            }
        })
        .collect();
    Ok(WidthScaling { rows, fits })
}
