use nalgebra::DMatrix;

use super::projection::Projector;
use super::{check_inputs, vec_norm, zero_result, SolveOptions, SolveResult, TraceRow};
use crate::error::Result;
use crate::linalg::{compose, svd_dense, Mat};
use crate::measurements::MeasurementOperator;

/// Singular-value soft-thresholding: the proximal map of τ‖·‖_{S_1}.
pub fn svt(x: &Mat, tau: f64) -> Result<Mat> {
    Ok(Mat::wrap(svt_dense(x.inner(), tau)?.0))
}

pub(crate) fn svt_dense(x: &DMatrix<f64>, tau: f64) -> Result<(DMatrix<f64>, f64)> {
    let (u, s, v) = svd_dense(x)?;
    let shrunk: Vec<f64> = s.iter().map(|v| (v - tau).max(0.0)).collect();
    let nuc = shrunk.iter().sum();
    Ok((compose(&u, &shrunk, &v), nuc))
}

fn nuclear(x: &DMatrix<f64>) -> Result<f64> {
    Ok(svd_dense(x)?.1.iter().sum())
}

/// Minimize ‖Z‖_{S_1} subject to A(Z) = y (`theta == 0`) or
/// ‖A(Z) − y‖ ≤ β₂ₛ·θ.
///
/// Douglas–Rachford splitting between the nuclear norm and the indicator of
/// the feasible set. The problem is rescaled to ‖y‖ = 1, so the output is
/// positively homogeneous in y. The returned point is the projected iterate
/// and is feasible up to round-off.
pub fn recover_nuclear(
    op: &MeasurementOperator,
    y: &[f64],
    theta: f64,
    beta_2s: f64,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    opts.validate()?;
    let budget = check_inputs(op, y, theta, beta_2s)?;
    let n = op.n();
    let c = vec_norm(y);
    if c == 0.0 {
        return Ok(zero_result(n, 0.0, 1.0, budget, "zero measurements"));
    }
    if budget > 0.0 && c <= budget {
        return Ok(zero_result(n, c, 1.0, budget, "zero is feasible"));
    }
    let yn: Vec<f64> = y.iter().map(|v| v / c).collect();
    let radius = budget / c;
    let pr = Projector::new(op);
    let tau = 1.0 / opts.penalty;

    let start = match &opts.warm_start {
        Some(w) => {
            if w.n() != n {
                return Err(crate::Error::Dimension { expected: n, got: w.n() });
            }
            w.inner() / c
        }
        None => DMatrix::zeros(n, n),
    };
    let mut x = pr.project(&start, &yn, radius);
    let mut u = DMatrix::zeros(n, n);
    let mut trace = opts.trace.then(Vec::new);
    let mut converged = false;
    let mut iters = 0;
    let feas_tol = opts.tol_residual.max(1e-13);

    for k in 1..=opts.max_iters {
        iters = k;
        let (z, nuc_z) = svt_dense(&(&x - &u), tau)?;
        let x_new = pr.project(&(&z + &u), &yn, radius);
        let gap = &z - &x_new;
        u += &gap;
        let scale = x_new.norm().max(1.0);
        let primal = gap.norm() / scale;
        let change = (&x_new - &x).norm() / scale;
        x = x_new;
        if let Some(t) = trace.as_mut() {
            t.push(TraceRow {
                iter: k,
                objective: nuc_z * c,
                residual: pr.residual_norm(&x, &yn) * c,
            });
        }
        if primal <= opts.tol_change && change <= opts.tol_change {
            converged = true;
            break;
        }
    }

    let resid = pr.residual_norm(&x, &yn);
    let feasible = resid <= radius + feas_tol;
    let status_note = match (converged, feasible) {
        (true, true) => "converged".to_string(),
        (false, true) => format!("iteration budget exhausted after {iters} iterations"),
        (_, false) => format!("constraint set empty: least-squares residual {:.3e}", resid * c),
    };
    let minimizer = Mat::wrap(x * c);
    Ok(SolveResult {
        objective: nuclear(minimizer.inner())?,
        residual: resid * c,
        minimizer,
        iterations: iters,
        converged: converged && feasible,
        status_note,
        p: 1.0,
        budget,
        trace,
    })
}
