use nalgebra::{DMatrix, DVector};

use super::nuclear::recover_nuclear;
use super::projection::Projector;
use super::{check_inputs, vec_norm, zero_result, SolveOptions, SolveResult, TraceRow};
use crate::error::{Error, Result};
use crate::linalg::{svd_dense, sym_eigen_desc, Mat};
use crate::measurements::MeasurementOperator;
use crate::schatten::{power_sum, schatten_of};

/// (X Xᵀ + ε² I)^{1 − p/2}, the inverse IRLS weight.
fn inverse_weight(x: &DMatrix<f64>, eps: f64, p: f64) -> DMatrix<f64> {
    let g = x * x.transpose();
    let (vals, vecs) = sym_eigen_desc(&g);
    let expo = 1.0 - p / 2.0;
    let d: Vec<f64> = vals.iter().map(|v| (v.max(0.0) + eps * eps).powf(expo)).collect();
    let scaled = DMatrix::from_fn(vecs.nrows(), vecs.ncols(), |i, j| vecs[(i, j)] * d[j]);
    scaled * vecs.transpose()
}

/// Minimizer of tr(Zᵀ W Z) over the constraint set: Z = W⁻¹ A*(λ) with
/// (M + μI) λ = y, M = A W⁻¹ A*, and μ = 0 in exact mode or chosen so the
/// residual μ‖λ‖ equals the radius.
fn weighted_step(op: &MeasurementOperator, winv: &DMatrix<f64>, y: &[f64], radius: f64) -> DMatrix<f64> {
    let m = op.weighted_gram(winv);
    let (e, q) = sym_eigen_desc(&m);
    let top = e.first().copied().unwrap_or(0.0).max(0.0);
    let tol = top * 1e-13 * (y.len() as f64);
    let yt: Vec<f64> = q.tr_mul(&DVector::from_column_slice(y)).iter().copied().collect();
    let active: Vec<bool> = e.iter().map(|&v| v > tol && v > 0.0).collect();
    let mu = if radius > 0.0 {
        let resid = |mu: f64| -> f64 {
            yt.iter()
                .zip(&e)
                .zip(&active)
                .map(|((yi, ei), a)| {
                    let r = if *a { mu * yi / (ei + mu) } else { *yi };
                    r * r
                })
                .sum::<f64>()
                .sqrt()
        };
        if resid(0.0) >= radius {
            0.0
        } else {
            let (mut lo, mut hi) = (0.0, top.max(1e-300));
            let mut guard = 0;
            while resid(hi) < radius && guard < 2000 {
                lo = hi;
                hi *= 2.0;
                guard += 1;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if resid(mid) < radius {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        }
    } else {
        0.0
    };
    let coeffs: Vec<f64> = yt
        .iter()
        .zip(&e)
        .zip(&active)
        .map(|((yi, ei), a)| if *a { yi / (ei + mu) } else { 0.0 })
        .collect();
    let lam: Vec<f64> = (&q * DVector::from_vec(coeffs)).iter().copied().collect();
    winv * op.adjoint_raw(&lam)
}

fn quasi_power(x: &DMatrix<f64>, p: f64) -> Result<f64> {
    Ok(power_sum(&svd_dense(x)?.1, p))
}

/// Minimize ‖Z‖_{S_p}, 0 < p < 1, subject to A(Z) = y (`theta == 0`) or
/// ‖A(Z) − y‖ ≤ β₂ₛ·θ.
///
/// The problem is non-convex and the result is a local minimizer: IRLS on
/// Σ(σᵢ² + ε²)^{p/2} with ε walked down `opts.epsilon_schedule`, started from
/// `opts.warm_start` or from the nuclear-norm solution. The best feasible
/// iterate seen (by the unsmoothed objective) is returned, so the result is
/// never worse than the starting point.
pub fn recover_schatten_p(
    op: &MeasurementOperator,
    y: &[f64],
    p: f64,
    theta: f64,
    beta_2s: f64,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::param("p", format!("must lie in (0, 1), got {p}")));
    }
    opts.validate()?;
    let budget = check_inputs(op, y, theta, beta_2s)?;
    let n = op.n();
    let c = vec_norm(y);
    if c == 0.0 {
        return Ok(zero_result(n, 0.0, p, budget, "zero measurements"));
    }
    if budget > 0.0 && c <= budget {
        return Ok(zero_result(n, c, p, budget, "zero is feasible"));
    }
    let yn: Vec<f64> = y.iter().map(|v| v / c).collect();
    let radius = budget / c;
    let pr = Projector::new(op);
    let feas_tol = opts.tol_residual.max(1e-13);

    let start = match &opts.warm_start {
        Some(w) => {
            if w.n() != n {
                return Err(Error::Dimension { expected: n, got: w.n() });
            }
            pr.project(&(w.inner() / c), &yn, radius)
        }
        None => {
            let warm = recover_nuclear(op, y, theta, beta_2s, &SolveOptions {
                warm_start: None,
                trace: false,
                ..opts.clone()
            })?;
            warm.minimizer.into_inner() / c
        }
    };
    let start_resid = pr.residual_norm(&start, &yn);
    if start_resid > radius + feas_tol {
        return Err(Error::Infeasible { residual: start_resid * c });
    }

    let mut x = start.clone();
    let mut best = (quasi_power(&x, p)?, x.clone());
    let mut trace = opts.trace.then(Vec::new);
    let sched = &opts.epsilon_schedule;
    // skip smoothing levels far above the scale of the start point
    let top = svd_dense(&x)?.1.first().copied().unwrap_or(0.0);
    let mut level = sched.iter().position(|&e| e <= top).unwrap_or(sched.len() - 1);
    let mut at_level = 0usize;
    let mut converged = false;
    let mut iters = 0;

    for k in 1..=opts.max_iters {
        iters = k;
        let eps = sched[level];
        let winv = inverse_weight(&x, eps, p);
        let x_new = weighted_step(op, &winv, &yn, radius);
        if x_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite IRLS iterate".into()));
        }
        let change = (&x_new - &x).norm() / x.norm().max(1.0);
        x = x_new;
        at_level += 1;
        let obj = quasi_power(&x, p)?;
        let resid = pr.residual_norm(&x, &yn);
        if resid <= radius + feas_tol && obj < best.0 {
            best = (obj, x.clone());
        }
        if let Some(t) = trace.as_mut() {
            t.push(TraceRow {
                iter: k,
                objective: obj.powf(1.0 / p) * c,
                residual: resid * c,
            });
        }
        if level + 1 == sched.len() {
            if change <= opts.tol_change {
                converged = true;
                break;
            }
        } else if change <= opts.tol_change.max(1e-2 * eps) || at_level >= 50 {
            level += 1;
            at_level = 0;
        }
    }

    let minimizer = Mat::wrap(&best.1 * c);
    let sigma = svd_dense(minimizer.inner())?.1;
    let status_note = if converged {
        "local minimizer (smoothing schedule completed)".to_string()
    } else {
        format!("local minimizer; iteration budget exhausted after {iters} iterations")
    };
    Ok(SolveResult {
        objective: schatten_of(&sigma, p),
        residual: pr.residual_norm(&best.1, &yn) * c,
        minimizer,
        iterations: iters,
        converged,
        status_note,
        p,
        budget,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurements::gaussian_operator;
    use crate::rng::{normal_matrix, normal_vec, stream, Purpose};
    use crate::schatten::schatten_norm;

    fn planted(n: usize, r: usize, seed: u64) -> Mat {
        let mut rng = stream(seed, Purpose::PlantedMatrix, 0);
        let a = normal_matrix(&mut rng, n, r);
        let b = normal_matrix(&mut rng, n, r);
        Mat::wrap(a * b.transpose())
    }

    #[test]
    fn inverse_weight_matches_power_of_gram() {
        let x = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5, 0.0]));
        let w = inverse_weight(&x, 0.1, 0.5);
        for (i, s) in [2.0f64, 0.5, 0.0].iter().enumerate() {
            assert!((w[(i, i)] - (s * s + 0.01).powf(0.75)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_p_outside_open_interval() {
        let op = gaussian_operator(3, 4, 1).unwrap();
        let o = SolveOptions::default();
        for p in [0.0, 1.0, 1.5, -0.2, f64::NAN] {
            assert!(recover_schatten_p(&op, &[1.0; 4], p, 0.0, 0.0, &o).is_err());
        }
    }

    #[test]
    fn zero_measurements_give_zero() {
        let op = gaussian_operator(5, 10, 1).unwrap();
        let r = recover_schatten_p(&op, &[0.0; 10], 0.5, 0.0, 0.0, &SolveOptions::default()).unwrap();
        assert_eq!(r.minimizer, Mat::zeros(5));
    }

    #[test]
    fn recovers_rank_two_below_nuclear_threshold_region() {
        let op = gaussian_operator(8, 48, 3).unwrap();
        let x0 = planted(8, 2, 6);
        let y = op.apply(&x0).unwrap();
        let r = recover_schatten_p(&op, &y, 0.5, 0.0, 0.0, &SolveOptions::default()).unwrap();
        let err = (&r.minimizer - &x0).frobenius() / x0.frobenius();
        assert!(err < 1e-4, "relative error {err}, {}", r.status_note);
        assert!(r.residual <= 1e-8 * vec_norm(&y));
    }

    #[test]
    fn never_worse_than_start_and_feasible() {
        let op = gaussian_operator(5, 11, 4).unwrap();
        let mut rng = stream(3, Purpose::Test, 50);
        let y = normal_vec(&mut rng, 11);
        let o = SolveOptions::default();
        let nuc = recover_nuclear(&op, &y, 0.0, 0.0, &o).unwrap();
        let r = recover_schatten_p(&op, &y, 0.5, 0.0, 0.0, &o).unwrap();
        let start = schatten_norm(&nuc.minimizer, 0.5).unwrap();
        assert!(r.objective <= start * (1.0 + 1e-12));
        assert!(r.residual <= 1e-8 * vec_norm(&y));
    }

    #[test]
    fn scaling_equivariance() {
        let op = gaussian_operator(5, 12, 9).unwrap();
        let x0 = planted(5, 1, 3);
        let y = op.apply(&x0).unwrap();
        let o = SolveOptions::default();
        let a = recover_schatten_p(&op, &y, 0.5, 0.0, 0.0, &o).unwrap();
        let y2: Vec<f64> = y.iter().map(|v| 2.5 * v).collect();
        let b = recover_schatten_p(&op, &y2, 0.5, 0.0, 0.0, &o).unwrap();
        assert!((&b.minimizer - &a.minimizer.scale(2.5)).max_abs() < 1e-7 * b.minimizer.max_abs());
    }

    #[test]
    fn relaxed_mode_respects_budget() {
        let op = gaussian_operator(6, 24, 5).unwrap();
        let x0 = planted(6, 1, 8);
        let mut y = op.apply(&x0).unwrap();
        let mut rng = stream(4, Purpose::Noise, 0);
        for (v, e) in y.iter_mut().zip(normal_vec(&mut rng, 24)) {
            *v += 0.01 * e;
        }
        let r = recover_schatten_p(&op, &y, 0.5, 0.05, 1.2, &SolveOptions::default()).unwrap();
        assert!(r.residual <= 0.06 * (1.0 + 1e-8));
        let err = (&r.minimizer - &x0).frobenius() / x0.frobenius();
        assert!(err < 0.1, "relative error {err}");
    }
}
