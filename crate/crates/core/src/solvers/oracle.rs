use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{null_space, svd_dense, Mat};
use crate::measurements::{MeasurementOperator, DEFAULT_MEMORY_GUARD_MB};
use crate::schatten::{check_p, power_sum};

const MAX_GRID_POINTS: usize = 20_000_000;
const POLISH_STARTS: usize = 4;

fn unvec(n: usize, v: &DVector<f64>) -> DMatrix<f64> {
    // row-major vectorization
    DMatrix::from_fn(n, n, |i, j| v[i * n + j])
}

/// Brute-force global minimizer of ‖Z‖_{S_p} over A(Z) = y for N ≤ 3.
///
/// Writes the feasible set as Z₀ + K·c (Z₀ the minimum-Frobenius solution,
/// K an orthonormal kernel basis). Every minimizer has ‖c‖ ≤ ‖Z₀‖_{S_p}, so a
/// `grid_density`^dim grid over that box is evaluated exhaustively and the
/// best cells are polished with restarted Nelder–Mead.
pub fn oracle_recover_small(op: &MeasurementOperator, y: &[f64], p: f64, grid_density: usize) -> Result<Mat> {
    check_p(p).map_err(|_| Error::param("p", format!("must be positive, got {p}")))?;
    if p > 1.0 {
        return Err(Error::param("p", format!("must be <= 1, got {p}")));
    }
    let n = op.n();
    if n > 3 {
        return Err(Error::param("n", format!("oracle supports N <= 3, got {n}")));
    }
    if grid_density < 2 {
        return Err(Error::param("grid_density", "must be >= 2"));
    }
    if y.len() != op.m() {
        return Err(Error::Dimension {
            expected: op.m(),
            got: y.len(),
        });
    }
    let a = op.dense_matrix(DEFAULT_MEMORY_GUARD_MB)?;
    let (u, s, v) = svd_dense_rect(&a)?;
    let top = s.first().copied().unwrap_or(0.0);
    let tol = top * 1e-10 * (a.nrows().max(a.ncols()) as f64);
    let yv = DVector::from_column_slice(y);
    let mut z0 = DVector::zeros(n * n);
    for (k, &sk) in s.iter().enumerate() {
        if sk > tol {
            let coef = u.column(k).dot(&yv) / sk;
            z0 += v.column(k) * coef;
        }
    }
    let resid = (&a * &z0 - &yv).norm();
    if resid > 1e-8 * yv.norm().max(1.0) {
        return Err(Error::Infeasible { residual: resid });
    }
    let kernel = null_space(&a)?;
    let dim = kernel.ncols();
    let sigma_at = |c: &[f64]| -> Option<Vec<f64>> {
        let mut z = z0.clone();
        for (j, cj) in c.iter().enumerate() {
            z += kernel.column(j) * *cj;
        }
        svd_dense(&unvec(n, &z)).ok().map(|r| r.1)
    };
    let objective = |c: &[f64]| -> f64 { sigma_at(c).map_or(f64::INFINITY, |sig| power_sum(&sig, p)) };
    if dim == 0 {
        return Ok(Mat::wrap(unvec(n, &z0)));
    }
    let points = grid_density
        .checked_pow(dim as u32)
        .filter(|&g| g <= MAX_GRID_POINTS)
        .ok_or_else(|| {
            Error::param(
                "grid_density",
                format!("{grid_density}^{dim} grid points exceed the limit of {MAX_GRID_POINTS}"),
            )
        })?;
    let radius = objective(&vec![0.0; dim]).powf(1.0 / p);
    if radius == 0.0 {
        return Ok(Mat::zeros(n));
    }
    let step = 2.0 * radius / (grid_density - 1) as f64;

    let mut best: Vec<(f64, Vec<f64>)> = Vec::with_capacity(POLISH_STARTS + 1);
    best.push((objective(&vec![0.0; dim]), vec![0.0; dim]));
    let mut c = vec![0.0; dim];
    for idx in 0..points {
        let mut rem = idx;
        for cj in c.iter_mut() {
            *cj = -radius + step * (rem % grid_density) as f64;
            rem /= grid_density;
        }
        let f = objective(&c);
        if best.len() < POLISH_STARTS || f < best[best.len() - 1].0 {
            best.push((f, c.clone()));
            best.sort_by(|x, y| x.0.total_cmp(&y.0));
            best.truncate(POLISH_STARTS);
        }
    }

    // continuation on the smoothed objective Σ(σ² + ε²)^{p/2} handles the
    // cusps of the quasi-norm at rank-deficient points
    let mut winner = best[0].clone();
    for (_, start) in &best {
        let mut c = start.clone();
        let mut size = step;
        let mut eps = radius * 0.1;
        while eps > radius * 1e-10 {
            let smoothed = |c: &[f64]| -> f64 {
                sigma_at(c).map_or(f64::INFINITY, |sig| {
                    sig.iter().map(|s| (s * s + eps * eps).powf(p / 2.0)).sum()
                })
            };
            c = nelder_mead_restarted(&smoothed, &c, size).1;
            size = (size * 0.3).max(eps);
            eps *= 0.1;
        }
        let polished = nelder_mead_restarted(&objective, &c, size);
        if polished.0 < winner.0 {
            winner = polished;
        }
    }
    let mut z = z0;
    for (j, cj) in winner.1.iter().enumerate() {
        z += kernel.column(j) * *cj;
    }
    Ok(Mat::wrap(unvec(n, &z)))
}

fn svd_dense_rect(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let svd = nalgebra::SVD::try_new(a.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let u = svd.u.expect("requested");
    let vt = svd.v_t.expect("requested");
    Ok((u, svd.singular_values.iter().copied().collect(), vt.transpose()))
}

fn nelder_mead_restarted<F: Fn(&[f64]) -> f64>(f: &F, start: &[f64], size: f64) -> (f64, Vec<f64>) {
    let mut x = start.to_vec();
    let mut fx = f(&x);
    let mut size = size;
    let floor = size * 1e-9;
    for _ in 0..30 {
        let (fy, y) = nelder_mead(f, &x, size, 600 * (x.len() + 1));
        let gain = fx - fy;
        if fy < fx {
            x = y;
            fx = fy;
        }
        if gain <= 1e-13 * fx.abs().max(1e-300) {
            size *= 0.1;
            if size < floor {
                break;
            }
        }
    }
    (fx, x)
}

fn nelder_mead<F: Fn(&[f64]) -> f64>(f: &F, start: &[f64], size: f64, max_evals: usize) -> (f64, Vec<f64>) {
    let d = start.len();
    let mut simplex: Vec<(f64, Vec<f64>)> = Vec::with_capacity(d + 1);
    simplex.push((f(start), start.to_vec()));
    for j in 0..d {
        let mut v = start.to_vec();
        v[j] += size;
        simplex.push((f(&v), v));
    }
    let mut evals = d + 1;
    let lerp = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect() };
    while evals < max_evals {
        simplex.sort_by(|a, b| a.0.total_cmp(&b.0));
        let spread = simplex[d].0 - simplex[0].0;
        let width = simplex[1..]
            .iter()
            .map(|(_, v)| v.iter().zip(&simplex[0].1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread <= 1e-14 * simplex[0].0.abs().max(1e-300) || width <= 1e-12 * size {
            break;
        }
        let mut centroid = vec![0.0; d];
        for (_, v) in &simplex[..d] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / d as f64;
            }
        }
        let worst = simplex[d].clone();
        let refl = lerp(&centroid, &worst.1, -1.0);
        let fr = f(&refl);
        evals += 1;
        if fr < simplex[0].0 {
            let exp = lerp(&centroid, &worst.1, -2.0);
            let fe = f(&exp);
            evals += 1;
            simplex[d] = if fe < fr { (fe, exp) } else { (fr, refl) };
        } else if fr < simplex[d - 1].0 {
            simplex[d] = (fr, refl);
        } else {
            let (fc, con) = if fr < worst.0 {
                let c = lerp(&centroid, &worst.1, -0.5);
                (f(&c), c)
            } else {
                let c = lerp(&centroid, &worst.1, 0.5);
                (f(&c), c)
            };
            evals += 1;
            if fc < worst.0.min(fr) {
                simplex[d] = (fc, con);
            } else {
                let best = simplex[0].1.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let v = lerp(&best, &entry.1, 0.5);
                    *entry = (f(&v), v);
                }
                evals += d;
            }
        }
    }
    simplex.sort_by(|a, b| a.0.total_cmp(&b.0));
    simplex.swap_remove(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurements::{entry_mask_operator, gaussian_operator};
    use crate::schatten::schatten_norm;

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2);
        let (v, x) = nelder_mead_restarted(&f, &[0.0, 0.0], 0.5);
        assert!(v < 1e-14);
        assert!((x[0] - 1.0).abs() < 1e-7 && (x[1] + 2.0).abs() < 1e-7);
    }

    #[test]
    fn complete_measurements_return_the_unique_solution() {
        let op = entry_mask_operator(2, &[(0, 0), (0, 1), (1, 0), (1, 1)], 1.0).unwrap();
        let z = oracle_recover_small(&op, &[1.0, 2.0, 3.0, 4.0], 0.5, 5).unwrap();
        assert!((&z - &Mat::from_row_major(2, &[1.0, 2.0, 3.0, 4.0]).unwrap()).max_abs() < 1e-10);
    }

    #[test]
    fn diagonal_mask_nuclear_minimizer() {
        // observing only the diagonal: min ‖Z‖_{S_1} is the diagonal itself
        let op = entry_mask_operator(2, &[(0, 0), (1, 1)], 1.0).unwrap();
        let z = oracle_recover_small(&op, &[2.0, -1.0], 1.0, 21).unwrap();
        assert!((schatten_norm(&z, 1.0).unwrap() - 3.0).abs() < 1e-6);
    }

    #[test]
    fn feasible_and_no_worse_than_min_norm_point() {
        let op = gaussian_operator(3, 5, 7).unwrap();
        let x0 = Mat::from_row_major(3, &[1.0, 2.0, 0.0, 2.0, 4.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let y = op.apply(&x0).unwrap();
        let z = oracle_recover_small(&op, &y, 0.5, 7).unwrap();
        let r = op.apply(&z).unwrap();
        let res: f64 = r.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(res < 1e-9);
        assert!(schatten_norm(&z, 0.5).unwrap() <= schatten_norm(&x0, 0.5).unwrap() * (1.0 + 1e-6));
    }

    #[test]
    fn rejects_large_or_bad_inputs() {
        let op = gaussian_operator(4, 5, 1).unwrap();
        assert!(oracle_recover_small(&op, &[0.0; 5], 0.5, 5).is_err());
        let op = gaussian_operator(3, 1, 1).unwrap();
        assert!(oracle_recover_small(&op, &[1.0], 0.5, 100).is_err());
        assert!(oracle_recover_small(&op, &[1.0], 1.5, 5).is_err());
        assert!(oracle_recover_small(&op, &[1.0], 0.5, 1).is_err());
    }
}
