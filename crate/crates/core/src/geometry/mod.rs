//! Null-space geometry of a measurement operator: kernel bases, the width
//! property constant, null-space property margins, compressed-sensing
//! property constants and empirical Gelfand-width upper bounds.

mod width;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::{null_space, svd_dense, Mat};
use crate::measurements::{MeasurementOperator, DEFAULT_MEMORY_GUARD_MB};
use crate::rng::{normal_matrix, normal_vec, stream, Purpose};
use crate::schatten::{check_p, power_sum};
use crate::solvers::{recover_nuclear, SolveOptions};

pub use width::{
    fit_exponent, select_rank, weak_ball_constant, weak_tail_constant, width_scaling_experiment, width_upper_bound,
    ExponentFit, WidthEstimate, WidthParams, WidthScaling,
};

/// Recovery errors below this fraction of ‖X‖_{S_2} count as exact.
pub const CSP_EXACT_TOL: f64 = 1e-7;

/// Default number of projected-gradient steps in adversarial refinement.
pub const DEFAULT_REFINE_STEPS: usize = 50;

pub(crate) fn vec_rm(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(x.transpose().as_slice())
}

pub(crate) fn unvec_rm(n: usize, v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(n, n, v.as_slice()).transpose()
}

/// Orthonormal basis of ker A under the trace inner product.
#[derive(Clone, Debug)]
pub struct KernelBasis {
    n: usize,
    /// N² × dim, columns are row-major vectorizations.
    columns: DMatrix<f64>,
}

impl KernelBasis {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.columns.ncols()
    }

    pub fn basis(&self) -> Vec<Mat> {
        (0..self.dim())
            .map(|j| Mat::wrap(unvec_rm(self.n, &self.columns.column(j).into_owned())))
            .collect()
    }

    /// Σ cᵢ Bᵢ.
    pub fn combine(&self, coeffs: &[f64]) -> Result<Mat> {
        if coeffs.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: coeffs.len(),
            });
        }
        Ok(Mat::wrap(self.combine_raw(&DVector::from_column_slice(coeffs))))
    }

    fn combine_raw(&self, c: &DVector<f64>) -> DMatrix<f64> {
        unvec_rm(self.n, &(&self.columns * c))
    }

    /// Coordinates of the kernel projection of a matrix gradient.
    fn pull_back(&self, g: &DMatrix<f64>) -> DVector<f64> {
        self.columns.tr_mul(&vec_rm(g))
    }
}

pub fn kernel_basis(op: &MeasurementOperator, guard_mb: usize) -> Result<KernelBasis> {
    let a = op.dense_matrix(guard_mb)?;
    Ok(KernelBasis {
        n: op.n(),
        columns: null_space(&a)?,
    })
}

/// Projected-gradient ascent of `f` on the unit sphere of kernel
/// coordinates. `f` returns the value and the Euclidean gradient in matrix
/// space. Backtracking keeps every accepted step an improvement.
fn refine_on_sphere<F>(kb: &KernelBasis, start: DVector<f64>, steps: usize, f: F) -> (f64, DVector<f64>)
where
    F: Fn(&DMatrix<f64>) -> Option<(f64, DMatrix<f64>)>,
{
    let mut c = start.normalize();
    let Some((mut val, mut grad)) = f(&kb.combine_raw(&c)) else {
        return (f64::NEG_INFINITY, c);
    };
    let mut step = 0.5;
    for _ in 0..steps {
        let g = kb.pull_back(&grad);
        // tangent component on the sphere
        let tangent = &g - &c * c.dot(&g);
        let tn = tangent.norm();
        if tn < 1e-14 {
            break;
        }
        let mut accepted = false;
        for _ in 0..30 {
            let cand = (&c + &tangent * (step / tn)).normalize();
            if let Some((v, gr)) = f(&kb.combine_raw(&cand)) {
                if v > val {
                    c = cand;
                    val = v;
                    grad = gr;
                    accepted = true;
                    step = (step * 2.0).min(1.0);
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (val, c)
}

/// ‖X‖_{S_2}/‖X‖_{S_1} and its gradient.
fn l2_over_l1(x: &DMatrix<f64>) -> Option<(f64, DMatrix<f64>)> {
    let (u, s, v) = svd_dense(x).ok()?;
    let l1: f64 = s.iter().sum();
    let l2 = x.norm();
    if l1 <= 0.0 {
        return None;
    }
    let top = s[0];
    let signs: Vec<f64> = s.iter().map(|&si| if si > top * 1e-12 { 1.0 } else { 0.0 }).collect();
    let d_l1 = crate::linalg::compose(&u, &signs, &v);
    let grad = (x / l2 * l1 - d_l1 * l2) / (l1 * l1);
    Some((l2 / l1, grad))
}

/// ‖X‖_{S_q} over the unit-ball gauge (‖·‖_{S_1} for p = 1, the weak
/// quasi-norm ‖·‖_{S_{p,∞}} for p < 1), with its gradient.
fn q_over_ball(x: &DMatrix<f64>, p: f64, q: f64) -> Option<(f64, DMatrix<f64>)> {
    let (u, s, v) = svd_dense(x).ok()?;
    let top = *s.first()?;
    if top <= 0.0 {
        return None;
    }
    let live: Vec<f64> = s.iter().map(|&si| if si > top * 1e-12 { si } else { 0.0 }).collect();
    let nq = crate::schatten::schatten_of(&live, q);
    let d_nq: Vec<f64> = live
        .iter()
        .map(|&si| if si > 0.0 { (si / nq).powf(q - 1.0) } else { 0.0 })
        .collect();
    let (w, d_w) = if p >= 1.0 {
        (live.iter().sum::<f64>(), live.iter().map(|&si| if si > 0.0 { 1.0 } else { 0.0 }).collect::<Vec<_>>())
    } else {
        let (k, w) = live
            .iter()
            .enumerate()
            .map(|(i, &si)| (i, ((i + 1) as f64).powf(1.0 / p) * si))
            .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        let mut d = vec![0.0; live.len()];
        d[k] = ((k + 1) as f64).powf(1.0 / p);
        (w, d)
    };
    let coef: Vec<f64> = d_nq.iter().zip(&d_w).map(|(a, b)| (a * w - nq * b) / (w * w)).collect();
    Some((nq / w, crate::linalg::compose(&u, &coef, &v)))
}

/// A kernel element of `kb` refined towards the largest ‖X‖_{S_q} on the
/// unit ball, scaled onto that ball's boundary.
pub(crate) fn extremal_kernel_element(
    kb: &KernelBasis,
    rng: &mut rand_chacha::ChaCha8Rng,
    p: f64,
    q: f64,
    steps: usize,
) -> Option<Mat> {
    if kb.dim() == 0 {
        return None;
    }
    let c = DVector::from_vec(normal_vec(rng, kb.dim()));
    let (val, c) = refine_on_sphere(kb, c, steps, |x| q_over_ball(x, p, q));
    if !val.is_finite() {
        return None;
    }
    let x = kb.combine_raw(&c);
    let sigma = svd_dense(&x).ok()?.1;
    let gauge = if p >= 1.0 {
        sigma.iter().sum::<f64>()
    } else {
        crate::schatten::weak_schatten_of(&sigma, p)
    };
    (gauge > 0.0).then(|| Mat::wrap(x / gauge))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MwpEstimate {
    /// Lower estimate of the smallest C with ‖X‖_{S_2} ≤ C (m/N)^{−1/2} ‖X‖_{S_1} on ker A.
    pub constant: f64,
    /// sup ‖X‖_{S_2}/‖X‖_{S_1} over the sample.
    pub ratio: f64,
    pub kernel_dim: usize,
    pub trials: usize,
    pub refine_iters: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Best kernel element found (unit Frobenius norm).
    #[serde(skip)]
    pub witness: Option<Mat>,
}

pub fn mwp_constant(op: &MeasurementOperator, trials: usize, refine_iters: usize, seed: u64) -> Result<MwpEstimate> {
    mwp_constant_with(op, trials, refine_iters, seed, Exec::default())
}

pub fn mwp_constant_with(
    op: &MeasurementOperator,
    trials: usize,
    refine_iters: usize,
    seed: u64,
    exec: Exec,
) -> Result<MwpEstimate> {
    if trials == 0 {
        return Err(Error::param("trials", "must be >= 1"));
    }
    let kb = kernel_basis(op, DEFAULT_MEMORY_GUARD_MB)?;
    let norm = (op.m() as f64 / op.n() as f64).sqrt();
    let mut out = MwpEstimate {
        constant: 0.0,
        ratio: 0.0,
        kernel_dim: kb.dim(),
        trials,
        refine_iters,
        seed,
        note: None,
        witness: None,
    };
    if kb.dim() == 0 {
        out.note = Some("trivial kernel".into());
        return Ok(out);
    }
    let results = exec.map(trials, |i| {
        let mut rng = stream(seed, Purpose::KernelSample, i as u64);
        let c = DVector::from_vec(normal_vec(&mut rng, kb.dim()));
        refine_on_sphere(&kb, c, refine_iters, l2_over_l1)
    });
    let (best, c) = results
        .into_iter()
        .fold((f64::NEG_INFINITY, None), |acc, (v, c)| if v > acc.0 { (v, Some(c)) } else { acc });
    out.ratio = best;
    out.constant = norm * best;
    out.witness = c.map(|c| Mat::wrap(kb.combine_raw(&c)));
    Ok(out)
}

/// ‖V − V_{[k]}‖^p_{S_p} − ‖V_{[k]}‖^p_{S_p} for a unit-norm V.
fn nsp_margin_sigma(sigma: &[f64], k: usize, p: f64) -> f64 {
    let k = k.min(sigma.len());
    power_sum(&sigma[k..], p) - power_sum(&sigma[..k], p)
}

/// The null-space margin of a single matrix at level 2s (scale-free: V is
/// normalized to unit Frobenius norm first).
pub fn nsp_margin(v: &Mat, s: usize, p: f64) -> Result<f64> {
    check_p(p)?;
    let f = v.frobenius();
    if f == 0.0 {
        return Err(Error::Input("margin of the zero matrix is undefined".into()));
    }
    let sigma: Vec<f64> = crate::linalg::singular_values(v)?.iter().map(|x| x / f).collect();
    // tail values below the rank cutoff are exact zeros relative to σ₁
    Ok(nsp_margin_sigma(&sigma, 2 * s, p))
}

fn neg_margin(x: &DMatrix<f64>, k: usize, p: f64) -> Option<(f64, DMatrix<f64>)> {
    let (u, s, v) = svd_dense(x).ok()?;
    let top = s.first().copied()?;
    if top <= 0.0 {
        return None;
    }
    let val = -nsp_margin_sigma(&s, k, p);
    let w: Vec<f64> = s
        .iter()
        .enumerate()
        .map(|(i, &si)| {
            let d = p * si.max(top * 1e-8).powf(p - 1.0);
            if i < k {
                d
            } else {
                -d
            }
        })
        .collect();
    Some((val, crate::linalg::compose(&u, &w, &v)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NspReport {
    pub s: usize,
    pub p: f64,
    pub trials: usize,
    /// Fraction of random unit kernel elements with nonnegative margin.
    pub pass_fraction: f64,
    /// Smallest margin after adversarial refinement.
    pub worst_margin: f64,
    /// Smallest margin among the unrefined random samples.
    pub worst_random_margin: f64,
    pub refine_iters: usize,
    pub kernel_dim: usize,
    pub seed: u64,
}

impl NspReport {
    /// The sampled (and refined) evidence supports the property.
    pub fn passes(&self) -> bool {
        self.worst_margin >= 0.0
    }
}

pub fn nsp_check(op: &MeasurementOperator, s: usize, p: f64, trials: usize, seed: u64) -> Result<NspReport> {
    nsp_check_with(op, s, p, trials, DEFAULT_REFINE_STEPS, seed, Exec::default())
}

pub fn nsp_check_with(
    op: &MeasurementOperator,
    s: usize,
    p: f64,
    trials: usize,
    refine_iters: usize,
    seed: u64,
    exec: Exec,
) -> Result<NspReport> {
    check_p(p)?;
    if p > 1.0 {
        return Err(Error::param("p", format!("must be <= 1, got {p}")));
    }
    if s == 0 || 2 * s > op.n() {
        return Err(Error::param("s", format!("need 1 <= 2s <= N = {}, got s = {s}", op.n())));
    }
    if trials == 0 {
        return Err(Error::param("trials", "must be >= 1"));
    }
    let kb = kernel_basis(op, DEFAULT_MEMORY_GUARD_MB)?;
    if kb.dim() == 0 {
        return Err(Error::Input("kernel is trivial; the null-space property is vacuous".into()));
    }
    let k = 2 * s;
    let rows = exec.map(trials, |i| {
        let mut rng = stream(seed, Purpose::KernelSample, i as u64);
        let c = DVector::from_vec(normal_vec(&mut rng, kb.dim())).normalize();
        let raw = neg_margin(&kb.combine_raw(&c), k, p).map_or(f64::INFINITY, |r| -r.0);
        let (neg, _) = refine_on_sphere(&kb, c, refine_iters, |x| neg_margin(x, k, p));
        (raw, -neg)
    });
    let passed = rows.iter().filter(|r| r.0 >= 0.0).count();
    let worst_random = rows.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let worst = rows.iter().map(|r| r.1.min(r.0)).fold(f64::INFINITY, f64::min);
    Ok(NspReport {
        s,
        p,
        trials,
        pass_fraction: passed as f64 / trials as f64,
        worst_margin: worst,
        worst_random_margin: worst_random,
        refine_iters,
        kernel_dim: kb.dim(),
        seed,
    })
}

/// (d, 2^{1/p}·d): the range the compressive widths are confined to.
pub fn compressive_width_bracket(d_m: f64, p: f64) -> Result<(f64, f64)> {
    if !(d_m >= 0.0 && d_m.is_finite()) {
        return Err(Error::param("d_m", format!("must be >= 0 and finite, got {d_m}")));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::param("p", format!("must lie in (0, 1], got {p}")));
    }
    Ok((d_m, 2f64.powf(1.0 / p) * d_m))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CspRow {
    pub trial: usize,
    pub rho_s: f64,
    pub norm_s1: f64,
    pub err_s2: f64,
    pub c_strong: f64,
    pub c_weak: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CspReport {
    pub s: usize,
    /// s·N/m, so either normalization of "s ≍ m/N" can be recovered.
    pub s_n_over_m: f64,
    pub c_strong: f64,
    pub c_weak: f64,
    pub c_mwp: f64,
    /// The weak constant restricted to kernel samples (Δ₁(A·X) = 0 there).
    pub c_weak_kernel: f64,
    /// C_weak ≤ C_strong held on every row.
    pub weak_le_strong: bool,
    /// c_mwp·(sN/m)^{1/2} ≤ c_weak_kernel: the width constant is dominated
    /// by the weak constant after converting s to m/N.
    pub mwp_le_weak: bool,
    pub solver_failures: usize,
    pub rows: Vec<CspRow>,
    pub seed: u64,
}

/// Empirical MSCSP / MWCSP / MWP constants for Δ₁ on planted rank-s
/// matrices with random tails.
pub fn mscsp_mwcsp_check(op: &MeasurementOperator, s: usize, trials: usize, seed: u64) -> Result<CspReport> {
    mscsp_mwcsp_check_with(op, s, trials, seed, &SolveOptions::default(), Exec::default())
}

pub fn mscsp_mwcsp_check_with(
    op: &MeasurementOperator,
    s: usize,
    trials: usize,
    seed: u64,
    opts: &SolveOptions,
    exec: Exec,
) -> Result<CspReport> {
    let n = op.n();
    if s == 0 || s >= n {
        return Err(Error::param("s", format!("need 1 <= s < N = {n}, got {s}")));
    }
    if trials == 0 {
        return Err(Error::param("trials", "must be >= 1"));
    }
    let sq = (s as f64).sqrt();
    let rows = exec.map(trials, |i| -> Result<CspRow> {
        let mut rng = stream(seed, Purpose::PlantedMatrix, i as u64);
        let l = normal_matrix(&mut rng, n, s) * normal_matrix(&mut rng, s, n);
        let tail_scale = 10f64.powf(-3.0 + 3.0 * (i % 4) as f64 / 3.0);
        let x = Mat::wrap(&l / l.norm() + normal_matrix(&mut rng, n, n) * (tail_scale / n as f64));
        let y = op.apply(&x)?;
        let r = recover_nuclear(op, &y, 0.0, 0.0, opts)?;
        let rho = crate::schatten::best_rank_error(&x, s, 1.0)?;
        let norm_s1 = crate::schatten::schatten_norm(&x, 1.0)?;
        let err = (&x - &r.minimizer).frobenius();
        let ratio = |den: f64| if err <= CSP_EXACT_TOL * x.frobenius() { 0.0 } else { sq * err / den };
        Ok(CspRow {
            trial: i,
            rho_s: rho,
            norm_s1,
            err_s2: err,
            c_strong: ratio(rho),
            c_weak: ratio(norm_s1),
            converged: r.converged,
        })
    });
    let rows: Vec<CspRow> = rows.into_iter().collect::<Result<_>>()?;
    let mwp = mwp_constant_with(op, trials, DEFAULT_REFINE_STEPS, seed, exec)?;
    // the weak property on the MWP witness: Δ₁ of its (zero) measurements
    let c_weak_kernel = match &mwp.witness {
        Some(w) => {
            let y = op.apply(w)?;
            let r = recover_nuclear(op, &y, 0.0, 0.0, opts)?;
            let err = (w - &r.minimizer).frobenius();
            sq * err / crate::schatten::schatten_norm(w, 1.0)?
        }
        None => 0.0,
    };
    let s_n_over_m = s as f64 * n as f64 / op.m() as f64;
    let c_strong = rows.iter().map(|r| r.c_strong).fold(0.0, f64::max);
    let c_weak = rows.iter().map(|r| r.c_weak).fold(0.0, f64::max).max(c_weak_kernel);
    Ok(CspReport {
        s,
        s_n_over_m,
        c_strong,
        c_weak,
        c_mwp: mwp.constant,
        c_weak_kernel,
        weak_le_strong: rows.iter().all(|r| r.c_weak <= r.c_strong),
        mwp_le_weak: mwp.constant * s_n_over_m.sqrt() <= c_weak_kernel * (1.0 + 1e-9) + 1e-12,
        solver_failures: rows.iter().filter(|r| !r.converged).count(),
        rows,
        seed,
    })
}
