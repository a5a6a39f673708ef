//! Linear measurement operators A : M_N → Rᵐ and empirical probing of their
//! restricted extremal constants on low-rank matrices.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::{sym_eigen_desc, Mat};
use crate::rng::{normal_matrix, stream, Purpose};

/// Default cap on dense operator storage.
pub const DEFAULT_MEMORY_GUARD_MB: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    GaussianDense,
    EntryMask,
}

#[derive(Clone, Debug, PartialEq)]
enum Payload {
    /// m × N² matrix; row i is the row-major vectorization of A_i.
    Dense(DMatrix<f64>),
    Mask {
        indices: Vec<(usize, usize)>,
        scale: f64,
    },
}

/// A linear map M_N → Rᵐ, immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementOperator {
    n: usize,
    m: usize,
    seed: u64,
    payload: Payload,
}

fn dense_mb(rows: usize, cols: usize) -> usize {
    (rows * cols * std::mem::size_of::<f64>()).div_ceil(1 << 20)
}

fn check_guard(rows: usize, cols: usize, guard_mb: usize) -> Result<()> {
    let needed_mb = dense_mb(rows, cols);
    if needed_mb > guard_mb {
        return Err(Error::MemoryGuard {
            needed_mb,
            guard_mb,
        });
    }
    Ok(())
}

fn check_m(n: usize, m: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::param("n", "matrix side must be >= 1"));
    }
    if m == 0 || m > n * n {
        return Err(Error::param("m", format!("need 1 <= m <= N^2 = {}, got {m}", n * n)));
    }
    Ok(())
}

/// Gaussian ensemble: entries i.i.d. N(0, 1/m), deterministic in `seed`.
pub fn gaussian_operator(n: usize, m: usize, seed: u64) -> Result<MeasurementOperator> {
    gaussian_operator_guarded(n, m, seed, DEFAULT_MEMORY_GUARD_MB)
}

pub fn gaussian_operator_guarded(
    n: usize,
    m: usize,
    seed: u64,
    guard_mb: usize,
) -> Result<MeasurementOperator> {
    check_m(n, m)?;
    check_guard(m, n * n, guard_mb)?;
    let mut rng = stream(seed, Purpose::Operator, 0);
    // drawn as N² × m so each sensing matrix is a contiguous column draw
    let raw = normal_matrix(&mut rng, n * n, m);
    let a = raw.transpose() / (m as f64).sqrt();
    Ok(MeasurementOperator {
        n,
        m,
        seed,
        payload: Payload::Dense(a),
    })
}

/// Entry sampling: A(X)_k = scale · X[i_k, j_k].
pub fn entry_mask_operator(
    n: usize,
    indices: &[(usize, usize)],
    scale: f64,
) -> Result<MeasurementOperator> {
    check_m(n, indices.len())?;
    if !scale.is_finite() {
        return Err(Error::param("scale", "must be finite"));
    }
    let mut seen = HashSet::with_capacity(indices.len());
    for &(i, j) in indices {
        if i >= n || j >= n {
            return Err(Error::param("indices", format!("({i}, {j}) out of range for N = {n}")));
        }
        if !seen.insert((i, j)) {
            return Err(Error::param("indices", format!("duplicate index ({i}, {j})")));
        }
    }
    Ok(MeasurementOperator {
        n,
        m: indices.len(),
        seed: 0,
        payload: Payload::Mask {
            indices: indices.to_vec(),
            scale,
        },
    })
}

/// Uniformly random set of m distinct entries, in row-major sorted order.
pub fn random_mask_operator(n: usize, m: usize, scale: f64, seed: u64) -> Result<MeasurementOperator> {
    check_m(n, m)?;
    let mut rng = stream(seed, Purpose::Mask, 0);
    let mut all: Vec<usize> = (0..n * n).collect();
    rand::seq::SliceRandom::shuffle(all.as_mut_slice(), &mut rng);
    let mut chosen: Vec<usize> = all[..m].to_vec();
    chosen.sort_unstable();
    let indices: Vec<(usize, usize)> = chosen.iter().map(|&k| (k / n, k % n)).collect();
    let mut op = entry_mask_operator(n, &indices, scale)?;
    op.seed = seed;
    Ok(op)
}

/// The operator that observes every entry: A(X) = vec(X).
pub fn full_vectorization(n: usize) -> MeasurementOperator {
    let indices: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    entry_mask_operator(n, &indices, 1.0).expect("valid full mask")
}

/// Build an operator from an explicit m × N² matrix (row-major vectorization).
pub fn dense_operator(n: usize, matrix: DMatrix<f64>, seed: u64) -> Result<MeasurementOperator> {
    check_m(n, matrix.nrows())?;
    if matrix.ncols() != n * n {
        return Err(Error::Dimension {
            expected: n * n,
            got: matrix.ncols(),
        });
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("operator has non-finite entries".into()));
    }
    Ok(MeasurementOperator {
        n,
        m: matrix.nrows(),
        seed,
        payload: Payload::Dense(matrix),
    })
}

impl MeasurementOperator {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn kind(&self) -> OperatorKind {
        match self.payload {
            Payload::Dense(_) => OperatorKind::GaussianDense,
            Payload::Mask { .. } => OperatorKind::EntryMask,
        }
    }

    pub fn mask(&self) -> Option<(&[(usize, usize)], f64)> {
        match &self.payload {
            Payload::Mask { indices, scale } => Some((indices, *scale)),
            Payload::Dense(_) => None,
        }
    }

    pub fn dense_payload(&self) -> Option<&DMatrix<f64>> {
        match &self.payload {
            Payload::Dense(a) => Some(a),
            Payload::Mask { .. } => None,
        }
    }

    fn check_mat(&self, x: &Mat) -> Result<()> {
        if x.n() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                got: x.n(),
            });
        }
        Ok(())
    }

    pub fn apply(&self, x: &Mat) -> Result<Vec<f64>> {
        self.check_mat(x)?;
        Ok(self.apply_raw(x.inner()))
    }

    pub(crate) fn apply_raw(&self, x: &DMatrix<f64>) -> Vec<f64> {
        match &self.payload {
            Payload::Dense(a) => {
                // row-major vectorization of a column-major matrix is vec(Xᵀ)
                let xt = x.transpose();
                let v = DVector::from_column_slice(xt.as_slice());
                (a * v).iter().copied().collect()
            }
            Payload::Mask { indices, scale } => indices.iter().map(|&(i, j)| scale * x[(i, j)]).collect(),
        }
    }

    /// A*(y), defined by ⟨A(X), y⟩ = tr(Xᵀ A*(y)).
    pub fn adjoint(&self, y: &[f64]) -> Result<Mat> {
        if y.len() != self.m {
            return Err(Error::Dimension {
                expected: self.m,
                got: y.len(),
            });
        }
        Ok(Mat::wrap(self.adjoint_raw(y)))
    }

    pub(crate) fn adjoint_raw(&self, y: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        match &self.payload {
            Payload::Dense(a) => {
                let v = a.tr_mul(&DVector::from_column_slice(y));
                // v is row-major; reading it column-major yields the transpose
                DMatrix::from_column_slice(n, n, v.as_slice()).transpose()
            }
            Payload::Mask { indices, scale } => {
                let mut out = DMatrix::zeros(n, n);
                for (&(i, j), &yk) in indices.iter().zip(y) {
                    out[(i, j)] += scale * yk;
                }
                out
            }
        }
    }

    /// The operator as an explicit m × N² matrix.
    pub fn dense_matrix(&self, guard_mb: usize) -> Result<DMatrix<f64>> {
        match &self.payload {
            Payload::Dense(a) => Ok(a.clone()),
            Payload::Mask { indices, scale } => {
                check_guard(self.m, self.n * self.n, guard_mb)?;
                let mut a = DMatrix::zeros(self.m, self.n * self.n);
                for (k, &(i, j)) in indices.iter().enumerate() {
                    a[(k, i * self.n + j)] = *scale;
                }
                Ok(a)
            }
        }
    }

    /// A·A* as an m × m matrix, or `None` for masks (where it is scale²·I).
    pub(crate) fn gram(&self) -> Option<DMatrix<f64>> {
        match &self.payload {
            Payload::Dense(a) => Some(a * a.transpose()),
            Payload::Mask { .. } => None,
        }
    }

    /// M_kl = ⟨A_k, W A_l⟩ for a symmetric left weight W (N × N).
    pub(crate) fn weighted_gram(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n;
        match &self.payload {
            Payload::Dense(a) => {
                // rows of `a` reshaped: A_k[i, j] = a[k, i*n + j]
                let mut wa = DMatrix::zeros(self.m, n * n);
                for k in 0..self.m {
                    let ak = DMatrix::from_fn(n, n, |i, j| a[(k, i * n + j)]);
                    let prod = w * ak;
                    for i in 0..n {
                        for j in 0..n {
                            wa[(k, i * n + j)] = prod[(i, j)];
                        }
                    }
                }
                a * wa.transpose()
            }
            Payload::Mask { indices, scale } => DMatrix::from_fn(self.m, self.m, |k, l| {
                let (ik, jk) = indices[k];
                let (il, jl) = indices[l];
                if jk == jl {
                    scale * scale * w[(ik, il)]
                } else {
                    0.0
                }
            }),
        }
    }
}

/// JSON header for a serialized operator. Gaussian payloads are either
/// regenerated from `seed` or read from a companion SMAT file.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct OperatorHeader {
    pub kind: OperatorKind,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indices: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
}

impl MeasurementOperator {
    pub fn header(&self) -> OperatorHeader {
        match &self.payload {
            Payload::Dense(_) => OperatorHeader {
                kind: OperatorKind::GaussianDense,
                n: self.n,
                m: self.m,
                seed: self.seed,
                scale: None,
                indices: None,
                payload: None,
            },
            Payload::Mask { indices, scale } => OperatorHeader {
                kind: OperatorKind::EntryMask,
                n: self.n,
                m: self.m,
                seed: self.seed,
                scale: Some(*scale),
                indices: Some(indices.iter().map(|&(i, j)| [i, j]).collect()),
                payload: None,
            },
        }
    }

    /// Rebuild from a header, with an explicit dense payload if one was stored.
    pub fn from_header(h: &OperatorHeader, payload: Option<DMatrix<f64>>, guard_mb: usize) -> Result<Self> {
        match h.kind {
            OperatorKind::GaussianDense => {
                let op = match payload {
                    Some(a) => {
                        if a.nrows() != h.m {
                            return Err(Error::Dimension {
                                expected: h.m,
                                got: a.nrows(),
                            });
                        }
                        dense_operator(h.n, a, h.seed)?
                    }
                    None => gaussian_operator_guarded(h.n, h.m, h.seed, guard_mb)?,
                };
                Ok(op)
            }
            OperatorKind::EntryMask => {
                let idx = h
                    .indices
                    .as_ref()
                    .ok_or_else(|| Error::Format("entry-mask header needs indices".into()))?;
                let pairs: Vec<(usize, usize)> = idx.iter().map(|p| (p[0], p[1])).collect();
                if pairs.len() != h.m {
                    return Err(Error::Dimension {
                        expected: h.m,
                        got: pairs.len(),
                    });
                }
                let mut op = entry_mask_operator(h.n, &pairs, h.scale.unwrap_or(1.0))?;
                op.seed = h.seed;
                Ok(op)
            }
        }
    }
}

/// γ = (1+δ)/(1−δ).
pub fn gamma_from_delta(delta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::param("delta", format!("need 0 <= delta < 1, got {delta}")));
    }
    Ok((1.0 + delta) / (1.0 - delta))
}

/// δ = (γ−1)/(γ+1).
pub fn delta_from_gamma(gamma: f64) -> Result<f64> {
    if gamma.is_nan() || gamma < 1.0 || gamma.is_infinite() {
        return Err(Error::param("gamma", format!("need finite gamma >= 1, got {gamma}")));
    }
    Ok((gamma - 1.0) / (gamma + 1.0))
}

pub const SIDEDNESS_NOTE: &str =
    "alpha_hat is an upper estimate of alpha_s and beta_hat a lower estimate of beta_s; gamma_hat is a lower estimate of gamma";

/// Empirical restricted extremal constants on rank-s matrices.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RestrictedConstants {
    pub s: usize,
    pub alpha_hat: f64,
    pub beta_hat: f64,
    /// β̂²/α̂²; absent when α̂ = 0 (unbounded) or the map is degenerate.
    pub gamma_hat: Option<f64>,
    pub delta_hat: Option<f64>,
    pub degenerate: bool,
    pub sidedness: String,
    pub trials: usize,
    pub refine_iters: usize,
    pub seed: u64,
}

impl RestrictedConstants {
    fn from_extremes(s: usize, alpha: f64, beta: f64, trials: usize, refine_iters: usize, seed: u64) -> Self {
        let degenerate = beta <= 0.0;
        let gamma_hat = if degenerate || alpha <= 0.0 {
            None
        } else {
            Some((beta * beta) / (alpha * alpha))
        };
        let delta_hat = gamma_hat.and_then(|g| delta_from_gamma(g.max(1.0)).ok());
        RestrictedConstants {
            s,
            alpha_hat: alpha,
            beta_hat: beta,
            gamma_hat,
            delta_hat,
            degenerate,
            sidedness: SIDEDNESS_NOTE.to_string(),
            trials,
            refine_iters,
            seed,
        }
    }
}

/// Per-trial extremes of ‖A Z‖ over unit-Frobenius rank-s Z.
#[derive(Clone, Copy, Debug)]
struct TrialExtremes {
    lo: f64,
    hi: f64,
}

fn orthonormal_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let qr = m.clone().qr();
    qr.q()
}

/// Columns of the linear map coords ↦ A(Σ coords[a,b] · left_b ⊗ e_a) where
/// `fixed` is orthonormal (N × s) and the free factor is N × s.
///
/// `free_is_left` selects whether the free factor multiplies from the left
/// (Z = F·fixedᵀ) or the right (Z = fixed·Fᵀ).
fn factor_map(op: &MeasurementOperator, fixed: &DMatrix<f64>, free_is_left: bool) -> DMatrix<f64> {
    let n = op.n();
    let s = fixed.ncols();
    let mut cols = DMatrix::zeros(op.m(), n * s);
    for b in 0..s {
        for a in 0..n {
            let mut z = DMatrix::zeros(n, n);
            if free_is_left {
                // e_a · fixed_bᵀ
                for j in 0..n {
                    z[(a, j)] = fixed[(j, b)];
                }
            } else {
                // fixed_b · e_aᵀ
                for i in 0..n {
                    z[(i, a)] = fixed[(i, b)];
                }
            }
            let col = op.apply_raw(&z);
            cols.column_mut(b * n + a).copy_from_slice(&col);
        }
    }
    cols
}

fn unvec_factor(v: &DMatrix<f64>, col: usize, n: usize, s: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, s, |a, b| v[(b * n + a, col)])
}

/// Alternating optimization of ‖A(G Hᵀ)‖/‖G Hᵀ‖_F; `maximize` picks the
/// direction. Each half-step is an exact Rayleigh-quotient optimization over
/// one factor with the other held fixed and orthonormalized.
fn refine(
    op: &MeasurementOperator,
    mut g: DMatrix<f64>,
    mut h: DMatrix<f64>,
    iters: usize,
    maximize: bool,
) -> f64 {
    let n = op.n();
    let s = g.ncols();
    let mut best = if maximize { 0.0 } else { f64::INFINITY };
    for _ in 0..iters {
        for left in [true, false] {
            let fixed = if left { orthonormal_columns(&h) } else { orthonormal_columns(&g) };
            let b = factor_map(op, &fixed, left);
            let (vals, vecs) = sym_eigen_desc(&b.tr_mul(&b));
            let idx = if maximize { 0 } else { vals.len() - 1 };
            let val = vals[idx].max(0.0).sqrt();
            best = if maximize { best.max(val) } else { best.min(val) };
            let free = unvec_factor(&vecs, idx, n, s);
            if left {
                g = free;
                h = fixed;
            } else {
                h = free;
                g = fixed;
            }
        }
    }
    best
}

fn probe_trial(op: &MeasurementOperator, s: usize, refine_iters: usize, seed: u64, trial: usize) -> TrialExtremes {
    let n = op.n();
    let mut rng = stream(seed, Purpose::RipTrial, trial as u64);
    let g = normal_matrix(&mut rng, n, s);
    let h = normal_matrix(&mut rng, n, s);
    let z = &g * h.transpose();
    let norm = z.norm();
    let r0 = if norm > 0.0 {
        let v = op.apply_raw(&(z / norm));
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    } else {
        0.0
    };
    let mut lo = r0;
    let mut hi = r0;
    if refine_iters > 0 {
        hi = hi.max(refine(op, g.clone(), h.clone(), refine_iters, true));
        lo = lo.min(refine(op, g, h, refine_iters, false));
    }
    TrialExtremes { lo, hi }
}

/// Monte-Carlo plus alternating-refinement bracket of α_s and β_s.
pub fn estimate_restricted_constants(
    op: &MeasurementOperator,
    s: usize,
    trials: usize,
    refine_iters: usize,
    seed: u64,
) -> Result<RestrictedConstants> {
    estimate_restricted_constants_with(op, s, trials, refine_iters, seed, Exec::Parallel)
}

pub fn estimate_restricted_constants_with(
    op: &MeasurementOperator,
    s: usize,
    trials: usize,
    refine_iters: usize,
    seed: u64,
    exec: Exec,
) -> Result<RestrictedConstants> {
    if s == 0 || s > op.n() {
        return Err(Error::param("s", format!("need 1 <= s <= N = {}, got {s}", op.n())));
    }
    if trials == 0 {
        return Err(Error::param("trials", "must be >= 1"));
    }
    let per_trial = exec.map(trials, |t| probe_trial(op, s, refine_iters, seed, t));
    let alpha = per_trial.iter().map(|e| e.lo).fold(f64::INFINITY, f64::min);
    let beta = per_trial.iter().map(|e| e.hi).fold(0.0, f64::max);
    Ok(RestrictedConstants::from_extremes(s, alpha, beta, trials, refine_iters, seed))
}
