//! Dense square matrices and the singular value machinery everything else
//! is built on.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Singular values below this fraction of the largest are exact zeros when
/// counting rank.
pub const RANK_RTOL: f64 = 1e-12;

/// A dense N×N real matrix with finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat(DMatrix<f64>);

impl Mat {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Input(format!(
                "matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::Input("matrix must be non-empty".into()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("matrix has non-finite entries".into()));
        }
        Ok(Mat(m))
    }

    /// Wrap a matrix produced by this crate's own arithmetic.
    pub(crate) fn wrap(m: DMatrix<f64>) -> Self {
        debug_assert_eq!(m.nrows(), m.ncols());
        Mat(m)
    }

    pub fn zeros(n: usize) -> Self {
        Mat(DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        Mat(DMatrix::identity(n, n))
    }

    pub fn diag(values: &[f64]) -> Self {
        Mat(DMatrix::from_diagonal(&DVector::from_column_slice(values)))
    }

    pub fn from_row_major(n: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Dimension {
                expected: n * n,
                got: data.len(),
            });
        }
        Mat::new(DMatrix::from_row_slice(n, n, data))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn inner(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    /// Row-major vectorization: entry (i, j) lands at `i * N + j`.
    pub fn to_row_major(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        Mat(self.0.transpose())
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        Mat(&self.0 * &other.0)
    }

    /// Frobenius norm, i.e. the Schatten 2-norm.
    pub fn frobenius(&self) -> f64 {
        self.0.norm()
    }

    /// Trace inner product ⟨A, B⟩ = tr(AᵀB).
    pub fn dot(&self, other: &Mat) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn scale(&self, c: f64) -> Mat {
        Mat(&self.0 * c)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.amax()
    }
}

impl Add for &Mat {
    type Output = Mat;
    fn add(self, rhs: &Mat) -> Mat {
        Mat(&self.0 + &rhs.0)
    }
}

impl Sub for &Mat {
    type Output = Mat;
    fn sub(self, rhs: &Mat) -> Mat {
        Mat(&self.0 - &rhs.0)
    }
}

impl Mul<f64> for &Mat {
    type Output = Mat;
    fn mul(self, rhs: f64) -> Mat {
        Mat(&self.0 * rhs)
    }
}

impl Neg for &Mat {
    type Output = Mat;
    fn neg(self) -> Mat {
        Mat(-&self.0)
    }
}

/// Plain JSON form of a matrix: `{"rows": n, "cols": n, "data": [row-major]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatJson {
    pub fn from_dmatrix(a: &DMatrix<f64>) -> Self {
        MatJson {
            rows: a.nrows(),
            cols: a.ncols(),
            data: a.transpose().as_slice().to_vec(),
        }
    }

    pub fn into_dmatrix(self) -> Result<DMatrix<f64>> {
        let expected = self
            .rows
            .checked_mul(self.cols)
            .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
        if self.data.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: self.data.len(),
            });
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

impl From<&Mat> for MatJson {
    fn from(m: &Mat) -> Self {
        MatJson {
            rows: m.n(),
            cols: m.n(),
            data: m.to_row_major(),
        }
    }
}

impl TryFrom<MatJson> for Mat {
    type Error = Error;
    fn try_from(j: MatJson) -> Result<Mat> {
        if j.rows != j.cols {
            return Err(Error::Input(format!(
                "matrix must be square, got {}x{}",
                j.rows, j.cols
            )));
        }
        Mat::from_row_major(j.rows, &j.data)
    }
}

impl Serialize for Mat {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MatJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mat {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = MatJson::deserialize(d)?;
        Mat::try_from(j).map_err(serde::de::Error::custom)
    }
}

/// X = U·diag(σ)·Vᵀ with σ nonincreasing.
#[derive(Clone, Debug)]
pub struct SvdFactors {
    pub u: Mat,
    pub sigma: Vec<f64>,
    pub v: Mat,
}

impl SvdFactors {
    pub fn n(&self) -> usize {
        self.sigma.len()
    }

    /// Numerical rank under the `RANK_RTOL` convention.
    pub fn rank(&self) -> usize {
        let top = self.sigma.first().copied().unwrap_or(0.0);
        if top == 0.0 {
            return 0;
        }
        self.sigma.iter().filter(|&&s| s > RANK_RTOL * top).count()
    }

    /// U·diag(values)·Vᵀ for a replacement spectrum.
    pub fn compose(&self, values: &[f64]) -> Mat {
        Mat(compose(self.u.inner(), values, self.v.inner()))
    }

    pub fn reconstruct(&self) -> Mat {
        self.compose(&self.sigma)
    }
}

pub(crate) fn compose(u: &DMatrix<f64>, values: &[f64], v: &DMatrix<f64>) -> DMatrix<f64> {
    let mut us = u.clone();
    for (j, &s) in values.iter().enumerate() {
        us.column_mut(j).scale_mut(s);
    }
    us * v.transpose()
}

/// Singular value decomposition with nonincreasing singular values.
///
/// Equal singular values keep the order produced by the underlying
/// Golub–Kahan routine (stable sort), so the factors are deterministic.
pub fn svd(x: &Mat) -> Result<SvdFactors> {
    if x.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("matrix has non-finite entries".into()));
    }
    let (u, sigma, v) = svd_dense(&x.0)?;
    Ok(SvdFactors {
        u: Mat(u),
        sigma,
        v: Mat(v),
    })
}

/// Sorted SVD of a general dense matrix: returns (U, σ, V) with thin factors.
pub(crate) fn svd_dense(x: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let dec = SVD::try_new(x.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let u = dec.u.expect("u requested");
    let vt = dec.v_t.expect("v_t requested");
    let k = dec.singular_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        dec.singular_values[b]
            .partial_cmp(&dec.singular_values[a])
            .expect("finite singular values")
    });
    let sigma = order.iter().map(|&i| dec.singular_values[i].max(0.0)).collect();
    let u_sorted = DMatrix::from_fn(u.nrows(), k, |r, c| u[(r, order[c])]);
    let v_sorted = DMatrix::from_fn(vt.ncols(), k, |r, c| vt[(order[c], r)]);
    Ok((u_sorted, sigma, v_sorted))
}

/// Singular values only, nonincreasing.
pub fn singular_values(x: &Mat) -> Result<Vec<f64>> {
    if x.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("matrix has non-finite entries".into()));
    }
    let mut s: Vec<f64> = x
        .0
        .clone()
        .try_svd(false, false, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?
        .singular_values
        .iter()
        .map(|v| v.max(0.0))
        .collect();
    s.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    Ok(s)
}

/// Symmetric eigen-decomposition with eigenvalues in nonincreasing order.
pub(crate) fn sym_eigen_desc(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| {
        eig.eigenvalues[y]
            .partial_cmp(&eig.eigenvalues[x])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Orthonormal basis (as columns) of the null space of a dense `rows × cols`
/// matrix: the right singular vectors of the zero-padded square matrix whose
/// singular values vanish.
pub(crate) fn null_space(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cols = a.ncols();
    let rows = a.nrows();
    let padded = if rows >= cols {
        a.clone()
    } else {
        let mut p = DMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(a);
        p
    };
    let (_, sigma, v) = svd_dense(&padded)?;
    let top = sigma.first().copied().unwrap_or(0.0);
    let tol = top * 1e-10 * (rows.max(cols) as f64);
    let rank = if top == 0.0 {
        0
    } else {
        sigma.iter().filter(|&&s| s > tol).count()
    };
    Ok(v.columns(rank, cols - rank).into_owned())
}
