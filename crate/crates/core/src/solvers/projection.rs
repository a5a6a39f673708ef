//! Euclidean projections onto {Z : A(Z) = y} and {Z : ‖A(Z) − y‖ ≤ b}.

use nalgebra::{DMatrix, DVector};

use crate::linalg::sym_eigen_desc;
use crate::measurements::MeasurementOperator;

enum Gram {
    /// A·A* = c·I (entry masks).
    Scaled(f64),
    /// A·A* = W·diag(d)·Wᵀ.
    Eigen { w: DMatrix<f64>, d: Vec<f64>, tol: f64 },
}

pub(crate) struct Projector<'a> {
    op: &'a MeasurementOperator,
    gram: Gram,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl<'a> Projector<'a> {
    pub fn new(op: &'a MeasurementOperator) -> Self {
        let gram = match op.gram() {
            None => {
                let (_, scale) = op.mask().expect("non-dense operator is a mask");
                Gram::Scaled(scale * scale)
            }
            Some(g) => {
                let (d, w) = sym_eigen_desc(&g);
                let top = d.first().copied().unwrap_or(0.0).max(0.0);
                let tol = top * 1e-12 * (op.m() as f64);
                Gram::Eigen { w, d, tol }
            }
        };
        Projector { op, gram }
    }

    pub fn residual(&self, x: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
        let ax = self.op.apply_raw(x);
        ax.iter().zip(y).map(|(a, b)| a - b).collect()
    }

    pub fn residual_norm(&self, x: &DMatrix<f64>, y: &[f64]) -> f64 {
        norm(&self.residual(x, y))
    }

    /// Coordinates of g in the eigenbasis of A·A*, with the eigenvalues.
    fn spectral(&self, g: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
        match &self.gram {
            Gram::Scaled(c) => (g.to_vec(), vec![*c; g.len()], 0.0),
            Gram::Eigen { w, d, tol } => {
                let gt = w.tr_mul(&DVector::from_column_slice(g));
                (gt.iter().copied().collect(), d.clone(), *tol)
            }
        }
    }

    fn from_spectral(&self, coeffs: &[f64]) -> Vec<f64> {
        match &self.gram {
            Gram::Scaled(_) => coeffs.to_vec(),
            Gram::Eigen { w, .. } => (w * DVector::from_column_slice(coeffs)).iter().copied().collect(),
        }
    }

    /// Nearest point of the affine set; on inconsistent y it lands on the
    /// least-squares set instead.
    pub fn project_affine(&self, x: &DMatrix<f64>, y: &[f64]) -> DMatrix<f64> {
        let g = self.residual(x, y);
        let (gt, d, tol) = self.spectral(&g);
        let coeffs: Vec<f64> = gt
            .iter()
            .zip(&d)
            .map(|(gi, di)| if *di > tol && *di > 0.0 { gi / di } else { 0.0 })
            .collect();
        let back = self.from_spectral(&coeffs);
        x - self.op.adjoint_raw(&back)
    }

    /// Exact Euclidean projection onto the residual ball, via the secular
    /// equation ‖(I + λ·A·A*)⁻¹ g‖ = radius solved by bisection in λ.
    pub fn project_ball(&self, x: &DMatrix<f64>, y: &[f64], radius: f64) -> DMatrix<f64> {
        if radius <= 0.0 {
            return self.project_affine(x, y);
        }
        let g = self.residual(x, y);
        if norm(&g) <= radius {
            return x.clone();
        }
        let (gt, d, tol) = self.spectral(&g);
        let active = |i: usize| d[i] > tol && d[i] > 0.0;
        let floor: f64 = (0..gt.len())
            .filter(|&i| !active(i))
            .map(|i| gt[i] * gt[i])
            .sum::<f64>()
            .sqrt();
        if floor >= radius {
            return self.project_affine(x, y);
        }
        let resid = |lam: f64| -> f64 {
            (0..gt.len())
                .map(|i| {
                    let r = if active(i) { gt[i] / (1.0 + lam * d[i]) } else { gt[i] };
                    r * r
                })
                .sum::<f64>()
                .sqrt()
        };
        let mut lo = 0.0;
        let mut hi = 1.0;
        let mut guard = 0;
        while resid(hi) > radius && guard < 400 {
            lo = hi;
            hi *= 2.0;
            guard += 1;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if resid(mid) > radius {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let lam = hi;
        // z = x − λ·A*(r) with r = (I + λ A A*)⁻¹ g on the active part
        let coeffs: Vec<f64> = (0..gt.len())
            .map(|i| if active(i) { lam * gt[i] / (1.0 + lam * d[i]) } else { 0.0 })
            .collect();
        let back = self.from_spectral(&coeffs);
        x - self.op.adjoint_raw(&back)
    }

    pub fn project(&self, x: &DMatrix<f64>, y: &[f64], radius: f64) -> DMatrix<f64> {
        if radius > 0.0 {
            self.project_ball(x, y, radius)
        } else {
            self.project_affine(x, y)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurements::{gaussian_operator, random_mask_operator};
    use crate::rng::{normal_matrix, normal_vec, stream, Purpose};

    #[test]
    fn affine_projection_is_feasible_and_idempotent() {
        for op in [gaussian_operator(4, 9, 1).unwrap(), random_mask_operator(4, 9, 0.5, 2).unwrap()] {
            let pr = Projector::new(&op);
            let mut rng = stream(5, Purpose::Test, 30);
            let y = normal_vec(&mut rng, 9);
            let x = normal_matrix(&mut rng, 4, 4);
            let p = pr.project_affine(&x, &y);
            assert!(pr.residual_norm(&p, &y) < 1e-10);
            let pp = pr.project_affine(&p, &y);
            assert!((&pp - &p).amax() < 1e-12);
            // x − P(x) is orthogonal to the kernel: compare with a feasible shift
            let q = pr.project_affine(&normal_matrix(&mut rng, 4, 4), &y);
            let lhs = (&x - &p).dot(&(&q - &p));
            assert!(lhs.abs() < 1e-10);
        }
    }

    #[test]
    fn ball_projection_hits_radius_and_is_optimal() {
        let op = gaussian_operator(4, 7, 3).unwrap();
        let pr = Projector::new(&op);
        let mut rng = stream(6, Purpose::Test, 31);
        let y = normal_vec(&mut rng, 7);
        let x = normal_matrix(&mut rng, 4, 4);
        let r0 = pr.residual_norm(&x, &y);
        let radius = 0.3 * r0;
        let z = pr.project_ball(&x, &y, radius);
        assert!((pr.residual_norm(&z, &y) - radius).abs() < 1e-9 * r0.max(1.0));
        // no feasible point sampled nearby is closer to x
        let dist = (&z - &x).norm();
        for _ in 0..2000 {
            let cand = &z + normal_matrix(&mut rng, 4, 4) * 0.05;
            if pr.residual_norm(&cand, &y) <= radius {
                assert!((&cand - &x).norm() >= dist - 1e-12);
            }
        }
        // points already inside are untouched
        let inside = pr.project_ball(&z, &y, radius * 2.0);
        assert_eq!(inside, z);
    }
}
