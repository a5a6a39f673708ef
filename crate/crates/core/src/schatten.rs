//! Schatten and weak-Schatten quasi-norms, spectral truncation, and the
//! block decompositions of a matrix relative to the singular frame of a
//! reference matrix.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{compose, svd, svd_dense, Mat, SvdFactors, RANK_RTOL};

pub(crate) fn check_p(p: f64) -> Result<()> {
    if p.is_nan() || p <= 0.0 {
        return Err(Error::param("p", format!("must be > 0, got {p}")));
    }
    Ok(())
}

/// (Σ σᵢᵖ)^{1/p} on a spectrum; `p = ∞` gives the largest entry.
pub fn schatten_of(sigma: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        return sigma.iter().copied().fold(0.0, f64::max);
    }
    if p == 2.0 {
        return sigma.iter().map(|s| s * s).sum::<f64>().sqrt();
    }
    if p == 1.0 {
        return sigma.iter().sum();
    }
    power_sum(sigma, p).powf(1.0 / p)
}

/// Σ σᵢᵖ, the p-th power of the quasi-norm.
///
/// Values at or below `RANK_RTOL · σ_max` count as exact zeros; for p < 1
/// rounding noise at 1e-16 would otherwise contribute O(1e-8) per value.
pub fn power_sum(sigma: &[f64], p: f64) -> f64 {
    let floor = RANK_RTOL * sigma.iter().copied().fold(0.0, f64::max);
    sigma.iter().filter(|&&s| s > floor).map(|s| s.powf(p)).sum()
}

/// max_k k^{1/p} σ*_k on a nonincreasing spectrum.
pub fn weak_schatten_of(sigma: &[f64], p: f64) -> f64 {
    sigma
        .iter()
        .enumerate()
        .map(|(k, &s)| ((k + 1) as f64).powf(1.0 / p) * s)
        .fold(0.0, f64::max)
}

/// Schatten p-(quasi)norm ‖X‖_{S_p}. Pass `f64::INFINITY` for the operator norm.
pub fn schatten_norm(x: &Mat, p: f64) -> Result<f64> {
    check_p(p)?;
    let sigma = crate::linalg::singular_values(x)?;
    Ok(schatten_of(&sigma, p))
}

/// Weak Schatten quasi-norm ‖X‖_{S_{p,∞}} = max_k k^{1/p} σ*_k.
pub fn weak_schatten_norm(x: &Mat, p: f64) -> Result<f64> {
    check_p(p)?;
    let sigma = crate::linalg::singular_values(x)?;
    Ok(weak_schatten_of(&sigma, p))
}

fn check_rank(s: usize, n: usize) -> Result<()> {
    if s > n {
        return Err(Error::param("s", format!("rank {s} exceeds matrix side {n}")));
    }
    Ok(())
}

/// Best rank-s approximation X_{[s]}: keep the s largest singular triples.
pub fn spectral_truncate(x: &Mat, s: usize) -> Result<Mat> {
    check_rank(s, x.n())?;
    let f = svd(x)?;
    Ok(truncate_factors(&f, s))
}

pub(crate) fn truncate_factors(f: &SvdFactors, s: usize) -> Mat {
    let kept: Vec<f64> = f
        .sigma
        .iter()
        .enumerate()
        .map(|(i, &v)| if i < s { v } else { 0.0 })
        .collect();
    f.compose(&kept)
}

/// ρ_s(X)_{S_p} = ‖X − X_{[s]}‖_{S_p} = (Σ_{i>s} σᵢᵖ)^{1/p}.
pub fn best_rank_error(x: &Mat, s: usize, p: f64) -> Result<f64> {
    check_p(p)?;
    check_rank(s, x.n())?;
    let sigma = crate::linalg::singular_values(x)?;
    Ok(schatten_of(&sigma[s..], p))
}

/// Z = head + tail, split in the singular frame (U, V) of a reference X.
///
/// With UᵀZV partitioned at index s, `head` keeps the blocks Z₁₁, Z₁₂, Z₂₁
/// and `tail` keeps Z₂₂ only.
#[derive(Clone, Debug)]
pub struct BlockSplit {
    pub head: Mat,
    pub tail: Mat,
    pub s: usize,
}

fn frame_coords(z: &Mat, frame: &SvdFactors) -> DMatrix<f64> {
    frame.u.inner().transpose() * z.inner() * frame.v.inner()
}

pub fn block_split(z: &Mat, frame: &SvdFactors, s: usize) -> Result<BlockSplit> {
    let n = z.n();
    if frame.n() != n {
        return Err(Error::Dimension {
            expected: n,
            got: frame.n(),
        });
    }
    if s == 0 || s >= n {
        return Err(Error::param("s", format!("need 1 <= s < N = {n}, got {s}")));
    }
    let coords = frame_coords(z, frame);
    let mut tail_coords = DMatrix::zeros(n, n);
    tail_coords
        .view_mut((s, s), (n - s, n - s))
        .copy_from(&coords.view((s, s), (n - s, n - s)));
    let tail = frame.u.inner() * tail_coords * frame.v.inner().transpose();
    // head as the exact complement keeps head + tail == Z to rounding
    let head = z.inner() - &tail;
    Ok(BlockSplit {
        head: Mat::wrap(head),
        tail: Mat::wrap(tail),
        s,
    })
}

/// The tail Z₂₂ cut into consecutive groups of `t` singular triples, each
/// rotated back into the ambient space.
#[derive(Clone, Debug)]
pub struct TailBlocks {
    pub blocks: Vec<Mat>,
    pub t: usize,
    /// Singular values carried by each block, nonincreasing across blocks.
    pub block_sigma: Vec<Vec<f64>>,
}

impl TailBlocks {
    pub fn sum(&self) -> Option<Mat> {
        let mut it = self.blocks.iter();
        let first = it.next()?.clone();
        Some(it.fold(first, |acc, b| &acc + b))
    }
}

pub fn tail_blocks(tail: &Mat, frame: &SvdFactors, s: usize, t: usize) -> Result<TailBlocks> {
    let n = tail.n();
    if frame.n() != n {
        return Err(Error::Dimension {
            expected: n,
            got: frame.n(),
        });
    }
    if t == 0 {
        return Err(Error::param("t", "block size must be >= 1"));
    }
    if s >= n {
        return Err(Error::param("s", format!("need s < N = {n}, got {s}")));
    }
    let coords = frame_coords(tail, frame);
    let z22 = coords.view((s, s), (n - s, n - s)).into_owned();
    let (p, lambda, q) = svd_dense(&z22)?;
    let mut blocks = Vec::new();
    let mut block_sigma = Vec::new();
    let mut start = 0;
    while start < lambda.len() {
        let end = (start + t).min(lambda.len());
        let vals: Vec<f64> = (0..lambda.len())
            .map(|i| if i >= start && i < end { lambda[i] } else { 0.0 })
            .collect();
        let inner = compose(&p, &vals, &q);
        let mut full = DMatrix::zeros(n, n);
        full.view_mut((s, s), (n - s, n - s)).copy_from(&inner);
        let ambient = frame.u.inner() * full * frame.v.inner().transpose();
        blocks.push(Mat::wrap(ambient));
        block_sigma.push(lambda[start..end].to_vec());
        start = end;
    }
    Ok(TailBlocks {
        blocks,
        t,
        block_sigma,
    })
}

/// Consecutive groups of `t` singular triples of Z itself (no head block).
pub fn spectral_blocks(z: &Mat, t: usize) -> Result<Vec<Mat>> {
    if t == 0 {
        return Err(Error::param("t", "block size must be >= 1"));
    }
    let f = svd(z)?;
    let n = f.n();
    Ok((0..n)
        .step_by(t)
        .map(|start| {
            let vals: Vec<f64> = (0..n)
                .map(|i| if i >= start && i < start + t { f.sigma[i] } else { 0.0 })
                .collect();
            f.compose(&vals)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::singular_values;
    use crate::rng::{normal_matrix, orthogonal, stream, Purpose};
    use nalgebra::SymmetricEigen;

    fn random(n: usize, seed: u64) -> Mat {
        Mat::new(normal_matrix(&mut stream(seed, Purpose::Test, 10), n, n)).unwrap()
    }

    fn eigen_sigma(x: &Mat) -> Vec<f64> {
        let g = x.inner().transpose() * x.inner();
        let mut ev: Vec<f64> = SymmetricEigen::new(g)
            .eigenvalues
            .iter()
            .map(|l| l.max(0.0).sqrt())
            .collect();
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        ev
    }

    #[test]
    fn norm_examples() {
        assert!((schatten_norm(&Mat::identity(3), 2.0).unwrap() - 3f64.sqrt()).abs() < 1e-12);
        assert!((schatten_norm(&Mat::diag(&[3.0, 4.0]), 1.0).unwrap() - 7.0).abs() < 1e-12);
        assert!((schatten_norm(&Mat::diag(&[3.0, 4.0]), f64::INFINITY).unwrap() - 4.0).abs() < 1e-12);
        assert!((weak_schatten_norm(&Mat::diag(&[4.0, 1.0]), 1.0).unwrap() - 4.0).abs() < 1e-12);
        assert!((weak_schatten_norm(&Mat::identity(3), 0.5).unwrap() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn norm_rejects_bad_p() {
        assert!(schatten_norm(&Mat::identity(2), 0.0).is_err());
        assert!(schatten_norm(&Mat::identity(2), -1.0).is_err());
        assert!(weak_schatten_norm(&Mat::identity(2), 0.0).is_err());
        assert!(schatten_norm(&Mat::identity(2), f64::NAN).is_err());
    }

    #[test]
    fn quasi_norms_match_eigen_oracle() {
        let x = random(4, 1);
        let sig = eigen_sigma(&x);
        let want = sig.iter().map(|s| s.sqrt()).sum::<f64>().powi(2);
        assert!((schatten_norm(&x, 0.5).unwrap() - want).abs() < 1e-8);

        let y = random(6, 2);
        let sig = eigen_sigma(&y);
        let want = sig
            .iter()
            .enumerate()
            .map(|(k, s)| ((k + 1) as f64).powf(1.5) * s)
            .fold(0.0, f64::max);
        assert!((weak_schatten_norm(&y, 2.0 / 3.0).unwrap() - want).abs() < 1e-8);
    }

    #[test]
    fn truncation_examples() {
        let t = spectral_truncate(&Mat::diag(&[3.0, 2.0, 1.0]), 1).unwrap();
        assert!((&t - &Mat::diag(&[3.0, 0.0, 0.0])).max_abs() < 1e-12);
        let x = random(5, 3);
        assert!((&spectral_truncate(&x, 5).unwrap() - &x).max_abs() < 1e-10);
        assert!(spectral_truncate(&x, 6).is_err());
        let r2 = spectral_truncate(&x, 2).unwrap();
        assert!(singular_values(&r2).unwrap()[2] < 1e-9);
    }

    #[test]
    fn truncation_beats_random_rank2_competitors() {
        let x = random(5, 4);
        let best = (&x - &spectral_truncate(&x, 2).unwrap()).frobenius();
        let mut rng = stream(4, Purpose::Test, 11);
        for _ in 0..1000 {
            let g = normal_matrix(&mut rng, 5, 2);
            let h = normal_matrix(&mut rng, 5, 2);
            let y = Mat::new(g * h.transpose()).unwrap();
            // least-squares optimal scale for the competitor direction
            let c = x.dot(&y) / y.dot(&y);
            let err = (&x - &y.scale(c)).frobenius();
            assert!(err >= best - 1e-12);
        }
    }

    #[test]
    fn best_rank_error_examples() {
        let d = Mat::diag(&[3.0, 2.0, 1.0]);
        assert!((best_rank_error(&d, 1, 1.0).unwrap() - 3.0).abs() < 1e-12);
        assert!((best_rank_error(&d, 1, 2.0).unwrap() - 5f64.sqrt()).abs() < 1e-12);
        let g = normal_matrix(&mut stream(5, Purpose::Test, 0), 6, 2);
        let low = Mat::new(&g * g.transpose()).unwrap();
        for p in [0.3, 0.5, 1.0, 2.0] {
            assert!(best_rank_error(&low, 2, p).unwrap() < 1e-6);
        }
    }

    #[test]
    fn block_split_diagonal_frame() {
        let frame = svd(&Mat::diag(&[5.0, 4.0, 3.0])).unwrap();
        let b = block_split(&Mat::identity(3), &frame, 2).unwrap();
        assert!((&b.head - &Mat::diag(&[1.0, 1.0, 0.0])).max_abs() < 1e-12);
        assert!((&b.tail - &Mat::diag(&[0.0, 0.0, 1.0])).max_abs() < 1e-12);
        assert!(block_split(&Mat::identity(3), &frame, 0).is_err());
        assert!(block_split(&Mat::identity(3), &frame, 3).is_err());
    }

    #[test]
    fn block_split_partition_and_rank_bound() {
        for seed in 0..200u64 {
            let n = 3 + (seed % 6) as usize;
            let s = 1 + (seed as usize / 7) % (n - 1);
            let z = random(n, 1000 + seed);
            let frame = svd(&random(n, 2000 + seed)).unwrap();
            let b = block_split(&z, &frame, s).unwrap();
            let rec = &b.head + &b.tail;
            assert!((&rec - &z).max_abs() <= 1e-12 * z.max_abs().max(1.0));
            // tail lives in the bottom-right block of the frame
            let c = frame.u.inner().transpose() * b.tail.inner() * frame.v.inner();
            for i in 0..n {
                for j in 0..n {
                    if i < s || j < s {
                        assert!(c[(i, j)].abs() < 1e-10);
                    }
                }
            }
            let sig = singular_values(&b.head).unwrap();
            let rank = sig.iter().filter(|&&v| v > 1e-9).count();
            assert!(rank <= 2 * s, "rank {rank} > 2s = {}", 2 * s);
        }
    }

    #[test]
    fn tail_blocks_greedy_grouping() {
        let frame = svd(&Mat::diag(&[9.0, 8.0, 7.0, 6.0, 5.0, 4.0])).unwrap();
        let z = Mat::diag(&[1.0, 5.0, 4.0, 3.0, 2.0, 1.0]);
        let split = block_split(&z, &frame, 1).unwrap();
        let tb = tail_blocks(&split.tail, &frame, 1, 2).unwrap();
        let got: Vec<Vec<f64>> = tb
            .block_sigma
            .iter()
            .map(|b| b.iter().map(|v| (v * 1e9).round() / 1e9).collect())
            .collect();
        assert_eq!(got, vec![vec![5.0, 4.0], vec![3.0, 2.0], vec![1.0]]);
        assert!(tail_blocks(&split.tail, &frame, 1, 0).is_err());
        let small = svd(&Mat::identity(2)).unwrap();
        assert!(tail_blocks(&split.tail, &small, 1, 2).is_err());
    }

    #[test]
    fn tail_blocks_additivity_and_interlacing() {
        for seed in 0..200u64 {
            let n = 6 + (seed % 4) as usize;
            let s = 1 + (seed % 2) as usize;
            let t = 1 + (seed % 3) as usize;
            let z = random(n, 3000 + seed);
            let frame = svd(&random(n, 4000 + seed)).unwrap();
            let split = block_split(&z, &frame, s).unwrap();
            let tb = tail_blocks(&split.tail, &frame, s, t).unwrap();
            let sum = tb.sum().unwrap();
            assert!((&sum - &split.tail).frobenius() <= 1e-10 * split.tail.frobenius().max(1.0));
            // additivity of p-th powers over disjoint singular supports
            let p = 0.5;
            let direct = power_sum(&singular_values(&split.tail).unwrap(), p);
            let parts: f64 = tb
                .blocks
                .iter()
                .map(|b| power_sum(&singular_values(b).unwrap(), p))
                .sum();
            assert!((direct - parts).abs() <= 1e-8 * direct.max(1.0));
            // block k is dominated by block k-1
            for w in tb.block_sigma.windows(2) {
                assert!(w[1].iter().all(|&v| w[0].iter().all(|&u| v <= u + 1e-12)));
            }
            for p in [0.5, 1.0] {
                for k in 1..tb.blocks.len() {
                    let lhs = tb.blocks[k].frobenius();
                    let prev = schatten_norm(&tb.blocks[k - 1], p).unwrap();
                    let rhs = (t as f64).powf(0.5 - 1.0 / p) * prev;
                    assert!(lhs <= rhs + 1e-10, "k={k} {lhs} > {rhs}");
                }
            }
        }
    }

    #[test]
    fn tail_blocks_pairwise_orthogonal() {
        let n = 8;
        let frame = svd(&random(n, 77)).unwrap();
        let split = block_split(&random(n, 78), &frame, 2).unwrap();
        let tb = tail_blocks(&split.tail, &frame, 2, 2).unwrap();
        for i in 0..tb.blocks.len() {
            for j in 0..tb.blocks.len() {
                if i == j {
                    continue;
                }
                let (a, b) = (&tb.blocks[i], &tb.blocks[j]);
                assert!((a.inner().transpose() * b.inner()).amax() < 1e-10);
                assert!((a.inner() * b.inner().transpose()).amax() < 1e-10);
                for p in [0.3, 0.5, 1.0] {
                    let lhs = power_sum(&singular_values(&(a + b)).unwrap(), p);
                    let rhs = power_sum(&singular_values(a).unwrap(), p)
                        + power_sum(&singular_values(b).unwrap(), p);
                    assert!((lhs - rhs).abs() < 1e-9 * rhs.max(1.0));
                }
            }
        }
    }

    #[test]
    fn spectral_blocks_sum_to_matrix() {
        let q = orthogonal(&mut stream(9, Purpose::Test, 0), 5);
        let z = Mat::new(&q * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![5.0, 4.0, 3.0, 2.0, 1.0]))).unwrap();
        let blocks = spectral_blocks(&z, 2).unwrap();
        assert_eq!(blocks.len(), 3);
        let sum = blocks.iter().skip(1).fold(blocks[0].clone(), |a, b| &a + b);
        assert!((&sum - &z).max_abs() < 1e-10);
    }
}
