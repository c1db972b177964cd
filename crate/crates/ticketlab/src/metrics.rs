//! Quality scoring: Gaussian fits of sample sets, exact Fréchet distance
//! between the fits, matching verdicts, and best/extreme curve statistics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("gaussian_fit: need at least {need} samples of dimension {dim}, got {got}")]
    TooFewSamples { need: usize, dim: usize, got: usize },
    #[error("frechet_distance: dimension mismatch ({a} vs {b})")]
    DimMismatch { a: usize, b: usize },
    #[error("covariance is not PSD within tolerance (min eigenvalue {min_eig})")]
    NotPsd { min_eig: f64 },
    #[error("curve sparsities must be strictly increasing (at index {index})")]
    CurveNotIncreasing { index: usize },
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Mean and unbiased covariance of a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// Row-major `dim x dim`, symmetric.
    pub cov: Vec<f64>,
    pub dim: usize,
    pub count: usize,
}

/// Fits mean and unbiased (`n - 1`) covariance; requires `n >= 2`.
pub fn gaussian_fit(samples: &Tensor) -> Result<GaussianStats> {
    let n = samples.shape()[0];
    let d = samples.shape()[1];
    if n < 2 {
        return Err(MetricsError::TooFewSamples {
            need: 2,
            dim: d,
            got: n,
        });
    }
    let data = samples.data();
    let mut mean = vec![0.0; d];
    for row in data.chunks(d) {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    for row in data.chunks(d) {
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += di * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / (n - 1) as f64;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    Ok(GaussianStats {
        mean,
        cov,
        dim: d,
        count: n,
    })
}

fn psd_sqrt(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let min_eig = eig.eigenvalues.min();
    if min_eig < -tol {
        return Err(MetricsError::NotPsd { min_eig });
    }
    let roots = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()),
    );
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// Squared Fréchet distance between two Gaussians:
/// `||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2})`.
///
/// The cross term is computed from the symmetrized product
/// `S_a^{1/2} S_b S_a^{1/2}`; eigenvalues below zero are clamped.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim != b.dim {
        return Err(MetricsError::DimMismatch { a: a.dim, b: b.dim });
    }
    let d = a.dim;
    let sa = DMatrix::from_row_slice(d, d, &a.cov);
    let sb = DMatrix::from_row_slice(d, d, &b.cov);
    let scale = 1.0f64.max(sa.amax()).max(sb.amax());
    let tol = 1e-8 * scale;

    let mean_term: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();

    let a_half = psd_sqrt(&sa, tol)?;
    let inner = &a_half * &sb * &a_half;
    let cross = psd_sqrt(&inner, tol)?;

    let trace_term = sa.trace() + sb.trace() - 2.0 * cross.trace();
    // Identical stats can land a hair below zero in floating point.
    Ok((mean_term + trace_term).max(0.0))
}

/// True iff the subnetwork score is within `tol_factor` of the full
/// model's score (both from equal step budgets).
pub fn is_matching(score_sub: f64, score_full: f64, tol_factor: f64) -> bool {
    score_sub <= score_full * tol_factor
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub sparsity: f64,
    pub score: f64,
}

/// Seed-averaged score-vs-sparsity points, strictly increasing in sparsity.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    points: Vec<CurvePoint>,
}

impl Curve {
    pub fn new(points: Vec<CurvePoint>) -> Result<Self> {
        for (i, pair) in points.windows(2).enumerate() {
            if pair[1].sparsity <= pair[0].sparsity {
                return Err(MetricsError::CurveNotIncreasing { index: i + 1 });
            }
        }
        Ok(Curve { points })
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Best point by score and the sparsest point that still matches
/// `score_full` at `tol`; the extreme is absent when nothing matches.
pub fn best_and_extreme(
    curve: &Curve,
    score_full: f64,
    tol_factor: f64,
) -> (Option<CurvePoint>, Option<CurvePoint>) {
    let best = curve
        .points
        .iter()
        .copied()
        .min_by(|a, b| a.score.total_cmp(&b.score));
    let extreme = curve
        .points
        .iter()
        .copied()
        .filter(|p| is_matching(p.score, score_full, tol_factor))
        .max_by(|a, b| a.sparsity.total_cmp(&b.sparsity));
    (best, extreme)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(mean: Vec<f64>, cov: Vec<f64>) -> GaussianStats {
        let dim = mean.len();
        GaussianStats {
            mean,
            cov,
            dim,
            count: 1000,
        }
    }

    /// Independent 2x2 oracle: eigenvalues of `S_a S_b` from the
    /// characteristic polynomial, trace of the root from scalar sqrt.
    fn frechet_oracle_2x2(a: &GaussianStats, b: &GaussianStats) -> f64 {
        let m = |s: &GaussianStats, i: usize, j: usize| s.cov[i * 2 + j];
        // P = S_a * S_b
        let p00 = m(a, 0, 0) * m(b, 0, 0) + m(a, 0, 1) * m(b, 1, 0);
        let p01 = m(a, 0, 0) * m(b, 0, 1) + m(a, 0, 1) * m(b, 1, 1);
        let p10 = m(a, 1, 0) * m(b, 0, 0) + m(a, 1, 1) * m(b, 1, 0);
        let p11 = m(a, 1, 0) * m(b, 0, 1) + m(a, 1, 1) * m(b, 1, 1);
        let tr = p00 + p11;
        let det = p00 * p11 - p01 * p10;
        let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
        let l1 = ((tr + disc) / 2.0).max(0.0);
        let l2 = ((tr - disc) / 2.0).max(0.0);
        let tr_sqrt = l1.sqrt() + l2.sqrt();
        let dmu: f64 = a
            .mean
            .iter()
            .zip(&b.mean)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        dmu + m(a, 0, 0) + m(a, 1, 1) + m(b, 0, 0) + m(b, 1, 1) - 2.0 * tr_sqrt
    }

    #[test]
    fn identical_stats_score_zero() {
        let a = stats(vec![0.3, -0.7], vec![2.0, 0.5, 0.5, 1.0]);
        assert!(frechet_distance(&a, &a).unwrap() < 1e-12);
    }

    #[test]
    fn identity_covs_mean_shift() {
        let a = stats(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]);
        let b = stats(vec![3.0, 4.0], vec![1.0, 0.0, 0.0, 1.0]);
        let d = frechet_distance(&a, &b).unwrap();
        assert!((d - 25.0).abs() < 1e-9, "{d}");
    }

    #[test]
    fn matches_eigen_oracle_on_random_psd_pairs() {
        struct Lcg(u64);
        impl Lcg {
            fn next(&mut self) -> f64 {
                self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (self.0 >> 11) as f64 / (1u64 << 53) as f64
            }
            // Random PSD 2x2 via A^T A + eps I.
            fn psd(&mut self) -> Vec<f64> {
                let (a, b) = (self.next() * 2.0 - 1.0, self.next() * 2.0 - 1.0);
                let (c, d) = (self.next() * 2.0 - 1.0, self.next() * 2.0 - 1.0);
                vec![
                    a * a + c * c + 0.01,
                    a * b + c * d,
                    a * b + c * d,
                    b * b + d * d + 0.01,
                ]
            }
        }
        let mut rng = Lcg(0x1234_5678);
        for _ in 0..200 {
            let ga = {
                let mean = vec![rng.next(), rng.next()];
                stats(mean, rng.psd())
            };
            let gb = {
                let mean = vec![rng.next(), rng.next()];
                stats(mean, rng.psd())
            };
            let d = frechet_distance(&ga, &gb).unwrap();
            let oracle = frechet_oracle_2x2(&ga, &gb);
            assert!((d - oracle).abs() < 1e-8, "{d} vs {oracle}");
        }
    }

    #[test]
    fn symmetric_and_nonnegative() {
        let a = stats(vec![1.0, 2.0], vec![1.5, 0.2, 0.2, 0.7]);
        let b = stats(vec![-1.0, 0.5], vec![0.9, -0.1, -0.1, 2.0]);
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        assert!(ab >= 0.0);
        assert!((ab - ba).abs() < 1e-9);
    }

    #[test]
    fn translation_leaves_score_unchanged() {
        let base = Tensor::from_vec(
            vec![4, 2],
            vec![0.0, 0.0, 1.0, 0.5, -0.5, 2.0, 0.25, -1.0],
        )
        .unwrap();
        let shifted = Tensor::from_vec(
            vec![4, 2],
            base.data().chunks(2).flat_map(|p| [p[0] + 3.0, p[1] - 2.0]).collect(),
        )
        .unwrap();
        let other = Tensor::from_vec(
            vec![4, 2],
            vec![0.1, 0.0, 2.0, 0.25, -1.5, 1.0, 0.75, -0.5],
        )
        .unwrap();
        let other_shifted = Tensor::from_vec(
            vec![4, 2],
            other.data().chunks(2).flat_map(|p| [p[0] + 3.0, p[1] - 2.0]).collect(),
        )
        .unwrap();
        let d0 = frechet_distance(&gaussian_fit(&base).unwrap(), &gaussian_fit(&other).unwrap()).unwrap();
        let d1 = frechet_distance(
            &gaussian_fit(&shifted).unwrap(),
            &gaussian_fit(&other_shifted).unwrap(),
        )
        .unwrap();
        assert!((d0 - d1).abs() < 1e-9);
    }

    #[test]
    fn scaling_one_set_increases_distinct_stats_score() {
        let a = stats(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]);
        let b = stats(vec![0.0, 0.0], vec![2.0, 0.0, 0.0, 2.0]);
        let b4 = stats(vec![0.0, 0.0], vec![4.0, 0.0, 0.0, 4.0]);
        let d2 = frechet_distance(&a, &b).unwrap();
        let d4 = frechet_distance(&a, &b4).unwrap();
        assert!(d4 > d2 && d2 > 0.0);
    }

    #[test]
    fn fit_trivial_cases() {
        let same = Tensor::from_vec(vec![3, 2], vec![1.0, -2.0, 1.0, -2.0, 1.0, -2.0]).unwrap();
        let s = gaussian_fit(&same).unwrap();
        assert_eq!(s.mean, vec![1.0, -2.0]);
        assert!(s.cov.iter().all(|&c| c == 0.0));

        let two = Tensor::from_vec(vec![2, 2], vec![0.0, 0.0, 2.0, 0.0]).unwrap();
        let s = gaussian_fit(&two).unwrap();
        assert_eq!(s.mean, vec![1.0, 0.0]);
        assert_eq!(s.cov, vec![2.0, 0.0, 0.0, 0.0]);

        let too_few = Tensor::from_vec(vec![1, 3], vec![0.0; 3]).unwrap();
        assert!(gaussian_fit(&too_few).is_err());
    }

    #[test]
    fn fit_of_standard_normal_sample() {
        use rand::Rng;
        let mut rng = crate::rng::rng_from(99);
        let n = 40_000;
        let data: Vec<f64> = (0..n * 2)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let t = Tensor::from_vec(vec![n, 2], data).unwrap();
        let s = gaussian_fit(&t).unwrap();
        let bound = 3.0 / (n as f64).sqrt();
        for i in 0..2 {
            assert!(s.mean[i].abs() < bound * 2.0);
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((s.cov[i * 2 + j] - expect).abs() < bound * 2.0);
            }
        }
    }

    #[test]
    fn matching_verdicts() {
        assert!(is_matching(10.0, 10.0, 1.0));
        assert!(is_matching(10.0, 10.0, 1.05));
        assert!(!is_matching(20.0, 10.0, 1.05));
    }

    #[test]
    fn best_and_extreme_hand_case() {
        let curve = Curve::new(vec![
            CurvePoint { sparsity: 0.2, score: 10.0 },
            CurvePoint { sparsity: 0.36, score: 9.0 },
            CurvePoint { sparsity: 0.488, score: 12.0 },
        ])
        .unwrap();
        let (best, extreme) = best_and_extreme(&curve, 10.0, 1.05);
        let best = best.unwrap();
        assert_eq!((best.sparsity, best.score), (0.36, 9.0));
        let extreme = extreme.unwrap();
        assert_eq!(extreme.sparsity, 0.36);
    }

    #[test]
    fn single_dense_point_is_its_own_best_and_extreme() {
        let curve = Curve::new(vec![CurvePoint { sparsity: 0.0, score: 15.0 }]).unwrap();
        let (best, extreme) = best_and_extreme(&curve, 15.0, 1.05);
        assert_eq!(best.unwrap().sparsity, 0.0);
        assert_eq!(extreme.unwrap().sparsity, 0.0);
    }

    #[test]
    fn curve_rejects_non_increasing_sparsity() {
        assert!(Curve::new(vec![
            CurvePoint { sparsity: 0.2, score: 1.0 },
            CurvePoint { sparsity: 0.2, score: 2.0 },
        ])
        .is_err());
    }
}
