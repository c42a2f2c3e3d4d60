//! Monte-Carlo estimates of how much probability each class's inputs put on
//! every wrong class.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::moments::LogitMoments;
use crate::error::{Error, Result};
use crate::nn::softmax_unchecked;
use crate::rng::{rng_from, STREAM_CONFUSION};

/// Upper end of the jitter escalation, relative to the mean variance.
const MAX_JITTER: f64 = 1e-2;
const FIRST_JITTER: f64 = 1e-6;

/// `s[(n, j)]` is the mean softmax probability of class `j` for class-`n`
/// inputs. The diagonal is stored as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    s: DMatrix<f64>,
}

impl ConfusionMatrix {
    pub fn new(mut s: DMatrix<f64>) -> Result<Self> {
        if s.nrows() != s.ncols() || s.nrows() < 2 {
            return Err(Error::Shape(format!(
                "confusion matrix must be square with N >= 2, got {}x{}",
                s.nrows(),
                s.ncols()
            )));
        }
        for n in 0..s.nrows() {
            s[(n, n)] = 0.0;
        }
        if s.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Numeric(
                "confusion entries must lie in [0, 1]".into(),
            ));
        }
        Ok(ConfusionMatrix { s })
    }

    pub fn classes(&self) -> usize {
        self.s.nrows()
    }

    pub fn get(&self, n: usize, j: usize) -> f64 {
        self.s[(n, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.s
    }

    /// Mean over true classes `n != j` of `s[(n, j)]`, for every `j`.
    pub fn column_means(&self) -> DVector<f64> {
        let n = self.classes();
        DVector::from_fn(n, |j, _| self.s.column(j).sum() / (n - 1) as f64)
    }

    /// Elementwise average of two estimates.
    pub fn average(&self, other: &ConfusionMatrix) -> Result<ConfusionMatrix> {
        if self.classes() != other.classes() {
            return Err(Error::Shape("confusion matrices differ in size".into()));
        }
        ConfusionMatrix::new((&self.s + &other.s) * 0.5)
    }
}

/// Lower factor `L` with `L Lᵀ ≈ cov`. An all-zero covariance gets a zero
/// factor so that deterministic logits stay deterministic.
pub fn covariance_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("covariance is not finite".into()));
    }
    if cov.amax() == 0.0 {
        return Ok(DMatrix::zeros(n, n));
    }
    if let Some(c) = Cholesky::new(cov.clone()) {
        return Ok(c.l());
    }
    let scale = cov.diagonal().abs().mean().max(f64::MIN_POSITIVE);
    let mut jitter = FIRST_JITTER;
    while jitter <= MAX_JITTER * (1.0 + 1e-12) {
        let shifted = cov + DMatrix::identity(n, n) * (jitter * scale);
        if let Some(c) = Cholesky::new(shifted) {
            return Ok(c.l());
        }
        jitter *= 10.0;
    }
    Err(Error::Numeric(
        "covariance factorization failed at maximum jitter".into(),
    ))
}

/// Fixed Gaussian noise per class, so the confusion can be re-estimated for
/// shifted means with common random numbers.
#[derive(Debug, Clone)]
pub struct ConfusionSampler {
    /// Per class, an `N x M` matrix of correlated zero-mean draws.
    noise: Vec<DMatrix<f64>>,
}

impl ConfusionSampler {
    pub fn new(moments: &LogitMoments, samples: usize, seed: u64) -> Result<Self> {
        if samples < 1 {
            return Err(Error::Argument("need at least one Monte-Carlo sample".into()));
        }
        let n = moments.classes();
        let noise = (0..n)
            .into_par_iter()
            .map(|class| {
                let l = covariance_factor(&moments.sigma[class])?;
                let mut rng = rng_from(seed, &[STREAM_CONFUSION, class as u64]);
                let z = DMatrix::from_fn(n, samples, |_, _| StandardNormal.sample(&mut rng));
                Ok(l * z)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ConfusionSampler { noise })
    }

    pub fn samples(&self) -> usize {
        self.noise[0].ncols()
    }

    /// Confusion for class means `mu` (row `n` = mean of class `n`).
    pub fn estimate(&self, mu: &DMatrix<f64>) -> Result<ConfusionMatrix> {
        let n = self.noise.len();
        if mu.nrows() != n || mu.ncols() != n {
            return Err(Error::Shape("mean matrix does not match the sampler".into()));
        }
        let rows: Vec<DVector<f64>> = (0..n)
            .into_par_iter()
            .map(|class| {
                let noise = &self.noise[class];
                if noise.iter().all(|v| *v == 0.0) {
                    let q: Vec<f64> = mu.row(class).iter().copied().collect();
                    return softmax_unchecked(&q);
                }
                let mut acc = DVector::zeros(n);
                let mut q = vec![0.0; n];
                for c in 0..noise.ncols() {
                    for (j, qj) in q.iter_mut().enumerate() {
                        *qj = mu[(class, j)] + noise[(j, c)];
                    }
                    acc += softmax_unchecked(&q);
                }
                acc / noise.ncols() as f64
            })
            .collect();
        let mut s = DMatrix::zeros(n, n);
        for (class, row) in rows.iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("softmax of sampled logits is not finite".into()));
            }
            s.set_row(class, &row.transpose());
        }
        ConfusionMatrix::new(s)
    }
}

/// `M`-sample Monte-Carlo estimate of the confusion under Gaussian logits.
pub fn mc_confusion(moments: &LogitMoments, samples: usize, seed: u64) -> Result<ConfusionMatrix> {
    ConfusionSampler::new(moments, samples, seed)?.estimate(&moments.mu)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_cov(n: usize) -> Vec<DMatrix<f64>> {
        vec![DMatrix::zeros(n, n); n]
    }

    #[test]
    fn uniform_logits_give_exact_reciprocal() {
        for n in [2, 3, 10] {
            let m = LogitMoments::new(DMatrix::zeros(n, n), zero_cov(n)).unwrap();
            let s = mc_confusion(&m, 7, 1).unwrap();
            for a in 0..n {
                for b in 0..n {
                    if a != b {
                        assert_eq!(s.get(a, b), 1.0 / n as f64);
                    }
                }
            }
        }
    }

    #[test]
    fn deterministic_ratio_three_to_one() {
        let mu = DMatrix::from_row_slice(2, 2, &[3f64.ln(), 0.0, 0.0, 0.0]);
        let m = LogitMoments::new(mu, zero_cov(2)).unwrap();
        let s = mc_confusion(&m, 5, 0).unwrap();
        assert!((s.get(0, 1) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn symmetric_noise_splits_evenly() {
        let m = LogitMoments::new(
            DMatrix::zeros(2, 2),
            vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2)],
        )
        .unwrap();
        let s = mc_confusion(&m, 100_000, 4).unwrap();
        assert!((s.get(0, 1) - 0.5).abs() < 0.005);
    }

    #[test]
    fn same_seed_same_estimate() {
        let cov = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 0.5, 0.1, 0.0, 0.1, 0.3]);
        let m = LogitMoments::new(DMatrix::from_fn(3, 3, |i, j| (i + 2 * j) as f64 * 0.1), vec![cov; 3]).unwrap();
        assert_eq!(mc_confusion(&m, 500, 9).unwrap(), mc_confusion(&m, 500, 9).unwrap());
        assert_ne!(mc_confusion(&m, 500, 9).unwrap(), mc_confusion(&m, 500, 10).unwrap());
    }

    #[test]
    fn singular_covariance_is_factored() {
        let v = DVector::from_vec(vec![1.0, -1.0, 0.5]);
        let cov = &v * v.transpose();
        let l = covariance_factor(&cov).unwrap();
        assert!((&l * l.transpose() - &cov).amax() < 1e-2 * 2.25);
    }

    #[test]
    fn indefinite_covariance_fails() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(covariance_factor(&cov), Err(Error::Numeric(_))));
    }

    #[test]
    fn zero_samples_rejected() {
        let m = LogitMoments::new(DMatrix::zeros(2, 2), zero_cov(2)).unwrap();
        assert!(matches!(mc_confusion(&m, 0, 1), Err(Error::Argument(_))));
    }
}
