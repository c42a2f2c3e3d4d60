//! Per-class logit means and covariances measured on an auxiliary set.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Model;

/// Relative diagonal jitter added to every estimated covariance.
pub const COVARIANCE_JITTER: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LogitMoments {
    /// Row `n` is the mean logit vector of class-`n` inputs.
    pub mu: DMatrix<f64>,
    /// One `N x N` covariance per class.
    pub sigma: Vec<DMatrix<f64>>,
}

impl LogitMoments {
    pub fn new(mu: DMatrix<f64>, sigma: Vec<DMatrix<f64>>) -> Result<Self> {
        let n = mu.nrows();
        if n < 2 || mu.ncols() != n || sigma.len() != n {
            return Err(Error::Shape(format!(
                "moments need an N x N mean matrix and N covariances, got {}x{} and {}",
                mu.nrows(),
                mu.ncols(),
                sigma.len()
            )));
        }
        for (k, s) in sigma.iter().enumerate() {
            if s.nrows() != n || s.ncols() != n {
                return Err(Error::Shape(format!("covariance {k} is not {n}x{n}")));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("covariance {k} is not finite")));
            }
            let tol = 1e-9 * (1.0 + s.amax());
            if (s - s.transpose()).amax() > tol {
                return Err(Error::Numeric(format!("covariance {k} is not symmetric")));
            }
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("logit means are not finite".into()));
        }
        Ok(LogitMoments { mu, sigma })
    }

    pub fn classes(&self) -> usize {
        self.mu.nrows()
    }

    pub fn mean(&self, n: usize) -> DVector<f64> {
        self.mu.row(n).transpose()
    }
}

fn jitter_for(cov: &DMatrix<f64>) -> f64 {
    COVARIANCE_JITTER * cov.diagonal().mean().max(0.0)
}

/// Empirical mean and covariance (denominator `max(count - 1, 1)`) of the
/// model's logits for each class of `aux`, plus a small relative jitter.
pub fn estimate_moments(model: &Model, aux: &Dataset) -> Result<LogitMoments> {
    let n = model.classes();
    if aux.classes() != n {
        return Err(Error::Argument(format!(
            "auxiliary data has {} classes, model has {n}",
            aux.classes()
        )));
    }
    let mut mu = DMatrix::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    for class in 0..n {
        let idx = aux.indices_of(class);
        if idx.is_empty() {
            return Err(Error::Argument(format!(
                "auxiliary data has no sample of class {class}"
            )));
        }
        let mut logits = DMatrix::zeros(n, idx.len());
        for (c, &i) in idx.iter().enumerate() {
            logits.set_column(c, &model.forward(aux.row(i))?.logits);
        }
        let mean = logits.column_sum() / idx.len() as f64;
        let centred = DMatrix::from_fn(n, idx.len(), |r, c| logits[(r, c)] - mean[r]);
        let denom = (idx.len().saturating_sub(1)).max(1) as f64;
        let mut cov = &centred * centred.transpose() / denom;
        cov = (&cov + cov.transpose()) * 0.5;
        let jitter = jitter_for(&cov);
        for d in 0..n {
            cov[(d, d)] += jitter;
        }
        mu.set_row(class, &mean.transpose());
        sigma.push(cov);
    }
    LogitMoments::new(mu, sigma)
}
