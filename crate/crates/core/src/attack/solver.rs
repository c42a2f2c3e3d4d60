//! Least squares over the probability simplex, and integer rounding of the
//! solution.

use nalgebra::{DMatrix, DVector};

use crate::apportion::largest_remainder;
use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexSolution {
    pub z: DVector<f64>,
    /// `‖A z - u‖²` at `z`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Euclidean projection onto `{z : z >= 0, Σ z = 1}` by the sort-and-threshold
/// method.
pub fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let mut sorted: Vec<f64> = v.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        cumsum += x;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.map(|x| (x - theta).max(0.0))
}

fn objective(a: &DMatrix<f64>, u: &DVector<f64>, z: &DVector<f64>) -> f64 {
    (a * z - u).norm_squared()
}

/// Minimise `‖A z - u‖²` over the simplex with projected gradient steps of
/// length `1 / λmax(AᵀA)`. Stops when an iterate moves by at most `tol`
/// (max-norm); otherwise returns the best iterate with `converged = false`.
pub fn solve_simplex_ls(
    a: &DMatrix<f64>,
    u: &DVector<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<SimplexSolution> {
    let n = a.ncols();
    if n == 0 || a.nrows() != u.len() {
        return Err(Error::Shape(format!(
            "system is {}x{} but target has length {}",
            a.nrows(),
            a.ncols(),
            u.len()
        )));
    }
    if a.iter().chain(u.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("least-squares inputs are not finite".into()));
    }
    let ata = a.transpose() * a;
    let atu = a.transpose() * u;
    let lipschitz = ata.clone().symmetric_eigenvalues().max();
    let mut z = DVector::from_element(n, 1.0 / n as f64);
    if !(lipschitz > 0.0) {
        let residual = objective(a, u, &z);
        return Ok(SimplexSolution {
            z,
            residual,
            iterations: 0,
            converged: true,
        });
    }
    let step = 1.0 / lipschitz;
    let mut best = (objective(a, u, &z), z.clone());
    for it in 1..=max_iters {
        let grad = &ata * &z - &atu;
        let next = project_simplex(&(&z - grad * step));
        let moved = (&next - &z).amax();
        z = next;
        let f = objective(a, u, &z);
        if f <= best.0 {
            best = (f, z.clone());
        }
        if moved <= tol {
            return Ok(SimplexSolution {
                residual: f,
                z,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(SimplexSolution {
        residual: best.0,
        z: best.1,
        iterations: max_iters,
        converged: false,
    })
}

/// Integer counts summing to `total` that stay within one of `total · z`;
/// leftover units go to the largest fractional parts, lowest index first.
pub fn round_counts(z: &DVector<f64>, total: usize) -> Result<Vec<usize>> {
    if z.iter().any(|v| !v.is_finite() || *v < -1e-9) {
        return Err(Error::Argument("proportions must be finite and nonnegative".into()));
    }
    let sum = z.sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Argument(format!("proportions sum to {sum}, expected 1")));
    }
    let quotas: Vec<f64> = z.iter().map(|v| v.max(0.0) / sum * total as f64).collect();
    largest_remainder(&quotas, total)
}
