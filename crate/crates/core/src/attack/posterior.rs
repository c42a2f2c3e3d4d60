//! Multi-epoch refinement: simulate how the confusion drifts across local
//! epochs under a per-epoch count guess and nudge the guess until the
//! simulated end state matches the observed one.

use nalgebra::{DMatrix, DVector};

use super::coefficients::build_system;
use super::confusion::{ConfusionMatrix, ConfusionSampler};
use super::moments::LogitMoments;
use crate::apportion::largest_remainder;
use crate::error::{Error, Result};
use crate::fedsim::{Optimizer, Scheme, SchemeConfig};

pub const DEFAULT_REL_THRESHOLD: f64 = 0.1;
pub const DEFAULT_ADJUST_EPS: f64 = 0.01;

/// Squared norm of the batch-mean embedding, read off the output layer: each
/// row with a large enough bias change gives `ΔW[j, ·] / Δb[j]` as a candidate
/// and the componentwise median is taken.
pub fn estimate_embedding_norm(
    delta_w: &DMatrix<f64>,
    delta_b: &DVector<f64>,
    rel_threshold: f64,
) -> Result<f64> {
    if delta_w.nrows() != delta_b.len() {
        return Err(Error::Shape(format!(
            "weight delta has {} rows, bias delta {}",
            delta_w.nrows(),
            delta_b.len()
        )));
    }
    let peak = delta_b.amax();
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(Error::DegenerateUpdate("bias update is zero".into()));
    }
    let rows: Vec<usize> = (0..delta_b.len())
        .filter(|&j| delta_b[j].abs() >= rel_threshold * peak)
        .collect();
    let mut total = 0.0;
    let mut column = Vec::with_capacity(rows.len());
    for l in 0..delta_w.ncols() {
        column.clear();
        column.extend(rows.iter().map(|&j| delta_w[(j, l)] / delta_b[j]));
        column.sort_by(f64::total_cmp);
        let mid = column.len() / 2;
        let median = if column.len() % 2 == 1 {
            column[mid]
        } else {
            0.5 * (column[mid - 1] + column[mid])
        };
        total += median * median;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    /// Outer iterations `T`.
    pub iterations: usize,
    /// Monte-Carlo draws per class for the simulated confusions.
    pub samples: usize,
    /// Minimum spread of the per-class discrepancy that triggers a move.
    pub adjust_eps: f64,
    /// Also shift each logit by the bias change itself (factor `1 + ‖ē‖²`
    /// instead of `‖ē‖²`).
    pub include_bias_shift: bool,
    /// Undo a move, and stop, when it does not shrink the discrepancy.
    pub verify_moves: bool,
    pub seed: u64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            iterations: 5,
            samples: 1000,
            adjust_eps: DEFAULT_ADJUST_EPS,
            include_bias_shift: false,
            verify_moves: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub counts: Vec<usize>,
    /// Per-epoch guess after the last iteration.
    pub per_epoch: Vec<usize>,
    pub moves: usize,
}

/// Confusion after `cfg.epochs` simulated local steps with `g` samples of
/// each class per batch, moving every logit mean by the expected bias change
/// times `shift_factor`.
pub fn simulate_end_confusion(
    g: &[usize],
    mu0: &DMatrix<f64>,
    s_first: &ConfusionMatrix,
    sampler: &ConfusionSampler,
    shift_factor: f64,
    cfg: &SchemeConfig,
) -> Result<ConfusionMatrix> {
    let n = g.len();
    let batch = cfg.batch_size as f64;
    let gv = DVector::from_iterator(n, g.iter().map(|&c| c as f64));
    let mut mu = mu0.clone();
    let mut s = s_first.clone();
    let mut velocity = DVector::zeros(n);
    let mut prev = DVector::zeros(n);
    let mut drift = DVector::<f64>::zeros(n);
    for _ in 0..cfg.epochs {
        let grad = -(build_system(&s) * &gv) / batch;
        let step = match (cfg.scheme, cfg.optimizer) {
            (Scheme::FedAvg, Optimizer::Sgdm) => {
                velocity = velocity * cfg.gamma + &grad;
                velocity.clone()
            }
            (Scheme::FedAvg, Optimizer::Nag) => {
                velocity = velocity * cfg.gamma + &grad * (1.0 + cfg.gamma) - &prev * cfg.gamma;
                prev = grad;
                velocity.clone()
            }
            (Scheme::FedProx | Scheme::FedDyn | Scheme::FedDC, _) => grad + &drift * cfg.lambda,
            _ => grad,
        };
        let db = -step * cfg.eta;
        drift += &db;
        for row in 0..n {
            for j in 0..n {
                mu[(row, j)] += db[j] * shift_factor;
            }
        }
        s = sampler.estimate(&mu)?;
    }
    Ok(s)
}

pub fn posterior_search(
    crude_counts: &[usize],
    moments_t: &LogitMoments,
    s_first: &ConfusionMatrix,
    s_last_observed: &ConfusionMatrix,
    embed_norm: f64,
    cfg: &SchemeConfig,
    opts: &SearchOptions,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    let n = moments_t.classes();
    let m = cfg.epochs;
    if m < 2 {
        return Err(Error::Argument("refinement needs at least two local epochs".into()));
    }
    if crude_counts.len() != n || s_first.classes() != n || s_last_observed.classes() != n {
        return Err(Error::Argument("count and confusion sizes disagree".into()));
    }
    let total: usize = crude_counts.iter().sum();
    if total != m * cfg.batch_size {
        return Err(Error::Argument(format!(
            "crude counts sum to {total}, expected {}",
            m * cfg.batch_size
        )));
    }
    if !(embed_norm >= 0.0 && embed_norm.is_finite()) {
        return Err(Error::Argument("embedding norm must be finite and nonnegative".into()));
    }

    let quotas: Vec<f64> = crude_counts.iter().map(|&c| c as f64 / m as f64).collect();
    let g0 = largest_remainder(&quotas, cfg.batch_size)?;
    let mut g = g0.clone();
    let refined = |g: &[usize]| -> Vec<i64> {
        (0..n)
            .map(|j| crude_counts[j] as i64 + m as i64 * (g[j] as i64 - g0[j] as i64))
            .collect()
    };
    let mut moves = 0;
    if opts.iterations > 0 {
        let sampler = ConfusionSampler::new(moments_t, opts.samples, opts.seed)?;
        let factor = embed_norm + if opts.include_bias_shift { 1.0 } else { 0.0 };
        let observed = s_last_observed.matrix();
        let mut last: Option<(f64, usize, usize)> = None;
        for it in 0..=opts.iterations {
            let sim = simulate_end_confusion(&g, &moments_t.mu, s_first, &sampler, factor, cfg)?;
            let diff = observed - sim.matrix();
            let d: Vec<f64> = (0..n)
                .map(|j| diff.column(j).sum() / (n - 1) as f64)
                .collect();
            let spread = d.iter().map(|v| v * v).sum::<f64>();
            if opts.verify_moves {
                if let Some((before, from, to)) = last {
                    if spread >= before {
                        g[from] += 1;
                        g[to] -= 1;
                        moves -= 1;
                        break;
                    }
                }
            }
            if it == opts.iterations {
                break;
            }
            let current = refined(&g);
            let receiver = (0..n).max_by(|&a, &b| d[a].total_cmp(&d[b]).then(b.cmp(&a)));
            let donor = (0..n)
                .filter(|&j| g[j] > 0 && current[j] >= m as i64)
                .min_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
            let (Some(to), Some(from)) = (receiver, donor) else {
                break;
            };
            if from == to || d[to] - d[from] <= opts.adjust_eps {
                break;
            }
            g[from] -= 1;
            g[to] += 1;
            moves += 1;
            last = Some((spread, from, to));
            if !opts.verify_moves && it + 1 == opts.iterations {
                break;
            }
        }
    }
    let counts = refined(&g).into_iter().map(|c| c as usize).collect();
    Ok(SearchOutcome {
        counts,
        per_epoch: g,
        moves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::confusion::mc_confusion;

    #[test]
    fn proportional_rows_give_exact_norm() {
        let c = [0.5, -2.0, 1.5];
        let db = DVector::from_vec(vec![0.3, -0.1, -0.2, 0.004]);
        let dw = DMatrix::from_fn(4, 3, |j, l| c[l] * db[j]);
        let est = estimate_embedding_norm(&dw, &db, 0.1).unwrap();
        assert!((est - c.iter().map(|v| v * v).sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn zero_bias_is_degenerate() {
        let r = estimate_embedding_norm(&DMatrix::zeros(3, 2), &DVector::zeros(3), 0.1);
        assert!(matches!(r, Err(Error::DegenerateUpdate(_))));
    }

    fn flat_setup(n: usize) -> (LogitMoments, ConfusionMatrix) {
        let m = LogitMoments::new(DMatrix::zeros(n, n), vec![DMatrix::identity(n, n) * 0.01; n]).unwrap();
        let s = mc_confusion(&m, 2000, 1).unwrap();
        (m, s)
    }

    fn cfg() -> SchemeConfig {
        SchemeConfig::fedavg_sgd(0.05, 4, 8)
    }

    #[test]
    fn no_iterations_returns_crude() {
        let (m, s) = flat_setup(3);
        let crude = [13, 10, 9];
        let out = posterior_search(&crude, &m, &s, &s, 1.0, &cfg(), &SearchOptions {
            iterations: 0,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(out.counts, crude.to_vec());
        assert_eq!(out.moves, 0);
    }

    #[test]
    fn matching_end_state_is_a_fixed_point() {
        // Without any logit movement the simulated end state equals the start,
        // so an observed end state equal to the start leaves the guess alone.
        let (m, s) = flat_setup(3);
        let crude = [16, 8, 8];
        let out = posterior_search(&crude, &m, &s, &s, 0.0, &cfg(), &SearchOptions {
            iterations: 5,
            samples: 2000,
            seed: 1,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(out.counts, crude.to_vec());
    }

    #[test]
    fn bad_inputs_rejected() {
        let (m, s) = flat_setup(3);
        let opts = SearchOptions::default();
        assert!(posterior_search(&[10, 10, 10], &m, &s, &s, 1.0, &cfg(), &opts).is_err());
        let single = SchemeConfig { epochs: 1, ..cfg() };
        assert!(posterior_search(&[4, 2, 2], &m, &s, &s, 1.0, &single, &opts).is_err());
    }

    #[test]
    fn underestimated_class_gains() {
        // Observed end state leans toward class 0 more than the guess explains.
        let n = 3;
        let (m, s) = flat_setup(n);
        let c = SchemeConfig {
            batch_size: 32,
            ..cfg()
        };
        let truth = [24, 4, 4];
        let observed = simulate_end_confusion(
            &truth,
            &m.mu,
            &s,
            &ConfusionSampler::new(&m, 2000, 1).unwrap(),
            5.0,
            &c,
        )
        .unwrap();
        let crude = [32, 48, 48];
        let out = posterior_search(&crude, &m, &s, &observed, 5.0, &c, &SearchOptions {
            iterations: 3,
            samples: 2000,
            seed: 1,
            adjust_eps: 1e-4,
            ..Default::default()
        })
        .unwrap();
        assert!(out.counts[0] > crude[0]);
        assert_eq!(out.counts.iter().sum::<usize>(), 128);
    }
}
