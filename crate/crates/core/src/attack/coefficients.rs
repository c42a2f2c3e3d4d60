//! Per-scheme recombination of the observed bias update into a weighted sum
//! of cross-entropy bias gradients, and the resulting linear system.

use nalgebra::{DMatrix, DVector};

use super::confusion::ConfusionMatrix;
use crate::error::{Error, Result};
use crate::fedsim::{LocalUpdate, Optimizer, Scheme, SchemeConfig, UpdateHistory};

/// `Δb = -η Σ_τ rho[τ] g_τ - h`, with `g_τ` the batch-mean bias gradient of
/// local epoch `τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeCoefficients {
    pub rho: Vec<f64>,
    pub h: DVector<f64>,
}

impl SchemeCoefficients {
    pub fn rho_sum(&self) -> f64 {
        self.rho.iter().sum()
    }
}

fn sum_of(vs: &[DVector<f64>], n: usize) -> DVector<f64> {
    vs.iter().fold(DVector::zeros(n), |acc, v| acc + v)
}

pub fn scheme_coefficients(
    cfg: &SchemeConfig,
    t: usize,
    history: &UpdateHistory,
) -> Result<SchemeCoefficients> {
    cfg.validate()?;
    if t < 1 {
        return Err(Error::Argument("rounds are numbered from 1".into()));
    }
    let m = cfg.epochs;
    let n = history.server_control_bias[0].len();
    let gamma = cfg.gamma;
    let shrink = 1.0 - cfg.lambda * cfg.eta;
    let regularized = matches!(cfg.scheme, Scheme::FedProx | Scheme::FedDyn | Scheme::FedDC);
    if regularized && shrink <= 0.0 {
        return Err(Error::Argument(format!(
            "lambda * eta = {} must be below 1",
            cfg.lambda * cfg.eta
        )));
    }

    let rho: Vec<f64> = (1..=m)
        .map(|tau| match (cfg.scheme, cfg.optimizer) {
            (Scheme::FedAvg, Optimizer::Sgdm) => {
                (1.0 - gamma.powi((m + 1 - tau) as i32)) / (1.0 - gamma)
            }
            (Scheme::FedAvg, Optimizer::Nag) => {
                (1.0 - gamma.powi((m + 2 - tau) as i32)) / (1.0 - gamma)
            }
            _ if regularized => shrink.powi((m - tau) as i32),
            _ => 1.0,
        })
        .collect();

    let past = t - 1;
    let need_local = matches!(cfg.scheme, Scheme::Scaffold | Scheme::FedDyn | Scheme::FedDC);
    if need_local && history.past_local_bias_updates.len() < past {
        return Err(Error::State(format!(
            "history holds {} local updates, round {t} needs {past}",
            history.past_local_bias_updates.len()
        )));
    }
    let local_sum = || sum_of(&history.past_local_bias_updates[..past], n);
    // 1 - (1 - λη)^m, and its ratio to λη computed as a geometric sum.
    let decay = 1.0 - shrink.powi(m as i32);
    let h = match cfg.scheme {
        Scheme::FedAvg | Scheme::FedProx => DVector::zeros(n),
        Scheme::Scaffold => {
            if history.server_control_bias.len() < t {
                return Err(Error::State(format!(
                    "history holds {} server variates, round {t} needs {t}",
                    history.server_control_bias.len()
                )));
            }
            let controls = sum_of(&history.server_control_bias[1..t], n);
            controls * (cfg.eta * m as f64) + local_sum()
        }
        Scheme::FedDyn => local_sum() * decay,
        Scheme::FedDC => {
            let mut h = local_sum() * decay;
            if t > 1 {
                let Some(global) = history.past_global_bias_updates.get(t - 2) else {
                    return Err(Error::State(format!(
                        "FedDC round {t} needs the round {} global update",
                        t - 1
                    )));
                };
                let gap = &history.past_local_bias_updates[t - 2] - global;
                let factor = (0..m).map(|i| shrink.powi(i as i32)).sum::<f64>() / m as f64;
                h += gap * factor;
            }
            h
        }
    };
    Ok(SchemeCoefficients { rho, h })
}

/// `A[j][j] = Σ_{n≠j} S[j][n]`, `A[j][n] = -S[n][j]`, so that the expected
/// batch-mean bias gradient is `-(A z)` for label proportions `z`.
pub fn build_system(s: &ConfusionMatrix) -> DMatrix<f64> {
    let n = s.classes();
    DMatrix::from_fn(n, n, |j, k| {
        if j == k {
            (0..n).filter(|&o| o != j).map(|o| s.get(j, o)).sum()
        } else {
            -s.get(k, j)
        }
    })
}

/// Right-hand side whose least-squares fit against `A` gives the label
/// proportions over all `m · |B|` samples: `u = (Δb + h) / (η Σρ)`.
pub fn make_target(
    update: &LocalUpdate,
    coeffs: &SchemeCoefficients,
    cfg: &SchemeConfig,
) -> Result<DVector<f64>> {
    if cfg.eta == 0.0 {
        return Err(Error::DegenerateUpdate("learning rate is zero".into()));
    }
    let rho_sum = coeffs.rho_sum();
    if !(rho_sum > 0.0) {
        return Err(Error::Argument("epoch weights must have a positive sum".into()));
    }
    let db = update.delta_b_out();
    if db.len() != coeffs.h.len() {
        return Err(Error::Shape("update and history offset differ in length".into()));
    }
    Ok((db + &coeffs.h) / (cfg.eta * rho_sum))
}
