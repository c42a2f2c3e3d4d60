//! Label-count recovery from a client's model update.
//!
//! The server sees the global model, the client's update and a small labelled
//! auxiliary set. From the auxiliary logits it models how confidently each
//! class is mistaken for every other, which turns the expected output-bias
//! update into a linear function of the batch label proportions.

pub mod coefficients;
pub mod confusion;
pub mod moments;
pub mod posterior;
pub mod solver;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use coefficients::{build_system, make_target, scheme_coefficients, SchemeCoefficients};
pub use confusion::{covariance_factor, mc_confusion, ConfusionMatrix, ConfusionSampler};
pub use moments::{estimate_moments, LogitMoments};
pub use posterior::{estimate_embedding_norm, posterior_search, simulate_end_confusion, SearchOptions, SearchOutcome};
pub use solver::{project_simplex, round_counts, solve_simplex_ls, SimplexSolution};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fedsim::{LocalUpdate, SchemeConfig, UpdateHistory};
use crate::nn::Model;
use crate::rng::{derive_seed, STREAM_ATTACK, STREAM_POSTERIOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttackMethod {
    SingleEpoch,
    CrudeMultiEpoch,
    PosteriorSearch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub z_star: Vec<f64>,
    pub counts: Vec<usize>,
    pub residual: f64,
    pub method: AttackMethod,
    pub diagnostics: BTreeMap<String, f64>,
}

impl AttackReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Numeric(format!("report serialization failed: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackParams {
    /// Monte-Carlo draws per class for the observed confusions.
    pub samples: usize,
    /// Draws per class inside the refinement loop.
    pub search_samples: usize,
    /// Refinement iterations; 0 keeps the crude multi-epoch estimate.
    pub iterations: usize,
    pub tol: f64,
    pub max_iters: usize,
    pub rel_threshold: f64,
    pub adjust_eps: f64,
    pub include_bias_shift: bool,
    pub verify_moves: bool,
    /// Solve against the single-epoch confusion instead of the average of the
    /// start and end confusions.
    pub start_confusion_only: bool,
    pub seed: u64,
}

impl Default for AttackParams {
    fn default() -> Self {
        AttackParams {
            samples: 10_000,
            search_samples: 1000,
            iterations: 5,
            tol: solver::DEFAULT_TOL,
            max_iters: solver::DEFAULT_MAX_ITERS,
            rel_threshold: posterior::DEFAULT_REL_THRESHOLD,
            adjust_eps: posterior::DEFAULT_ADJUST_EPS,
            include_bias_shift: false,
            verify_moves: false,
            start_confusion_only: false,
            seed: 0,
        }
    }
}

/// Estimate how many samples of each class the client trained on this round.
///
/// `cfg` is the attacker's belief about the client's scheme; a wrong belief
/// still yields a report, just a worse one.
pub fn recover_labels(
    global: &Model,
    update: &LocalUpdate,
    aux: &Dataset,
    cfg: &SchemeConfig,
    history: &UpdateHistory,
    params: &AttackParams,
) -> Result<AttackReport> {
    cfg.validate()?;
    if cfg.eta == 0.0 {
        return Err(Error::DegenerateUpdate("learning rate is zero".into()));
    }
    if update.delta.is_zero() {
        return Err(Error::DegenerateUpdate(format!(
            "client {} sent an all-zero update",
            update.client
        )));
    }
    let m = cfg.epochs;
    let batch = cfg.batch_size;
    let coeffs = scheme_coefficients(cfg, update.round, history)?;
    let target = make_target(update, &coeffs, cfg)?;

    let seed = derive_seed(params.seed, &[STREAM_ATTACK, update.round as u64, update.client as u64]);
    let moments_start = estimate_moments(global, aux)?;
    let s_start = mc_confusion(&moments_start, params.samples, seed)?;

    let mut diagnostics = BTreeMap::new();
    let (system, s_end) = if m == 1 || params.start_confusion_only {
        (build_system(&s_start), None)
    } else {
        let after = global.with_delta(&update.delta)?;
        let s_end = mc_confusion(&estimate_moments(&after, aux)?, params.samples, seed)?;
        (build_system(&s_start.average(&s_end)?), Some(s_end))
    };
    let sol = solve_simplex_ls(&system, &target, params.tol, params.max_iters)?;
    diagnostics.insert("solver_iterations".into(), sol.iterations as f64);
    diagnostics.insert("solver_converged".into(), if sol.converged { 1.0 } else { 0.0 });
    let crude = round_counts(&sol.z, m * batch)?;

    let (counts, method) = match s_end {
        Some(s_end) if params.iterations > 0 => {
            for (j, c) in crude.iter().enumerate() {
                diagnostics.insert(format!("crude_count_{j:03}"), *c as f64);
            }
            let norm = estimate_embedding_norm(
                update.delta_w_out(),
                update.delta_b_out(),
                params.rel_threshold,
            )?;
            diagnostics.insert("embedding_norm".into(), norm);
            let out = posterior_search(
                &crude,
                &moments_start,
                &s_start,
                &s_end,
                norm,
                cfg,
                &SearchOptions {
                    iterations: params.iterations,
                    samples: params.search_samples,
                    adjust_eps: params.adjust_eps,
                    include_bias_shift: params.include_bias_shift,
                    verify_moves: params.verify_moves,
                    seed: derive_seed(seed, &[STREAM_POSTERIOR]),
                },
            )?;
            diagnostics.insert("search_moves".into(), out.moves as f64);
            (out.counts, AttackMethod::PosteriorSearch)
        }
        Some(_) => (crude, AttackMethod::CrudeMultiEpoch),
        None if m == 1 => (crude, AttackMethod::SingleEpoch),
        None => (crude, AttackMethod::CrudeMultiEpoch),
    };

    Ok(AttackReport {
        z_star: sol.z.iter().copied().collect(),
        counts,
        residual: sol.residual,
        method,
        diagnostics,
    })
}
