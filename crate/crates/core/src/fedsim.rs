//! Client local training under several FL schemes, server aggregation and
//! per-client round history.
//!
//! One local "epoch" is one optimizer step on one sampled batch; a client runs
//! `epochs` of them per round. Rounds are numbered from 1.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{csv_err, plan_batches, BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::nn::{backward_pass, Model, Params};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    FedAvg,
    FedProx,
    Scaffold,
    FedDyn,
    FedDC,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::FedAvg,
        Scheme::FedProx,
        Scheme::Scaffold,
        Scheme::FedDyn,
        Scheme::FedDC,
    ];
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Scheme::FedAvg => "FedAvg",
            Scheme::FedProx => "FedProx",
            Scheme::Scaffold => "Scaffold",
            Scheme::FedDyn => "FedDyn",
            Scheme::FedDC => "FedDC",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Validation(format!("unknown scheme '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Optimizer {
    #[serde(rename = "SGD")]
    Sgd,
    #[serde(rename = "SGDm")]
    Sgdm,
    #[serde(rename = "NAG")]
    Nag,
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimizer::Sgd => "SGD",
            Optimizer::Sgdm => "SGDm",
            Optimizer::Nag => "NAG",
        })
    }
}

impl std::str::FromStr for Optimizer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [Optimizer::Sgd, Optimizer::Sgdm, Optimizer::Nag]
            .into_iter()
            .find(|x| x.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Validation(format!("unknown optimizer '{s}'")))
    }
}

/// Local training hyperparameters, shared knowledge between client and server.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub scheme: Scheme,
    pub optimizer: Optimizer,
    pub eta: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub gamma: f64,
    /// Local epochs `m`.
    pub epochs: usize,
    pub batch_size: usize,
}

impl SchemeConfig {
    pub fn fedavg_sgd(eta: f64, epochs: usize, batch_size: usize) -> Self {
        SchemeConfig {
            scheme: Scheme::FedAvg,
            optimizer: Optimizer::Sgd,
            eta,
            lambda: 0.0,
            gamma: 0.0,
            epochs,
            batch_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Validation(format!("eta must be >= 0, got {}", self.eta)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Validation(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Validation(format!(
                "gamma must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::Validation(
                "local epochs and batch size must be positive".into(),
            ));
        }
        if self.scheme != Scheme::FedAvg && self.optimizer != Optimizer::Sgd {
            return Err(Error::Validation(format!(
                "{} is only supported with SGD, got {}",
                self.scheme, self.optimizer
            )));
        }
        Ok(())
    }
}

/// What a client sends the server after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub client: usize,
    pub round: usize,
    /// `theta_k^(t) - theta^(t)` over every parameter.
    pub delta: Params,
}

impl LocalUpdate {
    pub fn delta_w_out(&self) -> &DMatrix<f64> {
        &self.delta.output().weights
    }

    pub fn delta_b_out(&self) -> &DVector<f64> {
        &self.delta.output().bias
    }
}

/// Simulator-side record of a local run. Never handed to the attack; it
/// exists so tests can check the update algebra against the actual gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    /// Batch-mean cross-entropy bias gradient of each epoch.
    pub per_epoch_ce_bias_grads: Vec<DVector<f64>>,
    /// Batch-mean embedding of each epoch.
    pub per_epoch_mean_embedding: Vec<DVector<f64>>,
    pub per_epoch_loss: Vec<f64>,
}

impl TrainTrace {
    pub fn mean_loss(&self) -> f64 {
        self.per_epoch_loss.iter().sum::<f64>() / self.per_epoch_loss.len() as f64
    }
}

/// Per-client state carried across rounds.
///
/// The bias-component sequences are what the server observes and what the
/// attack reads; the full-parameter fields drive the client's local objective.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateHistory {
    pub client: usize,
    /// Rounds this client has completed.
    pub rounds_completed: usize,
    /// `Δb_k^(r)` for r = 1..=rounds_completed.
    pub past_local_bias_updates: Vec<DVector<f64>>,
    /// `ΔB^(r)` (global bias change) for each aggregated round.
    pub past_global_bias_updates: Vec<DVector<f64>>,
    /// Bias component of the server control variate `c^(r)`, r = 1, 2, ...
    pub server_control_bias: Vec<DVector<f64>>,
    /// Current server control variate `c^(t)`.
    pub server_control: Params,
    /// Client control variate `c_k^(t)`.
    pub client_control: Params,
    /// `d_k^(t) = sum_{r<t} Δθ_k^(r)`; also the FedDyn linear-term state.
    pub local_drift: Params,
    pub last_local_delta: Option<Params>,
    pub last_global_delta: Option<Params>,
}

impl UpdateHistory {
    pub fn new(client: usize, template: &Params) -> Self {
        let zeros = Params::zeros_like(template);
        UpdateHistory {
            client,
            rounds_completed: 0,
            past_local_bias_updates: Vec::new(),
            past_global_bias_updates: Vec::new(),
            server_control_bias: vec![zeros.output().bias.clone()],
            server_control: zeros.clone(),
            client_control: zeros.clone(),
            local_drift: zeros,
            last_local_delta: None,
            last_global_delta: None,
        }
    }

    /// Server-side bookkeeping after aggregation of `round`.
    pub fn record_global(&mut self, round: usize, global_delta: &Params, next_server_control: Option<&Params>) -> Result<()> {
        if self.past_global_bias_updates.len() + 1 != round {
            return Err(Error::State(format!(
                "client {}: global update for round {round} out of order",
                self.client
            )));
        }
        self.past_global_bias_updates
            .push(global_delta.output().bias.clone());
        self.last_global_delta = Some(global_delta.clone());
        if let Some(c) = next_server_control {
            self.server_control = c.clone();
            self.server_control_bias.push(c.output().bias.clone());
        }
        Ok(())
    }
}

/// Scaffold client-variate recurrence
/// `c_k <- c_k - c^(t) + (θ^(t) - θ_k^(t,m)) / (η m)`.
pub fn scaffold_update_control(
    history: &mut UpdateHistory,
    delta_theta: &Params,
    cfg: &SchemeConfig,
) -> Result<()> {
    if cfg.scheme != Scheme::Scaffold {
        return Err(Error::State(format!(
            "control variates are only maintained under Scaffold, not {}",
            cfg.scheme
        )));
    }
    if !history.client_control.same_shape(delta_theta) {
        return Err(Error::Shape("control variate layout mismatch".into()));
    }
    let server = history.server_control.clone();
    history.client_control.axpy(-1.0, &server);
    if cfg.eta > 0.0 {
        history
            .client_control
            .axpy(-1.0 / (cfg.eta * cfg.epochs as f64), delta_theta);
    }
    Ok(())
}

/// Run `cfg.epochs` local steps of the configured scheme from `global`.
///
/// On success the client-side parts of `history` advance to `round`; the
/// server-side parts are filled in by [`UpdateHistory::record_global`].
pub fn local_train(
    global: &Model,
    data: &Dataset,
    plan: &BatchPlan,
    cfg: &SchemeConfig,
    history: &mut UpdateHistory,
    round: usize,
) -> Result<(LocalUpdate, TrainTrace, Model)> {
    cfg.validate()?;
    if round < 1 || history.rounds_completed + 1 != round {
        return Err(Error::State(format!(
            "client {} has completed {} rounds, cannot train round {round}",
            history.client, history.rounds_completed
        )));
    }
    if plan.epochs() != cfg.epochs || plan.batch_size != cfg.batch_size {
        return Err(Error::Argument(
            "batch plan does not match the scheme's epochs and batch size".into(),
        ));
    }
    if !history.local_drift.same_shape(global.params()) {
        return Err(Error::Shape("history does not match the model layout".into()));
    }
    // FedDC's drift correction needs last round's local and global deltas.
    let feddc_correction = if cfg.scheme == Scheme::FedDC && round > 1 {
        let (Some(local), Some(glob)) = (&history.last_local_delta, &history.last_global_delta)
        else {
            return Err(Error::State(format!(
                "FedDC round {round} needs the round {} local and global updates",
                round - 1
            )));
        };
        let mut corr = local.sub(glob);
        corr.scale(1.0 / cfg.epochs as f64);
        Some(corr)
    } else {
        None
    };

    let eta = cfg.eta;
    let lambda = cfg.lambda;
    let gamma = cfg.gamma;
    let start = global.params().clone();
    let mut local = global.clone();
    let mut velocity = Params::zeros_like(&start);
    let mut prev_grad: Option<Params> = None;

    let mut trace = TrainTrace {
        per_epoch_ce_bias_grads: Vec::with_capacity(cfg.epochs),
        per_epoch_mean_embedding: Vec::with_capacity(cfg.epochs),
        per_epoch_loss: Vec::with_capacity(cfg.epochs),
    };

    for batch in &plan.batches {
        let (xs, ys) = data.gather(batch);
        let pass = backward_pass(&local, &xs, &ys)?;
        trace
            .per_epoch_ce_bias_grads
            .push(pass.grads.output().bias.clone());
        trace.per_epoch_mean_embedding.push(pass.mean_embedding);
        trace.per_epoch_loss.push(pass.loss);
        let grad = pass.grads;

        let step = match cfg.scheme {
            Scheme::FedAvg => match cfg.optimizer {
                Optimizer::Sgd => grad,
                Optimizer::Sgdm => {
                    velocity.scale(gamma);
                    velocity.axpy(1.0, &grad);
                    velocity.clone()
                }
                Optimizer::Nag => {
                    velocity.scale(gamma);
                    velocity.axpy(1.0 + gamma, &grad);
                    if let Some(prev) = &prev_grad {
                        velocity.axpy(-gamma, prev);
                    }
                    prev_grad = Some(grad);
                    velocity.clone()
                }
            },
            Scheme::FedProx => {
                let mut s = grad;
                s.axpy(lambda, &local.params().sub(&start));
                s
            }
            Scheme::FedDyn => {
                let mut s = grad;
                s.axpy(lambda, &history.local_drift);
                s.axpy(lambda, &local.params().sub(&start));
                s
            }
            Scheme::FedDC => {
                let mut s = grad;
                s.axpy(lambda, &local.params().sub(&start));
                s.axpy(lambda, &history.local_drift);
                s
            }
            Scheme::Scaffold => {
                let mut s = grad;
                s.axpy(-1.0, &history.client_control);
                s.axpy(1.0, &history.server_control);
                s
            }
        };
        local.params_mut().axpy(-eta, &step);
        if let Some(corr) = &feddc_correction {
            local.params_mut().axpy(-1.0, corr);
        }
        if !local.params().is_finite() {
            return Err(Error::Numeric(format!(
                "client {} diverged in round {round}",
                history.client
            )));
        }
    }

    let delta = local.params().sub(&start);
    if cfg.scheme == Scheme::Scaffold {
        scaffold_update_control(history, &delta, cfg)?;
    }
    history
        .past_local_bias_updates
        .push(delta.output().bias.clone());
    history.local_drift.axpy(1.0, &delta);
    history.last_local_delta = Some(delta.clone());
    history.rounds_completed = round;

    Ok((
        LocalUpdate {
            client: history.client,
            round,
            delta,
        },
        trace,
        local,
    ))
}

/// `θ^(t+1) = θ^(t) + Σ_k p_k Δθ_k`.
pub fn server_aggregate(updates: &[LocalUpdate], weights: &[f64], global: &Model) -> Result<Model> {
    if updates.len() != weights.len() || updates.is_empty() {
        return Err(Error::Argument(format!(
            "{} updates but {} weights",
            updates.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::Argument("aggregation weights must be nonnegative".into()));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!(
            "aggregation weights sum to {sum}, expected 1"
        )));
    }
    let mut params = global.params().clone();
    for (u, w) in updates.iter().zip(weights) {
        if !params.same_shape(&u.delta) {
            return Err(Error::Shape(format!("update from client {} has the wrong layout", u.client)));
        }
        params.axpy(*w, &u.delta);
    }
    Model::from_params(params, global.activation())
}

/// One line of the per-round training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundLogRow {
    pub round: usize,
    pub client: usize,
    pub scheme: String,
    pub optimizer: String,
    pub eta: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub m: usize,
    pub batch: usize,
    pub loss: f64,
    pub train_acc: f64,
}

pub fn write_round_log(path: &Path, rows: &[RoundLogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    if rows.is_empty() {
        w.write_record([
            "round", "client", "scheme", "optimizer", "eta", "lambda", "gamma", "m", "batch",
            "loss", "train_acc",
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Everything produced by one broadcast-train-aggregate cycle.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub global: Model,
    pub updates: Vec<LocalUpdate>,
    /// Ground-truth batch plans, for scoring only.
    pub plans: Vec<BatchPlan>,
    pub traces: Vec<TrainTrace>,
    pub weights: Vec<f64>,
    pub log: Vec<RoundLogRow>,
}

impl RoundOutcome {
    pub fn true_counts(&self) -> Vec<Vec<usize>> {
        self.plans.iter().map(|p| p.true_counts.clone()).collect()
    }
}

pub fn accuracy(model: &Model, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for i in 0..data.len() {
        if model.predict(data.row(i))? == data.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Broadcast `global`, train every client in parallel and aggregate with
/// data-size weights. Client `k` draws its batches from a seed derived from
/// `(seed, round, k)`.
pub fn run_round(
    global: &Model,
    clients: &[Dataset],
    cfgs: &[SchemeConfig],
    histories: &mut [UpdateHistory],
    round: usize,
    seed: u64,
) -> Result<RoundOutcome> {
    if clients.is_empty() {
        return Err(Error::Argument("no clients to train".into()));
    }
    if cfgs.len() != clients.len() || histories.len() != clients.len() {
        return Err(Error::Argument(
            "need one config and one history per client".into(),
        ));
    }
    let results: Vec<Result<(LocalUpdate, TrainTrace, Model, BatchPlan)>> = clients
        .par_iter()
        .zip(cfgs.par_iter())
        .zip(histories.par_iter_mut())
        .enumerate()
        .map(|(k, ((data, cfg), history))| {
            let plan = plan_batches(
                data,
                cfg.batch_size,
                cfg.epochs,
                derive_seed(seed, &[round as u64, k as u64]),
            )?;
            let (u, t, m) = local_train(global, data, &plan, cfg, history, round)?;
            Ok((u, t, m, plan))
        })
        .collect();

    let mut updates = Vec::with_capacity(clients.len());
    let mut traces = Vec::with_capacity(clients.len());
    let mut plans = Vec::with_capacity(clients.len());
    let mut log = Vec::with_capacity(clients.len());
    for (k, r) in results.into_iter().enumerate() {
        let (u, t, local, plan) = r?;
        let cfg = &cfgs[k];
        log.push(RoundLogRow {
            round,
            client: k,
            scheme: cfg.scheme.to_string(),
            optimizer: cfg.optimizer.to_string(),
            eta: cfg.eta,
            lambda: cfg.lambda,
            gamma: cfg.gamma,
            m: cfg.epochs,
            batch: cfg.batch_size,
            loss: t.mean_loss(),
            train_acc: accuracy(&local, &clients[k])?,
        });
        updates.push(u);
        traces.push(t);
        plans.push(plan);
    }

    let total: usize = clients.iter().map(|d| d.len()).sum();
    let weights: Vec<f64> = clients
        .iter()
        .map(|d| d.len() as f64 / total as f64)
        .collect();
    let next = server_aggregate(&updates, &weights, global)?;
    let global_delta = next.params().sub(global.params());

    let next_control = if cfgs.iter().any(|c| c.scheme == Scheme::Scaffold) {
        let mut c = Params::zeros_like(global.params());
        for h in histories.iter() {
            c.axpy(1.0 / histories.len() as f64, &h.client_control);
        }
        Some(c)
    } else {
        None
    };
    for h in histories.iter_mut() {
        h.record_global(round, &global_delta, next_control.as_ref())?;
    }

    Ok(RoundOutcome {
        global: next,
        updates,
        plans,
        traces,
        weights,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, BlobSpec};
    use crate::nn::Activation;

    fn setup(classes: usize) -> (Model, Dataset) {
        let data = make_synthetic(
            &BlobSpec {
                classes,
                dim: 6,
                separation: 3.0,
            },
            30,
            1,
        )
        .unwrap();
        let model = Model::new(&[6, 8, classes], Activation::Relu, 2).unwrap();
        (model, data)
    }

    fn train_once(cfg: SchemeConfig, seed: u64) -> (LocalUpdate, TrainTrace) {
        let (model, data) = setup(4);
        let plan = plan_batches(&data, cfg.batch_size, cfg.epochs, seed).unwrap();
        let mut h = UpdateHistory::new(0, model.params());
        let (u, t, _) = local_train(&model, &data, &plan, &cfg, &mut h, 1).unwrap();
        (u, t)
    }

    #[test]
    fn zero_learning_rate_gives_zero_delta() {
        let (u, _) = train_once(SchemeConfig::fedavg_sgd(0.0, 3, 8), 4);
        assert!(u.delta.is_zero());
    }

    #[test]
    fn fedprox_without_regularizer_matches_fedavg() {
        let base = SchemeConfig::fedavg_sgd(0.1, 4, 8);
        let prox = SchemeConfig {
            scheme: Scheme::FedProx,
            ..base
        };
        let (a, _) = train_once(base, 9);
        let (b, _) = train_once(prox, 9);
        let bits = |p: &Params| p.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.delta), bits(&b.delta));
    }

    #[test]
    fn single_epoch_sgd_is_one_step() {
        let (u, t) = train_once(SchemeConfig::fedavg_sgd(0.3, 1, 16), 5);
        let expected = -0.3 * &t.per_epoch_ce_bias_grads[0];
        assert!((u.delta_b_out() - expected).amax() < 1e-15);
    }

    #[test]
    fn fedavg_bias_update_sums_to_zero() {
        let (u, _) = train_once(SchemeConfig::fedavg_sgd(0.5, 5, 16), 6);
        assert!(u.delta_b_out().sum().abs() < 1e-10);
    }

    #[test]
    fn validation_rejects_unsupported_combinations() {
        let mut cfg = SchemeConfig::fedavg_sgd(0.1, 1, 4);
        cfg.scheme = Scheme::Scaffold;
        cfg.optimizer = Optimizer::Nag;
        assert!(matches!(cfg.validate(), Err(Error::Validation(_))));
        let mut cfg = SchemeConfig::fedavg_sgd(0.1, 1, 4);
        cfg.gamma = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn out_of_order_round_is_a_state_error() {
        let (model, data) = setup(3);
        let cfg = SchemeConfig::fedavg_sgd(0.1, 1, 4);
        let plan = plan_batches(&data, 4, 1, 0).unwrap();
        let mut h = UpdateHistory::new(0, model.params());
        assert!(matches!(
            local_train(&model, &data, &plan, &cfg, &mut h, 2),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn feddc_second_round_requires_history() {
        let (model, data) = setup(3);
        let cfg = SchemeConfig {
            scheme: Scheme::FedDC,
            lambda: 0.1,
            ..SchemeConfig::fedavg_sgd(0.1, 2, 4)
        };
        let plan = plan_batches(&data, 4, 2, 0).unwrap();
        let mut h = UpdateHistory::new(0, model.params());
        h.rounds_completed = 1;
        assert!(matches!(
            local_train(&model, &data, &plan, &cfg, &mut h, 2),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn aggregation_examples() {
        let (model, _) = setup(3);
        let mut delta = Params::zeros_like(model.params());
        delta.set_flat(&(0..delta.len()).map(|i| i as f64 * 0.01).collect::<Vec<_>>());
        let up = |d: Params, k| LocalUpdate {
            client: k,
            round: 1,
            delta: d,
        };

        let one = server_aggregate(&[up(delta.clone(), 0)], &[1.0], &model).unwrap();
        assert_eq!(one, model.with_delta(&delta).unwrap());

        let zero = Params::zeros_like(&delta);
        let same = server_aggregate(&[up(zero.clone(), 0), up(zero, 1)], &[0.3, 0.7], &model).unwrap();
        assert_eq!(same, model);

        let mut neg = delta.clone();
        neg.scale(-1.0);
        let cancel = server_aggregate(&[up(delta, 0), up(neg, 1)], &[0.5, 0.5], &model).unwrap();
        let gap = cancel.params().sub(model.params()).to_flat();
        assert!(gap.iter().all(|v| v.abs() < 1e-15));

        assert!(server_aggregate(&[up(Params::zeros_like(model.params()), 0)], &[0.9], &model).is_err());
    }

    #[test]
    fn scaffold_zero_state_stays_zero() {
        let (model, _) = setup(3);
        let mut h = UpdateHistory::new(0, model.params());
        let cfg = SchemeConfig {
            scheme: Scheme::Scaffold,
            ..SchemeConfig::fedavg_sgd(0.1, 2, 4)
        };
        scaffold_update_control(&mut h, &Params::zeros_like(model.params()), &cfg).unwrap();
        assert!(h.client_control.is_zero());
        let wrong = SchemeConfig::fedavg_sgd(0.1, 2, 4);
        assert!(matches!(
            scaffold_update_control(&mut h, &Params::zeros_like(model.params()), &wrong),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn client_control_starts_at_server_control() {
        let (model, _) = setup(3);
        let h = UpdateHistory::new(0, model.params());
        assert_eq!(h.client_control, h.server_control);
        assert_eq!(h.server_control_bias.len(), 1);
    }
}
