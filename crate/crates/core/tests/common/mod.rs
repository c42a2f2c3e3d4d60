#![allow(dead_code)]

use labelleak_core::attack::{make_target, recover_labels, scheme_coefficients, AttackParams, AttackReport};
use labelleak_core::data::{dirichlet_partition, make_auxiliary, make_synthetic, plan_batches, BlobSpec, Dataset};
use labelleak_core::fedsim::{accuracy, local_train, run_round, Optimizer, Scheme, SchemeConfig, UpdateHistory};
use nalgebra::DVector;
use labelleak_core::nn::{Activation, Model};

pub const CLASSES: usize = 10;
pub const DIM: usize = 20;
pub const HIDDEN: usize = 32;

pub fn blobs() -> BlobSpec {
    BlobSpec {
        classes: CLASSES,
        dim: DIM,
        separation: 3.0,
    }
}

pub fn fresh_model(seed: u64) -> Model {
    Model::new(&[DIM, HIDDEN, CLASSES], Activation::Relu, seed).unwrap()
}

pub struct Trial {
    pub report: AttackReport,
    pub truth: Vec<usize>,
}

impl Trial {
    /// Counts before refinement; equal to the final counts when no
    /// refinement ran.
    pub fn crude(&self) -> Vec<usize> {
        (0..self.truth.len())
            .map(|j| {
                self.report
                    .diagnostics
                    .get(&format!("crude_count_{j:03}"))
                    .map(|v| *v as usize)
                    .unwrap_or(self.report.counts[j])
            })
            .collect()
    }
}

/// One client holding `per_class` samples of every class trains one round
/// from `model`; the attacker then recovers its label counts.
pub fn attack_trial(seed: u64, model: &Model, cfg: &SchemeConfig, params: &AttackParams) -> Trial {
    let data = make_synthetic(&blobs(), 100, seed).unwrap();
    attack_on(seed, model, &data, cfg, params)
}

pub fn attack_on(seed: u64, model: &Model, data: &Dataset, cfg: &SchemeConfig, params: &AttackParams) -> Trial {
    let aux = make_auxiliary(&blobs(), 100, seed).unwrap();
    let plan = plan_batches(data, cfg.batch_size, cfg.epochs, seed ^ 0x5eed).unwrap();
    let mut history = UpdateHistory::new(0, model.params());
    let (update, _, _) = local_train(model, data, &plan, cfg, &mut history, 1).unwrap();
    let params = AttackParams { seed, ..*params };
    let report = recover_labels(model, &update, &aux, cfg, &history, &params).unwrap();
    Trial {
        report,
        truth: plan.true_counts,
    }
}

/// Plain SGD on `data` (one client, full participation) until the training
/// accuracy reaches `target`.
pub fn train_until(mut model: Model, data: &Dataset, target: f64, seed: u64) -> Model {
    let cfg = SchemeConfig::fedavg_sgd(0.1, 20, 32);
    for round in 0..500u64 {
        if accuracy(&model, data).unwrap() >= target {
            return model;
        }
        let plan = plan_batches(data, cfg.batch_size, cfg.epochs, seed.wrapping_add(round * 7919)).unwrap();
        let mut history = UpdateHistory::new(0, model.params());
        let (_, _, local) = local_train(&model, data, &plan, &cfg, &mut history, 1).unwrap();
        model = local;
    }
    panic!("model did not reach {target} training accuracy");
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// One configuration per optimizer and scheme combination the attack models.
pub fn table_rows() -> Vec<SchemeConfig> {
    let base = SchemeConfig {
        scheme: Scheme::FedAvg,
        optimizer: Optimizer::Sgd,
        eta: 0.1,
        lambda: 0.5,
        gamma: 0.9,
        epochs: 4,
        batch_size: 8,
    };
    let with = |scheme, optimizer| SchemeConfig {
        scheme,
        optimizer,
        ..base
    };
    vec![
        with(Scheme::FedAvg, Optimizer::Sgd),
        with(Scheme::FedAvg, Optimizer::Sgdm),
        with(Scheme::FedAvg, Optimizer::Nag),
        with(Scheme::Scaffold, Optimizer::Sgd),
        with(Scheme::FedProx, Optimizer::Sgd),
        with(Scheme::FedDyn, Optimizer::Sgd),
        with(Scheme::FedDC, Optimizer::Sgd),
    ]
}

/// Worst relative error of the bias identity and of the target identity over
/// three rounds with three clients.
pub fn identity_errors(cfg: &SchemeConfig) -> (f64, f64) {
    let spec = BlobSpec {
        classes: 5,
        dim: 6,
        separation: 2.0,
    };
    let data = make_synthetic(&spec, 30, 8).unwrap();
    let part = dirichlet_partition(&data, 3, 1.0, 2).unwrap();
    let clients: Vec<_> = (0..3).map(|k| part.client_data(&data, k)).collect();
    let mut global = Model::new(&[6, 8, 5], Activation::Tanh, 4).unwrap();
    let mut histories: Vec<_> = (0..3).map(|k| UpdateHistory::new(k, global.params())).collect();
    let cfgs = vec![*cfg; 3];
    let (mut worst_bias, mut worst_target) = (0.0f64, 0.0f64);
    for t in 1..=3 {
        let out = run_round(&global, &clients, &cfgs, &mut histories, t, 77).unwrap();
        for k in 0..3 {
            let co = scheme_coefficients(cfg, t, &histories[k]).unwrap();
            let grads = &out.traces[k].per_epoch_ce_bias_grads;
            let weighted = grads
                .iter()
                .zip(&co.rho)
                .fold(DVector::zeros(5), |acc, (g, r)| acc + g * *r);
            let predicted = -&weighted * cfg.eta - &co.h;
            let observed = out.updates[k].delta_b_out();
            worst_bias = worst_bias.max((observed - &predicted).norm() / observed.norm());

            let u = make_target(&out.updates[k], &co, cfg).unwrap();
            let want = -&weighted / co.rho_sum();
            worst_target = worst_target.max((&u - &want).norm() / want.norm());
        }
        global = out.global;
    }
    (worst_bias, worst_target)
}
