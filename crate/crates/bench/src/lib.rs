//! Fixtures shared by the benchmarks.

use labelleak_core::attack::{build_system, estimate_moments, mc_confusion, LogitMoments};
use labelleak_core::data::{make_auxiliary, make_synthetic, plan_batches, BlobSpec, Dataset};
use labelleak_core::fedsim::{local_train, LocalUpdate, SchemeConfig, UpdateHistory};
use labelleak_core::nn::{Activation, Model};
use nalgebra::{DMatrix, DVector};

pub const CLASSES: usize = 10;

pub struct Fixture {
    pub model: Model,
    pub data: Dataset,
    pub aux: Dataset,
    pub moments: LogitMoments,
    pub cfg: SchemeConfig,
    pub update: LocalUpdate,
    pub history: UpdateHistory,
}

/// One client update from an untrained 20-32-10 relu network on blob data.
pub fn fixture(epochs: usize) -> Fixture {
    let spec = BlobSpec {
        classes: CLASSES,
        dim: 20,
        separation: 3.0,
    };
    let data = make_synthetic(&spec, 100, 1).expect("blob data");
    let aux = make_auxiliary(&spec, 100, 1).expect("auxiliary data");
    let model = Model::new(&[20, 32, CLASSES], Activation::Relu, 1).expect("model");
    let cfg = SchemeConfig::fedavg_sgd(0.05, epochs, 32);
    let plan = plan_batches(&data, cfg.batch_size, epochs, 1).expect("batch plan");
    let mut history = UpdateHistory::new(0, model.params());
    let (update, _, _) = local_train(&model, &data, &plan, &cfg, &mut history, 1).expect("local training");
    let moments = estimate_moments(&model, &aux).expect("moments");
    Fixture {
        model,
        data,
        aux,
        moments,
        cfg,
        update,
        history,
    }
}

/// Coefficient matrix and a target it cannot fit exactly.
pub fn system(fx: &Fixture) -> (DMatrix<f64>, DVector<f64>) {
    let s = mc_confusion(&fx.moments, 1000, 2).expect("confusion");
    let a = build_system(&s);
    let u = DVector::from_fn(CLASSES, |j, _| if j == 0 { 0.9 } else { -0.1 });
    (a, u)
}
