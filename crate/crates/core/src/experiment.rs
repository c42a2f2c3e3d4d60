//! Seeded end-to-end experiments: data generation, multi-round simulation,
//! attacks on every client update, scoring, sweeps and reporting.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{estimate_moments, recover_labels, AttackParams};
use crate::data::{csv_err, dirichlet_partition, make_auxiliary, make_synthetic, BlobSpec, Dataset, Partition};
use crate::error::{Error, Result};
use crate::fedsim::{run_round, RoundLogRow, Scheme, SchemeConfig, UpdateHistory};
use crate::metrics::{score, Stats};
use crate::nn::{Activation, Model};
use crate::rng::{derive_seed, STREAM_ATTACK, STREAM_BATCH, STREAM_INIT, STREAM_PARTITION};

/// Partition redraws allowed while looking for one where every client can
/// fill a batch.
const PARTITION_ATTEMPTS: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub separation: f64,
    #[serde(default)]
    pub seed: u64,
}

impl DatasetConfig {
    pub fn blob_spec(&self) -> BlobSpec {
        BlobSpec {
            classes: self.classes,
            dim: self.dim,
            separation: self.separation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub clients: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![32],
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub aux_per_class: usize,
    /// Scheme the attacker believes the clients use; defaults to the true one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assume: Option<SchemeConfig>,
    #[serde(flatten)]
    pub params: AttackParams,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            aux_per_class: 100,
            assume: None,
            params: AttackParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
        }
    }
}

impl OutputConfig {
    pub fn results(&self) -> PathBuf {
        self.dir.join("results.csv")
    }
    pub fn round_log(&self) -> PathBuf {
        self.dir.join("rounds.csv")
    }
    pub fn dataset(&self) -> PathBuf {
        self.dir.join("dataset.csv")
    }
    pub fn auxiliary(&self) -> PathBuf {
        self.dir.join("aux.csv")
    }
    pub fn partition(&self) -> PathBuf {
        self.dir.join("partition.csv")
    }
    pub fn initial_model(&self) -> PathBuf {
        self.dir.join("model_init.json")
    }
    pub fn final_model(&self) -> PathBuf {
        self.dir.join("model_final.json")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub partition: PartitionConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub scheme: SchemeConfig,
    pub rounds: usize,
    /// First round whose updates are attacked; earlier rounds only train.
    #[serde(default = "one")]
    pub attack_from: usize,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn one() -> usize {
    1
}

fn check_contraction(cfg: &SchemeConfig) -> Result<()> {
    let regularized = matches!(cfg.scheme, Scheme::FedProx | Scheme::FedDyn | Scheme::FedDC);
    if regularized && cfg.lambda * cfg.eta >= 1.0 {
        return Err(Error::Validation(format!(
            "lambda * eta = {} must be below 1",
            cfg.lambda * cfg.eta
        )));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.blob_spec().validate()?;
        if self.dataset.per_class < 1 {
            return Err(Error::Validation("per_class must be positive".into()));
        }
        if self.partition.clients < 1 {
            return Err(Error::Validation("need at least one client".into()));
        }
        if !(self.partition.alpha > 0.0 && self.partition.alpha.is_finite()) {
            return Err(Error::Validation("alpha must be positive".into()));
        }
        if self.model.hidden.contains(&0) {
            return Err(Error::Validation("hidden layers must be nonempty".into()));
        }
        self.scheme.validate()?;
        check_contraction(&self.scheme)?;
        if let Some(a) = &self.attack.assume {
            a.validate()?;
            check_contraction(a)?;
        }
        if self.rounds < 1 {
            return Err(Error::Validation("rounds must be at least 1".into()));
        }
        if self.attack_from < 1 {
            return Err(Error::Validation("attack_from must be at least 1".into()));
        }
        if self.attack.aux_per_class < 1 || self.attack.params.samples < 1 || self.attack.params.search_samples < 1 {
            return Err(Error::Validation(
                "auxiliary size and Monte-Carlo sample counts must be positive".into(),
            ));
        }
        let total = self.dataset.classes * self.dataset.per_class;
        if self.scheme.batch_size * self.partition.clients > total {
            return Err(Error::Validation(format!(
                "{} clients cannot each hold a batch of {} from {total} samples",
                self.partition.clients, self.scheme.batch_size
            )));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.dataset.dim];
        sizes.extend(&self.model.hidden);
        sizes.push(self.dataset.classes);
        sizes
    }
}

/// Everything derived deterministically from a config before training.
#[derive(Debug, Clone)]
pub struct Setup {
    pub dataset: Dataset,
    pub auxiliary: Dataset,
    pub partition: Partition,
    pub model: Model,
}

/// Dirichlet partition, redrawn until every client holds at least one batch.
pub fn partition_for(dataset: &Dataset, clients: usize, alpha: f64, min_size: usize, seed: u64) -> Result<Partition> {
    for attempt in 0..PARTITION_ATTEMPTS {
        let p = dirichlet_partition(dataset, clients, alpha, derive_seed(seed, &[STREAM_PARTITION, attempt]))?;
        if p.assignments.iter().all(|a| a.len() >= min_size) {
            return Ok(p);
        }
    }
    Err(Error::Validation(format!(
        "no partition with {min_size} samples per client after {PARTITION_ATTEMPTS} draws"
    )))
}

pub fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    cfg.validate()?;
    let spec = cfg.dataset.blob_spec();
    let dataset = make_synthetic(&spec, cfg.dataset.per_class, cfg.dataset.seed)?;
    let auxiliary = make_auxiliary(&spec, cfg.attack.aux_per_class, cfg.dataset.seed)?;
    let partition = partition_for(
        &dataset,
        cfg.partition.clients,
        cfg.partition.alpha,
        cfg.scheme.batch_size,
        cfg.seed,
    )?;
    let model = Model::new(
        &cfg.layer_sizes(),
        cfg.model.activation,
        derive_seed(cfg.seed, &[STREAM_INIT]),
    )?;
    Ok(Setup {
        dataset,
        auxiliary,
        partition,
        model,
    })
}

/// Write the dataset, auxiliary set, partition and initial model.
pub fn generate_data(cfg: &ExperimentConfig) -> Result<Setup> {
    let s = setup(cfg)?;
    let out = &cfg.output;
    std::fs::create_dir_all(&out.dir).map_err(|e| Error::io(&out.dir, e))?;
    s.dataset.write_csv(&out.dataset())?;
    s.auxiliary.write_csv(&out.auxiliary())?;
    s.partition.write_csv(&out.partition())?;
    s.model.save_json(&out.initial_model())?;
    Ok(s)
}

/// One scored attack. Metric fields are empty when the attack failed, and
/// `status` then names the failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub seed: u64,
    pub round: usize,
    pub client: usize,
    pub scheme: String,
    pub optimizer: String,
    pub alpha: f64,
    pub m: usize,
    pub batch: usize,
    pub train_acc: f64,
    pub cacc: Option<f64>,
    pub iacc: Option<f64>,
    pub l1_err: Option<usize>,
    pub residual: Option<f64>,
    pub wall_ms: f64,
    pub status: String,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub log: Vec<RoundLogRow>,
    pub final_model: Model,
}

/// Train `cfg.rounds` rounds and attack every client update from round
/// `cfg.attack_from` on. The attack sees only the global model, the update,
/// the auxiliary set and the server-side history.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let s = setup(cfg)?;
    let k = cfg.partition.clients;
    let clients: Vec<Dataset> = (0..k).map(|c| s.partition.client_data(&s.dataset, c)).collect();
    let cfgs = vec![cfg.scheme; k];
    let attacker = cfg.attack.assume.unwrap_or(cfg.scheme);
    let mut histories: Vec<UpdateHistory> = (0..k)
        .map(|c| UpdateHistory::new(c, s.model.params()))
        .collect();
    let batch_seed = derive_seed(cfg.seed, &[STREAM_BATCH]);
    let attack_params = AttackParams {
        seed: derive_seed(cfg.seed, &[STREAM_ATTACK]),
        ..cfg.attack.params
    };

    let mut global = s.model;
    let mut rows = Vec::new();
    let mut log = Vec::new();
    for round in 1..=cfg.rounds {
        let outcome = run_round(&global, &clients, &cfgs, &mut histories, round, batch_seed)?;
        if round >= cfg.attack_from {
            let attacked: Vec<ResultRow> = outcome
                .updates
                .par_iter()
                .zip(histories.par_iter())
                .enumerate()
                .map(|(c, (update, history))| {
                    let start = Instant::now();
                    let report = recover_labels(&global, update, &s.auxiliary, &attacker, history, &attack_params);
                    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
                    let mut row = ResultRow {
                        seed: cfg.seed,
                        round,
                        client: c,
                        scheme: cfg.scheme.scheme.to_string(),
                        optimizer: cfg.scheme.optimizer.to_string(),
                        alpha: cfg.partition.alpha,
                        m: cfg.scheme.epochs,
                        batch: cfg.scheme.batch_size,
                        train_acc: outcome.log[c].train_acc,
                        cacc: None,
                        iacc: None,
                        l1_err: None,
                        residual: None,
                        wall_ms,
                        status: "ok".into(),
                    };
                    let truth = &outcome.plans[c].true_counts;
                    match report.and_then(|r| {
                        score(&r.counts, truth, cfg.scheme.epochs, cfg.scheme.batch_size).map(|sc| (r, sc))
                    }) {
                        Ok((r, sc)) => {
                            row.cacc = Some(sc.cacc);
                            row.iacc = Some(sc.iacc);
                            row.l1_err = Some(sc.l1_count_error);
                            row.residual = Some(r.residual);
                        }
                        Err(e) => row.status = e.kind().to_string(),
                    }
                    row
                })
                .collect();
            rows.extend(attacked);
        }
        log.extend(outcome.log);
        global = outcome.global;
    }
    Ok(ExperimentOutput {
        rows,
        log,
        final_model: global,
    })
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    if rows.is_empty() {
        w.write_record([
            "seed", "round", "client", "scheme", "optimizer", "alpha", "m", "batch", "train_acc",
            "cacc", "iacc", "l1_err", "residual", "wall_ms", "status",
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_err(path, e)))
        .collect()
}

/// Run and write results, round log and final model under `cfg.output`.
pub fn run_and_write(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let out = run_experiment(cfg)?;
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_results(&cfg.output.results(), &out.rows)?;
    crate::fedsim::write_round_log(&cfg.output.round_log(), &out.log)?;
    out.final_model.save_json(&cfg.output.final_model())?;
    Ok(out)
}

/// Cartesian grid over a base experiment. Empty axes keep the base value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: ExperimentConfig,
    #[serde(default)]
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub schemes: Vec<SchemeConfig>,
    #[serde(default)]
    pub epochs: Vec<usize>,
    #[serde(default)]
    pub attack_from: Vec<usize>,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

impl SweepConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }

    pub fn cells(&self) -> Vec<ExperimentConfig> {
        fn axis<T: Clone>(values: &[T], base: T) -> Vec<T> {
            if values.is_empty() {
                vec![base]
            } else {
                values.to_vec()
            }
        }
        let b = &self.base;
        let mut cells = Vec::new();
        for scheme in axis(&self.schemes, b.scheme) {
            for m in axis(&self.epochs, scheme.epochs) {
                for alpha in axis(&self.alphas, b.partition.alpha) {
                    for from in axis(&self.attack_from, b.attack_from) {
                        for seed in axis(&self.seeds, b.seed) {
                            let mut c = b.clone();
                            c.scheme = SchemeConfig { epochs: m, ..scheme };
                            c.partition.alpha = alpha;
                            c.attack_from = from;
                            c.rounds = c.rounds.max(from);
                            c.seed = seed;
                            cells.push(c);
                        }
                    }
                }
            }
        }
        cells
    }
}

/// Run every cell (concurrently) and concatenate rows in cell order.
pub fn run_sweep(sweep: &SweepConfig) -> Result<Vec<ResultRow>> {
    let cells = sweep.cells();
    for c in &cells {
        c.validate()?;
    }
    let results: Vec<Result<Vec<ResultRow>>> = cells
        .par_iter()
        .map(|c| run_experiment(c).map(|o| o.rows))
        .collect();
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub scheme: String,
    pub optimizer: String,
    pub alpha: f64,
    pub m: usize,
    pub batch: usize,
    pub round: usize,
    pub rows: usize,
    pub failures: usize,
    pub cacc_mean: Option<f64>,
    pub cacc_std: Option<f64>,
    pub iacc_mean: Option<f64>,
    pub iacc_std: Option<f64>,
    pub l1_mean: Option<f64>,
    pub l1_std: Option<f64>,
}

/// Group result rows by configuration and round, with mean and std of the
/// scores of successful attacks.
pub fn report(rows: &[ResultRow]) -> Vec<ReportRow> {
    type Key = (String, String, u64, usize, usize, usize);
    let mut groups: BTreeMap<Key, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.scheme.clone(), r.optimizer.clone(), r.alpha.to_bits(), r.m, r.batch, r.round);
        groups.entry(key).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((scheme, optimizer, alpha, m, batch, round), members)| {
            let ok: Vec<&&ResultRow> = members.iter().filter(|r| r.is_ok()).collect();
            let stats = |f: &dyn Fn(&ResultRow) -> Option<f64>| {
                let v: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
                Stats::of(&v).ok()
            };
            let c = stats(&|r| r.cacc);
            let i = stats(&|r| r.iacc);
            let l = stats(&|r| r.l1_err.map(|v| v as f64));
            ReportRow {
                scheme,
                optimizer,
                alpha: f64::from_bits(alpha),
                m,
                batch,
                round,
                rows: members.len(),
                failures: members.len() - ok.len(),
                cacc_mean: c.map(|s| s.mean),
                cacc_std: c.map(|s| s.std),
                iacc_mean: i.map(|s| s.mean),
                iacc_std: i.map(|s| s.std),
                l1_mean: l.map(|s| s.mean),
                l1_std: l.map(|s| s.std),
            }
        })
        .collect()
}

pub fn write_report(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub const HISTOGRAM_BINS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub n: usize,
    pub j: usize,
    pub bin_left: f64,
    pub bin_right: f64,
    pub count: usize,
}

/// Histogram of logit `j` over the samples of class `n`, for each requested
/// pair (all pairs when `pairs` is `None`). Constant values get a unit-wide
/// range centred on the value.
pub fn logit_histograms(model: &Model, data: &Dataset, pairs: Option<&[(usize, usize)]>) -> Result<Vec<HistogramRow>> {
    let n_cls = model.classes();
    if data.classes() != n_cls || data.dim() != model.input_dim() {
        return Err(Error::Argument("dataset does not match the model".into()));
    }
    let all: Vec<(usize, usize)> = (0..n_cls).flat_map(|n| (0..n_cls).map(move |j| (n, j))).collect();
    let pairs = pairs.unwrap_or(&all);
    let mut logits: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n_cls];
    for i in 0..data.len() {
        let q = model.forward(data.row(i))?.logits;
        logits[data.label(i)].push(q.iter().copied().collect());
    }
    let mut out = Vec::with_capacity(pairs.len() * HISTOGRAM_BINS);
    for &(n, j) in pairs {
        if n >= n_cls || j >= n_cls {
            return Err(Error::Argument(format!("class pair ({n}, {j}) out of range")));
        }
        let values: Vec<f64> = logits[n].iter().map(|q| q[j]).collect();
        if values.is_empty() {
            return Err(Error::Argument(format!("dataset has no sample of class {n}")));
        }
        let mut lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo == hi {
            lo -= 0.5;
            hi += 0.5;
        }
        let width = (hi - lo) / HISTOGRAM_BINS as f64;
        let mut counts = [0usize; HISTOGRAM_BINS];
        for v in &values {
            let b = (((v - lo) / width) as usize).min(HISTOGRAM_BINS - 1);
            counts[b] += 1;
        }
        for (b, count) in counts.into_iter().enumerate() {
            out.push(HistogramRow {
                n,
                j,
                bin_left: lo + b as f64 * width,
                bin_right: if b + 1 == HISTOGRAM_BINS { hi } else { lo + (b + 1) as f64 * width },
                count,
            });
        }
    }
    Ok(out)
}

pub fn write_histograms(path: &Path, rows: &[HistogramRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-class logit means on `data`, for quick inspection of trained models.
pub fn logit_means(model: &Model, data: &Dataset) -> Result<nalgebra::DMatrix<f64>> {
    Ok(estimate_moments(model, data)?.mu)
}
