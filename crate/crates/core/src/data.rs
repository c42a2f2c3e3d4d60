//! Synthetic data, Dirichlet partitioning and batch planning.

use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::apportion::largest_remainder;
use crate::error::{Error, Result};
use crate::rng::{rng_from, STREAM_AUX, STREAM_BATCH, STREAM_DATA, STREAM_PARTITION};

/// Labelled feature matrix, rows stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("feature dimension must be at least 1".into()));
        }
        if features.len() != dim * labels.len() {
            return Err(Error::Shape(format!(
                "{} feature values do not form {} rows of width {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Argument(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Dataset {
            features,
            dim,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Indices of every sample with label `class`, ascending.
    pub fn indices_of(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            dim: self.dim,
            labels,
            classes: self.classes,
        }
    }

    /// Rows and labels for a set of indices, borrowed.
    pub fn gather(&self, indices: &[usize]) -> (Vec<&[f64]>, Vec<usize>) {
        (
            indices.iter().map(|&i| self.row(i)).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// Writes `f0,...,f{d-1},label`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut header: Vec<String> = (0..self.dim).map(|i| format!("f{i}")).collect();
        header.push("label".into());
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.labels[i].to_string());
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a dataset CSV. When `classes` is `None` the class count is
    /// inferred as one past the largest label.
    pub fn read_csv(path: &Path, classes: Option<usize>) -> Result<Dataset> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
        let dim = header.len().saturating_sub(1);
        let expected = (0..dim)
            .map(|i| format!("f{i}"))
            .chain(std::iter::once("label".to_string()));
        if dim == 0 || !header.iter().zip(expected).all(|(h, e)| h == e) {
            return Err(Error::parse(path, "expected header f0,...,f{d-1},label"));
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            for v in rec.iter().take(dim) {
                features.push(
                    v.parse::<f64>()
                        .map_err(|e| Error::parse(path, format!("row {}: {e}", line + 1)))?,
                );
            }
            labels.push(
                rec[dim]
                    .parse::<usize>()
                    .map_err(|e| Error::parse(path, format!("row {}: {e}", line + 1)))?,
            );
        }
        let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
        Dataset::new(features, dim, labels, classes)
    }
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::parse(path, format!("{other:?}")),
        }
    } else {
        Error::parse(path, e)
    }
}

/// Gaussian blob generator: class `j` is centred at `separation * u_j` with
/// unit isotropic noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub classes: usize,
    pub dim: usize,
    pub separation: f64,
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 1 {
            return Err(Error::Argument("feature dimension must be at least 1".into()));
        }
        if self.classes < 2 {
            return Err(Error::Argument("need at least two classes".into()));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::Argument("separation must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// Unit direction of class `j`: a coordinate axis when there are at least
    /// as many dimensions as classes, otherwise a fixed pseudo-random unit vector.
    pub fn direction(&self, j: usize) -> Vec<f64> {
        if self.classes <= self.dim {
            let mut u = vec![0.0; self.dim];
            u[j] = 1.0;
            return u;
        }
        let mut rng = rng_from(0x5EED_D1EC, &[self.dim as u64, j as u64]);
        loop {
            let v: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }

    fn generate(&self, per_class: usize, rng: &mut crate::rng::Rng) -> Result<Dataset> {
        self.validate()?;
        if per_class < 1 {
            return Err(Error::Argument("per_class must be at least 1".into()));
        }
        let mut features = Vec::with_capacity(self.classes * per_class * self.dim);
        let mut labels = Vec::with_capacity(self.classes * per_class);
        for j in 0..self.classes {
            let centre: Vec<f64> = self.direction(j).iter().map(|u| u * self.separation).collect();
            for _ in 0..per_class {
                for c in &centre {
                    let noise: f64 = rng.sample(StandardNormal);
                    features.push(c + noise);
                }
                labels.push(j);
            }
        }
        Dataset::new(features, self.dim, labels, self.classes)
    }
}

/// Client-side training pool: `per_class` samples of every class.
pub fn make_synthetic(spec: &BlobSpec, per_class: usize, seed: u64) -> Result<Dataset> {
    spec.generate(per_class, &mut rng_from(seed, &[STREAM_DATA]))
}

/// Server-side auxiliary set: same distribution, disjoint random stream.
pub fn make_auxiliary(spec: &BlobSpec, per_class: usize, seed: u64) -> Result<Dataset> {
    spec.generate(per_class, &mut rng_from(seed, &[STREAM_AUX]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    /// Per-client sample indices into the parent dataset, ascending.
    pub assignments: Vec<Vec<usize>>,
    pub alpha: f64,
    pub seed: u64,
}

impl Partition {
    pub fn clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn client_data(&self, dataset: &Dataset, k: usize) -> Dataset {
        dataset.subset(&self.assignments[k])
    }

    /// `client,sample_index` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["client", "sample_index"])
            .map_err(|e| csv_err(path, e))?;
        for (k, idx) in self.assignments.iter().enumerate() {
            for i in idx {
                w.write_record([k.to_string(), i.to_string()])
                    .map_err(|e| csv_err(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Split `dataset` over `clients` with per-class proportions drawn from a
/// symmetric Dirichlet(`alpha`). Counts are apportioned per class so that the
/// class totals are conserved exactly.
pub fn dirichlet_partition(
    dataset: &Dataset,
    clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<Partition> {
    if clients < 1 {
        return Err(Error::Argument("need at least one client".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Argument(format!("alpha must be positive, got {alpha}")));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::Argument(e.to_string()))?;
    let mut assignments = vec![Vec::new(); clients];

    for class in 0..dataset.classes() {
        let mut rng = rng_from(seed, &[STREAM_PARTITION, class as u64]);
        let mut members = dataset.indices_of(class);
        if members.is_empty() {
            continue;
        }
        let mut p: Vec<f64> = (0..clients).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = p.iter().sum();
        if total > 0.0 && total.is_finite() {
            p.iter_mut().for_each(|v| *v /= total);
        } else {
            // every gamma draw underflowed: the limit is a one-hot proportion
            let winner = rng.random_range(0..clients);
            p = (0..clients).map(|k| if k == winner { 1.0 } else { 0.0 }).collect();
        }
        let n = members.len();
        let quotas: Vec<f64> = p.iter().map(|v| v * n as f64).collect();
        let counts = largest_remainder(&quotas, n)?;

        members.shuffle(&mut rng);
        let mut start = 0;
        for (k, c) in counts.into_iter().enumerate() {
            assignments[k].extend_from_slice(&members[start..start + c]);
            start += c;
        }
    }
    for a in &mut assignments {
        a.sort_unstable();
    }
    Ok(Partition {
        assignments,
        alpha,
        seed,
    })
}

/// The local batches a client will draw during one round, with the ground
/// truth label tallies. Ground truth is for scoring only.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    /// `m` index lists into the client dataset, each of length `batch_size`.
    pub batches: Vec<Vec<usize>>,
    pub batch_size: usize,
    pub true_counts: Vec<usize>,
    pub per_epoch_counts: Vec<Vec<usize>>,
}

impl BatchPlan {
    pub fn epochs(&self) -> usize {
        self.batches.len()
    }
}

/// Draw `epochs` batches; each batch samples without replacement from a fresh
/// shuffle of the client data.
pub fn plan_batches(
    client_data: &Dataset,
    batch_size: usize,
    epochs: usize,
    seed: u64,
) -> Result<BatchPlan> {
    if batch_size == 0 || epochs == 0 {
        return Err(Error::Argument("batch size and epoch count must be positive".into()));
    }
    if batch_size > client_data.len() {
        return Err(Error::Argument(format!(
            "batch size {batch_size} exceeds client dataset of {} samples",
            client_data.len()
        )));
    }
    let mut rng = rng_from(seed, &[STREAM_BATCH]);
    let classes = client_data.classes();
    let mut batches = Vec::with_capacity(epochs);
    let mut per_epoch_counts = Vec::with_capacity(epochs);
    let mut true_counts = vec![0; classes];
    for _ in 0..epochs {
        let batch = index::sample(&mut rng, client_data.len(), batch_size).into_vec();
        let mut counts = vec![0; classes];
        for &i in &batch {
            counts[client_data.label(i)] += 1;
        }
        for (t, c) in true_counts.iter_mut().zip(&counts) {
            *t += c;
        }
        batches.push(batch);
        per_epoch_counts.push(counts);
    }
    Ok(BatchPlan {
        batches,
        batch_size,
        true_counts,
        per_epoch_counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec() -> BlobSpec {
        BlobSpec {
            classes: 4,
            dim: 3,
            separation: 2.0,
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = make_synthetic(&spec(), 10, 5).unwrap();
        let b = make_synthetic(&spec(), 10, 5).unwrap();
        assert_eq!(a, b);
        let c = make_synthetic(&spec(), 10, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synthetic_validates() {
        let mut s = spec();
        s.dim = 0;
        assert!(make_synthetic(&s, 1, 0).is_err());
        assert!(make_synthetic(&spec(), 0, 0).is_err());
        let mut s = spec();
        s.classes = 1;
        assert!(make_synthetic(&s, 1, 0).is_err());
    }

    #[test]
    fn directions_are_unit() {
        let s = BlobSpec {
            classes: 12,
            dim: 5,
            separation: 1.0,
        };
        for j in 0..12 {
            let n: f64 = s.direction(j).iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn auxiliary_sizes() {
        let s = BlobSpec {
            classes: 10,
            dim: 16,
            separation: 3.0,
        };
        let aux = make_auxiliary(&s, 100, 1).unwrap();
        assert_eq!(aux.len(), 1000);
        assert_eq!(aux.class_counts(), vec![100; 10]);
        let small = make_auxiliary(&s, 5, 1).unwrap();
        assert_eq!(small.class_counts(), vec![5; 10]);
        let client = make_synthetic(&s, 5, 1).unwrap();
        assert_ne!(small, client);
    }

    #[test]
    fn single_client_gets_everything() {
        let d = make_synthetic(&spec(), 7, 1).unwrap();
        let p = dirichlet_partition(&d, 1, 0.3, 9).unwrap();
        assert_eq!(p.assignments[0], (0..d.len()).collect::<Vec<_>>());
    }

    #[test]
    fn partition_rejects_bad_args() {
        let d = make_synthetic(&spec(), 3, 1).unwrap();
        assert!(dirichlet_partition(&d, 0, 1.0, 0).is_err());
        assert!(dirichlet_partition(&d, 2, 0.0, 0).is_err());
    }

    #[test]
    fn smaller_alpha_is_more_skewed() {
        let d = make_synthetic(
            &BlobSpec {
                classes: 10,
                dim: 4,
                separation: 1.0,
            },
            100,
            3,
        )
        .unwrap();
        let mean_max_share = |alpha: f64| {
            let mut acc = 0.0;
            for seed in 0..50 {
                let p = dirichlet_partition(&d, 10, alpha, seed).unwrap();
                for class in 0..10 {
                    let max = p
                        .assignments
                        .iter()
                        .map(|a| a.iter().filter(|&&i| d.label(i) == class).count())
                        .max()
                        .unwrap();
                    acc += max as f64 / 100.0;
                }
            }
            acc / 500.0
        };
        assert!(mean_max_share(0.05) > mean_max_share(5.0));
    }

    #[test]
    fn single_class_client_counts() {
        let d = make_synthetic(&spec(), 20, 1).unwrap();
        let only3 = d.subset(&d.indices_of(3));
        let plan = plan_batches(&only3, 8, 4, 2).unwrap();
        assert_eq!(plan.true_counts, vec![0, 0, 0, 32]);
    }

    #[test]
    fn plan_matches_recount() {
        let d = make_synthetic(
            &BlobSpec {
                classes: 2,
                dim: 2,
                separation: 1.0,
            },
            50,
            4,
        )
        .unwrap();
        let plan = plan_batches(&d, 32, 3, 11).unwrap();
        let mut tally = [0usize; 2];
        for b in &plan.batches {
            assert_eq!(b.len(), 32);
            let mut seen = b.clone();
            seen.sort_unstable();
            seen.dedup();
            assert_eq!(seen.len(), 32, "no repeats within a batch");
            for &i in b {
                tally[d.label(i)] += 1;
            }
        }
        assert_eq!(plan.true_counts, tally.to_vec());
        for row in &plan.per_epoch_counts {
            assert_eq!(row.iter().sum::<usize>(), 32);
        }
    }

    #[test]
    fn plan_rejects_oversized_batch() {
        let d = make_synthetic(&spec(), 2, 1).unwrap();
        assert!(matches!(plan_batches(&d, 9, 1, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn csv_round_trip() {
        let d = make_synthetic(&spec(), 3, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        d.write_csv(&path).unwrap();
        let back = Dataset::read_csv(&path, Some(4)).unwrap();
        assert_eq!(d, back);
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("f0,f1,f2,label\n"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn partition_conserves_and_covers(k in 1usize..12, alpha in 0.01f64..10.0, seed in 0u64..1000) {
            let d = make_synthetic(&spec(), 13, seed).unwrap();
            let p = dirichlet_partition(&d, k, alpha, seed).unwrap();
            let mut all: Vec<usize> = p.assignments.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..d.len()).collect::<Vec<_>>());
            for class in 0..4 {
                let per: usize = p.assignments.iter()
                    .map(|a| a.iter().filter(|&&i| d.label(i) == class).count())
                    .sum();
                prop_assert_eq!(per, 13);
            }
        }
    }
}
