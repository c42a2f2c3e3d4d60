//! Small feed-forward classifier with analytic softmax cross-entropy gradients.
//!
//! Hidden layers apply a shared activation; the output layer is affine, so the
//! logits are `q = W e + b` where `e` is the activated penultimate output (the
//! embedding). With a single layer the embedding is the input itself.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from, STREAM_INIT};

pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Elu,
    Selu,
    Silu,
}

impl Activation {
    pub const ALL: [Activation; 5] = [
        Activation::Relu,
        Activation::Tanh,
        Activation::Elu,
        Activation::Selu,
        Activation::Silu,
    ];

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA * x
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
                }
            }
            Activation::Silu => x * sigmoid(x),
        }
    }

    /// Derivative with respect to the pre-activation.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Activation::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp()
                }
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Elu => "elu",
            Activation::Selu => "selu",
            Activation::Silu => "silu",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Activation::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Argument(format!("unknown activation '{s}'")))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One affine layer: `weights` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            weights: DMatrix::zeros(outputs, inputs),
            bias: DVector::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

/// A full parameter set (or a same-shaped delta, gradient, control variate).
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub layers: Vec<Dense>,
}

/// Gradients share the parameter layout.
pub type Gradients = Params;

impl Params {
    pub fn zeros_like(other: &Params) -> Self {
        Params {
            layers: other
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs(), l.outputs()))
                .collect(),
        }
    }

    pub fn same_shape(&self, other: &Params) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weights.shape() == b.weights.shape())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Params) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.zip_apply(&b.weights, |x, y| *x += alpha * y);
            a.bias.axpy(alpha, &b.bias, 1.0);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for l in &mut self.layers {
            l.weights *= alpha;
            l.bias *= alpha;
        }
    }

    /// `self - other`
    pub fn sub(&self, other: &Params) -> Params {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite())
        })
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().all(|v| *v == 0.0) && l.bias.iter().all(|v| *v == 0.0))
    }

    pub fn len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat view: layer by layer, weights row-major then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for l in &self.layers {
            for r in 0..l.weights.nrows() {
                out.extend(l.weights.row(r).iter());
            }
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.len());
        let mut k = 0;
        for l in &mut self.layers {
            for r in 0..l.weights.nrows() {
                for c in 0..l.weights.ncols() {
                    l.weights[(r, c)] = flat[k];
                    k += 1;
                }
            }
            for v in l.bias.iter_mut() {
                *v = flat[k];
                k += 1;
            }
        }
    }

    pub fn output(&self) -> &Dense {
        self.layers.last().expect("parameter set has no layers")
    }
}

/// Result of a forward pass on one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub logits: DVector<f64>,
    pub embedding: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    params: Params,
    activation: Activation,
}

impl Model {
    /// Randomly initialised model; `sizes` lists input, hidden..., class count.
    /// Parameters are uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new(sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Argument(format!(
                "layer sizes must have at least two positive entries, got {sizes:?}"
            )));
        }
        let mut rng = rng_from(seed, &[STREAM_INIT]);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut d = Dense::zeros(fan_in, fan_out);
                for r in 0..fan_out {
                    for c in 0..fan_in {
                        d.weights[(r, c)] = rng.random_range(-bound..=bound);
                    }
                }
                for v in d.bias.iter_mut() {
                    *v = rng.random_range(-bound..=bound);
                }
                d
            })
            .collect();
        Ok(Model {
            params: Params { layers },
            activation,
        })
    }

    pub fn from_params(params: Params, activation: Activation) -> Result<Self> {
        if params.layers.is_empty() {
            return Err(Error::Shape("model needs at least one layer".into()));
        }
        for (i, w) in params.layers.windows(2).enumerate() {
            if w[0].outputs() != w[1].inputs() {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    w[0].outputs(),
                    i + 1,
                    w[1].inputs()
                )));
            }
        }
        for (i, l) in params.layers.iter().enumerate() {
            if l.bias.len() != l.outputs() {
                return Err(Error::Shape(format!("layer {i} bias length mismatch")));
            }
        }
        if !params.is_finite() {
            return Err(Error::Numeric("model parameters must be finite".into()));
        }
        Ok(Model { params, activation })
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.params.layers[0].inputs()
    }

    pub fn classes(&self) -> usize {
        self.params.output().outputs()
    }

    pub fn embedding_dim(&self) -> usize {
        self.params.output().inputs()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.params.layers.iter().map(|l| l.outputs()));
        sizes
    }

    /// Copy of this model with `delta` added to every parameter.
    pub fn with_delta(&self, delta: &Params) -> Result<Model> {
        if !self.params.same_shape(delta) {
            return Err(Error::Shape("delta does not match model layout".into()));
        }
        let mut out = self.clone();
        out.params.axpy(1.0, delta);
        Ok(out)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut a = DVector::from_column_slice(x);
        let last = self.params.layers.len() - 1;
        for layer in &self.params.layers[..last] {
            let mut z = &layer.weights * &a + &layer.bias;
            z.apply(|v| *v = self.activation.apply(*v));
            a = z;
        }
        let out = &self.params.layers[last];
        let logits = &out.weights * &a + &out.bias;
        Ok(Forward {
            logits,
            embedding: a,
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(self.forward(x)?.logits.argmax().0)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&Checkpoint::from(self))
            .map_err(|e| Error::parse(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Model> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        ckpt.into_model()
    }
}

/// Checkpoint layout: header (`layer_sizes`, `activation`) followed by one
/// entry per layer holding the row-major weight matrix and the bias vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub layers: Vec<CheckpointLayer>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointLayer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

const CHECKPOINT_FORMAT: &str = "labelleak-model";

impl From<&Model> for Checkpoint {
    fn from(m: &Model) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: 1,
            layer_sizes: m.layer_sizes(),
            activation: m.activation,
            layers: m
                .params
                .layers
                .iter()
                .map(|l| CheckpointLayer {
                    weights: (0..l.weights.nrows())
                        .flat_map(|r| l.weights.row(r).iter().copied().collect::<Vec<_>>())
                        .collect(),
                    bias: l.bias.iter().copied().collect(),
                })
                .collect(),
        }
    }
}

impl Checkpoint {
    pub fn into_model(self) -> Result<Model> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Argument(format!(
                "unexpected checkpoint format '{}'",
                self.format
            )));
        }
        if self.layer_sizes.len() != self.layers.len() + 1 {
            return Err(Error::Shape("layer_sizes does not match layer count".into()));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.into_iter().enumerate() {
            let (fan_in, fan_out) = (self.layer_sizes[i], self.layer_sizes[i + 1]);
            if l.weights.len() != fan_in * fan_out || l.bias.len() != fan_out {
                return Err(Error::Shape(format!("layer {i} array sizes do not match header")));
            }
            layers.push(Dense {
                weights: DMatrix::from_row_slice(fan_out, fan_in, &l.weights),
                bias: DVector::from_vec(l.bias),
            });
        }
        Model::from_params(Params { layers }, self.activation)
    }
}

/// Numerically stable softmax.
pub fn softmax(q: &DVector<f64>) -> Result<DVector<f64>> {
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("softmax input is not finite".into()));
    }
    Ok(softmax_unchecked(q.as_slice()))
}

pub(crate) fn softmax_unchecked(q: &[f64]) -> DVector<f64> {
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = DVector::from_iterator(q.len(), q.iter().map(|v| (v - max).exp()));
    let sum: f64 = out.iter().sum();
    out /= sum;
    out
}

pub(crate) fn log_sum_exp(q: &[f64]) -> f64 {
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + q.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Per-sample cross-entropy gradient with respect to the output bias:
/// `s_j` off the true class and `s_y - 1` on it.
pub fn output_layer_gradient(q: &DVector<f64>, y: usize) -> Result<DVector<f64>> {
    if y >= q.len() {
        return Err(Error::Argument(format!(
            "label {y} out of range for {} classes",
            q.len()
        )));
    }
    let mut g = softmax(q)?;
    // -(sum of the other probabilities) keeps the zero-sum exact in rounding terms
    let others: f64 = g.iter().enumerate().filter(|(j, _)| *j != y).map(|(_, v)| v).sum();
    g[y] = -others;
    Ok(g)
}

/// Everything a training step needs from one batch.
#[derive(Debug, Clone)]
pub struct BackwardPass {
    pub loss: f64,
    pub grads: Gradients,
    /// Batch mean of the embedding vectors.
    pub mean_embedding: DVector<f64>,
    pub correct: usize,
}

/// Mean cross-entropy loss and batch-mean gradients.
pub fn backward(model: &Model, xs: &[&[f64]], ys: &[usize]) -> Result<(f64, Gradients)> {
    let pass = backward_pass(model, xs, ys)?;
    Ok((pass.loss, pass.grads))
}

pub fn backward_pass(model: &Model, xs: &[&[f64]], ys: &[usize]) -> Result<BackwardPass> {
    if xs.is_empty() {
        return Err(Error::Argument("backward needs a nonempty batch".into()));
    }
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!(
            "{} samples but {} labels",
            xs.len(),
            ys.len()
        )));
    }
    let n_classes = model.classes();
    let layers = &model.params.layers;
    let depth = layers.len();
    let act = model.activation;

    let mut grads = Params::zeros_like(&model.params);
    let mut loss = 0.0;
    let mut correct = 0;
    let mut mean_embedding = DVector::zeros(model.embedding_dim());

    let mut pre: Vec<DVector<f64>> = Vec::with_capacity(depth);
    let mut post: Vec<DVector<f64>> = Vec::with_capacity(depth);

    for (x, &y) in xs.iter().zip(ys) {
        if y >= n_classes {
            return Err(Error::Argument(format!(
                "label {y} out of range for {n_classes} classes"
            )));
        }
        if x.len() != model.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} features, model expects {}",
                x.len(),
                model.input_dim()
            )));
        }
        pre.clear();
        post.clear();
        post.push(DVector::from_column_slice(x));
        for (i, layer) in layers.iter().enumerate() {
            let z = &layer.weights * &post[i] + &layer.bias;
            let a = if i + 1 < depth {
                z.map(|v| act.apply(v))
            } else {
                z.clone()
            };
            pre.push(z);
            post.push(a);
        }
        let q = &post[depth];
        loss += log_sum_exp(q.as_slice()) - q[y];
        if q.argmax().0 == y {
            correct += 1;
        }
        mean_embedding += &post[depth - 1];

        let mut delta = output_layer_gradient(q, y)?;
        for i in (0..depth).rev() {
            grads.layers[i].weights.ger(1.0, &delta, &post[i], 1.0);
            grads.layers[i].bias += &delta;
            if i > 0 {
                let mut back = layers[i].weights.tr_mul(&delta);
                for (b, z) in back.iter_mut().zip(pre[i - 1].iter()) {
                    *b *= act.derivative(*z);
                }
                delta = back;
            }
        }
    }
    let n = xs.len() as f64;
    grads.scale(1.0 / n);
    mean_embedding /= n;
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(Error::Numeric("cross-entropy loss is not finite".into()));
    }
    Ok(BackwardPass {
        loss,
        grads,
        mean_embedding,
        correct,
    })
}

/// Mean cross-entropy of `model` over a batch, without gradients.
pub fn batch_loss(model: &Model, xs: &[&[f64]], ys: &[usize]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let q = model.forward(x)?.logits;
        total += log_sum_exp(q.as_slice()) - q[y];
    }
    Ok(total / xs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn zero_model(sizes: &[usize], bias: &[f64]) -> Model {
        let mut m = Model::new(sizes, Activation::Relu, 0).unwrap();
        for l in &mut m.params.layers {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
        m.params.layers.last_mut().unwrap().bias = DVector::from_column_slice(bias);
        m
    }

    #[test]
    fn zero_weights_collapse_to_bias() {
        let m = zero_model(&[3, 4, 2], &[1.0, 2.0]);
        let f = m.forward(&[0.3, -2.0, 5.0]).unwrap();
        assert_eq!(f.logits.as_slice(), &[1.0, 2.0]);
        assert!(f.embedding.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_single_layer() {
        let layer = Dense {
            weights: DMatrix::identity(2, 2),
            bias: DVector::zeros(2),
        };
        let m = Model::from_params(Params { layers: vec![layer] }, Activation::Relu).unwrap();
        let f = m.forward(&[3.0, -1.0]).unwrap();
        assert_eq!(f.logits.as_slice(), &[3.0, -1.0]);
        assert_eq!(f.embedding.as_slice(), &[3.0, -1.0]);
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let m = Model::new(&[3, 2], Activation::Tanh, 1).unwrap();
        assert!(matches!(m.forward(&[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn forward_matches_naive_loops() {
        let m = Model::new(&[5, 7, 4], Activation::Tanh, 42).unwrap();
        let x = [0.5, -1.25, 2.0, 0.0, 0.75];
        let l0 = &m.params.layers[0];
        let l1 = &m.params.layers[1];
        let mut h = [0.0; 7];
        for r in 0..7 {
            let mut s = l0.bias[r];
            for c in 0..5 {
                s += l0.weights[(r, c)] * x[c];
            }
            h[r] = s.tanh();
        }
        let f = m.forward(&x).unwrap();
        for r in 0..4 {
            let mut s = l1.bias[r];
            for c in 0..7 {
                s += l1.weights[(r, c)] * h[c];
            }
            assert_relative_eq!(f.logits[r], s, max_relative = 1e-12);
        }
    }

    #[test]
    fn softmax_examples() {
        let u = softmax(&DVector::from_vec(vec![0.0; 4])).unwrap();
        assert!(u.iter().all(|v| (*v - 0.25).abs() < 1e-15));

        for c in [-40.0, 0.0, 3.5, 700.0] {
            let p = softmax(&DVector::from_vec(vec![c, c + 3f64.ln()])).unwrap();
            assert_relative_eq!(p[0], 0.25, epsilon = 1e-12);
            assert_relative_eq!(p[1], 0.75, epsilon = 1e-12);
        }

        let e2 = 2f64.exp();
        let p = softmax(&DVector::from_vec(vec![2.0, 0.0])).unwrap();
        assert_relative_eq!(p[0], e2 / (e2 + 1.0), epsilon = 1e-15);
        assert!((p[0] - 0.8808).abs() < 1e-4 && (p[1] - 0.1192).abs() < 1e-4);
    }

    #[test]
    fn softmax_rejects_nan() {
        assert!(matches!(
            softmax(&DVector::from_vec(vec![0.0, f64::NAN])),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn bias_gradient_examples() {
        let g = output_layer_gradient(&DVector::zeros(4), 0).unwrap();
        assert_eq!(g.as_slice(), &[-0.75, 0.25, 0.25, 0.25]);

        let g = output_layer_gradient(&DVector::from_vec(vec![2.0, 0.0]), 0).unwrap();
        assert!((g[0] + 0.1192).abs() < 1e-4 && (g[1] - 0.1192).abs() < 1e-4);

        assert!(output_layer_gradient(&DVector::zeros(3), 3).is_err());
    }

    #[test]
    fn backward_single_sample_zero_hidden() {
        let m = zero_model(&[3, 4, 3], &[0.2, -0.4, 1.0]);
        let (_, g) = backward(&m, &[&[1.0, 2.0, 3.0]], &[1]).unwrap();
        let expected = output_layer_gradient(&m.params.output().bias, 1).unwrap();
        assert_relative_eq!(g.output().bias, expected, epsilon = 1e-15);
    }

    #[test]
    fn backward_duplicate_sample_is_mean_invariant() {
        let m = Model::new(&[3, 5, 3], Activation::Silu, 3).unwrap();
        let x: &[f64] = &[0.1, -0.7, 1.3];
        let (l1, g1) = backward(&m, &[x], &[2]).unwrap();
        let (l2, g2) = backward(&m, &[x, x], &[2, 2]).unwrap();
        assert_relative_eq!(l1, l2, max_relative = 1e-14);
        for (a, b) in g1.to_flat().iter().zip(g2.to_flat()) {
            assert_relative_eq!(*a, b, max_relative = 1e-13, epsilon = 1e-15);
        }
    }

    #[test]
    fn backward_rejects_empty_batch() {
        let m = Model::new(&[2, 2], Activation::Relu, 0).unwrap();
        assert!(matches!(backward(&m, &[], &[]), Err(Error::Argument(_))));
    }

    #[test]
    fn activations_fix_zero() {
        for a in Activation::ALL {
            assert_eq!(a.apply(0.0), 0.0, "{a:?}");
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let m = Model::new(&[4, 6, 3], Activation::Selu, 99).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save_json(&path).unwrap();
        let back = Model::load_json(&path).unwrap();
        let a: Vec<u64> = m.params().to_flat().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.params().to_flat().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(back.activation(), Activation::Selu);
    }
}
