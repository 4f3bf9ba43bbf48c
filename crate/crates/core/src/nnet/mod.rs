//! Feed-forward acoustic network for hybrid decoding.

mod io;
mod train;

pub use io::{read_mlp, read_mlp_file, read_priors_file, write_mlp, write_mlp_file, write_priors_file};
pub use train::{train, EpochStats, FrameSet, TrainConfig, TrainReport};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::hmm::Alignment;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nonlinearity {
    Sigmoid,
    Relu,
}

impl Nonlinearity {
    pub fn name(self) -> &'static str {
        match self {
            Self::Sigmoid => "sigmoid",
            Self::Relu => "relu",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "sigmoid" => Some(Self::Sigmoid),
            "relu" => Some(Self::Relu),
            _ => None,
        }
    }

    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Self::Sigmoid => z.mapv_inplace(|v| 1.0 / (1.0 + (-v).exp())),
            Self::Relu => z.mapv_inplace(|v| v.max(0.0)),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative(self, h: f64) -> f64 {
        match self {
            Self::Sigmoid => h * (1.0 - h),
            Self::Relu => {
                if h > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpArch {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub output_dim: usize,
    pub nonlinearity: Nonlinearity,
}

impl MlpArch {
    /// Two hidden layers of 128 sigmoid units.
    pub fn desk(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_layers: 2,
            hidden_units: 128,
            output_dim,
            nonlinearity: Nonlinearity::Sigmoid,
        }
    }

    /// Four hidden layers of 1200 sigmoid units.
    pub fn paper(input_dim: usize, output_dim: usize) -> Self {
        Self {
            hidden_layers: 4,
            hidden_units: 1200,
            ..Self::desk(input_dim, output_dim)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || (self.hidden_layers > 0 && self.hidden_units == 0) {
            return Err(Error::InvalidConfig(format!("network dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    /// (fan_in, fan_out) of every affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 1);
        let mut prev = self.input_dim;
        for _ in 0..self.hidden_layers {
            dims.push((prev, self.hidden_units));
            prev = self.hidden_units;
        }
        dims.push((prev, self.output_dim));
        dims
    }
}

/// An affine layer; `weights` is fan_in × fan_out.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    arch: MlpArch,
    layers: Vec<Layer>,
}

impl Mlp {
    /// Uniform initialization in ±sqrt(6 / (fan_in + fan_out)), zero biases.
    pub fn new(arch: MlpArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = arch
            .layer_dims()
            .into_iter()
            .map(|(i, o)| {
                let r = (6.0 / (i + o) as f64).sqrt();
                let dist = Uniform::new_inclusive(-r, r).expect("finite range");
                Layer {
                    weights: Array2::from_shape_simple_fn((i, o), || dist.sample(&mut rng)),
                    bias: Array1::zeros(o),
                }
            })
            .collect();
        Ok(Self { arch, layers })
    }

    pub fn zeros(arch: MlpArch) -> Result<Self> {
        arch.validate()?;
        let layers = arch.layer_dims().into_iter().map(|(i, o)| Layer::zeros(i, o)).collect();
        Ok(Self { arch, layers })
    }

    pub fn from_layers(arch: MlpArch, layers: Vec<Layer>) -> Result<Self> {
        arch.validate()?;
        let dims = arch.layer_dims();
        if layers.len() != dims.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} layers, got {}",
                dims.len(),
                layers.len()
            )));
        }
        for (l, &(i, o)) in layers.iter().zip(&dims) {
            if l.weights.dim() != (i, o) || l.bias.len() != o {
                return Err(Error::DimMismatch {
                    expected: i * o,
                    got: l.weights.len(),
                });
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::Numerical("non-finite network parameter".into()));
            }
        }
        Ok(Self { arch, layers })
    }

    pub fn arch(&self) -> &MlpArch {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    fn check_input(&self, batch: &ArrayView2<'_, f64>) -> Result<()> {
        if batch.ncols() != self.arch.input_dim {
            return Err(Error::DimMismatch {
                expected: self.arch.input_dim,
                got: batch.ncols(),
            });
        }
        Ok(())
    }

    /// Activations of every layer, the input first and the logits last.
    fn activations(&self, batch: ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(batch.to_owned());
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = acts[k].dot(&l.weights);
            z += &l.bias;
            if k + 1 < self.layers.len() {
                self.arch.nonlinearity.apply(&mut z);
            }
            acts.push(z);
        }
        acts
    }

    pub fn logits(&self, batch: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(&batch)?;
        Ok(self.activations(batch).pop().expect("output layer"))
    }

    /// Softmax posteriors, one row per input row.
    pub fn forward(&self, batch: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut z = self.logits(batch)?;
        softmax_rows(&mut z);
        Ok(z)
    }

    /// Mean cross-entropy of `labels` under the network.
    pub fn cross_entropy(&self, batch: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
        let z = self.logits(batch)?;
        check_labels(labels, z.nrows(), self.arch.output_dim)?;
        let mut total = 0.0;
        for (row, &y) in z.rows().into_iter().zip(labels) {
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        Ok(total / labels.len() as f64)
    }

    /// Mean cross-entropy and its gradient with respect to every parameter.
    pub fn gradients(&self, batch: ArrayView2<'_, f64>, labels: &[usize]) -> Result<(f64, Vec<Layer>)> {
        self.check_input(&batch)?;
        check_labels(labels, batch.nrows(), self.arch.output_dim)?;
        let n = labels.len() as f64;
        let mut acts = self.activations(batch);
        let mut delta = acts.pop().expect("output layer");
        let mut loss = 0.0;
        for (mut row, &y) in delta.rows_mut().into_iter().zip(labels) {
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let zy = row[y];
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            loss += max + sum.ln() - zy;
            row.mapv_inplace(|v| v / sum);
            row[y] -= 1.0;
        }
        delta /= n;
        let mut grads = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let input = &acts[k];
            let gw = input.t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            if k > 0 {
                let mut back = delta.dot(&self.layers[k].weights.t());
                let f = self.arch.nonlinearity;
                Zip::from(&mut back).and(input).for_each(|d, &h| *d *= f.derivative(h));
                delta = back;
            }
            grads.push(Layer { weights: gw, bias: gb });
        }
        grads.reverse();
        Ok((loss / n, grads))
    }

    /// `self -= lr * grads`.
    pub fn apply_gradients(&mut self, grads: &[Layer], lr: f64) {
        for (l, g) in self.layers.iter_mut().zip(grads) {
            l.weights.scaled_add(-lr, &g.weights);
            l.bias.scaled_add(-lr, &g.bias);
        }
    }

    fn param_mut(&mut self, layer: usize, index: usize) -> &mut f64 {
        let l = &mut self.layers[layer];
        let nw = l.weights.len();
        if index < nw {
            let cols = l.weights.ncols();
            &mut l.weights[[index / cols, index % cols]]
        } else {
            &mut l.bias[index - nw]
        }
    }
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::DimMismatch {
            expected: rows,
            got: labels.len(),
        });
    }
    if rows == 0 {
        return Err(Error::EmptyInput("empty batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::InvalidConfig(format!("label {bad} outside [0, {classes})")));
    }
    Ok(())
}

pub fn forward(m: &Mlp, batch: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    m.forward(batch)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    /// (weights, bias) maximum relative error of every layer.
    pub per_layer: Vec<(f64, f64)>,
}

/// Compares backpropagated gradients of the mean cross-entropy with central
/// differences on every parameter, using the five-point stencil
/// `(8 (f(+e) - f(-e)) - (f(+2e) - f(-2e))) / 12e`. The relative error of one
/// parameter is `|g_a - g_n| / max(|g_a| + |g_n|, 1e-8)`.
pub fn gradient_check(m: &Mlp, batch: ArrayView2<'_, f64>, labels: &[usize], epsilon: f64) -> Result<GradientCheck> {
    let (_, analytic) = m.gradients(batch, labels)?;
    let mut probe = m.clone();
    let mut per_layer = Vec::with_capacity(analytic.len());
    for (k, g) in analytic.iter().enumerate() {
        let nw = g.weights.len();
        let mut worst = (0.0f64, 0.0f64);
        for (idx, ga) in g.weights.iter().chain(&g.bias).enumerate() {
            let orig = *probe.param_mut(k, idx);
            let mut at = |offset: f64| -> Result<f64> {
                *probe.param_mut(k, idx) = orig + offset;
                probe.cross_entropy(batch, labels)
            };
            let (p1, m1, p2, m2) = (at(epsilon)?, at(-epsilon)?, at(2.0 * epsilon)?, at(-2.0 * epsilon)?);
            *probe.param_mut(k, idx) = orig;
            let gn = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * epsilon);
            let rel = (ga - gn).abs() / (ga.abs() + gn.abs()).max(1e-8);
            let slot = if idx < nw { &mut worst.0 } else { &mut worst.1 };
            *slot = slot.max(rel);
        }
        per_layer.push(worst);
    }
    let max_relative_error = per_layer.iter().fold(0.0f64, |a, &(w, b)| a.max(w).max(b));
    Ok(GradientCheck {
        max_relative_error,
        per_layer,
    })
}

/// State priors for turning posteriors into scaled likelihoods.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorVector {
    probs: Vec<f64>,
}

impl PriorVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::EmptyInput("empty prior vector"));
        }
        if let Some(&p) = probs.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
            return Err(Error::InvalidProbability(p));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidProbability(total));
        }
        Ok(Self { probs })
    }

    /// Add-one smoothed relative frequencies.
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let total: f64 = counts.iter().map(|&c| c as f64 + 1.0).sum();
        Self::new(counts.iter().map(|&c| (c as f64 + 1.0) / total).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Priors over `num_pdfs` classes from the pdf labels of `alignments`.
pub fn estimate_priors(alignments: &[Alignment], num_pdfs: usize) -> Result<PriorVector> {
    if alignments.is_empty() {
        return Err(Error::EmptyInput("no alignments for priors"));
    }
    let mut counts = vec![0u64; num_pdfs];
    for a in alignments {
        for f in &a.frames {
            *counts.get_mut(f.pdf).ok_or(Error::DimMismatch {
                expected: num_pdfs,
                got: f.pdf + 1,
            })? += 1;
        }
    }
    PriorVector::from_counts(&counts)
}

/// `scale * (log post - log prior)`; zero posteriors map to −∞.
pub fn posteriors_to_loglik(post: ArrayView2<'_, f64>, priors: &PriorVector, scale: f64) -> Result<Array2<f64>> {
    if post.ncols() != priors.len() {
        return Err(Error::DimMismatch {
            expected: priors.len(),
            got: post.ncols(),
        });
    }
    let log_prior: Array1<f64> = priors.probs.iter().map(|p| p.ln()).collect();
    let mut out = post.mapv(f64::ln);
    for mut row in out.rows_mut() {
        Zip::from(&mut row).and(&log_prior).for_each(|v, lp| {
            *v = if *v == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                scale * (*v - lp)
            };
        });
    }
    Ok(out)
}
