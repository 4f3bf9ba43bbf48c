use std::fmt::Write as _;

use log::info;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Mlp;
use crate::error::{Error, Result};

/// Input frames with their target pdf ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
}

impl FrameSet {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::DimMismatch {
                expected: inputs.nrows(),
                got: labels.len(),
            });
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Mean cross-entropy, evaluated in chunks to bound memory.
    pub fn cross_entropy(&self, m: &Mlp) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::EmptyInput("empty frame set"));
        }
        let chunk = 4096;
        let mut total = 0.0;
        for start in (0..self.len()).step_by(chunk) {
            let end = (start + chunk).min(self.len());
            let x = self.inputs.slice(ndarray::s![start..end, ..]);
            total += m.cross_entropy(x, &self.labels[start..end])? * (end - start) as f64;
        }
        Ok(total / self.len() as f64)
    }

    /// Fraction of frames whose most probable class is the label.
    pub fn accuracy(&self, m: &Mlp) -> Result<f64> {
        let z = m.logits(self.inputs.view())?;
        let correct = z
            .rows()
            .into_iter()
            .zip(&self.labels)
            .filter(|(row, &y)| {
                let best = row
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
                best.0 == y
            })
            .count();
        Ok(correct as f64 / self.len().max(1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub minibatch: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// The learning rate halves once the relative cv improvement of an epoch
    /// falls below this fraction.
    pub halving_threshold: f64,
    /// Training stops after this many consecutive halvings without
    /// sufficient improvement.
    pub max_stalled_halvings: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            minibatch: 256,
            learning_rate: 0.5,
            max_epochs: 20,
            seed: 0,
            halving_threshold: 0.001,
            max_stalled_halvings: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.minibatch == 0 {
            return Err(Error::InvalidConfig("minibatch must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("bad learning rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_xent: f64,
    pub cv_xent: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub initial_cv_xent: f64,
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters were kept; zero means the initial network.
    pub best_epoch: usize,
    pub best_cv_xent: f64,
}

impl TrainReport {
    /// `epoch,train_xent,cv_xent,lr` with the initial network as epoch 0.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_xent,cv_xent,lr\n");
        let _ = writeln!(out, "0,,{:.6},", self.initial_cv_xent);
        for e in &self.epochs {
            let _ = writeln!(out, "{},{:.6},{:.6},{}", e.epoch, e.train_xent, e.cv_xent, e.lr);
        }
        out
    }
}

/// Minibatch SGD on cross-entropy with a cv-driven halving schedule. An epoch
/// that does not lower the cv loss is rolled back, so the returned network is
/// the best seen on `cv`.
pub fn train(init: &Mlp, train_set: &FrameSet, cv: &FrameSet, cfg: &TrainConfig) -> Result<(Mlp, TrainReport)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyInput("empty training set"));
    }
    if cv.is_empty() {
        return Err(Error::EmptyInput("empty cv set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best = init.clone();
    let initial_cv_xent = cv.cross_entropy(&best)?;
    let mut best_cv = initial_cv_xent;
    let mut best_epoch = 0;
    let mut lr = cfg.learning_rate;
    let mut stalled = 0;
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut m = best.clone();
        let mut loss_sum = 0.0;
        for idx in order.chunks(cfg.minibatch) {
            let x = train_set.inputs.select(Axis(0), idx);
            let y: Vec<usize> = idx.iter().map(|&i| train_set.labels[i]).collect();
            let (loss, grads) = m.gradients(x.view(), &y)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("training loss became {loss} in epoch {epoch}")));
            }
            loss_sum += loss * idx.len() as f64;
            m.apply_gradients(&grads, lr);
        }
        let train_xent = loss_sum / train_set.len() as f64;
        let cv_xent = cv.cross_entropy(&m)?;
        if !cv_xent.is_finite() {
            return Err(Error::Numerical(format!("cv loss became {cv_xent} in epoch {epoch}")));
        }
        info!("epoch {epoch}: train {train_xent:.4} cv {cv_xent:.4} lr {lr}");
        epochs.push(EpochStats {
            epoch,
            train_xent,
            cv_xent,
            lr,
        });
        let improvement = (best_cv - cv_xent) / best_cv.abs().max(f64::MIN_POSITIVE);
        if cv_xent < best_cv {
            best = m;
            best_cv = cv_xent;
            best_epoch = epoch;
        }
        if improvement < cfg.halving_threshold {
            lr /= 2.0;
            stalled += 1;
            if stalled >= cfg.max_stalled_halvings {
                break;
            }
        } else {
            stalled = 0;
        }
    }
    Ok((
        best,
        TrainReport {
            initial_cv_xent,
            epochs,
            best_epoch,
            best_cv_xent: best_cv,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{MlpArch, Nonlinearity};
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, seed: u64) -> FrameSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.5).unwrap();
        let mut x = Array2::zeros((n, 2));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % 2;
            let centre = if c == 0 { -2.0 } else { 2.0 };
            x[[i, 0]] = centre + normal.sample(&mut rng);
            x[[i, 1]] = normal.sample(&mut rng);
            y.push(c);
        }
        FrameSet::new(x, y).unwrap()
    }

    fn arch() -> MlpArch {
        MlpArch {
            input_dim: 2,
            hidden_layers: 1,
            hidden_units: 8,
            output_dim: 2,
            nonlinearity: Nonlinearity::Sigmoid,
        }
    }

    #[test]
    fn separable_blobs_are_learned() {
        let tr = blobs(400, 1);
        let cv = blobs(100, 2);
        // a linear oracle separates the classes with the vertical line x = 0
        let linear_ok = cv
            .labels
            .iter()
            .zip(cv.inputs.column(0))
            .filter(|(y, x)| (**x > 0.0) == (**y == 1))
            .count();
        assert!(linear_ok as f64 / 100.0 >= 0.99);

        let m = Mlp::new(arch(), 3).unwrap();
        let cfg = TrainConfig {
            minibatch: 16,
            max_epochs: 20,
            ..Default::default()
        };
        let (trained, report) = train(&m, &tr, &cv, &cfg).unwrap();
        assert!(cv.accuracy(&trained).unwrap() >= 0.95);
        assert!(report.best_cv_xent <= report.initial_cv_xent);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let tr = blobs(50, 1);
        let m = Mlp::new(arch(), 3).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        let (trained, report) = train(&m, &tr, &tr, &cfg).unwrap();
        assert_eq!(trained, m);
        assert!(report.epochs.iter().all(|e| e.cv_xent == report.initial_cv_xent));
        assert_eq!(report.epochs.len(), 2);
    }

    #[test]
    fn full_batch_epoch_is_one_gradient_step() {
        let tr = blobs(40, 4);
        let m = Mlp::new(arch(), 5).unwrap();
        let cfg = TrainConfig {
            minibatch: 40,
            max_epochs: 1,
            learning_rate: 0.3,
            ..Default::default()
        };
        let (trained, _) = train(&m, &tr, &tr, &cfg).unwrap();

        // the full-batch gradient is order independent, so compare against a
        // step built from central differences on the untouched network
        let eps = 1e-6;
        let mut expected = m.clone();
        for k in 0..m.layers().len() {
            let n = m.layers()[k].weights.len() + m.layers()[k].bias.len();
            for idx in 0..n {
                let mut probe = m.clone();
                let orig = *probe.param_mut(k, idx);
                *probe.param_mut(k, idx) = orig + eps;
                let plus = tr.cross_entropy(&probe).unwrap();
                *probe.param_mut(k, idx) = orig - eps;
                let minus = tr.cross_entropy(&probe).unwrap();
                *expected.param_mut(k, idx) = orig - 0.3 * (plus - minus) / (2.0 * eps);
            }
        }
        for (a, b) in trained.layers().iter().zip(expected.layers()) {
            for (x, y) in a.weights.iter().chain(&a.bias).zip(b.weights.iter().chain(&b.bias)) {
                assert!((x - y).abs() < 1e-8, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn constant_extra_column_is_inert() {
        let tr = blobs(120, 7);
        let cv = blobs(40, 8);
        let with_zero = |set: &FrameSet| {
            let mut x = Array2::zeros((set.len(), 3));
            x.slice_mut(ndarray::s![.., ..2]).assign(&set.inputs);
            FrameSet::new(x, set.labels.clone()).unwrap()
        };
        let wide_arch = MlpArch { input_dim: 3, ..arch() };
        let wide = Mlp::new(wide_arch, 11).unwrap();
        let mut layers = wide.layers().to_vec();
        layers[0].weights = layers[0].weights.slice(ndarray::s![..2, ..]).to_owned();
        let narrow = Mlp::from_layers(arch(), layers).unwrap();

        let cfg = TrainConfig {
            minibatch: 32,
            max_epochs: 5,
            ..Default::default()
        };
        let (a, ra) = train(&wide, &with_zero(&tr), &with_zero(&cv), &cfg).unwrap();
        let (b, rb) = train(&narrow, &tr, &cv, &cfg).unwrap();
        // the weights reading the constant column never receive gradient
        assert_eq!(a.layers()[0].weights.row(2), wide.layers()[0].weights.row(2));
        for (x, y) in a.layers()[0]
            .weights
            .slice(ndarray::s![..2, ..])
            .iter()
            .zip(b.layers()[0].weights.iter())
        {
            assert!((x - y).abs() < 1e-10);
        }
        assert_eq!(ra.best_epoch, rb.best_epoch);
    }

    #[test]
    fn empty_training_set() {
        let m = Mlp::new(arch(), 1).unwrap();
        let empty = FrameSet::new(Array2::zeros((0, 2)), vec![]).unwrap();
        assert!(matches!(
            train(&m, &empty, &blobs(4, 1), &TrainConfig::default()),
            Err(Error::EmptyInput(_))
        ));
    }
}
