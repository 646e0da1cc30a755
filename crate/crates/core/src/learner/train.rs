use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::learner::loss::{softmax_backward, Loss};
use crate::learner::model::LinearSoftmaxModel;
use crate::measure::DiscreteMeasure;

/// Features with one label measure per row.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<DiscreteMeasure>,
    names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<DiscreteMeasure>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch { expected: features.nrows(), found: labels.len() });
        }
        if let Some(first) = labels.first() {
            let k = first.len();
            if let Some(bad) = labels.iter().find(|l| l.len() != k) {
                return Err(Error::DimensionMismatch { expected: k, found: bad.len() });
            }
        }
        Ok(Self { features, labels, names: None })
    }

    /// One-hot labels from class indices.
    pub fn from_classes(features: Array2<f64>, classes: &[usize], num_labels: usize) -> Result<Self> {
        let labels = classes.iter().map(|&c| DiscreteMeasure::one_hot(num_labels, c)).collect::<Result<Vec<_>>>()?;
        Self::new(features, labels)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.num_labels() {
            return Err(Error::DimensionMismatch { expected: self.num_labels(), found: names.len() });
        }
        self.names = Some(names);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_labels(&self) -> usize {
        self.labels.first().map_or(0, DiscreteMeasure::len)
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[DiscreteMeasure] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &DiscreteMeasure {
        &self.labels[i]
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let features = self.features.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i].clone()).collect();
        Self { features, labels, names: self.names.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub minibatch: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Coefficient of `Σ_k ‖θ_k‖²`.
    pub l2: f64,
    pub init_std: f64,
    /// A log entry is recorded every `log_every` iterations.
    pub log_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            minibatch: 100,
            iterations: 100_000,
            learning_rate: 0.1,
            momentum: 0.7,
            l2: 0.0005,
            init_std: 0.01,
            log_every: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.minibatch == 0 {
            return Err(Error::InvalidConfig("minibatch must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.l2 >= 0.0) || !(self.init_std >= 0.0) {
            return Err(Error::InvalidConfig("l2 and init_std must be nonnegative".into()));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidConfig("log_every must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    /// Number of completed updates.
    pub iteration: usize,
    /// Mean per-example data loss over the minibatches since the last entry.
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: LinearSoftmaxModel,
    pub log: Vec<LogEntry>,
}

/// Average loss and `∂L/∂θ` over the rows `batch`. Per-example work runs in
/// parallel; the reduction runs in index order so results do not depend on
/// scheduling.
pub fn batch_gradient(
    model: &LinearSoftmaxModel,
    data: &Dataset,
    loss: &Loss,
    batch: &[usize],
) -> Result<(f64, Array2<f64>)> {
    let per_example: Vec<Result<(f64, Array1<f64>)>> = batch
        .par_iter()
        .map(|&i| {
            let x = data.feature(i);
            let probs = model.probabilities(x)?;
            let h = DiscreteMeasure::normalized(probs.clone())?;
            let value = loss.evaluate(&h, data.label(i))?;
            Ok((value.value, softmax_backward(probs.view(), value.gradient.view())))
        })
        .collect();

    let mut grad = Array2::<f64>::zeros(model.weights().dim());
    let mut total = 0.0;
    for (&i, result) in batch.iter().zip(per_example) {
        let (value, delta) = result?;
        total += value;
        let x = data.feature(i);
        for (k, mut row) in grad.rows_mut().into_iter().enumerate() {
            row.scaled_add(delta[k], &x);
        }
    }
    let n = batch.len() as f64;
    grad /= n;
    Ok((total / n, grad))
}

/// Minibatch SGD with momentum and L2 regularization.
///
/// Weights start from `N(0, init_std²)`. Each update samples `minibatch`
/// rows uniformly with replacement, averages the per-example gradients,
/// adds `2·l2·θ`, and applies `velocity <- momentum·velocity - η·grad`,
/// `θ <- θ + velocity`. The same seed always yields the same trajectory.
pub fn train_sgd(data: &Dataset, loss: &Loss, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (k, d) = (data.num_labels(), data.num_features());
    loss.metric().check_size(k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = LinearSoftmaxModel::random(k, d, cfg.init_std, &mut rng);
    train_from(data, loss, cfg, model, &mut rng)
}

/// Continues training from `model` with an existing generator.
pub fn train_from<R: Rng>(
    data: &Dataset,
    loss: &Loss,
    cfg: &TrainConfig,
    mut model: LinearSoftmaxModel,
    rng: &mut R,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let mut velocity = Array2::<f64>::zeros(model.weights().dim());
    let mut log = Vec::new();
    let mut window_loss = 0.0;
    let mut window_len = 0usize;
    let mut batch = vec![0usize; cfg.minibatch];

    for iteration in 1..=cfg.iterations {
        for slot in batch.iter_mut() {
            *slot = rng.random_range(0..data.len());
        }
        let (value, mut grad) = batch_gradient(&model, data, loss, &batch)?;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("loss {value} at iteration {iteration}")));
        }
        grad.scaled_add(2.0 * cfg.l2, model.weights());
        velocity *= cfg.momentum;
        velocity.scaled_add(-cfg.learning_rate, &grad);
        *model.weights_mut() += &velocity;

        window_loss += value;
        window_len += 1;
        if iteration % cfg.log_every == 0 {
            log.push(LogEntry { iteration, loss: window_loss / window_len as f64 });
            window_loss = 0.0;
            window_len = 0;
        }
    }
    Ok(TrainOutput { model, log })
}
