use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;

/// `x ↦ softmax(θx)` with `θ` of shape `K × D`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSoftmaxModel {
    weights: Array2<f64>,
}

/// Serialized form: `{"K": .., "D": .., "weights": [row-major]}`.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "D")]
    d: usize,
    weights: Vec<f64>,
}

impl LinearSoftmaxModel {
    pub fn new(weights: Array2<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyInput);
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("model weights".into()));
        }
        Ok(Self { weights })
    }

    pub fn zeros(k: usize, d: usize) -> Self {
        Self { weights: Array2::zeros((k, d)) }
    }

    /// Independent `N(0, std²)` weights.
    pub fn random<R: Rng + ?Sized>(k: usize, d: usize, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("std is finite and nonnegative");
        Self { weights: Array2::from_shape_simple_fn((k, d), || normal.sample(rng)) }
    }

    pub fn num_labels(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_features(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.weights
    }

    /// Raw scores `θx`.
    pub fn scores(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        if x.len() != self.num_features() {
            return Err(Error::DimensionMismatch { expected: self.num_features(), found: x.len() });
        }
        Ok(self.weights.dot(&x))
    }

    /// Softmax probabilities as a raw vector.
    pub fn probabilities(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        Ok(softmax(self.scores(x)?.view()))
    }

    pub fn predict(&self, x: ArrayView1<'_, f64>) -> Result<DiscreteMeasure> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input features".into()));
        }
        DiscreteMeasure::normalized(self.probabilities(x)?)
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax_predict(&self, x: ArrayView1<'_, f64>) -> Result<usize> {
        Ok(argmax(self.scores(x)?.view()))
    }

    pub fn to_json(&self) -> serde_json::Value {
        let file =
            ModelFile { k: self.num_labels(), d: self.num_features(), weights: self.weights.iter().copied().collect() };
        serde_json::to_value(file).expect("model serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let file: ModelFile = serde_json::from_value(value.clone())?;
        let weights = Array2::from_shape_vec((file.k, file.d), file.weights)
            .map_err(|e| Error::Parse(format!("model weights: {e}")))?;
        Self::new(weights)
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(scores: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp = scores.mapv(|s| (s - max).exp());
    let total = exp.sum();
    exp / total
}

/// First index of the maximum.
pub fn argmax(values: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
