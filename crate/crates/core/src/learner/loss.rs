use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{dual_subgradient, exact_transport};
use crate::learner::model::LinearSoftmaxModel;
use crate::measure::{clamp_floor, DiscreteMeasure, GroundMetric};
use crate::relaxed::{relaxed_gradient, RelaxedConfig, RelaxedSolver};
use crate::sinkhorn::{SinkhornConfig, SinkhornSolver};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    /// Exact transport cost with the dual subgradient.
    #[serde(rename = "exact")]
    ExactW,
    /// Entropic transport via Sinkhorn.
    #[serde(rename = "sinkhorn")]
    SinkhornW,
    /// KL-relaxed transport; labels need not be normalized.
    #[serde(rename = "relaxed")]
    RelaxedW,
    /// Multiclass logistic loss only (the baseline).
    #[serde(rename = "kl")]
    KlOnly,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::ExactW),
            "sinkhorn" => Ok(Self::SinkhornW),
            "relaxed" => Ok(Self::RelaxedW),
            "kl" => Ok(Self::KlOnly),
            other => Err(Error::InvalidConfig(format!("unknown loss kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Weight `α` of the KL term added to a Wasserstein loss.
    pub alpha_kl: f64,
    pub sinkhorn: SinkhornConfig,
    pub relaxed: RelaxedConfig,
    /// Prediction entries are floored here before the KL term.
    pub kl_min_mass: f64,
}

impl LossConfig {
    /// Sinkhorn loss with 10 fixed iterations at the given `λ`.
    pub fn sinkhorn(lambda: f64) -> Self {
        Self {
            kind: LossKind::SinkhornW,
            alpha_kl: 0.0,
            sinkhorn: SinkhornConfig::fixed_iterations(lambda, 10),
            relaxed: RelaxedConfig::fixed_iterations(lambda, 1.0, 1.0, 10),
            kl_min_mass: 1e-16,
        }
    }

    pub fn kl() -> Self {
        Self { kind: LossKind::KlOnly, ..Self::sinkhorn(1.0) }
    }

    pub fn exact() -> Self {
        Self { kind: LossKind::ExactW, ..Self::sinkhorn(1.0) }
    }

    pub fn relaxed(cfg: RelaxedConfig) -> Self {
        Self { kind: LossKind::RelaxedW, relaxed: cfg, ..Self::sinkhorn(cfg.lambda) }
    }

    pub fn with_alpha_kl(self, alpha_kl: f64) -> Self {
        Self { alpha_kl, ..self }
    }
}

/// Loss value and gradient with respect to the prediction `h`.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub gradient: Array1<f64>,
    /// The transport term alone (zero for the KL baseline).
    pub wasserstein: f64,
    /// The unweighted KL term (zero when `α = 0` for transport losses).
    pub kl: f64,
}

/// `KL(y ‖ h) = Σ y log(y / h)` with `0 log 0 = 0`, and its gradient `-y ⊘ h`.
///
/// `h` is floored at `min_mass` first.
pub fn kl_loss(h: &DiscreteMeasure, y: &DiscreteMeasure, min_mass: f64) -> Result<(f64, Array1<f64>)> {
    if h.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: h.len(), found: y.len() });
    }
    let h = clamp_floor(h.values(), min_mass, false);
    let mut value = 0.0;
    for (&yi, &hi) in y.values().iter().zip(h.iter()) {
        if yi > 0.0 {
            value += yi * (yi / hi).ln();
        }
    }
    let gradient = Array1::from_shape_fn(h.len(), |i| -y.get(i) / h[i]);
    Ok((value, gradient))
}

/// A configured loss bound to a ground metric.
#[derive(Debug, Clone)]
pub struct Loss {
    config: LossConfig,
    metric: GroundMetric,
    sinkhorn: Option<SinkhornSolver>,
    relaxed: Option<RelaxedSolver>,
}

impl Loss {
    pub fn new(metric: GroundMetric, config: LossConfig) -> Result<Self> {
        if !(config.alpha_kl >= 0.0 && config.alpha_kl.is_finite()) {
            return Err(Error::InvalidConfig(format!("alpha_kl must be >= 0, got {}", config.alpha_kl)));
        }
        let sinkhorn = match config.kind {
            LossKind::SinkhornW => Some(SinkhornSolver::new(metric.clone(), config.sinkhorn)?),
            _ => None,
        };
        let relaxed = match config.kind {
            LossKind::RelaxedW => Some(RelaxedSolver::new(metric.clone(), config.relaxed)?),
            _ => None,
        };
        Ok(Self { config, metric, sinkhorn, relaxed })
    }

    pub fn config(&self) -> &LossConfig {
        &self.config
    }

    pub fn metric(&self) -> &GroundMetric {
        &self.metric
    }

    pub fn evaluate(&self, h: &DiscreteMeasure, y: &DiscreteMeasure) -> Result<LossValue> {
        self.metric.check_size(h.len())?;
        self.metric.check_size(y.len())?;
        let simplex_y = || if y.is_normalized() { Ok(y.clone()) } else { y.normalize() };

        let (wasserstein, w_grad) = match self.config.kind {
            LossKind::KlOnly => {
                let (kl, gradient) = kl_loss(h, &simplex_y()?, self.config.kl_min_mass)?;
                return Ok(LossValue { value: kl, gradient, wasserstein: 0.0, kl });
            }
            LossKind::ExactW => {
                let y = simplex_y()?;
                if let [target] = y.support()[..] {
                    // Against a one-hot target the loss is linear in h on the
                    // simplex, and the centered cost column is its gradient.
                    let column = self.metric.costs().column(target).to_owned();
                    let mean = column.mean().unwrap_or(0.0);
                    (column.dot(&h.values()), column - mean)
                } else {
                    let sol = exact_transport(h, &y, &self.metric)?;
                    let grad = dual_subgradient(&sol);
                    (sol.cost, grad)
                }
            }
            LossKind::SinkhornW => {
                let solver = self.sinkhorn.as_ref().expect("built for this kind");
                solver.loss_and_gradient(h, &simplex_y()?)?
            }
            LossKind::RelaxedW => {
                let solver = self.relaxed.as_ref().expect("built for this kind");
                let sol = solver.solve(h, y)?;
                let grad = relaxed_gradient(&sol, h, solver.config().gamma_a)?;
                (sol.objective, grad)
            }
        };

        if self.config.alpha_kl == 0.0 {
            return Ok(LossValue { value: wasserstein, gradient: w_grad, wasserstein, kl: 0.0 });
        }
        let (kl, kl_grad) = kl_loss(h, &simplex_y()?, self.config.kl_min_mass)?;
        let alpha = self.config.alpha_kl;
        Ok(LossValue { value: wasserstein + alpha * kl, gradient: w_grad + alpha * kl_grad, wasserstein, kl })
    }
}

/// One-shot `W + α KL` with its gradient in `h`.
pub fn combined_loss(
    h: &DiscreteMeasure,
    y: &DiscreteMeasure,
    metric: &GroundMetric,
    config: LossConfig,
) -> Result<(f64, Array1<f64>)> {
    let v = Loss::new(metric.clone(), config)?.evaluate(h, y)?;
    Ok((v.value, v.gradient))
}

/// Pulls `∂L/∂h` back through the softmax: `s ⊙ (g - (s·g) 1)`.
pub fn softmax_backward(probs: ArrayView1<'_, f64>, grad_h: ArrayView1<'_, f64>) -> Array1<f64> {
    let sg = probs.dot(&grad_h);
    Array1::from_shape_fn(probs.len(), |k| probs[k] * (grad_h[k] - sg))
}

/// `∂L/∂θ` for `h = softmax(θx)`, given `∂L/∂h`. Row `k` is
/// `s_k (g_k - s·g) xᵀ`.
pub fn chain_gradient(
    model: &LinearSoftmaxModel,
    x: ArrayView1<'_, f64>,
    grad_h: ArrayView1<'_, f64>,
) -> Result<Array2<f64>> {
    if grad_h.len() != model.num_labels() {
        return Err(Error::DimensionMismatch { expected: model.num_labels(), found: grad_h.len() });
    }
    let probs = model.probabilities(x)?;
    let delta = softmax_backward(probs.view(), grad_h);
    Ok(Array2::from_shape_fn((delta.len(), x.len()), |(k, d)| delta[k] * x[d]))
}
