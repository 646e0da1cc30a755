//! Wasserstein losses for learning with a ground metric on the label space.
//!
//! A prediction `h` and a target `y` are discrete measures over `K` labels.
//! The loss is the optimal transport cost between them under a
//! [`GroundMetric`], computed one of three ways:
//!
//! * [`exact_transport`]: the transportation simplex, with dual potentials
//!   that serve as a subgradient.
//! * [`SinkhornSolver`]: entropic smoothing, solved by matrix scaling.
//! * [`RelaxedSolver`]: entropic smoothing with soft marginal constraints,
//!   for unnormalized measures.
//!
//! The [`learner`] module plugs any of these into a linear softmax model
//! trained by minibatch SGD.
//!
//! ```
//! use wloss::{exact_transport, DiscreteMeasure, GroundMetric, SinkhornConfig, SinkhornSolver};
//!
//! let metric = GroundMetric::line(3, 1.0)?;
//! let h = DiscreteMeasure::normalized(vec![0.5, 0.5, 0.0])?;
//! let y = DiscreteMeasure::one_hot(3, 2)?;
//!
//! let exact = exact_transport(&h, &y, &metric)?;
//! assert!((exact.cost - 1.5).abs() < 1e-12);
//!
//! let smooth = SinkhornSolver::new(metric, SinkhornConfig::new(50.0))?.solve(&h, &y)?;
//! assert!(smooth.transport_cost >= exact.cost - 1e-9);
//! # Ok::<(), wloss::Error>(())
//! ```

// `!(x > 0.0)` also rejects NaN, which is the point.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exact;
pub mod io;
pub mod learner;
pub mod measure;
pub mod relaxed;
pub mod sinkhorn;

/// Version of this crate, as recorded in experiment manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{Error, Result};
pub use exact::{cdf_wasserstein_1d, dual_subgradient, exact_transport, one_hot_loss, ExactSolution};
pub use learner::{Dataset, LinearSoftmaxModel, Loss, LossConfig, LossKind, TrainConfig};
pub use measure::{DiscreteMeasure, GroundMetric, MeasureKind, TransportPlan};
pub use relaxed::{generalized_kl, relaxed_gradient, relaxed_transport, RelaxedConfig, RelaxedSolution, RelaxedSolver};
pub use sinkhorn::{
    build_kernel, log_domain_sinkhorn, sinkhorn_gradient, sinkhorn_normalized, IterationMode, SinkhornConfig,
    SinkhornOutput, SinkhornSolver, SinkhornState,
};

// Runs the code blocks of the guide as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/measures.md")]
    mod measures {}
    #[doc = include_str!("../../../book/src/exact.md")]
    mod exact {}
    #[doc = include_str!("../../../book/src/sinkhorn.md")]
    mod sinkhorn {}
    #[doc = include_str!("../../../book/src/relaxed.md")]
    mod relaxed {}
    #[doc = include_str!("../../../book/src/learning.md")]
    mod learning {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
