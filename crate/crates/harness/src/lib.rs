//! Experiments and data plumbing around the `wloss` crate: the lattice
//! label-noise study, the MNIST ground-metric study, a synthetic tagging
//! task, IDX ingestion, and the command-line front end.

// `!(x > 0.0)` also rejects NaN, which is the point.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod idx;
pub mod lattice;
pub mod manifest;
pub mod mnist;
pub mod rng;
pub mod table;
pub mod tags;

use wloss::{LossConfig, LossKind, RelaxedConfig, SinkhornConfig};

/// A transport loss with `iters` fixed solver iterations at strength `lambda`.
pub fn transport_loss_config(kind: LossKind, lambda: f64, iters: usize) -> LossConfig {
    match kind {
        LossKind::ExactW => LossConfig::exact(),
        LossKind::KlOnly => LossConfig::kl(),
        LossKind::SinkhornW => {
            LossConfig { sinkhorn: SinkhornConfig::fixed_iterations(lambda, iters), ..LossConfig::sinkhorn(lambda) }
        }
        LossKind::RelaxedW => LossConfig::relaxed(RelaxedConfig::fixed_iterations(lambda, 1.0, 1.0, iters)),
    }
}
