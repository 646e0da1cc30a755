//! How the ground-metric exponent `p` shapes digit predictions.
//!
//! For each `p` a model is trained with the Sinkhorn loss under the rescaled
//! line metric `|κ − κ'|^p` on the digits. Small `p` makes every mistake cost
//! about the same, so the model commits to the true digit; large `p` makes
//! nearby digits almost free, so probability spreads to numeric neighbors.

use std::path::Path;

use ndarray::Array2;
use wloss::{Dataset, GroundMetric, LinearSoftmaxModel, Loss, LossKind};

use crate::config::MnistExperimentConfig;
use crate::idx::{load_mnist, IdxError};
use crate::manifest::Manifest;
use crate::table::{Cell, Table};
use crate::transport_loss_config;

pub const DIGITS: usize = 10;

/// `|κ − κ'|^p` on the digits, rescaled into [0, 1). `p = 0` is the 0-1 metric.
pub fn digit_metric(p: f64) -> wloss::Result<GroundMetric> {
    Ok(GroundMetric::line(DIGITS, p)?.rescaled())
}

/// Row `d` is the mean predicted distribution over test images of digit `d`.
pub fn mean_posteriors(model: &LinearSoftmaxModel, test: &Dataset) -> wloss::Result<Array2<f64>> {
    let mut sums = Array2::<f64>::zeros((DIGITS, DIGITS));
    let mut counts = [0usize; DIGITS];
    for i in 0..test.len() {
        let digit = test.label(i).support()[0];
        let probs = model.probabilities(test.feature(i))?;
        sums.row_mut(digit).scaled_add(1.0, &probs);
        counts[digit] += 1;
    }
    for (d, mut row) in sums.rows_mut().into_iter().enumerate() {
        if counts[d] > 0 {
            row /= counts[d] as f64;
        }
    }
    Ok(sums)
}

/// Summary statistics of one posterior matrix, each averaged over digits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorSummary {
    /// Mean probability of the true digit.
    pub true_digit: f64,
    /// Mean probability of a digit at numeric distance 1 from the truth.
    pub adjacent: f64,
    /// Mean of max − min over each row.
    pub spread: f64,
}

pub fn summarize(posteriors: &Array2<f64>) -> PosteriorSummary {
    let n = posteriors.nrows() as f64;
    let mut out = PosteriorSummary { true_digit: 0.0, adjacent: 0.0, spread: 0.0 };
    for (d, row) in posteriors.rows().into_iter().enumerate() {
        out.true_digit += row[d];
        let neighbors: Vec<f64> =
            [d.checked_sub(1), Some(d + 1).filter(|&e| e < row.len())].into_iter().flatten().map(|e| row[e]).collect();
        out.adjacent += neighbors.iter().sum::<f64>() / neighbors.len() as f64;
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = row.iter().copied().fold(f64::INFINITY, f64::min);
        out.spread += max - min;
    }
    out.true_digit /= n;
    out.adjacent /= n;
    out.spread /= n;
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MnistResults {
    pub p_values: Vec<f64>,
    pub posteriors: Vec<Array2<f64>>,
    pub summaries: Vec<PosteriorSummary>,
    /// Rows `(p, digit)`; columns the mean probability of each digit.
    pub posterior_table: Table,
    pub summary_table: Table,
}

impl MnistResults {
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        self.posterior_table.write(&dir.join("posteriors.csv"))?;
        self.summary_table.write(&dir.join("summary.csv"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MnistError {
    #[error(transparent)]
    Data(#[from] IdxError),
    #[error(transparent)]
    Learn(#[from] wloss::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Trains one model per `p` on the same training subset, with the same seed.
pub fn run_mnist_experiment(
    cfg: &MnistExperimentConfig,
    train: &Dataset,
    test: &Dataset,
) -> wloss::Result<MnistResults> {
    let mut posteriors = Vec::new();
    for &p in &cfg.p_values {
        let metric = digit_metric(p)?;
        let loss = Loss::new(metric, transport_loss_config(LossKind::SinkhornW, cfg.lambda, cfg.iters))?;
        let out = wloss::learner::train_sgd(train, &loss, &cfg.sgd.train_config(cfg.seed))?;
        posteriors.push(mean_posteriors(&out.model, test)?);
    }
    let summaries: Vec<PosteriorSummary> = posteriors.iter().map(summarize).collect();

    let mut header = vec!["p".to_string(), "digit".to_string()];
    header.extend((0..DIGITS).map(|k| format!("prob_{k}")));
    let mut posterior_table = Table { header, rows: Vec::new() };
    for (&p, post) in cfg.p_values.iter().zip(&posteriors) {
        for (d, row) in post.rows().into_iter().enumerate() {
            let mut cells = vec![Cell::from(p), Cell::from(d)];
            cells.extend(row.iter().map(|&v| Cell::from(v)));
            posterior_table.push(cells);
        }
    }
    let mut summary_table = Table::new(&["p", "true_digit", "adjacent", "spread"]);
    for (&p, s) in cfg.p_values.iter().zip(&summaries) {
        summary_table.push(vec![p.into(), s.true_digit.into(), s.adjacent.into(), s.spread.into()]);
    }
    Ok(MnistResults { p_values: cfg.p_values.clone(), posteriors, summaries, posterior_table, summary_table })
}

/// Loads the seeded train and test subsets from the IDX files in `data`.
pub fn load_subsets(cfg: &MnistExperimentConfig, data: &Path) -> Result<(Dataset, Dataset), IdxError> {
    let train = load_mnist(data, "train", Some(cfg.subset_size), cfg.seed)?;
    let test = load_mnist(data, "t10k", Some(cfg.test_size), cfg.seed)?;
    Ok((train, test))
}

/// Runs the study and writes its tables and manifest to `out`.
pub fn run_and_write(
    cfg: &MnistExperimentConfig,
    config_text: &str,
    data: &Path,
    out: &Path,
) -> Result<MnistResults, MnistError> {
    let (train, test) = load_subsets(cfg, data)?;
    let results = run_mnist_experiment(cfg, &train, &test)?;
    results.write(out)?;
    let notes = vec![
        format!("{} training and {} test images", train.len(), test.len()),
        "adjacent = mean probability of a digit at distance 1 from the truth, averaged over digits".to_string(),
    ];
    Manifest::new("mnist", config_text, cfg.seed, notes).write(out)?;
    Ok(results)
}
