//! Classes on a D×D lattice with labels flipped to neighboring classes.
//!
//! Class `c` sits at the lattice point `(c % D, c / D)`, so neighbors are
//! one unit apart and the ground metric is the Euclidean distance between
//! points. Samples are drawn from an isotropic Gaussian around their class
//! point; with probability `noise` a training label is replaced by a
//! uniformly chosen 4-neighbor of the true class. Test labels are clean.
//!
//! The features are the sample's two coordinates and nothing else, so the
//! linear softmax model has no intercept and its decision regions are cones
//! from the origin. Larger lattices are harder to fit, which is where a loss
//! that prefers nearby mistakes pays off.

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use wloss::{Dataset, GroundMetric, LinearSoftmaxModel, Loss, LossConfig};

use crate::config::LatticeExperimentConfig;
use crate::manifest::Manifest;
use crate::rng::cell_rng;
use crate::table::{Cell, Table};
use crate::transport_loss_config;

pub fn lattice_point(grid: usize, class: usize) -> [f64; 2] {
    [(class % grid) as f64, (class / grid) as f64]
}

pub fn lattice_metric(grid: usize) -> GroundMetric {
    let points: Vec<[f64; 2]> = (0..grid * grid).map(|c| lattice_point(grid, c)).collect();
    GroundMetric::euclidean(&points, 1.0).expect("lattice has at least one point")
}

/// The 4-connected neighbors of `class`, in increasing order.
pub fn lattice_neighbors(grid: usize, class: usize) -> Vec<usize> {
    let (col, row) = (class % grid, class / grid);
    let mut out = Vec::with_capacity(4);
    if row > 0 {
        out.push(class - grid);
    }
    if col > 0 {
        out.push(class - 1);
    }
    if col + 1 < grid {
        out.push(class + 1);
    }
    if row + 1 < grid {
        out.push(class + grid);
    }
    out
}

#[derive(Debug, Clone)]
pub struct LatticeData {
    pub grid: usize,
    pub train: Dataset,
    /// The class each training sample was drawn around, before any flip.
    pub train_true_classes: Vec<usize>,
    pub train_labels: Vec<usize>,
    pub test: Dataset,
    pub test_classes: Vec<usize>,
}

/// `samples` training and `test_samples` test points per class.
pub fn generate_lattice_dataset<R: Rng + ?Sized>(
    grid: usize,
    noise: f64,
    samples: usize,
    test_samples: usize,
    stdev: f64,
    rng: &mut R,
) -> LatticeData {
    assert!(grid >= 2, "lattice needs D >= 2");
    assert!((0.0..=1.0).contains(&noise), "noise must lie in [0, 1]");
    let k = grid * grid;
    let (train_features, train_true_classes) = draw(grid, samples, stdev, rng);
    let train_labels: Vec<usize> = train_true_classes
        .iter()
        .map(|&c| {
            if rng.random::<f64>() < noise {
                let nb = lattice_neighbors(grid, c);
                nb[rng.random_range(0..nb.len())]
            } else {
                c
            }
        })
        .collect();
    let (test_features, test_classes) = draw(grid, test_samples, stdev, rng);
    let train = Dataset::from_classes(train_features, &train_labels, k).expect("labels index the lattice");
    let test = Dataset::from_classes(test_features, &test_classes, k).expect("labels index the lattice");
    LatticeData { grid, train, train_true_classes, train_labels, test, test_classes }
}

fn draw<R: Rng + ?Sized>(grid: usize, per_class: usize, stdev: f64, rng: &mut R) -> (Array2<f64>, Vec<usize>) {
    let k = grid * grid;
    let mut features = Array2::zeros((k * per_class, 2));
    let mut classes = Vec::with_capacity(k * per_class);
    for class in 0..k {
        let [px, py] = lattice_point(grid, class);
        for _ in 0..per_class {
            let (zx, zy): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            let mut row = features.row_mut(classes.len());
            row[0] = px + stdev * zx;
            row[1] = py + stdev * zy;
            classes.push(class);
        }
    }
    (features, classes)
}

/// Mean distance between the argmax class and the true class over `data`.
pub fn mean_distance(model: &LinearSoftmaxModel, data: &Dataset, classes: &[usize], metric: &GroundMetric) -> f64 {
    let total: f64 = classes
        .iter()
        .enumerate()
        .map(|(i, &c)| metric.get(model.argmax_predict(data.feature(i)).expect("model fits the data"), c))
        .sum();
    total / classes.len() as f64
}

/// One (D, noise, repeat) cell. Errors are kept as messages so one
/// diverging run does not abort the study.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub grid: usize,
    pub noise: f64,
    pub repeat: usize,
    pub wasserstein: Result<f64, String>,
    pub kl: Result<f64, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeResults {
    pub cells: Vec<CellResult>,
    /// One row per (D, noise): means over repeats.
    pub aggregate: Table,
    /// Means over D and repeats, per noise level.
    pub by_noise: Table,
    /// Means over noise levels and repeats, per D.
    pub by_grid: Table,
    pub cells_table: Table,
}

impl LatticeResults {
    /// Per-noise means `(noise, wasserstein, kl)`.
    pub fn noise_curve(&self) -> Vec<(f64, f64, f64)> {
        (0..self.by_noise.rows.len())
            .map(|r| {
                let get = |c| self.by_noise.float(r, c).expect("numeric column");
                (get("noise"), get("wasserstein"), get("kl"))
            })
            .collect()
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        self.cells_table.write(&dir.join("cells.csv"))?;
        self.aggregate.write(&dir.join("aggregate.csv"))?;
        self.by_noise.write(&dir.join("by_noise.csv"))?;
        self.by_grid.write(&dir.join("by_grid.csv"))
    }
}

fn train_pair(
    cfg: &LatticeExperimentConfig,
    grid: usize,
    noise: f64,
    stream: u64,
) -> (Result<f64, String>, Result<f64, String>) {
    let mut rng = cell_rng(cfg.seed, stream);
    let data = generate_lattice_dataset(
        grid,
        noise,
        cfg.samples_per_class,
        cfg.test_samples_per_class,
        cfg.gaussian_stdev,
        &mut rng,
    );
    let train_seed: u64 = rng.random();
    let metric = lattice_metric(grid);
    let sgd = cfg.sgd.train_config(train_seed);
    let run = |loss_cfg: LossConfig| -> Result<f64, String> {
        let loss = Loss::new(metric.clone(), loss_cfg).map_err(|e| e.to_string())?;
        let out = wloss::learner::train_sgd(&data.train, &loss, &sgd).map_err(|e| e.to_string())?;
        Ok(mean_distance(&out.model, &data.test, &data.test_classes, &metric))
    };
    let w = run(transport_loss_config(cfg.loss, cfg.lambda, cfg.sinkhorn_iters));
    let kl = run(LossConfig::kl());
    (w, kl)
}

/// Trains the transport-loss model and the KL baseline on every cell.
///
/// Cell `i` in (D, noise, repeat) order draws its data and its training
/// seed from stream `i` of the experiment seed. Cells run on the rayon pool
/// and are collected in order, so the output does not depend on the number
/// of threads.
pub fn run_lattice_experiment(cfg: &LatticeExperimentConfig) -> LatticeResults {
    let mut specs = Vec::new();
    for &grid in &cfg.grid_sizes {
        for &noise in &cfg.noise_levels {
            for repeat in 0..cfg.repeats {
                specs.push((grid, noise, repeat));
            }
        }
    }
    let cells: Vec<CellResult> = specs
        .par_iter()
        .enumerate()
        .map(|(i, &(grid, noise, repeat))| {
            let (wasserstein, kl) = train_pair(cfg, grid, noise, i as u64);
            CellResult { grid, noise, repeat, wasserstein, kl }
        })
        .collect();
    summarize(cfg, cells)
}

/// Mean of the successful runs (NaN if none) and the number of failures.
fn mean_ok<'a>(values: impl Iterator<Item = &'a Result<f64, String>>) -> (f64, usize) {
    let (mut sum, mut n, mut failed) = (0.0, 0usize, 0usize);
    for v in values {
        match v {
            Ok(x) => {
                sum += x;
                n += 1;
            }
            Err(_) => failed += 1,
        }
    }
    (if n == 0 { f64::NAN } else { sum / n as f64 }, failed)
}

/// `[wasserstein, kl, runs, failed]` over `members`.
fn group_row(members: &[&CellResult]) -> [Cell; 4] {
    let (w, wf) = mean_ok(members.iter().map(|c| &c.wasserstein));
    let (k, kf) = mean_ok(members.iter().map(|c| &c.kl));
    [w.into(), k.into(), members.len().into(), (wf + kf).into()]
}

fn summarize(cfg: &LatticeExperimentConfig, cells: Vec<CellResult>) -> LatticeResults {
    let mut cells_table = Table::new(&["grid", "noise", "repeat", "wasserstein", "kl", "error"]);
    for c in &cells {
        let value = |r: &Result<f64, String>| Cell::Float(*r.as_ref().unwrap_or(&f64::NAN));
        let error: Vec<String> = [&c.wasserstein, &c.kl].iter().filter_map(|r| r.as_ref().err().cloned()).collect();
        cells_table.push(vec![
            c.grid.into(),
            c.noise.into(),
            c.repeat.into(),
            value(&c.wasserstein),
            value(&c.kl),
            error.join("; ").into(),
        ]);
    }

    let select = |keep: &dyn Fn(&CellResult) -> bool| cells.iter().filter(|c| keep(c)).collect::<Vec<_>>();
    let mut aggregate = Table::new(&["grid", "noise", "wasserstein", "kl", "runs", "failed"]);
    for &grid in &cfg.grid_sizes {
        for &noise in &cfg.noise_levels {
            let mut row = vec![grid.into(), noise.into()];
            row.extend(group_row(&select(&|c| c.grid == grid && c.noise == noise)));
            aggregate.push(row);
        }
    }
    let mut by_noise = Table::new(&["noise", "wasserstein", "kl", "runs", "failed"]);
    for &noise in &cfg.noise_levels {
        let mut row = vec![noise.into()];
        row.extend(group_row(&select(&|c| c.noise == noise)));
        by_noise.push(row);
    }
    let mut by_grid = Table::new(&["grid", "wasserstein", "kl", "runs", "failed"]);
    for &grid in &cfg.grid_sizes {
        let mut row = vec![grid.into()];
        row.extend(group_row(&select(&|c| c.grid == grid)));
        by_grid.push(row);
    }
    LatticeResults { cells, aggregate, by_noise, by_grid, cells_table }
}

/// Runs the study and writes its tables and manifest to `out`.
pub fn run_and_write(cfg: &LatticeExperimentConfig, config_text: &str, out: &Path) -> std::io::Result<LatticeResults> {
    let results = run_lattice_experiment(cfg);
    results.write(out)?;
    let notes = vec![
        "distances are means over test examples, then over repeats".to_string(),
        format!("transport loss: {:?}; baseline: KL", cfg.loss),
    ];
    Manifest::new("lattice", config_text, cfg.seed, notes).write(out)?;
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neighbors_on_a_3x3_lattice() {
        assert_eq!(lattice_neighbors(3, 0), vec![1, 3]);
        assert_eq!(lattice_neighbors(3, 4), vec![1, 3, 5, 7]);
        assert_eq!(lattice_neighbors(3, 8), vec![5, 7]);
        let m = lattice_metric(3);
        assert_eq!(m.get(0, 1), 1.0);
        assert_eq!(m.get(0, 8), 8f64.sqrt());
    }

    #[test]
    fn shapes() {
        let data = generate_lattice_dataset(3, 0.2, 4, 2, 0.3, &mut cell_rng(1, 0));
        assert_eq!(data.train.len(), 36);
        assert_eq!(data.test.len(), 18);
        assert_eq!(data.train.num_labels(), 9);
        assert_eq!(data.train.num_features(), 2);
    }
}
