//! The `wloss` command line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use wloss::io::{load_matrix_csv, load_vector_csv, save_matrix_csv};
use wloss::learner::{evaluate, train_sgd};
use wloss::{
    exact_transport, Dataset, DiscreteMeasure, GroundMetric, LinearSoftmaxModel, Loss, LossConfig, LossKind,
    RelaxedConfig, RelaxedSolver, SinkhornConfig, SinkhornSolver, TrainConfig,
};

use crate::config::{self, LatticeExperimentConfig, MnistExperimentConfig, TagExperimentConfig};
use crate::idx::{load_mnist, locate};
use crate::{lattice, mnist, tags};

#[derive(Debug, Parser)]
#[command(name = "wloss", version, about = "Wasserstein losses: transport solvers, training and experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one transport problem between two measures.
    #[command(subcommand)]
    Ot(OtCommand),
    /// Train a linear softmax model.
    Train(TrainArgs),
    /// Score a trained model.
    Eval(EvalArgs),
    /// Run an experiment from a config file.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

#[derive(Debug, Args)]
pub struct Problem {
    /// Source measure, CSV.
    #[arg(long)]
    pub mu: PathBuf,
    /// Target measure, CSV.
    #[arg(long)]
    pub nu: PathBuf,
    /// Ground metric, K×K CSV.
    #[arg(long)]
    pub metric: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum OtCommand {
    /// Exact transport cost; prints it with 12 significant digits.
    Exact {
        #[command(flatten)]
        problem: Problem,
        #[arg(long)]
        emit_plan: Option<PathBuf>,
        /// Writes the dual potentials α and β as two CSV rows.
        #[arg(long)]
        emit_duals: Option<PathBuf>,
    },
    /// Entropic transport by Sinkhorn scaling; prints JSON.
    Sinkhorn {
        #[command(flatten)]
        problem: Problem,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long, default_value_t = 10_000)]
        max_iters: usize,
        #[arg(long)]
        log_domain: bool,
        #[arg(long)]
        emit_plan: Option<PathBuf>,
    },
    /// Transport with KL-relaxed marginals; prints JSON.
    Relaxed {
        #[command(flatten)]
        problem: Problem,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        gamma_a: f64,
        #[arg(long)]
        gamma_b: f64,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long, default_value_t = 10_000)]
        max_iters: usize,
        #[arg(long)]
        emit_plan: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory with `features.csv` and `labels.csv`, or MNIST IDX files.
    #[arg(long)]
    pub data: PathBuf,
    /// Ground metric CSV. Defaults to `metric.csv` in the data directory.
    #[arg(long)]
    pub metric: Option<PathBuf>,
    #[arg(long, default_value = "sinkhorn", value_parser = parse_loss_kind)]
    pub loss: LossKind,
    #[arg(long, default_value_t = 0.0)]
    pub alpha_kl: f64,
    #[arg(long, default_value_t = 50.0)]
    pub lambda: f64,
    /// Solver iterations per loss evaluation (Sinkhorn and relaxed).
    #[arg(long, default_value_t = 10)]
    pub solver_iters: usize,
    #[arg(long, default_value_t = 1.0)]
    pub gamma_a: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gamma_b: f64,
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.7)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.0005)]
    pub l2: f64,
    #[arg(long, default_value_t = 100)]
    pub minibatch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use only this many rows, drawn with the seed.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Directory laid out as for `train`. MNIST directories use the test split.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub topk: usize,
    /// Ground metric CSV. Defaults to `metric.csv` in the data directory,
    /// then to the 0-1 metric.
    #[arg(long)]
    pub metric: Option<PathBuf>,
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum ExperimentCommand {
    /// Lattice classes with neighbor label noise.
    Lattice {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// MNIST digits under line metrics of several exponents.
    Mnist {
        #[arg(long)]
        config: PathBuf,
        /// Directory holding the IDX files.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthetic multi-label tagging scored by top-K cost.
    Tags {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_loss_kind(s: &str) -> std::result::Result<LossKind, String> {
    s.parse().map_err(|e: wloss::Error| e.to_string())
}

/// Formats with 12 significant digits in scientific notation.
pub fn format_significant(x: f64) -> String {
    format!("{x:.11e}")
}

fn read_measure(path: &Path) -> Result<DiscreteMeasure> {
    let v = load_vector_csv(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(DiscreteMeasure::from_weights(v)?)
}

fn read_metric(path: &Path) -> Result<GroundMetric> {
    let m = load_matrix_csv(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(GroundMetric::new(m, 1.0)?)
}

fn read_problem(p: &Problem) -> Result<(DiscreteMeasure, DiscreteMeasure, GroundMetric)> {
    Ok((read_measure(&p.mu)?, read_measure(&p.nu)?, read_metric(&p.metric)?))
}

fn is_mnist(dir: &Path) -> bool {
    locate(dir, "train-images-idx3-ubyte").is_ok() || locate(dir, "t10k-images-idx3-ubyte").is_ok()
}

/// Loads a data directory: `features.csv` (N×D) with `labels.csv` (N×K
/// label weights), or the MNIST IDX files of `split`.
pub fn load_data_dir(dir: &Path, split: &str, limit: Option<usize>, seed: u64) -> Result<Dataset> {
    if dir.join("features.csv").is_file() {
        let features = load_matrix_csv(dir.join("features.csv"))?;
        let labels = load_matrix_csv(dir.join("labels.csv"))?;
        let labels = labels
            .rows()
            .into_iter()
            .map(|r| DiscreteMeasure::from_weights(r.to_owned()))
            .collect::<wloss::Result<_>>()?;
        let data = Dataset::new(features, labels)?;
        return Ok(match limit {
            Some(n) if n < data.len() => {
                let idx = rand::seq::index::sample(&mut crate::rng::cell_rng(seed, 0), data.len(), n).into_vec();
                data.subset(&idx)
            }
            _ => data,
        });
    }
    if is_mnist(dir) {
        return Ok(load_mnist(dir, split, limit, seed)?);
    }
    bail!("{} holds neither features.csv nor MNIST IDX files", dir.display())
}

fn metric_for(dir: &Path, explicit: Option<&Path>, k: usize) -> Result<GroundMetric> {
    if let Some(path) = explicit {
        return read_metric(path);
    }
    let default = dir.join("metric.csv");
    if default.is_file() {
        return read_metric(&default);
    }
    if is_mnist(dir) {
        return Ok(mnist::digit_metric(1.0)?);
    }
    Ok(GroundMetric::zero_one(k)?)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ot(cmd) => run_ot(cmd),
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Experiment(cmd) => run_experiment(cmd),
    }
}

fn run_ot(cmd: OtCommand) -> Result<()> {
    match cmd {
        OtCommand::Exact { problem, emit_plan, emit_duals } => {
            let (mu, nu, metric) = read_problem(&problem)?;
            let sol = exact_transport(&mu, &nu, &metric)?;
            println!("{}", format_significant(sol.cost));
            if let Some(path) = emit_plan {
                save_matrix_csv(&path, sol.plan.matrix())?;
            }
            if let Some(path) = emit_duals {
                let duals = ndarray::stack![ndarray::Axis(0), sol.dual_alpha, sol.dual_beta];
                save_matrix_csv(&path, duals.view())?;
            }
        }
        OtCommand::Sinkhorn { problem, lambda, tol, max_iters, log_domain, emit_plan } => {
            let (mu, nu, metric) = read_problem(&problem)?;
            let cfg = SinkhornConfig::new(lambda).with_tol(tol).with_max_iters(max_iters);
            let solver = SinkhornSolver::new(metric, cfg)?;
            let out = if log_domain { solver.solve_log(&mu, &nu)? } else { solver.solve(&mu, &nu)? };
            let report = json!({
                "loss": out.loss,
                "transport_cost": out.transport_cost,
                "iters": out.state.iters_run,
                "violation": out.state.marginal_violation,
            });
            println!("{report}");
            if let Some(path) = emit_plan {
                save_matrix_csv(&path, out.plan.matrix())?;
            }
        }
        OtCommand::Relaxed { problem, lambda, gamma_a, gamma_b, tol, max_iters, emit_plan } => {
            let (mu, nu, metric) = read_problem(&problem)?;
            let cfg = RelaxedConfig::new(lambda, gamma_a, gamma_b).with_tol(tol).with_max_iters(max_iters);
            let sol = RelaxedSolver::new(metric, cfg)?.solve(&mu, &nu)?;
            let report = json!({
                "objective": sol.objective,
                "transport_cost": sol.transport_cost,
                "kl_a": sol.kl_a,
                "kl_b": sol.kl_b,
                "entropy": sol.entropy,
                "iters": sol.iters_run,
                "residual": sol.residual,
            });
            println!("{report}");
            if let Some(path) = emit_plan {
                save_matrix_csv(&path, sol.plan.matrix())?;
            }
        }
    }
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let data = load_data_dir(&args.data, "train", args.limit, args.seed)?;
    let metric = metric_for(&args.data, args.metric.as_deref(), data.num_labels())?;
    let base = crate::transport_loss_config(args.loss, args.lambda, args.solver_iters);
    let loss_cfg = match args.loss {
        LossKind::RelaxedW => LossConfig::relaxed(RelaxedConfig::fixed_iterations(
            args.lambda,
            args.gamma_a,
            args.gamma_b,
            args.solver_iters,
        )),
        _ => base,
    }
    .with_alpha_kl(args.alpha_kl);
    let loss = Loss::new(metric, loss_cfg)?;
    let cfg = TrainConfig {
        minibatch: args.minibatch,
        iterations: args.iters,
        learning_rate: args.lr,
        momentum: args.momentum,
        l2: args.l2,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let out = train_sgd(&data, &loss, &cfg)?;
    std::fs::write(&args.out, serde_json::to_string(&out.model.to_json())? + "\n")
        .with_context(|| format!("writing {}", args.out.display()))?;
    if let Some(last) = out.log.last() {
        eprintln!("iteration {}: mean loss {:.6}", last.iteration, last.loss);
    }
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.model).with_context(|| format!("reading {}", args.model.display()))?;
    let model = LinearSoftmaxModel::from_json(&serde_json::from_str(&text)?)?;
    let data = load_data_dir(&args.data, "t10k", args.limit, args.seed)?;
    let metric = metric_for(&args.data, args.metric.as_deref(), model.num_labels())?;
    let report = evaluate(&model, &data, &metric, args.topk)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn run_experiment(cmd: ExperimentCommand) -> Result<()> {
    match cmd {
        ExperimentCommand::Lattice { config, out } => {
            let (cfg, text) = config::load::<LatticeExperimentConfig>(&config)?;
            cfg.validate()?;
            let results = lattice::run_and_write(&cfg, &text, &out)?;
            print!("{}", results.by_noise.to_csv());
        }
        ExperimentCommand::Mnist { config, data, out } => {
            let (cfg, text) = config::load::<MnistExperimentConfig>(&config)?;
            cfg.validate()?;
            let results = mnist::run_and_write(&cfg, &text, &data, &out)?;
            print!("{}", results.summary_table.to_csv());
        }
        ExperimentCommand::Tags { config, out } => {
            let (cfg, text) = config::load::<TagExperimentConfig>(&config)?;
            cfg.validate()?;
            let table = tags::run_and_write(&cfg, &text, &out)?;
            print!("{}", table.to_csv());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(format_significant(1.5), "1.50000000000e0");
        assert_eq!(format_significant(2.0 / 3.0), "6.66666666667e-1");
    }

    #[test]
    fn parses_documented_flags() {
        let cli = Cli::try_parse_from([
            "wloss",
            "train",
            "--data",
            "d",
            "--metric",
            "m.csv",
            "--loss",
            "kl",
            "--alpha-kl",
            "0.5",
            "--lambda",
            "20",
            "--iters",
            "5",
            "--lr",
            "0.01",
            "--seed",
            "3",
            "--out",
            "model.json",
        ])
        .unwrap();
        match cli.command {
            Command::Train(a) => {
                assert_eq!(a.loss, LossKind::KlOnly);
                assert_eq!(a.iters, 5);
                assert_eq!(a.seed, 3);
            }
            other => panic!("{other:?}"),
        }
        assert!(Cli::try_parse_from(["wloss", "train", "--data", "d", "--loss", "hinge", "--out", "m"]).is_err());
    }
}
