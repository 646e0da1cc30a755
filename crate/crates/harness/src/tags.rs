//! A synthetic multi-label tagging task.
//!
//! Tags are random points in a square, and their ground metric is the
//! Euclidean distance between them. An image picks a topic tag and then
//! carries each tag within `tag_radius` of the topic with probability 1/2.
//! Its features are the mean of its tags' random embeddings plus Gaussian
//! noise. Labels spread their mass uniformly over the image's tags.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use wloss::learner::{binary_auc, top_k_cost, train_sgd};
use wloss::{Dataset, DiscreteMeasure, GroundMetric, LinearSoftmaxModel, Loss, LossConfig, LossKind};

use crate::config::TagExperimentConfig;
use crate::manifest::Manifest;
use crate::rng::cell_rng;
use crate::table::{Cell, Table};
use crate::transport_loss_config;

/// Keeps one tag per single-linkage cluster of `tags`.
///
/// Two tags fall in the same cluster when a chain of tags joins them with
/// every link at distance `<= threshold`. The survivor of each cluster is
/// drawn uniformly with `rng`; clusters are visited in order of their
/// smallest tag. The survivors come back sorted.
pub fn reduce_redundancy<R: Rng + ?Sized>(
    tags: &[usize],
    metric: &GroundMetric,
    threshold: f64,
    rng: &mut R,
) -> Vec<usize> {
    let mut tags = tags.to_vec();
    tags.sort_unstable();
    tags.dedup();
    let n = tags.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if metric.get(tags[i], tags[j]) <= threshold {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for (i, &tag) in tags.iter().enumerate() {
        let r = root(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = clusters.len();
            clusters.push(Vec::new());
        }
        clusters[slot[r]].push(tag);
    }
    let mut kept: Vec<usize> = clusters.iter().map(|c| c[rng.random_range(0..c.len())]).collect();
    kept.sort_unstable();
    kept
}

#[derive(Debug, Clone)]
pub struct TagWorld {
    pub points: Vec<[f64; 2]>,
    pub metric: GroundMetric,
    pub embeddings: Array2<f64>,
}

pub fn generate_tag_world<R: Rng + ?Sized>(cfg: &TagExperimentConfig, rng: &mut R) -> TagWorld {
    let points: Vec<[f64; 2]> =
        (0..cfg.num_tags).map(|_| [rng.random::<f64>() * cfg.extent, rng.random::<f64>() * cfg.extent]).collect();
    let metric = GroundMetric::euclidean(&points, 1.0).expect("at least two tags");
    let embeddings = Array2::from_shape_fn((cfg.num_tags, cfg.feature_dim), |_| rng.sample::<f64, _>(StandardNormal));
    TagWorld { points, metric, embeddings }
}

/// Images with their tag sets. The last feature is a constant 1.
pub fn sample_images<R: Rng + ?Sized>(
    world: &TagWorld,
    cfg: &TagExperimentConfig,
    n: usize,
    rng: &mut R,
) -> (Dataset, Vec<Vec<usize>>) {
    let k = world.points.len();
    let d = cfg.feature_dim;
    let mut features = Array2::zeros((n, d + 1));
    let mut labels = Vec::with_capacity(n);
    let mut tag_sets = Vec::with_capacity(n);
    for i in 0..n {
        let topic = rng.random_range(0..k);
        let tags: Vec<usize> = (0..k)
            .filter(|&t| t == topic || (world.metric.get(topic, t) <= cfg.tag_radius && rng.random::<f64>() < 0.5))
            .collect();
        let mut x = Array1::zeros(d);
        for &t in &tags {
            x += &world.embeddings.row(t);
        }
        x /= tags.len() as f64;
        let mut row = features.row_mut(i);
        for j in 0..d {
            row[j] = x[j] + cfg.feature_noise * rng.sample::<f64, _>(StandardNormal);
        }
        row[d] = 1.0;
        let mut weights = Array1::zeros(k);
        for &t in &tags {
            weights[t] = 1.0 / tags.len() as f64;
        }
        labels.push(DiscreteMeasure::normalized(weights).expect("uniform over a nonempty set"));
        tag_sets.push(tags);
    }
    (Dataset::new(features, labels).expect("one label per row"), tag_sets)
}

/// Mean top-K cost per K and mean per-image AUC of `model` on `data`.
pub fn score(
    model: &LinearSoftmaxModel,
    data: &Dataset,
    tag_sets: &[Vec<usize>],
    metric: &GroundMetric,
    top_k: &[usize],
) -> wloss::Result<(Vec<f64>, f64)> {
    let mut costs = vec![0.0; top_k.len()];
    let (mut auc, mut auc_n) = (0.0, 0usize);
    for (i, truth) in tag_sets.iter().enumerate() {
        let h = model.predict(data.feature(i))?;
        for (c, &k) in costs.iter_mut().zip(top_k) {
            *c += top_k_cost(&h, truth, metric, k)?;
        }
        let relevant: Vec<bool> = (0..h.len()).map(|t| truth.contains(&t)).collect();
        if let Some(a) = binary_auc(&h.values().to_vec(), &relevant) {
            auc += a;
            auc_n += 1;
        }
    }
    let n = tag_sets.len() as f64;
    Ok((costs.into_iter().map(|c| c / n).collect(), auc / auc_n.max(1) as f64))
}

/// Trains `W + α KL` (Sinkhorn) and the KL baseline on the same images,
/// after thinning each training tag set with [`reduce_redundancy`], and
/// reports top-K cost and AUC on clean test tag sets.
pub fn run_tag_experiment(cfg: &TagExperimentConfig) -> wloss::Result<Table> {
    let mut rng = cell_rng(cfg.seed, 0);
    let world = generate_tag_world(cfg, &mut rng);
    let (train, train_tags) = sample_images(&world, cfg, cfg.train_size, &mut rng);
    let (test, test_tags) = sample_images(&world, cfg, cfg.test_size, &mut rng);

    let mut thin = cell_rng(cfg.seed, 1);
    let labels = train_tags
        .iter()
        .map(|tags| {
            let kept = reduce_redundancy(tags, &world.metric, cfg.redundancy_threshold, &mut thin);
            let mut w = Array1::zeros(cfg.num_tags);
            for &t in &kept {
                w[t] = 1.0 / kept.len() as f64;
            }
            DiscreteMeasure::normalized(w)
        })
        .collect::<wloss::Result<Vec<_>>>()?;
    let train = Dataset::new(train.features().clone(), labels)?;

    let metric = world.metric.rescaled();
    let sgd = cfg.sgd.train_config(cfg.seed);
    let methods = [
        ("wasserstein+kl", transport_loss_config(LossKind::SinkhornW, cfg.lambda, 10).with_alpha_kl(cfg.alpha_kl)),
        ("kl", LossConfig::kl()),
    ];
    let mut header = vec!["method".to_string()];
    header.extend(cfg.top_k.iter().map(|k| format!("top_{k}_cost")));
    header.push("auc".to_string());
    let mut table = Table { header, rows: Vec::new() };
    for (name, loss_cfg) in methods {
        let loss = Loss::new(metric.clone(), loss_cfg)?;
        let model = train_sgd(&train, &loss, &sgd)?.model;
        let (costs, auc) = score(&model, &test, &test_tags, &world.metric, &cfg.top_k)?;
        let mut row = vec![Cell::from(name)];
        row.extend(costs.into_iter().map(Cell::from));
        row.push(auc.into());
        table.push(row);
    }
    Ok(table)
}

pub fn run_and_write(cfg: &TagExperimentConfig, config_text: &str, out: &Path) -> anyhow::Result<Table> {
    let table = run_tag_experiment(cfg)?;
    std::fs::create_dir_all(out)?;
    table.write(&out.join("topk.csv"))?;
    let notes = vec!["labels spread uniformly over each image's tags".to_string()];
    Manifest::new("tags", config_text, cfg.seed, notes).write(out)?;
    Ok(table)
}
