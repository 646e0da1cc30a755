//! Structural properties on randomized inputs.

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use wloss::{
    exact_transport, generalized_kl, log_domain_sinkhorn, relaxed_transport, sinkhorn_gradient, DiscreteMeasure,
    GroundMetric, RelaxedConfig, RelaxedSolver, SinkhornConfig,
};

fn simplex(k: usize) -> impl Strategy<Value = DiscreteMeasure> {
    prop::collection::vec(0.0f64..1.0, k).prop_filter_map("zero mass", |w| {
        if w.iter().sum::<f64>() > 1e-3 {
            DiscreteMeasure::from_weights(Array1::from(w)).ok()
        } else {
            None
        }
    })
}

fn points(k: usize) -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((0.0f64..1.0, 0.0f64..1.0).prop_map(|(a, b)| [a, b]), k)
}

fn pair_on_points() -> impl Strategy<Value = (GroundMetric, DiscreteMeasure, DiscreteMeasure)> {
    (2usize..=7).prop_flat_map(|k| {
        (points(k), simplex(k), simplex(k)).prop_map(|(p, h, y)| (GroundMetric::euclidean(&p, 1.0).unwrap(), h, y))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn exact_cost_lies_between_zero_and_max_cost((metric, h, y) in pair_on_points()) {
        let cost = exact_transport(&h, &y, &metric).unwrap().cost;
        prop_assert!(cost >= -1e-12 && cost <= metric.max_cost() + 1e-12);
    }

    #[test]
    fn exact_cost_is_lipschitz_in_l1((metric, h, y) in pair_on_points()) {
        let cost = exact_transport(&h, &y, &metric).unwrap().cost;
        let l1 = (&h.values() - &y.values()).mapv(f64::abs).sum();
        prop_assert!(cost <= metric.max_cost() * l1 + 1e-12);
    }

    #[test]
    fn exact_w1_is_a_metric(
        (metric, a, b, c) in (2usize..=6).prop_flat_map(|k| (points(k), simplex(k), simplex(k), simplex(k)))
            .prop_map(|(p, a, b, c)| (GroundMetric::euclidean(&p, 1.0).unwrap(), a, b, c))
    ) {
        let w = |x: &DiscreteMeasure, y: &DiscreteMeasure| exact_transport(x, y, &metric).unwrap().cost;
        prop_assert!((w(&a, &b) - w(&b, &a)).abs() <= 1e-12);
        prop_assert!(w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-9);
        prop_assert!(w(&a, &a).abs() <= 1e-12);
    }

    #[test]
    fn sinkhorn_plan_factors_and_gradient_is_tangent((metric, h, y) in pair_on_points(), lambda in 1.0f64..50.0) {
        let cfg = SinkhornConfig::new(lambda).with_max_iters(200_000);
        let out = log_domain_sinkhorn(&h, &y, &metric, cfg).unwrap();
        let (u, v) = (out.state.u(), out.state.v());
        let rebuilt = Array2::from_shape_fn(out.plan.matrix().dim(), |(i, j)| u[i] * out.state.kernel[[i, j]] * v[j]);
        for (a, b) in rebuilt.iter().zip(out.plan.matrix().iter()) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300) + 1e-300);
        }
        // nearly coincident points can make convergence arbitrarily slow
        prop_assert!(out.state.iters_run == cfg.max_iters || out.state.marginal_violation <= 1e-9);
        prop_assert!(sinkhorn_gradient(&out.state).unwrap().sum().abs() <= 1e-10);
    }

    #[test]
    fn relaxed_returns_a_fixed_point(
        (metric, h, y) in pair_on_points(),
        lambda in 1.0f64..50.0,
        ga in 0.1f64..20.0,
        gb in 0.1f64..20.0,
        scale in 0.2f64..5.0,
    ) {
        let h = DiscreteMeasure::unnormalized(h.values().mapv(|x| x * scale)).unwrap();
        let solver = RelaxedSolver::new(metric, RelaxedConfig::new(lambda, ga, gb)).unwrap();
        let sol = solver.solve(&h, &y).unwrap();
        let (ru, rv) = solver.fixed_point_residuals(&sol, &h, &y).unwrap();
        prop_assert!(ru <= 1e-8 && rv <= 1e-8, "{} {}", ru, rv);
        let (u, v) = (sol.u(), sol.v());
        let kernel = solver.metric().costs().mapv(|m| (-lambda * m - 1.0).exp());
        for ((i, j), t) in sol.plan.matrix().indexed_iter() {
            let rebuilt = u[i] * kernel[[i, j]] * v[j];
            prop_assert!((rebuilt - t).abs() <= 1e-10 * t.max(1e-300));
        }
    }

    #[test]
    fn generalized_kl_is_nonnegative(w in prop::collection::vec(0.0f64..3.0, 1..8), shift in 0.01f64..2.0) {
        let w = Array1::from(w);
        let z = w.mapv(|x| x + shift);
        prop_assert!(generalized_kl(w.view(), z.view()).unwrap() >= 0.0);
        let wp = w.mapv(|x| x + 0.5);
        prop_assert!(generalized_kl(wp.view(), wp.view()).unwrap().abs() <= 1e-12);
    }
}

#[test]
fn relaxed_stationarity_holds_entrywise() {
    // T_ij (T1/h)_i^{γ_a λ} (Tᵀ1/y)_j^{γ_b λ} = exp(-λ M_ij - 1)
    let metric = GroundMetric::line(5, 1.0).unwrap().rescaled();
    let h = DiscreteMeasure::unnormalized(Array1::from(vec![0.3, 0.1, 0.5, 0.2, 0.4])).unwrap();
    let y = DiscreteMeasure::normalized(Array1::from(vec![0.1, 0.2, 0.3, 0.25, 0.15])).unwrap();
    let (lambda, ga, gb) = (8.0, 1.5, 0.7);
    let sol = relaxed_transport(&h, &y, &metric, RelaxedConfig::new(lambda, ga, gb).with_tol(1e-13)).unwrap();
    let (rows, cols) = (sol.plan.row_marginal(), sol.plan.col_marginal());
    for ((i, j), t) in sol.plan.matrix().indexed_iter() {
        let lhs = t.ln() + ga * lambda * (rows[i] / h.get(i)).ln() + gb * lambda * (cols[j] / y.get(j)).ln();
        let rhs = -lambda * metric.get(i, j) - 1.0;
        assert!((lhs - rhs).abs() <= 1e-6 * rhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}
