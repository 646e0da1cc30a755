//! Entropic-regularized transport between normalized measures.
//!
//! The regularized problem `min ⟨T, M⟩ - H(T)/λ` over couplings of `h` and
//! `y` is solved by a diagonal scaling `T = diag(u) K diag(v)` of the kernel
//! `K = exp(-λM - 1)`. The scalings come from the Sinkhorn-Knopp iteration
//!
//! ```text
//! u <- h ⊘ (K (y ⊘ Kᵀu)),   v = y ⊘ Kᵀu
//! ```
//!
//! started from `u = 1`. The loss gradient with respect to `h` is
//! `log(u)/λ`, centered to be tangent to the simplex.
//!
//! [`SinkhornSolver::solve`] works with `u` and `v` directly and reports
//! [`Error::KernelUnderflow`] when they leave the floating-point range;
//! [`SinkhornSolver::solve_log`] runs the same iteration on `log u` and
//! `log v` with log-sum-exp reductions and stays usable for very large `λ`.

use ndarray::linalg::general_mat_vec_mul;
use ndarray::{Array1, Array2, ArrayView1, Zip};

use crate::error::{Error, Result};
use crate::measure::{clamp_floor, DiscreteMeasure, GroundMetric, TransportPlan, NORMALIZATION_TOL};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IterationMode {
    /// Stop once the marginal violation drops to `tol`, or after `max_iters`.
    UntilConverged,
    /// Run exactly `max_iters` scaling updates.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    pub lambda: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Entries of `h` and `y` below this are raised to it before the
    /// iteration (followed by renormalization).
    pub min_mass: f64,
    pub mode: IterationMode,
}

impl SinkhornConfig {
    pub const DEFAULT_MAX_ITERS: usize = 10_000;
    pub const DEFAULT_TOL: f64 = 1e-9;
    pub const DEFAULT_MIN_MASS: f64 = 1e-16;

    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            max_iters: Self::DEFAULT_MAX_ITERS,
            tol: Self::DEFAULT_TOL,
            min_mass: Self::DEFAULT_MIN_MASS,
            mode: IterationMode::UntilConverged,
        }
    }

    /// Exactly `iters` scaling updates and no convergence test.
    pub fn fixed_iterations(lambda: f64, iters: usize) -> Self {
        Self { max_iters: iters, mode: IterationMode::Fixed, ..Self::new(lambda) }
    }

    pub fn with_tol(self, tol: f64) -> Self {
        Self { tol, ..self }
    }

    pub fn with_max_iters(self, max_iters: usize) -> Self {
        Self { max_iters, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.min_mass > 0.0) {
            return Err(Error::InvalidConfig(format!("min_mass must be positive, got {}", self.min_mass)));
        }
        Ok(())
    }
}

/// `exp(-λM - 1)`, entrywise.
pub fn build_kernel(metric: &GroundMetric, lambda: f64) -> Array2<f64> {
    metric.costs().mapv(|m| (-lambda * m - 1.0).exp())
}

fn build_log_kernel(metric: &GroundMetric, lambda: f64) -> Array2<f64> {
    metric.costs().mapv(|m| -lambda * m - 1.0)
}

/// Scalings and diagnostics at the end of a Sinkhorn run.
///
/// The scalings are stored as logarithms so the log-domain solver can
/// represent values far outside the `f64` range; [`SinkhornState::u`] and
/// [`SinkhornState::v`] exponentiate them.
#[derive(Debug, Clone)]
pub struct SinkhornState {
    pub kernel: Array2<f64>,
    pub log_u: Array1<f64>,
    pub log_v: Array1<f64>,
    pub iters_run: usize,
    /// `‖u ⊙ Kv - h‖₁ + ‖v ⊙ Kᵀu - y‖₁` for the returned scalings.
    pub marginal_violation: f64,
    pub lambda: f64,
}

impl SinkhornState {
    pub fn u(&self) -> Array1<f64> {
        self.log_u.mapv(f64::exp)
    }

    pub fn v(&self) -> Array1<f64> {
        self.log_v.mapv(f64::exp)
    }
}

#[derive(Debug, Clone)]
pub struct SinkhornOutput {
    pub state: SinkhornState,
    pub plan: TransportPlan,
    /// `⟨T, M⟩ - H(T)/λ`.
    pub loss: f64,
    /// `⟨T, M⟩` alone.
    pub transport_cost: f64,
    /// `H(T)`.
    pub entropy: f64,
}

/// A Sinkhorn solver bound to one ground metric, with the kernel computed
/// once and reused across calls.
#[derive(Debug, Clone)]
pub struct SinkhornSolver {
    metric: GroundMetric,
    config: SinkhornConfig,
    kernel: Array2<f64>,
    log_kernel: Array2<f64>,
    /// Some kernel entry rounds to zero.
    underflow: bool,
}

impl SinkhornSolver {
    pub fn new(metric: GroundMetric, config: SinkhornConfig) -> Result<Self> {
        config.validate()?;
        let kernel = build_kernel(&metric, config.lambda);
        let log_kernel = build_log_kernel(&metric, config.lambda);
        let underflow = kernel.iter().any(|&x| x == 0.0);
        Ok(Self { metric, config, kernel, log_kernel, underflow })
    }

    pub fn metric(&self) -> &GroundMetric {
        &self.metric
    }

    pub fn config(&self) -> &SinkhornConfig {
        &self.config
    }

    pub fn kernel(&self) -> &Array2<f64> {
        &self.kernel
    }

    fn prepare(&self, h: &DiscreteMeasure, y: &DiscreteMeasure) -> Result<(Array1<f64>, Array1<f64>)> {
        for m in [h, y] {
            self.metric.check_size(m.len())?;
            if (m.mass() - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::NotNormalized { mass: m.mass() });
            }
        }
        let h = clamp_floor(h.values(), self.config.min_mass, true);
        let y = clamp_floor(y.values(), self.config.min_mass, true);
        Ok((h, y))
    }

    /// Direct-domain Sinkhorn-Knopp.
    pub fn solve(&self, h: &DiscreteMeasure, y: &DiscreteMeasure) -> Result<SinkhornOutput> {
        let (h, y) = self.prepare(h, y)?;
        let (u, v, iters, violation) = self.scale(&h, &y)?;
        self.finish(u.mapv(f64::ln), v.mapv(f64::ln), iters, violation)
    }

    /// The smoothed loss and its gradient in `h`, without forming the plan.
    ///
    /// With `T = diag(u) K diag(v)` and marginals `r`, `c`, the identity
    /// `log T_ij = log u_i + log v_j - λM_ij - 1` gives
    /// `⟨T, M⟩ - H(T)/λ = (rᵀ log u + cᵀ log v - 1ᵀr)/λ`. Falls back to the
    /// log domain when the direct iteration underflows.
    pub fn loss_and_gradient(&self, h: &DiscreteMeasure, y: &DiscreteMeasure) -> Result<(f64, Array1<f64>)> {
        let (hp, yp) = self.prepare(h, y)?;
        let (u, v) = match self.scale(&hp, &yp) {
            Ok((u, v, _, _)) => (u, v),
            Err(Error::KernelUnderflow { .. }) => {
                let out = self.solve_log(h, y)?;
                return Ok((out.loss, sinkhorn_gradient(&out.state)?));
            }
            Err(e) => return Err(e),
        };
        let (log_u, log_v) = (u.mapv(f64::ln), v.mapv(f64::ln));
        let r = &u * &self.kernel.dot(&v);
        let c = &v * &self.kernel.t().dot(&u);
        let loss = (r.dot(&log_u) + c.dot(&log_v) - r.sum()) / self.config.lambda;
        let mean = log_u.mean().unwrap_or(0.0);
        Ok((loss, log_u.mapv(|l| (l - mean) / self.config.lambda)))
    }

    /// Runs the direct iteration on clamped marginals, returning `u`, `v`,
    /// the iteration count and the final marginal violation.
    fn scale(&self, h: &Array1<f64>, y: &Array1<f64>) -> Result<(Array1<f64>, Array1<f64>, usize, f64)> {
        let k = &self.kernel;
        // An entry that rounds to zero forbids mass the true plan may need,
        // so the scalings would never settle.
        if self.underflow {
            return Err(Error::KernelUnderflow { iters: 0 });
        }
        let cfg = &self.config;
        let n = h.len();
        let mut u = Array1::<f64>::ones(n);
        let (mut v, mut ktu, mut kv) = (Array1::zeros(n), Array1::zeros(n), Array1::zeros(n));
        let mut iters = 0;
        loop {
            general_mat_vec_mul(1.0, &k.t(), &u, 0.0, &mut ktu);
            Zip::from(&mut v).and(y).and(&ktu).for_each(|v, &y, &d| *v = y / d);
            general_mat_vec_mul(1.0, k, &v, 0.0, &mut kv);
            if !all_positive_finite(&v) || !all_positive_finite(&kv) {
                return Err(Error::KernelUnderflow { iters });
            }
            let done = match cfg.mode {
                IterationMode::UntilConverged => {
                    iters == cfg.max_iters || violation(&u, &kv, h, &v, &ktu, y) <= cfg.tol
                }
                IterationMode::Fixed => iters == cfg.max_iters,
            };
            if done {
                let violation = violation(&u, &kv, h, &v, &ktu, y);
                return Ok((u, v, iters, violation));
            }
            Zip::from(&mut u).and(h).and(&kv).for_each(|u, &h, &d| *u = h / d);
            if !all_positive_finite(&u) {
                return Err(Error::KernelUnderflow { iters });
            }
            iters += 1;
        }
    }

    /// Log-domain Sinkhorn-Knopp. Same contract as [`SinkhornSolver::solve`].
    pub fn solve_log(&self, h: &DiscreteMeasure, y: &DiscreteMeasure) -> Result<SinkhornOutput> {
        let (h, y) = self.prepare(h, y)?;
        let (log_h, log_y) = (h.mapv(f64::ln), y.mapv(f64::ln));
        let lk = &self.log_kernel;
        let cfg = &self.config;
        let n = h.len();
        let mut f = Array1::<f64>::zeros(n);
        let mut iters = 0;
        let (g, violation) = loop {
            // log(Kᵀu)_j and then log v = log y - log(Kᵀu)
            let log_ktu = Array1::from_shape_fn(n, |j| logsumexp(lk.column(j), f.view()));
            let g = &log_y - &log_ktu;
            let log_kv = Array1::from_shape_fn(n, |i| logsumexp(lk.row(i), g.view()));
            let row = (&f + &log_kv).mapv(f64::exp);
            let col = (&g + &log_ktu).mapv(f64::exp);
            let violation = l1_diff(&row, &h) + l1_diff(&col, &y);
            let done = match cfg.mode {
                IterationMode::UntilConverged => violation <= cfg.tol || iters == cfg.max_iters,
                IterationMode::Fixed => iters == cfg.max_iters,
            };
            if done {
                break (g, violation);
            }
            f = &log_h - &log_kv;
            iters += 1;
        };
        self.finish(f, g, iters, violation)
    }

    fn finish(&self, log_u: Array1<f64>, log_v: Array1<f64>, iters: usize, violation: f64) -> Result<SinkhornOutput> {
        let n = log_u.len();
        let mut plan = Array2::<f64>::zeros((n, n));
        let mut neg_entropy = 0.0;
        Zip::indexed(&mut plan).and(&self.log_kernel).for_each(|(i, j), t, &lk| {
            let log_t = log_u[i] + lk + log_v[j];
            *t = log_t.exp();
            if *t > 0.0 {
                neg_entropy += *t * log_t;
            }
        });
        let plan = TransportPlan::new(plan)?;
        let transport_cost = plan.cost(&self.metric);
        let entropy = -neg_entropy;
        let loss = transport_cost - entropy / self.config.lambda;
        let state = SinkhornState {
            kernel: self.kernel.clone(),
            log_u,
            log_v,
            iters_run: iters,
            marginal_violation: violation,
            lambda: self.config.lambda,
        };
        Ok(SinkhornOutput { state, plan, loss, transport_cost, entropy })
    }
}

fn all_positive_finite(x: &Array1<f64>) -> bool {
    x.iter().all(|&v| v > 0.0 && v.is_finite())
}

/// `‖u ⊙ kv - h‖₁ + ‖v ⊙ ktu - y‖₁`.
fn violation(
    u: &Array1<f64>,
    kv: &Array1<f64>,
    h: &Array1<f64>,
    v: &Array1<f64>,
    ktu: &Array1<f64>,
    y: &Array1<f64>,
) -> f64 {
    let side = |a: &Array1<f64>, b: &Array1<f64>, target: &Array1<f64>| {
        Zip::from(a).and(b).and(target).fold(0.0, |acc, &a, &b, &t| acc + (a * b - t).abs())
    };
    side(u, kv, h) + side(v, ktu, y)
}

fn l1_diff(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum()
}

/// `log Σ_k exp(a_k + b_k)`.
pub(crate) fn logsumexp(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let max = a.iter().zip(b.iter()).map(|(x, y)| x + y).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x + y - max).exp()).sum();
    max + s.ln()
}

/// Direct-domain Sinkhorn between normalized `h` and `y`.
pub fn sinkhorn_normalized(
    h: &DiscreteMeasure,
    y: &DiscreteMeasure,
    metric: &GroundMetric,
    cfg: SinkhornConfig,
) -> Result<SinkhornOutput> {
    SinkhornSolver::new(metric.clone(), cfg)?.solve(h, y)
}

/// Log-domain Sinkhorn between normalized `h` and `y`.
pub fn log_domain_sinkhorn(
    h: &DiscreteMeasure,
    y: &DiscreteMeasure,
    metric: &GroundMetric,
    cfg: SinkhornConfig,
) -> Result<SinkhornOutput> {
    SinkhornSolver::new(metric.clone(), cfg)?.solve_log(h, y)
}

/// Gradient of the smoothed loss with respect to `h`:
/// `α = log(u)/λ - (1ᵀ log u)/(λK) 1`, which sums to zero.
pub fn sinkhorn_gradient(state: &SinkhornState) -> Result<Array1<f64>> {
    if let Some(index) = state.log_u.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonPositiveScaling { index });
    }
    let mean = state.log_u.mean().unwrap_or(0.0);
    Ok(state.log_u.mapv(|l| (l - mean) / state.lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::exact_transport;
    use ndarray::array;

    fn measure(v: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::normalized(Array1::from(v.to_vec())).unwrap()
    }

    #[test]
    fn plan_free_loss_matches_the_plan() {
        let m = GroundMetric::line(6, 1.0).unwrap().rescaled();
        let (h, y) = (measure(&[0.1, 0.2, 0.3, 0.1, 0.2, 0.1]), measure(&[0.3, 0.1, 0.1, 0.2, 0.05, 0.25]));
        for cfg in [SinkhornConfig::new(20.0), SinkhornConfig::fixed_iterations(20.0, 3)] {
            let solver = SinkhornSolver::new(m.clone(), cfg).unwrap();
            let out = solver.solve(&h, &y).unwrap();
            let (loss, grad) = solver.loss_and_gradient(&h, &y).unwrap();
            assert!((loss - out.loss).abs() <= 1e-13, "{loss} vs {}", out.loss);
            assert_eq!(grad, sinkhorn_gradient(&out.state).unwrap());
        }
    }

    #[test]
    fn kernel_values() {
        let k = build_kernel(&GroundMetric::zero_one(1).unwrap(), 3.0);
        assert!((k[[0, 0]] - 0.367879441171).abs() < 1e-12);
        let k = build_kernel(&GroundMetric::zero_one(2).unwrap(), 1.0);
        let (e1, e2) = ((-1f64).exp(), (-2f64).exp());
        assert_eq!(k, array![[e1, e2], [e2, e1]]);
    }

    #[test]
    fn kernel_off_diagonal_decreases_in_lambda() {
        let m = GroundMetric::line(4, 1.0).unwrap();
        let mut prev = f64::INFINITY;
        for lambda in [0.1, 1.0, 10.0, 100.0] {
            let k = build_kernel(&m, lambda);
            assert_eq!(k[[2, 2]], (-1f64).exp());
            assert!(k[[0, 3]] < prev);
            prev = k[[0, 3]];
        }
    }

    #[test]
    fn uniform_marginals_give_symmetric_plan() {
        let m = GroundMetric::line(5, 1.0).unwrap();
        let h = DiscreteMeasure::uniform(5).unwrap();
        let out = sinkhorn_normalized(&h, &h, &m, SinkhornConfig::new(2.0).with_tol(1e-14)).unwrap();
        let t = out.plan.matrix();
        for i in 0..5 {
            for j in 0..5 {
                assert!((t[[i, j]] - t[[j, i]]).abs() < 1e-12);
            }
        }
        // u and v agree up to a scalar
        let ratio = &out.state.u() / &out.state.v();
        assert!(ratio.iter().all(|r| (r - ratio[0]).abs() < 1e-9 * ratio[0]));
    }

    #[test]
    fn converged_plan_has_requested_marginals() {
        let m = GroundMetric::line(4, 1.0).unwrap();
        let (h, y) = (measure(&[0.1, 0.2, 0.3, 0.4]), measure(&[0.4, 0.3, 0.2, 0.1]));
        let out = sinkhorn_normalized(&h, &y, &m, SinkhornConfig::new(5.0)).unwrap();
        assert!(out.state.marginal_violation <= 1e-9);
        let err_rows = l1_diff(&out.plan.row_marginal().to_owned(), &h.values().to_owned());
        let err_cols = l1_diff(&out.plan.col_marginal().to_owned(), &y.values().to_owned());
        assert!(err_rows <= 1e-9 && err_cols <= 1e-9);
    }

    #[test]
    fn large_lambda_approaches_exact_cost() {
        let m = GroundMetric::line(8, 1.0).unwrap();
        let h = measure(&[0.05, 0.2, 0.1, 0.15, 0.1, 0.05, 0.2, 0.15]);
        let y = measure(&[0.2, 0.05, 0.15, 0.1, 0.1, 0.2, 0.05, 0.15]);
        let exact = exact_transport(&h, &y, &m).unwrap().cost;
        let out = log_domain_sinkhorn(&h, &y, &m, SinkhornConfig::new(100.0)).unwrap();
        assert!((out.transport_cost - exact).abs() < 1e-2, "{} vs {exact}", out.transport_cost);
    }

    #[test]
    fn gradient_is_zero_for_identical_marginals() {
        // Uniform, so the entropy term has no slope along the simplex either.
        let m = GroundMetric::line(6, 1.0).unwrap().rescaled();
        let h = DiscreteMeasure::uniform(6).unwrap();
        let out = sinkhorn_normalized(&h, &h, &m, SinkhornConfig::new(50.0)).unwrap();
        let g = sinkhorn_gradient(&out.state).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-6), "{g}");
        assert!(g.sum().abs() < 1e-15);
    }

    #[test]
    fn fixed_mode_runs_exact_iteration_count() {
        let m = GroundMetric::line(4, 1.0).unwrap();
        let (h, y) = (measure(&[0.1, 0.2, 0.3, 0.4]), measure(&[0.4, 0.3, 0.2, 0.1]));
        let out = sinkhorn_normalized(&h, &y, &m, SinkhornConfig::fixed_iterations(5.0, 10)).unwrap();
        assert_eq!(out.state.iters_run, 10);
        let out = sinkhorn_normalized(&h, &y, &m, SinkhornConfig::fixed_iterations(5.0, 1)).unwrap();
        assert_eq!(out.state.iters_run, 1);
    }

    #[test]
    fn rejects_unnormalized_and_bad_config() {
        let m = GroundMetric::line(2, 1.0).unwrap();
        let heavy = DiscreteMeasure::unnormalized(array![1.0, 1.0]).unwrap();
        let h = measure(&[0.5, 0.5]);
        assert!(matches!(
            sinkhorn_normalized(&heavy, &h, &m, SinkhornConfig::new(1.0)),
            Err(Error::NotNormalized { .. })
        ));
        assert!(sinkhorn_normalized(&h, &h, &m, SinkhornConfig::new(-1.0)).is_err());
        assert!(sinkhorn_normalized(&h, &h, &m, SinkhornConfig::new(1.0).with_tol(0.0)).is_err());
    }

    #[test]
    fn direct_domain_reports_underflow_where_log_domain_converges() {
        // λ·C_M = 5000 puts the far corners of the kernel below f64's range
        let m = GroundMetric::line(16, 1.0).unwrap().rescaled();
        let h = DiscreteMeasure::from_weights(Array1::from_shape_fn(16, |i| 1.0 + (i % 3) as f64)).unwrap();
        let y = DiscreteMeasure::from_weights(Array1::from_shape_fn(16, |i| 1.0 + ((i + 1) % 4) as f64)).unwrap();
        let cfg = SinkhornConfig::new(5000.0).with_max_iters(100_000);
        assert!(matches!(sinkhorn_normalized(&h, &y, &m, cfg), Err(Error::KernelUnderflow { .. })));
        let out = log_domain_sinkhorn(&h, &y, &m, cfg).unwrap();
        assert!(out.state.marginal_violation <= 1e-9, "violation {}", out.state.marginal_violation);
        let exact = exact_transport(&h, &y, &m).unwrap().cost;
        assert!((out.transport_cost - exact).abs() < 1e-3);
    }

    #[test]
    fn log_domain_matches_identical_inputs() {
        let m = GroundMetric::line(5, 1.0).unwrap().rescaled();
        let h = measure(&[0.3, 0.1, 0.2, 0.25, 0.15]);
        let cfg = SinkhornConfig::new(50.0);
        let a = sinkhorn_normalized(&h, &h, &m, cfg).unwrap();
        let b = log_domain_sinkhorn(&h, &h, &m, cfg).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-9);
    }
}
