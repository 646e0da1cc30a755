//! Relaxed transport between unnormalized measures.
//!
//! The marginal constraints of entropic transport are replaced by
//! generalized KL penalties:
//!
//! ```text
//! min_{T >= 0} ⟨T, M⟩ - H(T)/λ + γ_a gKL(T1 ‖ h) + γ_b gKL(Tᵀ1 ‖ y)
//! ```
//!
//! The minimizer is again a diagonal scaling `diag(u) K diag(v)` of
//! `K = exp(-λM - 1)`, and `(u, v)` is a fixed point of
//!
//! ```text
//! u = h^a ⊙ (K v)^(-a),   v = y^b ⊙ (Kᵀ u)^(-b)
//! a = γ_a λ / (γ_a λ + 1),   b = γ_b λ / (γ_b λ + 1)
//! ```
//!
//! Each sweep applies both updates and then rescales `(u, v)` to
//! `(u e^s, v e^-s)` with the dual-optimal `s`. The plan does not see that
//! rescaling, but without it the sweeps creep along it at a rate of `a·b`
//! per step.
//!
//! The iteration is not known to converge in general, so the solver watches
//! its residual and reports [`Error::Diverged`] when it rises for
//! `stall_window` sweeps in a row.
//! Everything runs on `log u` and `log v` with log-sum-exp reductions.

use ndarray::{Array1, Array2, ArrayView1, Zip};

use crate::error::{Error, Result};
use crate::measure::{clamp_floor, DiscreteMeasure, GroundMetric, TransportPlan};
use crate::sinkhorn::{logsumexp, IterationMode};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxedConfig {
    pub lambda: f64,
    /// Weight of the penalty on the prediction marginal `T1`.
    pub gamma_a: f64,
    /// Weight of the penalty on the label marginal `Tᵀ1`.
    pub gamma_b: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub min_mass: f64,
    pub mode: IterationMode,
    /// Consecutive sweeps without a drop in the residual before giving up.
    pub stall_window: usize,
}

impl RelaxedConfig {
    pub fn new(lambda: f64, gamma_a: f64, gamma_b: f64) -> Self {
        Self {
            lambda,
            gamma_a,
            gamma_b,
            max_iters: 100_000,
            tol: 1e-9,
            min_mass: 1e-16,
            mode: IterationMode::UntilConverged,
            stall_window: 50,
        }
    }

    pub fn fixed_iterations(lambda: f64, gamma_a: f64, gamma_b: f64, iters: usize) -> Self {
        Self { max_iters: iters, mode: IterationMode::Fixed, ..Self::new(lambda, gamma_a, gamma_b) }
    }

    pub fn with_tol(self, tol: f64) -> Self {
        Self { tol, ..self }
    }

    pub fn with_max_iters(self, max_iters: usize) -> Self {
        Self { max_iters, ..self }
    }

    /// `γ_a λ / (γ_a λ + 1)`.
    pub fn exponent_a(&self) -> f64 {
        let g = self.gamma_a * self.lambda;
        g / (g + 1.0)
    }

    /// `γ_b λ / (γ_b λ + 1)`.
    pub fn exponent_b(&self) -> f64 {
        let g = self.gamma_b * self.lambda;
        g / (g + 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("lambda", self.lambda),
            ("gamma_a", self.gamma_a),
            ("gamma_b", self.gamma_b),
            ("tol", self.tol),
            ("min_mass", self.min_mass),
        ];
        for (name, value) in named {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive and finite, got {value}")));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if self.stall_window == 0 {
            return Err(Error::InvalidConfig("stall_window must be at least 1".into()));
        }
        Ok(())
    }
}

/// `gKL(w ‖ z) = wᵀ log(w ⊘ z) - 1ᵀw + 1ᵀz`, with `0 log 0 = 0`.
pub fn generalized_kl(w: ArrayView1<'_, f64>, z: ArrayView1<'_, f64>) -> Result<f64> {
    if w.len() != z.len() {
        return Err(Error::DimensionMismatch { expected: w.len(), found: z.len() });
    }
    let mut total = 0.0;
    for (index, (&wi, &zi)) in w.iter().zip(z.iter()).enumerate() {
        if !(zi > 0.0) {
            return Err(Error::NonPositiveScaling { index });
        }
        if wi < 0.0 {
            return Err(Error::InvalidMeasure(format!("entry {index} = {wi} is negative")));
        }
        if wi > 0.0 {
            total += wi * (wi / zi).ln();
        }
        total += zi - wi;
    }
    Ok(total)
}

#[derive(Debug, Clone)]
pub struct RelaxedSolution {
    pub plan: TransportPlan,
    pub log_u: Array1<f64>,
    pub log_v: Array1<f64>,
    /// Value of the relaxed objective at `plan`.
    pub objective: f64,
    pub transport_cost: f64,
    pub entropy: f64,
    /// `gKL(T1 ‖ h)`, unweighted.
    pub kl_a: f64,
    /// `gKL(Tᵀ1 ‖ y)`, unweighted.
    pub kl_b: f64,
    pub iters_run: usize,
    /// Relative ℓ1 change of the scalings in the last sweep.
    pub residual: f64,
    pub min_mass: f64,
}

impl RelaxedSolution {
    pub fn u(&self) -> Array1<f64> {
        self.log_u.mapv(f64::exp)
    }

    pub fn v(&self) -> Array1<f64> {
        self.log_v.mapv(f64::exp)
    }
}

/// Relaxed-transport solver bound to one ground metric.
#[derive(Debug, Clone)]
pub struct RelaxedSolver {
    metric: GroundMetric,
    config: RelaxedConfig,
    log_kernel: Array2<f64>,
}

impl RelaxedSolver {
    pub fn new(metric: GroundMetric, config: RelaxedConfig) -> Result<Self> {
        config.validate()?;
        let log_kernel = metric.costs().mapv(|m| -config.lambda * m - 1.0);
        Ok(Self { metric, config, log_kernel })
    }

    pub fn config(&self) -> &RelaxedConfig {
        &self.config
    }

    pub fn metric(&self) -> &GroundMetric {
        &self.metric
    }

    fn prepare(&self, m: &DiscreteMeasure) -> Result<Array1<f64>> {
        self.metric.check_size(m.len())?;
        if !(m.mass() > 0.0) {
            return Err(Error::ZeroMass);
        }
        Ok(clamp_floor(m.values(), self.config.min_mass, false))
    }

    /// `log(Kᵀu)` given `log u`.
    fn log_kt(&self, log_u: &Array1<f64>) -> Array1<f64> {
        Array1::from_shape_fn(log_u.len(), |j| logsumexp(self.log_kernel.column(j), log_u.view()))
    }

    /// `log(Kv)` given `log v`.
    fn log_k(&self, log_v: &Array1<f64>) -> Array1<f64> {
        Array1::from_shape_fn(log_v.len(), |i| logsumexp(self.log_kernel.row(i), log_v.view()))
    }

    pub fn solve(&self, h: &DiscreteMeasure, y: &DiscreteMeasure) -> Result<RelaxedSolution> {
        let (h, y) = (self.prepare(h)?, self.prepare(y)?);
        let (log_h, log_y) = (h.mapv(f64::ln), y.mapv(f64::ln));
        let cfg = &self.config;
        let (a, b) = (cfg.exponent_a(), cfg.exponent_b());

        let mut log_u = Array1::<f64>::zeros(h.len());
        let mut prev_log_v: Option<Array1<f64>> = None;
        let mut residual = f64::INFINITY;
        let mut rising = 0;
        let mut iters = 0;
        while iters < cfg.max_iters {
            let log_v = b * (&log_y - &self.log_kt(&log_u));
            let mut next_u = a * (&log_h - &self.log_k(&log_v));
            // (u e^s, v e^-s) leaves the plan unchanged, and plain sweeps
            // shrink an error along that direction only by a·b, which is
            // close to 1 for stiff penalties. Take the exact dual-optimal
            // shift instead: with f = log u / λ and g = log v / λ it maximizes
            // -γ_a <h, e^(-f/γ_a)> - γ_b <y, e^(-g/γ_b)> in closed form.
            let log_a = logsumexp(log_h.view(), (&next_u * (-1.0 / (cfg.lambda * cfg.gamma_a))).view());
            let log_b = logsumexp(log_y.view(), (&log_v * (-1.0 / (cfg.lambda * cfg.gamma_b))).view());
            let shift = cfg.lambda * cfg.gamma_a * cfg.gamma_b / (cfg.gamma_a + cfg.gamma_b) * (log_a - log_b);
            next_u += shift;
            let log_v = log_v - shift;
            let du = relative_l1_change(&log_u, &next_u);
            let dv = prev_log_v.as_ref().map_or(f64::INFINITY, |p| relative_l1_change(p, &log_v));
            let previous = residual;
            residual = du.max(dv);
            log_u = next_u;
            prev_log_v = Some(log_v);
            iters += 1;
            if !residual.is_nan() && cfg.mode == IterationMode::UntilConverged {
                if residual <= cfg.tol {
                    break;
                }
                // diverged: the residual has not dropped once in a whole window
                if residual < previous {
                    rising = 0;
                } else {
                    rising += 1;
                    if rising >= cfg.stall_window {
                        return Err(Error::Diverged { iters, residual });
                    }
                }
            }
            if log_u.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("log u after {iters} iterations")));
            }
        }
        let log_v = b * (&log_y - &self.log_kt(&log_u));
        self.assemble(log_u, log_v, &h, &y, iters, residual)
    }

    fn assemble(
        &self,
        log_u: Array1<f64>,
        log_v: Array1<f64>,
        h: &Array1<f64>,
        y: &Array1<f64>,
        iters: usize,
        residual: f64,
    ) -> Result<RelaxedSolution> {
        let n = log_u.len();
        let mut plan = Array2::<f64>::zeros((n, n));
        let mut neg_entropy = 0.0;
        Zip::indexed(&mut plan).and(&self.log_kernel).for_each(|(i, j), t, &lk| {
            let log_t = log_u[i] + lk + log_v[j];
            *t = log_t.exp();
            if *t >= 1e-300 {
                neg_entropy += *t * log_t;
            }
        });
        let plan = TransportPlan::new(plan)?;
        let transport_cost = plan.cost(&self.metric);
        let kl_a = generalized_kl(plan.row_marginal(), h.view())?;
        let kl_b = generalized_kl(plan.col_marginal(), y.view())?;
        let cfg = &self.config;
        let objective = transport_cost + neg_entropy / cfg.lambda + cfg.gamma_a * kl_a + cfg.gamma_b * kl_b;
        Ok(RelaxedSolution {
            plan,
            log_u,
            log_v,
            objective,
            transport_cost,
            entropy: -neg_entropy,
            kl_a,
            kl_b,
            iters_run: iters,
            residual,
            min_mass: cfg.min_mass,
        })
    }

    /// Relative ℓ1 residuals of the two fixed-point equations at the
    /// returned scalings: `(‖u - h^a (Kv)^-a‖₁ / ‖u‖₁, ‖v - y^b (Kᵀu)^-b‖₁ / ‖v‖₁)`.
    pub fn fixed_point_residuals(
        &self,
        solution: &RelaxedSolution,
        h: &DiscreteMeasure,
        y: &DiscreteMeasure,
    ) -> Result<(f64, f64)> {
        let (h, y) = (self.prepare(h)?, self.prepare(y)?);
        let (a, b) = (self.config.exponent_a(), self.config.exponent_b());
        let u_eq = a * (&h.mapv(f64::ln) - &self.log_k(&solution.log_v));
        let v_eq = b * (&y.mapv(f64::ln) - &self.log_kt(&solution.log_u));
        Ok((relative_l1_change(&u_eq, &solution.log_u), relative_l1_change(&v_eq, &solution.log_v)))
    }
}

/// `‖e^x - e^y‖₁ / ‖e^y‖₁` computed without overflow.
fn relative_l1_change(log_old: &Array1<f64>, log_new: &Array1<f64>) -> f64 {
    let shift = log_new.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut diff = 0.0;
    let mut norm = 0.0;
    for (&o, &n) in log_old.iter().zip(log_new.iter()) {
        let en = (n - shift).exp();
        // capped so a wild early sweep reads as large rather than infinite
        diff += ((o - shift).min(700.0).exp() - en).abs();
        norm += en;
    }
    diff / norm
}

pub fn relaxed_transport(
    h: &DiscreteMeasure,
    y: &DiscreteMeasure,
    metric: &GroundMetric,
    cfg: RelaxedConfig,
) -> Result<RelaxedSolution> {
    RelaxedSolver::new(metric.clone(), cfg)?.solve(h, y)
}

/// `γ_a (1 - T1 ⊘ h)`, the gradient of the relaxed loss in `h`.
///
/// `h` is clamped to the solution's `min_mass`, as it was during the solve.
pub fn relaxed_gradient(solution: &RelaxedSolution, h: &DiscreteMeasure, gamma_a: f64) -> Result<Array1<f64>> {
    let row = solution.plan.row_marginal();
    if h.len() != row.len() {
        return Err(Error::DimensionMismatch { expected: row.len(), found: h.len() });
    }
    let h = clamp_floor(h.values(), solution.min_mass, false);
    if let Some(index) = h.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::NonPositiveScaling { index });
    }
    Ok(Array1::from_shape_fn(h.len(), |i| gamma_a * (1.0 - row[i] / h[i])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sinkhorn::{log_domain_sinkhorn, SinkhornConfig};
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn gkl_hand_values() {
        let w = array![2.0];
        let z = array![1.0];
        assert!((generalized_kl(w.view(), z.view()).unwrap() - (2.0 * 2f64.ln() - 1.0)).abs() < 1e-15);
        assert!((generalized_kl(w.view(), z.view()).unwrap() - 0.386294361119890).abs() < 1e-12);
        let w = array![0.0, 1.0];
        let z = array![1.0, 1.0];
        assert_eq!(generalized_kl(w.view(), z.view()).unwrap(), 1.0);
        let z = array![0.0, 1.0];
        assert!(matches!(generalized_kl(w.view(), z.view()), Err(Error::NonPositiveScaling { index: 0 })));
    }

    proptest! {
        #[test]
        fn gkl_is_a_divergence(
            z in prop::collection::vec(1e-3..10.0f64, 1..10),
            scale in prop::collection::vec(0.0..3.0f64, 10),
        ) {
            let z = Array1::from(z);
            prop_assert!(generalized_kl(z.view(), z.view()).unwrap().abs() < 1e-12);
            let w = Array1::from_shape_fn(z.len(), |i| z[i] * scale[i]);
            prop_assert!(generalized_kl(w.view(), z.view()).unwrap() >= -1e-12);
        }
    }

    #[test]
    fn large_penalties_recover_smoothed_transport() {
        let m = GroundMetric::line(6, 1.0).unwrap().rescaled();
        let h = DiscreteMeasure::normalized(array![0.1, 0.3, 0.05, 0.25, 0.2, 0.1]).unwrap();
        let y = DiscreteMeasure::normalized(array![0.3, 0.05, 0.2, 0.1, 0.15, 0.2]).unwrap();
        let smoothed = log_domain_sinkhorn(&h, &y, &m, SinkhornConfig::new(50.0)).unwrap();
        let relaxed = relaxed_transport(&h, &y, &m, RelaxedConfig::new(50.0, 1e4, 1e4)).unwrap();
        let rel = (relaxed.objective - smoothed.loss).abs() / smoothed.loss.abs();
        assert!(rel < 0.01, "relative gap {rel}");
    }

    #[test]
    fn mass_mismatch_is_absorbed_softly() {
        let m = GroundMetric::line(4, 1.0).unwrap().rescaled();
        let y = DiscreteMeasure::normalized(array![0.1, 0.4, 0.3, 0.2]).unwrap();
        let h = DiscreteMeasure::unnormalized(&y.values() * 2.0).unwrap();
        let sol = relaxed_transport(&h, &y, &m, RelaxedConfig::new(10.0, 1.0, 1.0)).unwrap();
        let mass = sol.plan.mass();
        assert!(mass > 1.0 && mass < 2.0, "plan mass {mass}");
        assert!(sol.objective.is_finite());
    }

    #[test]
    fn plan_factors_and_fixed_point_holds() {
        let m = GroundMetric::line(5, 1.0).unwrap().rescaled();
        let h = DiscreteMeasure::unnormalized(array![0.3, 0.5, 0.1, 0.6, 0.2]).unwrap();
        let y = DiscreteMeasure::unnormalized(array![0.4, 0.1, 0.3, 0.2, 0.5]).unwrap();
        let solver = RelaxedSolver::new(m.clone(), RelaxedConfig::new(20.0, 2.0, 0.5)).unwrap();
        let sol = solver.solve(&h, &y).unwrap();
        let k = crate::sinkhorn::build_kernel(&m, 20.0);
        let (u, v) = (sol.u(), sol.v());
        for ((i, j), &t) in sol.plan.matrix().indexed_iter() {
            let expected = u[i] * k[[i, j]] * v[j];
            assert!((t - expected).abs() <= 1e-12 * expected);
        }
        let (ru, rv) = solver.fixed_point_residuals(&sol, &h, &y).unwrap();
        assert!(ru <= 1e-9 && rv <= 1e-12, "{ru} {rv}");
    }

    #[test]
    fn gradient_sign_and_zero() {
        let m = GroundMetric::zero_one(2).unwrap();
        let h = DiscreteMeasure::unnormalized(array![1.0, 1.0]).unwrap();
        let sol = relaxed_transport(&h, &h, &m, RelaxedConfig::new(5.0, 1.0, 1.0)).unwrap();
        let g = relaxed_gradient(&sol, &h, 1.0).unwrap();
        let row = sol.plan.row_marginal();
        for i in 0..2 {
            // positive exactly where the prediction carries surplus mass
            assert_eq!(g[i] > 0.0, row[i] < h.get(i));
        }
        let mut fake = sol.clone();
        fake.plan = TransportPlan::new(Array2::from_diag(&h.values())).unwrap();
        assert_eq!(relaxed_gradient(&fake, &h, 3.0).unwrap(), array![0.0, 0.0]);
    }

    #[test]
    fn zero_mass_is_rejected() {
        let m = GroundMetric::zero_one(2).unwrap();
        let zero = DiscreteMeasure::unnormalized(array![0.0, 0.0]).unwrap();
        let one = DiscreteMeasure::unnormalized(array![1.0, 0.0]).unwrap();
        assert!(matches!(relaxed_transport(&zero, &one, &m, RelaxedConfig::new(1.0, 1.0, 1.0)), Err(Error::ZeroMass)));
        assert!(relaxed_transport(&one, &one, &m, RelaxedConfig::new(1.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn fixed_mode_runs_requested_sweeps() {
        let m = GroundMetric::line(3, 1.0).unwrap();
        let h = DiscreteMeasure::unnormalized(array![0.2, 0.5, 0.3]).unwrap();
        let sol = relaxed_transport(&h, &h, &m, RelaxedConfig::fixed_iterations(10.0, 1.0, 1.0, 10)).unwrap();
        assert_eq!(sol.iters_run, 10);
    }
}
