//! Ground metrics, discrete measures and transport plans.
//!
//! Everything here is immutable once built. Constructors validate their
//! invariants, so a `GroundMetric` or a normalized `DiscreteMeasure` in hand
//! is always well formed.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Tolerance on the total mass of a normalized measure.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Relative tolerance on `costs[i][j] == costs[j][i]`.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Rescaling divides by `(1 + RESCALE_MARGIN) * max_cost`, which maps every
/// entry into `[0, 1)`.
pub const RESCALE_MARGIN: f64 = 1e-6;

/// A symmetric, nonnegative cost matrix with zero diagonal.
///
/// Entries hold `d(i, j)^p` for some base distance `d`; `power` records `p`
/// for bookkeeping only.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundMetric {
    costs: Array2<f64>,
    power: f64,
    max_cost: f64,
}

impl GroundMetric {
    /// Validates and wraps a cost matrix.
    pub fn new(costs: Array2<f64>, power: f64) -> Result<Self> {
        let (rows, cols) = costs.dim();
        if rows == 0 {
            return Err(Error::EmptyInput);
        }
        if rows != cols {
            return Err(Error::InvalidMetric(format!("matrix is {rows}x{cols}, not square")));
        }
        if !(power.is_finite() && power >= 0.0) {
            return Err(Error::InvalidMetric(format!("power {power} must be finite and >= 0")));
        }
        let mut max_cost = 0.0_f64;
        for ((i, j), &c) in costs.indexed_iter() {
            if !c.is_finite() || c < 0.0 {
                return Err(Error::InvalidMetric(format!("entry ({i},{j}) = {c} is not a finite nonnegative number")));
            }
            max_cost = max_cost.max(c);
        }
        let scale = max_cost.max(1.0);
        for i in 0..rows {
            if costs[[i, i]] != 0.0 {
                return Err(Error::InvalidMetric(format!("diagonal entry {i} is {}", costs[[i, i]])));
            }
            for j in (i + 1)..rows {
                if (costs[[i, j]] - costs[[j, i]]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::InvalidMetric(format!("entries ({i},{j}) and ({j},{i}) differ")));
                }
            }
        }
        Ok(Self { costs, power, max_cost })
    }

    /// `|i - j|^p` on the points `0..k`. `p = 0` gives the 0-1 metric.
    pub fn line(k: usize, p: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::EmptyInput);
        }
        if p == 0.0 {
            return Self::zero_one(k).map(|m| Self { power: 0.0, ..m });
        }
        let costs = Array2::from_shape_fn((k, k), |(i, j)| (i as f64 - j as f64).abs().powf(p));
        Self::new(costs, p)
    }

    /// `1 - δ_ij`: every mistake costs the same.
    pub fn zero_one(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::EmptyInput);
        }
        let costs = Array2::from_shape_fn((k, k), |(i, j)| if i == j { 0.0 } else { 1.0 });
        Self::new(costs, 0.0)
    }

    /// `‖a - b‖₂^p` between points in the plane.
    pub fn euclidean(points: &[[f64; 2]], p: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput);
        }
        let k = points.len();
        let costs = Array2::from_shape_fn((k, k), |(i, j)| {
            if i == j {
                return 0.0;
            }
            let dx = points[i][0] - points[j][0];
            let dy = points[i][1] - points[j][1];
            let d = dx.hypot(dy);
            if p == 1.0 {
                d
            } else {
                d.powf(p)
            }
        });
        Self::new(costs, p)
    }

    /// Divides every entry by `(1 + RESCALE_MARGIN) * max_cost` so the
    /// result lies in `[0, 1)`. An all-zero metric is returned unchanged.
    pub fn rescaled(&self) -> Self {
        if self.max_cost == 0.0 {
            return self.clone();
        }
        let factor = (1.0 + RESCALE_MARGIN) * self.max_cost;
        let costs = self.costs.mapv(|c| c / factor);
        let max_cost = costs.iter().copied().fold(0.0, f64::max);
        Self { costs, power: self.power, max_cost }
    }

    pub fn size(&self) -> usize {
        self.costs.nrows()
    }

    pub fn costs(&self) -> ArrayView2<'_, f64> {
        self.costs.view()
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    /// `C_M`, the largest entry. Every normalized transport cost lies in
    /// `[0, C_M]`.
    pub fn max_cost(&self) -> f64 {
        self.max_cost
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.costs[[i, j]]
    }

    pub(crate) fn check_size(&self, k: usize) -> Result<()> {
        if k != self.size() {
            return Err(Error::DimensionMismatch { expected: self.size(), found: k });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureKind {
    /// Lies on the probability simplex.
    Normalized,
    Unnormalized,
}

/// A nonnegative vector over `K` labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    values: Array1<f64>,
    kind: MeasureKind,
}

impl DiscreteMeasure {
    /// A probability vector. Fails unless the entries sum to one within
    /// [`NORMALIZATION_TOL`].
    pub fn normalized(values: impl Into<Array1<f64>>) -> Result<Self> {
        let values = values.into();
        check_nonnegative(&values)?;
        let mass = values.sum();
        if (mass - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::NotNormalized { mass });
        }
        Ok(Self { values, kind: MeasureKind::Normalized })
    }

    /// Any nonnegative vector, including the zero vector.
    pub fn unnormalized(values: impl Into<Array1<f64>>) -> Result<Self> {
        let values = values.into();
        check_nonnegative(&values)?;
        Ok(Self { values, kind: MeasureKind::Unnormalized })
    }

    /// Divides a nonnegative vector by its total mass.
    pub fn from_weights(values: impl Into<Array1<f64>>) -> Result<Self> {
        let values = values.into();
        check_nonnegative(&values)?;
        let mass = values.sum();
        if mass <= 0.0 {
            return Err(Error::ZeroMass);
        }
        Ok(Self { values: values / mass, kind: MeasureKind::Normalized })
    }

    pub fn one_hot(k: usize, index: usize) -> Result<Self> {
        if index >= k {
            return Err(Error::IndexOutOfRange { index, len: k });
        }
        let mut values = Array1::zeros(k);
        values[index] = 1.0;
        Ok(Self { values, kind: MeasureKind::Normalized })
    }

    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::EmptyInput);
        }
        Ok(Self { values: Array1::from_elem(k, 1.0 / k as f64), kind: MeasureKind::Normalized })
    }

    /// Returns the normalized version of this measure.
    pub fn normalize(&self) -> Result<Self> {
        match self.kind {
            MeasureKind::Normalized => Ok(self.clone()),
            MeasureKind::Unnormalized => Self::from_weights(self.values.clone()),
        }
    }

    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.values.view()
    }

    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    pub fn is_normalized(&self) -> bool {
        self.kind == MeasureKind::Normalized
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.values.sum()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// Indices with positive mass, in increasing order.
    pub fn support(&self) -> Vec<usize> {
        self.values.iter().enumerate().filter(|(_, &v)| v > 0.0).map(|(i, _)| i).collect()
    }
}

fn check_nonnegative(values: &Array1<f64>) -> Result<()> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidMeasure(format!("entry {i} = {v} is not a finite nonnegative number")));
        }
    }
    Ok(())
}

/// Raises every entry to at least `floor`. With `renormalize`, the result is
/// divided by its total mass again.
pub(crate) fn clamp_floor(values: ArrayView1<'_, f64>, floor: f64, renormalize: bool) -> Array1<f64> {
    let clamped = values.mapv(|v| v.max(floor));
    if renormalize {
        let mass = clamped.sum();
        clamped / mass
    } else {
        clamped
    }
}

/// A nonnegative coupling matrix together with its two marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    matrix: Array2<f64>,
    row_marginal: Array1<f64>,
    col_marginal: Array1<f64>,
}

impl TransportPlan {
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        if matrix.iter().any(|&t| !t.is_finite() || t < 0.0) {
            return Err(Error::InvalidMeasure("transport plan has a negative or non-finite entry".into()));
        }
        let row_marginal = matrix.sum_axis(Axis(1));
        let col_marginal = matrix.sum_axis(Axis(0));
        Ok(Self { matrix, row_marginal, col_marginal })
    }

    /// The identity coupling `diag(mu)`.
    pub fn diagonal(mu: &DiscreteMeasure) -> Self {
        let matrix = Array2::from_diag(&mu.values());
        Self::new(matrix).expect("measure entries are nonnegative")
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.matrix.view()
    }

    /// `T·1`.
    pub fn row_marginal(&self) -> ArrayView1<'_, f64> {
        self.row_marginal.view()
    }

    /// `Tᵀ·1`.
    pub fn col_marginal(&self) -> ArrayView1<'_, f64> {
        self.col_marginal.view()
    }

    pub fn mass(&self) -> f64 {
        self.row_marginal.sum()
    }

    /// `⟨T, M⟩`.
    pub fn cost(&self, metric: &GroundMetric) -> f64 {
        (&self.matrix * &metric.costs()).sum()
    }

    /// `H(T) = -Σ T log T` with `0 log 0 = 0`.
    pub fn entropy(&self) -> f64 {
        -self.matrix.iter().map(|&t| if t > 0.0 { t * t.ln() } else { 0.0 }).sum::<f64>()
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.matrix
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn line_metric_small_cases() {
        let m = GroundMetric::line(3, 1.0).unwrap();
        assert_eq!(m.costs(), array![[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0]]);
        assert_eq!(m.max_cost(), 2.0);
        let m = GroundMetric::line(2, 2.0).unwrap();
        assert_eq!(m.costs(), array![[0.0, 1.0], [1.0, 0.0]]);
        assert!(matches!(GroundMetric::line(0, 1.0), Err(Error::EmptyInput)));
    }

    #[test]
    fn line_metric_power_zero_is_zero_one() {
        for k in 1..6 {
            let a = GroundMetric::line(k, 0.0).unwrap();
            let b = GroundMetric::zero_one(k).unwrap();
            assert_eq!(a.costs(), b.costs());
        }
    }

    #[test]
    fn zero_one_metric() {
        assert_eq!(GroundMetric::zero_one(1).unwrap().costs(), array![[0.0]]);
        assert_eq!(GroundMetric::zero_one(2).unwrap().costs(), array![[0.0, 1.0], [1.0, 0.0]]);
        let m = GroundMetric::zero_one(3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.get(i, j), if i == j { 0.0 } else { 1.0 });
            }
        }
        assert!(GroundMetric::zero_one(0).is_err());
    }

    #[test]
    fn rescaled_high_power_line_metric() {
        let m = GroundMetric::line(10, 13.0).unwrap();
        let r = m.rescaled();
        assert!(r.costs().iter().all(|&c| (0.0..1.0).contains(&c)));
        assert!(r.max_cost() < 1.0);
        // ratios survive up to rounding
        let ratio_before = m.get(0, 8) / m.get(0, 9);
        let ratio_after = r.get(0, 8) / r.get(0, 9);
        assert!((ratio_before - ratio_after).abs() <= 1e-15 * ratio_before);
    }

    #[test]
    fn euclidean_square_and_lattice() {
        let square = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let m = GroundMetric::euclidean(&square, 1.0).unwrap();
        assert_eq!(m.get(0, 1), 1.0);
        assert_eq!(m.get(1, 2), 1.0);
        assert_eq!(m.get(0, 2), 2f64.sqrt());
        assert_eq!(m.get(1, 3), 2f64.sqrt());
        assert_eq!(GroundMetric::euclidean(&[[3.0, 4.0]], 1.0).unwrap().costs(), array![[0.0]]);
        assert!(GroundMetric::euclidean(&[], 1.0).is_err());

        let lattice: Vec<[f64; 2]> = (0..9).map(|i| [(i % 3) as f64, (i / 3) as f64]).collect();
        let m = GroundMetric::euclidean(&lattice, 1.0).unwrap();
        assert_eq!(m.get(0, 1), 1.0);
        assert_eq!(m.get(0, 3), 1.0);
        assert_eq!(m.get(4, 5), 1.0);
        assert_eq!(m.get(0, 8), 8f64.sqrt());
    }

    #[test]
    fn metric_validation_rejects_bad_matrices() {
        assert!(GroundMetric::new(array![[0.0, 1.0], [2.0, 0.0]], 1.0).is_err());
        assert!(GroundMetric::new(array![[1.0, 1.0], [1.0, 0.0]], 1.0).is_err());
        assert!(GroundMetric::new(array![[0.0, -1.0], [-1.0, 0.0]], 1.0).is_err());
        assert!(GroundMetric::new(Array2::zeros((2, 3)), 1.0).is_err());
        assert!(GroundMetric::new(array![[0.0, f64::NAN], [f64::NAN, 0.0]], 1.0).is_err());
    }

    #[test]
    fn one_hot_measures() {
        let e = DiscreteMeasure::one_hot(3, 1).unwrap();
        assert_eq!(e.values(), array![0.0, 1.0, 0.0]);
        assert!(e.is_normalized());
        assert_eq!(DiscreteMeasure::one_hot(1, 0).unwrap().values(), array![1.0]);
        assert!(matches!(DiscreteMeasure::one_hot(3, 3), Err(Error::IndexOutOfRange { index: 3, len: 3 })));
    }

    #[test]
    fn measure_validation() {
        assert!(DiscreteMeasure::normalized(array![0.5, 0.6]).is_err());
        assert!(DiscreteMeasure::normalized(array![1.5, -0.5]).is_err());
        assert!(DiscreteMeasure::normalized(array![0.25, 0.75]).is_ok());
        let zero = DiscreteMeasure::unnormalized(array![0.0, 0.0]).unwrap();
        assert_eq!(zero.mass(), 0.0);
        assert!(matches!(zero.normalize(), Err(Error::ZeroMass)));
        let w = DiscreteMeasure::from_weights(array![1.0, 3.0]).unwrap();
        assert_eq!(w.values(), array![0.25, 0.75]);
    }

    #[test]
    fn plan_marginals_and_cost() {
        let plan = TransportPlan::new(array![[0.2, 0.1], [0.0, 0.7]]).unwrap();
        assert_eq!(plan.row_marginal(), array![0.30000000000000004, 0.7]);
        assert_eq!(plan.col_marginal(), array![0.2, 0.7999999999999999]);
        let m = GroundMetric::zero_one(2).unwrap();
        assert_eq!(plan.cost(&m), 0.1);
        assert!(TransportPlan::new(array![[-0.1]]).is_err());
    }

    fn points_strategy() -> impl Strategy<Value = Vec<[f64; 2]>> {
        prop::collection::vec(prop::array::uniform2(-10.0..10.0f64), 1..12)
    }

    proptest! {
        #[test]
        fn euclidean_metrics_validate(points in points_strategy(), p in 0.5..3.0f64) {
            let m = GroundMetric::euclidean(&points, p).unwrap();
            // re-validating the raw matrix must succeed
            prop_assert!(GroundMetric::new(m.costs().to_owned(), p).is_ok());
            let max = m.costs().iter().copied().fold(0.0, f64::max);
            prop_assert_eq!(max, m.max_cost());
        }

        #[test]
        fn rescaling_preserves_order(points in points_strategy()) {
            let m = GroundMetric::euclidean(&points, 1.0).unwrap();
            let r = m.rescaled();
            prop_assert!(r.costs().iter().all(|&c| (0.0..1.0).contains(&c)));
            let k = m.size();
            for a in 0..k * k {
                for b in 0..k * k {
                    let (x, y) = (m.costs()[[a / k, a % k]], m.costs()[[b / k, b % k]]);
                    let (rx, ry) = (r.costs()[[a / k, a % k]], r.costs()[[b / k, b % k]]);
                    if x < y {
                        prop_assert!(rx <= ry);
                    }
                }
            }
        }

        #[test]
        fn one_hot_sums_to_one(k in 1usize..50, seed in 0usize..1000) {
            let e = DiscreteMeasure::one_hot(k, seed % k).unwrap();
            prop_assert_eq!(e.mass(), 1.0);
        }
    }
}
