//! Per-period control-adjusted portfolio means and the time-averaged
//! step-function estimator.
//!
//! Each period is fit by regressing returns on the portfolio dummies plus the
//! control columns. The dummy block is projected out analytically: controls
//! and returns are demeaned within each cell by their (weighted) cell means,
//! the control coefficients solve the demeaned normal equations, and the cell
//! values are the (weighted) cell means of the control-adjusted returns. This
//! reproduces the joint least-squares solution exactly while staying
//! O(n * d_x^2) per period.
//!
//! Empty cells carry `None` rather than 0 so no silent bias is possible:
//! any evaluation touching them errors loudly.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::panel::{Panel, PanelPeriod};
use crate::portfolio::{partition_matrix, Partition};

/// Eigenvalue cutoff below which the control cross-product matrix is
/// declared singular, relative to the larger of the largest eigenvalue and
/// the raw weighted column scale. The second reference matters: a control
/// column annihilated by the cell-mean projection leaves rounding dust, not
/// an exact zero, and must still register as singular. Deterministic,
/// scale-aware stand-in for the invertibility event tracked by the nonempty
/// indicators.
const SINGULARITY_RTOL: f64 = 1e-10;

/// How assets are weighted within portfolios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Equal,
    /// Weighted within-cell means and weighted control projection, using the
    /// period's weight column normalized within each cell.
    ByWeightColumn,
}

/// Number of portfolios per period.
#[derive(Debug, Clone)]
pub enum JSpec {
    Fixed(usize),
    PerPeriod(Vec<usize>),
}

/// One period's fit.
#[derive(Debug, Clone)]
pub struct PeriodFit {
    pub t: i64,
    pub partition: Partition,
    /// Control-adjusted (weighted) mean return per cell; `None` for cells
    /// that are empty or carry zero total weight, and for every cell when the
    /// fit failed.
    pub cell_values: Vec<Option<f64>>,
    /// Control coefficients; empty when `d_x = 0` or the fit failed.
    pub beta_hat: DVector<f64>,
    /// `R_it - cell_value(cell of i) - x_it' beta_hat`; empty when the fit
    /// failed. Entries in non-estimable cells are 0 and carry zero weight.
    pub residuals: DVector<f64>,
    /// Per-observation weight normalized to sum to one within its cell.
    pub normalized_weights: DVector<f64>,
    /// False when the control cross-product matrix was numerically singular.
    pub ok: bool,
}

impl PeriodFit {
    /// Within-cell weighted residual variance for the cell containing `z`.
    pub fn cell_residual_variance(&self, z: &[f64]) -> Result<f64> {
        let cell = self.require_cell(z)?;
        let mut v = 0.0;
        for (i, &c) in self.partition.cell_of().iter().enumerate() {
            if c == cell {
                v += self.normalized_weights[i] * self.residuals[i] * self.residuals[i];
            }
        }
        Ok(v)
    }

    /// Count of observations in the cell containing `z`.
    pub fn cell_count(&self, z: &[f64]) -> Result<usize> {
        let cell = self.partition.cell_of_point(z)?;
        Ok(self.partition.counts()[cell])
    }

    fn require_cell(&self, z: &[f64]) -> Result<usize> {
        if !self.ok {
            return Err(Error::PeriodFitFailed {
                periods: vec![self.t],
            });
        }
        let cell = self.partition.cell_of_point(z)?;
        if self.cell_values[cell].is_none() {
            return Err(Error::EmptyCellAt {
                point: z.to_vec(),
                periods: vec![self.t],
            });
        }
        Ok(cell)
    }
}

/// The fits for every period of a panel, in panel order.
#[derive(Debug, Clone)]
pub struct FitSeries {
    pub fits: Vec<PeriodFit>,
    pub j_sequence: Vec<usize>,
}

impl FitSeries {
    pub fn t_len(&self) -> usize {
        self.fits.len()
    }

    /// Periods whose fit failed (singular control design).
    pub fn failed_periods(&self) -> Vec<i64> {
        self.fits.iter().filter(|f| !f.ok).map(|f| f.t).collect()
    }
}

/// Fits one period: forms the partition at `j` portfolios per dimension and
/// computes control-adjusted (weighted) cell means, `beta_hat`, and
/// residuals. A numerically singular control design yields `ok = false`
/// rather than an error, mirroring the nonempty-indicator logic.
pub fn fit_period(period: &PanelPeriod, j: usize, weighting: Weighting) -> Result<PeriodFit> {
    let n = period.n();
    let partition = partition_matrix(&period.characteristics, j)?;
    let raw_w = match weighting {
        Weighting::Equal => DVector::from_element(n, 1.0),
        Weighting::ByWeightColumn => period
            .weights
            .clone()
            .ok_or(Error::MissingWeights { period: period.t })?,
    };
    let cells = partition.num_cells();
    let mut cell_weight = vec![0.0f64; cells];
    for (i, &c) in partition.cell_of().iter().enumerate() {
        cell_weight[c] += raw_w[i];
    }
    // A cell is estimable when it has members carrying positive total weight;
    // a populated cell whose members all have zero weight is treated as empty.
    let estimable: Vec<bool> = (0..cells)
        .map(|c| partition.counts()[c] > 0 && cell_weight[c] > 0.0)
        .collect();
    let mut normalized = DVector::zeros(n);
    for (i, &c) in partition.cell_of().iter().enumerate() {
        if estimable[c] {
            normalized[i] = raw_w[i] / cell_weight[c];
        }
    }

    let d_x = period.controls.ncols();
    let beta = if d_x == 0 {
        Some(DVector::zeros(0))
    } else {
        solve_controls(period, &partition, &raw_w, &normalized, &estimable)
    };
    let Some(beta) = beta else {
        return Ok(PeriodFit {
            t: period.t,
            partition,
            cell_values: vec![None; cells],
            beta_hat: DVector::zeros(0),
            residuals: DVector::zeros(0),
            normalized_weights: normalized,
            ok: false,
        });
    };

    let adjusted = if d_x == 0 {
        period.returns.clone()
    } else {
        &period.returns - &period.controls * &beta
    };
    let mut acc = vec![0.0f64; cells];
    for (i, &c) in partition.cell_of().iter().enumerate() {
        acc[c] += normalized[i] * adjusted[i];
    }
    let cell_values: Vec<Option<f64>> = (0..cells)
        .map(|c| estimable[c].then_some(acc[c]))
        .collect();
    let mut residuals = DVector::zeros(n);
    for (i, &c) in partition.cell_of().iter().enumerate() {
        residuals[i] = match cell_values[c] {
            Some(v) => adjusted[i] - v,
            None => 0.0,
        };
    }
    Ok(PeriodFit {
        t: period.t,
        partition,
        cell_values,
        beta_hat: beta,
        residuals,
        normalized_weights: normalized,
        ok: true,
    })
}

/// Solves for the control coefficients after projecting out the cell
/// dummies: demean controls and returns within cells by their weighted
/// means, then solve the weighted normal equations. Returns `None` when the
/// cross-product matrix is singular under the relative eigenvalue test.
fn solve_controls(
    period: &PanelPeriod,
    partition: &Partition,
    raw_w: &DVector<f64>,
    normalized: &DVector<f64>,
    estimable: &[bool],
) -> Option<DVector<f64>> {
    let n = period.n();
    let d_x = period.controls.ncols();
    let cells = partition.num_cells();
    let mut x_mean = vec![0.0f64; cells * d_x];
    let mut r_mean = vec![0.0f64; cells];
    for i in 0..n {
        let c = partition.cell_of()[i];
        if !estimable[c] {
            continue;
        }
        let w = normalized[i];
        r_mean[c] += w * period.returns[i];
        for k in 0..d_x {
            x_mean[c * d_x + k] += w * period.controls[(i, k)];
        }
    }
    let mut gram = DMatrix::zeros(d_x, d_x);
    let mut rhs = DVector::zeros(d_x);
    let mut x_tilde = vec![0.0f64; d_x];
    let mut column_moment = vec![0.0f64; d_x];
    for i in 0..n {
        let c = partition.cell_of()[i];
        if !estimable[c] || raw_w[i] == 0.0 {
            continue;
        }
        let w = raw_w[i];
        let r_tilde = period.returns[i] - r_mean[c];
        for k in 0..d_x {
            let x = period.controls[(i, k)];
            column_moment[k] += w * x * x;
            x_tilde[k] = x - x_mean[c * d_x + k];
        }
        for k in 0..d_x {
            rhs[k] += w * x_tilde[k] * r_tilde;
            for l in 0..=k {
                gram[(k, l)] += w * x_tilde[k] * x_tilde[l];
            }
        }
    }
    for k in 0..d_x {
        for l in 0..k {
            gram[(l, k)] = gram[(k, l)];
        }
    }
    let eig = SymmetricEigen::new(gram);
    let lambda_max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lambda_min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = column_moment.iter().copied().fold(lambda_max, f64::max);
    if scale.is_nan() || scale <= 0.0 || lambda_min < SINGULARITY_RTOL * scale {
        return None;
    }
    let rotated: DVector<f64> = eig.eigenvectors.transpose() * rhs;
    let scaled: DVector<f64> = DVector::from_iterator(
        d_x,
        rotated.iter().zip(eig.eigenvalues.iter()).map(|(v, l)| v / l),
    );
    Some(&eig.eigenvectors * &scaled)
}

/// Fits every period of the panel. Periods are fit in parallel; results are
/// assembled in panel order so output does not depend on scheduling.
pub fn fit_series(panel: &Panel, j: &JSpec, weighting: Weighting) -> Result<FitSeries> {
    let j_sequence: Vec<usize> = match j {
        JSpec::Fixed(j) => vec![*j; panel.t_len()],
        JSpec::PerPeriod(seq) => {
            if seq.len() != panel.t_len() {
                return Err(Error::DimensionMismatch {
                    context: "per-period J sequence",
                    expected: panel.t_len(),
                    actual: seq.len(),
                });
            }
            seq.clone()
        }
    };
    let results: Vec<Result<PeriodFit>> = panel
        .periods
        .par_iter()
        .zip(j_sequence.par_iter())
        .map(|(p, &j)| fit_period(p, j, weighting))
        .collect();
    let mut fits = Vec::with_capacity(results.len());
    for r in results {
        fits.push(r?);
    }
    Ok(FitSeries { fits, j_sequence })
}

/// What to do when the cell containing an evaluation point is empty in some
/// periods.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmptyCellPolicy {
    /// Refuse to evaluate, listing the offending periods.
    Error,
    /// Average only over the periods where the cell is occupied. This
    /// reweights the time average toward those periods and changes the
    /// estimand; use deliberately.
    SkipReweight,
}

/// A point evaluation of the time-averaged estimator, with the per-period
/// trace used by the variance estimators.
#[derive(Debug, Clone, Serialize)]
pub struct PointEstimate {
    pub value: f64,
    /// Per-period values, aligned with `periods_used`.
    pub per_period: Vec<f64>,
    pub periods_used: Vec<i64>,
    /// Periods skipped under [`EmptyCellPolicy::SkipReweight`]; always empty
    /// under [`EmptyCellPolicy::Error`].
    pub skipped_periods: Vec<i64>,
}

/// Step-function lookup for a single period: the cell value of the cell
/// containing `z`.
pub fn mu_hat_t(fit: &PeriodFit, z: &[f64]) -> Result<f64> {
    let cell = fit.require_cell(z)?;
    Ok(fit.cell_values[cell].expect("require_cell guarantees a value"))
}

/// The time-averaged estimator at `z`, requiring the cell containing `z` to
/// be nonempty in every period.
pub fn mu_hat(series: &FitSeries, z: &[f64]) -> Result<PointEstimate> {
    mu_hat_with_policy(series, z, EmptyCellPolicy::Error)
}

/// As [`mu_hat`], with an explicit policy for periods where the cell is
/// empty.
pub fn mu_hat_with_policy(
    series: &FitSeries,
    z: &[f64],
    policy: EmptyCellPolicy,
) -> Result<PointEstimate> {
    let failed = series.failed_periods();
    if !failed.is_empty() {
        return Err(Error::PeriodFitFailed { periods: failed });
    }
    let mut per_period = Vec::with_capacity(series.fits.len());
    let mut periods_used = Vec::with_capacity(series.fits.len());
    let mut empty_periods = Vec::new();
    for fit in &series.fits {
        let cell = fit.partition.cell_of_point(z)?;
        match fit.cell_values[cell] {
            Some(v) => {
                per_period.push(v);
                periods_used.push(fit.t);
            }
            None => empty_periods.push(fit.t),
        }
    }
    if !empty_periods.is_empty() && policy == EmptyCellPolicy::Error {
        return Err(Error::EmptyCellAt {
            point: z.to_vec(),
            periods: empty_periods,
        });
    }
    if per_period.is_empty() {
        return Err(Error::EmptyCellAt {
            point: z.to_vec(),
            periods: empty_periods,
        });
    }
    let value = per_period.iter().sum::<f64>() / per_period.len() as f64;
    Ok(PointEstimate {
        value,
        per_period,
        periods_used,
        skipped_periods: empty_periods,
    })
}

/// A linear functional of the estimator: `sum_k c_k * mu_hat(point_k)`,
/// with the per-period trace `sum_k c_k * mu_hat_t(point_k)`. High-minus-low
/// is `[(z_H, +1), (z_L, -1)]`; partial means are user-supplied quadrature
/// terms.
pub fn linear_functional(series: &FitSeries, terms: &[(Vec<f64>, f64)]) -> Result<PointEstimate> {
    let failed = series.failed_periods();
    if !failed.is_empty() {
        return Err(Error::PeriodFitFailed { periods: failed });
    }
    let t_len = series.fits.len();
    let mut per_period = vec![0.0f64; t_len];
    for (point, coeff) in terms {
        let est = mu_hat(series, point)?;
        for (acc, v) in per_period.iter_mut().zip(est.per_period.iter()) {
            *acc += coeff * v;
        }
    }
    let value = per_period.iter().sum::<f64>() / t_len as f64;
    Ok(PointEstimate {
        value,
        per_period,
        periods_used: series.fits.iter().map(|f| f.t).collect(),
        skipped_periods: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::PanelPeriod;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn period_1d(t: i64, z: &[f64], r: &[f64], w: Option<Vec<f64>>) -> PanelPeriod {
        PanelPeriod::from_rows(
            t,
            (0..z.len()).map(|i| format!("a{i}")).collect(),
            r.to_vec(),
            z.iter().map(|&v| vec![v]).collect(),
            vec![],
            w,
        )
        .unwrap()
    }

    #[test]
    fn hand_instance_cell_means() {
        // z sorted {0.1..0.9}, R = 1..6 aligned, J=2 -> means over {1,2} and {3,4,5,6}.
        let z = [0.1, 0.2, 0.3, 0.6, 0.7, 0.9];
        let r = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let fit = fit_period(&period_1d(1, &z, &r, None), 2, Weighting::Equal).unwrap();
        assert!(fit.ok);
        assert_eq!(fit.cell_values.len(), 2);
        assert_abs_diff_eq!(fit.cell_values[0].unwrap(), 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.cell_values[1].unwrap(), 4.5, epsilon = 1e-12);
        // step lookup: 0.5 is in the upper cell, as is the breakpoint itself
        assert_abs_diff_eq!(mu_hat_t(&fit, &[0.5]).unwrap(), 4.5, epsilon = 1e-12);
        assert_abs_diff_eq!(mu_hat_t(&fit, &[0.3]).unwrap(), 4.5, epsilon = 1e-12);
    }

    #[test]
    fn constant_returns_give_constant_cells_and_zero_residuals() {
        let z = [0.4, 0.9, 0.2, 0.6, 0.1];
        let r = [3.25; 5];
        for j in [1usize, 2, 3, 5] {
            let fit = fit_period(&period_1d(1, &z, &r, None), j, Weighting::Equal).unwrap();
            for v in fit.cell_values.iter().flatten() {
                assert_abs_diff_eq!(*v, 3.25, epsilon = 1e-12);
            }
            for i in 0..5 {
                assert_abs_diff_eq!(fit.residuals[i], 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn empty_cell_lookup_errors() {
        // d=2: the estimated 2x2 partition of these points leaves the
        // lower-lower cell empty.
        let period = PanelPeriod::from_rows(
            1,
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            vec![1.0, 2.0, 3.0, 4.0],
            vec![
                vec![-1.0, -1.0],
                vec![-2.0, 1.0],
                vec![-3.0, -0.5],
                vec![-0.5, 2.0],
            ],
            vec![],
            None,
        )
        .unwrap();
        let fit = fit_period(&period, 2, Weighting::Equal).unwrap();
        let err = mu_hat_t(&fit, &[-10.0, -10.0]).unwrap_err();
        match err {
            Error::EmptyCellAt { periods, .. } => assert_eq!(periods, vec![1]),
            other => panic!("expected EmptyCellAt, got {other:?}"),
        }
    }

    #[test]
    fn mu_hat_averages_and_t1_matches_period() {
        let z = [0.1, 0.2, 0.3, 0.6, 0.7, 0.9];
        let r1 = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let r2 = [3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let panel = Panel::new(vec![period_1d(1, &z, &r1, None), period_1d(2, &z, &r2, None)])
            .unwrap();
        let series = fit_series(&panel, &JSpec::Fixed(2), Weighting::Equal).unwrap();
        let est = mu_hat(&series, &[0.5]).unwrap();
        assert_abs_diff_eq!(est.value, (4.5 + 6.5) / 2.0, epsilon = 1e-12);
        assert_eq!(est.per_period, vec![4.5, 6.5]);

        let single = Panel::new(vec![period_1d(1, &z, &r1, None)]).unwrap();
        let series1 = fit_series(&single, &JSpec::Fixed(2), Weighting::Equal).unwrap();
        let est1 = mu_hat(&series1, &[0.5]).unwrap();
        assert_abs_diff_eq!(
            est1.value,
            mu_hat_t(&series1.fits[0], &[0.5]).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn linear_functional_singleton_and_cancellation() {
        let z = [0.1, 0.2, 0.3, 0.6, 0.7, 0.9];
        let r = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let panel = Panel::new(vec![period_1d(1, &z, &r, None)]).unwrap();
        let series = fit_series(&panel, &JSpec::Fixed(2), Weighting::Equal).unwrap();
        let single = linear_functional(&series, &[(vec![0.5], 1.0)]).unwrap();
        assert_abs_diff_eq!(single.value, 4.5, epsilon = 1e-15);
        let cancel =
            linear_functional(&series, &[(vec![0.5], 1.0), (vec![0.5], -1.0)]).unwrap();
        assert_eq!(cancel.value, 0.0);
    }

    #[test]
    fn skip_policy_reweights_over_occupied_periods() {
        // Period 2 leaves its upper-upper cell empty; period 1 does not.
        let mk = |t: i64, chars: Vec<Vec<f64>>| {
            PanelPeriod::from_rows(
                t,
                (0..4).map(|i| format!("a{i}")).collect(),
                vec![1.0, 2.0, 3.0, 4.0],
                chars,
                vec![],
                None,
            )
            .unwrap()
        };
        // In period 2 the first observation is the minimum in both
        // dimensions, which empties the (low, high) cell; in period 1 that
        // cell holds exactly the first observation.
        let p1 = mk(
            1,
            vec![vec![1.0, 20.0], vec![2.0, 10.0], vec![3.0, 30.0], vec![4.0, 40.0]],
        );
        let p2 = mk(
            2,
            vec![vec![1.0, 10.0], vec![2.0, 20.0], vec![3.0, 30.0], vec![4.0, 40.0]],
        );
        let panel = Panel::new(vec![p1, p2]).unwrap();
        let series = fit_series(&panel, &JSpec::Fixed(2), Weighting::Equal).unwrap();
        let z = [0.5, 100.0];
        match mu_hat(&series, &z) {
            Err(Error::EmptyCellAt { periods, .. }) => assert_eq!(periods, vec![2]),
            other => panic!("expected EmptyCellAt, got {other:?}"),
        }
        let est = mu_hat_with_policy(&series, &z, EmptyCellPolicy::SkipReweight).unwrap();
        assert_eq!(est.periods_used, vec![1]);
        assert_eq!(est.skipped_periods, vec![2]);
        assert_abs_diff_eq!(est.value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn weighted_means_match_hand_computation() {
        // n=4, J=2: breakpoint is z_(2) = 0.2, which joins the upper cell.
        // Lower cell {0.1}: weighted mean 1. Upper {0.2, 0.3, 0.6}:
        // (3*2 + 2*3 + 2*4) / 7 = 20/7.
        let z = [0.1, 0.2, 0.3, 0.6];
        let r = [1.0, 2.0, 3.0, 4.0];
        let w = vec![1.0, 3.0, 2.0, 2.0];
        let fit =
            fit_period(&period_1d(1, &z, &r, Some(w)), 2, Weighting::ByWeightColumn).unwrap();
        assert_abs_diff_eq!(fit.cell_values[0].unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.cell_values[1].unwrap(), 20.0 / 7.0, epsilon = 1e-12);
    }

    #[test]
    fn missing_weights_error() {
        let z = [0.1, 0.2];
        let r = [1.0, 2.0];
        let err = fit_period(&period_1d(3, &z, &r, None), 1, Weighting::ByWeightColumn)
            .unwrap_err();
        assert!(matches!(err, Error::MissingWeights { period: 3 }));
    }

    #[test]
    fn singular_design_sets_ok_false() {
        // Control constant within every cell: zero within-cell variation.
        let period = PanelPeriod::from_rows(
            1,
            (0..6).map(|i| format!("a{i}")).collect(),
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            [0.1f64, 0.2, 0.3, 0.6, 0.7, 0.9]
                .iter()
                .map(|&v| vec![v])
                .collect(),
            vec![vec![1.0]; 6],
            None,
        )
        .unwrap();
        let fit = fit_period(&period, 2, Weighting::Equal).unwrap();
        assert!(!fit.ok);
        assert!(fit.cell_values.iter().all(Option::is_none));
        let panel = Panel::new(vec![period]).unwrap();
        let series = fit_series(&panel, &JSpec::Fixed(2), Weighting::Equal).unwrap();
        match mu_hat(&series, &[0.5]) {
            Err(Error::PeriodFitFailed { periods }) => assert_eq!(periods, vec![1]),
            other => panic!("expected PeriodFitFailed, got {other:?}"),
        }
    }

    #[test]
    fn residuals_are_weighted_mean_zero_within_cells() {
        let z = [0.13, 0.42, 0.77, 0.05, 0.61, 0.88, 0.29, 0.52];
        let r = [0.3, -0.1, 1.2, 0.9, -0.4, 0.6, 0.2, -0.8];
        let w = vec![1.0, 0.5, 2.0, 1.5, 1.0, 3.0, 0.25, 1.0];
        let fit =
            fit_period(&period_1d(1, &z, &r, Some(w)), 3, Weighting::ByWeightColumn).unwrap();
        let cells = fit.partition.num_cells();
        for c in 0..cells {
            if fit.cell_values[c].is_none() {
                continue;
            }
            let m: f64 = fit
                .partition
                .cell_of()
                .iter()
                .enumerate()
                .filter(|(_, &ci)| ci == c)
                .map(|(i, _)| fit.normalized_weights[i] * fit.residuals[i])
                .sum();
            assert_abs_diff_eq!(m, 0.0, epsilon = 1e-8);
        }
    }

    proptest! {
        #[test]
        fn constant_shift_moves_cells_not_beta(
            seed in 0u64..500,
            shift in -5.0..5.0f64,
            j in 1usize..5,
        ) {
            let (z, r, x) = random_instance(seed, 16);
            let base = period_with_controls(1, &z, &r, &x);
            let shifted_r: Vec<f64> = r.iter().map(|v| v + shift).collect();
            let shifted = period_with_controls(1, &z, &shifted_r, &x);
            let f0 = fit_period(&base, j, Weighting::Equal).unwrap();
            let f1 = fit_period(&shifted, j, Weighting::Equal).unwrap();
            prop_assume!(f0.ok && f1.ok);
            for (a, b) in f0.cell_values.iter().zip(f1.cell_values.iter()) {
                match (a, b) {
                    (Some(a), Some(b)) => prop_assert!((b - a - shift).abs() < 1e-9),
                    (None, None) => {}
                    _ => prop_assert!(false, "cell occupancy changed under shift"),
                }
            }
            for k in 0..f0.beta_hat.len() {
                prop_assert!((f0.beta_hat[k] - f1.beta_hat[k]).abs() < 1e-9);
            }
        }

        #[test]
        fn unit_weights_reproduce_equal_weighting(seed in 0u64..500, j in 1usize..5) {
            let (z, r, x) = random_instance(seed, 14);
            let mut period = period_with_controls(1, &z, &r, &x);
            period.weights = Some(DVector::from_element(z.len(), 1.0));
            let eq = fit_period(&period, j, Weighting::Equal).unwrap();
            let wt = fit_period(&period, j, Weighting::ByWeightColumn).unwrap();
            prop_assume!(eq.ok);
            prop_assert!(wt.ok);
            for (a, b) in eq.cell_values.iter().zip(wt.cell_values.iter()) {
                match (a, b) {
                    (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                    (None, None) => {}
                    _ => prop_assert!(false),
                }
            }
        }

        #[test]
        fn affine_control_reparam_leaves_fit_invariant(seed in 0u64..300, j in 1usize..4) {
            let (z, r, x) = random_instance(seed, 18);
            let base = period_with_controls(1, &z, &r, &x);
            // X -> a*X + b with a != 0. The dummy block spans the constant, so
            // the shift b moves every cell value by one common constant while
            // fitted values stay put; with b = 0 the cell values themselves
            // are invariant.
            let a = 0.5 + ((seed % 7) as f64) * 0.3;
            let b = ((seed % 5) as f64) - 2.0;
            let x2: Vec<Vec<f64>> = x.iter().map(|row| row.iter().map(|v| a * v + b).collect()).collect();
            let re = period_with_controls(1, &z, &r, &x2);
            let f0 = fit_period(&base, j, Weighting::Equal).unwrap();
            let f1 = fit_period(&re, j, Weighting::Equal).unwrap();
            prop_assume!(f0.ok && f1.ok);
            for (i, ri) in r.iter().enumerate() {
                let fitted0 = ri - f0.residuals[i];
                let fitted1 = ri - f1.residuals[i];
                prop_assert!((fitted0 - fitted1).abs() < 1e-8, "fitted {fitted0} vs {fitted1}");
            }
            let shifts: Vec<f64> = f0
                .cell_values
                .iter()
                .zip(f1.cell_values.iter())
                .filter_map(|(v0, v1)| Some(v1.as_ref()? - v0.as_ref()?))
                .collect();
            for s in &shifts {
                prop_assert!((s - shifts[0]).abs() < 1e-8, "non-uniform cell shift");
            }

            let x3: Vec<Vec<f64>> = x.iter().map(|row| row.iter().map(|v| a * v).collect()).collect();
            let f2 = fit_period(&period_with_controls(1, &z, &r, &x3), j, Weighting::Equal).unwrap();
            prop_assume!(f2.ok);
            for (v0, v2) in f0.cell_values.iter().zip(f2.cell_values.iter()) {
                if let (Some(v0), Some(v2)) = (v0, v2) {
                    prop_assert!((v0 - v2).abs() < 1e-8);
                }
            }
            prop_assert!((f0.beta_hat[0] - a * f2.beta_hat[0]).abs() < 1e-8);
        }
    }

    fn random_instance(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
        let mut s = seed.wrapping_add(0x9e3779b97f4a7c15);
        let mut next = move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        let z: Vec<f64> = (0..n).map(|_| next()).collect();
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![next() * 2.0 - 1.0]).collect();
        let r: Vec<f64> = (0..n)
            .map(|i| z[i] * z[i] + 0.5 * x[i][0] + 0.3 * (next() - 0.5))
            .collect();
        (z, r, x)
    }

    fn period_with_controls(t: i64, z: &[f64], r: &[f64], x: &[Vec<f64>]) -> PanelPeriod {
        PanelPeriod::from_rows(
            t,
            (0..z.len()).map(|i| format!("a{i}")).collect(),
            r.to_vec(),
            z.iter().map(|&v| vec![v]).collect(),
            x.to_vec(),
            None,
        )
        .unwrap()
    }
}
