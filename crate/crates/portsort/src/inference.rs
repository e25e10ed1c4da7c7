//! Variance estimation and hypothesis tests for the portfolio estimator.
//!
//! Two variance estimators are provided: the Fama-MacBeth estimator, the
//! sample variance of the per-period trace divided by T, and a plug-in
//! estimator built from within-portfolio squared residuals and cell counts.
//! The high-minus-low test Studentizes the contrast with the sum of the two
//! pointwise variances and refers it to the standard normal by default.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::estimator::{linear_functional, mu_hat, FitSeries};

/// Both variance estimates at one evaluation point or contrast.
#[derive(Debug, Clone, Serialize)]
pub struct VarianceEstimate {
    pub v_fm: f64,
    pub v_pi: f64,
    pub t_used: usize,
}

/// Reference distribution for p-values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceDist {
    /// Standard normal, the default.
    Normal,
    /// Student's t with T-1 degrees of freedom, for comparability with
    /// legacy empirical practice.
    StudentT,
}

/// Variance estimator for the high-minus-low test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HmlVariance {
    /// Sum of the two pointwise Fama-MacBeth variances (the default form).
    FamaMacbeth,
    /// Sum of the two pointwise plug-in variances.
    PlugIn,
    /// Fama-MacBeth variance of the per-period difference trace. Robust when
    /// the two points ever share a cell, at the cost of departing from the
    /// sum-of-pointwise form.
    FmDifferenceTrace,
}

/// Outcome of a two-sided test.
#[derive(Debug, Clone, Serialize)]
pub struct TestResult {
    pub estimate: f64,
    pub se: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub reject_5pct: bool,
    pub t_used: usize,
    /// Periods in which the two evaluation points shared a cell (their
    /// estimates are then correlated and the pointwise variance sum is not
    /// exact). Empty for single-point tests.
    pub shared_cell_periods: Vec<i64>,
    /// True when `se == 0` with a nonzero estimate; `p_value` is reported
    /// as 0 rather than raising an error.
    pub degenerate_variance: bool,
}

/// Fama-MacBeth variance of a per-period trace:
/// `(1/T^2) * sum_t (v_t - mean)^2`.
pub fn var_fm(per_period: &[f64]) -> Result<f64> {
    let t = per_period.len();
    if t < 2 {
        return Err(Error::InsufficientPeriods {
            required: 2,
            actual: t,
        });
    }
    let tf = t as f64;
    let mean = per_period.iter().sum::<f64>() / tf;
    Ok(per_period.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (tf * tf))
}

/// Plug-in variance at `z`: `(1/T^2) * sum_t sum_{i in cell_t(z)}
/// w_it^2 * resid_it^2`, with `w_it` the within-cell normalized weights
/// (`1/N_jt` under equal weighting).
pub fn var_pi(series: &FitSeries, z: &[f64]) -> Result<f64> {
    accumulate_cell_sq(series, z, |fit, i| {
        let w = fit.normalized_weights[i];
        w * w * fit.residuals[i] * fit.residuals[i]
    })
}

/// Infeasible variance oracle for simulations where the per-observation
/// noise variances are known: `(1/T^2) * sum_t sum_{i in cell_t(z)}
/// w_it^2 * sigma2_it`. This is the conditional variance of the time-averaged
/// estimator at `z`, the target both feasible estimators are checked against.
pub fn infeasible_variance(series: &FitSeries, sigma2: &[Vec<f64>], z: &[f64]) -> Result<f64> {
    if sigma2.len() != series.fits.len() {
        return Err(Error::DimensionMismatch {
            context: "sigma2 period count",
            expected: series.fits.len(),
            actual: sigma2.len(),
        });
    }
    for (fit, s2) in series.fits.iter().zip(sigma2) {
        if s2.len() != fit.residuals.len().max(fit.normalized_weights.len()) {
            return Err(Error::DimensionMismatch {
                context: "sigma2 observations in a period",
                expected: fit.normalized_weights.len(),
                actual: s2.len(),
            });
        }
    }
    let failed = series.failed_periods();
    if !failed.is_empty() {
        return Err(Error::PeriodFitFailed { periods: failed });
    }
    let mut empty = Vec::new();
    let mut total = 0.0;
    for (fit, s2) in series.fits.iter().zip(sigma2) {
        let cell = fit.partition.cell_of_point(z)?;
        if fit.cell_values[cell].is_none() {
            empty.push(fit.t);
            continue;
        }
        for (i, &c) in fit.partition.cell_of().iter().enumerate() {
            if c == cell {
                let w = fit.normalized_weights[i];
                total += w * w * s2[i];
            }
        }
    }
    if !empty.is_empty() {
        return Err(Error::EmptyCellAt {
            point: z.to_vec(),
            periods: empty,
        });
    }
    let t = series.fits.len() as f64;
    Ok(total / (t * t))
}

fn accumulate_cell_sq(
    series: &FitSeries,
    z: &[f64],
    term: impl Fn(&crate::estimator::PeriodFit, usize) -> f64,
) -> Result<f64> {
    let failed = series.failed_periods();
    if !failed.is_empty() {
        return Err(Error::PeriodFitFailed { periods: failed });
    }
    let mut empty = Vec::new();
    let mut total = 0.0;
    for fit in &series.fits {
        let cell = fit.partition.cell_of_point(z)?;
        if fit.cell_values[cell].is_none() {
            empty.push(fit.t);
            continue;
        }
        for (i, &c) in fit.partition.cell_of().iter().enumerate() {
            if c == cell {
                total += term(fit, i);
            }
        }
    }
    if !empty.is_empty() {
        return Err(Error::EmptyCellAt {
            point: z.to_vec(),
            periods: empty,
        });
    }
    let t = series.fits.len() as f64;
    Ok(total / (t * t))
}

/// Both variance estimates at a point.
pub fn variance_estimate(series: &FitSeries, z: &[f64]) -> Result<VarianceEstimate> {
    let est = mu_hat(series, z)?;
    Ok(VarianceEstimate {
        v_fm: var_fm(&est.per_period)?,
        v_pi: var_pi(series, z)?,
        t_used: series.t_len(),
    })
}

/// Two-sided high-minus-low test of `mu(z_H) - mu(z_L) = 0` with the normal
/// reference distribution.
pub fn t_test_hml(
    series: &FitSeries,
    z_h: &[f64],
    z_l: &[f64],
    variance: HmlVariance,
) -> Result<TestResult> {
    t_test_hml_with(series, z_h, z_l, variance, ReferenceDist::Normal)
}

/// As [`t_test_hml`] with an explicit reference distribution.
pub fn t_test_hml_with(
    series: &FitSeries,
    z_h: &[f64],
    z_l: &[f64],
    variance: HmlVariance,
    reference: ReferenceDist,
) -> Result<TestResult> {
    if z_h == z_l {
        return Err(Error::InvalidSpec(
            "z_H and z_L must be distinct evaluation points".into(),
        ));
    }
    let high = mu_hat(series, z_h)?;
    let low = mu_hat(series, z_l)?;
    let estimate = high.value - low.value;
    let var = match variance {
        HmlVariance::FamaMacbeth => var_fm(&high.per_period)? + var_fm(&low.per_period)?,
        HmlVariance::PlugIn => var_pi(series, z_h)? + var_pi(series, z_l)?,
        HmlVariance::FmDifferenceTrace => {
            let diff: Vec<f64> = high
                .per_period
                .iter()
                .zip(low.per_period.iter())
                .map(|(h, l)| h - l)
                .collect();
            var_fm(&diff)?
        }
    };
    let mut shared = Vec::new();
    for fit in &series.fits {
        if fit.partition.cell_of_point(z_h)? == fit.partition.cell_of_point(z_l)? {
            shared.push(fit.t);
        }
    }
    Ok(build_test(
        estimate,
        var.max(0.0).sqrt(),
        series.t_len(),
        shared,
        reference,
    ))
}

/// Fama-MacBeth inference on the averaged parametric component `a' beta`.
pub fn beta_fm_inference(series: &FitSeries, a: &[f64]) -> Result<TestResult> {
    let failed = series.failed_periods();
    if !failed.is_empty() {
        return Err(Error::PeriodFitFailed { periods: failed });
    }
    let d_x = series.fits[0].beta_hat.len();
    if d_x == 0 {
        return Err(Error::NoControls);
    }
    if a.len() != d_x {
        return Err(Error::DimensionMismatch {
            context: "contrast vector for beta",
            expected: d_x,
            actual: a.len(),
        });
    }
    let trace: Vec<f64> = series
        .fits
        .iter()
        .map(|f| f.beta_hat.iter().zip(a).map(|(b, c)| b * c).sum())
        .collect();
    let estimate = trace.iter().sum::<f64>() / trace.len() as f64;
    let se = var_fm(&trace)?.sqrt();
    Ok(build_test(
        estimate,
        se,
        series.t_len(),
        Vec::new(),
        ReferenceDist::Normal,
    ))
}

fn build_test(
    estimate: f64,
    se: f64,
    t_used: usize,
    shared_cell_periods: Vec<i64>,
    reference: ReferenceDist,
) -> TestResult {
    let (t_stat, p_value, degenerate) = if se > 0.0 {
        let t = estimate / se;
        (t, two_sided_p(t, reference, t_used), false)
    } else if estimate == 0.0 {
        (0.0, 1.0, false)
    } else {
        (estimate.signum() * f64::INFINITY, 0.0, true)
    };
    TestResult {
        estimate,
        se,
        t_stat,
        p_value,
        reject_5pct: p_value < 0.05,
        t_used,
        shared_cell_periods,
        degenerate_variance: degenerate,
    }
}

fn two_sided_p(t_stat: f64, reference: ReferenceDist, t_used: usize) -> f64 {
    let a = t_stat.abs();
    match reference {
        ReferenceDist::Normal => {
            let normal = Normal::standard();
            2.0 * (1.0 - normal.cdf(a))
        }
        ReferenceDist::StudentT => {
            let df = (t_used.max(2) - 1) as f64;
            let dist = StudentsT::new(0.0, 1.0, df).expect("valid Student-t");
            2.0 * (1.0 - dist.cdf(a))
        }
    }
}

/// The two-sided critical value at nominal level 5% under the normal
/// reference, `Phi^{-1}(0.975)`.
pub fn normal_critical_5pct() -> f64 {
    Normal::standard().inverse_cdf(0.975)
}

/// Standard normal quantile, used to resolve quantile-level evaluation
/// points on the z-scored characteristic scale.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// High-minus-low contrast with the per-period trace, as a point estimate
/// without a test.
pub fn hml_contrast(series: &FitSeries, z_h: &[f64], z_l: &[f64]) -> Result<crate::estimator::PointEstimate> {
    linear_functional(series, &[(z_h.to_vec(), 1.0), (z_l.to_vec(), -1.0)])
}
