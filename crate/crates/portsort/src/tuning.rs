//! Data-driven selection of the number of portfolios.
//!
//! The criterion minimized for inference is the higher-order sample MSE
//! `v2_hat * J^{2d} / (n^2 T) + b_hat^2 / J^2`; for point estimation and
//! factor construction the leading variance replaces the higher-order one:
//! `v1_hat * J^d / (n T) + b_hat^2 / J^2`. Both constants are plug-ins:
//!
//! * `b_hat` comes from Richardson extrapolation: with bias falling like
//!   `B/J`, contrasting fits at `J` and `2J` gives
//!   `b_hat = 2J * (theta_J - theta_{2J})`. At interior evaluation points
//!   the partition bias oscillates in J (its sign flips as breakpoints pass
//!   the point), so a single difference is an unreliable selector input. The
//!   grid search therefore pools the squared Richardson differences across
//!   all candidates: each is corrected by its estimated sampling variance
//!   (the Fama-MacBeth variance of its per-period trace), divided by 5 —
//!   the difference of two uncorrelated unit-amplitude oscillating biases
//!   carries `2^2 + 1^2` times the squared amplitude — and combined with
//!   inverse-variance weights, which concentrates the estimate on the
//!   candidates whose differences are not noise-dominated. The pooled value
//!   feeds the criterion and the closed forms; the raw per-candidate
//!   differences are reported alongside.
//! * `v1_hat` rescales the plug-in variance to its rate constant,
//!   `(nT/J^d) * (V_PI(z_H) + V_PI(z_L))`.
//! * `v2_hat` is the second-order term of the expansion of `E[1/N]` for a
//!   binomial cell count with success probability `J^{-d}`:
//!   `(n^2 T / J^{2d}) * sum_t [s2_t(z_H) + s2_t(z_L)] * (J^d/n_t)^2 *
//!   (1 - J^{-d}) / T^2`, with `s2_t` the within-cell residual variance.
//!
//! The closed-form per-period selections are
//! `J*_t  = floor((b^2/(d v2) * n_t^2 T)^(1/(2d+2)))` for inference and
//! `J**_t = floor((2 b^2/(d v1) * n_t T)^(1/(d+2)))` for factors, clamped to
//! `[1, n_t]`.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{fit_series, FitSeries, JSpec, Weighting};
use crate::inference::{hml_contrast, var_fm, var_pi};
use crate::panel::Panel;

/// Which MSE objective a tuning run minimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TuningObjective {
    /// Higher-order MSE for inference on the high-minus-low contrast.
    Inference,
    /// Leading-order MSE for point estimation / factor construction.
    PointEstimation,
}

/// Grid evaluations and selections for one tuning run.
#[derive(Debug, Clone, Serialize)]
pub struct TuningResult {
    pub objective: TuningObjective,
    pub grid: Vec<usize>,
    /// Bias constant used at each candidate: the pooled, noise-corrected
    /// magnitude (identical across candidates by construction).
    pub b_hat: Vec<f64>,
    /// Raw Richardson difference `2J (theta_J - theta_2J)` per candidate.
    pub b_richardson: Vec<f64>,
    /// Leading-variance constant per candidate.
    pub v1_hat: Vec<f64>,
    /// Second-order variance constant per candidate.
    pub v2_hat: Vec<f64>,
    /// Criterion value per candidate.
    pub mse_hat: Vec<f64>,
    /// Grid minimizer (ties broken toward smaller J).
    pub selected: usize,
    pub selected_index: usize,
    /// Whether the criterion was unimodal (down then up) on the grid.
    pub unimodal_on_grid: bool,
    /// Per-period inference-optimal counts from the closed form at the
    /// minimizer's constants.
    pub j_star_sequence: Vec<usize>,
    /// Per-period factor-optimal counts from the closed form at the
    /// minimizer's constants.
    pub j_factor_sequence: Vec<usize>,
    /// Closed forms with `n_t` replaced by the common scale (mean `n_t`),
    /// for a single J across all periods.
    pub j_star_uniform: usize,
    pub j_factor_uniform: usize,
}

/// Richardson-type bias constant at pilot count `j_pilot`: fits the
/// high-minus-low contrast at `j_pilot` and `2 * j_pilot` and returns
/// `2 * j_pilot * (theta_pilot - theta_double)`.
pub fn bias_constant_hat(
    panel: &Panel,
    z_h: &[f64],
    z_l: &[f64],
    j_pilot: usize,
    weighting: Weighting,
) -> Result<f64> {
    let min_n = panel.min_n();
    if 2 * j_pilot > min_n {
        return Err(Error::JTooLarge {
            j: 2 * j_pilot,
            n: min_n,
        });
    }
    let coarse = fit_series(panel, &JSpec::Fixed(j_pilot), weighting)?;
    let fine = fit_series(panel, &JSpec::Fixed(2 * j_pilot), weighting)?;
    let theta_coarse = hml_contrast(&coarse, z_h, z_l)?.value;
    let theta_fine = hml_contrast(&fine, z_h, z_l)?.value;
    Ok(2.0 * j_pilot as f64 * (theta_coarse - theta_fine))
}

/// Plug-in variance constants `(v1_hat, v2_hat)` at portfolio count `j`.
pub fn variance_constants_hat(
    panel: &Panel,
    z_h: &[f64],
    z_l: &[f64],
    j: usize,
    weighting: Weighting,
) -> Result<(f64, f64)> {
    let series = fit_series(panel, &JSpec::Fixed(j), weighting)?;
    variance_constants_from_series(panel, &series, z_h, z_l, j)
}

fn variance_constants_from_series(
    panel: &Panel,
    series: &FitSeries,
    z_h: &[f64],
    z_l: &[f64],
    j: usize,
) -> Result<(f64, f64)> {
    let d = panel.d() as i32;
    let t = panel.t_len() as f64;
    let n_bar = panel.mean_n();
    let jd = (j as f64).powi(d);
    let v1 = (n_bar * t / jd) * (var_pi(series, z_h)? + var_pi(series, z_l)?);

    let mut second_order = 0.0;
    for fit in &series.fits {
        let s2 = fit.cell_residual_variance(z_h)? + fit.cell_residual_variance(z_l)?;
        let n_t = fit.normalized_weights.len() as f64;
        second_order += s2 * (jd / n_t) * (jd / n_t) * (1.0 - 1.0 / jd);
    }
    second_order /= t * t;
    let v2 = (n_bar * n_bar * t / (jd * jd)) * second_order;
    Ok((v1, v2))
}

/// Selects the inference-optimal number of portfolios by grid search over
/// the higher-order MSE criterion, recomputing the plug-in constants per
/// candidate.
pub fn select_j_star(
    panel: &Panel,
    z_h: &[f64],
    z_l: &[f64],
    grid: &[usize],
    weighting: Weighting,
) -> Result<TuningResult> {
    select_over_grid(panel, z_h, z_l, grid, weighting, TuningObjective::Inference)
}

/// Selects the factor-construction-optimal number of portfolios, minimizing
/// the leading-variance criterion.
pub fn select_j_factor(
    panel: &Panel,
    z_h: &[f64],
    z_l: &[f64],
    grid: &[usize],
    weighting: Weighting,
) -> Result<TuningResult> {
    select_over_grid(
        panel,
        z_h,
        z_l,
        grid,
        weighting,
        TuningObjective::PointEstimation,
    )
}

fn select_over_grid(
    panel: &Panel,
    z_h: &[f64],
    z_l: &[f64],
    grid: &[usize],
    weighting: Weighting,
    objective: TuningObjective,
) -> Result<TuningResult> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut grid: Vec<usize> = grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    if grid[0] == 0 {
        return Err(Error::InvalidPortfolioCount);
    }
    let min_n = panel.min_n();
    let max_j = *grid.last().expect("nonempty");
    if 2 * max_j > min_n {
        return Err(Error::JTooLarge {
            j: 2 * max_j,
            n: min_n,
        });
    }

    let d = panel.d() as i32;
    let t = panel.t_len() as f64;
    let n_bar = panel.mean_n();

    // Fits are shared between the candidate evaluation (J) and the
    // Richardson step (2J).
    let mut cache: BTreeMap<usize, FitSeries> = BTreeMap::new();
    let mut series_at = |j: usize| -> Result<FitSeries> {
        if let Some(s) = cache.get(&j) {
            return Ok(s.clone());
        }
        let s = fit_series(panel, &JSpec::Fixed(j), weighting)?;
        cache.insert(j, s.clone());
        Ok(s)
    };

    let mut b_richardson = Vec::with_capacity(grid.len());
    let mut corrected_sq = Vec::with_capacity(grid.len());
    let mut noise_vars = Vec::with_capacity(grid.len());
    let mut v1_hat = Vec::with_capacity(grid.len());
    let mut v2_hat = Vec::with_capacity(grid.len());
    for &j in &grid {
        let series = series_at(j)?;
        let doubled = series_at(2 * j)?;
        let theta_j = hml_contrast(&series, z_h, z_l)?;
        let theta_2j = hml_contrast(&doubled, z_h, z_l)?;
        let s = 2.0 * j as f64 * (theta_j.value - theta_2j.value);
        // sampling variance of the Richardson difference, from the
        // per-period trace of theta_J - theta_2J
        let noise_var = if panel.t_len() >= 2 {
            let diff: Vec<f64> = theta_j
                .per_period
                .iter()
                .zip(theta_2j.per_period.iter())
                .map(|(a, b)| a - b)
                .collect();
            4.0 * (j as f64) * (j as f64) * var_fm(&diff)?
        } else {
            0.0
        };
        b_richardson.push(s);
        corrected_sq.push(s * s - noise_var);
        noise_vars.push(noise_var);
        let (v1, v2) = variance_constants_from_series(panel, &series, z_h, z_l, j)?;
        v1_hat.push(v1);
        v2_hat.push(v2);
    }
    // Inverse-variance pooling with the 2^2 + 1^2 oscillation deflation.
    // The pooled value is shrunk by one standard error of its own sampling
    // noise so that a flat panel yields a zero bias constant rather than a
    // noise residue. The ridge keeps weights finite for zero-noise panels.
    let scale = b_richardson.iter().map(|s| s * s).sum::<f64>() / grid.len() as f64;
    let ridge = 1e-12 * (1.0 + scale);
    let t_factor = if panel.t_len() >= 2 {
        1.0 + 1.0 / (panel.t_len() - 1) as f64
    } else {
        1.0
    };
    let mut w_sum = 0.0;
    let mut u_sum = 0.0;
    let mut var_sum = 0.0;
    for (u, nv) in corrected_sq.iter().zip(noise_vars.iter()) {
        let w = 1.0 / ((nv + ridge) * (nv + ridge));
        w_sum += w;
        u_sum += w * u;
        var_sum += w * w * (2.0 * nv * nv * t_factor + 4.0 * u.max(0.0) * nv);
    }
    let pooled = u_sum / w_sum;
    let pooled_se = var_sum.sqrt() / w_sum;
    let b_sq = ((pooled - pooled_se) / 5.0).max(0.0);
    let b = b_sq.sqrt();
    let b_hat = vec![b; grid.len()];

    let mut mse_hat = Vec::with_capacity(grid.len());
    for (i, &j) in grid.iter().enumerate() {
        let jd = (j as f64).powi(d);
        let jf = j as f64;
        let mse = match objective {
            TuningObjective::Inference => {
                v2_hat[i] * jd * jd / (n_bar * n_bar * t) + b_sq / (jf * jf)
            }
            TuningObjective::PointEstimation => {
                v1_hat[i] * jd / (n_bar * t) + b_sq / (jf * jf)
            }
        };
        mse_hat.push(mse);
    }

    let mut selected_index = 0;
    for (i, m) in mse_hat.iter().enumerate() {
        if *m < mse_hat[selected_index] {
            selected_index = i;
        }
    }
    let unimodal_on_grid = is_unimodal(&mse_hat);

    let v1 = v1_hat[selected_index];
    let v2 = v2_hat[selected_index];
    let d_usize = panel.d();
    let j_star_sequence: Vec<usize> = panel
        .periods
        .iter()
        .map(|p| closed_form_j_star(b, v2, d_usize, p.n() as f64, t).min(p.n()).max(1))
        .collect();
    let j_factor_sequence: Vec<usize> = panel
        .periods
        .iter()
        .map(|p| closed_form_j_factor(b, v1, d_usize, p.n() as f64, t).min(p.n()).max(1))
        .collect();
    let n_cap = panel.periods.iter().map(|p| p.n()).max().unwrap_or(1);
    let j_star_uniform = closed_form_j_star(b, v2, d_usize, n_bar, t).min(n_cap).max(1);
    let j_factor_uniform = closed_form_j_factor(b, v1, d_usize, n_bar, t).min(n_cap).max(1);

    Ok(TuningResult {
        objective,
        selected: grid[selected_index],
        selected_index,
        grid,
        b_hat,
        b_richardson,
        v1_hat,
        v2_hat,
        mse_hat,
        unimodal_on_grid,
        j_star_sequence,
        j_factor_sequence,
        j_star_uniform,
        j_factor_uniform,
    })
}

/// `floor((b^2/(d v2) * n^2 T)^(1/(2d+2)))`; infinite ratios (zero variance
/// constant with nonzero bias) saturate, NaN (0/0) selects 1.
pub fn closed_form_j_star(b: f64, v2: f64, d: usize, n: f64, t: f64) -> usize {
    let ratio = b * b / (d as f64 * v2);
    floor_power(ratio * n * n * t, 1.0 / (2.0 * d as f64 + 2.0))
}

/// `floor((2 b^2/(d v1) * n T)^(1/(d+2)))`.
pub fn closed_form_j_factor(b: f64, v1: f64, d: usize, n: f64, t: f64) -> usize {
    let ratio = 2.0 * b * b / (d as f64 * v1);
    floor_power(ratio * n * t, 1.0 / (d as f64 + 2.0))
}

fn floor_power(base: f64, exponent: f64) -> usize {
    let v = base.powf(exponent);
    if v.is_nan() {
        return 1;
    }
    if v.is_infinite() {
        return usize::MAX;
    }
    // nudge past binary dust so exact-integer arguments floor to themselves
    (v * (1.0 + 1e-12)).floor().max(0.0) as usize
}

fn is_unimodal(values: &[f64]) -> bool {
    let argmin = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).expect("finite criterion"))
        .map(|(i, _)| i)
        .unwrap_or(0);
    values[..argmin].windows(2).all(|w| w[0] >= w[1])
        && values[argmin..].windows(2).all(|w| w[0] <= w[1])
}

/// Default candidate grid: geometric from 2 up to `min_t n_t / 4` with ratio
/// about 1.3, which covers both rate regimes in roughly 15 evaluations.
pub fn default_grid(panel: &Panel) -> Vec<usize> {
    let cap = (panel.min_n() / 4).max(2);
    let mut grid = Vec::new();
    let mut j = 2usize;
    while j <= cap {
        grid.push(j);
        j = ((j as f64 * 1.3).round() as usize).max(j + 1);
    }
    if grid.is_empty() {
        grid.push(2);
    }
    grid
}
