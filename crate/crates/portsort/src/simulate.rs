//! Synthetic panels and Monte Carlo experiments.
//!
//! Panels are drawn from `R = mu(z) + x'beta_t + eps` with configurable mean
//! families, characteristic laws, control links, noise rules, and
//! cross-sectional size schedules. Randomness is counter-based: one master
//! seed, with an independent ChaCha stream per (replication, period), so
//! results are bit-identical regardless of thread count or scheduling.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{fit_series, FitSeries, JSpec, Weighting};
use crate::inference::{
    hml_contrast, infeasible_variance, normal_critical_5pct, var_fm, var_pi, HmlVariance,
};
use crate::panel::{Panel, PanelPeriod};
use crate::tuning::{default_grid, select_j_factor, select_j_star};

/// Mean functions. For `d > 1` the family is applied additively across
/// coordinates (`Constant` stays a single level).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MuFamily {
    Constant { level: f64 },
    Linear { slope: f64 },
    Quadratic { coeff: f64 },
    Sine { amplitude: f64, cycles: f64 },
    Step { threshold: f64, low: f64, high: f64 },
}

impl MuFamily {
    fn eval1(&self, z: f64) -> f64 {
        match self {
            MuFamily::Constant { level } => *level,
            MuFamily::Linear { slope } => slope * z,
            MuFamily::Quadratic { coeff } => coeff * z * z,
            MuFamily::Sine { amplitude, cycles } => {
                amplitude * (2.0 * std::f64::consts::PI * cycles * z).sin()
            }
            MuFamily::Step { threshold, low, high } => {
                if z < *threshold {
                    *low
                } else {
                    *high
                }
            }
        }
    }

    /// True mean at a point, additive across coordinates.
    pub fn eval(&self, z: &[f64]) -> f64 {
        if let MuFamily::Constant { level } = self {
            return *level;
        }
        z.iter().map(|&v| self.eval1(v)).sum()
    }
}

/// Per-period control coefficient rule.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum BetaRule {
    Constant { values: Vec<f64> },
    /// `beta_tk = base_k + amplitude * sin(t + k)` over the period position.
    TimeVarying { base: Vec<f64>, amplitude: f64 },
}

impl BetaRule {
    pub fn d_x(&self) -> usize {
        match self {
            BetaRule::Constant { values } => values.len(),
            BetaRule::TimeVarying { base, .. } => base.len(),
        }
    }

    pub fn at(&self, period_pos: usize) -> Vec<f64> {
        match self {
            BetaRule::Constant { values } => values.clone(),
            BetaRule::TimeVarying { base, amplitude } => base
                .iter()
                .enumerate()
                .map(|(k, b)| b + amplitude * ((period_pos as f64) + k as f64).sin())
                .collect(),
        }
    }
}

/// Noise scale rule; always bounded away from zero.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum NoiseRule {
    Homoskedastic { sigma: f64 },
    /// `sigma_it = sigma * sqrt(1 + z_coeff * z_1^2)` with `z_1` the first
    /// characteristic.
    Heteroskedastic { sigma: f64, z_coeff: f64 },
}

impl NoiseRule {
    fn sigma_at(&self, z: &[f64]) -> f64 {
        match self {
            NoiseRule::Homoskedastic { sigma } => *sigma,
            NoiseRule::Heteroskedastic { sigma, z_coeff } => {
                sigma * (1.0 + z_coeff * z[0] * z[0]).sqrt()
            }
        }
    }
}

/// Per-period characteristic distribution.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum ZLaw {
    /// Uniform on [0, 1].
    Uniform,
    Beta { alpha: f64, beta: f64 },
    /// Beta(1,1) in odd periods and Beta(1.2,1.2) in even periods
    /// (1-based position).
    AlternatingBeta,
}

/// Control draw: `x_k = link * z_(k mod d) + noise * N(0,1)`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct XLaw {
    pub link: f64,
    pub noise: f64,
}

/// Cross-sectional size per period.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "schedule", rename_all = "snake_case")]
pub enum NSchedule {
    Constant { n: usize },
    LinearRamp { start: usize, end: usize },
    Explicit { sizes: Vec<usize> },
}

impl NSchedule {
    pub fn n_at(&self, period_pos: usize, t_periods: usize) -> usize {
        match self {
            NSchedule::Constant { n } => *n,
            NSchedule::LinearRamp { start, end } => {
                if t_periods <= 1 {
                    *start
                } else {
                    let f = period_pos as f64 / (t_periods - 1) as f64;
                    (*start as f64 + f * (*end as f64 - *start as f64)).round() as usize
                }
            }
            NSchedule::Explicit { sizes } => sizes[period_pos],
        }
    }
}

/// Full data generating process for a synthetic panel.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DgpSpec {
    pub mu: MuFamily,
    pub d: usize,
    #[serde(default)]
    pub beta: Option<BetaRule>,
    #[serde(default)]
    pub x_law: Option<XLaw>,
    pub noise: NoiseRule,
    pub z_law: ZLaw,
    pub n_schedule: NSchedule,
    pub t_periods: usize,
    pub seed: u64,
}

impl DgpSpec {
    pub fn d_x(&self) -> usize {
        self.beta.as_ref().map_or(0, BetaRule::d_x)
    }

    /// True mean at `z`, computed analytically from the family.
    pub fn true_mu(&self, z: &[f64]) -> f64 {
        self.mu.eval(z)
    }

    /// True contrast `mu(z_H) - mu(z_L)`.
    pub fn true_contrast(&self, z_h: &[f64], z_l: &[f64]) -> f64 {
        self.true_mu(z_h) - self.true_mu(z_l)
    }

    fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidSpec("d must be at least 1".into()));
        }
        if self.t_periods == 0 {
            return Err(Error::InvalidSpec("t_periods must be at least 1".into()));
        }
        if let NSchedule::Explicit { sizes } = &self.n_schedule {
            if sizes.len() != self.t_periods {
                return Err(Error::InvalidSpec(format!(
                    "explicit n schedule has {} entries for {} periods",
                    sizes.len(),
                    self.t_periods
                )));
            }
        }
        for pos in 0..self.t_periods {
            if self.n_schedule.n_at(pos, self.t_periods) < 2 {
                return Err(Error::InvalidSpec(
                    "every period needs n_t >= 2".into(),
                ));
            }
        }
        // sigma = 0 is allowed as a degenerate testing configuration even
        // though the asymptotics assume noise bounded away from zero.
        let sigma_ok = match &self.noise {
            NoiseRule::Homoskedastic { sigma } => sigma.is_finite() && *sigma >= 0.0,
            NoiseRule::Heteroskedastic { sigma, z_coeff } => {
                sigma.is_finite() && *sigma >= 0.0 && *z_coeff >= 0.0
            }
        };
        if !sigma_ok {
            return Err(Error::InvalidSpec(
                "noise scale must be finite and nonnegative".into(),
            ));
        }
        if let ZLaw::Beta { alpha, beta } = &self.z_law {
            if !(*alpha > 0.0 && *beta > 0.0) {
                return Err(Error::InvalidSpec("Beta law needs positive shapes".into()));
            }
        }
        if self.d_x() > 0 {
            match &self.x_law {
                None => {
                    return Err(Error::InvalidSpec(
                        "beta rule given without an x law".into(),
                    ))
                }
                Some(x) if x.noise <= 0.0 => {
                    return Err(Error::InvalidSpec(
                        "control noise must be strictly positive".into(),
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// A drawn panel plus the quantities only a simulator knows.
#[derive(Debug, Clone)]
pub struct DrawnPanel {
    pub panel: Panel,
    /// True per-observation noise variances, per period.
    pub sigma2: Vec<Vec<f64>>,
    /// Realized noise, per period: exactly `R - mu(z) - x'beta_t` as stored.
    pub noise: Vec<Vec<f64>>,
}

/// One independent ChaCha stream per (replication, period).
fn period_rng(seed: u64, replication: u64, period_pos: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((replication << 32) | (period_pos & 0xffff_ffff));
    rng
}

/// Draws the panel for replication 0 of the spec's seed.
pub fn draw_panel(spec: &DgpSpec) -> Result<DrawnPanel> {
    draw_panel_replication(spec, 0)
}

/// Draws the panel for a given replication index; deterministic in
/// (seed, replication) and independent of thread scheduling.
pub fn draw_panel_replication(spec: &DgpSpec, replication: u64) -> Result<DrawnPanel> {
    spec.validate()?;
    let t_periods = spec.t_periods;
    let d = spec.d;
    let d_x = spec.d_x();
    let mut periods = Vec::with_capacity(t_periods);
    let mut sigma2_all = Vec::with_capacity(t_periods);
    let mut noise_all = Vec::with_capacity(t_periods);
    for pos in 0..t_periods {
        let n = spec.n_schedule.n_at(pos, t_periods);
        let mut rng = period_rng(spec.seed, replication, pos as u64);
        let beta_t = spec.beta.as_ref().map_or_else(Vec::new, |b| b.at(pos));

        let mut z = vec![0.0f64; n * d];
        match &spec.z_law {
            ZLaw::Uniform => {
                for v in z.iter_mut() {
                    *v = rng.random::<f64>();
                }
            }
            ZLaw::Beta { alpha, beta } => {
                let law = Beta::new(*alpha, *beta)
                    .map_err(|e| Error::InvalidSpec(format!("Beta law: {e}")))?;
                for v in z.iter_mut() {
                    *v = law.sample(&mut rng);
                }
            }
            ZLaw::AlternatingBeta => {
                // odd 1-based periods are Beta(1,1); even are Beta(1.2,1.2)
                if pos % 2 == 0 {
                    for v in z.iter_mut() {
                        *v = rng.random::<f64>();
                    }
                } else {
                    let law = Beta::new(1.2, 1.2).expect("fixed shapes");
                    for v in z.iter_mut() {
                        *v = law.sample(&mut rng);
                    }
                }
            }
        }

        let mut x = vec![0.0f64; n * d_x];
        if d_x > 0 {
            let x_law = spec.x_law.as_ref().expect("validated");
            for i in 0..n {
                for k in 0..d_x {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    x[i * d_x + k] = x_law.link * z[i * d + (k % d)] + x_law.noise * e;
                }
            }
        }

        let mut returns = Vec::with_capacity(n);
        let mut sigma2 = Vec::with_capacity(n);
        let mut noise = Vec::with_capacity(n);
        for i in 0..n {
            let zi = &z[i * d..(i + 1) * d];
            let sigma = spec.noise.sigma_at(zi);
            let e: f64 = StandardNormal.sample(&mut rng);
            let mu_v = spec.mu.eval(zi);
            let mut xb = 0.0;
            for k in 0..d_x {
                xb += x[i * d_x + k] * beta_t[k];
            }
            let r = mu_v + xb + sigma * e;
            returns.push(r);
            sigma2.push(sigma * sigma);
            // record the residual the panel actually carries, so the model
            // identity holds bit-exactly
            noise.push(r - mu_v - xb);
        }

        let period = PanelPeriod::from_rows(
            pos as i64 + 1,
            (0..n).map(|i| format!("a{i:06}")).collect(),
            returns,
            (0..n).map(|i| z[i * d..(i + 1) * d].to_vec()).collect(),
            if d_x == 0 {
                vec![]
            } else {
                (0..n).map(|i| x[i * d_x..(i + 1) * d_x].to_vec()).collect()
            },
            None,
        )?;
        periods.push(period);
        sigma2_all.push(sigma2);
        noise_all.push(noise);
    }
    Ok(DrawnPanel {
        panel: Panel::new(periods)?,
        sigma2: sigma2_all,
        noise: noise_all,
    })
}

/// How the per-period portfolio counts are chosen inside an experiment.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum JRule {
    Fixed { j: usize },
    /// Inference-optimal data-driven counts; `grid` defaults to the panel's
    /// default candidate grid.
    Star {
        #[serde(default)]
        grid: Option<Vec<usize>>,
    },
    /// Factor-construction-optimal counts.
    Factor {
        #[serde(default)]
        grid: Option<Vec<usize>>,
    },
}

/// Per-J row of an empirical RMSE curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McCurvePoint {
    pub j: usize,
    pub rmse: f64,
    pub bias: f64,
    pub sd: f64,
}

/// Agreement statistics between the two feasible variance estimators and the
/// infeasible oracle, at the contrast level, medians over replications.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarianceAgreement {
    pub median_fm_pi_gap: f64,
    pub median_fm_rel_err: f64,
    pub median_pi_rel_err: f64,
}

/// Aggregated Monte Carlo results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McReport {
    pub replications: usize,
    pub failures: usize,
    pub failure_reasons: BTreeMap<String, usize>,
    pub true_contrast: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage_95: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rejection_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_estimate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_selected_j: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sd_selected_j: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance_agreement: Option<VarianceAgreement>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse_curve: Option<Vec<McCurvePoint>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub empirical_optimal_j: Option<usize>,
}

struct CoverageRep {
    estimate: f64,
    covered: bool,
    rejected: bool,
    mean_j: f64,
    fm_pi_gap: Option<f64>,
    fm_rel_err: Option<f64>,
    pi_rel_err: Option<f64>,
}

fn resolve_j_sequence(
    panel: &Panel,
    j_rule: &JRule,
    z_h: &[f64],
    z_l: &[f64],
) -> Result<Vec<usize>> {
    match j_rule {
        JRule::Fixed { j } => Ok(vec![*j; panel.t_len()]),
        JRule::Star { grid } => {
            let g = grid.clone().unwrap_or_else(|| default_grid(panel));
            Ok(select_j_star(panel, z_h, z_l, &g, Weighting::Equal)?.j_star_sequence)
        }
        JRule::Factor { grid } => {
            let g = grid.clone().unwrap_or_else(|| default_grid(panel));
            Ok(select_j_factor(panel, z_h, z_l, &g, Weighting::Equal)?.j_factor_sequence)
        }
    }
}

/// Runs the full pipeline once per replication and reports coverage of the
/// true contrast at nominal 95%, the rejection rate of the zero null, RMSE,
/// selected-J summaries, and variance-agreement medians.
///
/// Per-replication failures are counted by reason; a failure rate above 1%
/// fails the whole experiment.
pub fn mc_coverage(
    spec: &DgpSpec,
    reps: usize,
    j_rule: &JRule,
    z_h: &[f64],
    z_l: &[f64],
    variance: HmlVariance,
) -> Result<McReport> {
    if reps < 100 {
        return Err(Error::InvalidSpec("coverage runs need reps >= 100".into()));
    }
    spec.validate()?;
    let true_delta = spec.true_contrast(z_h, z_l);
    let crit = normal_critical_5pct();
    let results: Vec<std::result::Result<CoverageRep, String>> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            run_coverage_rep(spec, rep, j_rule, z_h, z_l, variance, true_delta, crit)
                .map_err(|e| e.to_string())
        })
        .collect();

    let mut ok = Vec::with_capacity(reps);
    let mut failure_reasons: BTreeMap<String, usize> = BTreeMap::new();
    for r in results {
        match r {
            Ok(rep) => ok.push(rep),
            Err(reason) => *failure_reasons.entry(reason).or_insert(0) += 1,
        }
    }
    let failures = reps - ok.len();
    if failures * 100 > reps {
        let sample = failure_reasons
            .keys()
            .next()
            .cloned()
            .unwrap_or_default();
        return Err(Error::FailureRateExceeded {
            failed: failures,
            total: reps,
            sample,
        });
    }
    let m = ok.len() as f64;
    let coverage = ok.iter().filter(|r| r.covered).count() as f64 / m;
    let rejection = ok.iter().filter(|r| r.rejected).count() as f64 / m;
    let mse = ok
        .iter()
        .map(|r| (r.estimate - true_delta) * (r.estimate - true_delta))
        .sum::<f64>()
        / m;
    let mean_est = ok.iter().map(|r| r.estimate).sum::<f64>() / m;
    let mean_j = ok.iter().map(|r| r.mean_j).sum::<f64>() / m;
    let sd_j = (ok.iter().map(|r| (r.mean_j - mean_j) * (r.mean_j - mean_j)).sum::<f64>()
        / m)
        .sqrt();
    let gaps: Vec<f64> = ok.iter().filter_map(|r| r.fm_pi_gap).collect();
    let fm_errs: Vec<f64> = ok.iter().filter_map(|r| r.fm_rel_err).collect();
    let pi_errs: Vec<f64> = ok.iter().filter_map(|r| r.pi_rel_err).collect();
    let variance_agreement = if gaps.is_empty() {
        None
    } else {
        Some(VarianceAgreement {
            median_fm_pi_gap: median(&gaps),
            median_fm_rel_err: median(&fm_errs),
            median_pi_rel_err: median(&pi_errs),
        })
    };
    Ok(McReport {
        replications: reps,
        failures,
        failure_reasons,
        true_contrast: true_delta,
        coverage_95: Some(coverage),
        rejection_rate: Some(rejection),
        rmse: Some(mse.sqrt()),
        mean_estimate: Some(mean_est),
        mean_selected_j: Some(mean_j),
        sd_selected_j: Some(sd_j),
        variance_agreement,
        mse_curve: None,
        empirical_optimal_j: None,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_coverage_rep(
    spec: &DgpSpec,
    rep: u64,
    j_rule: &JRule,
    z_h: &[f64],
    z_l: &[f64],
    variance: HmlVariance,
    true_delta: f64,
    crit: f64,
) -> Result<CoverageRep> {
    let drawn = draw_panel_replication(spec, rep)?;
    let j_seq = resolve_j_sequence(&drawn.panel, j_rule, z_h, z_l)?;
    let series = fit_series(&drawn.panel, &JSpec::PerPeriod(j_seq.clone()), Weighting::Equal)?;
    let contrast = hml_contrast(&series, z_h, z_l)?;
    let (v_fm, v_pi) = contrast_variances(&series, z_h, z_l)?;
    let v_used = match variance {
        HmlVariance::FamaMacbeth => v_fm,
        HmlVariance::PlugIn => v_pi,
        HmlVariance::FmDifferenceTrace => var_fm(&contrast.per_period)?,
    };
    let se = v_used.max(0.0).sqrt();
    let covered = (contrast.value - true_delta).abs() <= crit * se;
    let rejected = contrast.value.abs() > crit * se;
    let v_or = infeasible_variance(&series, &drawn.sigma2, z_h)?
        + infeasible_variance(&series, &drawn.sigma2, z_l)?;
    let (gap, fm_err, pi_err) = if v_or > 0.0 {
        (
            Some((v_fm - v_pi).abs() / v_or),
            Some((v_fm - v_or).abs() / v_or),
            Some((v_pi - v_or).abs() / v_or),
        )
    } else {
        (None, None, None)
    };
    let mean_j = j_seq.iter().sum::<usize>() as f64 / j_seq.len() as f64;
    Ok(CoverageRep {
        estimate: contrast.value,
        covered,
        rejected,
        mean_j,
        fm_pi_gap: gap,
        fm_rel_err: fm_err,
        pi_rel_err: pi_err,
    })
}

fn contrast_variances(series: &FitSeries, z_h: &[f64], z_l: &[f64]) -> Result<(f64, f64)> {
    let high = crate::estimator::mu_hat(series, z_h)?;
    let low = crate::estimator::mu_hat(series, z_l)?;
    let v_fm = var_fm(&high.per_period)? + var_fm(&low.per_period)?;
    let v_pi = var_pi(series, z_h)? + var_pi(series, z_l)?;
    Ok((v_fm, v_pi))
}

/// Empirical RMSE of the contrast at each candidate `J`, sharing the drawn
/// panels across candidates. The argmin over the grid is reported as the
/// empirical optimum and serves as the tuning module's oracle.
pub fn mc_mse_curve(
    spec: &DgpSpec,
    reps: usize,
    j_grid: &[usize],
    z_h: &[f64],
    z_l: &[f64],
) -> Result<McReport> {
    if reps < 100 {
        return Err(Error::InvalidSpec("MSE curves need reps >= 100".into()));
    }
    if j_grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    spec.validate()?;
    let mut grid = j_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let true_delta = spec.true_contrast(z_h, z_l);
    let results: Vec<std::result::Result<Vec<f64>, String>> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let run = || -> Result<Vec<f64>> {
                let drawn = draw_panel_replication(spec, rep)?;
                let mut estimates = Vec::with_capacity(grid.len());
                for &j in &grid {
                    let series =
                        fit_series(&drawn.panel, &JSpec::Fixed(j), Weighting::Equal)?;
                    estimates.push(hml_contrast(&series, z_h, z_l)?.value);
                }
                Ok(estimates)
            };
            run().map_err(|e| e.to_string())
        })
        .collect();

    let mut ok: Vec<Vec<f64>> = Vec::with_capacity(reps);
    let mut failure_reasons: BTreeMap<String, usize> = BTreeMap::new();
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(reason) => *failure_reasons.entry(reason).or_insert(0) += 1,
        }
    }
    let failures = reps - ok.len();
    if failures * 100 > reps {
        let sample = failure_reasons.keys().next().cloned().unwrap_or_default();
        return Err(Error::FailureRateExceeded {
            failed: failures,
            total: reps,
            sample,
        });
    }
    let m = ok.len() as f64;
    let mut curve = Vec::with_capacity(grid.len());
    for (gi, &j) in grid.iter().enumerate() {
        let ests: Vec<f64> = ok.iter().map(|v| v[gi]).collect();
        let mean = ests.iter().sum::<f64>() / m;
        let mse = ests
            .iter()
            .map(|e| (e - true_delta) * (e - true_delta))
            .sum::<f64>()
            / m;
        let var = ests.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / m;
        curve.push(McCurvePoint {
            j,
            rmse: mse.sqrt(),
            bias: mean - true_delta,
            sd: var.sqrt(),
        });
    }
    let optimum = curve
        .iter()
        .min_by(|a, b| a.rmse.partial_cmp(&b.rmse).expect("finite rmse"))
        .map(|p| p.j);
    Ok(McReport {
        replications: reps,
        failures,
        failure_reasons,
        true_contrast: true_delta,
        coverage_95: None,
        rejection_rate: None,
        rmse: None,
        mean_estimate: None,
        mean_selected_j: None,
        sd_selected_j: None,
        variance_agreement: None,
        mse_curve: Some(curve),
        empirical_optimal_j: optimum,
    })
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Named experiment presets reachable from the command line.
pub fn preset(name: &str, seed: u64) -> Option<DgpSpec> {
    match name {
        "null" => Some(DgpSpec {
            mu: MuFamily::Constant { level: 0.0 },
            d: 1,
            beta: None,
            x_law: None,
            noise: NoiseRule::Homoskedastic { sigma: 1.0 },
            z_law: ZLaw::Uniform,
            n_schedule: NSchedule::Constant { n: 500 },
            t_periods: 50,
            seed,
        }),
        "quadratic" => Some(DgpSpec {
            mu: MuFamily::Quadratic { coeff: 1.0 },
            d: 1,
            beta: None,
            x_law: None,
            noise: NoiseRule::Homoskedastic { sigma: 0.5 },
            z_law: ZLaw::Uniform,
            n_schedule: NSchedule::Constant { n: 500 },
            t_periods: 50,
            seed,
        }),
        "figure1" => Some(figure1_spec(50, seed)),
        _ => None,
    }
}

/// The introductory-example DGP: n = 500, characteristics Beta(1,1) in odd
/// and Beta(1.2,1.2) in even periods, a smooth sine mean, moderate noise.
pub fn figure1_spec(t_periods: usize, seed: u64) -> DgpSpec {
    DgpSpec {
        mu: MuFamily::Sine {
            amplitude: 1.0,
            cycles: 1.0,
        },
        d: 1,
        beta: None,
        x_law: None,
        noise: NoiseRule::Homoskedastic { sigma: 0.75 },
        z_law: ZLaw::AlternatingBeta,
        n_schedule: NSchedule::Constant { n: 500 },
        t_periods,
        seed,
    }
}

/// One estimated step-function trace for a (J, T) combination.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TracePanel {
    pub j: usize,
    pub t_periods: usize,
    pub grid: Vec<f64>,
    pub mu_hat: Vec<f64>,
    pub mu_true: Vec<f64>,
    pub sup_abs_error: f64,
    pub mean_abs_error: f64,
    /// Mean over grid points and periods of the estimated sampling variance
    /// of one cell's mean, `s2_t(z) / N_t(z)`.
    pub mean_cell_variance: f64,
}

/// The six traces of the introductory example: J in {4, 10} by T in
/// {1, 2, 50}, all from one seed.
pub fn figure1_traces(seed: u64) -> Result<Vec<TracePanel>> {
    let grid: Vec<f64> = (1..=99).map(|i| i as f64 / 100.0).collect();
    let mut panels = Vec::new();
    for &j in &[4usize, 10] {
        for &t in &[1usize, 2, 50] {
            let spec = figure1_spec(t, seed);
            let drawn = draw_panel(&spec)?;
            let series = fit_series(&drawn.panel, &JSpec::Fixed(j), Weighting::Equal)?;
            let mut mu_hat_v = Vec::with_capacity(grid.len());
            let mut mu_true_v = Vec::with_capacity(grid.len());
            let mut sup = 0.0f64;
            let mut mean_abs = 0.0f64;
            let mut mean_var = 0.0f64;
            for &g in &grid {
                let est = crate::estimator::mu_hat(&series, &[g])?;
                let truth = spec.true_mu(&[g]);
                let err = (est.value - truth).abs();
                sup = sup.max(err);
                mean_abs += err;
                let mut cell_var = 0.0;
                for fit in &series.fits {
                    cell_var += fit.cell_residual_variance(&[g])?
                        / fit.cell_count(&[g])?.max(1) as f64;
                }
                mean_var += cell_var / series.fits.len() as f64;
                mu_hat_v.push(est.value);
                mu_true_v.push(truth);
            }
            mean_abs /= grid.len() as f64;
            mean_var /= grid.len() as f64;
            panels.push(TracePanel {
                j,
                t_periods: t,
                grid: grid.clone(),
                mu_hat: mu_hat_v,
                mu_true: mu_true_v,
                sup_abs_error: sup,
                mean_abs_error: mean_abs,
                mean_cell_variance: mean_var,
            });
        }
    }
    Ok(panels)
}
