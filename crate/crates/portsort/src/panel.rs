//! Panel data model, validation, and per-period characteristic transforms.
//!
//! A [`Panel`] holds one [`PanelPeriod`] per time index: returns, sorting
//! characteristics, optional linear controls, and optional portfolio weights
//! for every asset observed in that period. Panels are unbalanced by design;
//! each period carries its own cross-sectional size `n_t`.
//!
//! All types are immutable after construction and all operations are pure
//! functions returning new values, so they are safe to share across threads.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// One cross-section of the panel.
#[derive(Debug, Clone)]
pub struct PanelPeriod {
    /// Period index; strictly increasing across the panel but otherwise opaque.
    pub t: i64,
    /// Opaque asset identifiers, length `n_t`.
    pub asset_ids: Vec<String>,
    /// Decimal returns, length `n_t`.
    pub returns: DVector<f64>,
    /// Sorting characteristics, `n_t x d`.
    pub characteristics: DMatrix<f64>,
    /// Linear controls, `n_t x d_x` (`d_x` may be 0).
    pub controls: DMatrix<f64>,
    /// Portfolio weights; `None` means equal weighting.
    pub weights: Option<DVector<f64>>,
}

impl PanelPeriod {
    /// Builds a period from row-major data, checking that all leading
    /// dimensions agree and `n_t >= 1`.
    pub fn from_rows(
        t: i64,
        asset_ids: Vec<String>,
        returns: Vec<f64>,
        characteristics: Vec<Vec<f64>>,
        controls: Vec<Vec<f64>>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = returns.len();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        if asset_ids.len() != n {
            return Err(Error::PanelConstruction(format!(
                "period {t}: {} asset ids for {n} returns",
                asset_ids.len()
            )));
        }
        let d = characteristics.first().map_or(0, Vec::len);
        if d == 0 || characteristics.len() != n {
            return Err(Error::PanelConstruction(format!(
                "period {t}: characteristics must be n x d with n={n}, d >= 1"
            )));
        }
        let d_x = controls.first().map_or(0, Vec::len);
        if !controls.is_empty() && controls.len() != n {
            return Err(Error::PanelConstruction(format!(
                "period {t}: {} control rows for {n} returns",
                controls.len()
            )));
        }
        if let Some(w) = &weights {
            if w.len() != n {
                return Err(Error::PanelConstruction(format!(
                    "period {t}: {} weights for {n} returns",
                    w.len()
                )));
            }
        }
        let chars = matrix_from_rows(t, "characteristics", n, d, &characteristics)?;
        let ctrls = if d_x == 0 {
            DMatrix::zeros(n, 0)
        } else {
            matrix_from_rows(t, "controls", n, d_x, &controls)?
        };
        Ok(Self {
            t,
            asset_ids,
            returns: DVector::from_vec(returns),
            characteristics: chars,
            controls: ctrls,
            weights: weights.map(DVector::from_vec),
        })
    }

    /// Cross-sectional sample size `n_t`.
    pub fn n(&self) -> usize {
        self.returns.len()
    }
}

fn matrix_from_rows(
    t: i64,
    what: &str,
    n: usize,
    cols: usize,
    rows: &[Vec<f64>],
) -> Result<DMatrix<f64>> {
    let mut flat = Vec::with_capacity(n * cols);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::PanelConstruction(format!(
                "period {t}: {what} row {i} has {} entries, expected {cols}",
                row.len()
            )));
        }
        flat.extend_from_slice(row);
    }
    Ok(DMatrix::from_row_slice(n, cols, &flat))
}

/// An ordered collection of periods with a common characteristic dimension
/// `d` and control dimension `d_x`.
#[derive(Debug, Clone)]
pub struct Panel {
    pub periods: Vec<PanelPeriod>,
    d: usize,
    d_x: usize,
}

impl Panel {
    /// Assembles a panel, requiring at least one period, strictly increasing
    /// period indices, and identical `d` / `d_x` across periods.
    pub fn new(periods: Vec<PanelPeriod>) -> Result<Self> {
        let first = periods.first().ok_or(Error::EmptyInput)?;
        let (d, d_x) = (first.characteristics.ncols(), first.controls.ncols());
        for pair in periods.windows(2) {
            if pair[1].t <= pair[0].t {
                return Err(Error::PanelConstruction(format!(
                    "period indices must be strictly increasing: {} then {}",
                    pair[0].t, pair[1].t
                )));
            }
        }
        for p in &periods {
            if p.characteristics.ncols() != d {
                return Err(Error::DimensionMismatch {
                    context: "characteristic columns across periods",
                    expected: d,
                    actual: p.characteristics.ncols(),
                });
            }
            if p.controls.ncols() != d_x {
                return Err(Error::DimensionMismatch {
                    context: "control columns across periods",
                    expected: d_x,
                    actual: p.controls.ncols(),
                });
            }
        }
        Ok(Self { periods, d, d_x })
    }

    /// Characteristic dimension.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Control dimension.
    pub fn d_x(&self) -> usize {
        self.d_x
    }

    /// Number of periods `T`.
    pub fn t_len(&self) -> usize {
        self.periods.len()
    }

    /// Smallest cross-sectional sample size over periods.
    pub fn min_n(&self) -> usize {
        self.periods.iter().map(PanelPeriod::n).min().unwrap_or(0)
    }

    /// Mean cross-sectional sample size; the common scale `n` used when a
    /// single number must stand in for the whole `n_t` sequence.
    pub fn mean_n(&self) -> f64 {
        let total: usize = self.periods.iter().map(PanelPeriod::n).sum();
        total as f64 / self.t_len() as f64
    }
}

/// Per-period, per-column summary used by [`validate`].
#[derive(Debug, Clone, Serialize)]
pub struct ColumnStats {
    pub min: f64,
    pub max: f64,
    /// Sample standard deviation (divisor `n_t - 1`; 0 when `n_t == 1`).
    pub std: f64,
}

/// Weight summary for one period, present when the period carries weights.
#[derive(Debug, Clone, Serialize)]
pub struct WeightSummary {
    pub min: f64,
    pub max: f64,
    pub sum: f64,
}

/// Report produced by [`validate`]: summaries plus flagged invariant
/// violations. Violations are reported, never thrown.
#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    /// `n_t` per period.
    pub n_per_period: Vec<usize>,
    /// Period indices, aligned with `n_per_period`.
    pub period_index: Vec<i64>,
    /// Per period, per characteristic column: min/max/std.
    pub characteristic_stats: Vec<Vec<ColumnStats>>,
    /// Total count of (period, column) pairs with zero cross-sectional std.
    pub zero_variance_columns: usize,
    /// Per-period weight summary; `None` when the period has no weights.
    pub weight_summary: Vec<Option<WeightSummary>>,
    /// Human-readable invariant violations.
    pub violations: Vec<String>,
}

impl DiagnosticsReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Scans the panel and reports per-period summaries and any invariant
/// violations (non-finite entries, bad weights, zero-variance characteristic
/// columns) without mutating or rejecting the input.
pub fn validate(panel: &Panel) -> DiagnosticsReport {
    let mut report = DiagnosticsReport {
        n_per_period: Vec::new(),
        period_index: Vec::new(),
        characteristic_stats: Vec::new(),
        zero_variance_columns: 0,
        weight_summary: Vec::new(),
        violations: Vec::new(),
    };
    for p in &panel.periods {
        let n = p.n();
        report.n_per_period.push(n);
        report.period_index.push(p.t);

        for (i, r) in p.returns.iter().enumerate() {
            if !r.is_finite() {
                report
                    .violations
                    .push(format!("non-finite value, period {}, row {i}, returns", p.t));
            }
        }
        let mut stats = Vec::with_capacity(panel.d);
        for k in 0..panel.d {
            let col = p.characteristics.column(k);
            for (i, v) in col.iter().enumerate() {
                if !v.is_finite() {
                    report.violations.push(format!(
                        "non-finite value, period {}, row {i}, characteristic column {k}",
                        p.t
                    ));
                }
            }
            let s = column_stats(col.iter().copied());
            if s.std == 0.0 {
                report.zero_variance_columns += 1;
                report.violations.push(format!(
                    "zero cross-sectional std, period {}, column {k}",
                    p.t
                ));
            }
            stats.push(s);
        }
        report.characteristic_stats.push(stats);

        for k in 0..panel.d_x {
            for (i, v) in p.controls.column(k).iter().enumerate() {
                if !v.is_finite() {
                    report.violations.push(format!(
                        "non-finite value, period {}, row {i}, control column {k}",
                        p.t
                    ));
                }
            }
        }

        match &p.weights {
            None => report.weight_summary.push(None),
            Some(w) => {
                let mut sum = 0.0;
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for (i, v) in w.iter().enumerate() {
                    if !v.is_finite() {
                        report.violations.push(format!(
                            "non-finite value, period {}, row {i}, weights",
                            p.t
                        ));
                    } else if *v < 0.0 {
                        report
                            .violations
                            .push(format!("negative weight, period {}, row {i}", p.t));
                    }
                    sum += v;
                    lo = lo.min(*v);
                    hi = hi.max(*v);
                }
                if sum.is_nan() || sum <= 0.0 {
                    report
                        .violations
                        .push(format!("weight sum not strictly positive, period {}", p.t));
                }
                report.weight_summary.push(Some(WeightSummary {
                    min: lo,
                    max: hi,
                    sum,
                }));
            }
        }
    }
    report
}

fn column_stats(values: impl Iterator<Item = f64> + Clone) -> ColumnStats {
    let n = values.clone().count();
    let mean = values.clone().sum::<f64>() / n as f64;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut ss = 0.0;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
        ss += (v - mean) * (v - mean);
    }
    let std = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
    ColumnStats { min: lo, max: hi, std }
}

/// Replaces characteristic column `column` in every period by its
/// cross-sectional z-score `(v - mean_t) / std_t` with sample standard
/// deviation (divisor `n_t - 1`).
pub fn zscore_by_period(panel: &Panel, column: usize) -> Result<Panel> {
    check_column(panel, column)?;
    let mut out = panel.clone();
    for p in &mut out.periods {
        let n = p.n();
        let col = p.characteristics.column(column);
        let mean = col.sum() / n as f64;
        let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        let std = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
        if std <= 0.0 {
            return Err(Error::ZeroVariance {
                period: p.t,
                column,
            });
        }
        for i in 0..n {
            p.characteristics[(i, column)] = (p.characteristics[(i, column)] - mean) / std;
        }
    }
    Ok(out)
}

/// Applies the natural logarithm elementwise to characteristic column
/// `column` in every period; every value must be strictly positive.
pub fn log_by_period(panel: &Panel, column: usize) -> Result<Panel> {
    check_column(panel, column)?;
    let mut out = panel.clone();
    for p in &mut out.periods {
        for i in 0..p.n() {
            let v = p.characteristics[(i, column)];
            if v.is_nan() || v <= 0.0 {
                return Err(Error::NonPositiveValue { period: p.t, row: i });
            }
            p.characteristics[(i, column)] = v.ln();
        }
    }
    Ok(out)
}

fn check_column(panel: &Panel, column: usize) -> Result<()> {
    if column >= panel.d {
        return Err(Error::DimensionMismatch {
            context: "characteristic column index",
            expected: panel.d,
            actual: column,
        });
    }
    Ok(())
}
