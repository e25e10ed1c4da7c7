//! Quantile-sorted portfolio estimation and inference on unbalanced return
//! panels.
//!
//! The estimator sorts assets into per-period quantile-spaced portfolios of
//! one or more characteristics, fits a constant within each cell after
//! projecting out linear controls, and averages the per-period step
//! functions over time. On top of that sit two variance estimators with the
//! high-minus-low test, data-driven selection of the number of portfolios,
//! and a deterministic Monte Carlo harness used to validate all of it.

pub mod cli;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod io;
pub mod panel;
pub mod portfolio;
pub mod simulate;
pub mod tuning;

pub use error::{Error, Result};
pub use estimator::{
    fit_period, fit_series, linear_functional, mu_hat, mu_hat_t, mu_hat_with_policy,
    EmptyCellPolicy, FitSeries, JSpec, PeriodFit, PointEstimate, Weighting,
};
pub use inference::{
    beta_fm_inference, infeasible_variance, t_test_hml, t_test_hml_with, var_fm, var_pi,
    variance_estimate, HmlVariance, ReferenceDist, TestResult, VarianceEstimate,
};
pub use panel::{log_by_period, validate, zscore_by_period, DiagnosticsReport, Panel, PanelPeriod};
pub use portfolio::{assign_cells, marginal_breakpoints, partition_matrix, Partition};
pub use simulate::{
    draw_panel, draw_panel_replication, figure1_spec, figure1_traces, mc_coverage, mc_mse_curve,
    DgpSpec, DrawnPanel, JRule, McReport, MuFamily, NSchedule, NoiseRule, TracePanel, XLaw, ZLaw,
};
pub use tuning::{
    bias_constant_hat, default_grid, select_j_factor, select_j_star, variance_constants_hat,
    TuningObjective, TuningResult,
};
