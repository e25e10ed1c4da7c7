//! Python bindings: panels, fits, tests, portfolio-count selection, and the
//! Monte Carlo harness.

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use portsort::estimator as est;
use portsort::inference as inf;
use portsort::simulate as sim;
use portsort::tuning;

fn to_py_err(e: portsort::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use pyo3::IntoPyObjectExt;
    match v {
        serde_json::Value::Null => Ok(py.None().into_bound(py)),
        serde_json::Value::Bool(b) => b.into_bound_py_any(py),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_bound_py_any(py)
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_bound_py_any(py)
            }
        }
        serde_json::Value::String(s) => s.into_bound_py_any(py),
        serde_json::Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            Ok(list.into_any())
        }
        serde_json::Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, val) in map {
                dict.set_item(k, json_to_py(py, val)?)?;
            }
            Ok(dict.into_any())
        }
    }
}

fn serialize_to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let value = serde_json::to_value(v)
        .map_err(|e| PyValueError::new_err(format!("serialization failure: {e}")))?;
    json_to_py(py, &value)
}

fn parse_weighting(name: &str) -> PyResult<est::Weighting> {
    match name {
        "equal" => Ok(est::Weighting::Equal),
        "weights" | "by_weight_column" => Ok(est::Weighting::ByWeightColumn),
        other => Err(PyValueError::new_err(format!(
            "unknown weighting '{other}' (equal or weights)"
        ))),
    }
}

fn parse_variance(name: &str) -> PyResult<inf::HmlVariance> {
    match name {
        "fm" => Ok(inf::HmlVariance::FamaMacbeth),
        "pi" => Ok(inf::HmlVariance::PlugIn),
        "fm_difference" => Ok(inf::HmlVariance::FmDifferenceTrace),
        other => Err(PyValueError::new_err(format!(
            "unknown variance '{other}' (fm, pi, fm_difference)"
        ))),
    }
}

/// An immutable unbalanced panel of returns, characteristics, controls, and
/// optional weights.
#[pyclass(frozen)]
pub struct Panel {
    inner: portsort::Panel,
}

#[pymethods]
impl Panel {
    /// Builds a panel from long-format columns: one entry per (time, asset)
    /// row. Rows are grouped by `times` in ascending order.
    #[staticmethod]
    #[pyo3(signature = (times, asset_ids, returns, characteristics, controls=None, weights=None))]
    fn from_long(
        times: Vec<i64>,
        asset_ids: Vec<String>,
        returns: Vec<f64>,
        characteristics: Vec<Vec<f64>>,
        controls: Option<Vec<Vec<f64>>>,
        weights: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let n = times.len();
        if asset_ids.len() != n || returns.len() != n || characteristics.len() != n {
            return Err(PyValueError::new_err(
                "times, asset_ids, returns, characteristics must share one length",
            ));
        }
        if let Some(c) = &controls {
            if c.len() != n {
                return Err(PyValueError::new_err("controls length mismatch"));
            }
        }
        if let Some(w) = &weights {
            if w.len() != n {
                return Err(PyValueError::new_err("weights length mismatch"));
            }
        }
        let mut groups: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (i, &t) in times.iter().enumerate() {
            groups.entry(t).or_default().push(i);
        }
        let mut periods = Vec::with_capacity(groups.len());
        for (t, rows) in groups {
            let period = portsort::PanelPeriod::from_rows(
                t,
                rows.iter().map(|&i| asset_ids[i].clone()).collect(),
                rows.iter().map(|&i| returns[i]).collect(),
                rows.iter().map(|&i| characteristics[i].clone()).collect(),
                controls
                    .as_ref()
                    .map(|c| rows.iter().map(|&i| c[i].clone()).collect())
                    .unwrap_or_default(),
                weights
                    .as_ref()
                    .map(|w| rows.iter().map(|&i| w[i]).collect()),
            )
            .map_err(to_py_err)?;
            periods.push(period);
        }
        Ok(Self {
            inner: portsort::Panel::new(periods).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn d_x(&self) -> usize {
        self.inner.d_x()
    }

    #[getter]
    fn t_len(&self) -> usize {
        self.inner.t_len()
    }

    fn n_per_period(&self) -> Vec<usize> {
        self.inner.periods.iter().map(|p| p.n()).collect()
    }

    /// Diagnostics report as a dict; violations are flagged, not raised.
    fn validate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        serialize_to_py(py, &portsort::validate(&self.inner))
    }

    /// New panel with characteristic column `column` z-scored per period.
    fn zscore(&self, column: usize) -> PyResult<Self> {
        Ok(Self {
            inner: portsort::zscore_by_period(&self.inner, column).map_err(to_py_err)?,
        })
    }

    /// New panel with the natural log applied to characteristic column
    /// `column`.
    fn log(&self, column: usize) -> PyResult<Self> {
        Ok(Self {
            inner: portsort::log_by_period(&self.inner, column).map_err(to_py_err)?,
        })
    }
}

/// Per-period fits of the portfolio estimator.
#[pyclass(frozen)]
pub struct FitSeries {
    inner: est::FitSeries,
}

#[pymethods]
impl FitSeries {
    #[getter]
    fn j_sequence(&self) -> Vec<usize> {
        self.inner.j_sequence.clone()
    }

    #[getter]
    fn t_len(&self) -> usize {
        self.inner.t_len()
    }

    /// Per-period control coefficients (empty lists when d_x = 0).
    fn beta_hats(&self) -> Vec<Vec<f64>> {
        self.inner
            .fits
            .iter()
            .map(|f| f.beta_hat.iter().copied().collect())
            .collect()
    }
}

/// Outcome of a two-sided test.
#[pyclass(frozen)]
pub struct TestResult {
    inner: inf::TestResult,
}

#[pymethods]
impl TestResult {
    #[getter]
    fn estimate(&self) -> f64 {
        self.inner.estimate
    }

    #[getter]
    fn se(&self) -> f64 {
        self.inner.se
    }

    #[getter]
    fn t_stat(&self) -> f64 {
        self.inner.t_stat
    }

    #[getter]
    fn p_value(&self) -> f64 {
        self.inner.p_value
    }

    #[getter]
    fn reject_5pct(&self) -> bool {
        self.inner.reject_5pct
    }

    #[getter]
    fn shared_cell_periods(&self) -> Vec<i64> {
        self.inner.shared_cell_periods.clone()
    }

    #[getter]
    fn degenerate_variance(&self) -> bool {
        self.inner.degenerate_variance
    }

    fn __repr__(&self) -> String {
        format!(
            "TestResult(estimate={:.6}, se={:.6}, t_stat={:.3}, p_value={:.4})",
            self.inner.estimate, self.inner.se, self.inner.t_stat, self.inner.p_value
        )
    }
}

/// Fits every period at `j` portfolios per dimension (an int, or a
/// per-period list).
#[pyfunction]
#[pyo3(signature = (panel, j, weighting="equal"))]
fn fit_series(panel: &Panel, j: &Bound<'_, PyAny>, weighting: &str) -> PyResult<FitSeries> {
    let spec = if let Ok(fixed) = j.extract::<usize>() {
        est::JSpec::Fixed(fixed)
    } else {
        est::JSpec::PerPeriod(j.extract::<Vec<usize>>().map_err(|_| {
            PyValueError::new_err("j must be an int or a list of per-period ints")
        })?)
    };
    Ok(FitSeries {
        inner: est::fit_series(&panel.inner, &spec, parse_weighting(weighting)?)
            .map_err(to_py_err)?,
    })
}

/// Time-averaged estimate at a point.
#[pyfunction]
fn mu_hat(series: &FitSeries, z: Vec<f64>) -> PyResult<f64> {
    Ok(est::mu_hat(&series.inner, &z).map_err(to_py_err)?.value)
}

/// Per-period trace of the estimate at a point.
#[pyfunction]
fn mu_hat_trace(series: &FitSeries, z: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(est::mu_hat(&series.inner, &z).map_err(to_py_err)?.per_period)
}

/// `sum_k coeff_k * mu_hat(point_k)` for arbitrary terms.
#[pyfunction]
fn linear_functional(series: &FitSeries, terms: Vec<(Vec<f64>, f64)>) -> PyResult<f64> {
    Ok(est::linear_functional(&series.inner, &terms)
        .map_err(to_py_err)?
        .value)
}

/// Both variance estimates at a point, as `(v_fm, v_pi)`.
#[pyfunction]
fn variances(series: &FitSeries, z: Vec<f64>) -> PyResult<(f64, f64)> {
    let v = inf::variance_estimate(&series.inner, &z).map_err(to_py_err)?;
    Ok((v.v_fm, v.v_pi))
}

/// Two-sided high-minus-low test.
#[pyfunction]
#[pyo3(signature = (series, z_h, z_l, variance="fm"))]
fn t_test_hml(
    series: &FitSeries,
    z_h: Vec<f64>,
    z_l: Vec<f64>,
    variance: &str,
) -> PyResult<TestResult> {
    Ok(TestResult {
        inner: inf::t_test_hml(&series.inner, &z_h, &z_l, parse_variance(variance)?)
            .map_err(to_py_err)?,
    })
}

/// Fama-MacBeth inference on `a' beta`.
#[pyfunction]
fn beta_fm_inference(series: &FitSeries, a: Vec<f64>) -> PyResult<TestResult> {
    Ok(TestResult {
        inner: inf::beta_fm_inference(&series.inner, &a).map_err(to_py_err)?,
    })
}

fn tuning_to_py<'py>(py: Python<'py>, r: &tuning::TuningResult) -> PyResult<Bound<'py, PyAny>> {
    serialize_to_py(py, r)
}

/// Inference-optimal portfolio-count selection; returns the full tuning
/// record as a dict.
#[pyfunction]
#[pyo3(signature = (panel, z_h, z_l, grid=None, weighting="equal"))]
fn select_j_star<'py>(
    py: Python<'py>,
    panel: &Panel,
    z_h: Vec<f64>,
    z_l: Vec<f64>,
    grid: Option<Vec<usize>>,
    weighting: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let g = grid.unwrap_or_else(|| tuning::default_grid(&panel.inner));
    let r = tuning::select_j_star(&panel.inner, &z_h, &z_l, &g, parse_weighting(weighting)?)
        .map_err(to_py_err)?;
    tuning_to_py(py, &r)
}

/// Factor-construction-optimal portfolio-count selection.
#[pyfunction]
#[pyo3(signature = (panel, z_h, z_l, grid=None, weighting="equal"))]
fn select_j_factor<'py>(
    py: Python<'py>,
    panel: &Panel,
    z_h: Vec<f64>,
    z_l: Vec<f64>,
    grid: Option<Vec<usize>>,
    weighting: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let g = grid.unwrap_or_else(|| tuning::default_grid(&panel.inner));
    let r = tuning::select_j_factor(&panel.inner, &z_h, &z_l, &g, parse_weighting(weighting)?)
        .map_err(to_py_err)?;
    tuning_to_py(py, &r)
}

/// A named experiment preset as a DGP-spec JSON string.
#[pyfunction]
fn preset_spec(name: &str, seed: u64) -> PyResult<String> {
    let spec = sim::preset(name, seed).ok_or_else(|| {
        PyValueError::new_err(format!(
            "unknown preset '{name}' (figure1, null, quadratic)"
        ))
    })?;
    serde_json::to_string(&spec).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn spec_from_json(spec_json: &str) -> PyResult<sim::DgpSpec> {
    serde_json::from_str(spec_json)
        .map_err(|e| PyValueError::new_err(format!("bad DGP spec: {e}")))
}

/// Draws the synthetic panel for `replication` of the spec's seed.
#[pyfunction]
#[pyo3(signature = (spec_json, replication=0))]
fn draw_panel(spec_json: &str, replication: u64) -> PyResult<Panel> {
    let spec = spec_from_json(spec_json)?;
    Ok(Panel {
        inner: sim::draw_panel_replication(&spec, replication)
            .map_err(to_py_err)?
            .panel,
    })
}

fn j_rule_from(j: Option<usize>, rule: &str) -> PyResult<sim::JRule> {
    match (j, rule) {
        (Some(j), "fixed") => Ok(sim::JRule::Fixed { j }),
        (None, "star") => Ok(sim::JRule::Star { grid: None }),
        (None, "factor") => Ok(sim::JRule::Factor { grid: None }),
        _ => Err(PyValueError::new_err(
            "give j with rule='fixed', or rule in {star, factor} without j",
        )),
    }
}

/// Coverage / size / RMSE experiment; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (spec_json, reps, z_h, z_l, j=None, rule="star", variance="fm"))]
#[allow(clippy::too_many_arguments)]
fn mc_coverage<'py>(
    py: Python<'py>,
    spec_json: &str,
    reps: usize,
    z_h: Vec<f64>,
    z_l: Vec<f64>,
    j: Option<usize>,
    rule: &str,
    variance: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let spec = spec_from_json(spec_json)?;
    let report = sim::mc_coverage(
        &spec,
        reps,
        &j_rule_from(j, rule)?,
        &z_h,
        &z_l,
        parse_variance(variance)?,
    )
    .map_err(to_py_err)?;
    serialize_to_py(py, &report)
}

/// Empirical RMSE-versus-J curve; returns the report as a dict.
#[pyfunction]
fn mc_mse_curve<'py>(
    py: Python<'py>,
    spec_json: &str,
    reps: usize,
    j_grid: Vec<usize>,
    z_h: Vec<f64>,
    z_l: Vec<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let spec = spec_from_json(spec_json)?;
    let report = sim::mc_mse_curve(&spec, reps, &j_grid, &z_h, &z_l).map_err(to_py_err)?;
    serialize_to_py(py, &report)
}

/// The six introductory-example traces as dicts.
#[pyfunction]
fn figure1_traces<'py>(py: Python<'py>, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let traces = sim::figure1_traces(seed).map_err(to_py_err)?;
    serialize_to_py(py, &traces)
}

#[pymodule]
fn portsort_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Panel>()?;
    m.add_class::<FitSeries>()?;
    m.add_class::<TestResult>()?;
    m.add_function(wrap_pyfunction!(fit_series, m)?)?;
    m.add_function(wrap_pyfunction!(mu_hat, m)?)?;
    m.add_function(wrap_pyfunction!(mu_hat_trace, m)?)?;
    m.add_function(wrap_pyfunction!(linear_functional, m)?)?;
    m.add_function(wrap_pyfunction!(variances, m)?)?;
    m.add_function(wrap_pyfunction!(t_test_hml, m)?)?;
    m.add_function(wrap_pyfunction!(beta_fm_inference, m)?)?;
    m.add_function(wrap_pyfunction!(select_j_star, m)?)?;
    m.add_function(wrap_pyfunction!(select_j_factor, m)?)?;
    m.add_function(wrap_pyfunction!(preset_spec, m)?)?;
    m.add_function(wrap_pyfunction!(draw_panel, m)?)?;
    m.add_function(wrap_pyfunction!(mc_coverage, m)?)?;
    m.add_function(wrap_pyfunction!(mc_mse_curve, m)?)?;
    m.add_function(wrap_pyfunction!(figure1_traces, m)?)?;
    Ok(())
}
