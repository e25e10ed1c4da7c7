//! Command-line surface: `estimate`, `test`, `select-j`, and `simulate`.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure
//! (singular design), 5 evaluation failure (empty cell). Failures emit a
//! machine-readable error record on stderr.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::estimator::{fit_series, mu_hat, FitSeries, JSpec, Weighting};
use crate::inference::{normal_quantile, t_test_hml, HmlVariance};
use crate::io::{
    fmt17, read_panel_csv, to_jsonl, write_output, BetaPeriod, ColumnMap, EstimatePoint,
    IngestError, IngestSummary, JSequencePoint, Record, RunMeta, TestRecord, TuningRecord,
};
use crate::panel::{validate, Panel};
use crate::simulate::{
    figure1_traces, mc_coverage, mc_mse_curve, preset, DgpSpec, JRule, McReport,
};
use crate::tuning::{default_grid, select_j_factor, select_j_star, TuningObjective, TuningResult};

#[derive(Parser, Debug)]
#[command(
    name = "portsort",
    version,
    about = "Quantile-sorted portfolio estimation, inference, portfolio-count selection, and Monte Carlo experiments on long-format return panels"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Estimate the return-characteristic function on a grid.
    Estimate(EstimateArgs),
    /// Two-sided high-minus-low test between two evaluation points.
    Test(TestArgs),
    /// Select optimal portfolio counts (inference and factor objectives).
    SelectJ(SelectJArgs),
    /// Run a Monte Carlo experiment or emit example traces.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Long-format delimited input with a header row, one row per (time, asset).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long = "time-col")]
    pub time_col: String,
    #[arg(long = "asset-col")]
    pub asset_col: String,
    #[arg(long = "return-col")]
    pub return_col: String,
    /// Sorting characteristic columns, comma separated.
    #[arg(long = "char-cols", value_delimiter = ',', required = true)]
    pub char_cols: Vec<String>,
    /// Linear control columns, comma separated.
    #[arg(long = "control-cols", value_delimiter = ',')]
    pub control_cols: Vec<String>,
    /// Portfolio weight column; absent means equal weighting.
    #[arg(long = "weight-col")]
    pub weight_col: Option<String>,
    /// Per-period transform, `zscore:COL` or `log:COL`; repeatable, applied
    /// in order.
    #[arg(long = "transform")]
    pub transforms: Vec<String>,
}

#[derive(Args, Debug, Default)]
pub struct EvalArgs {
    /// High evaluation point (comma-separated for d > 1).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub zh: Option<Vec<f64>>,
    /// Low evaluation point.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub zl: Option<Vec<f64>>,
    /// High point as standard-normal quantile level(s) in (0,1), resolved on
    /// the z-scored characteristic scale.
    #[arg(long = "zh-q", value_delimiter = ',')]
    pub zh_q: Option<Vec<f64>>,
    /// Low point as quantile level(s).
    #[arg(long = "zl-q", value_delimiter = ',')]
    pub zl_q: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
pub struct JArgs {
    /// Fixed portfolio count, or a comma-separated per-period list.
    #[arg(long)]
    pub j: Option<String>,
    /// Data-driven rule: star (inference-optimal) or factor.
    #[arg(long = "j-rule", value_enum)]
    pub j_rule: Option<JRuleArg>,
    /// Candidate grid for the data-driven rules, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
pub struct OutArgs {
    /// Output path; stdout when absent. File writes are atomic.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Jsonl)]
    pub format: FormatArg,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum JRuleArg {
    Fixed,
    Star,
    Factor,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum FormatArg {
    Jsonl,
    Csv,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarianceArg {
    Fm,
    Pi,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub j: JArgs,
    #[command(flatten)]
    pub eval: EvalArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub j: JArgs,
    #[command(flatten)]
    pub eval: EvalArgs,
    #[arg(long, value_enum, default_value_t = VarianceArg::Fm)]
    pub variance: VarianceArg,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct SelectJArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub eval: EvalArgs,
    /// Candidate grid, comma separated; defaults to a geometric grid.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Named experiment preset: figure1, null, or quadratic.
    #[arg(long)]
    pub preset: Option<String>,
    /// JSON experiment configuration file (full DGP control).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    /// Master seed; defaults to 1 for presets and to the config file's seed
    /// otherwise.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub j: JArgs,
    #[command(flatten)]
    pub eval: EvalArgs,
    #[arg(long, value_enum, default_value_t = VarianceArg::Fm)]
    pub variance: VarianceArg,
    #[command(flatten)]
    pub out: OutArgs,
}

/// Experiment configuration file for `simulate --config`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dgp: DgpSpec,
    #[serde(default)]
    pub reps: Option<usize>,
    #[serde(default)]
    pub j_rule: Option<JRule>,
    #[serde(default)]
    pub z_h: Option<Vec<f64>>,
    #[serde(default)]
    pub z_l: Option<Vec<f64>>,
    /// "fm" or "pi".
    #[serde(default)]
    pub variance: Option<String>,
    /// "coverage", "mse_curve", or "figure1".
    #[serde(default)]
    pub mode: Option<String>,
    #[serde(default)]
    pub j_grid: Option<Vec<usize>>,
}

/// CLI failures carrying their exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numerical(String),
    Evaluation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Evaluation(_) => 5,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m)
            | CliError::Data(m)
            | CliError::Numerical(m)
            | CliError::Evaluation(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match &e {
            Error::EmptyCellAt { .. } => CliError::Evaluation(e.to_string()),
            Error::PeriodFitFailed { .. } | Error::FailureRateExceeded { .. } => {
                CliError::Numerical(e.to_string())
            }
            Error::EmptyInput
            | Error::ZeroVariance { .. }
            | Error::NonPositiveValue { .. }
            | Error::PanelConstruction(_) => CliError::Data(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::ColumnNotFound(_) => CliError::Config(e.to_string()),
            IngestError::Panel(inner) => inner.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(format!("i/o failure: {e}"))
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Estimate(args) => cmd_estimate(args),
        Command::Test(args) => cmd_test(args),
        Command::SelectJ(args) => cmd_select_j(args),
        Command::Simulate(args) => cmd_simulate(args),
    }
}

fn load_panel(data: &DataArgs) -> Result<(Panel, IngestSummary), CliError> {
    let map = ColumnMap {
        time: data.time_col.clone(),
        asset: data.asset_col.clone(),
        ret: data.return_col.clone(),
        characteristics: data.char_cols.clone(),
        controls: data.control_cols.clone(),
        weight: data.weight_col.clone(),
    };
    let (mut panel, summary) = read_panel_csv(&data.input, &map)?;
    for step in parse_transforms(&data.transforms, &data.char_cols)? {
        panel = match step {
            TransformStep::Zscore(col) => crate::panel::zscore_by_period(&panel, col)?,
            TransformStep::Log(col) => crate::panel::log_by_period(&panel, col)?,
        };
    }
    let report = validate(&panel);
    let hard: Vec<&String> = report
        .violations
        .iter()
        .filter(|v| v.contains("non-finite") || v.contains("weight"))
        .collect();
    if let Some(first) = hard.first() {
        return Err(CliError::Data(format!(
            "{} invariant violation(s), first: {first}",
            hard.len()
        )));
    }
    for v in &report.violations {
        eprintln!("warning: {v}");
    }
    Ok((panel, summary))
}

enum TransformStep {
    Zscore(usize),
    Log(usize),
}

fn parse_transforms(
    specs: &[String],
    char_cols: &[String],
) -> Result<Vec<TransformStep>, CliError> {
    let resolve_col = |name: &str| -> Result<usize, CliError> {
        if let Ok(idx) = name.parse::<usize>() {
            if idx < char_cols.len() {
                return Ok(idx);
            }
            return Err(CliError::Config(format!(
                "transform column index {idx} out of range ({} characteristic columns)",
                char_cols.len()
            )));
        }
        char_cols
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| CliError::Config(format!("transform column not found: {name}")))
    };
    specs
        .iter()
        .map(|s| {
            let (kind, col) = s
                .split_once(':')
                .ok_or_else(|| CliError::Config(format!("bad transform '{s}': want KIND:COL")))?;
            let col = resolve_col(col)?;
            match kind {
                "zscore" => Ok(TransformStep::Zscore(col)),
                "log" => Ok(TransformStep::Log(col)),
                other => Err(CliError::Config(format!("unknown transform kind '{other}'"))),
            }
        })
        .collect()
}

type EvalPoints = (Vec<f64>, Vec<f64>);

fn resolve_eval(eval: &EvalArgs, d: usize, required: bool) -> Result<Option<EvalPoints>, CliError> {
    let one = |values: &Option<Vec<f64>>,
               quantiles: &Option<Vec<f64>>,
               side: &str|
     -> Result<Option<Vec<f64>>, CliError> {
        match (values, quantiles) {
            (Some(_), Some(_)) => Err(CliError::Config(format!(
                "give --{side} or --{side}-q, not both"
            ))),
            (Some(v), None) => Ok(Some(v.clone())),
            (None, Some(q)) => {
                for &p in q {
                    if !(p > 0.0 && p < 1.0) {
                        return Err(CliError::Config(format!(
                            "quantile level {p} must lie in (0, 1)"
                        )));
                    }
                }
                Ok(Some(q.iter().map(|&p| normal_quantile(p)).collect()))
            }
            (None, None) => Ok(None),
        }
    };
    let zh = one(&eval.zh, &eval.zh_q, "zh")?;
    let zl = one(&eval.zl, &eval.zl_q, "zl")?;
    match (zh, zl) {
        (Some(h), Some(l)) => {
            if h.len() != d || l.len() != d {
                return Err(CliError::Config(format!(
                    "evaluation points must have {d} coordinate(s)"
                )));
            }
            Ok(Some((h, l)))
        }
        (None, None) if !required => Ok(None),
        _ => Err(CliError::Config(
            "both a high and a low evaluation point are required (use --zh/--zl or --zh-q/--zl-q)"
                .into(),
        )),
    }
}

enum ResolvedJ {
    Fixed(JSpec),
    Star { grid: Option<Vec<usize>> },
    Factor { grid: Option<Vec<usize>> },
}

fn resolve_j_optional(j: &JArgs) -> Result<Option<ResolvedJ>, CliError> {
    let fixed = match &j.j {
        None => None,
        Some(raw) => {
            let parts: Vec<&str> = raw.split(',').collect();
            let parsed: Result<Vec<usize>, _> = parts.iter().map(|p| p.trim().parse()).collect();
            let parsed =
                parsed.map_err(|_| CliError::Config(format!("cannot parse --j '{raw}'")))?;
            if parsed.contains(&0) {
                return Err(CliError::Config("portfolio counts must be positive".into()));
            }
            Some(if parsed.len() == 1 {
                JSpec::Fixed(parsed[0])
            } else {
                JSpec::PerPeriod(parsed)
            })
        }
    };
    match (fixed, j.j_rule) {
        (Some(spec), None) | (Some(spec), Some(JRuleArg::Fixed)) => {
            Ok(Some(ResolvedJ::Fixed(spec)))
        }
        (None, Some(JRuleArg::Star)) => Ok(Some(ResolvedJ::Star {
            grid: j.grid.clone(),
        })),
        (None, Some(JRuleArg::Factor)) => Ok(Some(ResolvedJ::Factor {
            grid: j.grid.clone(),
        })),
        (None, Some(JRuleArg::Fixed)) => {
            Err(CliError::Config("--j-rule fixed requires --j".into()))
        }
        (Some(_), Some(_)) => Err(CliError::Config(
            "give exactly one J specification: --j or --j-rule star/factor".into(),
        )),
        (None, None) => Ok(None),
    }
}

fn resolve_j(j: &JArgs) -> Result<ResolvedJ, CliError> {
    resolve_j_optional(j)?.ok_or_else(|| {
        CliError::Config("a J specification is required: --j N or --j-rule star/factor".into())
    })
}

struct FittedRun {
    series: FitSeries,
    j_rule: String,
    j_sequence: Vec<usize>,
}

fn fit_with_rule(
    panel: &Panel,
    resolved: &ResolvedJ,
    eval: Option<&(Vec<f64>, Vec<f64>)>,
    weighting: Weighting,
) -> Result<FittedRun, CliError> {
    let (spec, rule_name) = match resolved {
        ResolvedJ::Fixed(spec) => (spec.clone(), "fixed".to_string()),
        ResolvedJ::Star { grid } | ResolvedJ::Factor { grid } => {
            let (z_h, z_l) = eval.ok_or_else(|| {
                CliError::Config(
                    "the star/factor rules need evaluation points (--zh/--zl or quantiles)".into(),
                )
            })?;
            let g = grid.clone().unwrap_or_else(|| default_grid(panel));
            let (seq, name) = match resolved {
                ResolvedJ::Star { .. } => (
                    select_j_star(panel, z_h, z_l, &g, weighting)?.j_star_sequence,
                    "star",
                ),
                _ => (
                    select_j_factor(panel, z_h, z_l, &g, weighting)?.j_factor_sequence,
                    "factor",
                ),
            };
            (JSpec::PerPeriod(seq), name.to_string())
        }
    };
    let series = fit_series(panel, &spec, weighting)?;
    let failed = series.failed_periods();
    if !failed.is_empty() {
        return Err(CliError::Numerical(format!(
            "singular control design in period(s) {failed:?}"
        )));
    }
    let j_sequence = series.j_sequence.clone();
    Ok(FittedRun {
        series,
        j_rule: rule_name,
        j_sequence,
    })
}

fn weighting_of(data: &DataArgs) -> Weighting {
    if data.weight_col.is_some() {
        Weighting::ByWeightColumn
    } else {
        Weighting::Equal
    }
}

fn grid_points_per_dim(d: usize) -> usize {
    match d {
        1 => 101,
        2 => 41,
        _ => 11,
    }
}

fn evaluation_grid(panel: &Panel) -> Vec<Vec<f64>> {
    let d = panel.d();
    let per_dim = grid_points_per_dim(d);
    let mut axes = Vec::with_capacity(d);
    for k in 0..d {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in &panel.periods {
            for v in p.characteristics.column(k).iter() {
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
        }
        let axis: Vec<f64> = (0..per_dim)
            .map(|i| lo + (hi - lo) * i as f64 / (per_dim - 1) as f64)
            .collect();
        axes.push(axis);
    }
    let mut points = Vec::new();
    let total: usize = axes.iter().map(Vec::len).product();
    for mut idx in 0..total {
        let mut point = Vec::with_capacity(d);
        for axis in &axes {
            point.push(axis[idx % axis.len()]);
            idx /= axis.len();
        }
        points.push(point);
    }
    points
}

type EstimateRow = (Vec<f64>, Option<f64>, usize, usize, f64, usize);

fn cmd_estimate(args: EstimateArgs) -> Result<(), CliError> {
    let (panel, summary) = load_panel(&args.data)?;
    let eval = resolve_eval(&args.eval, panel.d(), false)?;
    let resolved = resolve_j(&args.j)?;
    let weighting = weighting_of(&args.data);
    let run = fit_with_rule(&panel, &resolved, eval.as_ref(), weighting)?;

    let mut records = vec![Record::RunMeta(run_meta(
        "estimate",
        Some(&args.data),
        Some(&summary),
        &run,
        None,
        eval.as_ref(),
        None,
        &panel,
    ))];
    let mut csv_rows: Vec<EstimateRow> = Vec::new();
    for point in evaluation_grid(&panel) {
        let (estimate, missing) = match mu_hat(&run.series, &point) {
            Ok(est) => (Some(est.value), 0usize),
            Err(Error::EmptyCellAt { periods, .. }) => (None, periods.len()),
            Err(other) => return Err(other.into()),
        };
        let mut counts = Vec::with_capacity(run.series.fits.len());
        for fit in &run.series.fits {
            counts.push(fit.cell_count(&point)?);
        }
        let n_min = *counts.iter().min().expect("t >= 1");
        let n_max = *counts.iter().max().expect("t >= 1");
        let n_mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
        csv_rows.push((point.clone(), estimate, missing, n_min, n_mean, n_max));
        records.push(Record::EstimatePoint(EstimatePoint {
            z: point,
            estimate,
            missing_periods: missing,
            n_min,
            n_mean,
            n_max,
        }));
    }
    if panel.d_x() > 0 {
        for fit in &run.series.fits {
            records.push(Record::BetaPeriod(BetaPeriod {
                t: fit.t,
                beta: fit.beta_hat.iter().copied().collect(),
            }));
        }
    }

    let bytes = match args.out.format {
        FormatArg::Jsonl => to_jsonl(&records).into_bytes(),
        FormatArg::Csv => {
            let d = panel.d();
            let mut s = String::new();
            for k in 0..d {
                s.push_str(&format!("z_{k},"));
            }
            s.push_str("estimate,missing_periods,n_min,n_mean,n_max\n");
            for (z, est, missing, n_min, n_mean, n_max) in csv_rows {
                for v in z {
                    s.push_str(&fmt17(v));
                    s.push(',');
                }
                if let Some(e) = est {
                    s.push_str(&fmt17(e));
                }
                s.push_str(&format!(",{missing},{n_min},{},{n_max}\n", fmt17(n_mean)));
            }
            s.into_bytes()
        }
    };
    write_output(args.out.out.as_deref(), &bytes)?;
    Ok(())
}

fn cmd_test(args: TestArgs) -> Result<(), CliError> {
    let (panel, summary) = load_panel(&args.data)?;
    let eval = resolve_eval(&args.eval, panel.d(), true)?.expect("required");
    let resolved = resolve_j(&args.j)?;
    let weighting = weighting_of(&args.data);
    let run = fit_with_rule(&panel, &resolved, Some(&eval), weighting)?;
    let variance = match args.variance {
        VarianceArg::Fm => HmlVariance::FamaMacbeth,
        VarianceArg::Pi => HmlVariance::PlugIn,
    };
    let result = t_test_hml(&run.series, &eval.0, &eval.1, variance)?;
    let test_record = TestRecord {
        estimate: result.estimate,
        se: result.se,
        t_stat: result.t_stat,
        p_value: result.p_value,
        reject_5pct: result.reject_5pct,
        t_used: result.t_used,
        variance: variance_name(args.variance).into(),
        z_h: eval.0.clone(),
        z_l: eval.1.clone(),
        j_sequence: run.j_sequence.clone(),
        shared_cell_periods: result.shared_cell_periods.clone(),
        degenerate_variance: result.degenerate_variance,
    };
    let records = vec![
        Record::RunMeta(run_meta(
            "test",
            Some(&args.data),
            Some(&summary),
            &run,
            Some(variance_name(args.variance)),
            Some(&eval),
            None,
            &panel,
        )),
        Record::TestResult(test_record.clone()),
    ];
    let bytes = match args.out.format {
        FormatArg::Jsonl => to_jsonl(&records).into_bytes(),
        FormatArg::Csv => {
            let mut s = String::from(
                "estimate,se,t_stat,p_value,reject_5pct,t_used,variance\n",
            );
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                fmt17(test_record.estimate),
                fmt17(test_record.se),
                fmt17(test_record.t_stat),
                fmt17(test_record.p_value),
                test_record.reject_5pct,
                test_record.t_used,
                test_record.variance,
            ));
            s.into_bytes()
        }
    };
    write_output(args.out.out.as_deref(), &bytes)?;
    Ok(())
}

fn tuning_record(r: &TuningResult) -> TuningRecord {
    TuningRecord {
        objective: match r.objective {
            TuningObjective::Inference => "inference".into(),
            TuningObjective::PointEstimation => "point_estimation".into(),
        },
        grid: r.grid.clone(),
        b_hat: r.b_hat.clone(),
        b_richardson: r.b_richardson.clone(),
        v1_hat: r.v1_hat.clone(),
        v2_hat: r.v2_hat.clone(),
        mse_hat: r.mse_hat.clone(),
        selected: r.selected,
        unimodal_on_grid: r.unimodal_on_grid,
        j_star_uniform: r.j_star_uniform,
        j_factor_uniform: r.j_factor_uniform,
    }
}

fn cmd_select_j(args: SelectJArgs) -> Result<(), CliError> {
    let (panel, summary) = load_panel(&args.data)?;
    let eval = resolve_eval(&args.eval, panel.d(), true)?.expect("required");
    let weighting = weighting_of(&args.data);
    let grid = args.grid.clone().unwrap_or_else(|| default_grid(&panel));
    let star = select_j_star(&panel, &eval.0, &eval.1, &grid, weighting)?;
    let factor = select_j_factor(&panel, &eval.0, &eval.1, &grid, weighting)?;

    let mut records = vec![
        Record::RunMeta(RunMeta {
            command: "select-j".into(),
            input: Some(args.data.input.display().to_string()),
            rows_read: Some(summary.rows_read),
            rows_dropped: Some(summary.rows_dropped),
            t_periods: panel.t_len(),
            j_rule: None,
            j_sequence: vec![],
            variance: None,
            weighting: Some(weighting_name(weighting).into()),
            z_h: Some(eval.0.clone()),
            z_l: Some(eval.1.clone()),
            seed: None,
            transforms: args.data.transforms.clone(),
        }),
        Record::Tuning(tuning_record(&star)),
        Record::Tuning(tuning_record(&factor)),
    ];
    let mut rows = Vec::new();
    for (i, p) in panel.periods.iter().enumerate() {
        let point = JSequencePoint {
            t: p.t,
            n: p.n(),
            j_star: star.j_star_sequence[i],
            j_factor: factor.j_factor_sequence[i],
        };
        rows.push(point.clone());
        records.push(Record::JSequencePoint(point));
    }
    let bytes = match args.out.format {
        FormatArg::Jsonl => to_jsonl(&records).into_bytes(),
        FormatArg::Csv => {
            let mut s = String::from("t,n,j_star,j_factor\n");
            for r in rows {
                s.push_str(&format!("{},{},{},{}\n", r.t, r.n, r.j_star, r.j_factor));
            }
            s.into_bytes()
        }
    };
    write_output(args.out.out.as_deref(), &bytes)?;
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let mut config = match (&args.preset, &args.config) {
        (Some(_), Some(_)) => {
            return Err(CliError::Config(
                "give --preset or --config, not both".into(),
            ))
        }
        (Some(name), None) => {
            let dgp = preset(name, args.seed.unwrap_or(1)).ok_or_else(|| {
                CliError::Config(format!(
                    "unknown preset '{name}' (known: figure1, null, quadratic)"
                ))
            })?;
            let mode = if name == "figure1" {
                Some("figure1".to_string())
            } else {
                None
            };
            let j_rule = if name == "null" {
                Some(JRule::Fixed { j: 10 })
            } else {
                Some(JRule::Star { grid: None })
            };
            ExperimentConfig {
                dgp,
                reps: None,
                j_rule,
                z_h: Some(vec![0.99]),
                z_l: Some(vec![0.01]),
                variance: None,
                mode,
                j_grid: None,
            }
        }
        (None, Some(path)) => {
            let raw = std::fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
            let mut cfg: ExperimentConfig = serde_json::from_str(&raw)
                .map_err(|e| CliError::Config(format!("bad experiment config: {e}")))?;
            if let Some(seed) = args.seed {
                cfg.dgp.seed = seed;
            }
            cfg
        }
        (None, None) => {
            return Err(CliError::Config(
                "simulate needs --preset NAME or --config FILE".into(),
            ))
        }
    };

    // CLI overrides. A bare --grid (no --j / --j-rule) requests an RMSE
    // curve over those candidates.
    match resolve_j_optional(&args.j)? {
        Some(resolved) => {
            config.j_rule = Some(match resolved {
                ResolvedJ::Fixed(JSpec::Fixed(j)) => JRule::Fixed { j },
                ResolvedJ::Fixed(JSpec::PerPeriod(_)) => {
                    return Err(CliError::Config(
                        "simulate takes a single fixed --j, not a per-period list".into(),
                    ))
                }
                ResolvedJ::Star { grid } => JRule::Star { grid },
                ResolvedJ::Factor { grid } => JRule::Factor { grid },
            });
        }
        None => {
            if args.j.grid.is_some() && config.mode.is_none() {
                config.mode = Some("mse_curve".to_string());
                config.j_grid = args.j.grid.clone();
            }
        }
    }
    if let Some(points) = resolve_eval(&args.eval, config.dgp.d, false)? {
        config.z_h = Some(points.0);
        config.z_l = Some(points.1);
    }

    let reps = config.reps.unwrap_or(args.reps);
    let z_h = config
        .z_h
        .clone()
        .ok_or_else(|| CliError::Config("experiment needs z_h".into()))?;
    let z_l = config
        .z_l
        .clone()
        .ok_or_else(|| CliError::Config("experiment needs z_l".into()))?;
    let variance = match config.variance.as_deref() {
        None => match args.variance {
            VarianceArg::Fm => HmlVariance::FamaMacbeth,
            VarianceArg::Pi => HmlVariance::PlugIn,
        },
        Some("fm") => HmlVariance::FamaMacbeth,
        Some("pi") => HmlVariance::PlugIn,
        Some(other) => {
            return Err(CliError::Config(format!(
                "unknown variance '{other}' in config (fm or pi)"
            )))
        }
    };
    let j_rule = config.j_rule.clone().unwrap_or(JRule::Star { grid: None });
    let mode = config.mode.clone().unwrap_or_else(|| "coverage".into());

    let meta = RunMeta {
        command: "simulate".into(),
        input: args.config.as_ref().map(|p| p.display().to_string()),
        rows_read: None,
        rows_dropped: None,
        t_periods: config.dgp.t_periods,
        j_rule: Some(format!("{j_rule:?}")),
        j_sequence: vec![],
        variance: Some(
            match variance {
                HmlVariance::FamaMacbeth => "fm",
                HmlVariance::PlugIn => "pi",
                HmlVariance::FmDifferenceTrace => "fm_difference",
            }
            .into(),
        ),
        weighting: None,
        z_h: Some(z_h.clone()),
        z_l: Some(z_l.clone()),
        seed: Some(config.dgp.seed),
        transforms: vec![],
    };

    let (records, csv) = match mode.as_str() {
        "figure1" => {
            let traces = figure1_traces(config.dgp.seed)?;
            let mut records = vec![Record::RunMeta(meta)];
            let mut s = String::from("j,t_periods,z,mu_hat,mu_true\n");
            for tr in traces {
                for i in 0..tr.grid.len() {
                    s.push_str(&format!(
                        "{},{},{},{},{}\n",
                        tr.j,
                        tr.t_periods,
                        fmt17(tr.grid[i]),
                        fmt17(tr.mu_hat[i]),
                        fmt17(tr.mu_true[i]),
                    ));
                }
                records.push(Record::Figure1Trace(tr));
            }
            (records, s)
        }
        "mse_curve" => {
            let grid = config
                .j_grid
                .clone()
                .ok_or_else(|| CliError::Config("mse_curve mode needs a J grid".into()))?;
            let report = mc_mse_curve(&config.dgp, reps, &grid, &z_h, &z_l)?;
            let csv = mse_curve_csv(&report);
            (vec![Record::RunMeta(meta), Record::McReport(report)], csv)
        }
        "coverage" => {
            let report = mc_coverage(&config.dgp, reps, &j_rule, &z_h, &z_l, variance)?;
            let csv = coverage_csv(&report);
            (vec![Record::RunMeta(meta), Record::McReport(report)], csv)
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown mode '{other}' (coverage, mse_curve, figure1)"
            )))
        }
    };

    let bytes = match args.out.format {
        FormatArg::Jsonl => to_jsonl(&records).into_bytes(),
        FormatArg::Csv => csv.into_bytes(),
    };
    write_output(args.out.out.as_deref(), &bytes)?;
    Ok(())
}

fn mse_curve_csv(report: &McReport) -> String {
    let mut s = String::from("j,rmse,bias,sd\n");
    if let Some(curve) = &report.mse_curve {
        for p in curve {
            s.push_str(&format!(
                "{},{},{},{}\n",
                p.j,
                fmt17(p.rmse),
                fmt17(p.bias),
                fmt17(p.sd)
            ));
        }
    }
    s
}

fn coverage_csv(report: &McReport) -> String {
    let mut s = String::from("key,value\n");
    s.push_str(&format!("replications,{}\n", report.replications));
    s.push_str(&format!("failures,{}\n", report.failures));
    s.push_str(&format!("true_contrast,{}\n", fmt17(report.true_contrast)));
    if let Some(v) = report.coverage_95 {
        s.push_str(&format!("coverage_95,{}\n", fmt17(v)));
    }
    if let Some(v) = report.rejection_rate {
        s.push_str(&format!("rejection_rate,{}\n", fmt17(v)));
    }
    if let Some(v) = report.rmse {
        s.push_str(&format!("rmse,{}\n", fmt17(v)));
    }
    if let Some(v) = report.mean_selected_j {
        s.push_str(&format!("mean_selected_j,{}\n", fmt17(v)));
    }
    s
}

fn variance_name(v: VarianceArg) -> &'static str {
    match v {
        VarianceArg::Fm => "fm",
        VarianceArg::Pi => "pi",
    }
}

fn weighting_name(w: Weighting) -> &'static str {
    match w {
        Weighting::Equal => "equal",
        Weighting::ByWeightColumn => "by_weight_column",
    }
}

#[allow(clippy::too_many_arguments)]
fn run_meta(
    command: &str,
    data: Option<&DataArgs>,
    summary: Option<&IngestSummary>,
    run: &FittedRun,
    variance: Option<&str>,
    eval: Option<&(Vec<f64>, Vec<f64>)>,
    seed: Option<u64>,
    panel: &Panel,
) -> RunMeta {
    RunMeta {
        command: command.into(),
        input: data.map(|d| d.input.display().to_string()),
        rows_read: summary.map(|s| s.rows_read),
        rows_dropped: summary.map(|s| s.rows_dropped),
        t_periods: panel.t_len(),
        j_rule: Some(run.j_rule.clone()),
        j_sequence: run.j_sequence.clone(),
        variance: variance.map(String::from),
        weighting: data.map(|d| weighting_name(weighting_of(d)).into()),
        z_h: eval.map(|e| e.0.clone()),
        z_l: eval.map(|e| e.1.clone()),
        seed,
        transforms: data.map(|d| d.transforms.clone()).unwrap_or_default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transform_parser() {
        let cols = vec!["mom".to_string(), "size".to_string()];
        let steps =
            parse_transforms(&["log:size".into(), "zscore:0".into()], &cols).unwrap();
        assert!(matches!(steps[0], TransformStep::Log(1)));
        assert!(matches!(steps[1], TransformStep::Zscore(0)));
        assert!(parse_transforms(&["sqrt:mom".into()], &cols).is_err());
        assert!(parse_transforms(&["zscore:ret".into()], &cols).is_err());
        assert!(parse_transforms(&["zscore".into()], &cols).is_err());
    }

    #[test]
    fn eval_resolution() {
        let eval = EvalArgs {
            zh_q: Some(vec![0.975]),
            zl_q: Some(vec![0.025]),
            ..Default::default()
        };
        let (zh, zl) = resolve_eval(&eval, 1, true).unwrap().unwrap();
        assert!((zh[0] - 1.959964).abs() < 1e-5);
        assert!((zl[0] + 1.959964).abs() < 1e-5);

        let bad = EvalArgs {
            zh_q: Some(vec![1.5]),
            zl_q: Some(vec![0.025]),
            ..Default::default()
        };
        assert!(resolve_eval(&bad, 1, true).is_err());

        let missing = EvalArgs::default();
        assert!(resolve_eval(&missing, 1, true).is_err());
        assert!(resolve_eval(&missing, 1, false).unwrap().is_none());
    }

    #[test]
    fn j_resolution_requires_exactly_one() {
        let both = JArgs {
            j: Some("10".into()),
            j_rule: Some(JRuleArg::Star),
            grid: None,
        };
        assert!(resolve_j(&both).is_err());
        let neither = JArgs {
            j: None,
            j_rule: None,
            grid: None,
        };
        assert!(resolve_j(&neither).is_err());
        let fixed = JArgs {
            j: Some("5".into()),
            j_rule: None,
            grid: None,
        };
        assert!(matches!(
            resolve_j(&fixed).unwrap(),
            ResolvedJ::Fixed(JSpec::Fixed(5))
        ));
        let list = JArgs {
            j: Some("5,6,7".into()),
            j_rule: None,
            grid: None,
        };
        assert!(matches!(
            resolve_j(&list).unwrap(),
            ResolvedJ::Fixed(JSpec::PerPeriod(_))
        ));
    }
}
