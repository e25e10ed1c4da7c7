//! File formats: long-format CSV ingestion and structured result emission.
//!
//! Input is delimited text with a header row, one row per (time, asset).
//! Rows with a missing or non-finite value in any mapped column are dropped
//! at ingestion and counted; unparseable text in a mapped column is a data
//! error. Output records are line-delimited JSON, with optional delimited
//! tables for plotting; floats in tables are emitted with 17 significant
//! digits so they round-trip exactly.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::panel::{Panel, PanelPeriod};

/// Which input columns play which role.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnMap {
    pub time: String,
    pub asset: String,
    pub ret: String,
    pub characteristics: Vec<String>,
    pub controls: Vec<String>,
    pub weight: Option<String>,
}

/// What ingestion saw and kept.
#[derive(Debug, Clone, Serialize)]
pub struct IngestSummary {
    pub rows_read: usize,
    pub rows_dropped: usize,
    pub periods: usize,
}

/// Ingestion failures: configuration problems (missing column) are reported
/// separately from data problems (unreadable file, garbage values).
#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("column not found: {0}")]
    ColumnNotFound(String),
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        source: csv::Error,
    },
    #[error("row {row}: cannot parse '{value}' in column {column}")]
    BadValue {
        row: usize,
        column: String,
        value: String,
    },
    #[error("no usable rows after dropping incomplete ones ({dropped} dropped)")]
    NoUsableRows { dropped: usize },
    #[error("{0}")]
    Panel(#[from] crate::error::Error),
}

struct ResolvedColumns {
    time: usize,
    asset: usize,
    ret: usize,
    characteristics: Vec<usize>,
    controls: Vec<usize>,
    weight: Option<usize>,
}

fn resolve(headers: &csv::StringRecord, map: &ColumnMap) -> Result<ResolvedColumns, IngestError> {
    let find = |name: &str| -> Result<usize, IngestError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::ColumnNotFound(name.to_string()))
    };
    Ok(ResolvedColumns {
        time: find(&map.time)?,
        asset: find(&map.asset)?,
        ret: find(&map.ret)?,
        characteristics: map
            .characteristics
            .iter()
            .map(|c| find(c))
            .collect::<Result<_, _>>()?,
        controls: map
            .controls
            .iter()
            .map(|c| find(c))
            .collect::<Result<_, _>>()?,
        weight: map.weight.as_ref().map(|c| find(c)).transpose()?,
    })
}

/// A float cell is either a value, missing (empty/NA/NaN/non-finite), or
/// garbage.
fn parse_cell(raw: &str) -> Result<Option<f64>, ()> {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        Ok(_) => Ok(None),
        Err(_) => Err(()),
    }
}

/// Reads a long-format CSV into a panel, grouping rows by the time column
/// (sorted ascending) and dropping rows with missing values.
pub fn read_panel_csv(path: &Path, map: &ColumnMap) -> Result<(Panel, IngestSummary), IngestError> {
    let mut reader = csv::Reader::from_path(path).map_err(|source| IngestError::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let headers = reader
        .headers()
        .map_err(|source| IngestError::Unreadable {
            path: path.to_path_buf(),
            source,
        })?
        .clone();
    let cols = resolve(&headers, map)?;

    struct Row {
        asset: String,
        ret: f64,
        chars: Vec<f64>,
        controls: Vec<f64>,
        weight: Option<f64>,
    }
    let mut by_time: BTreeMap<i64, Vec<Row>> = BTreeMap::new();
    let mut rows_read = 0usize;
    let mut rows_dropped = 0usize;
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|source| IngestError::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
        rows_read += 1;
        let get = |idx: usize| record.get(idx).unwrap_or("");
        let time_raw = get(cols.time).trim();
        let t: i64 = match time_raw.parse() {
            Ok(t) => t,
            Err(_) => {
                return Err(IngestError::BadValue {
                    row: row_idx + 2,
                    column: map.time.clone(),
                    value: time_raw.to_string(),
                })
            }
        };
        let missing = std::cell::Cell::new(false);
        let take = |idx: usize, name: &str| -> Result<f64, IngestError> {
            match parse_cell(get(idx)) {
                Ok(Some(v)) => Ok(v),
                Ok(None) => {
                    missing.set(true);
                    Ok(f64::NAN)
                }
                Err(()) => Err(IngestError::BadValue {
                    row: row_idx + 2,
                    column: name.to_string(),
                    value: get(idx).to_string(),
                }),
            }
        };
        let ret = take(cols.ret, &map.ret)?;
        let chars: Vec<f64> = cols
            .characteristics
            .iter()
            .zip(&map.characteristics)
            .map(|(&i, name)| take(i, name))
            .collect::<Result<_, _>>()?;
        let controls: Vec<f64> = cols
            .controls
            .iter()
            .zip(&map.controls)
            .map(|(&i, name)| take(i, name))
            .collect::<Result<_, _>>()?;
        let weight = match (cols.weight, &map.weight) {
            (Some(i), Some(name)) => Some(take(i, name)?),
            _ => None,
        };
        if missing.get() {
            rows_dropped += 1;
            continue;
        }
        by_time.entry(t).or_default().push(Row {
            asset: get(cols.asset).trim().to_string(),
            ret,
            chars,
            controls,
            weight,
        });
    }
    if by_time.is_empty() {
        return Err(IngestError::NoUsableRows {
            dropped: rows_dropped,
        });
    }
    let has_weights = map.weight.is_some();
    let mut periods = Vec::with_capacity(by_time.len());
    for (t, rows) in by_time {
        let period = PanelPeriod::from_rows(
            t,
            rows.iter().map(|r| r.asset.clone()).collect(),
            rows.iter().map(|r| r.ret).collect(),
            rows.iter().map(|r| r.chars.clone()).collect(),
            if map.controls.is_empty() {
                vec![]
            } else {
                rows.iter().map(|r| r.controls.clone()).collect()
            },
            if has_weights {
                Some(rows.iter().map(|r| r.weight.unwrap_or(f64::NAN)).collect())
            } else {
                None
            },
        )?;
        periods.push(period);
    }
    let summary = IngestSummary {
        rows_read,
        rows_dropped,
        periods: periods.len(),
    };
    Ok((Panel::new(periods)?, summary))
}

/// Formats a float with 17 significant digits; parsing the result recovers
/// the value exactly.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes bytes atomically: a temp file in the destination directory is
/// persisted over the target, so rerunning a command either fully replaces
/// the output or leaves the previous version intact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(dir) => tempfile::NamedTempFile::new_in(dir)?,
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Writes either to a file (atomically) or stdout.
pub fn write_output(path: Option<&Path>, bytes: &[u8]) -> std::io::Result<()> {
    match path {
        Some(p) => write_atomic(p, bytes),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()
        }
    }
}

/// Line-delimited output records, one JSON object per line tagged by
/// `record`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum Record {
    RunMeta(RunMeta),
    EstimatePoint(EstimatePoint),
    BetaPeriod(BetaPeriod),
    TestResult(TestRecord),
    Tuning(TuningRecord),
    JSequencePoint(JSequencePoint),
    McReport(crate::simulate::McReport),
    Figure1Trace(crate::simulate::TracePanel),
    Error(ErrorRecord),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows_read: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows_dropped: Option<usize>,
    pub t_periods: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j_rule: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub j_sequence: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weighting: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_h: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_l: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub transforms: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatePoint {
    pub z: Vec<f64>,
    /// `None` when the point's cell is empty in some period.
    pub estimate: Option<f64>,
    /// Count of periods in which the point was not evaluable.
    pub missing_periods: usize,
    /// Summary over periods of the containing cell's count.
    pub n_min: usize,
    pub n_mean: f64,
    pub n_max: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BetaPeriod {
    pub t: i64,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestRecord {
    pub estimate: f64,
    pub se: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub reject_5pct: bool,
    pub t_used: usize,
    pub variance: String,
    pub z_h: Vec<f64>,
    pub z_l: Vec<f64>,
    pub j_sequence: Vec<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub shared_cell_periods: Vec<i64>,
    pub degenerate_variance: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuningRecord {
    pub objective: String,
    pub grid: Vec<usize>,
    pub b_hat: Vec<f64>,
    pub b_richardson: Vec<f64>,
    pub v1_hat: Vec<f64>,
    pub v2_hat: Vec<f64>,
    pub mse_hat: Vec<f64>,
    pub selected: usize,
    pub unimodal_on_grid: bool,
    pub j_star_uniform: usize,
    pub j_factor_uniform: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JSequencePoint {
    pub t: i64,
    pub n: usize,
    pub j_star: usize,
    pub j_factor: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub code: i32,
    pub message: String,
    pub location: String,
}

/// Serializes records as JSON lines.
pub fn to_jsonl(records: &[Record]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}
