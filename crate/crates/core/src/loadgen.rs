//! Load test bookkeeping: scenarios, per-request records, summaries, the
//! sizing calculator and report files. The network runner lives in the CLI
//! crate and only feeds [`LoadRecord`]s in here.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::client::Fraction;

pub const DEFAULT_THRESHOLD_MS: f64 = 1000.0;

/// Requests per user per minute assumed when turning concurrent users
/// into subscribed users.
pub const ASSUMED_REQUESTS_PER_MINUTE: f64 = 6.0;

/// Figures measured on the reference deployment (a hosted cloud service
/// reached over Wi-Fi). They are reported next to local results for
/// context and never used as pass/fail bars.
pub mod reference {
    pub const BASELINE_RESPONSE_MS: f64 = 189.0;
    pub const BASELINE_PROCESSING_MS: f64 = 107.4;
    pub const BASELINE_FULL_PAYLOAD_BYTES: usize = 18166;
    pub const BASELINE_FRESH_PAYLOAD_BYTES: usize = 369;
    pub const BREAKPOINT_SIMULTANEOUS: usize = 20;
    pub const BREAKPOINT_RAMPED: usize = 250;
    pub const PROCESSING_PLATEAU_MS: f64 = 450.0;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Baseline,
    Scalability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadScenario {
    pub kind: ScenarioKind,
    pub threads: usize,
    pub ramp_up_s: f64,
    pub iterations: usize,
    pub spacing_s: f64,
    pub payload: Fraction,
    pub target: String,
    pub seed: u64,
    pub keep_alive: bool,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ScenarioError {
    #[error("threads must be at least 1")]
    NoThreads,
    #[error("ramp-up must be a non-negative number of seconds")]
    Ramp,
    #[error("spacing must be a non-negative number of seconds")]
    Spacing,
    #[error("a baseline runs exactly one thread")]
    BaselineThreads,
}

impl LoadScenario {
    pub fn baseline(target: &str, payload: Fraction, iterations: usize, spacing_s: f64) -> Self {
        LoadScenario {
            kind: ScenarioKind::Baseline,
            threads: 1,
            ramp_up_s: 0.0,
            iterations,
            spacing_s,
            payload,
            target: target.to_string(),
            seed: 0,
            keep_alive: false,
        }
    }

    /// Scalability runs always use the largest payload.
    pub fn scalability(target: &str, threads: usize, ramp_up_s: f64, iterations: usize) -> Self {
        LoadScenario {
            kind: ScenarioKind::Scalability,
            threads,
            ramp_up_s,
            iterations,
            spacing_s: 5.0,
            payload: Fraction::ONE,
            target: target.to_string(),
            seed: 0,
            keep_alive: false,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.threads == 0 {
            return Err(ScenarioError::NoThreads);
        }
        if !(self.ramp_up_s >= 0.0 && self.ramp_up_s.is_finite()) {
            return Err(ScenarioError::Ramp);
        }
        if !(self.spacing_s >= 0.0 && self.spacing_s.is_finite()) {
            return Err(ScenarioError::Spacing);
        }
        if self.kind == ScenarioKind::Baseline && self.threads != 1 {
            return Err(ScenarioError::BaselineThreads);
        }
        Ok(())
    }

    /// Start offset of every thread within a group.
    pub fn ramp_offsets(&self) -> Vec<Duration> {
        ramp_offsets(self.threads, Duration::from_secs_f64(self.ramp_up_s))
    }
}

/// Thread `k` of `n` starts `k * ramp / n` after the first.
pub fn ramp_offsets(n: usize, ramp: Duration) -> Vec<Duration> {
    (0..n)
        .map(|k| Duration::from_nanos((ramp.as_nanos() * k as u128 / n.max(1) as u128) as u64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadRecord {
    pub thread: usize,
    pub iteration: usize,
    /// Milliseconds since the run began at which the request was sent.
    pub start_ms: f64,
    pub response_time_ms: f64,
    /// From the processing-time header; absent when the request failed.
    pub processing_ms: Option<f64>,
    /// HTTP status, 0 when no response arrived.
    pub status: u16,
    pub request_bytes: usize,
}

impl LoadRecord {
    pub fn ok(&self) -> bool {
        self.status == 200
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub errors: usize,
    pub mean_response_ms: f64,
    pub sd_response_ms: f64,
    pub mean_processing_ms: f64,
    pub sd_processing_ms: f64,
    pub threshold_ms: f64,
    pub threshold_pass: bool,
    /// False for an empty report.
    pub valid: bool,
}

/// Mean and population standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Statistics over the successful records; failures are only counted.
pub fn summarize(records: &[LoadRecord], threshold_ms: f64) -> Summary {
    let ok: Vec<&LoadRecord> = records.iter().filter(|r| r.ok()).collect();
    let response: Vec<f64> = ok.iter().map(|r| r.response_time_ms).collect();
    let processing: Vec<f64> = ok.iter().filter_map(|r| r.processing_ms).collect();
    let (mean_response_ms, sd_response_ms) = mean_sd(&response);
    let (mean_processing_ms, sd_processing_ms) = mean_sd(&processing);
    let valid = !ok.is_empty();
    Summary {
        count: records.len(),
        errors: records.len() - ok.len(),
        mean_response_ms,
        sd_response_ms,
        mean_processing_ms,
        sd_processing_ms,
        threshold_ms,
        threshold_pass: valid && mean_response_ms <= threshold_ms,
        valid,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub scenario: LoadScenario,
    pub records: Vec<LoadRecord>,
    /// Set when the run stopped early; missing requests are absent from
    /// `records`.
    pub partial: bool,
    pub payload_bytes: usize,
}

impl LoadReport {
    pub fn summary(&self, threshold_ms: f64) -> Summary {
        summarize(&self.records, threshold_ms)
    }

    /// Records violating `response >= processing >= 0`.
    pub fn timing_violations(&self) -> Vec<&LoadRecord> {
        self.records
            .iter()
            .filter(|r| match r.processing_ms {
                Some(p) => p < 0.0 || r.response_time_ms < p,
                None => false,
            })
            .collect()
    }
}

/// One x position of a sweep: payload bytes for baselines, thread count
/// for scalability runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub x: f64,
    pub label: String,
    pub mean_response_ms: f64,
    pub sd_response_ms: f64,
    pub mean_processing_ms: f64,
    pub sd_processing_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub x_label: String,
    pub points: Vec<SeriesPoint>,
    pub threshold_ms: f64,
    pub breakpoint_n: Option<usize>,
    pub annotations: Vec<String>,
}

impl Series {
    pub fn from_reports(x_label: &str, reports: &[(f64, String, &LoadReport)], threshold_ms: f64) -> Self {
        let points = reports
            .iter()
            .map(|(x, label, r)| {
                let s = r.summary(threshold_ms);
                SeriesPoint {
                    x: *x,
                    label: label.clone(),
                    mean_response_ms: s.mean_response_ms,
                    sd_response_ms: s.sd_response_ms,
                    mean_processing_ms: s.mean_processing_ms,
                    sd_processing_ms: s.sd_processing_ms,
                }
            })
            .collect::<Vec<_>>();
        Series {
            x_label: x_label.to_string(),
            threshold_ms,
            breakpoint_n: None,
            annotations: Vec::new(),
            points,
        }
    }
}

/// Smallest tested N whose mean response time exceeds the threshold.
pub fn breakpoint_n(points: &[(usize, f64)], threshold_ms: f64) -> Option<usize> {
    points
        .iter()
        .filter(|(_, mean)| *mean > threshold_ms)
        .map(|(n, _)| *n)
        .min()
}

pub fn baseline_annotations() -> Vec<String> {
    use reference::*;
    vec![
        format!(
            "reference deployment: {BASELINE_RESPONSE_MS} ms mean response and {BASELINE_PROCESSING_MS} ms mean processing at the {BASELINE_FULL_PAYLOAD_BYTES}-byte payload"
        ),
        format!("reference deployment: fresh state of {BASELINE_FRESH_PAYLOAD_BYTES} bytes"),
    ]
}

pub fn scalability_annotations() -> Vec<String> {
    use reference::*;
    vec![
        format!("reference deployment: breakpoint near {BREAKPOINT_SIMULTANEOUS} simultaneous requests"),
        format!("reference deployment: breakpoint near {BREAKPOINT_RAMPED} requests spread over 10 s"),
        format!("reference deployment: processing time levels off near {PROCESSING_PLATEAU_MS} ms under ramped load"),
    ]
}

/// Exact positive ratio, parsed from "0.2" or "1/5".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    num: u128,
    den: u128,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SizingError {
    #[error("concurrency ratio must lie in (0, 1], got {0}")]
    Domain(String),
}

impl Ratio {
    pub fn new(num: u128, den: u128) -> Result<Self, SizingError> {
        if den == 0 || num == 0 || num > den {
            return Err(SizingError::Domain(format!("{num}/{den}")));
        }
        Ok(Ratio { num, den })
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Ratio {
    type Err = SizingError;

    fn from_str(s: &str) -> Result<Self, SizingError> {
        let bad = || SizingError::Domain(s.to_string());
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            return Ratio::new(n.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?).map_err(|_| bad());
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if int.is_empty() && frac.is_empty()
            || !int.chars().all(|c| c.is_ascii_digit())
            || !frac.chars().all(|c| c.is_ascii_digit())
            || frac.len() > 30
        {
            return Err(bad());
        }
        let den = 10u128.pow(frac.len() as u32);
        let int: u128 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let frac_v: u128 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        let num = int.checked_mul(den).and_then(|v| v.checked_add(frac_v)).ok_or_else(bad)?;
        Ratio::new(num, den).map_err(|_| bad())
    }
}

/// Subscribed users a deployment can serve: `floor(n / r)`.
pub fn size_deployment(n: u64, r: Ratio) -> u64 {
    (n as u128 * r.den / r.num) as u64
}

/// Writes `records.csv`, `summary.json` and `series.json` into `dir`.
/// The CSV keeps one row per request across all reports.
pub fn emit_report(dir: &Path, reports: &[&LoadReport], summary: &serde_json::Value, series: &Series) -> Result<Vec<PathBuf>, std::io::Error> {
    fs::create_dir_all(dir)?;
    let records_path = dir.join("records.csv");
    let mut w = csv::Writer::from_path(&records_path).map_err(std::io::Error::other)?;
    w.write_record([
        "scenario",
        "threads",
        "payload",
        "thread",
        "iteration",
        "start_ms",
        "response_time_ms",
        "processing_ms",
        "status",
        "request_bytes",
    ])
    .map_err(std::io::Error::other)?;
    for report in reports {
        let kind = match report.scenario.kind {
            ScenarioKind::Baseline => "baseline",
            ScenarioKind::Scalability => "scalability",
        };
        for r in &report.records {
            w.write_record([
                kind.to_string(),
                report.scenario.threads.to_string(),
                report.scenario.payload.to_string(),
                r.thread.to_string(),
                r.iteration.to_string(),
                format!("{:.3}", r.start_ms),
                format!("{:.3}", r.response_time_ms),
                r.processing_ms.map(|p| format!("{p:.3}")).unwrap_or_default(),
                r.status.to_string(),
                r.request_bytes.to_string(),
            ])
            .map_err(std::io::Error::other)?;
        }
    }
    w.flush()?;
    let summary_path = dir.join("summary.json");
    fs::write(&summary_path, serde_json::to_vec_pretty(summary).map_err(std::io::Error::other)?)?;
    let series_path = dir.join("series.json");
    fs::write(&series_path, serde_json::to_vec_pretty(series).map_err(std::io::Error::other)?)?;
    Ok(vec![records_path, summary_path, series_path])
}
