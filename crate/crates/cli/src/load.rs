//! Network side of the load generator: one tokio task per simulated user,
//! a monotonic clock per request, and plain [`LoadRecord`]s out.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use cair_core::client::{build_coverage_state, Fraction};
use cair_core::hub::{HubRequest, API_PREFIX, PROCESSING_HEADER};
use cair_core::knowledge::TreeStats;
use cair_core::loadgen::{
    baseline_annotations, breakpoint_n, emit_report, scalability_annotations, LoadRecord, LoadReport, LoadScenario,
    ScenarioKind, Series, ASSUMED_REQUESTS_PER_MINUTE,
};
use cair_core::state::WireState;
use sha2::{Digest, Sha256};

/// Sentence sent by every simulated user; it matches no intent and no
/// keyword pair, so each request walks the dialogue tree.
pub const LOAD_SENTENCE: &str = "tell me something else";

pub fn http_client(keep_alive: bool) -> reqwest::Client {
    let mut builder = reqwest::Client::builder().timeout(Duration::from_secs(120));
    if !keep_alive {
        builder = builder.pool_max_idle_per_host(0);
    }
    builder.build().expect("http client builds")
}

pub async fn fetch_tree_stats(http: &reqwest::Client, target: &str, culture: Option<&str>) -> anyhow::Result<TreeStats> {
    let mut url = format!("{}{API_PREFIX}/tree-stats", target.trim_end_matches('/'));
    if let Some(c) = culture {
        url = format!("{url}?culture={c}");
    }
    let response = http.get(&url).send().await.with_context(|| format!("GET {url}"))?;
    if !response.status().is_success() {
        bail!("GET {url} answered {}", response.status());
    }
    Ok(response.json().await?)
}

/// Wire state of a simulated user: `payload` of the topics covered.
pub fn user_state(stats: &TreeStats, payload: Fraction, seed: u64) -> WireState {
    build_coverage_state(&stats.layout, payload, seed).to_wire(&stats.layout)
}

pub fn request_body(state: &WireState, seed: u64) -> Vec<u8> {
    serde_json::to_vec(&HubRequest {
        client_sentence: LOAD_SENTENCE.to_string(),
        client_state: state.clone(),
        seed: Some(seed),
        culture: None,
    })
    .expect("request serializes")
}

pub fn digest(body: &[u8]) -> String {
    hex::encode(&Sha256::digest(body)[..8])
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub status: u16,
    pub response_time_ms: f64,
    pub processing_ms: Option<f64>,
    pub digest: Option<String>,
    pub sent_at: Instant,
}

/// Times one request from just before transmission until the whole body
/// has been read.
pub async fn send(http: &reqwest::Client, url: &str, body: Vec<u8>) -> Sample {
    let sent_at = Instant::now();
    let result = async {
        let response = http
            .post(url)
            .header("content-type", "application/json")
            .body(body)
            .send()
            .await?;
        let status = response.status().as_u16();
        let processing = response
            .headers()
            .get(PROCESSING_HEADER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.parse::<f64>().ok());
        let bytes = response.bytes().await?;
        Ok::<_, reqwest::Error>((status, processing, bytes))
    }
    .await;
    let response_time_ms = sent_at.elapsed().as_secs_f64() * 1000.0;
    match result {
        Ok((status, processing_ms, bytes)) => Sample {
            status,
            response_time_ms,
            processing_ms,
            digest: Some(digest(&bytes)),
            sent_at,
        },
        Err(e) => {
            tracing::warn!(error = %e, "request failed");
            Sample {
                status: 0,
                response_time_ms,
                processing_ms: None,
                digest: None,
                sent_at,
            }
        }
    }
}

fn hub_url(target: &str) -> String {
    format!("{}{API_PREFIX}/hub", target.trim_end_matches('/'))
}

/// Seed of the request sent by `thread` in `iteration`.
pub fn request_seed(scenario: &LoadScenario, thread: usize, iteration: usize) -> u64 {
    scenario
        .seed
        .wrapping_mul(1_000_003)
        .wrapping_add((thread * scenario.iterations.max(1) + iteration) as u64)
}

/// Response digests of a run, in record order; used to compare against a
/// serial replay.
pub type Digests = Vec<Option<String>>;

/// One user, `iterations` requests, `spacing_s` apart. Stops at the first
/// connection failure and marks the report partial.
pub async fn run_baseline(scenario: &LoadScenario, stats: &TreeStats) -> anyhow::Result<(LoadReport, Digests)> {
    scenario.validate()?;
    let http = http_client(scenario.keep_alive);
    let url = hub_url(&scenario.target);
    let state = user_state(stats, scenario.payload, scenario.seed);
    let payload_bytes = serde_json::to_vec(&state)?.len();
    let run_start = Instant::now();
    let mut records = Vec::with_capacity(scenario.iterations);
    let mut digests = Vec::with_capacity(scenario.iterations);
    let mut partial = false;
    for iteration in 0..scenario.iterations {
        if iteration > 0 {
            tokio::time::sleep(Duration::from_secs_f64(scenario.spacing_s)).await;
        }
        let body = request_body(&state, request_seed(scenario, 0, iteration));
        let request_bytes = body.len();
        let sample = send(&http, &url, body).await;
        records.push(LoadRecord {
            thread: 0,
            iteration,
            start_ms: (sample.sent_at - run_start).as_secs_f64() * 1000.0,
            response_time_ms: sample.response_time_ms,
            processing_ms: sample.processing_ms,
            status: sample.status,
            request_bytes,
        });
        digests.push(sample.digest);
        if sample.status == 0 {
            partial = iteration + 1 < scenario.iterations;
            break;
        }
    }
    Ok((
        LoadReport {
            scenario: scenario.clone(),
            records,
            partial,
            payload_bytes,
        },
        digests,
    ))
}

/// `threads` users started across the ramp-up, the whole group repeated
/// `iterations` times with `spacing_s` between the end of one group and
/// the start of the next. Every user carries its own state.
pub async fn run_scalability(scenario: &LoadScenario, stats: &TreeStats) -> anyhow::Result<(LoadReport, Digests)> {
    scenario.validate()?;
    if scenario.kind != ScenarioKind::Scalability {
        bail!("not a scalability scenario");
    }
    let http = http_client(scenario.keep_alive);
    let url: Arc<str> = hub_url(&scenario.target).into();
    let states: Vec<WireState> = (0..scenario.threads)
        .map(|t| user_state(stats, scenario.payload, scenario.seed.wrapping_add(t as u64)))
        .collect();
    let payload_bytes = states.first().map(|s| serde_json::to_vec(s).map(|v| v.len())).transpose()?.unwrap_or(0);
    let offsets = scenario.ramp_offsets();
    let run_start = Instant::now();
    let mut rows: Vec<(LoadRecord, Option<String>)> = Vec::new();
    for iteration in 0..scenario.iterations {
        if iteration > 0 {
            tokio::time::sleep(Duration::from_secs_f64(scenario.spacing_s)).await;
        }
        let bodies: Vec<Vec<u8>> = states
            .iter()
            .enumerate()
            .map(|(t, s)| request_body(s, request_seed(scenario, t, iteration)))
            .collect();
        // Leave a moment for task spawning before the first departure.
        let group_start = tokio::time::Instant::now() + Duration::from_millis(20);
        let mut tasks = Vec::with_capacity(scenario.threads);
        for (thread, body) in bodies.into_iter().enumerate() {
            let http = http.clone();
            let url = url.clone();
            let at = group_start + offsets[thread];
            tasks.push(tokio::spawn(async move {
                tokio::time::sleep_until(at).await;
                let request_bytes = body.len();
                (thread, request_bytes, send(&http, &url, body).await)
            }));
        }
        for task in tasks {
            let (thread, request_bytes, sample) = task.await?;
            rows.push((
                LoadRecord {
                    thread,
                    iteration,
                    start_ms: (sample.sent_at - run_start).as_secs_f64() * 1000.0,
                    response_time_ms: sample.response_time_ms,
                    processing_ms: sample.processing_ms,
                    status: sample.status,
                    request_bytes,
                },
                sample.digest,
            ));
        }
    }
    let (records, digests) = rows.into_iter().unzip();
    Ok((
        LoadReport {
            scenario: scenario.clone(),
            records,
            partial: false,
            payload_bytes,
        },
        digests,
    ))
}

/// Replays the requests of a scalability run one at a time and returns
/// their digests in the same order as the run's records.
pub async fn serial_replay(report: &LoadReport, stats: &TreeStats) -> anyhow::Result<Digests> {
    let scenario = &report.scenario;
    let http = http_client(true);
    let url = hub_url(&scenario.target);
    let mut out = Vec::with_capacity(report.records.len());
    for r in &report.records {
        let state = user_state(stats, scenario.payload, scenario.seed.wrapping_add(r.thread as u64));
        let body = request_body(&state, request_seed(scenario, r.thread, r.iteration));
        out.push(send(&http, &url, body).await.digest);
    }
    Ok(out)
}

pub async fn sweep(template: &LoadScenario, threads: &[usize], stats: &TreeStats) -> anyhow::Result<Vec<(usize, LoadReport)>> {
    let mut out = Vec::with_capacity(threads.len());
    for (i, &n) in threads.iter().enumerate() {
        if i > 0 {
            tokio::time::sleep(Duration::from_secs_f64(template.spacing_s)).await;
        }
        let scenario = LoadScenario {
            threads: n,
            ..template.clone()
        };
        let (report, _) = run_scalability(&scenario, stats).await?;
        out.push((n, report));
    }
    Ok(out)
}

/// A finished set of runs with the files derived from it.
pub struct Suite {
    pub reports: Vec<(f64, String, LoadReport)>,
    pub series: Series,
    pub summary: serde_json::Value,
}

impl Suite {
    fn assemble(kind: &str, x_label: &str, reports: Vec<(f64, String, LoadReport)>, threshold_ms: f64, keep_alive: bool) -> Self {
        let refs: Vec<(f64, String, &LoadReport)> = reports.iter().map(|(x, l, r)| (*x, l.clone(), r)).collect();
        let mut series = Series::from_reports(x_label, &refs, threshold_ms);
        let runs: Vec<serde_json::Value> = reports
            .iter()
            .map(|(x, label, r)| {
                serde_json::json!({
                    "label": label,
                    "x": x,
                    "threads": r.scenario.threads,
                    "ramp_up_s": r.scenario.ramp_up_s,
                    "payload": r.scenario.payload,
                    "payload_bytes": r.payload_bytes,
                    "partial": r.partial,
                    "timing_violations": r.timing_violations().len(),
                    "summary": r.summary(threshold_ms),
                })
            })
            .collect();
        let mut summary = serde_json::json!({
            "kind": kind,
            "connection_mode": if keep_alive { "keep-alive" } else { "fresh connection per request" },
            "assumed_requests_per_minute": ASSUMED_REQUESTS_PER_MINUTE,
            "threshold_ms": threshold_ms,
            "runs": runs,
        });
        if kind == "baseline" {
            series.annotations = baseline_annotations();
        } else {
            let points: Vec<(usize, f64)> = reports
                .iter()
                .map(|(_, _, r)| (r.scenario.threads, r.summary(threshold_ms).mean_response_ms))
                .collect();
            series.breakpoint_n = breakpoint_n(&points, threshold_ms);
            series.annotations = scalability_annotations();
            summary["breakpoint_n"] = serde_json::json!(series.breakpoint_n);
        }
        summary["annotations"] = serde_json::json!(series.annotations);
        Suite { reports, series, summary }
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        let reports: Vec<&LoadReport> = self.reports.iter().map(|(_, _, r)| r).collect();
        emit_report(dir, &reports, &self.summary, &self.series)
    }
}

/// One baseline per payload; x is the state size in bytes.
pub async fn baseline_suite(template: &LoadScenario, payloads: &[Fraction], stats: &TreeStats, threshold_ms: f64) -> anyhow::Result<Suite> {
    let mut reports = Vec::with_capacity(payloads.len());
    for &payload in payloads {
        let scenario = LoadScenario {
            payload,
            ..template.clone()
        };
        let (report, _) = run_baseline(&scenario, stats).await?;
        reports.push((report.payload_bytes as f64, payload.to_string(), report));
    }
    Ok(Suite::assemble("baseline", "state bytes", reports, threshold_ms, template.keep_alive))
}

/// One scalability run per thread count; x is N.
pub async fn sweep_suite(template: &LoadScenario, threads: &[usize], stats: &TreeStats, threshold_ms: f64) -> anyhow::Result<Suite> {
    let reports = sweep(template, threads, stats)
        .await?
        .into_iter()
        .map(|(n, r)| (n as f64, format!("N={n}"), r))
        .collect();
    Ok(Suite::assemble("scalability", "concurrent users", reports, threshold_ms, template.keep_alive))
}
