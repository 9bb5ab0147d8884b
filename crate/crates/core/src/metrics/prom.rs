//! Prometheus `query_range` wire format and client.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{CollectError, MetricKind, MetricSample, MetricSeries, MetricSource, ResponseQuery};
use crate::time::{TimeWindow, Timestamp};

pub const QUERY_RANGE_PATH: &str = "/api/v1/query_range";

#[derive(Debug, Serialize, Deserialize)]
pub struct Envelope {
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<MatrixData>,
    #[serde(rename = "errorType", default, skip_serializing_if = "Option::is_none")]
    pub error_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MatrixData {
    #[serde(rename = "resultType")]
    pub result_type: String,
    pub result: Vec<MatrixEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MatrixEntry {
    pub metric: BTreeMap<String, String>,
    pub values: Vec<(f64, String)>,
}

/// Serialises series as a successful matrix response.
pub fn encode_matrix(series: &[MetricSeries]) -> String {
    let result = series
        .iter()
        .map(|s| {
            let mut metric = s.labels.clone();
            if !s.metric_name.is_empty() {
                metric.insert("__name__".into(), s.metric_name.clone());
            }
            MatrixEntry {
                metric,
                values: s
                    .samples()
                    .iter()
                    .map(|x| (x.timestamp.secs_f64(), x.value.to_string()))
                    .collect(),
            }
        })
        .collect();
    let env = Envelope {
        status: "success".into(),
        data: Some(MatrixData {
            result_type: "matrix".into(),
            result,
        }),
        error_type: None,
        error: None,
    };
    serde_json::to_string(&env).expect("matrix envelope serialises")
}

/// Serialises an error response.
pub fn encode_error(error_type: &str, error: &str) -> String {
    let env = Envelope {
        status: "error".into(),
        data: None,
        error_type: Some(error_type.into()),
        error: Some(error.into()),
    };
    serde_json::to_string(&env).expect("error envelope serialises")
}

pub fn decode_matrix(body: &str, kind: MetricKind) -> Result<Vec<MetricSeries>, CollectError> {
    let env: Envelope =
        serde_json::from_str(body).map_err(|e| CollectError::Parse(e.to_string()))?;
    if env.status != "success" {
        return Err(CollectError::Rejected(format!(
            "{}: {}",
            env.error_type.unwrap_or_default(),
            env.error.unwrap_or_default()
        )));
    }
    let data = env
        .data
        .ok_or_else(|| CollectError::Parse("success response without data".into()))?;
    if data.result_type != "matrix" {
        return Err(CollectError::Parse(format!(
            "expected matrix result, got `{}`",
            data.result_type
        )));
    }
    data.result
        .into_iter()
        .map(|mut entry| {
            let name = entry.metric.remove("__name__").unwrap_or_default();
            let samples = entry
                .values
                .into_iter()
                .map(|(ts, v)| {
                    let timestamp = Timestamp::from_secs_f64(ts)
                        .map_err(|e| CollectError::Parse(e.to_string()))?;
                    let value = parse_sample_value(&v)?;
                    Ok(MetricSample::new(timestamp, value))
                })
                .collect::<Result<Vec<_>, CollectError>>()?;
            MetricSeries::new(name, entry.metric, kind, samples)
                .map_err(|e| CollectError::Parse(e.to_string()))
        })
        .collect()
}

fn parse_sample_value(v: &str) -> Result<f64, CollectError> {
    v.parse::<f64>()
        .map_err(|_| CollectError::Parse(format!("sample value `{v}` is not a number")))
}

/// Attempts and exponential backoff for transport failures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy {
            attempts: 1,
            initial_backoff: Duration::ZERO,
        }
    }

    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, CollectError>) -> Result<T, CollectError> {
        let mut backoff = self.initial_backoff;
        let mut attempt = 1;
        loop {
            match op() {
                Err(e) if e.is_retriable() && attempt < self.attempts.max(1) => {
                    log::debug!("attempt {attempt} failed ({e}); retrying in {backoff:?}");
                    std::thread::sleep(backoff);
                    backoff *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// Blocking client for a Prometheus-compatible query endpoint.
#[derive(Debug, Clone)]
pub struct PromClient {
    endpoint: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
}

impl PromClient {
    pub fn new(endpoint: &str) -> Self {
        Self::with_policy(endpoint, RetryPolicy::default(), Duration::from_secs(30))
    }

    pub fn with_policy(endpoint: &str, retry: RetryPolicy, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        PromClient {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            agent,
            retry,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn query_once(
        &self,
        query: &ResponseQuery,
        window: &TimeWindow,
    ) -> Result<Vec<MetricSeries>, CollectError> {
        let url = format!("{}{}", self.endpoint, QUERY_RANGE_PATH);
        let mut resp = self
            .agent
            .get(&url)
            .query("query", &query.promql)
            .query("start", window.start().to_decimal_secs())
            .query("end", window.end().to_decimal_secs())
            .query("step", query.step_seconds.to_string())
            .call()
            .map_err(|e| CollectError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| CollectError::Transport(e.to_string()))?;
        if status >= 500 || status == 429 {
            return Err(CollectError::Transport(format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) && !body.trim_start().starts_with('{') {
            return Err(CollectError::Rejected(format!("HTTP {status}")));
        }
        decode_matrix(&body, query.kind)
    }
}

impl MetricSource for PromClient {
    fn query_range(
        &self,
        query: &ResponseQuery,
        window: &TimeWindow,
    ) -> Result<Vec<MetricSeries>, CollectError> {
        self.retry.run(|| self.query_once(query, window))
    }
}
