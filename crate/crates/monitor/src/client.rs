//! Blocking client for the monitor's read endpoints.

use std::time::Duration;

use serde::de::DeserializeOwned;
use thiserror::Error;

use crate::scheduler::HealthReport;
use crate::service::{CpuSeries, EnergySummary, LatestPower, MemorySeries};

pub const DEFAULT_TIMEOUT_MS: u64 = 500;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("monitor unreachable: {0}")]
    Unreachable(String),
    #[error("monitor answered {status}: {body}")]
    Status { status: u16, body: String },
    #[error("bad response body: {0}")]
    Decode(String),
}

#[derive(Clone, Debug)]
pub struct EnergyClient {
    base_url: String,
    http: reqwest::blocking::Client,
}

impl EnergyClient {
    pub fn new(base_url: impl Into<String>) -> Result<Self, ClientError> {
        Self::with_timeout(base_url, DEFAULT_TIMEOUT_MS)
    }

    pub fn with_timeout(base_url: impl Into<String>, timeout_ms: u64) -> Result<Self, ClientError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(timeout_ms.max(1)))
            .build()
            .map_err(|e| ClientError::Unreachable(e.to_string()))?;
        Ok(Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            http,
        })
    }

    fn get<T: DeserializeOwned>(
        &self,
        path: &str,
        query: &[(&str, String)],
    ) -> Result<T, ClientError> {
        let resp = self
            .http
            .get(format!("{}{path}", self.base_url))
            .query(query)
            .send()
            .map_err(|e| ClientError::Unreachable(e.to_string()))?;
        let status = resp.status();
        let body = resp
            .text()
            .map_err(|e| ClientError::Unreachable(e.to_string()))?;
        if !status.is_success() {
            return Err(ClientError::Status {
                status: status.as_u16(),
                body,
            });
        }
        serde_json::from_str(&body).map_err(|e| ClientError::Decode(e.to_string()))
    }

    fn range(
        process: &str,
        from_ms: Option<i64>,
        to_ms: Option<i64>,
    ) -> Vec<(&'static str, String)> {
        let mut q = vec![("process", process.to_string())];
        if let Some(f) = from_ms {
            q.push(("from_ms", f.to_string()));
        }
        if let Some(t) = to_ms {
            q.push(("to_ms", t.to_string()));
        }
        q
    }

    /// The energy consumed by `process` over the windows inside the range.
    pub fn get_energy(
        &self,
        process: &str,
        from_ms: Option<i64>,
        to_ms: Option<i64>,
    ) -> Result<EnergySummary, ClientError> {
        self.get("/energy", &Self::range(process, from_ms, to_ms))
    }

    pub fn get_cpu(
        &self,
        process: &str,
        from_ms: Option<i64>,
        to_ms: Option<i64>,
    ) -> Result<CpuSeries, ClientError> {
        self.get("/cpu", &Self::range(process, from_ms, to_ms))
    }

    pub fn get_memory(
        &self,
        process: &str,
        from_ms: Option<i64>,
        to_ms: Option<i64>,
    ) -> Result<MemorySeries, ClientError> {
        self.get("/memory", &Self::range(process, from_ms, to_ms))
    }

    pub fn latest_power(&self, process: &str) -> Result<LatestPower, ClientError> {
        self.get("/power/latest", &[("process", process.to_string())])
    }

    pub fn health(&self) -> Result<HealthReport, ClientError> {
        self.get("/healthz", &[])
    }
}
