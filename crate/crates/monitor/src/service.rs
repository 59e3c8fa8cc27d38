//! Read-only HTTP endpoints over the store.

use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use encoms_core::store::{Metric, Point, SeriesKey, Store, StoreError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scheduler::SharedHealth;

#[derive(Debug, Error, PartialEq)]
pub enum ServiceError {
    #[error("unknown process `{0}`")]
    UnknownProcess(String),
    #[error("{0}")]
    BadRequest(String),
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match self {
            ServiceError::UnknownProcess(_) => StatusCode::NOT_FOUND,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
        };
        let body = serde_json::json!({ "error": self.to_string() });
        (status, Json(body)).into_response()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergySummary {
    pub process: String,
    pub host: String,
    pub from_ms: i64,
    pub to_ms: i64,
    pub joules: f64,
    pub normalized: f64,
    pub window_count: usize,
    pub gaps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpuPoint {
    pub t_ms: i64,
    pub cpu_percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryPoint {
    pub t_ms: i64,
    pub mem_mb: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpuSeries {
    pub process: String,
    pub host: String,
    pub from_ms: i64,
    pub to_ms: i64,
    pub resources: Vec<CpuPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemorySeries {
    pub process: String,
    pub host: String,
    pub from_ms: i64,
    pub to_ms: i64,
    pub resources: Vec<MemoryPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatestPower {
    pub process: String,
    pub host: String,
    pub t_ms: i64,
    pub power_watts: f64,
}

/// Range and identity of a query, as parsed from the query string.
#[derive(Clone, Debug, PartialEq)]
pub struct RangeQuery {
    pub process: String,
    pub host: Option<String>,
    pub from_ms: i64,
    pub to_ms: i64,
}

impl RangeQuery {
    pub fn parse(params: &HashMap<String, String>) -> Result<Self, ServiceError> {
        let process = params
            .get("process")
            .filter(|p| !p.is_empty())
            .ok_or_else(|| ServiceError::BadRequest("missing `process`".into()))?
            .clone();
        let num = |name: &str, default: i64| -> Result<i64, ServiceError> {
            match params.get(name) {
                None => Ok(default),
                Some(v) => v
                    .parse()
                    .map_err(|_| ServiceError::BadRequest(format!("`{name}` is not an integer"))),
            }
        };
        let from_ms = num("from_ms", i64::MIN)?;
        let to_ms = num("to_ms", i64::MAX)?;
        if from_ms > to_ms {
            return Err(ServiceError::BadRequest(format!(
                "from_ms {from_ms} is after to_ms {to_ms}"
            )));
        }
        Ok(Self {
            process,
            host: params.get("host").filter(|h| !h.is_empty()).cloned(),
            from_ms,
            to_ms,
        })
    }
}

/// Finds the series for a process. Without a host the name must be unique.
fn resolve(store: &Store, q: &RangeQuery, metric: Metric) -> Result<SeriesKey, ServiceError> {
    let mut matches: Vec<SeriesKey> = store
        .keys()
        .into_iter()
        .filter(|k| k.process_name == q.process && k.metric == metric)
        .filter(|k| q.host.as_ref().is_none_or(|h| &k.host == h))
        .collect();
    match matches.len() {
        0 => Err(ServiceError::UnknownProcess(q.process.clone())),
        1 => Ok(matches.remove(0)),
        _ => Err(ServiceError::BadRequest(format!(
            "process `{}` is monitored on several hosts; pass `host`",
            q.process
        ))),
    }
}

fn points(store: &Store, key: &SeriesKey, q: &RangeQuery) -> Result<Vec<Point>, ServiceError> {
    store
        .query_range(key, q.from_ms, q.to_ms)
        .map_err(|e| match e {
            StoreError::UnknownSeries(_) => ServiceError::UnknownProcess(q.process.clone()),
            other => ServiceError::BadRequest(other.to_string()),
        })
}

/// Energy over the windows lying entirely in `[from_ms, to_ms]`, normalized by
/// the largest window the process has produced so far.
pub fn energy_summary(store: &Store, q: &RangeQuery) -> Result<EnergySummary, ServiceError> {
    let key = resolve(store, q, Metric::Energy)?;
    let mut joules = 0.0;
    let mut window_count = 0;
    let mut gaps = 0;
    for p in points(store, &key, q)? {
        match p {
            Point::Window(w) if w.t1_ms <= q.to_ms => {
                joules += w.joules;
                window_count += 1;
            }
            Point::Gap(g) if g.t1_ms <= q.to_ms => gaps += 1,
            _ => {}
        }
    }
    let max = store
        .query_range(&key, i64::MIN, i64::MAX)
        .unwrap_or_default()
        .iter()
        .filter_map(|p| match p {
            Point::Window(w) => Some(w.joules),
            _ => None,
        })
        .fold(0.0, f64::max);
    Ok(EnergySummary {
        process: q.process.clone(),
        host: key.host,
        from_ms: q.from_ms,
        to_ms: q.to_ms,
        joules,
        normalized: if max > 0.0 { joules / max } else { 0.0 },
        window_count,
        gaps,
    })
}

fn samples(
    store: &Store,
    q: &RangeQuery,
    metric: Metric,
) -> Result<(String, Vec<(i64, f64)>), ServiceError> {
    let key = resolve(store, q, metric)?;
    let pts = points(store, &key, q)?
        .into_iter()
        .filter_map(|p| match p {
            Point::Sample { t_ms, value } => Some((t_ms, value)),
            _ => None,
        })
        .collect();
    Ok((key.host, pts))
}

pub fn cpu_series(store: &Store, q: &RangeQuery) -> Result<CpuSeries, ServiceError> {
    let (host, pts) = samples(store, q, Metric::Cpu)?;
    Ok(CpuSeries {
        process: q.process.clone(),
        host,
        from_ms: q.from_ms,
        to_ms: q.to_ms,
        resources: pts
            .into_iter()
            .map(|(t_ms, cpu_percent)| CpuPoint { t_ms, cpu_percent })
            .collect(),
    })
}

pub fn memory_series(store: &Store, q: &RangeQuery) -> Result<MemorySeries, ServiceError> {
    let (host, pts) = samples(store, q, Metric::Memory)?;
    Ok(MemorySeries {
        process: q.process.clone(),
        host,
        from_ms: q.from_ms,
        to_ms: q.to_ms,
        resources: pts
            .into_iter()
            .map(|(t_ms, mem_mb)| MemoryPoint { t_ms, mem_mb })
            .collect(),
    })
}

pub fn latest_power(store: &Store, q: &RangeQuery) -> Result<LatestPower, ServiceError> {
    let key = resolve(store, q, Metric::Power)?;
    match store.last_point(&key) {
        Some(Point::Sample { t_ms, value }) => Ok(LatestPower {
            process: q.process.clone(),
            host: key.host,
            t_ms,
            power_watts: value,
        }),
        _ => Err(ServiceError::UnknownProcess(q.process.clone())),
    }
}

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pub health: SharedHealth,
}

type Params = Query<HashMap<String, String>>;

async fn energy(
    State(s): State<AppState>,
    Query(p): Params,
) -> Result<Json<EnergySummary>, ServiceError> {
    energy_summary(&s.store, &RangeQuery::parse(&p)?).map(Json)
}

async fn cpu(State(s): State<AppState>, Query(p): Params) -> Result<Json<CpuSeries>, ServiceError> {
    cpu_series(&s.store, &RangeQuery::parse(&p)?).map(Json)
}

async fn memory(
    State(s): State<AppState>,
    Query(p): Params,
) -> Result<Json<MemorySeries>, ServiceError> {
    memory_series(&s.store, &RangeQuery::parse(&p)?).map(Json)
}

async fn power_latest(
    State(s): State<AppState>,
    Query(p): Params,
) -> Result<Json<LatestPower>, ServiceError> {
    latest_power(&s.store, &RangeQuery::parse(&p)?).map(Json)
}

async fn healthz(State(s): State<AppState>) -> Json<serde_json::Value> {
    Json(serde_json::to_value(&*s.health.read()).expect("health serializes"))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/energy", get(energy))
        .route("/cpu", get(cpu))
        .route("/memory", get(memory))
        .route("/power/latest", get(power_latest))
        .route("/healthz", get(healthz))
        .with_state(state)
}
