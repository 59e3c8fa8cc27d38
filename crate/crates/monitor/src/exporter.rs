//! A metrics exporter serving simulated readings in exposition format.

use std::sync::Arc;

use axum::extract::State;
use axum::http::header;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use encoms_core::sampling::{
    render_exposition, Clock, PowerSample, PowerSource, ProcessResource, ScrapeTarget,
};
use parking_lot::Mutex;

use crate::server::{bind, spawn, ServerHandle};
use crate::MonitorError;

pub type SharedSource = Arc<Mutex<dyn PowerSource>>;

#[derive(Clone)]
struct ExporterState {
    source: SharedSource,
    clock: Arc<dyn Clock>,
    naming: ScrapeTarget,
}

/// Renders the source's readings at `t_ms`.
pub fn render_at(source: &SharedSource, naming: &ScrapeTarget, t_ms: i64) -> String {
    let readings = source.lock().readings_at(t_ms);
    let mut power = Vec::new();
    let mut resources = Vec::new();
    for r in readings {
        power.push(PowerSample {
            timestamp_ms: t_ms,
            power_watts: r.power_watts,
            process_id: r.process_id,
            process_name: r.process_name.clone(),
            host: String::new(),
        });
        if let Some(sample) = r.resources {
            resources.push(ProcessResource {
                process_id: r.process_id,
                process_name: r.process_name,
                host: String::new(),
                sample,
            });
        }
    }
    render_exposition(&power, &resources, naming)
}

async fn metrics(State(s): State<ExporterState>) -> impl IntoResponse {
    let t = s.clock.now_ms();
    let body = render_at(&s.source, &s.naming, t);
    ([(header::CONTENT_TYPE, "text/plain; version=0.0.4")], body)
}

/// Serves `GET /metrics` on `listen`. Metric names and units follow `naming`.
pub fn serve_exporter(
    listen: &str,
    source: SharedSource,
    clock: Arc<dyn Clock>,
    naming: ScrapeTarget,
) -> Result<ServerHandle, MonitorError> {
    let router = Router::new()
        .route("/metrics", get(metrics))
        .with_state(ExporterState {
            source,
            clock,
            naming,
        });
    spawn(bind(listen)?, router)
}
