//! Energy monitor: polls power backends on a fixed interval, integrates the
//! samples into energy windows, stores them and serves them over HTTP.

pub mod client;
pub mod config;
pub mod exporter;
pub mod scheduler;
pub mod server;
pub mod service;

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use encoms_core::energy::EnergyError;
use encoms_core::sampling::{Clock, MonotonicClock, SamplingBackend, SamplingError};
use encoms_core::store::{Store, StoreError};
use thiserror::Error;

pub use client::EnergyClient;
pub use config::{MonitorConfig, TargetSpec};
pub use scheduler::{HealthReport, MonitorScheduler, TickReport};
pub use server::ServerHandle;
pub use service::{AppState, EnergySummary};

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("invalid monitor configuration: {0}")]
    InvalidConfig(String),
    #[error("cannot listen on {addr}: {source}")]
    BindFailure {
        addr: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Serves the read endpoints for `store` on `listen`.
pub fn serve(
    listen: &str,
    store: Arc<Store>,
    health: scheduler::SharedHealth,
) -> Result<ServerHandle, MonitorError> {
    let listener = server::bind(listen)?;
    server::spawn(listener, service::router(AppState { store, health }))
}

/// A running monitor: a poller thread plus the HTTP service.
#[derive(Debug)]
pub struct MonitorHandle {
    server: Option<ServerHandle>,
    stop: Arc<AtomicBool>,
    poller: Option<JoinHandle<()>>,
    store: Arc<Store>,
    health: scheduler::SharedHealth,
}

impl MonitorHandle {
    pub fn addr(&self) -> SocketAddr {
        self.server.as_ref().expect("running").addr()
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr())
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn health(&self) -> HealthReport {
        self.health.read().clone()
    }

    /// Blocks until the poller exits (it only exits on `stop`).
    pub fn wait(mut self) {
        if let Some(p) = self.poller.take() {
            let _ = p.join();
        }
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(p) = self.poller.take() {
            let _ = p.join();
        }
        if let Some(s) = self.server.take() {
            s.stop();
        }
    }
}

impl Drop for MonitorHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Starts polling `backends` every interval and serving the results.
pub fn run_monitor_with(
    config: &MonitorConfig,
    backends: Vec<Box<dyn SamplingBackend>>,
    clock: Arc<dyn Clock>,
) -> Result<MonitorHandle, MonitorError> {
    config.validate()?;
    let store = Arc::new(match &config.store_path {
        Some(p) => Store::open(p)?,
        None => Store::in_memory(),
    });
    let mut scheduler = MonitorScheduler::new(
        backends,
        config.selector(),
        config.integrator,
        Arc::clone(&store),
    )?;
    let health = scheduler.health();
    let server = serve(
        &config.listen_address,
        Arc::clone(&store),
        Arc::clone(&health),
    )?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&stop);
    let interval = Duration::from_millis(scheduler.interval_ms());
    let poller = std::thread::Builder::new()
        .name("monitor-poller".into())
        .spawn(move || {
            let mut next = Instant::now();
            while !flag.load(Ordering::SeqCst) {
                scheduler.tick(clock.now_ms());
                next += interval;
                // sleep in short slices so stop requests are honoured promptly
                while !flag.load(Ordering::SeqCst) {
                    let now = Instant::now();
                    if now >= next {
                        break;
                    }
                    std::thread::sleep((next - now).min(Duration::from_millis(50)));
                }
            }
            scheduler.finish();
        })?;
    Ok(MonitorHandle {
        server: Some(server),
        stop,
        poller: Some(poller),
        store,
        health,
    })
}

/// Builds the configured backends against the wall clock and starts the
/// monitor.
pub fn run_monitor(config: &MonitorConfig) -> Result<MonitorHandle, MonitorError> {
    config.validate()?;
    let clock: Arc<dyn Clock> = Arc::new(MonotonicClock::new());
    let backends = config
        .targets
        .iter()
        .map(|t| t.build(Arc::clone(&clock)))
        .collect::<Result<Vec<_>, _>>()?;
    run_monitor_with(config, backends, clock)
}
