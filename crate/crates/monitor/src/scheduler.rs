//! The poll, integrate and store loop.

use std::collections::BTreeMap;
use std::sync::Arc;

use encoms_core::energy::{
    normalize, EnergyWindow, IntegratorConfig, MaxTracker, WindowIntegrator, WindowOutcome,
};
use encoms_core::sampling::{poll, ProcessSelector, SamplingBackend};
use encoms_core::store::{Metric, Point, SeriesKey, Store, StoreError};
use log::warn;
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::MonitorError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TargetHealth {
    pub target: String,
    pub consecutive_failures: u32,
    pub total_failures: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_success_ms: Option<i64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HealthReport {
    pub status: String,
    pub targets: Vec<TargetHealth>,
}

impl HealthReport {
    fn refresh_status(&mut self) {
        let degraded = self.targets.iter().any(|t| t.consecutive_failures > 0);
        self.status = if degraded { "degraded" } else { "ok" }.into();
    }

    pub fn is_degraded(&self) -> bool {
        self.status == "degraded"
    }
}

pub type SharedHealth = Arc<RwLock<HealthReport>>;

/// Windows and gap markers closed by one tick.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TickReport {
    pub t_ms: i64,
    pub outcomes: Vec<(SeriesKey, WindowOutcome)>,
    pub power_samples: usize,
    pub failed_targets: usize,
}

struct StreamState {
    target: usize,
    integrator: WindowIntegrator,
    tracker: MaxTracker,
}

/// Polls every backend, integrates each process stream into windows and
/// appends samples, windows and gaps to the store.
///
/// Streams are keyed by host and process name; readings of several pids
/// sharing a name at one instant are summed.
pub struct MonitorScheduler {
    backends: Vec<Box<dyn SamplingBackend>>,
    selector: ProcessSelector,
    integrator: IntegratorConfig,
    store: Arc<Store>,
    health: SharedHealth,
    streams: BTreeMap<(String, String), StreamState>,
}

impl MonitorScheduler {
    pub fn new(
        backends: Vec<Box<dyn SamplingBackend>>,
        selector: ProcessSelector,
        integrator: IntegratorConfig,
        store: Arc<Store>,
    ) -> Result<Self, MonitorError> {
        integrator.validate()?;
        if backends.is_empty() {
            return Err(MonitorError::InvalidConfig("no targets configured".into()));
        }
        let mut report = HealthReport {
            status: String::new(),
            targets: backends
                .iter()
                .map(|b| TargetHealth {
                    target: b.describe(),
                    ..TargetHealth::default()
                })
                .collect(),
        };
        report.refresh_status();
        Ok(Self {
            backends,
            selector,
            integrator,
            store,
            health: Arc::new(RwLock::new(report)),
            streams: BTreeMap::new(),
        })
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn health(&self) -> SharedHealth {
        Arc::clone(&self.health)
    }

    pub fn interval_ms(&self) -> u64 {
        self.integrator.interval_ms
    }

    pub fn backend_mut(&mut self, index: usize) -> Option<&mut Box<dyn SamplingBackend>> {
        self.backends.get_mut(index)
    }

    fn append(&self, key: &SeriesKey, points: Vec<Point>) {
        if points.is_empty() {
            return;
        }
        match self.store.append(key, points) {
            Ok(()) => {}
            Err(e @ StoreError::OutOfOrderAppend { .. }) => warn!("{e}; points dropped"),
            Err(e) => warn!("store append for {key} failed: {e}"),
        }
    }

    fn record(
        &mut self,
        outcomes: Vec<WindowOutcome>,
        host: &str,
        name: &str,
    ) -> Vec<(SeriesKey, WindowOutcome)> {
        let Ok(key) = SeriesKey::new(host, name, Metric::Energy) else {
            return Vec::new();
        };
        let state = self
            .streams
            .get_mut(&(host.to_string(), name.to_string()))
            .expect("stream exists");
        let mut points = Vec::new();
        let mut out = Vec::new();
        for o in outcomes {
            let o = match o {
                WindowOutcome::Window(w) => {
                    WindowOutcome::Window(normalize(&w, &mut state.tracker))
                }
                g => g,
            };
            points.push(match &o {
                WindowOutcome::Window(w) => Point::Window(w.clone()),
                WindowOutcome::Gap(g) => Point::Gap(*g),
            });
            out.push((key.clone(), o));
        }
        self.append(&key, points);
        out
    }

    /// Runs one polling round at `now_ms`.
    pub fn tick(&mut self, now_ms: i64) -> TickReport {
        let mut report = TickReport {
            t_ms: now_ms,
            ..TickReport::default()
        };
        for idx in 0..self.backends.len() {
            let result = poll(self.backends[idx].as_mut(), &self.selector);
            let batch = match result {
                Ok(b) => {
                    let mut h = self.health.write();
                    let t = &mut h.targets[idx];
                    t.consecutive_failures = 0;
                    t.last_success_ms = Some(now_ms);
                    h.refresh_status();
                    b
                }
                Err(e) => {
                    warn!("poll of {} failed: {e}", self.backends[idx].describe());
                    {
                        let mut h = self.health.write();
                        let t = &mut h.targets[idx];
                        t.consecutive_failures += 1;
                        t.total_failures += 1;
                        t.last_error = Some(e.to_string());
                        h.refresh_status();
                    }
                    report.failed_targets += 1;
                    let affected: Vec<(String, String)> = self
                        .streams
                        .iter()
                        .filter(|(_, s)| s.target == idx)
                        .map(|(k, _)| k.clone())
                        .collect();
                    for (host, name) in affected {
                        let outs = self
                            .streams
                            .get_mut(&(host.clone(), name.clone()))
                            .expect("stream exists")
                            .integrator
                            .push_gap(now_ms);
                        report.outcomes.extend(self.record(outs, &host, &name));
                    }
                    continue;
                }
            };

            let mut power: BTreeMap<(String, String), BTreeMap<i64, f64>> = BTreeMap::new();
            for s in &batch.power {
                *power
                    .entry((s.host.clone(), s.process_name.clone()))
                    .or_default()
                    .entry(s.timestamp_ms)
                    .or_default() += s.power_watts;
            }
            let mut resources: BTreeMap<(String, String), BTreeMap<i64, (f64, f64)>> =
                BTreeMap::new();
            for r in &batch.resources {
                let e = resources
                    .entry((r.host.clone(), r.process_name.clone()))
                    .or_default()
                    .entry(r.sample.timestamp_ms)
                    .or_default();
                e.0 += r.sample.cpu_percent;
                e.1 += r.sample.memory_mb;
            }

            for ((host, name), series) in power {
                let Ok(key) = SeriesKey::new(host.clone(), name.clone(), Metric::Power) else {
                    continue;
                };
                if !self.streams.contains_key(&(host.clone(), name.clone())) {
                    let integrator = WindowIntegrator::new(&self.integrator)
                        .expect("integrator config validated at construction");
                    self.streams.insert(
                        (host.clone(), name.clone()),
                        StreamState {
                            target: idx,
                            integrator,
                            tracker: MaxTracker::default(),
                        },
                    );
                }
                report.power_samples += series.len();
                let mut outs = Vec::new();
                let mut points = Vec::new();
                let state = self
                    .streams
                    .get_mut(&(host.clone(), name.clone()))
                    .expect("stream exists");
                for (t, w) in series {
                    match state.integrator.push(t, w) {
                        Ok(o) => {
                            outs.extend(o);
                            points.push(Point::Sample { t_ms: t, value: w });
                        }
                        Err(e) => warn!("{key}: sample at {t} ms rejected: {e}"),
                    }
                }
                self.append(&key, points);
                report.outcomes.extend(self.record(outs, &host, &name));
            }

            for ((host, name), series) in resources {
                let (Ok(cpu), Ok(mem)) = (
                    SeriesKey::new(host.clone(), name.clone(), Metric::Cpu),
                    SeriesKey::new(host, name, Metric::Memory),
                ) else {
                    continue;
                };
                let (c, m): (Vec<Point>, Vec<Point>) = series
                    .into_iter()
                    .map(|(t, (c, m))| {
                        (
                            Point::Sample {
                                t_ms: t,
                                value: c.min(100.0),
                            },
                            Point::Sample { t_ms: t, value: m },
                        )
                    })
                    .unzip();
                self.append(&cpu, c);
                self.append(&mem, m);
            }
        }
        report
    }

    /// Closes every stream, storing any partial trailing window.
    pub fn finish(mut self) -> Vec<(SeriesKey, EnergyWindow)> {
        let streams = std::mem::take(&mut self.streams);
        let mut out = Vec::new();
        for ((host, name), mut state) in streams {
            let Ok(key) = SeriesKey::new(host, name, Metric::Energy) else {
                continue;
            };
            if let Some(w) = state.integrator.finish() {
                let w = normalize(&w, &mut state.tracker);
                self.append(&key, vec![Point::Window(w.clone())]);
                out.push((key, w));
            }
        }
        out
    }
}

impl std::fmt::Debug for MonitorScheduler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MonitorScheduler")
            .field("targets", &self.backends.len())
            .field("streams", &self.streams.len())
            .finish()
    }
}
