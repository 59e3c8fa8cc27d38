use std::path::{Path, PathBuf};
use std::sync::Arc;

use encoms_core::adaptation::Mode;
use encoms_core::energy::IntegratorConfig;
use encoms_core::sampling::{
    Clock, ConstantProfile, ProcessSelector, ReplayBackend, SamplingBackend, ScrapeBackend,
    ScrapeTarget, SimulatedBackend,
};
use encoms_core::target_sim::{SimConfig, Simulator};
use serde::{Deserialize, Serialize};

use crate::MonitorError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantProcess {
    pub pid: u32,
    pub name: String,
    pub watts: f64,
}

/// One polled source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum TargetSpec {
    Scrape(ScrapeTarget),
    Replay {
        path: PathBuf,
        #[serde(default = "default_host")]
        host: String,
        #[serde(default)]
        pace_ms: Option<i64>,
    },
    Sim {
        #[serde(default = "default_host")]
        host: String,
        #[serde(default)]
        sim: SimConfig,
        #[serde(default)]
        start_mode: Mode,
    },
    Constant {
        #[serde(default = "default_host")]
        host: String,
        processes: Vec<ConstantProcess>,
    },
}

fn default_host() -> String {
    "localhost".into()
}

impl TargetSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            TargetSpec::Scrape(_) => "scrape",
            TargetSpec::Replay { .. } => "replay",
            TargetSpec::Sim { .. } => "sim",
            TargetSpec::Constant { .. } => "constant",
        }
    }

    pub fn build(&self, clock: Arc<dyn Clock>) -> Result<Box<dyn SamplingBackend>, MonitorError> {
        Ok(match self {
            TargetSpec::Scrape(t) => Box::new(ScrapeBackend::new(t.clone(), clock)?),
            TargetSpec::Replay {
                path,
                host,
                pace_ms,
            } => {
                let b = ReplayBackend::from_file(path, host.clone())?;
                match pace_ms {
                    Some(p) => Box::new(b.paced(*p)),
                    None => Box::new(b),
                }
            }
            TargetSpec::Sim {
                host,
                sim,
                start_mode,
            } => {
                let sim = Simulator::new(sim.clone(), *start_mode, clock.now_ms())
                    .map_err(|e| MonitorError::InvalidConfig(e.to_string()))?;
                Box::new(SimulatedBackend::new(sim, clock, host.clone()))
            }
            TargetSpec::Constant { host, processes } => {
                let profile = ConstantProfile {
                    processes: processes
                        .iter()
                        .map(|p| (p.pid, p.name.clone(), p.watts))
                        .collect(),
                };
                Box::new(SimulatedBackend::new(profile, clock, host.clone()))
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorConfig {
    pub targets: Vec<TargetSpec>,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default = "default_listen")]
    pub listen_address: String,
    /// Process name globs; entries made only of digits select a pid.
    pub monitored_processes: Vec<String>,
    /// JSON-lines store file; in memory when absent.
    #[serde(default)]
    pub store_path: Option<PathBuf>,
}

fn default_listen() -> String {
    "127.0.0.1:9100".into()
}

impl MonitorConfig {
    pub fn new(targets: Vec<TargetSpec>, monitored_processes: Vec<String>) -> Self {
        Self {
            targets,
            integrator: IntegratorConfig::default(),
            listen_address: default_listen(),
            monitored_processes,
            store_path: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, MonitorError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| MonitorError::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), MonitorError> {
        if self.targets.is_empty() {
            return Err(MonitorError::InvalidConfig("no targets configured".into()));
        }
        if self.monitored_processes.is_empty() {
            return Err(MonitorError::InvalidConfig(
                "no monitored processes configured".into(),
            ));
        }
        self.integrator.validate()?;
        Ok(())
    }

    pub fn selector(&self) -> ProcessSelector {
        let mut sel = ProcessSelector::default();
        for p in &self.monitored_processes {
            match p.parse::<u32>() {
                Ok(pid) if p.chars().all(|c| c.is_ascii_digit()) => {
                    sel.pids.insert(pid);
                }
                _ => sel.names.push(p.clone()),
            }
        }
        sel
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_target_kind() {
        let text = r#"{
            "targets": [
                {"backend": "scrape", "endpoint_url": "http://10.0.0.2:8080/metrics"},
                {"backend": "replay", "path": "trace.jsonl", "pace_ms": 2000},
                {"backend": "sim", "host": "sim", "start_mode": "LowPower"},
                {"backend": "constant", "processes": [{"pid": 1, "name": "webui", "watts": 3.0}]}
            ],
            "integrator": {"interval_ms": 2000, "window_ms": 4000},
            "monitored_processes": ["recomm*", "77"]
        }"#;
        let cfg: MonitorConfig = serde_json::from_str(text).unwrap();
        cfg.validate().unwrap();
        let kinds: Vec<&str> = cfg.targets.iter().map(TargetSpec::kind).collect();
        assert_eq!(kinds, ["scrape", "replay", "sim", "constant"]);
        match &cfg.targets[0] {
            TargetSpec::Scrape(t) => {
                assert_eq!(t.unit_scale, 1e-6);
                assert_eq!(t.effective_host(), "10.0.0.2:8080");
            }
            other => panic!("{other:?}"),
        }
        let sel = cfg.selector();
        assert_eq!(sel.names, ["recomm*"]);
        assert!(sel.pids.contains(&77));
        assert_eq!(cfg.listen_address, "127.0.0.1:9100");
    }

    #[test]
    fn rejects_empty_or_fast_configs() {
        let mut cfg = MonitorConfig::new(vec![], vec!["x".into()]);
        assert!(cfg.validate().is_err());
        cfg.targets.push(TargetSpec::Constant {
            host: "h".into(),
            processes: vec![],
        });
        cfg.validate().unwrap();
        cfg.integrator = IntegratorConfig::new(500, 2000);
        assert!(cfg.validate().is_err());
        cfg.integrator = cfg.integrator.with_fast_sampling();
        cfg.validate().unwrap();
    }
}
