//! The repeated measurement protocol: start the target, warm it up, monitor
//! it, export the iteration, reset, repeat.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use encoms_core::adaptation::{
    resolve_rules, MetricsSnapshot, Mode, Observation, ObservationScheduler, SchedulerConfig,
    TransitionEvent,
};
use encoms_core::energy::{IntegratorConfig, WindowOutcome};
use encoms_core::sampling::{ManualClock, ProcessSelector, ResourceSample, SimulatedBackend};
use encoms_core::store::{export_iteration, IterationExport, Metric, Point, SeriesKey, Store};
use encoms_core::target_sim::{
    ModeBinding, PowerModel, SimConfig, Simulator, StaticProcess, WorkloadProfile,
};
use encoms_monitor::MonitorScheduler;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

pub const PROCESS: &str = "recommender";
pub const HOST: &str = "sim-node";
pub const MANIFEST: &str = "manifest.json";

/// CPU drawn by the adaptation component in the adaptable builds.
pub const ADAPTABLE_OVERHEAD_CPU: f64 = 0.02;

#[allow(clippy::upper_case_acronyms)]
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    /// Adaptable build with the adaptation flag off.
    NOADAPT,
    /// Adaptable build with adaptation on.
    ADAPT,
    /// The non-adaptable original build.
    ORIGINAL,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "NOADAPT" => Ok(Scenario::NOADAPT),
            "ADAPT" => Ok(Scenario::ADAPT),
            "ORIGINAL" => Ok(Scenario::ORIGINAL),
            _ => Err(format!(
                "unknown scenario `{s}` (NOADAPT, ADAPT or ORIGINAL)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub iterations: u32,
    pub warmup_s: u32,
    pub monitor_s: u32,
    pub workload: WorkloadProfile,
    pub rule_preset: String,
    pub seed: u64,
    #[serde(skip)]
    pub output_dir: PathBuf,
    pub interval_ms: u64,
    /// Name the variant goes by in reports; the scenario name when absent.
    pub label: Option<String>,
    /// Mode to recommender binding; scenario default when absent.
    pub binding: Option<ModeBinding>,
    pub power: PowerModel,
    /// Extra CPU of the adaptation component; scenario default when absent.
    pub overhead_cpu_fraction: Option<f64>,
    pub static_processes: Vec<StaticProcess>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::NOADAPT,
            iterations: 30,
            warmup_s: 20,
            monitor_s: 100,
            workload: WorkloadProfile::default(),
            rule_preset: "energy-adapt".into(),
            seed: 0,
            output_dir: PathBuf::from("out"),
            interval_ms: 2000,
            label: None,
            binding: None,
            power: PowerModel::default(),
            overhead_cpu_fraction: None,
            static_processes: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn new(scenario: Scenario, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            scenario,
            output_dir: output_dir.into(),
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| self.scenario.to_string())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidConfig(m));
        if self.iterations < 1 {
            return bad("iterations must be >= 1".into());
        }
        IntegratorConfig::new(self.interval_ms, self.interval_ms)
            .validate()
            .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        let monitor_ms = u64::from(self.monitor_s) * 1000;
        if monitor_ms < 2 * self.interval_ms {
            return bad(format!(
                "monitor_s {} is shorter than two intervals",
                self.monitor_s
            ));
        }
        if monitor_ms % self.interval_ms != 0
            || (u64::from(self.warmup_s) * 1000) % self.interval_ms != 0
        {
            return bad("warmup and monitor spans must be multiples of the interval".into());
        }
        if !self.interval_ms.is_multiple_of(1000) {
            return bad("interval_ms must be a multiple of 1000".into());
        }
        if self.scenario == Scenario::ADAPT {
            resolve_rules(&self.rule_preset)?;
        }
        self.sim_config(0)?;
        Ok(())
    }

    pub fn binding(&self) -> ModeBinding {
        self.binding.clone().unwrap_or_else(|| match self.scenario {
            Scenario::ORIGINAL => ModeBinding::fixed(ModeBinding::default().normal),
            _ => ModeBinding::default(),
        })
    }

    pub fn overhead(&self) -> f64 {
        self.overhead_cpu_fraction.unwrap_or(match self.scenario {
            Scenario::ORIGINAL => 0.0,
            _ => ADAPTABLE_OVERHEAD_CPU,
        })
    }

    pub fn sim_config(&self, seed: u64) -> Result<SimConfig, HarnessError> {
        let cfg = SimConfig {
            process_name: PROCESS.into(),
            workload: self.workload.clone(),
            binding: self.binding(),
            power: self.power,
            overhead_cpu_fraction: self.overhead(),
            window_ms: self.interval_ms as i64,
            static_processes: self.static_processes.clone(),
            seed,
            ..SimConfig::default()
        };
        cfg.validate()
            .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        Ok(cfg)
    }

    pub fn monitor_start_ms(&self) -> i64 {
        i64::from(self.warmup_s) * 1000
    }

    pub fn monitor_end_ms(&self) -> i64 {
        self.monitor_start_ms() + i64::from(self.monitor_s) * 1000
    }
}

/// Seed of one iteration, derived from the experiment seed.
pub fn iteration_seed(seed: u64, iteration: u32) -> u64 {
    // splitmix64 finalizer
    let mut z = seed.wrapping_add(u64::from(iteration).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// How the adaptation component is wired into a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdaptationPath {
    /// The observation scheduler runs; its enabled flag follows the scenario.
    Scheduler,
    /// No rule evaluation code runs at all.
    Stubbed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationFailure {
    pub iteration: u32,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub label: String,
    pub scenario: Scenario,
    pub seed: u64,
    pub iterations_planned: u32,
    pub iterations_completed: u32,
    pub complete: bool,
    /// Simulated time at which monitoring started, right after warmup.
    pub monitor_start_ms: i64,
    pub monitor_end_ms: i64,
    pub files: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<IterationFailure>,
    pub config: ExperimentConfig,
}

pub fn iteration_file_name(index: u32) -> String {
    format!("iteration-{index:03}.json")
}

fn mean_in(points: &[Point], t0: i64, t1: i64) -> Option<f64> {
    let vals: Vec<f64> = points
        .iter()
        .filter_map(|p| match p {
            Point::Sample { t_ms, value } if *t_ms >= t0 && *t_ms <= t1 => Some(*value),
            _ => None,
        })
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Runs one monitored iteration of the protocol against a fresh target.
pub fn run_iteration(
    config: &ExperimentConfig,
    index: u32,
    path: AdaptationPath,
) -> Result<IterationExport, HarnessError> {
    let failed = |e: String| HarnessError::IterationFailed {
        iteration: index,
        reason: e,
    };
    let sim = Simulator::new(
        config.sim_config(iteration_seed(config.seed, index))?,
        Mode::Normal,
        0,
    )
    .map_err(|e| failed(e.to_string()))?;
    let sim = Arc::new(Mutex::new(sim));
    let clock = ManualClock::new(0);
    let backend = SimulatedBackend::new(Arc::clone(&sim), Arc::new(clock.clone()), HOST);
    let store = Arc::new(Store::in_memory());
    let mut monitor = MonitorScheduler::new(
        vec![Box::new(backend)],
        ProcessSelector::by_name(PROCESS),
        IntegratorConfig::new(config.interval_ms, config.interval_ms),
        Arc::clone(&store),
    )
    .map_err(|e| failed(e.to_string()))?;

    let mut adaptation = match (config.scenario, path) {
        (Scenario::ORIGINAL, _) | (_, AdaptationPath::Stubbed) => None,
        (scenario, AdaptationPath::Scheduler) => {
            let rules = resolve_rules(&config.rule_preset)?;
            let mut s = ObservationScheduler::new(
                SchedulerConfig {
                    period_ms: config.interval_ms as i64,
                    enabled: scenario == Scenario::ADAPT,
                },
                rules,
                Mode::Normal,
            )?;
            let target = Arc::clone(&sim);
            s.add_listener(move |e: &TransitionEvent| {
                target.lock().request_mode(e.t_ms, e.to);
            });
            Some(s)
        }
    };

    // Warmup: the target serves the ramping load unobserved. Monitoring then
    // starts immediately.
    let start = config.monitor_start_ms();
    let end = config.monitor_end_ms();
    let cpu_key = SeriesKey::new(HOST, PROCESS, Metric::Cpu)?;
    let mem_key = SeriesKey::new(HOST, PROCESS, Metric::Memory)?;
    let energy_key = SeriesKey::new(HOST, PROCESS, Metric::Energy)?;
    let mut t = start;
    while t <= end {
        clock.set(t);
        let report = monitor.tick(t);
        if report.failed_targets > 0 {
            return Err(failed(format!("poll failed at {t} ms")));
        }
        for (key, outcome) in report.outcomes {
            if key != energy_key {
                continue;
            }
            let Some(s) = adaptation.as_mut() else {
                continue;
            };
            let obs = match outcome {
                WindowOutcome::Window(w) => {
                    let cpu = store
                        .query_range(&cpu_key, w.t0_ms, w.t1_ms + 1)
                        .ok()
                        .and_then(|pts| mean_in(&pts, w.t0_ms, w.t1_ms));
                    Observation::Snapshot(MetricsSnapshot {
                        t_ms: w.t1_ms,
                        cpu_percent: cpu,
                        energy_joules: Some(w.joules),
                        normalized_energy: w.normalized,
                    })
                }
                WindowOutcome::Gap(g) => Observation::Gap { t_ms: g.t1_ms },
            };
            s.observe(obs);
        }
        t += config.interval_ms as i64;
    }

    let windows = store
        .query_range(&energy_key, start, end + 1)?
        .into_iter()
        .filter_map(|p| match p {
            Point::Window(w) => Some(w),
            _ => None,
        })
        .collect();
    let cpu = store.query_range(&cpu_key, start, end + 1)?;
    let mem = store.query_range(&mem_key, start, end + 1)?;
    let resources = cpu
        .iter()
        .zip(&mem)
        .filter_map(|pair| match pair {
            (Point::Sample { t_ms, value: c }, Point::Sample { t_ms: tm, value: m })
                if t_ms == tm =>
            {
                Some(ResourceSample {
                    timestamp_ms: *t_ms,
                    cpu_percent: *c,
                    memory_mb: *m,
                })
            }
            _ => None,
        })
        .collect();
    Ok(IterationExport {
        iteration_index: index,
        scenario: config.scenario.to_string(),
        windows,
        resources,
        adaptation_log: adaptation
            .map(|s| s.transitions().to_vec())
            .unwrap_or_default(),
    })
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(dir.join(MANIFEST), text)?;
    Ok(())
}

/// Removes the files a previous run left in `dir`.
fn rotate(dir: &Path) -> Result<(), HarnessError> {
    if !dir.exists() {
        fs::create_dir_all(dir)?;
        return Ok(());
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        let ours = name == MANIFEST || (name.starts_with("iteration-") && name.ends_with(".json"));
        if ours && path.is_file() {
            fs::remove_file(&path)?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub manifest: Manifest,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary, HarnessError> {
    run_experiment_with(config, AdaptationPath::Scheduler)
}

/// Runs every iteration in order, writing one export per iteration and a
/// manifest. A failing iteration stops the run; the files written so far are
/// kept and the manifest records the failure.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    path: AdaptationPath,
) -> Result<RunSummary, HarnessError> {
    config.validate()?;
    let dir = config.output_dir.clone();
    rotate(&dir)?;
    let mut manifest = Manifest {
        label: config.label(),
        scenario: config.scenario,
        seed: config.seed,
        iterations_planned: config.iterations,
        iterations_completed: 0,
        complete: false,
        monitor_start_ms: config.monitor_start_ms(),
        monitor_end_ms: config.monitor_end_ms(),
        files: Vec::new(),
        failure: None,
        config: config.clone(),
    };
    let mut files = Vec::new();
    for i in 1..=config.iterations {
        let result = run_iteration(config, i, path).and_then(|export| {
            let file = dir.join(iteration_file_name(i));
            export_iteration(&export, &file)?;
            Ok(file)
        });
        match result {
            Ok(file) => {
                manifest.files.push(iteration_file_name(i));
                manifest.iterations_completed = i;
                files.push(file);
            }
            Err(e) => {
                manifest.failure = Some(IterationFailure {
                    iteration: i,
                    error: e.to_string(),
                });
                write_manifest(&dir, &manifest)?;
                return Err(match e {
                    HarnessError::IterationFailed { .. } => e,
                    other => HarnessError::IterationFailed {
                        iteration: i,
                        reason: other.to_string(),
                    },
                });
            }
        }
    }
    manifest.complete = true;
    write_manifest(&dir, &manifest)?;
    Ok(RunSummary {
        output_dir: dir,
        files,
        manifest,
    })
}

pub fn read_manifest(dir: &Path) -> Result<Option<Manifest>, HarnessError> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path)?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| HarnessError::Schema(format!("{}: {e}", path.display())))
}
