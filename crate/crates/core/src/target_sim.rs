//! Deterministic simulated recommender service.
//!
//! Each simulated second serves a number of requests given by the workload
//! profile. CPU load follows the execution cost of the recommender variant
//! bound to the active mode, and power is linear in CPU load. Mode changes
//! take effect at the next window boundary and cost one window of extra CPU
//! for retraining.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptation::Mode;
use crate::sampling::{PowerSource, ProcessReading, ResourceSample};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid simulator configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    Deactivate,
    SlopeOne,
    OrderBased,
    Popularity,
    PreprocessedSlopeOne,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Deactivate,
        Variant::SlopeOne,
        Variant::OrderBased,
        Variant::Popularity,
        Variant::PreprocessedSlopeOne,
    ];

    pub fn short_name(&self) -> &'static str {
        match self {
            Variant::Deactivate => "DEA",
            Variant::SlopeOne => "SO",
            Variant::OrderBased => "OB",
            Variant::Popularity => "POP",
            Variant::PreprocessedSlopeOne => "PSO",
        }
    }

    pub fn from_short_name(s: &str) -> Option<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.short_name().eq_ignore_ascii_case(s) || format!("{v:?}") == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Training,
    Execution,
}

/// Size parameters of the recommender data set. The defaults are calibration
/// values, not measurements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostParams {
    /// distinct products
    pub n: u32,
    /// average ratings per product
    pub r: u32,
    /// users
    pub u: u32,
    /// average items per order
    pub i: u32,
    /// product categories
    pub c: u32,
    /// average order sets per user
    pub s: u32,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            n: 100,
            r: 5,
            u: 50,
            i: 10,
            c: 3,
            s: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    pub variant: Variant,
    #[serde(default)]
    pub params: CostParams,
}

impl CostModel {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            params: CostParams::default(),
        }
    }

    pub fn with_params(variant: Variant, params: CostParams) -> Self {
        Self { variant, params }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let p = self.params;
        if [p.n, p.r, p.u, p.i, p.c, p.s].contains(&0) {
            return Err(SimError::InvalidConfig(format!(
                "cost parameters must be >= 1: {p:?}"
            )));
        }
        Ok(())
    }

    /// Abstract work units for one training run or one request.
    pub fn cost_units(&self, phase: Phase) -> f64 {
        let p = self.params;
        let (n, r, u, i, c, s) = (
            f64::from(p.n),
            f64::from(p.r),
            f64::from(p.u),
            f64::from(p.i),
            f64::from(p.c),
            f64::from(p.s),
        );
        let n_log_n = n * n.log2();
        match (self.variant, phase) {
            (Variant::Deactivate, _) => 0.0,
            (Variant::SlopeOne, Phase::Training) => u * r * r,
            (Variant::SlopeOne, Phase::Execution) => n * r,
            (Variant::OrderBased, Phase::Training) => 1.0,
            (Variant::OrderBased, Phase::Execution) => c * u * s * i * n_log_n,
            (Variant::Popularity, Phase::Training) => u * i,
            (Variant::Popularity, Phase::Execution) => n_log_n,
            (Variant::PreprocessedSlopeOne, Phase::Training) => u * n * r,
            (Variant::PreprocessedSlopeOne, Phase::Execution) => n_log_n,
        }
    }
}

pub fn cost_units(model: &CostModel, phase: Phase) -> f64 {
    model.cost_units(phase)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerModel {
    pub idle_watts: f64,
    pub watts_per_cpu_fraction: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        Self {
            idle_watts: 0.2,
            watts_per_cpu_fraction: 40.0,
        }
    }
}

impl PowerModel {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.idle_watts >= 0.0 && self.idle_watts.is_finite()) {
            return Err(SimError::InvalidConfig("idle_watts must be >= 0".into()));
        }
        if !(self.watts_per_cpu_fraction > 0.0 && self.watts_per_cpu_fraction.is_finite()) {
            return Err(SimError::InvalidConfig(
                "watts_per_cpu_fraction must be > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn power(&self, cpu_fraction: f64) -> f64 {
        self.idle_watts + self.watts_per_cpu_fraction * cpu_fraction.clamp(0.0, 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WorkloadLevel {
    Low,
    Medium,
    High,
}

/// A burst of extra load, for exercising energy-triggered rules.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Spike {
    pub start_s: u32,
    pub duration_s: u32,
    pub factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadProfile {
    pub level: WorkloadLevel,
    pub ramp_seconds: u32,
    pub peak_parallel: u32,
    pub increase_per_second: u32,
    /// Relative amplitude of the seeded per-second request noise.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub spikes: Vec<Spike>,
}

fn default_jitter() -> f64 {
    0.05
}

impl WorkloadProfile {
    pub fn preset(level: WorkloadLevel) -> Self {
        let peak = match level {
            WorkloadLevel::Low => 100,
            WorkloadLevel::Medium => 1000,
            WorkloadLevel::High => 5000,
        };
        Self {
            level,
            ramp_seconds: 20,
            peak_parallel: peak,
            increase_per_second: peak / 20,
            jitter: default_jitter(),
            spikes: Vec::new(),
        }
    }

    pub fn with_spikes(mut self, spikes: Vec<Spike>) -> Self {
        self.spikes = spikes;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.peak_parallel < 1 {
            return Err(SimError::InvalidConfig("peak_parallel must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(SimError::InvalidConfig("jitter must lie in [0, 1)".into()));
        }
        if self
            .spikes
            .iter()
            .any(|s| !(s.factor >= 0.0 && s.factor.is_finite()))
        {
            return Err(SimError::InvalidConfig("spike factor must be >= 0".into()));
        }
        Ok(())
    }

    /// Request count before noise: a linear climb for `ramp_seconds`, then
    /// the peak.
    pub fn scheduled_requests(&self, second: u64) -> f64 {
        let climb = (second + 1).saturating_mul(u64::from(self.increase_per_second));
        let base = if second < u64::from(self.ramp_seconds) {
            climb.min(u64::from(self.peak_parallel))
        } else {
            u64::from(self.peak_parallel)
        } as f64;
        let factor: f64 = self
            .spikes
            .iter()
            .filter(|s| {
                second >= u64::from(s.start_s)
                    && second < u64::from(s.start_s) + u64::from(s.duration_s)
            })
            .map(|s| s.factor)
            .product();
        base * factor
    }
}

impl Default for WorkloadProfile {
    fn default() -> Self {
        Self::preset(WorkloadLevel::Medium)
    }
}

/// Recommender variant per mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeBinding {
    pub normal: CostModel,
    pub high_performance: CostModel,
    pub low_power: CostModel,
}

impl Default for ModeBinding {
    fn default() -> Self {
        Self {
            normal: CostModel::new(Variant::SlopeOne),
            high_performance: CostModel::new(Variant::PreprocessedSlopeOne),
            low_power: CostModel::new(Variant::Deactivate),
        }
    }
}

impl ModeBinding {
    /// Every mode runs the same model.
    pub fn fixed(model: CostModel) -> Self {
        Self {
            normal: model,
            high_performance: model,
            low_power: model,
        }
    }

    pub fn model(&self, mode: Mode) -> &CostModel {
        match mode {
            Mode::Normal => &self.normal,
            Mode::HighPerformance => &self.high_performance,
            Mode::LowPower => &self.low_power,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticProcess {
    pub process_id: u32,
    pub process_name: String,
    pub watts: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub process_id: u32,
    pub process_name: String,
    pub workload: WorkloadProfile,
    pub binding: ModeBinding,
    pub power: PowerModel,
    /// Execution work units one full CPU completes per second.
    pub capacity_units_per_s: f64,
    /// Training work units one full CPU completes within one window.
    pub training_units_per_window: f64,
    /// Constant CPU drawn by the adaptation machinery itself.
    pub overhead_cpu_fraction: f64,
    pub window_ms: i64,
    pub memory_base_mb: f64,
    pub memory_mb_per_request: f64,
    pub static_processes: Vec<StaticProcess>,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            process_id: 4242,
            process_name: "recommender".into(),
            workload: WorkloadProfile::default(),
            binding: ModeBinding::default(),
            power: PowerModel::default(),
            // Medium peak (1000 req/s) under SlopeOne (500 units) lands at 50% CPU.
            capacity_units_per_s: 1.0e6,
            training_units_per_window: 5.0e4,
            overhead_cpu_fraction: 0.0,
            window_ms: 2000,
            memory_base_mb: 256.0,
            memory_mb_per_request: 0.001,
            static_processes: Vec::new(),
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.workload.validate()?;
        self.power.validate()?;
        for m in [
            &self.binding.normal,
            &self.binding.high_performance,
            &self.binding.low_power,
        ] {
            m.validate()?;
        }
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.capacity_units_per_s) || !positive(self.training_units_per_window) {
            return Err(SimError::InvalidConfig("capacities must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.overhead_cpu_fraction) {
            return Err(SimError::InvalidConfig(
                "overhead_cpu_fraction must lie in [0, 1]".into(),
            ));
        }
        if self.window_ms <= 0 || self.window_ms % 1000 != 0 {
            return Err(SimError::InvalidConfig(
                "window_ms must be a positive multiple of 1000".into(),
            ));
        }
        if !(self.memory_base_mb >= 0.0 && self.memory_mb_per_request >= 0.0) {
            return Err(SimError::InvalidConfig("memory model must be >= 0".into()));
        }
        if self.process_name.is_empty() {
            return Err(SimError::InvalidConfig("empty process_name".into()));
        }
        Ok(())
    }
}

/// CPU and power of the simulated service at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimReading {
    pub mode: Mode,
    pub requests: f64,
    pub cpu_fraction: f64,
    pub power_watts: f64,
    pub memory_mb: f64,
}

#[derive(Clone, Debug)]
pub struct Simulator {
    config: SimConfig,
    start_ms: i64,
    /// Effective time -> mode, the first entry at `start_ms`.
    modes: BTreeMap<i64, Mode>,
    /// Memoized per-second requests and their running totals.
    requests: Vec<f64>,
    cumulative: Vec<f64>,
}

impl Simulator {
    pub fn new(config: SimConfig, start_mode: Mode, start_ms: i64) -> Result<Self, SimError> {
        config.validate()?;
        let mut modes = BTreeMap::new();
        modes.insert(start_ms, start_mode);
        Ok(Self {
            config,
            start_ms,
            modes,
            requests: Vec::new(),
            cumulative: Vec::new(),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn start_ms(&self) -> i64 {
        self.start_ms
    }

    /// Restarts the service: clears mode history and memory.
    pub fn reset(&mut self, start_mode: Mode, start_ms: i64, seed: u64) {
        self.config.seed = seed;
        self.start_ms = start_ms;
        self.modes.clear();
        self.modes.insert(start_ms, start_mode);
        self.requests.clear();
        self.cumulative.clear();
    }

    /// First window boundary at or after `t_ms`.
    pub fn next_boundary(&self, t_ms: i64) -> i64 {
        let w = self.config.window_ms;
        let rel = (t_ms - self.start_ms).max(0);
        self.start_ms + (rel + w - 1) / w * w
    }

    /// Asks for `mode` from `t_ms` on. The switch happens at the next window
    /// boundary and returns its time, or `None` when `mode` is already what
    /// will be active then.
    pub fn request_mode(&mut self, t_ms: i64, mode: Mode) -> Option<i64> {
        let b = self.next_boundary(t_ms);
        if self.mode_at(b) == mode {
            return None;
        }
        self.modes.split_off(&b);
        self.modes.insert(b, mode);
        Some(b)
    }

    pub fn with_schedule(mut self, schedule: &[(i64, Mode)]) -> Self {
        for &(t, m) in schedule {
            self.request_mode(t, m);
        }
        self
    }

    pub fn mode_at(&self, t_ms: i64) -> Mode {
        self.modes
            .range(..=t_ms)
            .next_back()
            .map(|(_, m)| *m)
            .unwrap_or_else(|| *self.modes.values().next().expect("start mode"))
    }

    /// Times at which a mode took effect, the start included.
    pub fn mode_changes(&self) -> Vec<(i64, Mode)> {
        self.modes.iter().map(|(t, m)| (*t, *m)).collect()
    }

    fn second_of(&self, t_ms: i64) -> u64 {
        ((t_ms - self.start_ms).max(0) / 1000) as u64
    }

    fn fill_to(&mut self, second: u64) {
        while self.requests.len() as u64 <= second {
            let s = self.requests.len() as u64;
            let r = self.noisy_requests(s);
            let total = self.cumulative.last().copied().unwrap_or(0.0) + r;
            self.requests.push(r);
            self.cumulative.push(total);
        }
    }

    fn noisy_requests(&self, second: u64) -> f64 {
        let base = self.config.workload.scheduled_requests(second);
        let jitter = self.config.workload.jitter;
        if jitter == 0.0 {
            return base;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(second);
        let u: f64 = rng.random_range(-1.0..=1.0);
        (base * (1.0 + jitter * u)).round().max(0.0)
    }

    /// Extra CPU at `t_ms` from retraining after a mode change.
    fn training_cpu(&self, t_ms: i64) -> f64 {
        let w = self.config.window_ms;
        self.modes
            .range(..=t_ms)
            .next_back()
            .filter(|(b, _)| t_ms < **b + w)
            .map(|(_, m)| {
                self.config.binding.model(*m).cost_units(Phase::Training)
                    / self.config.training_units_per_window
            })
            .unwrap_or(0.0)
    }

    pub fn reading_at(&mut self, t_ms: i64) -> SimReading {
        let second = self.second_of(t_ms);
        self.fill_to(second);
        let requests = self.requests[second as usize];
        let mode = self.mode_at(t_ms);
        let exec = self.config.binding.model(mode).cost_units(Phase::Execution);
        let cpu = (self.config.overhead_cpu_fraction
            + requests * exec / self.config.capacity_units_per_s
            + self.training_cpu(t_ms))
        .clamp(0.0, 1.0);
        let served_before = if second == 0 {
            0.0
        } else {
            self.cumulative[second as usize - 1]
        };
        SimReading {
            mode,
            requests,
            cpu_fraction: cpu,
            power_watts: self.config.power.power(cpu),
            memory_mb: self.config.memory_base_mb
                + self.config.memory_mb_per_request * served_before,
        }
    }

    /// Requests served in each whole second of `[from_s, to_s)` since start.
    pub fn request_log(&mut self, from_s: u64, to_s: u64) -> Vec<(u64, f64)> {
        if to_s > from_s {
            self.fill_to(to_s - 1);
        }
        (from_s..to_s)
            .map(|s| (s, self.requests[s as usize]))
            .collect()
    }
}

impl PowerSource for Simulator {
    fn readings_at(&mut self, t_ms: i64) -> Vec<ProcessReading> {
        let r = self.reading_at(t_ms);
        let mut out = vec![ProcessReading {
            process_id: self.config.process_id,
            process_name: self.config.process_name.clone(),
            power_watts: r.power_watts,
            resources: Some(ResourceSample {
                timestamp_ms: t_ms,
                cpu_percent: r.cpu_fraction * 100.0,
                memory_mb: r.memory_mb,
            }),
        }];
        out.extend(self.config.static_processes.iter().map(|p| ProcessReading {
            process_id: p.process_id,
            process_name: p.process_name.clone(),
            power_watts: p.watts,
            resources: None,
        }));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::trapezoid;
    use proptest::prelude::*;

    fn quiet(workload: WorkloadProfile) -> WorkloadProfile {
        WorkloadProfile {
            jitter: 0.0,
            ..workload
        }
    }

    #[test]
    fn cost_examples() {
        assert_eq!(
            CostModel::new(Variant::SlopeOne).cost_units(Phase::Execution),
            500.0
        );
        let params = CostParams {
            n: 8,
            r: 1,
            u: 3,
            i: 4,
            c: 2,
            s: 2,
        };
        assert_eq!(
            CostModel::with_params(Variant::Popularity, params).cost_units(Phase::Execution),
            24.0
        );
        let oracle = 2.0 * 3.0 * 2.0 * 4.0 * 8.0 * 3.0;
        assert_eq!(
            CostModel::with_params(Variant::OrderBased, params).cost_units(Phase::Execution),
            oracle
        );
        assert_eq!(oracle, 1152.0);
        for phase in [Phase::Training, Phase::Execution] {
            assert_eq!(CostModel::new(Variant::Deactivate).cost_units(phase), 0.0);
        }
        assert_eq!(
            CostModel::new(Variant::OrderBased).cost_units(Phase::Training),
            1.0
        );
        let zero = CostParams {
            u: 0,
            ..CostParams::default()
        };
        assert!(CostModel::with_params(Variant::SlopeOne, zero)
            .validate()
            .is_err());
    }

    #[test]
    fn medium_slope_one_is_calibrated_to_half_cpu() {
        let mut sim = Simulator::new(
            SimConfig {
                workload: quiet(WorkloadProfile::default()),
                ..SimConfig::default()
            },
            Mode::Normal,
            0,
        )
        .unwrap();
        assert!((sim.reading_at(30_000).cpu_fraction - 0.5).abs() < 1e-12);
        // still climbing at 10 s
        assert!(sim.reading_at(10_000).cpu_fraction < 0.3);
    }

    #[test]
    fn deactivate_draws_idle_power() {
        let mut sim = Simulator::new(
            SimConfig {
                binding: ModeBinding::fixed(CostModel::new(Variant::Deactivate)),
                workload: WorkloadProfile::preset(WorkloadLevel::High),
                ..SimConfig::default()
            },
            Mode::Normal,
            0,
        )
        .unwrap();
        for t in (0..100_000).step_by(500) {
            let r = sim.reading_at(t);
            assert_eq!(r.cpu_fraction, 0.0);
            assert_eq!(r.power_watts, 0.2);
        }
    }

    #[test]
    fn two_to_one_cost_gives_two_to_one_dynamic_power() {
        let half = CostParams {
            n: 50,
            ..CostParams::default()
        };
        let run = |model: CostModel| {
            let mut sim = Simulator::new(
                SimConfig {
                    binding: ModeBinding::fixed(model),
                    seed: 11,
                    ..SimConfig::default()
                },
                Mode::Normal,
                0,
            )
            .unwrap();
            let idle = sim.config().power.idle_watts;
            // skip the start-up training window, which both variants share
            let n = 200;
            (0..n)
                .map(|k| sim.reading_at(2000 + k * 500).power_watts - idle)
                .sum::<f64>()
                / n as f64
        };
        let full = run(CostModel::new(Variant::SlopeOne));
        let halfp = run(CostModel::with_params(Variant::SlopeOne, half));
        assert!((full / halfp - 2.0).abs() < 1e-9, "{}", full / halfp);
    }

    #[test]
    fn mode_switch_burst_appears_once_after_request() {
        let cfg = SimConfig {
            workload: quiet(WorkloadProfile::default()),
            ..SimConfig::default()
        };
        let mut plain = Simulator::new(cfg.clone(), Mode::Normal, 0).unwrap();
        let mut switched = Simulator::new(cfg, Mode::Normal, 0).unwrap();
        // requested mid-window, effective at the 32 s boundary
        assert_eq!(
            switched.request_mode(31_200, Mode::HighPerformance),
            Some(32_000)
        );
        let steady_hp = {
            let exec = CostModel::new(Variant::PreprocessedSlopeOne).cost_units(Phase::Execution);
            1000.0 * exec / 1.0e6
        };
        let burst =
            CostModel::new(Variant::PreprocessedSlopeOne).cost_units(Phase::Training) / 5.0e4;
        let mut burst_ts = Vec::new();
        for t in (22_000..60_000).step_by(250) {
            let a = plain.reading_at(t).cpu_fraction;
            let b = switched.reading_at(t).cpu_fraction;
            if t < 32_000 {
                assert_eq!(a, b);
            } else if (b - (steady_hp + burst).min(1.0)).abs() < 1e-12 {
                burst_ts.push(t);
            } else {
                assert!((b - steady_hp).abs() < 1e-12, "t={t} cpu={b}");
            }
        }
        assert_eq!(burst_ts.first(), Some(&32_000));
        assert_eq!(burst_ts.last(), Some(&33_750));
        assert_eq!(burst_ts.len(), 8);
        // a request for the already scheduled mode changes nothing
        assert_eq!(switched.request_mode(40_000, Mode::HighPerformance), None);
    }

    #[test]
    fn request_on_boundary_takes_effect_there() {
        let mut sim = Simulator::new(SimConfig::default(), Mode::Normal, 1000).unwrap();
        assert_eq!(sim.request_mode(5000, Mode::LowPower), Some(5000));
        assert_eq!(sim.mode_at(4999), Mode::Normal);
        assert_eq!(sim.mode_at(5000), Mode::LowPower);
        assert_eq!(
            sim.mode_changes(),
            [(1000, Mode::Normal), (5000, Mode::LowPower)]
        );
    }

    #[test]
    fn memory_is_non_decreasing_and_mode_independent() {
        let mut a = Simulator::new(SimConfig::default(), Mode::Normal, 0).unwrap();
        let mut b = Simulator::new(SimConfig::default(), Mode::LowPower, 0).unwrap();
        let mut last = 0.0;
        for t in (0..120_000).step_by(700) {
            let m = a.reading_at(t).memory_mb;
            assert!(m >= last);
            assert_eq!(m, b.reading_at(t).memory_mb);
            last = m;
        }
        assert!(last > 256.0);
    }

    #[test]
    fn static_processes_are_reported() {
        let cfg = SimConfig {
            static_processes: vec![StaticProcess {
                process_id: 7,
                process_name: "webui".into(),
                watts: 3.5,
            }],
            ..SimConfig::default()
        };
        let mut sim = Simulator::new(cfg, Mode::Normal, 0).unwrap();
        let r = sim.readings_at(1000);
        assert_eq!(r.len(), 2);
        assert_eq!(r[1].power_watts, 3.5);
        assert!(r[1].resources.is_none());
    }

    #[test]
    fn reset_restores_initial_behaviour() {
        let mut sim = Simulator::new(SimConfig::default(), Mode::Normal, 0).unwrap();
        let first: Vec<f64> = (0..50)
            .map(|k| sim.reading_at(k * 1000).power_watts)
            .collect();
        sim.request_mode(10_000, Mode::LowPower);
        sim.reset(Mode::Normal, 0, 0);
        let again: Vec<f64> = (0..50)
            .map(|k| sim.reading_at(k * 1000).power_watts)
            .collect();
        assert_eq!(first, again);
    }

    #[test]
    fn spikes_scale_requests() {
        let w = quiet(WorkloadProfile::default()).with_spikes(vec![Spike {
            start_s: 40,
            duration_s: 4,
            factor: 1.6,
        }]);
        assert_eq!(w.scheduled_requests(39), 1000.0);
        assert_eq!(w.scheduled_requests(40), 1600.0);
        assert_eq!(w.scheduled_requests(43), 1600.0);
        assert_eq!(w.scheduled_requests(44), 1000.0);
        assert_eq!(w.scheduled_requests(0), 50.0);
    }

    fn arb_config() -> impl Strategy<Value = (SimConfig, Vec<(i64, Mode)>)> {
        let mode = prop_oneof![
            Just(Mode::Normal),
            Just(Mode::HighPerformance),
            Just(Mode::LowPower)
        ];
        (
            any::<u64>(),
            prop_oneof![
                Just(WorkloadLevel::Low),
                Just(WorkloadLevel::Medium),
                Just(WorkloadLevel::High)
            ],
            proptest::collection::vec((0i64..60_000, mode), 0..6),
        )
            .prop_map(|(seed, level, mut schedule)| {
                schedule.sort_by_key(|s| s.0);
                (
                    SimConfig {
                        seed,
                        workload: WorkloadProfile::preset(level),
                        ..SimConfig::default()
                    },
                    schedule,
                )
            })
    }

    proptest! {
        #[test]
        fn bit_identical_for_same_inputs((cfg, schedule) in arb_config()) {
            let run = || {
                let mut sim = Simulator::new(cfg.clone(), Mode::Normal, 0).unwrap().with_schedule(&schedule);
                (0..60).map(|k| sim.reading_at(k * 1000).power_watts.to_bits()).collect::<Vec<u64>>()
            };
            prop_assert_eq!(run(), run());
        }

        #[test]
        fn cpu_and_power_bounds((cfg, schedule) in arb_config()) {
            let idle = cfg.power.idle_watts;
            let mut sim = Simulator::new(cfg, Mode::Normal, 0).unwrap().with_schedule(&schedule);
            for k in 0..140 {
                let r = sim.reading_at(k * 500);
                prop_assert!((0.0..=1.0).contains(&r.cpu_fraction));
                prop_assert!(r.power_watts >= idle);
            }
        }

        #[test]
        fn sampled_energy_tracks_model_integral((cfg, schedule) in arb_config(), step in prop_oneof![Just(1000i64), Just(2000)]) {
            // power is constant within each second, so the exact integral is a
            // sum over seconds and the trapezoid error is bounded by the jumps
            let mut sim = Simulator::new(cfg, Mode::Normal, 0).unwrap().with_schedule(&schedule);
            let span = 60_000;
            let exact: f64 = (0..span / 1000).map(|s| sim.reading_at(s * 1000).power_watts).sum();
            let pts: Vec<(i64, f64)> = (0..=span / step).map(|k| (k * step, sim.reading_at(k * step).power_watts)).collect();
            let approx = trapezoid(&pts);
            let mut bound = 0.0;
            for pair in pts.windows(2) {
                let secs: Vec<f64> = (pair[0].0 / 1000..=pair[1].0 / 1000).map(|s| sim.reading_at(s * 1000).power_watts).collect();
                let hi = secs.iter().cloned().fold(f64::MIN, f64::max);
                let lo = secs.iter().cloned().fold(f64::MAX, f64::min);
                bound += (hi - lo) * (pair[1].0 - pair[0].0) as f64 / 1000.0;
            }
            prop_assert!((approx - exact).abs() <= bound + 1e-9, "approx {approx} exact {exact} bound {bound}");
        }
    }
}
