//! Energy from power: trapezoidal integration over fixed windows.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampling::PowerSample;

/// Shortest sampling interval accepted without an explicit override.
pub const MIN_INTERVAL_MS: u64 = 2000;

#[derive(Debug, Error, PartialEq)]
pub enum EnergyError {
    #[error("at least 2 samples are required, got {0}")]
    InsufficientSamples(usize),
    #[error("timestamps must be strictly increasing (at index {0})")]
    NonMonotonicTimestamps(usize),
    #[error("samples belong to more than one process stream")]
    MixedStreams,
    #[error("invalid integrator config: {0}")]
    InvalidConfig(String),
}

/// Energy integrated over `[t0_ms, t1_ms]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyWindow {
    pub t0_ms: i64,
    pub t1_ms: i64,
    pub joules: f64,
    /// Points the trapezoid sum ran over, including interpolated window edges.
    pub sample_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized: Option<f64>,
    /// Set when the stream ended before the window's nominal end.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub partial: bool,
}

/// A window for which no energy could be computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapMarker {
    pub t0_ms: i64,
    pub t1_ms: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WindowOutcome {
    Window(EnergyWindow),
    Gap(GapMarker),
}

impl WindowOutcome {
    pub fn t0_ms(&self) -> i64 {
        match self {
            WindowOutcome::Window(w) => w.t0_ms,
            WindowOutcome::Gap(g) => g.t0_ms,
        }
    }

    pub fn t1_ms(&self) -> i64 {
        match self {
            WindowOutcome::Window(w) => w.t1_ms,
            WindowOutcome::Gap(g) => g.t1_ms,
        }
    }

    pub fn window(&self) -> Option<&EnergyWindow> {
        match self {
            WindowOutcome::Window(w) => Some(w),
            WindowOutcome::Gap(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub interval_ms: u64,
    pub window_ms: u64,
    pub allow_fast_sampling: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            interval_ms: MIN_INTERVAL_MS,
            window_ms: MIN_INTERVAL_MS,
            allow_fast_sampling: false,
        }
    }
}

impl IntegratorConfig {
    pub fn new(interval_ms: u64, window_ms: u64) -> Self {
        Self {
            interval_ms,
            window_ms,
            allow_fast_sampling: false,
        }
    }

    pub fn with_fast_sampling(mut self) -> Self {
        self.allow_fast_sampling = true;
        self
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        if self.interval_ms == 0 || self.window_ms == 0 {
            return Err(EnergyError::InvalidConfig(
                "interval and window must be positive".into(),
            ));
        }
        if self.interval_ms < MIN_INTERVAL_MS && !self.allow_fast_sampling {
            return Err(EnergyError::InvalidConfig(format!(
                "interval {} ms is below {MIN_INTERVAL_MS} ms; pass --allow-fast-sampling to override",
                self.interval_ms
            )));
        }
        if !self.window_ms.is_multiple_of(self.interval_ms) {
            return Err(EnergyError::InvalidConfig(format!(
                "window {} ms is not a multiple of interval {} ms",
                self.window_ms, self.interval_ms
            )));
        }
        Ok(())
    }
}

/// Trapezoid sum over `(t_ms, watts)` points, in joules.
pub fn trapezoid(points: &[(i64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|p| (p[0].1 + p[1].1) / 2.0 * ((p[1].0 - p[0].0) as f64 / 1000.0))
        .sum()
}

/// Integrates one process stream into a single window spanning its first and
/// last sample. Uses the true interval between each pair of samples.
pub fn integrate(samples: &[PowerSample]) -> Result<EnergyWindow, EnergyError> {
    if samples.len() < 2 {
        return Err(EnergyError::InsufficientSamples(samples.len()));
    }
    let first = &samples[0];
    for (i, pair) in samples.windows(2).enumerate() {
        if pair[1].timestamp_ms <= pair[0].timestamp_ms {
            return Err(EnergyError::NonMonotonicTimestamps(i + 1));
        }
        if pair[1].process_id != first.process_id || pair[1].host != first.host {
            return Err(EnergyError::MixedStreams);
        }
    }
    let points: Vec<(i64, f64)> = samples
        .iter()
        .map(|s| (s.timestamp_ms, s.power_watts))
        .collect();
    Ok(EnergyWindow {
        t0_ms: first.timestamp_ms,
        t1_ms: samples[samples.len() - 1].timestamp_ms,
        joules: trapezoid(&points),
        sample_count: points.len(),
        normalized: None,
        partial: false,
    })
}

/// Splits one process stream into windows of `window_ms`, aligned on the
/// first sample.
///
/// Window edges are shared between neighbours. When no sample falls exactly
/// on an edge, its value is linearly interpolated from the samples on either
/// side, so the window energies add up to the whole-span trapezoid sum.
/// A reported gap (failed poll) turns every window it touches into a
/// [`GapMarker`], and no interpolation is done across it.
#[derive(Debug)]
pub struct WindowIntegrator {
    window_ms: i64,
    start_ms: Option<i64>,
    points: Vec<(i64, f64)>,
    last: Option<(i64, f64)>,
    broken: bool,
    gap_since_last: bool,
}

impl WindowIntegrator {
    pub fn new(config: &IntegratorConfig) -> Result<Self, EnergyError> {
        config.validate()?;
        Ok(Self::with_window(config.window_ms as i64))
    }

    fn with_window(window_ms: i64) -> Self {
        Self {
            window_ms,
            start_ms: None,
            points: Vec::new(),
            last: None,
            broken: false,
            gap_since_last: false,
        }
    }

    fn close_current(&mut self, end: i64) -> WindowOutcome {
        let start = self.start_ms.expect("window started");
        let complete = !self.broken
            && self.points.len() >= 2
            && self.points[0].0 == start
            && self.points[self.points.len() - 1].0 == end;
        if complete {
            WindowOutcome::Window(EnergyWindow {
                t0_ms: start,
                t1_ms: end,
                joules: trapezoid(&self.points),
                sample_count: self.points.len(),
                normalized: None,
                partial: false,
            })
        } else {
            WindowOutcome::Gap(GapMarker {
                t0_ms: start,
                t1_ms: end,
            })
        }
    }

    /// Feeds the next sample of the stream. Returns the windows it completed.
    pub fn push(&mut self, t_ms: i64, watts: f64) -> Result<Vec<WindowOutcome>, EnergyError> {
        let mut out = Vec::new();
        let Some(mut start) = self.start_ms else {
            self.start_ms = Some(t_ms);
            self.points.push((t_ms, watts));
            self.last = Some((t_ms, watts));
            return Ok(out);
        };
        if let Some((lt, _)) = self.last {
            if t_ms <= lt {
                return Err(EnergyError::NonMonotonicTimestamps(0));
            }
        }
        while t_ms >= start + self.window_ms {
            let end = start + self.window_ms;
            if t_ms == end {
                self.points.push((t_ms, watts));
                out.push(self.close_current(end));
                self.points = vec![(t_ms, watts)];
                self.broken = false;
            } else {
                let edge = match (self.last, self.gap_since_last) {
                    (Some((lt, lw)), false) => {
                        let frac = (end - lt) as f64 / (t_ms - lt) as f64;
                        Some((end, lw + (watts - lw) * frac))
                    }
                    _ => None,
                };
                match edge {
                    Some(p) => {
                        self.points.push(p);
                        out.push(self.close_current(end));
                        self.points = vec![p];
                        self.broken = false;
                    }
                    None => {
                        // No left edge for the next window either.
                        self.broken = true;
                        out.push(self.close_current(end));
                        self.points.clear();
                    }
                }
            }
            start = end;
            self.start_ms = Some(start);
            if t_ms == end {
                self.last = Some((t_ms, watts));
                self.gap_since_last = false;
                return Ok(out);
            }
        }
        self.points.push((t_ms, watts));
        self.last = Some((t_ms, watts));
        self.gap_since_last = false;
        Ok(out)
    }

    /// Records a failed poll at `t_ms`. Windows that end before it are closed
    /// as gaps, and the window containing it will be a gap too.
    pub fn push_gap(&mut self, t_ms: i64) -> Vec<WindowOutcome> {
        let mut out = Vec::new();
        let Some(mut start) = self.start_ms else {
            return out;
        };
        while t_ms > start + self.window_ms {
            let end = start + self.window_ms;
            self.broken = true;
            out.push(self.close_current(end));
            self.points.clear();
            start = end;
            self.start_ms = Some(start);
        }
        self.broken = true;
        self.gap_since_last = true;
        out
    }

    /// Closes the stream. A trailing window with at least two points and no
    /// gap is returned as a partial window ending at the last sample.
    pub fn finish(self) -> Option<EnergyWindow> {
        let start = self.start_ms?;
        if self.broken || self.points.len() < 2 || self.points[0].0 != start {
            return None;
        }
        Some(EnergyWindow {
            t0_ms: start,
            t1_ms: self.points[self.points.len() - 1].0,
            joules: trapezoid(&self.points),
            sample_count: self.points.len(),
            normalized: None,
            partial: true,
        })
    }
}

/// Integrates a finite stream into the complete windows it covers.
pub fn integrate_stream(
    samples: &[PowerSample],
    config: &IntegratorConfig,
) -> Result<Vec<WindowOutcome>, EnergyError> {
    if let Some(first) = samples.first() {
        if samples
            .iter()
            .any(|s| s.process_id != first.process_id || s.host != first.host)
        {
            return Err(EnergyError::MixedStreams);
        }
    }
    let mut integrator = WindowIntegrator::new(config)?;
    let mut out = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let emitted = integrator
            .push(s.timestamp_ms, s.power_watts)
            .map_err(|_| EnergyError::NonMonotonicTimestamps(i))?;
        out.extend(emitted);
    }
    Ok(out)
}

/// Running maximum of window energy for one process stream.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MaxTracker {
    pub max_joules: f64,
}

/// Scales a window by the running maximum, updating the maximum first.
pub fn normalize(window: &EnergyWindow, tracker: &mut MaxTracker) -> EnergyWindow {
    tracker.max_joules = tracker.max_joules.max(window.joules);
    let normalized = if tracker.max_joules > 0.0 {
        (window.joules / tracker.max_joules).clamp(0.0, 1.0)
    } else {
        0.0
    };
    EnergyWindow {
        normalized: Some(normalized),
        ..window.clone()
    }
}
