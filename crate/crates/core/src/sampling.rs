//! Per-process power, CPU and memory sample acquisition.
//!
//! Three backends share the [`SamplingBackend`] interface: an exposition-format
//! scraper for software power meters, a newline-delimited JSON trace replayer,
//! and a deterministic in-process simulation driven by a [`PowerSource`].

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Metric name used by the Scaphandre exporter for per-process power.
pub const DEFAULT_POWER_METRIC: &str = "scaph_process_power_consumption_microwatts";
pub const DEFAULT_CPU_METRIC: &str = "scaph_process_cpu_usage_percentage";
pub const DEFAULT_MEMORY_METRIC: &str = "scaph_process_memory_bytes";

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("malformed exposition line {0}")]
    MalformedLine(usize),
    #[error("line {line_no}: metric is missing the `{label}` label")]
    MissingLabel { line_no: usize, label: String },
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("trace line {line_no}: {reason}")]
    BadTraceRecord { line_no: usize, reason: String },
    #[error("invalid scrape target: {0}")]
    InvalidTarget(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One instantaneous power reading for one process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    pub timestamp_ms: i64,
    pub power_watts: f64,
    pub process_id: u32,
    pub process_name: String,
    pub host: String,
}

impl PowerSample {
    pub fn stream_id(&self) -> StreamId {
        StreamId {
            host: self.host.clone(),
            process_id: self.process_id,
        }
    }
}

/// Identity of a per-process sample stream.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StreamId {
    pub host: String,
    pub process_id: u32,
}

/// CPU and memory reading. Serialized with the field names of the iteration
/// export schema.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceSample {
    #[serde(rename = "t_ms")]
    pub timestamp_ms: i64,
    pub cpu_percent: f64,
    #[serde(rename = "mem_mb")]
    pub memory_mb: f64,
}

impl ResourceSample {
    pub fn is_valid(&self) -> bool {
        (0.0..=100.0).contains(&self.cpu_percent) && self.memory_mb >= 0.0
    }
}

/// A resource sample tagged with the process it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessResource {
    pub process_id: u32,
    pub process_name: String,
    pub host: String,
    pub sample: ResourceSample,
}

/// Label names identifying the process on an exposition line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelKeys {
    pub pid: String,
    pub exe: String,
}

impl Default for LabelKeys {
    fn default() -> Self {
        Self {
            pid: "pid".into(),
            exe: "exe".into(),
        }
    }
}

/// Where and how to scrape per-process power from an exporter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScrapeTarget {
    pub endpoint_url: String,
    pub power_metric_name: String,
    /// Multiplier converting the exported value into watts.
    pub unit_scale: f64,
    pub label_keys: LabelKeys,
    pub cpu_metric_name: Option<String>,
    pub memory_metric_name: Option<String>,
    /// Multiplier converting the exported memory value into megabytes.
    pub memory_unit_scale: f64,
    /// Host name recorded on samples. Derived from the endpoint when empty.
    pub host: String,
    pub timeout_ms: u64,
}

impl Default for ScrapeTarget {
    fn default() -> Self {
        Self {
            endpoint_url: "http://127.0.0.1:8080/metrics".into(),
            power_metric_name: DEFAULT_POWER_METRIC.into(),
            unit_scale: 1e-6,
            label_keys: LabelKeys::default(),
            cpu_metric_name: Some(DEFAULT_CPU_METRIC.into()),
            memory_metric_name: Some(DEFAULT_MEMORY_METRIC.into()),
            memory_unit_scale: 1.0 / (1024.0 * 1024.0),
            host: String::new(),
            timeout_ms: 1000,
        }
    }
}

impl ScrapeTarget {
    pub fn new(endpoint_url: impl Into<String>) -> Self {
        Self {
            endpoint_url: endpoint_url.into(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SamplingError> {
        if !(self.unit_scale > 0.0 && self.unit_scale.is_finite()) {
            return Err(SamplingError::InvalidTarget(
                "unit_scale must be > 0".into(),
            ));
        }
        if !(self.memory_unit_scale > 0.0 && self.memory_unit_scale.is_finite()) {
            return Err(SamplingError::InvalidTarget(
                "memory_unit_scale must be > 0".into(),
            ));
        }
        if self.power_metric_name.is_empty() {
            return Err(SamplingError::InvalidTarget(
                "empty power metric name".into(),
            ));
        }
        Ok(())
    }

    /// Host recorded on samples: the configured one, or the endpoint authority.
    pub fn effective_host(&self) -> String {
        if !self.host.is_empty() {
            return self.host.clone();
        }
        let rest = self
            .endpoint_url
            .split_once("://")
            .map(|(_, r)| r)
            .unwrap_or(&self.endpoint_url);
        rest.split('/').next().unwrap_or("localhost").to_string()
    }
}

/// One parsed exposition sample line.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpositionLine {
    pub name: String,
    pub labels: Vec<(String, String)>,
    pub value: f64,
    pub timestamp_ms: Option<i64>,
}

impl ExpositionLine {
    pub fn label(&self, key: &str) -> Option<&str> {
        self.labels
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

fn is_name_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == ':'
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == ':'
}

fn parse_value(tok: &str) -> Option<f64> {
    match tok {
        "+Inf" | "Inf" => Some(f64::INFINITY),
        "-Inf" => Some(f64::NEG_INFINITY),
        "NaN" => Some(f64::NAN),
        _ => tok.parse::<f64>().ok(),
    }
}

/// Parses one non-comment, non-blank line. Returns `None` on syntax errors.
pub fn parse_sample_line(line: &str) -> Option<ExpositionLine> {
    let line = line.trim();
    if !line.starts_with(is_name_start) {
        return None;
    }
    let mut name_end = line.len();
    for (i, c) in line.char_indices() {
        if !is_name_char(c) {
            name_end = i;
            break;
        }
    }
    let name = &line[..name_end];
    let mut rest = &line[name_end..];
    let mut labels = Vec::new();

    if let Some(after_brace) = rest.strip_prefix('{') {
        let mut s = after_brace;
        loop {
            s = s.trim_start();
            if let Some(r) = s.strip_prefix('}') {
                rest = r;
                break;
            }
            let key_end = s.find(|c: char| !is_name_char(c)).unwrap_or(s.len());
            if key_end == 0 {
                return None;
            }
            let key = &s[..key_end];
            s = s[key_end..].trim_start();
            s = s.strip_prefix('=')?.trim_start();
            s = s.strip_prefix('"')?;
            let mut value = String::new();
            let mut closed = None;
            let mut iter = s.char_indices();
            while let Some((i, c)) = iter.next() {
                match c {
                    '\\' => match iter.next()? {
                        (_, 'n') => value.push('\n'),
                        (_, '\\') => value.push('\\'),
                        (_, '"') => value.push('"'),
                        _ => return None,
                    },
                    '"' => {
                        closed = Some(i);
                        break;
                    }
                    c => value.push(c),
                }
            }
            let close = closed?;
            labels.push((key.to_string(), value));
            s = s[close + 1..].trim_start();
            if let Some(r) = s.strip_prefix(',') {
                s = r;
            } else if !s.starts_with('}') {
                return None;
            }
        }
    }

    // The value is whitespace-separated from the name or label set.
    if !rest.starts_with(char::is_whitespace) {
        return None;
    }
    let mut toks = rest.split_whitespace();
    let value = parse_value(toks.next()?)?;
    let timestamp_ms = match toks.next() {
        Some(t) => Some(t.parse::<i64>().ok()?),
        None => None,
    };
    if toks.next().is_some() {
        return None;
    }
    Some(ExpositionLine {
        name: name.to_string(),
        labels,
        value,
        timestamp_ms,
    })
}

/// Parses every sample line of an exposition body, skipping comments and blanks.
/// Line numbers in errors are 1-based.
pub fn parse_lines(body: &str) -> Result<Vec<(usize, ExpositionLine)>, SamplingError> {
    let mut out = Vec::new();
    for (idx, raw) in body.lines().enumerate() {
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parsed = parse_sample_line(trimmed).ok_or(SamplingError::MalformedLine(idx + 1))?;
        out.push((idx + 1, parsed));
    }
    Ok(out)
}

fn process_identity(
    line_no: usize,
    line: &ExpositionLine,
    keys: &LabelKeys,
) -> Result<(u32, String), SamplingError> {
    let pid = line
        .label(&keys.pid)
        .ok_or_else(|| SamplingError::MissingLabel {
            line_no,
            label: keys.pid.clone(),
        })?;
    let pid = pid
        .parse::<u32>()
        .ok()
        .filter(|p| *p > 0)
        .ok_or(SamplingError::MalformedLine(line_no))?;
    let name = line.label(&keys.exe).unwrap_or_default().to_string();
    Ok((pid, name))
}

/// Keeps the last value for any repeated (stream, timestamp) pair.
fn dedup_keep_last(samples: Vec<PowerSample>) -> Vec<PowerSample> {
    let mut index: HashMap<(StreamId, i64), usize> = HashMap::new();
    let mut out: Vec<PowerSample> = Vec::with_capacity(samples.len());
    for s in samples {
        let key = (s.stream_id(), s.timestamp_ms);
        if let Some(&i) = index.get(&key) {
            warn!(
                "duplicate sample for pid {} at {} ms; keeping the last value",
                s.process_id, s.timestamp_ms
            );
            out[i] = s;
        } else {
            index.insert(key, out.len());
            out.push(s);
        }
    }
    out
}

/// Extracts per-process power samples from an exposition body.
pub fn parse_exposition(
    body: &str,
    target: &ScrapeTarget,
    scrape_time_ms: i64,
) -> Result<Vec<PowerSample>, SamplingError> {
    let host = target.effective_host();
    let mut out = Vec::new();
    for (line_no, line) in parse_lines(body)? {
        if line.name != target.power_metric_name {
            continue;
        }
        let (pid, name) = process_identity(line_no, &line, &target.label_keys)?;
        let watts = line.value * target.unit_scale;
        if !(watts.is_finite() && watts >= 0.0) {
            return Err(SamplingError::MalformedLine(line_no));
        }
        out.push(PowerSample {
            timestamp_ms: line.timestamp_ms.unwrap_or(scrape_time_ms),
            power_watts: watts,
            process_id: pid,
            process_name: name,
            host: host.clone(),
        });
    }
    Ok(dedup_keep_last(out))
}

/// Extracts CPU/memory readings from the sibling metrics configured on the
/// target. Processes reporting only one of the two get 0 for the other.
/// Returns an empty list when neither metric is configured or present.
pub fn parse_resources(
    body: &str,
    target: &ScrapeTarget,
    scrape_time_ms: i64,
) -> Result<Vec<ProcessResource>, SamplingError> {
    let host = target.effective_host();
    let cpu_name = target.cpu_metric_name.as_deref();
    let mem_name = target.memory_metric_name.as_deref();
    if cpu_name.is_none() && mem_name.is_none() {
        return Ok(Vec::new());
    }
    let mut merged: Vec<ProcessResource> = Vec::new();
    let mut index: HashMap<(u32, i64), usize> = HashMap::new();
    for (line_no, line) in parse_lines(body)? {
        let is_cpu = Some(line.name.as_str()) == cpu_name;
        let is_mem = Some(line.name.as_str()) == mem_name;
        if !is_cpu && !is_mem {
            continue;
        }
        let (pid, name) = process_identity(line_no, &line, &target.label_keys)?;
        if !line.value.is_finite() || line.value < 0.0 {
            return Err(SamplingError::MalformedLine(line_no));
        }
        let t = line.timestamp_ms.unwrap_or(scrape_time_ms);
        let slot = *index.entry((pid, t)).or_insert_with(|| {
            merged.push(ProcessResource {
                process_id: pid,
                process_name: name.clone(),
                host: host.clone(),
                sample: ResourceSample {
                    timestamp_ms: t,
                    cpu_percent: 0.0,
                    memory_mb: 0.0,
                },
            });
            merged.len() - 1
        });
        let entry = &mut merged[slot];
        if is_cpu {
            entry.sample.cpu_percent = line.value.min(100.0);
        } else {
            entry.sample.memory_mb = line.value * target.memory_unit_scale;
        }
    }
    Ok(merged)
}

fn format_label_value(v: &str) -> String {
    v.replace('\\', "\\\\")
        .replace('"', "\\\"")
        .replace('\n', "\\n")
}

/// Renders power and resource readings in exposition format using the target's
/// metric names and units. Timestamps are written explicitly.
pub fn render_exposition(
    power: &[PowerSample],
    resources: &[ProcessResource],
    target: &ScrapeTarget,
) -> String {
    use std::fmt::Write;

    let keys = &target.label_keys;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# HELP {} Power consumption of the process.",
        target.power_metric_name
    );
    let _ = writeln!(out, "# TYPE {} gauge", target.power_metric_name);
    for s in power {
        let _ = writeln!(
            out,
            "{}{{{}=\"{}\",{}=\"{}\"}} {} {}",
            target.power_metric_name,
            keys.exe,
            format_label_value(&s.process_name),
            keys.pid,
            s.process_id,
            s.power_watts / target.unit_scale,
            s.timestamp_ms
        );
    }
    if let Some(cpu) = &target.cpu_metric_name {
        let _ = writeln!(out, "# TYPE {cpu} gauge");
        for r in resources {
            let _ = writeln!(
                out,
                "{cpu}{{{}=\"{}\",{}=\"{}\"}} {} {}",
                keys.exe,
                format_label_value(&r.process_name),
                keys.pid,
                r.process_id,
                r.sample.cpu_percent,
                r.sample.timestamp_ms
            );
        }
    }
    if let Some(mem) = &target.memory_metric_name {
        let _ = writeln!(out, "# TYPE {mem} gauge");
        for r in resources {
            let _ = writeln!(
                out,
                "{mem}{{{}=\"{}\",{}=\"{}\"}} {} {}",
                keys.exe,
                format_label_value(&r.process_name),
                keys.pid,
                r.process_id,
                r.sample.memory_mb / target.memory_unit_scale,
                r.sample.timestamp_ms
            );
        }
    }
    out
}

/// Selects processes by name glob or by pid. A sample matches when either
/// criterion matches. An empty selector matches nothing.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProcessSelector {
    pub names: Vec<String>,
    pub pids: BTreeSet<u32>,
}

impl ProcessSelector {
    pub fn by_name(pattern: impl Into<String>) -> Self {
        Self {
            names: vec![pattern.into()],
            pids: BTreeSet::new(),
        }
    }

    pub fn by_pids(pids: impl IntoIterator<Item = u32>) -> Self {
        Self {
            names: Vec::new(),
            pids: pids.into_iter().collect(),
        }
    }

    /// Matches every process.
    pub fn any() -> Self {
        Self::by_name("*")
    }

    pub fn matches(&self, process_id: u32, process_name: &str) -> bool {
        if self.pids.contains(&process_id) {
            return true;
        }
        self.names.iter().any(|p| match glob::Pattern::new(p) {
            Ok(pat) => pat.matches(process_name),
            Err(_) => p == process_name,
        })
    }
}

/// Keeps the samples matching `selector`, preserving order.
pub fn filter_by_process(
    samples: Vec<PowerSample>,
    selector: &ProcessSelector,
) -> Vec<PowerSample> {
    samples
        .into_iter()
        .filter(|s| selector.matches(s.process_id, &s.process_name))
        .collect()
}

/// Samples returned by one poll.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PolledBatch {
    pub power: Vec<PowerSample>,
    pub resources: Vec<ProcessResource>,
}

impl PolledBatch {
    pub fn is_empty(&self) -> bool {
        self.power.is_empty() && self.resources.is_empty()
    }
}

/// A source of power/resource samples polled by a single scheduler task.
pub trait SamplingBackend: Send {
    /// Returns the samples that became available since the previous poll.
    fn poll(&mut self) -> Result<PolledBatch, SamplingError>;

    fn describe(&self) -> String;
}

impl<B: SamplingBackend + ?Sized> SamplingBackend for Box<B> {
    fn poll(&mut self) -> Result<PolledBatch, SamplingError> {
        (**self).poll()
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// Polls `backend` and keeps only the selected processes.
pub fn poll(
    backend: &mut dyn SamplingBackend,
    selector: &ProcessSelector,
) -> Result<PolledBatch, SamplingError> {
    let batch = backend.poll()?;
    Ok(PolledBatch {
        power: filter_by_process(batch.power, selector),
        resources: batch
            .resources
            .into_iter()
            .filter(|r| selector.matches(r.process_id, &r.process_name))
            .collect(),
    })
}

/// Drops samples at or before the last timestamp already delivered for their
/// stream, so concatenated polls stay strictly increasing.
#[derive(Debug, Default)]
struct MonotonicGate {
    last: HashMap<StreamId, i64>,
}

impl MonotonicGate {
    fn admit(&mut self, samples: Vec<PowerSample>) -> Vec<PowerSample> {
        let mut out = Vec::with_capacity(samples.len());
        for s in samples {
            let id = s.stream_id();
            match self.last.get(&id) {
                Some(&t) if s.timestamp_ms <= t => {
                    if s.timestamp_ms == t {
                        warn!(
                            "pid {} re-reported {} ms; already delivered, dropping",
                            s.process_id, t
                        );
                    }
                    continue;
                }
                _ => {}
            }
            self.last.insert(id, s.timestamp_ms);
            out.push(s);
        }
        out
    }
}

/// Millisecond clock driving sampling timestamps.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> i64;
}

/// Wall-clock anchored at construction and advanced by a monotonic clock, so
/// wall-clock steps never produce negative intervals.
#[derive(Debug)]
pub struct MonotonicClock {
    anchor_ms: i64,
    start: Instant,
}

impl MonotonicClock {
    pub fn new() -> Self {
        let anchor_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as i64)
            .unwrap_or(0);
        Self {
            anchor_ms,
            start: Instant::now(),
        }
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now_ms(&self) -> i64 {
        self.anchor_ms + self.start.elapsed().as_millis() as i64
    }
}

/// Manually advanced clock for deterministic runs.
#[derive(Clone, Debug, Default)]
pub struct ManualClock(Arc<AtomicI64>);

impl ManualClock {
    pub fn new(start_ms: i64) -> Self {
        Self(Arc::new(AtomicI64::new(start_ms)))
    }

    pub fn set(&self, t_ms: i64) {
        self.0.store(t_ms, Ordering::SeqCst);
    }

    pub fn advance(&self, delta_ms: i64) -> i64 {
        self.0.fetch_add(delta_ms, Ordering::SeqCst) + delta_ms
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> i64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// Scrapes an exposition endpoint over HTTP.
pub struct ScrapeBackend {
    target: ScrapeTarget,
    client: reqwest::blocking::Client,
    clock: Arc<dyn Clock>,
    gate: MonotonicGate,
}

impl ScrapeBackend {
    pub fn new(target: ScrapeTarget, clock: Arc<dyn Clock>) -> Result<Self, SamplingError> {
        target.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(target.timeout_ms.max(1)))
            .build()
            .map_err(|e| SamplingError::BackendUnavailable(e.to_string()))?;
        Ok(Self {
            target,
            client,
            clock,
            gate: MonotonicGate::default(),
        })
    }

    pub fn target(&self) -> &ScrapeTarget {
        &self.target
    }
}

impl SamplingBackend for ScrapeBackend {
    fn poll(&mut self) -> Result<PolledBatch, SamplingError> {
        let scrape_time = self.clock.now_ms();
        let body = self
            .client
            .get(&self.target.endpoint_url)
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.text())
            .map_err(|e| SamplingError::BackendUnavailable(e.to_string()))?;
        let power = parse_exposition(&body, &self.target, scrape_time)?;
        let resources = parse_resources(&body, &self.target, scrape_time)?;
        Ok(PolledBatch {
            power: self.gate.admit(power),
            resources,
        })
    }

    fn describe(&self) -> String {
        format!("scrape {}", self.target.endpoint_url)
    }
}

/// One record of a replay trace file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t_ms: i64,
    pub w: f64,
    pub pid: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cpu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mem_mb: Option<f64>,
}

/// Parses a newline-delimited JSON trace. Blank lines are skipped.
pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, SamplingError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord =
            serde_json::from_str(line).map_err(|e| SamplingError::BadTraceRecord {
                line_no: idx + 1,
                reason: e.to_string(),
            })?;
        if !(rec.w.is_finite() && rec.w >= 0.0) {
            return Err(SamplingError::BadTraceRecord {
                line_no: idx + 1,
                reason: "power must be finite and non-negative".into(),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn render_trace(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("trace record serializes"));
        out.push('\n');
    }
    out
}

/// Replays a recorded trace.
///
/// Unpaced, the first poll returns the whole trace. Paced, each poll advances
/// a virtual cursor by `pace_ms` and returns the records before it.
#[derive(Debug)]
pub struct ReplayBackend {
    records: Vec<TraceRecord>,
    host: String,
    next: usize,
    pace_ms: Option<i64>,
    cursor_ms: Option<i64>,
}

impl ReplayBackend {
    pub fn new(records: Vec<TraceRecord>, host: impl Into<String>) -> Self {
        Self {
            records,
            host: host.into(),
            next: 0,
            pace_ms: None,
            cursor_ms: None,
        }
    }

    pub fn from_file(path: &Path, host: impl Into<String>) -> Result<Self, SamplingError> {
        let text = fs::read_to_string(path)?;
        Ok(Self::new(parse_trace(&text)?, host))
    }

    /// Each poll releases records with `t_ms` up to the cursor, which starts at
    /// the first record and advances by `pace_ms` per poll.
    pub fn paced(mut self, pace_ms: i64) -> Self {
        self.pace_ms = Some(pace_ms.max(1));
        self
    }

    pub fn is_exhausted(&self) -> bool {
        self.next >= self.records.len()
    }
}

impl SamplingBackend for ReplayBackend {
    fn poll(&mut self) -> Result<PolledBatch, SamplingError> {
        let end = match self.pace_ms {
            None => self.records.len(),
            Some(pace) => {
                let cursor = match self.cursor_ms {
                    None => self.records.first().map(|r| r.t_ms).unwrap_or(0),
                    Some(c) => c + pace,
                };
                self.cursor_ms = Some(cursor);
                self.next
                    + self.records[self.next..]
                        .iter()
                        .take_while(|r| r.t_ms <= cursor)
                        .count()
            }
        };
        let mut batch = PolledBatch::default();
        for r in &self.records[self.next..end] {
            batch.power.push(PowerSample {
                timestamp_ms: r.t_ms,
                power_watts: r.w,
                process_id: r.pid,
                process_name: r.name.clone(),
                host: self.host.clone(),
            });
            if r.cpu.is_some() || r.mem_mb.is_some() {
                batch.resources.push(ProcessResource {
                    process_id: r.pid,
                    process_name: r.name.clone(),
                    host: self.host.clone(),
                    sample: ResourceSample {
                        timestamp_ms: r.t_ms,
                        cpu_percent: r.cpu.unwrap_or(0.0),
                        memory_mb: r.mem_mb.unwrap_or(0.0),
                    },
                });
            }
        }
        self.next = end;
        Ok(batch)
    }

    fn describe(&self) -> String {
        format!("replay {} records", self.records.len())
    }
}

/// A process reading produced by a [`PowerSource`].
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessReading {
    pub process_id: u32,
    pub process_name: String,
    pub power_watts: f64,
    pub resources: Option<ResourceSample>,
}

/// Something that can report instantaneous per-process readings at a time.
pub trait PowerSource: Send {
    fn readings_at(&mut self, t_ms: i64) -> Vec<ProcessReading>;
}

impl<S: PowerSource + ?Sized> PowerSource for Arc<parking_lot::Mutex<S>> {
    fn readings_at(&mut self, t_ms: i64) -> Vec<ProcessReading> {
        self.lock().readings_at(t_ms)
    }
}

/// A fixed set of processes drawing constant power.
#[derive(Clone, Debug)]
pub struct ConstantProfile {
    pub processes: Vec<(u32, String, f64)>,
}

impl ConstantProfile {
    pub fn single(pid: u32, name: impl Into<String>, watts: f64) -> Self {
        Self {
            processes: vec![(pid, name.into(), watts)],
        }
    }
}

impl PowerSource for ConstantProfile {
    fn readings_at(&mut self, _t_ms: i64) -> Vec<ProcessReading> {
        self.processes
            .iter()
            .map(|(pid, name, w)| ProcessReading {
                process_id: *pid,
                process_name: name.clone(),
                power_watts: *w,
                resources: None,
            })
            .collect()
    }
}

/// Reads a [`PowerSource`] at the clock's current time on every poll.
pub struct SimulatedBackend<S> {
    source: S,
    clock: Arc<dyn Clock>,
    host: String,
    gate: MonotonicGate,
}

impl<S: PowerSource> SimulatedBackend<S> {
    pub fn new(source: S, clock: Arc<dyn Clock>, host: impl Into<String>) -> Self {
        Self {
            source,
            clock,
            host: host.into(),
            gate: MonotonicGate::default(),
        }
    }

    pub fn source(&self) -> &S {
        &self.source
    }

    pub fn source_mut(&mut self) -> &mut S {
        &mut self.source
    }
}

impl<S: PowerSource> SamplingBackend for SimulatedBackend<S> {
    fn poll(&mut self) -> Result<PolledBatch, SamplingError> {
        let t = self.clock.now_ms();
        let mut batch = PolledBatch::default();
        for r in self.source.readings_at(t) {
            batch.power.push(PowerSample {
                timestamp_ms: t,
                power_watts: r.power_watts,
                process_id: r.process_id,
                process_name: r.process_name.clone(),
                host: self.host.clone(),
            });
            if let Some(sample) = r.resources {
                batch.resources.push(ProcessResource {
                    process_id: r.process_id,
                    process_name: r.process_name,
                    host: self.host.clone(),
                    sample,
                });
            }
        }
        batch.power = self.gate.admit(batch.power);
        Ok(batch)
    }

    fn describe(&self) -> String {
        format!("simulated {}", self.host)
    }
}
