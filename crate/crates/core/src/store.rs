//! Append-only series store and iteration export files.
//!
//! Every append is written as one JSON line to a log file and flushed before
//! the call returns; the log is replayed into an in-memory index on open.
//! Without a backing file the store lives in memory only.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::adaptation::TransitionEvent;
use crate::energy::{EnergyWindow, GapMarker};
use crate::sampling::ResourceSample;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("out-of-order append to {key}: {t_ms} ms is not after {last_ms} ms")]
    OutOfOrderAppend {
        key: String,
        t_ms: i64,
        last_ms: i64,
    },
    #[error("unknown series {0}")]
    UnknownSeries(String),
    #[error("invalid range: from {0} ms is after to {1} ms")]
    InvalidRange(i64, i64),
    #[error("invalid series key: {0}")]
    InvalidKey(String),
    #[error("schema violation at `{0}`")]
    SchemaViolation(String),
    #[error("corrupt store log at line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Power,
    Energy,
    Cpu,
    Memory,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SeriesKey {
    pub host: String,
    pub process_name: String,
    pub metric: Metric,
}

impl SeriesKey {
    pub fn new(
        host: impl Into<String>,
        process_name: impl Into<String>,
        metric: Metric,
    ) -> Result<Self, StoreError> {
        let key = Self {
            host: host.into(),
            process_name: process_name.into(),
            metric,
        };
        if key.host.is_empty() || key.process_name.is_empty() {
            return Err(StoreError::InvalidKey(key.to_string()));
        }
        Ok(key)
    }

    pub fn with_metric(&self, metric: Metric) -> Self {
        Self {
            metric,
            ..self.clone()
        }
    }
}

impl std::fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{:?}", self.host, self.process_name, self.metric)
    }
}

/// A stored point. Energy series hold windows and gap markers keyed by their
/// start time; the other metrics hold scalar samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Point {
    Sample { t_ms: i64, value: f64 },
    Window(EnergyWindow),
    Gap(GapMarker),
}

impl Point {
    pub fn t_ms(&self) -> i64 {
        match self {
            Point::Sample { t_ms, .. } => *t_ms,
            Point::Window(w) => w.t0_ms,
            Point::Gap(g) => g.t0_ms,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct LogRecord {
    key: SeriesKey,
    point: Point,
}

/// Series store with a single writer per series and concurrent readers.
#[derive(Debug)]
pub struct Store {
    series: RwLock<BTreeMap<SeriesKey, Vec<Point>>>,
    log: Option<Mutex<BufWriter<File>>>,
    path: Option<PathBuf>,
}

impl Default for Store {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl Store {
    pub fn in_memory() -> Self {
        Self {
            series: RwLock::new(BTreeMap::new()),
            log: None,
            path: None,
        }
    }

    /// Opens (or creates) a store backed by the JSON-lines log at `path`.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut series: BTreeMap<SeriesKey, Vec<Point>> = BTreeMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (idx, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: LogRecord =
                    serde_json::from_str(&line).map_err(|e| StoreError::CorruptLog {
                        line: idx + 1,
                        reason: e.to_string(),
                    })?;
                series.entry(rec.key).or_default().push(rec.point);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            series: RwLock::new(series),
            log: Some(Mutex::new(BufWriter::new(file))),
            path: Some(path),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Appends points whose timestamps are strictly increasing and later than
    /// the last stored point of the series.
    pub fn append(&self, key: &SeriesKey, points: Vec<Point>) -> Result<(), StoreError> {
        if points.is_empty() {
            return Ok(());
        }
        if key.host.is_empty() || key.process_name.is_empty() {
            return Err(StoreError::InvalidKey(key.to_string()));
        }
        let mut series = self.series.write();
        let mut last = series.get(key).and_then(|v| v.last()).map(Point::t_ms);
        for p in &points {
            if let Some(l) = last {
                if p.t_ms() <= l {
                    return Err(StoreError::OutOfOrderAppend {
                        key: key.to_string(),
                        t_ms: p.t_ms(),
                        last_ms: l,
                    });
                }
            }
            last = Some(p.t_ms());
        }
        if let Some(log) = &self.log {
            let mut w = log.lock();
            for p in &points {
                let rec = LogRecord {
                    key: key.clone(),
                    point: p.clone(),
                };
                serde_json::to_writer(&mut *w, &rec).map_err(std::io::Error::from)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        series.entry(key.clone()).or_default().extend(points);
        Ok(())
    }

    /// Points with `from_ms <= t < to_ms`, in order.
    pub fn query_range(
        &self,
        key: &SeriesKey,
        from_ms: i64,
        to_ms: i64,
    ) -> Result<Vec<Point>, StoreError> {
        if from_ms > to_ms {
            return Err(StoreError::InvalidRange(from_ms, to_ms));
        }
        let series = self.series.read();
        let points = series
            .get(key)
            .ok_or_else(|| StoreError::UnknownSeries(key.to_string()))?;
        let lo = points.partition_point(|p| p.t_ms() < from_ms);
        let hi = points.partition_point(|p| p.t_ms() < to_ms);
        Ok(points[lo..hi.max(lo)].to_vec())
    }

    pub fn last_point(&self, key: &SeriesKey) -> Option<Point> {
        self.series.read().get(key).and_then(|v| v.last().cloned())
    }

    pub fn contains(&self, key: &SeriesKey) -> bool {
        self.series.read().contains_key(key)
    }

    pub fn keys(&self) -> Vec<SeriesKey> {
        self.series.read().keys().cloned().collect()
    }

    /// Copy of every series, for snapshotting.
    pub fn snapshot(&self) -> BTreeMap<SeriesKey, Vec<Point>> {
        self.series.read().clone()
    }

    pub fn from_snapshot(snapshot: BTreeMap<SeriesKey, Vec<Point>>) -> Self {
        Self {
            series: RwLock::new(snapshot),
            log: None,
            path: None,
        }
    }
}

/// One monitored iteration of an experiment, as written to disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationExport {
    pub iteration_index: u32,
    pub scenario: String,
    pub windows: Vec<EnergyWindow>,
    pub resources: Vec<ResourceSample>,
    pub adaptation_log: Vec<TransitionEvent>,
}

impl IterationExport {
    pub fn total_joules(&self) -> f64 {
        self.windows.iter().map(|w| w.joules).sum()
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        if self.iteration_index < 1 {
            return Err(StoreError::SchemaViolation("iteration_index".into()));
        }
        for (i, w) in self.windows.iter().enumerate() {
            if w.t1_ms <= w.t0_ms {
                return Err(StoreError::SchemaViolation(format!("windows[{i}].t1_ms")));
            }
            if !(w.joules >= 0.0) {
                return Err(StoreError::SchemaViolation(format!("windows[{i}].joules")));
            }
            if i > 0 && w.t0_ms < self.windows[i - 1].t0_ms {
                return Err(StoreError::SchemaViolation(format!("windows[{i}].t0_ms")));
            }
            if let Some(n) = w.normalized {
                if !(0.0..=1.0).contains(&n) {
                    return Err(StoreError::SchemaViolation(format!(
                        "windows[{i}].normalized"
                    )));
                }
            }
        }
        for (i, r) in self.resources.iter().enumerate() {
            if !r.is_valid() {
                return Err(StoreError::SchemaViolation(format!("resources[{i}]")));
            }
        }
        Ok(())
    }
}

/// Serializes an export in the on-disk layout (pretty JSON, trailing newline).
pub fn export_to_string(export: &IterationExport) -> String {
    let mut s = serde_json::to_string_pretty(export).expect("export serializes");
    s.push('\n');
    s
}

pub fn export_iteration(export: &IterationExport, path: &Path) -> Result<(), StoreError> {
    export.validate()?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(export_to_string(export).as_bytes())?;
    f.flush()?;
    Ok(())
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "bool",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn require<'a>(
    obj: &'a serde_json::Map<String, Value>,
    path: &str,
    field: &str,
) -> Result<&'a Value, StoreError> {
    obj.get(field)
        .ok_or_else(|| StoreError::SchemaViolation(join_path(path, field)))
}

fn join_path(path: &str, field: &str) -> String {
    if path.is_empty() {
        field.to_string()
    } else {
        format!("{path}.{field}")
    }
}

fn check_kind(
    obj: &serde_json::Map<String, Value>,
    path: &str,
    field: &str,
    kind: &str,
    optional: bool,
) -> Result<(), StoreError> {
    match obj.get(field) {
        None if optional => Ok(()),
        None => Err(StoreError::SchemaViolation(join_path(path, field))),
        Some(v) => {
            let ok = match kind {
                "int" => v.as_i64().is_some() || v.as_u64().is_some(),
                "number" => v.is_number(),
                other => type_name(v) == other,
            };
            if ok {
                Ok(())
            } else {
                Err(StoreError::SchemaViolation(join_path(path, field)))
            }
        }
    }
}

/// Checks the export schema field by field so that errors name the first
/// offending path (e.g. `windows[3].joules`).
fn check_schema(v: &Value) -> Result<(), StoreError> {
    let top = v
        .as_object()
        .ok_or_else(|| StoreError::SchemaViolation("$".into()))?;
    check_kind(top, "", "iteration_index", "int", false)?;
    check_kind(top, "", "scenario", "string", false)?;
    let arrays: [(&str, &[(&str, &str, bool)]); 3] = [
        (
            "windows",
            &[
                ("t0_ms", "int", false),
                ("t1_ms", "int", false),
                ("joules", "number", false),
                ("sample_count", "int", false),
                ("normalized", "number", true),
                ("partial", "bool", true),
            ],
        ),
        (
            "resources",
            &[
                ("t_ms", "int", false),
                ("cpu_percent", "number", false),
                ("mem_mb", "number", false),
            ],
        ),
        (
            "adaptation_log",
            &[
                ("t_ms", "int", false),
                ("from", "string", false),
                ("to", "string", false),
                ("rule_id", "string", false),
            ],
        ),
    ];
    for (name, fields) in arrays {
        let arr = require(top, "", name)?
            .as_array()
            .ok_or_else(|| StoreError::SchemaViolation(name.into()))?;
        for (i, item) in arr.iter().enumerate() {
            let path = format!("{name}[{i}]");
            let obj = item
                .as_object()
                .ok_or_else(|| StoreError::SchemaViolation(path.clone()))?;
            for (field, kind, optional) in fields {
                check_kind(obj, &path, field, kind, *optional)?;
            }
        }
    }
    Ok(())
}

pub fn import_from_str(text: &str) -> Result<IterationExport, StoreError> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| StoreError::SchemaViolation(format!("$ (invalid JSON: {e})")))?;
    check_schema(&value)?;
    let export: IterationExport = serde_json::from_value(value)
        .map_err(|e| StoreError::SchemaViolation(format!("$ ({e})")))?;
    export.validate()?;
    Ok(export)
}

pub fn import_iteration(path: &Path) -> Result<IterationExport, StoreError> {
    import_from_str(&fs::read_to_string(path)?)
}
