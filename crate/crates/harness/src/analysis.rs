//! Descriptive statistics, normality, pairwise significance and resource
//! correlation over exported iterations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use encoms_core::adaptation::{Mode, TransitionEvent};
use encoms_core::stats::{mann_whitney, pearson, stat_report, SampleVector, UMethod};
use encoms_core::store::{import_iteration, IterationExport};
use serde::{Deserialize, Serialize};

use crate::experiment::read_manifest;
use crate::HarnessError;

/// Fewest iterations a variant needs for the statistics to be computed.
pub const MIN_ITERATIONS: usize = 3;

/// Everything the analysis needs from one variant.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VariantData {
    pub label: String,
    /// Total energy of each iteration, in joules.
    pub totals: Vec<f64>,
    /// (window joules, mean CPU % over the window), pooled over iterations.
    pub energy_cpu: Vec<(f64, f64)>,
    /// (window joules, mean memory MB over the window).
    pub energy_memory: Vec<(f64, f64)>,
    pub transitions: Vec<TransitionEvent>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl VariantData {
    pub fn from_exports(label: impl Into<String>, exports: &[IterationExport]) -> Self {
        let mut data = VariantData {
            label: label.into(),
            ..VariantData::default()
        };
        for x in exports {
            data.totals.push(x.total_joules());
            for w in &x.windows {
                let inside: Vec<_> = x
                    .resources
                    .iter()
                    .filter(|r| r.timestamp_ms >= w.t0_ms && r.timestamp_ms <= w.t1_ms)
                    .collect();
                let cpu: Vec<f64> = inside.iter().map(|r| r.cpu_percent).collect();
                let mem: Vec<f64> = inside.iter().map(|r| r.memory_mb).collect();
                if let (Some(c), Some(m)) = (mean(&cpu), mean(&mem)) {
                    data.energy_cpu.push((w.joules, c));
                    data.energy_memory.push((w.joules, m));
                }
            }
            data.transitions.extend(x.adaptation_log.iter().cloned());
        }
        data
    }
}

/// Iteration exports of a run directory, in file name order.
pub fn load_exports(dir: &Path) -> Result<Vec<IterationExport>, HarnessError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("iteration-") && n.ends_with(".json"))
        })
        .collect();
    files.sort();
    files
        .iter()
        .map(|f| {
            import_iteration(f).map_err(|e| match HarnessError::from(e) {
                HarnessError::Schema(path) => {
                    HarnessError::Schema(format!("{}: {path}", f.display()))
                }
                other => other,
            })
        })
        .collect()
}

/// Loads a run directory, labelled from its manifest or else its name.
pub fn load_variant(dir: &Path) -> Result<VariantData, HarnessError> {
    let label = match read_manifest(dir)? {
        Some(m) => m.label,
        None => dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("variant")
            .to_string(),
    };
    Ok(VariantData::from_exports(label, &load_exports(dir)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub variant: String,
    pub n: usize,
    pub aec: f64,
    pub std: f64,
    pub rsec: Option<f64>,
    pub ci95_half_width: f64,
    pub shapiro_p: Option<f64>,
}

/// One cell below the diagonal of the pairwise matrix: `row` compared
/// against `column`, with the energy change relative to `column`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairCell {
    pub row: String,
    pub column: String,
    pub u_statistic: f64,
    pub p_value: f64,
    pub dec_percent: Option<f64>,
    pub method: UMethod,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub variant: String,
    /// `cpu` or `memory`.
    pub against: String,
    pub n: usize,
    /// Absent when either series is constant or too short.
    pub r: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionSummary {
    pub variant: String,
    pub from: Mode,
    pub to: Mode,
    pub rule_id: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub baseline: String,
    pub variants: Vec<StatRow>,
    pub pairwise: Vec<PairCell>,
    pub correlations: Vec<CorrelationRow>,
    pub transitions: Vec<TransitionSummary>,
}

impl Report {
    pub fn row(&self, variant: &str) -> Option<&StatRow> {
        self.variants.iter().find(|r| r.variant == variant)
    }

    pub fn cell(&self, row: &str, column: &str) -> Option<&PairCell> {
        self.pairwise
            .iter()
            .find(|c| c.row == row && c.column == column)
    }
}

fn correlation(variant: &str, against: &str, pairs: &[(f64, f64)]) -> CorrelationRow {
    let (e, x): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    let c = SampleVector::new(e)
        .and_then(|e| SampleVector::new(x).map(|x| (e, x)))
        .and_then(|(e, x)| pearson(&e, &x))
        .ok();
    CorrelationRow {
        variant: variant.into(),
        against: against.into(),
        n: pairs.len(),
        r: c.map(|c| c.r),
        p_value: c.map(|c| c.p_value),
    }
}

/// Analyzes the variants, `baseline` first and the rest in input order.
pub fn analyze_variants(
    variants: Vec<VariantData>,
    baseline: &str,
) -> Result<Report, HarnessError> {
    let mut seen = std::collections::BTreeSet::new();
    for v in &variants {
        if !seen.insert(v.label.as_str()) {
            return Err(HarnessError::InvalidConfig(format!(
                "variant label `{}` appears twice",
                v.label
            )));
        }
    }
    let Some(pos) = variants.iter().position(|v| v.label == baseline) else {
        return Err(HarnessError::InvalidConfig(format!(
            "baseline `{baseline}` is not among the inputs"
        )));
    };
    let mut variants = variants;
    let base = variants.remove(pos);
    variants.insert(0, base);

    let mut samples = Vec::with_capacity(variants.len());
    for v in &variants {
        if v.totals.len() < MIN_ITERATIONS {
            return Err(HarnessError::InsufficientIterations {
                variant: v.label.clone(),
                found: v.totals.len(),
                required: MIN_ITERATIONS,
            });
        }
        samples.push(SampleVector::new(v.totals.clone())?);
    }

    let rows = variants
        .iter()
        .zip(&samples)
        .map(|(v, s)| {
            let r = stat_report(s);
            StatRow {
                variant: v.label.clone(),
                n: s.len(),
                aec: r.aec,
                std: r.std,
                rsec: r.rsec,
                ci95_half_width: r.ci95_half_width,
                shapiro_p: r.shapiro_p,
            }
        })
        .collect();

    let mut pairwise = Vec::new();
    for i in 0..variants.len() {
        for j in 0..i {
            let c = mann_whitney(&samples[i], &samples[j]);
            pairwise.push(PairCell {
                row: variants[i].label.clone(),
                column: variants[j].label.clone(),
                u_statistic: c.u_statistic,
                p_value: c.p_value,
                dec_percent: c.dec_percent,
                method: c.method,
            });
        }
    }

    let mut correlations = Vec::new();
    let mut transitions = Vec::new();
    for v in &variants {
        correlations.push(correlation(&v.label, "cpu", &v.energy_cpu));
        correlations.push(correlation(&v.label, "memory", &v.energy_memory));
        let mut counts: BTreeMap<(Mode, Mode, &str), usize> = BTreeMap::new();
        for e in &v.transitions {
            *counts
                .entry((e.from, e.to, e.rule_id.as_str()))
                .or_default() += 1;
        }
        transitions.extend(
            counts
                .into_iter()
                .map(|((from, to, rule), count)| TransitionSummary {
                    variant: v.label.clone(),
                    from,
                    to,
                    rule_id: rule.to_string(),
                    count,
                }),
        );
    }

    Ok(Report {
        baseline: baseline.to_string(),
        variants: rows,
        pairwise,
        correlations,
        transitions,
    })
}

/// Loads every run directory and analyzes them against `baseline`.
pub fn analyze(inputs: &[PathBuf], baseline: &str) -> Result<Report, HarnessError> {
    let variants = inputs
        .iter()
        .map(|d| load_variant(d))
        .collect::<Result<Vec<_>, _>>()?;
    analyze_variants(variants, baseline)
}
