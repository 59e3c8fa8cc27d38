//! Text, CSV and JSON renderings of a [`Report`]. CSV and JSON parse back to
//! the same report.

use std::fmt::Write as _;
use std::str::FromStr;

use encoms_core::adaptation::Mode;
use encoms_core::stats::UMethod;
use serde::{Deserialize, Serialize};

use crate::analysis::{CorrelationRow, PairCell, Report, StatRow, TransitionSummary};
use crate::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputFormat {
    Text,
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "text" => Ok(OutputFormat::Text),
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            _ => Err(format!("unknown format `{s}` (text, csv or json)")),
        }
    }
}

pub fn render_report(report: &Report, format: OutputFormat) -> String {
    match format {
        OutputFormat::Text => render_text(report),
        OutputFormat::Csv => render_csv(report),
        OutputFormat::Json => render_json(report),
    }
}

pub fn render_json(report: &Report) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn parse_json(text: &str) -> Result<Report, HarnessError> {
    serde_json::from_str(text).map_err(|e| HarnessError::Schema(e.to_string()))
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

pub fn render_text(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "baseline: {}", report.baseline);
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<16} {:>4} {:>12} {:>10} {:>8} {:>10} {:>10}",
        "variant", "n", "AEC (J)", "std", "RSEC", "CI95 +/-", "SW p"
    );
    for r in &report.variants {
        let _ = writeln!(
            out,
            "{:<16} {:>4} {:>12.2} {:>10.2} {:>8} {:>10.2} {:>10}",
            r.variant,
            r.n,
            r.aec,
            r.std,
            opt(r.rsec, 2),
            r.ci95_half_width,
            opt(r.shapiro_p, 4)
        );
    }
    if !report.pairwise.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<16} {:<16} {:>10} {:>10} {:>9} {:>6}",
            "row", "column", "U", "p", "%DEC", "method"
        );
        for c in &report.pairwise {
            let _ = writeln!(
                out,
                "{:<16} {:<16} {:>10.1} {:>10.4} {:>9} {:>6}",
                c.row,
                c.column,
                c.u_statistic,
                c.p_value,
                opt(c.dec_percent, 1),
                match c.method {
                    UMethod::Exact => "exact",
                    UMethod::Normal => "normal",
                }
            );
        }
    }
    if !report.correlations.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<16} {:<8} {:>6} {:>8} {:>10}",
            "variant", "against", "n", "r", "p"
        );
        for c in &report.correlations {
            let _ = writeln!(
                out,
                "{:<16} {:<8} {:>6} {:>8} {:>10}",
                c.variant,
                c.against,
                c.n,
                opt(c.r, 3),
                opt(c.p_value, 4)
            );
        }
    }
    if !report.transitions.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<16} {:<32} {:<20} {:>6}",
            "variant", "transition", "rule", "count"
        );
        for t in &report.transitions {
            let _ = writeln!(
                out,
                "{:<16} {:<32} {:<20} {:>6}",
                t.variant,
                format!("{} -> {}", t.from, t.to),
                t.rule_id,
                t.count
            );
        }
    }
    out
}

/// One line of the flat CSV layout. `section` says which fields are used.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct CsvRecord {
    section: String,
    variant: Option<String>,
    column: Option<String>,
    n: Option<usize>,
    aec: Option<f64>,
    std: Option<f64>,
    rsec: Option<f64>,
    ci95_half_width: Option<f64>,
    shapiro_p: Option<f64>,
    u_statistic: Option<f64>,
    p_value: Option<f64>,
    dec_percent: Option<f64>,
    method: Option<UMethod>,
    r: Option<f64>,
    from: Option<Mode>,
    to: Option<Mode>,
    rule_id: Option<String>,
    count: Option<usize>,
}

pub fn render_csv(report: &Report) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut put = |r: CsvRecord| w.serialize(r).expect("in-memory csv write");
    put(CsvRecord {
        section: "meta".into(),
        variant: Some(report.baseline.clone()),
        ..CsvRecord::default()
    });
    for s in &report.variants {
        put(CsvRecord {
            section: "stats".into(),
            variant: Some(s.variant.clone()),
            n: Some(s.n),
            aec: Some(s.aec),
            std: Some(s.std),
            rsec: s.rsec,
            ci95_half_width: Some(s.ci95_half_width),
            shapiro_p: s.shapiro_p,
            ..CsvRecord::default()
        });
    }
    for c in &report.pairwise {
        put(CsvRecord {
            section: "pairwise".into(),
            variant: Some(c.row.clone()),
            column: Some(c.column.clone()),
            u_statistic: Some(c.u_statistic),
            p_value: Some(c.p_value),
            dec_percent: c.dec_percent,
            method: Some(c.method),
            ..CsvRecord::default()
        });
    }
    for c in &report.correlations {
        put(CsvRecord {
            section: "correlation".into(),
            variant: Some(c.variant.clone()),
            column: Some(c.against.clone()),
            n: Some(c.n),
            p_value: c.p_value,
            r: c.r,
            ..CsvRecord::default()
        });
    }
    for t in &report.transitions {
        put(CsvRecord {
            section: "transition".into(),
            variant: Some(t.variant.clone()),
            from: Some(t.from),
            to: Some(t.to),
            rule_id: Some(t.rule_id.clone()),
            count: Some(t.count),
            ..CsvRecord::default()
        });
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("csv is utf-8")
}

pub fn parse_csv(text: &str) -> Result<Report, HarnessError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut report = Report {
        baseline: String::new(),
        variants: Vec::new(),
        pairwise: Vec::new(),
        correlations: Vec::new(),
        transitions: Vec::new(),
    };
    let mut saw_meta = false;
    for (line, rec) in rdr.deserialize::<CsvRecord>().enumerate() {
        let rec = rec.map_err(|e| HarnessError::Schema(e.to_string()))?;
        let missing = |field: &str| HarnessError::Schema(format!("row {}: {field}", line + 1));
        match rec.section.as_str() {
            "meta" => {
                report.baseline = rec.variant.ok_or_else(|| missing("variant"))?;
                saw_meta = true;
            }
            "stats" => report.variants.push(StatRow {
                variant: rec.variant.ok_or_else(|| missing("variant"))?,
                n: rec.n.ok_or_else(|| missing("n"))?,
                aec: rec.aec.ok_or_else(|| missing("aec"))?,
                std: rec.std.ok_or_else(|| missing("std"))?,
                rsec: rec.rsec,
                ci95_half_width: rec
                    .ci95_half_width
                    .ok_or_else(|| missing("ci95_half_width"))?,
                shapiro_p: rec.shapiro_p,
            }),
            "pairwise" => report.pairwise.push(PairCell {
                row: rec.variant.ok_or_else(|| missing("variant"))?,
                column: rec.column.ok_or_else(|| missing("column"))?,
                u_statistic: rec.u_statistic.ok_or_else(|| missing("u_statistic"))?,
                p_value: rec.p_value.ok_or_else(|| missing("p_value"))?,
                dec_percent: rec.dec_percent,
                method: rec.method.ok_or_else(|| missing("method"))?,
            }),
            "correlation" => report.correlations.push(CorrelationRow {
                variant: rec.variant.ok_or_else(|| missing("variant"))?,
                against: rec.column.ok_or_else(|| missing("column"))?,
                n: rec.n.ok_or_else(|| missing("n"))?,
                r: rec.r,
                p_value: rec.p_value,
            }),
            "transition" => report.transitions.push(TransitionSummary {
                variant: rec.variant.ok_or_else(|| missing("variant"))?,
                from: rec.from.ok_or_else(|| missing("from"))?,
                to: rec.to.ok_or_else(|| missing("to"))?,
                rule_id: rec.rule_id.ok_or_else(|| missing("rule_id"))?,
                count: rec.count.ok_or_else(|| missing("count"))?,
            }),
            other => {
                return Err(HarnessError::Schema(format!(
                    "row {}: unknown section `{other}`",
                    line + 1
                )))
            }
        }
    }
    if !saw_meta {
        return Err(HarnessError::Schema("missing meta row".into()));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{analyze_variants, VariantData};
    use encoms_core::adaptation::TransitionEvent;
    use proptest::prelude::*;

    fn sample_report(a: Vec<f64>, b: Vec<f64>) -> Report {
        let mut va = VariantData {
            label: "ADAPT".into(),
            totals: a.clone(),
            ..VariantData::default()
        };
        va.energy_cpu = a.iter().map(|x| (*x, x * 0.5 + 1.0)).collect();
        va.energy_memory = a.iter().map(|x| (*x, 7.0)).collect();
        va.transitions = vec![TransitionEvent {
            t_ms: 4000,
            from: Mode::Normal,
            to: Mode::LowPower,
            rule_id: "energy-escalate".into(),
            triggering_value: 16.0,
        }];
        let vb = VariantData {
            label: "NOADAPT".into(),
            totals: b,
            ..VariantData::default()
        };
        analyze_variants(vec![va, vb], "NOADAPT").unwrap()
    }

    #[test]
    fn text_marks_gated_dec_with_a_dash() {
        let r = sample_report(vec![1.0, 2.0, 3.0], vec![1.5, 2.5, 3.5]);
        let t = render_text(&r);
        assert!(t.contains("baseline: NOADAPT"));
        assert!(t
            .lines()
            .any(|l| l.starts_with("ADAPT") && l.contains(" - ")));
        assert!(t.contains("Normal -> LowPower"));
    }

    #[test]
    fn format_names() {
        assert_eq!("CSV".parse::<OutputFormat>().unwrap(), OutputFormat::Csv);
        assert!("xml".parse::<OutputFormat>().is_err());
    }

    #[test]
    fn csv_without_meta_is_rejected() {
        let csv = render_csv(&sample_report(vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]));
        let body: Vec<&str> = csv.lines().filter(|l| !l.starts_with("meta")).collect();
        assert!(parse_csv(&body.join("\n")).is_err());
    }

    proptest! {
        #[test]
        fn csv_and_json_round_trip(
            a in prop::collection::vec(0.001f64..1e6, 3..12),
            b in prop::collection::vec(0.001f64..1e6, 3..12),
        ) {
            let r = sample_report(a, b);
            prop_assert_eq!(&parse_csv(&render_csv(&r)).unwrap(), &r);
            prop_assert_eq!(&parse_json(&render_json(&r)).unwrap(), &r);
        }
    }
}
