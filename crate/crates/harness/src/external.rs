//! Adapter for externally recorded datasets. The accepted layout is
//! described in `docs/external-dataset.md`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::analysis::{load_exports, VariantData};
use crate::HarnessError;

pub const ENERGY_CSV: &str = "energy.csv";

#[derive(Debug, Deserialize)]
struct EnergyRow {
    iteration: u32,
    energy_joules: f64,
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

fn has_iterations(dir: &Path) -> Result<bool, HarnessError> {
    Ok(fs::read_dir(dir)?.filter_map(|e| e.ok()).any(|e| {
        e.file_name()
            .to_str()
            .is_some_and(|n| n.starts_with("iteration-") && n.ends_with(".json"))
    }))
}

fn name(p: &Path) -> String {
    p.file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default()
        .to_string()
}

/// Per-iteration totals from an `energy.csv` table, ordered by iteration.
pub fn read_energy_csv(path: &Path) -> Result<Vec<f64>, HarnessError> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| HarnessError::Schema(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, row) in rdr.deserialize::<EnergyRow>().enumerate() {
        let row = row.map_err(|e| HarnessError::Schema(format!("{}: {e}", path.display())))?;
        if !(row.energy_joules.is_finite() && row.energy_joules >= 0.0) {
            return Err(HarnessError::Schema(format!(
                "{}: row {}: energy_joules",
                path.display(),
                i + 1
            )));
        }
        rows.push(row);
    }
    rows.sort_by_key(|r| r.iteration);
    if rows.windows(2).any(|w| w[0].iteration == w[1].iteration) {
        return Err(HarnessError::Schema(format!(
            "{}: duplicate iteration",
            path.display()
        )));
    }
    Ok(rows.into_iter().map(|r| r.energy_joules).collect())
}

fn load_leaf(dir: &Path, label: String) -> Result<Option<VariantData>, HarnessError> {
    let csv = dir.join(ENERGY_CSV);
    if csv.is_file() {
        return Ok(Some(VariantData {
            label,
            totals: read_energy_csv(&csv)?,
            ..VariantData::default()
        }));
    }
    if has_iterations(dir)? {
        return Ok(Some(VariantData::from_exports(label, &load_exports(dir)?)));
    }
    Ok(None)
}

/// Loads every variant under `root`. A directory holding data directly is
/// one variant named after it; otherwise it is a cluster whose data-holding
/// subdirectories become variants named `cluster/variant`.
pub fn import_external(root: &Path) -> Result<Vec<VariantData>, HarnessError> {
    if !root.is_dir() {
        return Err(HarnessError::InvalidConfig(format!(
            "external dataset {} is not a directory",
            root.display()
        )));
    }
    let mut out = Vec::new();
    for dir in subdirs(root)? {
        if let Some(v) = load_leaf(&dir, name(&dir))? {
            out.push(v);
            continue;
        }
        for leaf in subdirs(&dir)? {
            if let Some(v) = load_leaf(&leaf, format!("{}/{}", name(&dir), name(&leaf)))? {
                out.push(v);
            }
        }
    }
    if out.is_empty() {
        return Err(HarnessError::Schema(format!(
            "no variants found under {}",
            root.display()
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cluster_layout_with_csv_tables() {
        let root = tempfile::tempdir().unwrap();
        let leaf = root.path().join("Nova").join("DEA");
        fs::create_dir_all(&leaf).unwrap();
        fs::write(
            leaf.join(ENERGY_CSV),
            "iteration,energy_joules\n2,20.5\n1,10.25\n3,30\n",
        )
        .unwrap();
        fs::create_dir_all(root.path().join("Nova").join("empty")).unwrap();
        let vs = import_external(root.path()).unwrap();
        assert_eq!(vs.len(), 1);
        assert_eq!(vs[0].label, "Nova/DEA");
        assert_eq!(vs[0].totals, vec![10.25, 20.5, 30.0]);
    }

    #[test]
    fn bad_rows_are_schema_errors() {
        let root = tempfile::tempdir().unwrap();
        let leaf = root.path().join("SO");
        fs::create_dir_all(&leaf).unwrap();
        fs::write(leaf.join(ENERGY_CSV), "iteration,energy_joules\n1,-3\n").unwrap();
        assert!(matches!(
            import_external(root.path()),
            Err(HarnessError::Schema(_))
        ));
        fs::write(leaf.join(ENERGY_CSV), "iteration,energy_joules\n1,2\n1,3\n").unwrap();
        assert!(matches!(
            import_external(root.path()),
            Err(HarnessError::Schema(_))
        ));
        fs::write(leaf.join(ENERGY_CSV), "iter,joules\n1,2\n").unwrap();
        assert!(matches!(
            import_external(root.path()),
            Err(HarnessError::Schema(_))
        ));
    }

    #[test]
    fn empty_root_is_rejected() {
        let root = tempfile::tempdir().unwrap();
        assert!(import_external(root.path()).is_err());
        assert!(import_external(&root.path().join("missing")).is_err());
    }
}
