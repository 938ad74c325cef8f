//! On-disk layout of run records:
//!
//! ```text
//! <out>/<dataset>/<variant>/records.jsonl        one RunRecord per line, by run
//! <out>/<dataset>/<variant>/run_<r>.json         the same record on its own
//! <out>/<dataset>/<variant>/run_<r>_final.csv    final weight snapshot
//! <out>/<dataset>/<variant>/run_<r>_switch.csv   snapshot at the loss switch (reactive runs)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::experiment::RunRecord;
use crate::loss::LossVariant;

pub fn variant_dir(out: &Path, dataset: &str, variant: LossVariant) -> PathBuf {
    out.join(dataset).join(variant.label())
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents).map_err(|e| Error::io(path, e))
}

/// One value per line under a `weight` header.
pub fn write_snapshot_csv(path: &Path, values: &[f64]) -> Result<()> {
    let mut s = String::with_capacity(values.len() * 22 + 8);
    s.push_str("weight\n");
    for v in values {
        s.push_str(&format!("{v}\n"));
    }
    write_file(path, s.as_bytes())
}

pub fn read_snapshot_csv(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<f64>().map_err(|_| Error::Parse {
                path: path.into(),
                row: i + 1,
                msg: format!("`{l}` is not a number"),
            })
        })
        .collect()
}

/// Writes every record, grouped by (dataset, variant).
pub fn write_records(out: &Path, records: &[RunRecord]) -> Result<()> {
    let mut groups: BTreeMap<(&str, LossVariant), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.dataset.as_str(), r.variant)).or_default().push(r);
    }
    for ((dataset, variant), mut recs) in groups {
        recs.sort_by_key(|r| r.run);
        let dir = variant_dir(out, dataset, variant);
        let mut lines = String::new();
        for r in &recs {
            let json = serde_json::to_string(r)?;
            lines.push_str(&json);
            lines.push('\n');
            write_file(&dir.join(format!("run_{}.json", r.run)), json.as_bytes())?;
            write_snapshot_csv(&dir.join(format!("run_{}_final.csv", r.run)), &r.final_snapshot)?;
            if let Some(snap) = &r.switch_snapshot {
                write_snapshot_csv(&dir.join(format!("run_{}_switch.csv", r.run)), snap)?;
            }
        }
        write_file(&dir.join("records.jsonl"), lines.as_bytes())?;
    }
    Ok(())
}

/// Adds or replaces one record, keeping the other runs of its variant.
pub fn upsert_record(out: &Path, record: &RunRecord) -> Result<()> {
    let dir = variant_dir(out, &record.dataset, record.variant);
    let mut recs = if dir.join("records.jsonl").is_file() {
        read_variant_records(out, &record.dataset, record.variant)?
    } else {
        Vec::new()
    };
    recs.retain(|r| r.run != record.run);
    recs.push(record.clone());
    write_records(out, &recs)
}

/// Reads `records.jsonl` for one variant.
pub fn read_variant_records(out: &Path, dataset: &str, variant: LossVariant) -> Result<Vec<RunRecord>> {
    let path = variant_dir(out, dataset, variant).join("records.jsonl");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// All records of a dataset, in variant order then run order. Variants without
/// a records file are skipped.
pub fn read_records(out: &Path, dataset: &str) -> Result<Vec<RunRecord>> {
    let mut all = Vec::new();
    for v in LossVariant::ALL {
        if variant_dir(out, dataset, v).join("records.jsonl").is_file() {
            let mut recs = read_variant_records(out, dataset, v)?;
            recs.sort_by_key(|r| r.run);
            all.extend(recs);
        }
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn snapshot_csv_round_trips(values in prop::collection::vec(-1e6f64..1e6, 0..200)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("s.csv");
            write_snapshot_csv(&p, &values).unwrap();
            prop_assert_eq!(read_snapshot_csv(&p).unwrap(), values);
        }
    }

    #[test]
    fn missing_records_file_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        assert!(read_records(dir.path(), "glass").unwrap().is_empty());
        assert!(read_variant_records(dir.path(), "glass", LossVariant::SeSwCe).is_err());
    }
}
