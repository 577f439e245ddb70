//! Reduces manifests to a metrics table and plot-ready series files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use aps_core::experiment::{ab_verdict, median, preexplore_verdict, slope_verdict, Verdict};
use aps_core::metrics::MetricsRecord;

use crate::error::CliResult;
use crate::manifest::{Manifest, SeriesRow};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub table: String,
    pub series: BTreeMap<String, Vec<SeriesRow>>,
    pub missing: Vec<String>,
    pub records: Vec<MetricsRecord>,
}

/// Median of each metric per (model, split), rows in first-seen order.
pub fn table(records: &[MetricsRecord]) -> String {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in records {
        let k = (r.model.clone(), r.split.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    if keys.is_empty() {
        return String::new();
    }
    let mut out = format!("{:<16} {:<12} {:>7} {:>7} {:>7} {:>7} {:>5}\n", "model", "split", "NE↓", "OSR↑", "SR↑", "SPL↑", "runs");
    for (model, split) in keys {
        let rows: Vec<&MetricsRecord> = records.iter().filter(|r| r.model == model && r.split == split).collect();
        let m = |f: fn(&MetricsRecord) -> f64| median(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
        let _ = writeln!(
            out,
            "{model:<16} {split:<12} {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>5}",
            m(|r| r.ne),
            m(|r| r.osr),
            m(|r| r.sr),
            m(|r| r.spl),
            rows.len()
        );
    }
    out
}

pub fn build(manifests: &[Manifest]) -> Report {
    let mut report = Report::default();
    let mut records = Vec::new();
    for m in manifests {
        if let Some(why) = m.missing() {
            report.missing.push(why);
            continue;
        }
        records.extend(m.metrics.iter().cloned());
        for row in &m.series {
            report.series.entry(row.series.clone()).or_default().push(row.clone());
        }
    }
    for rows in report.series.values_mut() {
        rows.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.seed.cmp(&b.seed)));
    }
    report.table = table(&records);
    report.records = records;
    report
}

pub fn series_file_name(series: &str) -> String {
    series.replace('/', "-") + ".tsv"
}

/// Writes `table.txt` and one `series/<name>.tsv` per series.
pub fn write(report: &Report, dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut written = Vec::new();
    fs::create_dir_all(dir.join("series")).map_err(aps_core::Error::from)?;
    let table = dir.join("table.txt");
    fs::write(&table, &report.table).map_err(aps_core::Error::from)?;
    written.push(table);
    for (name, rows) in &report.series {
        let mut text = String::from("x\ty\tseed\n");
        for r in rows {
            let _ = writeln!(text, "{}\t{}\t{}", r.x, r.y, r.seed);
        }
        let path = dir.join("series").join(series_file_name(name));
        fs::write(&path, text).map_err(aps_core::Error::from)?;
        written.push(path);
    }
    Ok(written)
}

fn values(rows: &[SeriesRow], x: f64) -> Vec<f64> {
    rows.iter().filter(|r| (r.x - x).abs() < 1e-9).map(|r| r.y).collect()
}

/// Comparative checks for whatever the report contains. Each entry is a
/// (name, verdict) pair; checks whose inputs are absent are skipped.
pub fn checks(report: &Report, low_fraction: f64) -> Vec<(String, Verdict)> {
    let mut out = Vec::new();
    let sr = |model: &str, split: &str| -> Vec<f64> {
        report.records.iter().filter(|r| r.model == model && r.split == split).map(|r| r.sr).collect()
    };
    let (rs, as_, ru, au) = (sr("rand", "val-seen"), sr("aps", "val-seen"), sr("rand", "val-unseen"), sr("aps", "val-unseen"));
    if [&rs, &as_, &ru, &au].iter().all(|v| !v.is_empty()) {
        out.push(("ab".to_string(), ab_verdict(&rs, &as_, &ru, &au, 0.01)));
    }
    if let (Some(r), Some(a)) = (report.series.get("ratio/rand/val-seen"), report.series.get("ratio/aps/val-seen")) {
        let parts = [values(r, low_fraction), values(r, 1.0), values(a, low_fraction), values(a, 1.0)];
        if parts.iter().all(|v| !v.is_empty()) {
            out.push(("ratio-slope".to_string(), slope_verdict(&parts[0], &parts[1], &parts[2], &parts[3])));
        }
    }
    let pre: Vec<(usize, f64)> = report
        .series
        .iter()
        .filter(|(k, _)| k.starts_with("preexplore/env/"))
        .flat_map(|(_, rows)| rows.iter().map(|r| (r.x as usize, r.y)))
        .collect();
    if !pre.is_empty() {
        out.push(("pre-explore".to_string(), preexplore_verdict(&pre)));
    }
    out
}
