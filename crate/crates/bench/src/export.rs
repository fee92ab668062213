use std::io::Write;
use std::path::Path;

use crate::{BenchError, BenchResult};

pub const CSV_HEADER: [&str; 11] = [
    "scenario",
    "model",
    "cores",
    "virtual_cores",
    "pattern",
    "reps",
    "trimmed_mean_ns",
    "min_ns",
    "max_ns",
    "coalesced",
    "drops",
];

/// CSV text, one row per result, ordered by scenario id.
pub fn results_csv(results: &[BenchResult]) -> Result<String, BenchError> {
    let mut sorted: Vec<&BenchResult> = results.iter().collect();
    sorted.sort_by(|a, b| a.scenario.cmp(&b.scenario));
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| BenchError::Io(e.to_string());
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in sorted {
        w.write_record([
            r.scenario.clone(),
            r.model.clone(),
            r.cores.to_string(),
            r.virtual_cores.to_string(),
            r.pattern.clone(),
            r.reps.to_string(),
            format!("{:.1}", r.trimmed_mean_ns),
            r.min_ns.to_string(),
            r.max_ns.to_string(),
            r.coalesced.to_string(),
            r.drops.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes [`results_csv`] to `path` via a temporary file and rename, so a
/// failure never leaves a partial file behind.
pub fn export_results(results: &[BenchResult], path: &Path) -> Result<(), BenchError> {
    if results.is_empty() {
        return Err(BenchError::EmptyInput);
    }
    let text = results_csv(results)?;
    write_atomic(path, text.as_bytes())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), BenchError> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        BenchError::io(path, e)
    })
}
