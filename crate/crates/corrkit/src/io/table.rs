//! Plot-ready CSV emission. Floats print in Rust's shortest roundtrip
//! form, so identical numbers always produce identical bytes, and a `#`
//! header line ties each table back to its config and dataset.

use std::fmt::Write as _;
use std::path::Path;

use corrkit_core::inference::PosteriorMap;

use crate::error::Result;
use crate::io::atomic::write_atomic;

/// `# config <hash> dataset <hash>` provenance comment.
pub fn provenance_line(config_hash: &str, dataset_sha256: &str) -> String {
    format!("# config {config_hash} dataset {dataset_sha256}\n")
}

/// Posterior over the goal grid: `x,y,probability` rows in cell order.
pub fn posterior_csv(map: &PosteriorMap, provenance: &str) -> String {
    let mut out = String::from(provenance);
    out.push_str("x,y,probability\n");
    for (i, p) in map.probs.iter().enumerate() {
        let pos = map.grid.position(i);
        let _ = writeln!(out, "{},{},{}", pos.x, pos.y, p);
    }
    out
}

/// Long-format metrics table: `metric,set,model,split,value`.
pub struct MetricsTable {
    rows: Vec<(String, String, String, String, f64)>,
}

impl MetricsTable {
    pub fn new() -> Self {
        MetricsTable { rows: Vec::new() }
    }

    pub fn push(&mut self, metric: &str, set: f64, model: &str, split: impl ToString, value: f64) {
        self.rows.push((
            metric.to_string(),
            format!("{set}"),
            model.to_string(),
            split.to_string(),
            value,
        ));
    }

    pub fn to_csv(&self, provenance: &str) -> String {
        let mut out = String::from(provenance);
        out.push_str("metric,set,model,split,value\n");
        for (metric, set, model, split, value) in &self.rows {
            let _ = writeln!(out, "{metric},{set},{model},{split},{value}");
        }
        out
    }
}

impl Default for MetricsTable {
    fn default() -> Self {
        Self::new()
    }
}

/// Two-column numeric CSV (ablation deltas, alpha sweeps).
pub fn pairs_csv(header: (&str, &str), rows: &[(f64, f64)], provenance: &str) -> String {
    let mut out = String::from(provenance);
    let _ = writeln!(out, "{},{}", header.0, header.1);
    for (a, b) in rows {
        let _ = writeln!(out, "{a},{b}");
    }
    out
}

pub fn write_csv(path: &Path, csv: &str) -> Result<()> {
    write_atomic(path, csv.as_bytes())
}
