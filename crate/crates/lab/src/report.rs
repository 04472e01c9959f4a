//! `report.json` and `report.txt`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use shadingnet_core::metrics::MetricReport;

use crate::error::{LabError, Result};

pub const JSON_FILE: &str = "report.json";
pub const TEXT_FILE: &str = "report.txt";

/// Fixed-width table, one row per component.
pub fn table(report: &MetricReport) -> String {
    let mut s = String::new();
    writeln!(s, "{:<16} {:>12} {:>12} {:>12} {:>12} {:>12}", "component", "MSE", "SMSE", "LMSE", "LMSE-pooled", "DSSIM")
        .unwrap();
    for (name, c) in &report.components {
        writeln!(s, "{name:<16} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>12.6}", c.mse, c.smse, c.lmse, c.lmse_pooled, c.dssim)
            .unwrap();
    }
    if let Some(w) = report.whdr {
        writeln!(s, "WHDR {w:.6}").unwrap();
    }
    writeln!(s, "images {}", report.n_images).unwrap();
    s
}

/// Writes `value` as pretty JSON and `text` verbatim into `dir`.
pub fn write(dir: &Path, value: &impl Serialize, text: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let json = dir.join(JSON_FILE);
    fs::write(&json, serde_json::to_string_pretty(value).expect("report serializes") + "\n")
        .map_err(|e| LabError::io(&json, e))?;
    let txt = dir.join(TEXT_FILE);
    fs::write(&txt, text).map_err(|e| LabError::io(&txt, e))
}
