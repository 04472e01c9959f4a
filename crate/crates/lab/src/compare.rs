//! Network-free comparison of two directory trees of `.f32` maps.
//!
//! Files are matched by relative path; the file stem names the component.
//! `normals` and `mask` layers are geometry, not predictions, and are
//! ignored. Shadow maps are compared by magnitude so either sign
//! convention scores the same.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use shadingnet_core::metrics::{score, MetricReport, ReportBuilder};

use crate::error::{LabError, Result};
use crate::f32map;

const IGNORED: [&str; 2] = ["normals", "mask"];

fn collect(root: &Path, dir: &Path, out: &mut BTreeSet<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| LabError::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| LabError::io(dir, e))?.path();
        if path.is_dir() {
            collect(root, &path, out)?;
        } else if path.extension().is_some_and(|e| e == "f32") {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            if !IGNORED.contains(&stem) {
                out.insert(path.strip_prefix(root).expect("under root").to_path_buf());
            }
        }
    }
    Ok(())
}

/// Relative paths of every scored map under `root`, sorted.
pub fn map_files(root: &Path) -> Result<BTreeSet<PathBuf>> {
    let mut out = BTreeSet::new();
    collect(root, root, &mut out)?;
    Ok(out)
}

fn list(paths: &BTreeSet<&PathBuf>) -> String {
    paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
}

/// Scores every map under `pred_dir` against its namesake under `gt_dir`.
/// Images are grouped by parent directory.
pub fn compare_dirs(pred_dir: &Path, gt_dir: &Path) -> Result<MetricReport> {
    let pred = map_files(pred_dir)?;
    let gt = map_files(gt_dir)?;
    if pred != gt {
        let only_pred: BTreeSet<_> = pred.difference(&gt).collect();
        let only_gt: BTreeSet<_> = gt.difference(&pred).collect();
        return Err(LabError::Data(format!(
            "file sets differ; only in predictions: [{}]; only in ground truth: [{}]",
            list(&only_pred),
            list(&only_gt)
        )));
    }
    if pred.is_empty() {
        return Err(LabError::Data(format!("no .f32 maps under {}", gt_dir.display())));
    }
    let mut builder = ReportBuilder::new();
    let mut current: Option<PathBuf> = None;
    for rel in &pred {
        let parent = rel.parent().map(Path::to_path_buf).unwrap_or_default();
        if current.as_ref() != Some(&parent) {
            if current.is_some() {
                builder.finish_image();
            }
            current = Some(parent);
        }
        let component = rel.file_stem().and_then(|s| s.to_str()).expect("utf-8 stem");
        let mut p = f32map::read(&pred_dir.join(rel))?;
        let mut g = f32map::read(&gt_dir.join(rel))?;
        if component == "shadow" {
            p = p.map(f32::abs);
            g = g.map(f32::abs);
        }
        let s = score(&p, &g).map_err(|e| LabError::Data(format!("{}: {e}", rel.display())))?;
        builder.add(component, s);
    }
    builder.finish_image();
    Ok(builder.build())
}
