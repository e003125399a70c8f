//! Deterministic CSV and JSON renderings of evaluation reports.
//!
//! The CSV mirrors the shapes of the usual proposal/detection tables: a
//! recall-versus-IoU matrix with one row per budget, a per-class recall
//! table at the headline operating point (largest budget, lowest IoU
//! threshold), per-class AP plus mAP, and the confusion matrix.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Result};

use cascadet::eval::EvalReport;

/// Renders a report in the named format ("csv" or "json"). Identical
/// reports render byte-identically.
pub fn render_report(report: &EvalReport, format: &str) -> Result<String> {
    match format {
        "json" => {
            let mut s = serde_json::to_string_pretty(report)?;
            s.push('\n');
            Ok(s)
        }
        "csv" => render_csv(report),
        other => bail!("unknown report format `{other}` (expected csv or json)"),
    }
}

fn render_csv(report: &EvalReport) -> Result<String> {
    let mut out = String::new();
    writeln!(out, "# variant,{}", report.meta.variant)?;
    writeln!(out, "# config_hash,{}", report.meta.config_hash)?;
    writeln!(out, "# seed,{}", report.meta.seed)?;

    if let Some(recall) = &report.recall {
        writeln!(out, "\n[recall]")?;
        write!(out, "budget")?;
        for t in &recall.thresholds {
            write!(out, ",iou{t}")?;
        }
        writeln!(out)?;
        for (bi, b) in recall.budgets.iter().enumerate() {
            write!(out, "{b}")?;
            for v in &recall.overall[bi] {
                write!(out, ",{v:.6}")?;
            }
            writeln!(out)?;
        }

        let headline_budget = recall.budgets.len() - 1;
        let headline_thr = 0usize;
        writeln!(out, "\n[per_class_recall]")?;
        writeln!(
            out,
            "class,name,recall_iou{}_budget{}",
            recall.thresholds[headline_thr], recall.budgets[headline_budget]
        )?;
        for (cid, rows) in &recall.per_class {
            let name = report.class_names.get(*cid).map(String::as_str).unwrap_or("?");
            writeln!(out, "{cid},{name},{:.6}", rows[headline_budget][headline_thr])?;
        }
    }

    if let Some(det) = &report.detection {
        writeln!(out, "\n[detection]")?;
        writeln!(out, "class,name,ap")?;
        for (cid, ap) in &det.ap {
            let name = report.class_names.get(*cid).map(String::as_str).unwrap_or("?");
            writeln!(out, "{cid},{name},{ap:.6}")?;
        }
        writeln!(out, "map,,{:.6}", det.map)?;
        if !det.absent_classes.is_empty() {
            writeln!(out, "# absent_classes,{:?}", det.absent_classes)?;
        }

        writeln!(out, "\n[confusion]")?;
        write!(out, "gt\\det")?;
        for (c, _) in det.confusion.iter().enumerate() {
            write!(out, ",{c}")?;
        }
        writeln!(out)?;
        for (gi, row) in det.confusion.iter().enumerate() {
            write!(out, "{gi}")?;
            for v in row {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(out)
}

/// Writes both renderings next to each other: `<stem>.csv` and `<stem>.json`.
pub fn write_report(report: &EvalReport, dir: &Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{stem}.csv")), render_report(report, "csv")?)?;
    std::fs::write(dir.join(format!("{stem}.json")), render_report(report, "json")?)?;
    Ok(())
}

/// Loss curves as CSV, one row per epoch.
pub fn write_loss_csv(curve: &[f64], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = String::from("epoch,mean_loss\n");
    for (i, v) in curve.iter().enumerate() {
        writeln!(out, "{i},{v:.8}")?;
    }
    std::fs::write(path, out)?;
    Ok(())
}
