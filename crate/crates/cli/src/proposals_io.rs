//! Proposal dumps and external proposal files.
//!
//! The text format is one record per line: `image_id x1 y1 x2 y2 [score]`.
//! Cascade dumps append the two stage scores as extra columns; those files
//! are for ablation tooling and are not re-loadable as external sources.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};

use cascadet::geometry::ScoredBox;
use cascadet::proposer::ProposalSet;
use cascadet::synthdata::{parse_external_proposals, DetDataset};

/// Reads an external proposal file and returns per-image lists aligned with
/// the dataset order (images without records get empty lists).
pub fn load_external_proposals(path: &Path, dataset: &DetDataset) -> Result<Vec<Vec<ScoredBox>>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading proposals {}", path.display()))?;
    let ids: std::collections::BTreeSet<String> =
        (0..dataset.samples.len()).map(DetDataset::image_id).collect();
    let map = parse_external_proposals(&text, &ids).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    Ok((0..dataset.samples.len())
        .map(|i| map.get(&DetDataset::image_id(i)).cloned().unwrap_or_default())
        .collect())
}

/// Writes plain per-image proposals in the loadable 6-column format.
pub fn write_proposals(proposals: &[Vec<ScoredBox>], path: &Path) -> Result<()> {
    let mut out = String::new();
    for (i, list) in proposals.iter().enumerate() {
        let id = DetDataset::image_id(i);
        for p in list {
            writeln!(out, "{id} {} {} {} {} {}", p.bbox.x1, p.bbox.y1, p.bbox.x2, p.bbox.y2, p.score)?;
        }
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Writes a cascade proposal set with both stage scores as extra columns.
pub fn write_proposal_set(set: &ProposalSet, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (i, list) in set.per_image.iter().enumerate() {
        let id = DetDataset::image_id(i);
        for p in list {
            writeln!(
                out,
                "{id} {} {} {} {} {} {} {}",
                p.bbox.x1,
                p.bbox.y1,
                p.bbox.x2,
                p.bbox.y2,
                p.score,
                p.stage1,
                p.stage2.unwrap_or(f64::NAN)
            )?;
        }
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Writes final detections: `image_id class_id score x1 y1 x2 y2`.
pub fn write_detections(dets: &[Vec<ScoredBox>], path: &Path) -> Result<()> {
    let mut out = String::new();
    for (i, list) in dets.iter().enumerate() {
        let id = DetDataset::image_id(i);
        for d in list {
            let class = d.class_id.map(|c| c as i64).unwrap_or(-1);
            writeln!(out, "{id} {class} {} {} {} {} {}", d.score, d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2)?;
        }
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
