//! Detection metrics: recall at IoU thresholds under proposal budgets,
//! per-class recall, average precision with every-point interpolation, and
//! class-confusion counting.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::{iou, BBox, ScoredBox};
use crate::{Error, Result};

/// Which recall cells to compute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallSpec {
    /// IoU thresholds, ascending.
    pub iou_thresholds: Vec<f64>,
    /// Max proposals per image, ascending.
    pub budgets: Vec<usize>,
}

impl Default for RecallSpec {
    fn default() -> Self {
        Self { iou_thresholds: alloc::vec![0.5, 0.6, 0.7, 0.8, 0.9], budgets: alloc::vec![50, 300] }
    }
}

impl RecallSpec {
    pub fn validate(&self) -> Result<()> {
        if self.iou_thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) || self.iou_thresholds.is_empty() {
            return Err(Error::InvalidConfig { field: "iou_thresholds", message: "need thresholds in (0, 1]".into() });
        }
        if self.budgets.iter().any(|&b| b == 0) || self.budgets.is_empty() {
            return Err(Error::InvalidConfig { field: "budgets", message: "need budgets ≥ 1".into() });
        }
        Ok(())
    }
}

/// Recall matrices: `overall[b][t]` plus the same per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub budgets: Vec<usize>,
    pub thresholds: Vec<f64>,
    pub overall: Vec<Vec<f64>>,
    /// Keyed by class id; classes with zero ground truths are omitted.
    pub per_class: BTreeMap<usize, Vec<Vec<f64>>>,
    pub total_gts: usize,
}

impl RecallReport {
    /// Recall at a given (budget, threshold) cell.
    pub fn at(&self, budget: usize, thr: f64) -> Option<f64> {
        let bi = self.budgets.iter().position(|&b| b == budget)?;
        let ti = self.thresholds.iter().position(|&t| (t - thr).abs() < 1e-12)?;
        Some(self.overall[bi][ti])
    }

    pub fn class_at(&self, class_id: usize, budget: usize, thr: f64) -> Option<f64> {
        let bi = self.budgets.iter().position(|&b| b == budget)?;
        let ti = self.thresholds.iter().position(|&t| (t - thr).abs() < 1e-12)?;
        Some(self.per_class.get(&class_id)?[bi][ti])
    }
}

/// Computes recall over per-image proposal lists.
///
/// A ground truth counts as covered at `(budget, thr)` when any of the top
/// `budget` proposals (by descending score) reaches IoU ≥ `thr` with it.
pub fn recall_at(
    proposals: &[Vec<ScoredBox>],
    gts: &[Vec<(BBox, usize)>],
    spec: &RecallSpec,
) -> Result<RecallReport> {
    spec.validate()?;
    if proposals.len() != gts.len() {
        return Err(Error::Usage(alloc::format!(
            "proposal images ({}) and ground-truth images ({}) differ",
            proposals.len(),
            gts.len()
        )));
    }
    let total_gts: usize = gts.iter().map(|g| g.len()).sum();
    if total_gts == 0 {
        return Err(Error::UndefinedRecall);
    }

    let nb = spec.budgets.len();
    let nt = spec.iou_thresholds.len();
    let mut covered_overall = alloc::vec![alloc::vec![0usize; nt]; nb];
    let mut covered_class: BTreeMap<usize, Vec<Vec<usize>>> = BTreeMap::new();
    let mut gts_per_class: BTreeMap<usize, usize> = BTreeMap::new();

    for (props, img_gts) in proposals.iter().zip(gts.iter()) {
        let mut order: Vec<usize> = (0..props.len()).collect();
        order.sort_by(|&i, &j| props[j].score.total_cmp(&props[i].score).then(i.cmp(&j)));

        for (gt, class_id) in img_gts {
            *gts_per_class.entry(*class_id).or_insert(0) += 1;
            // best IoU within each prefix of the ranked proposals
            let mut prefix_best = Vec::with_capacity(order.len());
            let mut best = 0.0_f64;
            for &pi in &order {
                best = best.max(iou(gt, &props[pi].bbox));
                prefix_best.push(best);
            }
            let class_cov = covered_class
                .entry(*class_id)
                .or_insert_with(|| alloc::vec![alloc::vec![0usize; nt]; nb]);
            for (bi, &budget) in spec.budgets.iter().enumerate() {
                let upto = budget.min(prefix_best.len());
                if upto == 0 {
                    continue;
                }
                let best_b = prefix_best[upto - 1];
                for (ti, &thr) in spec.iou_thresholds.iter().enumerate() {
                    if best_b >= thr {
                        covered_overall[bi][ti] += 1;
                        class_cov[bi][ti] += 1;
                    }
                }
            }
        }
    }

    let overall = covered_overall
        .into_iter()
        .map(|row| row.into_iter().map(|c| c as f64 / total_gts as f64).collect())
        .collect();
    let per_class = covered_class
        .into_iter()
        .map(|(cid, rows)| {
            let n = gts_per_class[&cid] as f64;
            (cid, rows.into_iter().map(|row| row.into_iter().map(|c| c as f64 / n).collect()).collect())
        })
        .collect();
    Ok(RecallReport { budgets: spec.budgets.clone(), thresholds: spec.iou_thresholds.clone(), overall, per_class, total_gts })
}

/// Average precision for one class with every-point interpolation.
///
/// Detections are ranked by descending score (ties: image order, then
/// original index). Each detection is matched to the highest-IoU ground
/// truth of its class in its image (ties: lower ground-truth index); a match
/// below the IoU threshold, or to an already-claimed ground truth, is a
/// false positive. Returns `None` when the class has no ground truths.
pub fn average_precision(
    dets: &[Vec<ScoredBox>],
    gts: &[Vec<(BBox, usize)>],
    class_id: usize,
    iou_thr: f64,
) -> Option<f64> {
    let n_gt: usize = gts.iter().map(|g| g.iter().filter(|(_, c)| *c == class_id).count()).sum();
    if n_gt == 0 {
        return None;
    }

    // (score, image, index) for this class
    let mut ranked: Vec<(f64, usize, usize)> = Vec::new();
    for (img, img_dets) in dets.iter().enumerate() {
        for (di, d) in img_dets.iter().enumerate() {
            if d.class_id == Some(class_id) {
                ranked.push((d.score, img, di));
            }
        }
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut claimed: Vec<Vec<bool>> = gts.iter().map(|g| alloc::vec![false; g.len()]).collect();
    let mut tp_flags = Vec::with_capacity(ranked.len());
    for &(_, img, di) in &ranked {
        let dbox = &dets[img][di].bbox;
        let mut best = -1.0_f64;
        let mut best_gt = usize::MAX;
        for (gi, (gbox, c)) in gts[img].iter().enumerate() {
            if *c != class_id {
                continue;
            }
            let v = iou(dbox, gbox);
            if v > best {
                best = v;
                best_gt = gi;
            }
        }
        let tp = best_gt != usize::MAX && best >= iou_thr && !claimed[img][best_gt];
        if tp {
            claimed[img][best_gt] = true;
        }
        tp_flags.push(tp);
    }

    // precision at each rank, then integrate the max-interpolated PR curve
    let mut precisions = Vec::with_capacity(tp_flags.len());
    let mut tp_cum = 0usize;
    for (i, &tp) in tp_flags.iter().enumerate() {
        if tp {
            tp_cum += 1;
        }
        precisions.push(tp_cum as f64 / (i + 1) as f64);
    }
    let mut interp = precisions.clone();
    for i in (0..interp.len().saturating_sub(1)).rev() {
        interp[i] = interp[i].max(interp[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut tp_cum = 0usize;
    for (i, &tp) in tp_flags.iter().enumerate() {
        if tp {
            tp_cum += 1;
            let recall = tp_cum as f64 / n_gt as f64;
            ap += (recall - prev_recall) * interp[i];
            prev_recall = recall;
        }
    }
    Some(ap)
}

/// Class-confusion counts at an IoU threshold: entry `(i, j)` is the number
/// of detections labeled `j` whose best-IoU ground truth (at or above the
/// threshold) has class `i`. Unmatched detections are not counted.
pub fn confusion_counts(
    dets: &[Vec<ScoredBox>],
    gts: &[Vec<(BBox, usize)>],
    n_classes: usize,
    iou_thr: f64,
) -> Vec<Vec<usize>> {
    let mut matrix = alloc::vec![alloc::vec![0usize; n_classes]; n_classes];
    for (img_dets, img_gts) in dets.iter().zip(gts.iter()) {
        for d in img_dets {
            let Some(dc) = d.class_id else { continue };
            if dc >= n_classes {
                continue;
            }
            let mut best = -1.0_f64;
            let mut best_class = usize::MAX;
            for (gbox, gc) in img_gts {
                let v = iou(&d.bbox, gbox);
                if v > best {
                    best = v;
                    best_class = *gc;
                }
            }
            if best_class != usize::MAX && best >= iou_thr && best_class < n_classes {
                matrix[best_class][dc] += 1;
            }
        }
    }
    matrix
}

/// Detection-level aggregate: per-class AP, mAP over classes present in the
/// ground truth, and the confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEval {
    pub ap: BTreeMap<usize, f64>,
    /// Classes with zero ground truths, excluded from the mean.
    pub absent_classes: Vec<usize>,
    pub map: f64,
    pub confusion: Vec<Vec<usize>>,
}

pub fn evaluate_detections(
    dets: &[Vec<ScoredBox>],
    gts: &[Vec<(BBox, usize)>],
    n_classes: usize,
    iou_thr: f64,
) -> Result<DetectionEval> {
    let total_gts: usize = gts.iter().map(|g| g.len()).sum();
    if total_gts == 0 {
        return Err(Error::UndefinedRecall);
    }
    let mut ap = BTreeMap::new();
    let mut absent = Vec::new();
    for c in 0..n_classes {
        match average_precision(dets, gts, c, iou_thr) {
            Some(v) => {
                ap.insert(c, v);
            }
            None => absent.push(c),
        }
    }
    let map = if ap.is_empty() { 0.0 } else { ap.values().sum::<f64>() / ap.len() as f64 };
    let confusion = confusion_counts(dets, gts, n_classes, iou_thr);
    Ok(DetectionEval { ap, absent_classes: absent, map, confusion })
}

/// Run provenance attached to every report.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportMeta {
    pub config_hash: String,
    pub seed: u64,
    pub variant: String,
}

/// Serializable evaluation artifact: recall matrices and/or detection
/// metrics plus run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub recall: Option<RecallReport>,
    pub detection: Option<DetectionEval>,
    pub meta: ReportMeta,
}
