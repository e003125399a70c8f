//! IoU-threshold label assignment and balanced minibatch sampling.
//!
//! Boundary semantics are fixed: a candidate is positive when its best IoU is
//! at or above `pos_thr`, negative when strictly below `neg_thr`, and ignored
//! in between. `force_best_match` additionally promotes, for every ground
//! truth, the candidate with the highest IoU to it — without this, small
//! ground truths can end up with zero positive anchors and training stalls.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::{iou, BBox};
use crate::rngutil::{self, Rng};
use crate::{Error, Result};

/// Positive/negative IoU thresholds for one training stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingCriterion {
    pub pos_thr: f64,
    pub neg_thr: f64,
    pub force_best_match: bool,
}

impl SamplingCriterion {
    pub fn new(pos_thr: f64, neg_thr: f64, force_best_match: bool) -> Result<Self> {
        let crit = Self { pos_thr, neg_thr, force_best_match };
        crit.validate()?;
        Ok(crit)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.neg_thr)
            && (0.0..=1.0).contains(&self.pos_thr)
            && self.neg_thr <= self.pos_thr;
        if !ok {
            return Err(Error::InvalidConfig {
                field: "pos_thr/neg_thr",
                message: format!("need 0 ≤ neg_thr ≤ pos_thr ≤ 1, got {}/{}", self.pos_thr, self.neg_thr),
            });
        }
        Ok(())
    }
}

/// Per-candidate training label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    /// Matched; carries the index of the assigned ground truth.
    Positive(usize),
    Negative,
    Ignore,
}

/// The outcome of assigning candidates against ground truth.
#[derive(Debug, Clone)]
pub struct LabelAssignment {
    pub labels: Vec<Label>,
    /// Best IoU of each candidate over all ground truths.
    pub max_iou: Vec<f64>,
}

impl LabelAssignment {
    pub fn positives(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| matches!(l, Label::Positive(_)).then_some(i))
            .collect()
    }

    pub fn negatives(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| matches!(l, Label::Negative).then_some(i))
            .collect()
    }
}

/// Labels every candidate against the ground-truth set.
///
/// Positive candidates record the argmax ground-truth index (IoU ties go to
/// the lower ground-truth index). With `force_best_match`, the best candidate
/// for each ground truth is positive regardless of `pos_thr` (ties to the
/// lower candidate index). Empty ground truth makes every candidate negative.
pub fn assign_labels(candidates: &[BBox], gts: &[BBox], crit: &SamplingCriterion) -> Result<LabelAssignment> {
    crit.validate()?;
    let n = candidates.len();
    if gts.is_empty() {
        return Ok(LabelAssignment { labels: alloc::vec![Label::Negative; n], max_iou: alloc::vec![0.0; n] });
    }

    let mut labels = Vec::with_capacity(n);
    let mut max_iou = Vec::with_capacity(n);
    // best candidate per gt, for the forced-match pass
    let mut best_for_gt: Vec<(f64, usize)> = alloc::vec![(-1.0, 0); gts.len()];

    for (ci, cand) in candidates.iter().enumerate() {
        let mut best = 0.0_f64;
        let mut best_gt = 0usize;
        for (gi, gt) in gts.iter().enumerate() {
            let v = iou(cand, gt);
            if v > best {
                best = v;
                best_gt = gi;
            }
            if v > best_for_gt[gi].0 {
                best_for_gt[gi] = (v, ci);
            }
        }
        max_iou.push(best);
        labels.push(if best >= crit.pos_thr {
            Label::Positive(best_gt)
        } else if best < crit.neg_thr {
            Label::Negative
        } else {
            Label::Ignore
        });
    }

    if crit.force_best_match {
        for (gi, &(v, ci)) in best_for_gt.iter().enumerate() {
            if v > 0.0 && !matches!(labels[ci], Label::Positive(_)) {
                labels[ci] = Label::Positive(gi);
            }
        }
    }

    Ok(LabelAssignment { labels, max_iou })
}

/// Samples a balanced minibatch of candidate indices.
///
/// Up to `round(batch_size · pos_fraction)` positives are drawn uniformly
/// without replacement; negatives fill the remainder (and the gap when
/// positives run short). Ignored candidates are never sampled.
pub fn sample_minibatch(
    assign: &LabelAssignment,
    batch_size: usize,
    pos_fraction: f64,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig { field: "batch_size", message: "must be ≥ 1".into() });
    }
    if !(pos_fraction > 0.0 && pos_fraction < 1.0) {
        return Err(Error::InvalidConfig {
            field: "pos_fraction",
            message: format!("must be in (0, 1), got {pos_fraction}"),
        });
    }
    let positives = assign.positives();
    let negatives = assign.negatives();
    if positives.is_empty() && negatives.is_empty() {
        return Err(Error::EmptyBatch);
    }

    let want_pos = crate::fmath::round(batch_size as f64 * pos_fraction) as usize;
    let n_pos = want_pos.min(positives.len());
    let n_neg = (batch_size - n_pos).min(negatives.len());

    let mut batch = Vec::with_capacity(n_pos + n_neg);
    for k in rngutil::sample_without_replacement(rng, positives.len(), n_pos) {
        batch.push(positives[k]);
    }
    for k in rngutil::sample_without_replacement(rng, negatives.len(), n_neg) {
        batch.push(negatives[k]);
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rngutil::rng_from_seed;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    /// Builds a candidate with a chosen IoU against the unit-ish gt (0,0,10,10)
    /// by shifting a copy horizontally. iou = (10−d)/(10+d) ⇒ d = 10(1−t)/(1+t).
    fn shifted_for_iou(t: f64) -> BBox {
        let d = 10.0 * (1.0 - t) / (1.0 + t);
        bx(d, 0.0, 10.0 + d, 10.0)
    }

    #[test]
    fn threshold_bands() {
        let gt = [bx(0.0, 0.0, 10.0, 10.0)];
        let crit = SamplingCriterion::new(0.7, 0.3, false).unwrap();
        let cands = [shifted_for_iou(0.8), shifted_for_iou(0.2), shifted_for_iou(0.5)];
        let a = assign_labels(&cands, &gt, &crit).unwrap();
        assert_eq!(a.labels[0], Label::Positive(0));
        assert_eq!(a.labels[1], Label::Negative);
        assert_eq!(a.labels[2], Label::Ignore);
    }

    /// Bottom strip of the gt (0,0,10,10) with height h has IoU exactly h/10.
    fn strip_for_iou(tenths: f64) -> BBox {
        bx(0.0, 0.0, 10.0, tenths * 10.0)
    }

    #[test]
    fn equal_thresholds_leave_no_ignore_band() {
        let gt = [bx(0.0, 0.0, 10.0, 10.0)];
        let crit = SamplingCriterion::new(0.5, 0.5, false).unwrap();
        for t in [0.1, 0.3, 0.49, 0.51, 0.9] {
            let a = assign_labels(&[strip_for_iou(t)], &gt, &crit).unwrap();
            assert_ne!(a.labels[0], Label::Ignore, "iou {t}");
        }
        // exactly at the threshold counts as positive ("above" read as ≥)
        let a = assign_labels(&[strip_for_iou(0.5)], &gt, &crit).unwrap();
        assert_eq!(a.labels[0], Label::Positive(0));
    }

    #[test]
    fn boundary_semantics_at_neg_thr() {
        let gt = [bx(0.0, 0.0, 10.0, 10.0)];
        let crit = SamplingCriterion::new(0.7, 0.3, false).unwrap();
        let a = assign_labels(&[strip_for_iou(0.3)], &gt, &crit).unwrap();
        // exactly neg_thr is not "below" it: ignore
        assert_eq!(a.labels[0], Label::Ignore);
    }

    #[test]
    fn empty_gt_means_all_negative() {
        let crit = SamplingCriterion::new(0.7, 0.3, true).unwrap();
        let a = assign_labels(&[bx(0.0, 0.0, 5.0, 5.0)], &[], &crit).unwrap();
        assert_eq!(a.labels, alloc::vec![Label::Negative]);
    }

    #[test]
    fn forced_best_match_promotes_low_iou_candidate() {
        let gt = [bx(0.0, 0.0, 10.0, 10.0)];
        let crit = SamplingCriterion::new(0.7, 0.3, true).unwrap();
        let cands = [shifted_for_iou(0.4), shifted_for_iou(0.2)];
        let a = assign_labels(&cands, &gt, &crit).unwrap();
        assert_eq!(a.labels[0], Label::Positive(0));
        assert_eq!(a.labels[1], Label::Negative);
    }

    #[test]
    fn positive_records_argmax_gt() {
        let gts = [bx(0.0, 0.0, 10.0, 10.0), bx(2.0, 0.0, 12.0, 10.0)];
        let crit = SamplingCriterion::new(0.7, 0.3, false).unwrap();
        let a = assign_labels(&[bx(2.0, 0.0, 12.0, 10.0)], &gts, &crit).unwrap();
        assert_eq!(a.labels[0], Label::Positive(1));
    }

    #[test]
    fn minibatch_counts_match_formula() {
        let gt = [bx(0.0, 0.0, 10.0, 10.0)];
        let crit = SamplingCriterion::new(0.7, 0.3, false).unwrap();
        let mut cands = Vec::new();
        for _ in 0..10 {
            cands.push(shifted_for_iou(0.9));
        }
        for _ in 0..100 {
            cands.push(shifted_for_iou(0.05));
        }
        let a = assign_labels(&cands, &gt, &crit).unwrap();
        let mut rng = rng_from_seed(42);
        let batch = sample_minibatch(&a, 8, 0.25, &mut rng).unwrap();
        assert_eq!(batch.len(), 8);
        let n_pos = batch.iter().filter(|&&i| i < 10).count();
        assert_eq!(n_pos, 2);
    }

    #[test]
    fn minibatch_all_negative_fallback() {
        let gt = [bx(0.0, 0.0, 10.0, 10.0)];
        let crit = SamplingCriterion::new(0.7, 0.3, false).unwrap();
        let cands: Vec<BBox> = (0..20).map(|_| shifted_for_iou(0.05)).collect();
        let a = assign_labels(&cands, &gt, &crit).unwrap();
        let mut rng = rng_from_seed(42);
        let batch = sample_minibatch(&a, 8, 0.25, &mut rng).unwrap();
        assert_eq!(batch.len(), 8);
    }

    #[test]
    fn minibatch_is_deterministic() {
        let gt = [bx(0.0, 0.0, 10.0, 10.0)];
        let crit = SamplingCriterion::new(0.7, 0.3, false).unwrap();
        let cands: Vec<BBox> = (0..50).map(|i| shifted_for_iou(0.02 + 0.018 * i as f64)).collect();
        let a = assign_labels(&cands, &gt, &crit).unwrap();
        let b1 = sample_minibatch(&a, 16, 0.5, &mut rng_from_seed(42)).unwrap();
        let b2 = sample_minibatch(&a, 16, 0.5, &mut rng_from_seed(42)).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn minibatch_never_samples_ignores() {
        let gt = [bx(0.0, 0.0, 10.0, 10.0)];
        let crit = SamplingCriterion::new(0.7, 0.3, false).unwrap();
        // only ignores and positives
        let cands = [shifted_for_iou(0.5), shifted_for_iou(0.55), shifted_for_iou(0.9)];
        let a = assign_labels(&cands, &gt, &crit).unwrap();
        let batch = sample_minibatch(&a, 4, 0.5, &mut rng_from_seed(1)).unwrap();
        assert_eq!(batch, alloc::vec![2]);
    }

    #[test]
    fn all_ignored_is_empty_batch_error() {
        let gt = [bx(0.0, 0.0, 10.0, 10.0)];
        let crit = SamplingCriterion::new(0.7, 0.3, false).unwrap();
        let cands = [shifted_for_iou(0.5)];
        let a = assign_labels(&cands, &gt, &crit).unwrap();
        assert!(matches!(sample_minibatch(&a, 4, 0.5, &mut rng_from_seed(1)), Err(Error::EmptyBatch)));
    }
}
