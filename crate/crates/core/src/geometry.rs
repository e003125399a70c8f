//! Exact box arithmetic: IoU, non-maximum suppression, regression target
//! encoding/decoding and clipping.
//!
//! Coordinates are continuous (no "+1" pixel legacy): a box is the rectangle
//! `[x1, x2] × [y1, y2]` and its area is `(x2－x1)·(y2－y1)`. Zero-area boxes
//! are permitted; negative extents are rejected at construction.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::fmath;
use crate::{Error, Result};

/// Axis-aligned rectangle in continuous image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    /// Builds a box, rejecting negative extents and non-finite coordinates.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let finite = x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite();
        if !finite || x2 < x1 || y2 < y1 {
            return Err(Error::InvalidBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Box from center and size. Width and height must be non-negative.
    pub fn from_center_size(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    /// Intersection area with another box.
    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }
}

/// A box with a confidence score and an optional category index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub score: f64,
    pub class_id: Option<usize>,
}

impl ScoredBox {
    pub fn new(bbox: BBox, score: f64) -> Self {
        Self { bbox, score, class_id: None }
    }

    pub fn with_class(bbox: BBox, score: f64, class_id: usize) -> Self {
        Self { bbox, score, class_id: Some(class_id) }
    }
}

/// Normalized center offsets and log-scale size ratios mapping one box onto
/// another.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionTarget {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

impl RegressionTarget {
    pub const ZERO: RegressionTarget = RegressionTarget { tx: 0.0, ty: 0.0, tw: 0.0, th: 0.0 };

    pub fn new(tx: f64, ty: f64, tw: f64, th: f64) -> Self {
        Self { tx, ty, tw, th }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.tx, self.ty, self.tw, self.th]
    }

    pub fn from_array(t: [f64; 4]) -> Self {
        Self { tx: t[0], ty: t[1], tw: t[2], th: t[3] }
    }

    pub fn is_finite(&self) -> bool {
        self.tx.is_finite() && self.ty.is_finite() && self.tw.is_finite() && self.th.is_finite()
    }
}

/// Intersection over union. Total on valid boxes; 0 when the union has zero
/// area (two zero-area boxes).
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Batched IoU: entry `(i, j)` equals `iou(as[i], bs[j])`.
pub fn iou_matrix(a: &[BBox], b: &[BBox]) -> Vec<Vec<f64>> {
    a.iter().map(|ai| b.iter().map(|bj| iou(ai, bj)).collect()).collect()
}

/// Greedy non-maximum suppression.
///
/// Keeps the highest-scoring box and suppresses any remaining box with IoU
/// strictly above `iou_thr` to a kept box. Score ties break toward the lower
/// original index. Returns kept indices in descending score order.
pub fn nms(dets: &[ScoredBox], iou_thr: f64) -> Result<Vec<usize>> {
    for d in dets {
        if !d.score.is_finite() {
            return Err(Error::InvalidScore(d.score));
        }
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| dets[j].score.total_cmp(&dets[i].score).then(i.cmp(&j)));

    let mut kept: Vec<usize> = Vec::new();
    let mut suppressed = vec![false; dets.len()];
    for &i in &order {
        if suppressed[i] {
            continue;
        }
        kept.push(i);
        for &j in &order {
            if !suppressed[j] && j != i && iou(&dets[i].bbox, &dets[j].bbox) > iou_thr {
                suppressed[j] = true;
            }
        }
    }
    Ok(kept)
}

/// Encodes the transform that maps `proposal` onto `gt` in center/size form:
/// `tx=(gcx−pcx)/pw`, `ty=(gcy−pcy)/ph`, `tw=ln(gw/pw)`, `th=ln(gh/ph)`.
///
/// Zero-size proposals and ground truths are rejected rather than clamped so
/// data bugs surface instead of hiding.
pub fn encode(proposal: &BBox, gt: &BBox) -> Result<RegressionTarget> {
    let (pw, ph) = (proposal.width(), proposal.height());
    if pw <= 0.0 || ph <= 0.0 {
        return Err(Error::DegenerateBox { what: "regression proposal" });
    }
    let (gw, gh) = (gt.width(), gt.height());
    if gw <= 0.0 || gh <= 0.0 {
        return Err(Error::DegenerateBox { what: "regression ground truth" });
    }
    let (pcx, pcy) = proposal.center();
    let (gcx, gcy) = gt.center();
    Ok(RegressionTarget {
        tx: (gcx - pcx) / pw,
        ty: (gcy - pcy) / ph,
        tw: fmath::ln(gw / pw),
        th: fmath::ln(gh / ph),
    })
}

/// Exact inverse of [`encode`]. Output may exceed image bounds; the caller
/// clips.
pub fn decode(proposal: &BBox, t: &RegressionTarget) -> Result<BBox> {
    let (pw, ph) = (proposal.width(), proposal.height());
    if pw <= 0.0 || ph <= 0.0 {
        return Err(Error::DegenerateBox { what: "regression proposal" });
    }
    if !t.is_finite() {
        return Err(Error::NumericRange("regression target"));
    }
    let (pcx, pcy) = proposal.center();
    let cx = pcx + t.tx * pw;
    let cy = pcy + t.ty * ph;
    let w = fmath::exp(t.tw) * pw;
    let h = fmath::exp(t.th) * ph;
    if !(cx.is_finite() && cy.is_finite() && w.is_finite() && h.is_finite()) {
        return Err(Error::NumericRange("decoded box"));
    }
    BBox::from_center_size(cx, cy, w, h)
}

/// Clamps a box to `[0, width] × [0, height]`. Ordering is preserved.
pub fn clip_to_image(b: &BBox, width: f64, height: f64) -> BBox {
    let x1 = b.x1.clamp(0.0, width);
    let y1 = b.y1.clamp(0.0, height);
    let x2 = b.x2.clamp(0.0, width);
    let y2 = b.y2.clamp(0.0, height);
    BBox { x1, y1, x2, y2 }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn rejects_negative_extents() {
        assert!(BBox::new(5.0, 0.0, 4.0, 10.0).is_err());
        assert!(BBox::new(0.0, 5.0, 10.0, 4.0).is_err());
        assert!(BBox::new(0.0, f64::NAN, 1.0, 1.0).is_err());
        // zero-area boxes are fine
        assert_eq!(bx(3.0, 3.0, 3.0, 3.0).area(), 0.0);
    }

    #[test]
    fn iou_identical_and_disjoint() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        let b = bx(20.0, 20.0, 30.0, 30.0);
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn iou_partial_overlap() {
        // intersection 5×5 = 25, union 100+100−25 = 175
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let b = bx(5.0, 5.0, 15.0, 15.0);
        let expected = 25.0 / 175.0;
        assert!((iou(&a, &b) - expected).abs() < 1e-15);
        assert!((iou(&b, &a) - expected).abs() < 1e-15);
    }

    #[test]
    fn iou_of_zero_area_boxes_is_zero() {
        let a = bx(1.0, 1.0, 1.0, 1.0);
        assert_eq!(iou(&a, &a), 0.0);
    }

    #[test]
    fn iou_matrix_matches_scalar() {
        let a = bx(0.0, 0.0, 4.0, 4.0);
        let empty: Vec<BBox> = Vec::new();
        let m = iou_matrix(&empty, &[a]);
        assert!(m.is_empty());
        let m = iou_matrix(&[a], &[a]);
        assert_eq!(m, vec![vec![1.0]]);
    }

    #[test]
    fn nms_single_box() {
        let dets = [ScoredBox::new(bx(0.0, 0.0, 5.0, 5.0), 0.7)];
        assert_eq!(nms(&dets, 0.5).unwrap(), vec![0]);
    }

    #[test]
    fn nms_suppresses_duplicate() {
        let dets = [
            ScoredBox::new(bx(0.0, 0.0, 5.0, 5.0), 0.8),
            ScoredBox::new(bx(0.0, 0.0, 5.0, 5.0), 0.9),
        ];
        assert_eq!(nms(&dets, 0.5).unwrap(), vec![1]);
    }

    #[test]
    fn nms_tie_breaks_to_lower_index() {
        let dets = [
            ScoredBox::new(bx(0.0, 0.0, 5.0, 5.0), 0.9),
            ScoredBox::new(bx(0.0, 0.0, 5.0, 5.0), 0.9),
        ];
        assert_eq!(nms(&dets, 0.5).unwrap(), vec![0]);
    }

    #[test]
    fn nms_threshold_one_keeps_everything() {
        let dets = [
            ScoredBox::new(bx(0.0, 0.0, 5.0, 5.0), 0.9),
            ScoredBox::new(bx(0.0, 0.0, 5.0, 5.0), 0.1),
            ScoredBox::new(bx(1.0, 1.0, 6.0, 6.0), 0.5),
        ];
        assert_eq!(nms(&dets, 1.0).unwrap(), vec![0, 2, 1]);
    }

    #[test]
    fn nms_rejects_non_finite_score() {
        let dets = [ScoredBox::new(bx(0.0, 0.0, 5.0, 5.0), f64::NAN)];
        assert!(matches!(nms(&dets, 0.5), Err(Error::InvalidScore(_))));
    }

    #[test]
    fn encode_identity() {
        let b = bx(2.0, 3.0, 12.0, 9.0);
        let t = encode(&b, &b).unwrap();
        assert_eq!(t.as_array(), [0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn encode_known_offsets() {
        // centers (5,5) → (10,5): tx = 5/10; widths 10 → 20: tw = ln 2
        let p = bx(0.0, 0.0, 10.0, 10.0);
        let g = bx(0.0, 0.0, 20.0, 10.0);
        let t = encode(&p, &g).unwrap();
        assert!((t.tx - 0.5).abs() < 1e-15);
        assert_eq!(t.ty, 0.0);
        assert!((t.tw - core::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(t.th, 0.0);
    }

    #[test]
    fn encode_rejects_degenerate() {
        let p = bx(0.0, 0.0, 10.0, 10.0);
        let flat = bx(0.0, 0.0, 10.0, 0.0);
        assert!(matches!(encode(&flat, &p), Err(Error::DegenerateBox { .. })));
        assert!(matches!(encode(&p, &flat), Err(Error::DegenerateBox { .. })));
    }

    #[test]
    fn decode_inverts_encode() {
        let p = bx(0.0, 0.0, 10.0, 10.0);
        let g = bx(0.0, 0.0, 20.0, 10.0);
        let d = decode(&p, &encode(&p, &g).unwrap()).unwrap();
        assert!((d.x1 - g.x1).abs() < 1e-9);
        assert!((d.y1 - g.y1).abs() < 1e-9);
        assert!((d.x2 - g.x2).abs() < 1e-9);
        assert!((d.y2 - g.y2).abs() < 1e-9);
    }

    #[test]
    fn decode_zero_target_is_identity() {
        let p = bx(1.0, 2.0, 7.0, 11.0);
        assert_eq!(decode(&p, &RegressionTarget::ZERO).unwrap(), p);
    }

    #[test]
    fn decode_overflow_is_an_error() {
        let p = bx(0.0, 0.0, 10.0, 10.0);
        let t = RegressionTarget::new(0.0, 0.0, 1e4, 0.0);
        assert!(matches!(decode(&p, &t), Err(Error::NumericRange(_))));
        let t = RegressionTarget::new(f64::NAN, 0.0, 0.0, 0.0);
        assert!(matches!(decode(&p, &t), Err(Error::NumericRange(_))));
    }

    #[test]
    fn clip_clamps_and_preserves_order() {
        let b = bx(-5.0, -5.0, 5.0, 5.0);
        assert_eq!(clip_to_image(&b, 10.0, 10.0), bx(0.0, 0.0, 5.0, 5.0));
        let inside = bx(2.0, 2.0, 8.0, 8.0);
        assert_eq!(clip_to_image(&inside, 10.0, 10.0), inside);
        let b = bx(8.0, 8.0, 20.0, 20.0);
        assert_eq!(clip_to_image(&b, 10.0, 10.0), bx(8.0, 8.0, 10.0, 10.0));
        // fully outside collapses to a zero-area box on the border
        let b = bx(12.0, 12.0, 20.0, 20.0);
        assert_eq!(clip_to_image(&b, 10.0, 10.0), bx(10.0, 10.0, 10.0, 10.0));
    }
}
