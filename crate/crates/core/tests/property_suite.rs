//! Property tests for the spec-level invariants of geometry, sampling and
//! recall evaluation.

use proptest::prelude::*;

use cascadet::eval::{recall_at, RecallSpec};
use cascadet::geometry::{clip_to_image, decode, encode, iou, nms, BBox, ScoredBox};
use cascadet::sampling::{assign_labels, Label, SamplingCriterion};

fn arb_box() -> impl Strategy<Value = BBox> {
    (0.0..9000.0f64, 0.0..9000.0f64, 0.01..900.0f64, 0.01..900.0f64)
        .prop_map(|(x1, y1, w, h)| BBox::new(x1, y1, x1 + w, y1 + h).unwrap())
}

fn arb_scored_boxes(n: usize) -> impl Strategy<Value = Vec<ScoredBox>> {
    proptest::collection::vec((arb_box(), 0.0..1.0f64), 1..n)
        .prop_map(|v| v.into_iter().map(|(b, s)| ScoredBox::new(b, s)).collect())
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
        let ab = iou(&a, &b);
        let ba = iou(&b, &a);
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn iou_self_is_one_and_translated_disjoint_is_zero(a in arb_box()) {
        prop_assert_eq!(iou(&a, &a), 1.0);
        let w = a.width().max(1.0);
        let shifted = BBox::new(a.x1 + 2.0 * w + 1.0, a.y1, a.x2 + 2.0 * w + 1.0, a.y2).unwrap();
        prop_assert_eq!(iou(&a, &shifted), 0.0);
    }

    #[test]
    fn nms_output_is_an_antichain(dets in arb_scored_boxes(40), thr in 0.0..1.0f64) {
        let kept = nms(&dets, thr).unwrap();
        for (i, &a) in kept.iter().enumerate() {
            for &b in &kept[..i] {
                prop_assert!(iou(&dets[a].bbox, &dets[b].bbox) <= thr);
            }
        }
        // scores descend along the kept order
        for w in kept.windows(2) {
            prop_assert!(dets[w[0]].score >= dets[w[1]].score);
        }
    }

    #[test]
    fn nms_at_one_keeps_everything(dets in arb_scored_boxes(30)) {
        let kept = nms(&dets, 1.0).unwrap();
        prop_assert_eq!(kept.len(), dets.len());
    }

    #[test]
    fn nms_of_identical_boxes_keeps_one(b in arb_box(), n in 1usize..10) {
        let dets: Vec<ScoredBox> = (0..n).map(|i| ScoredBox::new(b, 0.5 + 0.01 * i as f64)).collect();
        prop_assert_eq!(nms(&dets, 0.99).unwrap().len(), 1);
    }

    #[test]
    fn decode_inverts_encode_within_1e9(p in arb_box(), g in arb_box()) {
        let t = encode(&p, &g).unwrap();
        let d = decode(&p, &t).unwrap();
        for (a, b) in [(d.x1, g.x1), (d.y1, g.y1), (d.x2, g.x2), (d.y2, g.y2)] {
            prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn clip_preserves_ordering(b in arb_box(), w in 1.0..500.0f64, h in 1.0..500.0f64) {
        let c = clip_to_image(&b, w, h);
        prop_assert!(c.x1 <= c.x2 && c.y1 <= c.y2);
        prop_assert!(c.x1 >= 0.0 && c.y1 >= 0.0 && c.x2 <= w && c.y2 <= h);
    }

    #[test]
    fn labels_partition_and_thresholds_are_monotone(
        seed in 0u64..1000,
        pos_a in 0.3..0.9f64,
        neg in 0.0..0.3f64,
    ) {
        let mut rng = cascadet::rngutil::rng_from_seed(seed);
        let gts: Vec<BBox> = (0..3)
            .map(|_| {
                let x = cascadet::rngutil::uniform_in(&mut rng, 0.0, 40.0);
                let y = cascadet::rngutil::uniform_in(&mut rng, 0.0, 40.0);
                BBox::new(x, y, x + 10.0, y + 10.0).unwrap()
            })
            .collect();
        let cands: Vec<BBox> = (0..30)
            .map(|_| {
                let x = cascadet::rngutil::uniform_in(&mut rng, 0.0, 45.0);
                let y = cascadet::rngutil::uniform_in(&mut rng, 0.0, 45.0);
                let w = cascadet::rngutil::uniform_in(&mut rng, 4.0, 14.0);
                BBox::new(x, y, x + w, y + w).unwrap()
            })
            .collect();

        let lo = SamplingCriterion { pos_thr: pos_a, neg_thr: neg, force_best_match: false };
        let hi = SamplingCriterion { pos_thr: (pos_a + 0.05).min(1.0), neg_thr: neg, force_best_match: false };
        let a = assign_labels(&cands, &gts, &lo).unwrap();
        let b = assign_labels(&cands, &gts, &hi).unwrap();
        for (la, lb) in a.labels.iter().zip(b.labels.iter()) {
            // every candidate gets exactly one label by construction; raising
            // pos_thr can only demote positives, never create them
            if matches!(la, Label::Negative) {
                prop_assert!(!matches!(lb, Label::Positive(_)));
            }
            if matches!(lb, Label::Positive(_)) {
                prop_assert!(matches!(la, Label::Positive(_)));
            }
        }
        // lowering neg_thr never converts a positive into a negative
        let lower_neg = SamplingCriterion { pos_thr: pos_a, neg_thr: neg * 0.5, force_best_match: false };
        let c = assign_labels(&cands, &gts, &lower_neg).unwrap();
        for (la, lc) in a.labels.iter().zip(c.labels.iter()) {
            if matches!(la, Label::Positive(_)) {
                prop_assert!(matches!(lc, Label::Positive(_)));
            }
        }
    }

    #[test]
    fn recall_is_monotone_in_budget_and_threshold(seed in 0u64..500) {
        let mut rng = cascadet::rngutil::rng_from_seed(seed);
        let gts: Vec<Vec<(BBox, usize)>> = (0..3)
            .map(|_| {
                (0..2)
                    .map(|_| {
                        let x = cascadet::rngutil::uniform_in(&mut rng, 0.0, 40.0);
                        (BBox::new(x, x, x + 12.0, x + 12.0).unwrap(), 0usize)
                    })
                    .collect()
            })
            .collect();
        let props: Vec<Vec<ScoredBox>> = gts
            .iter()
            .map(|g| {
                let mut v = Vec::new();
                for (b, _) in g {
                    for k in 0..4 {
                        let jitter = cascadet::rngutil::uniform_in(&mut rng, -4.0, 4.0);
                        let bb = BBox::new(
                            (b.x1 + jitter).max(0.0),
                            b.y1,
                            (b.x2 + jitter).max(1.0),
                            b.y2,
                        )
                        .unwrap();
                        v.push(ScoredBox::new(bb, 0.9 - 0.1 * k as f64));
                    }
                }
                v
            })
            .collect();
        let spec = RecallSpec { iou_thresholds: vec![0.3, 0.5, 0.7, 0.9], budgets: vec![1, 3, 8] };
        let r = recall_at(&props, &gts, &spec).unwrap();
        // rows: larger budget never lowers recall
        for t in 0..spec.iou_thresholds.len() {
            for b in 1..spec.budgets.len() {
                prop_assert!(r.overall[b][t] >= r.overall[b - 1][t]);
            }
        }
        // columns: stricter IoU never raises recall
        for b in 0..spec.budgets.len() {
            for t in 1..spec.iou_thresholds.len() {
                prop_assert!(r.overall[b][t] <= r.overall[b][t - 1]);
            }
        }
    }
}
