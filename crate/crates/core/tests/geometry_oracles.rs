//! Oracle equivalence for the box arithmetic: IoU against a fine-grid
//! counting oracle and an independently written scalar formula, NMS against a
//! quadratic reference, and the encode/decode round trip.

use cascadet::geometry::{decode, encode, iou, iou_matrix, nms, BBox, ScoredBox};
use cascadet::rngutil::{rng_from_seed, uniform_in, Rng};

fn snap(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Random box with sides in [0.5, 8] inside [0, 10]², snapped to the
/// 0.01 grid so the counting oracle is exact.
fn random_grid_box(rng: &mut Rng) -> BBox {
    let w = snap(uniform_in(rng, 0.5, 8.0));
    let h = snap(uniform_in(rng, 0.5, 8.0));
    let x1 = snap(uniform_in(rng, 0.0, 10.0 - w));
    let y1 = snap(uniform_in(rng, 0.0, 10.0 - h));
    BBox::new(x1, y1, snap(x1 + w), snap(y1 + h)).unwrap()
}

/// Counts 0.01×0.01 cells whose centers fall inside each box over the
/// union's bounding region; IoU = intersection cells / union cells.
fn counting_oracle(a: &BBox, b: &BBox, cell: f64) -> f64 {
    let x_lo = a.x1.min(b.x1);
    let y_lo = a.y1.min(b.y1);
    let x_hi = a.x2.max(b.x2);
    let y_hi = a.y2.max(b.y2);
    let nx = ((x_hi - x_lo) / cell).ceil() as usize + 1;
    let ny = ((y_hi - y_lo) / cell).ceil() as usize + 1;
    let mut inter = 0u64;
    let mut union = 0u64;
    for iy in 0..ny {
        let cy = y_lo + (iy as f64 + 0.5) * cell;
        let in_ay = cy > a.y1 && cy < a.y2;
        let in_by = cy > b.y1 && cy < b.y2;
        if !in_ay && !in_by {
            continue;
        }
        for ix in 0..nx {
            let cx = x_lo + (ix as f64 + 0.5) * cell;
            let in_a = in_ay && cx > a.x1 && cx < a.x2;
            let in_b = in_by && cx > b.x1 && cx < b.x2;
            if in_a || in_b {
                union += 1;
            }
            if in_a && in_b {
                inter += 1;
            }
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Deliberately different arrangement of the IoU formula.
fn scalar_formula(a: &BBox, b: &BBox) -> f64 {
    let ix = f64::max(0.0, f64::min(a.x2, b.x2) - f64::max(a.x1, b.x1));
    let iy = f64::max(0.0, f64::min(a.y2, b.y2) - f64::max(a.y1, b.y1));
    let inter = ix * iy;
    let area_a = (a.x2 - a.x1) * (a.y2 - a.y1);
    let area_b = (b.x2 - b.x1) * (b.y2 - b.y1);
    let denom = area_a + area_b - inter;
    if denom <= 0.0 {
        0.0
    } else {
        inter / denom
    }
}

#[test]
fn iou_matches_counting_oracle_on_grid_boxes() {
    let mut rng = rng_from_seed(20240601);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let a = random_grid_box(&mut rng);
        let b = random_grid_box(&mut rng);
        let err = (iou(&a, &b) - counting_oracle(&a, &b, 0.01)).abs();
        worst = worst.max(err);
    }
    assert!(worst < 1e-3, "worst counting-oracle error {worst}");
}

#[test]
fn iou_matches_independent_scalar_formula() {
    let mut rng = rng_from_seed(77);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let a = random_grid_box(&mut rng);
        let b = random_grid_box(&mut rng);
        worst = worst.max((iou(&a, &b) - scalar_formula(&a, &b)).abs());
    }
    assert!(worst < 1e-12, "worst scalar-formula error {worst}");
}

#[test]
fn iou_matrix_matches_scalar_loop() {
    let mut rng = rng_from_seed(5150);
    let a: Vec<BBox> = (0..10).map(|_| random_grid_box(&mut rng)).collect();
    let b: Vec<BBox> = (0..10).map(|_| random_grid_box(&mut rng)).collect();
    let m = iou_matrix(&a, &b);
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            assert_eq!(m[i][j], iou(ai, bj));
        }
    }
}

/// Independent O(n²) suppression: for each box in score order, drop it if it
/// overlaps any previously kept box beyond the threshold.
fn nms_reference(dets: &[ScoredBox], thr: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| dets[j].score.total_cmp(&dets[i].score).then(i.cmp(&j)));
    let mut kept: Vec<usize> = Vec::new();
    'outer: for &i in &order {
        for &k in &kept {
            if scalar_formula(&dets[i].bbox, &dets[k].bbox) > thr {
                continue 'outer;
            }
        }
        kept.push(i);
    }
    kept
}

#[test]
fn nms_matches_quadratic_reference_exactly() {
    let mut rng = rng_from_seed(31337);
    for set in 0..100 {
        let dets: Vec<ScoredBox> = (0..200)
            .map(|_| ScoredBox::new(random_grid_box(&mut rng), uniform_in(&mut rng, 0.0, 1.0)))
            .collect();
        let got = nms(&dets, 0.6).unwrap();
        let want = nms_reference(&dets, 0.6);
        assert_eq!(got, want, "set {set}");
    }
}

#[test]
fn encode_decode_roundtrip_under_1e9() {
    let mut rng = rng_from_seed(99);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let p = random_grid_box(&mut rng);
        let g = random_grid_box(&mut rng);
        let t = encode(&p, &g).unwrap();
        let d = decode(&p, &t).unwrap();
        for (a, b) in [(d.x1, g.x1), (d.y1, g.y1), (d.x2, g.x2), (d.y2, g.y2)] {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst < 1e-9, "worst roundtrip error {worst}");
}
