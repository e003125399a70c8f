//! Scratch pilot: trains the full cascade on craft-toy-6 and prints the
//! trend numbers the acceptance criteria gate on.

use std::time::Instant;

use cascadet::classifier::{
    cascade_detect, calibrate_primitive_threshold, detect_primitive, detections_to_scored, frcn1_detect,
    resolve_primitive_thr, train_frcn1, train_frcn2, train_one_vs_rest_only, ovr_detect, ClassifierConfig,
};
use cascadet::eval::{evaluate_detections, recall_at, RecallSpec};
use cascadet::geometry::ScoredBox;
use cascadet::proposer::{
    cascade_propose, rpn_propose, rpn_propose_all, train_binary_frcn, train_rpn, OutputRule, ProposerConfig,
};
use cascadet::synthdata::{generate_dataset, DatasetConfig};

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let n_train: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(500);
    let n_test: usize = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(200);

    let t0 = Instant::now();
    let train = generate_dataset(&DatasetConfig::craft_toy6(n_train, seed * 1000 + 1), "train").unwrap();
    let test = generate_dataset(&DatasetConfig::craft_toy6(n_test, seed * 1000 + 2), "test").unwrap();
    println!("[{:6.1?}] datasets: {} train / {} test, {} train gts", t0.elapsed(), n_train, n_test, train.total_gts());

    let pcfg = ProposerConfig::default();
    let rpn = train_rpn(&train, &pcfg, seed * 77 + 1).unwrap();
    println!(
        "[{:6.1?}] rpn trained; loss {:.4} -> {:.4}",
        t0.elapsed(),
        rpn.loss_curve.first().unwrap(),
        rpn.loss_curve.last().unwrap()
    );

    let gts_test: Vec<_> = test.samples.iter().map(|s| s.gts.clone()).collect();
    let spec = RecallSpec { iou_thresholds: vec![0.5, 0.6, 0.7, 0.8, 0.9], budgets: vec![50, 300] };

    let rpn_props_test: Vec<Vec<ScoredBox>> = test
        .samples
        .iter()
        .map(|s| rpn_propose(&rpn, &s.image, 300, &pcfg).unwrap())
        .collect();
    let r_rpn = recall_at(&rpn_props_test, &gts_test, &spec).unwrap();
    println!("[{:6.1?}] rpn-alone recall:", t0.elapsed());
    print_recall(&r_rpn);

    let prim_train = rpn_propose_all(&rpn, &train, pcfg.primitive_k, &pcfg).unwrap();
    let frcn = train_binary_frcn(&train, &prim_train, &pcfg, seed * 77 + 2).unwrap();
    println!(
        "[{:6.1?}] binary frcn trained; loss {:.4} -> {:.4} ({} skipped)",
        t0.elapsed(),
        frcn.loss_curve.first().unwrap(),
        frcn.loss_curve.last().unwrap(),
        frcn.skipped_images
    );

    let casc_test: Vec<Vec<ScoredBox>> = test
        .samples
        .iter()
        .map(|s| {
            cascade_propose(&rpn, &frcn, &s.image, &pcfg)
                .unwrap()
                .iter()
                .map(|r| r.to_scored())
                .collect()
        })
        .collect();
    let r_casc = recall_at(&casc_test, &gts_test, &spec).unwrap();
    println!("[{:6.1?}] cascade recall:", t0.elapsed());
    print_recall(&r_casc);

    println!(
        "criterion-3: cascade@0.7/50 {:.3} vs rpn {:.3} (need +0.03); @0.5/300 {:.3} vs {:.3} (need >=)",
        r_casc.at(50, 0.7).unwrap(),
        r_rpn.at(50, 0.7).unwrap(),
        r_casc.at(300, 0.5).unwrap(),
        r_rpn.at(300, 0.5).unwrap(),
    );
    for c in 0..6 {
        let a = r_rpn.class_at(c, 300, 0.5).unwrap_or(f64::NAN);
        let b = r_casc.class_at(c, 300, 0.5).unwrap_or(f64::NAN);
        let a7 = r_rpn.class_at(c, 300, 0.7).unwrap_or(f64::NAN);
        let b7 = r_casc.class_at(c, 300, 0.7).unwrap_or(f64::NAN);
        println!("  class {c}: @0.5 rpn {a:.3} -> casc {b:.3} | @0.7 rpn {a7:.3} -> casc {b7:.3}");
    }

    // ---- classification cascade ----
    let ccfg = ClassifierConfig::toy(6);
    let casc_train: Vec<Vec<ScoredBox>> = train
        .samples
        .iter()
        .map(|s| {
            cascade_propose(&rpn, &frcn, &s.image, &pcfg)
                .unwrap()
                .iter()
                .map(|r| r.to_scored())
                .collect()
        })
        .collect();
    println!("[{:6.1?}] train proposals harvested", t0.elapsed());

    let mut frcn1 = train_frcn1(&train, &casc_train, &ccfg, seed * 77 + 3).unwrap();
    println!(
        "[{:6.1?}] frcn1 trained; loss {:.4} -> {:.4}",
        t0.elapsed(),
        frcn1.loss_curve.first().unwrap(),
        frcn1.loss_curve.last().unwrap()
    );
    let thr = calibrate_primitive_threshold(&frcn1, &train, &casc_train, ccfg.primitive_nms_thr, 20.0, 100).unwrap();
    frcn1.calibrated_thr = Some(thr);
    let mean_prims: f64 = train
        .samples
        .iter()
        .zip(casc_train.iter())
        .take(100)
        .map(|(s, p)| detect_primitive(&frcn1, &s.image, p, thr, ccfg.primitive_nms_thr).unwrap().len() as f64)
        .sum::<f64>()
        / 100.0;
    println!("[{:6.1?}] calibrated thr {:.4}; mean prims/image {:.1}", t0.elapsed(), thr, mean_prims);

    let prim_dets_train: Vec<_> = train
        .samples
        .iter()
        .zip(casc_train.iter())
        .map(|(s, p)| detect_primitive(&frcn1, &s.image, p, thr, ccfg.primitive_nms_thr).unwrap())
        .collect();
    let frcn2 = train_frcn2(&frcn1, &train, &prim_dets_train, &ccfg, seed * 77 + 4).unwrap();
    println!(
        "[{:6.1?}] frcn2 trained; loss {:?} -> {:?}; untrained heads {:?}",
        t0.elapsed(),
        frcn2.loss_curve.first(),
        frcn2.loss_curve.last(),
        frcn2.untrained_heads
    );

    let frcn1_dets: Vec<Vec<ScoredBox>> = test
        .samples
        .iter()
        .zip(casc_test.iter())
        .map(|(s, p)| detections_to_scored(&frcn1_detect(&frcn1, &s.image, p, &ccfg).unwrap()))
        .collect();
    let e1 = evaluate_detections(&frcn1_dets, &gts_test, 6, 0.5).unwrap();
    println!("[{:6.1?}] frcn1-only  mAP {:.4}  ap {:?}", t0.elapsed(), e1.map, fmt_ap(&e1.ap));
    print_confusion("frcn1", &e1.confusion);
    let n_dets: usize = frcn1_dets.iter().map(Vec::len).sum();
    println!("  frcn1 detections on test: {} ({:.1}/image)", n_dets, n_dets as f64 / 200.0);

    let casc_dets: Vec<Vec<ScoredBox>> = test
        .samples
        .iter()
        .zip(casc_test.iter())
        .map(|(s, p)| detections_to_scored(&cascade_detect(&frcn1, &frcn2, &s.image, p, &ccfg).unwrap()))
        .collect();
    let e2 = evaluate_detections(&casc_dets, &gts_test, 6, 0.5).unwrap();
    println!("[{:6.1?}] cascade     mAP {:.4}  ap {:?}", t0.elapsed(), e2.map, fmt_ap(&e2.ap));
    print_confusion("cascade", &e2.confusion);

    // refine-box ablation
    let ccfg_norefine = ClassifierConfig { refine_box: false, ..ccfg.clone() };
    let casc_nr: Vec<Vec<ScoredBox>> = test
        .samples
        .iter()
        .zip(casc_test.iter())
        .map(|(s, p)| detections_to_scored(&cascade_detect(&frcn1, &frcn2, &s.image, p, &ccfg_norefine).unwrap()))
        .collect();
    let e2b = evaluate_detections(&casc_nr, &gts_test, 6, 0.5).unwrap();
    println!("[{:6.1?}] cascade/no-refine mAP {:.4}  ap {:?}", t0.elapsed(), e2b.map, fmt_ap(&e2b.ap));

    let ovr = train_one_vs_rest_only(&train, &casc_train, &ccfg, seed * 77 + 5).unwrap();
    let ovr_dets: Vec<Vec<ScoredBox>> = test
        .samples
        .iter()
        .zip(casc_test.iter())
        .map(|(s, p)| detections_to_scored(&ovr_detect(&ovr, &s.image, p, &ccfg).unwrap()))
        .collect();
    let e3 = evaluate_detections(&ovr_dets, &gts_test, 6, 0.5).unwrap();
    println!("[{:6.1?}] ovr-only    mAP {:.4}  ap {:?}", t0.elapsed(), e3.map, fmt_ap(&e3.ap));

    let confusion_pair = |m: &Vec<Vec<usize>>| m[2][3] + m[3][2];
    println!(
        "criterion-5: cascade {:.4} vs frcn1 {:.4} (need +0.01)\ncriterion-6: ovr {:.4} < frcn1 {:.4} < cascade {:.4}\ncriterion-7: confusion pentagon<->hexagon cascade {} vs frcn1 {}",
        e2.map,
        e1.map,
        e3.map,
        e1.map,
        e2.map,
        confusion_pair(&e2.confusion),
        confusion_pair(&e1.confusion),
    );
    let _ = resolve_primitive_thr(&frcn1, &ccfg);
    let _ = OutputRule::Budget(300);
    println!("[{:6.1?}] done", t0.elapsed());
}

fn print_recall(r: &cascadet::eval::RecallReport) {
    for (bi, b) in r.budgets.iter().enumerate() {
        let row: Vec<String> = r.overall[bi].iter().map(|v| format!("{v:.3}")).collect();
        println!("  budget {b:4}: {}", row.join(" "));
    }
}

fn fmt_ap(ap: &std::collections::BTreeMap<usize, f64>) -> Vec<String> {
    ap.iter().map(|(c, v)| format!("{c}:{v:.3}")).collect()
}

fn print_confusion(name: &str, m: &[Vec<usize>]) {
    println!("  {name} confusion (rows gt, cols det):");
    for row in m {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:4}")).collect();
        println!("    {}", cells.join(" "));
    }
}
