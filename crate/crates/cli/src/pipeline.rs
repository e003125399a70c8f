//! The stagewise experiment pipeline: dataset generation, consecutive
//! training of the four cascade stages with on-disk checkpoints, and the
//! evaluation flows the subcommands expose.
//!
//! Every artifact records the config hash; loading an artifact produced by a
//! different config is rejected. Worker threads only parallelize per-image
//! inference, never training, so results are independent of thread count.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use rayon::prelude::*;

use cascadet::classifier::{
    calibrate_primitive_threshold, cascade_detect, detect_primitive, detections_to_scored,
    frcn1_detect, ovr_detect, resolve_primitive_thr, train_frcn1, train_frcn2, train_one_vs_rest_only,
    ClassifierConfig, Detection, FRCN1Model, FRCN2Model, FinetuneDepth, OvrModel, PrimitiveDetection,
};
use cascadet::eval::{evaluate_detections, recall_at, EvalReport, ReportMeta};
use cascadet::geometry::ScoredBox;
use cascadet::proposer::{
    cascade_propose, fuse_proposals, rpn_propose, train_binary_frcn, train_rpn, BinaryFRCNModel,
    ProposalSet, RPNModel, RescoreMode,
};
use cascadet::rngutil::derive_seed;
use cascadet::synthdata::{generate_dataset, jittered_gt_proposals, DetDataset};

use crate::checkpoint::{load_network, save_network};
use crate::config::ExperimentConfig;
use crate::dataset_io::{load_dataset, write_dataset};
use crate::proposals_io::{write_detections, write_proposal_set, write_proposals};
use crate::reports::{write_loss_csv, write_report};

/// Stage seeds, derived from the experiment's master training seed.
mod stage_tag {
    pub const RPN: u64 = 11;
    pub const BINARY_FRCN: u64 = 12;
    pub const FRCN1: u64 = 13;
    pub const FRCN2: u64 = 14;
    pub const OVR: u64 = 15;
    pub const JITTER: u64 = 21;
}

/// A training/eval stage of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Rpn,
    CascadeProposer,
    Frcn1,
    Frcn2,
    All,
}

pub struct Paths {
    out: PathBuf,
}

impl Paths {
    pub fn new(out_dir: &str) -> Self {
        Self { out: PathBuf::from(out_dir) }
    }

    pub fn train_dir(&self) -> PathBuf {
        self.out.join("dataset").join("train")
    }

    pub fn test_dir(&self) -> PathBuf {
        self.out.join("dataset").join("test")
    }

    pub fn ckpt(&self, name: &str) -> PathBuf {
        self.out.join("checkpoints").join(format!("{name}.ckpt"))
    }

    pub fn frcn1_meta(&self) -> PathBuf {
        self.out.join("checkpoints").join("frcn1.meta.json")
    }

    pub fn loss_csv(&self, stage: &str) -> PathBuf {
        self.out.join("logs").join(format!("{stage}_loss.csv"))
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.out.join("reports")
    }
}

fn err_msg(e: cascadet::Error) -> anyhow::Error {
    anyhow::anyhow!("{e}")
}

/// Generates both splits and writes them under the output directory.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<(DetDataset, DetDataset)> {
    cfg.validate()?;
    let paths = Paths::new(&cfg.out_dir);
    let train = generate_dataset(&cfg.dataset, "train").map_err(err_msg)?;
    let test = generate_dataset(&cfg.test_dataset, "test").map_err(err_msg)?;
    write_dataset(&train, &paths.train_dir())?;
    write_dataset(&test, &paths.test_dir())?;
    println!(
        "wrote {} train images ({} objects) and {} test images ({} objects) under {}",
        train.samples.len(),
        train.total_gts(),
        test.samples.len(),
        test.total_gts(),
        paths.out.join("dataset").display()
    );
    Ok((train, test))
}

fn load_split(paths: &Paths, cfg: &ExperimentConfig, train: bool) -> Result<DetDataset> {
    let dir = if train { paths.train_dir() } else { paths.test_dir() };
    let ds = load_dataset(&dir)?;
    let want = if train { &cfg.dataset } else { &cfg.test_dataset };
    if &ds.config != want {
        bail!(
            "dataset under {} was generated from a different config; re-run `cascadet gen-data`",
            dir.display()
        );
    }
    Ok(ds)
}

fn load_ckpt_checked(path: &Path, cfg: &ExperimentConfig, hint: &str) -> Result<cascadet::tinynet::Network> {
    if !path.exists() {
        bail!("missing checkpoint {}; run `cascadet train {hint}` first", path.display());
    }
    let (net, hash) = load_network(path)?;
    if hash != cfg.hash() {
        bail!(
            "checkpoint {} was produced by config {hash}, current config is {}; artifacts from \
             different configs cannot be mixed",
            path.display(),
            cfg.hash()
        );
    }
    Ok(net)
}

pub fn load_rpn(paths: &Paths, cfg: &ExperimentConfig) -> Result<RPNModel> {
    let net = load_ckpt_checked(&paths.ckpt("rpn"), cfg, "rpn")?;
    Ok(RPNModel { net, anchor_cfg: cfg.proposer.anchor_cfg.clone(), loss_curve: Vec::new() })
}

pub fn load_binary_frcn(paths: &Paths, cfg: &ExperimentConfig) -> Result<BinaryFRCNModel> {
    let net = load_ckpt_checked(&paths.ckpt("proposer_frcn"), cfg, "cascade-proposer")?;
    Ok(BinaryFRCNModel { net, loss_curve: Vec::new(), skipped_images: 0 })
}

pub fn load_frcn1(paths: &Paths, cfg: &ExperimentConfig) -> Result<FRCN1Model> {
    let net = load_ckpt_checked(&paths.ckpt("frcn1"), cfg, "frcn1")?;
    let calibrated_thr = std::fs::read_to_string(paths.frcn1_meta())
        .ok()
        .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok())
        .and_then(|v| v.get("calibrated_thr").and_then(|t| t.as_f64()));
    Ok(FRCN1Model {
        net,
        n_classes: cfg.classifier.n_classes,
        loss_curve: Vec::new(),
        missing_classes: Vec::new(),
        calibrated_thr,
    })
}

pub fn load_frcn2(paths: &Paths, cfg: &ExperimentConfig) -> Result<FRCN2Model> {
    let net = load_ckpt_checked(&paths.ckpt("frcn2"), cfg, "frcn2")?;
    Ok(FRCN2Model {
        net,
        mode: cfg.classifier.finetune_depth,
        n_classes: cfg.classifier.n_classes,
        loss_curve: Vec::new(),
        untrained_heads: Vec::new(),
        head_sample_counts: vec![(0, 0); cfg.classifier.n_classes],
    })
}

/// Stage-1 proposals for every image, in parallel.
pub fn harvest_rpn(rpn: &RPNModel, ds: &DetDataset, k: usize, cfg: &ExperimentConfig) -> Result<Vec<Vec<ScoredBox>>> {
    ds.samples
        .par_iter()
        .map(|s| rpn_propose(rpn, &s.image, k, &cfg.proposer).map_err(err_msg))
        .collect()
}

/// Full-cascade proposals for every image, in parallel.
pub fn harvest_cascade(
    rpn: &RPNModel,
    frcn: &BinaryFRCNModel,
    ds: &DetDataset,
    cfg: &ExperimentConfig,
) -> Result<ProposalSet> {
    let per_image = ds
        .samples
        .par_iter()
        .map(|s| cascade_propose(rpn, frcn, &s.image, &cfg.proposer).map_err(err_msg))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProposalSet { per_image })
}

/// Primitive detections for every image, in parallel.
pub fn harvest_primitives(
    frcn1: &FRCN1Model,
    ds: &DetDataset,
    proposals: &[Vec<ScoredBox>],
    cfg: &ClassifierConfig,
) -> Result<Vec<Vec<PrimitiveDetection>>> {
    let thr = resolve_primitive_thr(frcn1, cfg);
    ds.samples
        .par_iter()
        .zip(proposals.par_iter())
        .map(|(s, p)| detect_primitive(frcn1, &s.image, p, thr, cfg.primitive_nms_thr).map_err(err_msg))
        .collect()
}

/// Trains one stage (or the whole consecutive pipeline), writing checkpoints
/// and per-epoch loss curves.
pub fn cmd_train(cfg: &ExperimentConfig, stage: Stage) -> Result<()> {
    cfg.validate()?;
    let paths = Paths::new(&cfg.out_dir);
    let hash = cfg.hash();
    match stage {
        Stage::Rpn => {
            let train = load_split(&paths, cfg, true)?;
            let model = train_rpn(&train, &cfg.proposer, derive_seed(cfg.train_seed, stage_tag::RPN))
                .map_err(err_msg)?;
            save_network(&model.net, &hash, &paths.ckpt("rpn"))?;
            write_loss_csv(&model.loss_curve, &paths.loss_csv("rpn"))?;
            println!("rpn: {} epochs, final mean loss {:.4}", model.loss_curve.len(), model.loss_curve.last().unwrap_or(&f64::NAN));
        }
        Stage::CascadeProposer => {
            let train = load_split(&paths, cfg, true)?;
            let rpn = load_rpn(&paths, cfg)?;
            let primitives = harvest_rpn(&rpn, &train, cfg.proposer.primitive_k, cfg)?;
            let model =
                train_binary_frcn(&train, &primitives, &cfg.proposer, derive_seed(cfg.train_seed, stage_tag::BINARY_FRCN))
                    .map_err(err_msg)?;
            save_network(&model.net, &hash, &paths.ckpt("proposer_frcn"))?;
            write_loss_csv(&model.loss_curve, &paths.loss_csv("proposer_frcn"))?;
            println!(
                "cascade-proposer: {} epochs, final mean loss {:.4} ({} images skipped)",
                model.loss_curve.len(),
                model.loss_curve.last().unwrap_or(&f64::NAN),
                model.skipped_images
            );
        }
        Stage::Frcn1 => {
            let train = load_split(&paths, cfg, true)?;
            let rpn = load_rpn(&paths, cfg)?;
            let frcn = load_binary_frcn(&paths, cfg)?;
            let proposals = harvest_cascade(&rpn, &frcn, &train, cfg)?.scored_boxes();
            let mut model =
                train_frcn1(&train, &proposals, &cfg.classifier, derive_seed(cfg.train_seed, stage_tag::FRCN1))
                    .map_err(err_msg)?;
            if cfg.classifier.primitive_score_thr.is_none() {
                let thr = calibrate_primitive_threshold(
                    &model,
                    &train,
                    &proposals,
                    cfg.classifier.primitive_nms_thr,
                    cfg.classifier.primitive_target_per_image,
                    100,
                )
                .map_err(err_msg)?;
                model.calibrated_thr = Some(thr);
                println!("frcn1: calibrated primitive threshold {thr:.4}");
            }
            save_network(&model.net, &hash, &paths.ckpt("frcn1"))?;
            std::fs::write(
                paths.frcn1_meta(),
                serde_json::to_string_pretty(&serde_json::json!({
                    "calibrated_thr": model.calibrated_thr,
                    "missing_classes": model.missing_classes,
                }))?,
            )?;
            write_loss_csv(&model.loss_curve, &paths.loss_csv("frcn1"))?;
            println!("frcn1: {} epochs, final mean loss {:.4}", model.loss_curve.len(), model.loss_curve.last().unwrap_or(&f64::NAN));
        }
        Stage::Frcn2 => {
            let train = load_split(&paths, cfg, true)?;
            let rpn = load_rpn(&paths, cfg)?;
            let frcn = load_binary_frcn(&paths, cfg)?;
            let frcn1 = load_frcn1(&paths, cfg)?;
            let proposals = harvest_cascade(&rpn, &frcn, &train, cfg)?.scored_boxes();
            let primitives = harvest_primitives(&frcn1, &train, &proposals, &cfg.classifier)?;
            let model = train_frcn2(&frcn1, &train, &primitives, &cfg.classifier, derive_seed(cfg.train_seed, stage_tag::FRCN2))
                .map_err(err_msg)?;
            save_network(&model.net, &hash, &paths.ckpt("frcn2"))?;
            write_loss_csv(&model.loss_curve, &paths.loss_csv("frcn2"))?;
            if !model.untrained_heads.is_empty() {
                println!("frcn2: heads left untrained for classes {:?}", model.untrained_heads);
            }
            println!(
                "frcn2: {} epochs, final mean loss {:.4}",
                model.loss_curve.len(),
                model.loss_curve.last().unwrap_or(&f64::NAN)
            );
        }
        Stage::All => {
            cmd_train(cfg, Stage::Rpn)?;
            cmd_train(cfg, Stage::CascadeProposer)?;
            cmd_train(cfg, Stage::Frcn1)?;
            cmd_train(cfg, Stage::Frcn2)?;
        }
    }
    Ok(())
}

fn meta(cfg: &ExperimentConfig, variant: &str) -> ReportMeta {
    ReportMeta { config_hash: cfg.hash(), seed: cfg.train_seed, variant: variant.to_string() }
}

/// Evaluates proposal recall on the test split for the `rpn` and `cascade`
/// variants (plus `fused` on request), writing reports and proposal dumps.
pub fn cmd_eval_proposals(cfg: &ExperimentConfig, include_fused: bool) -> Result<BTreeMap<String, EvalReport>> {
    cfg.validate()?;
    let paths = Paths::new(&cfg.out_dir);
    let test = load_split(&paths, cfg, false)?;
    let rpn = load_rpn(&paths, cfg)?;
    let frcn = load_binary_frcn(&paths, cfg)?;
    let gts: Vec<_> = test.samples.iter().map(|s| s.gts.clone()).collect();
    let max_budget = cfg.eval.budgets.iter().copied().max().unwrap_or(300);

    let mut reports = BTreeMap::new();

    let rpn_props = harvest_rpn(&rpn, &test, max_budget, cfg)?;
    let rpn_recall = recall_at(&rpn_props, &gts, &cfg.eval).map_err(err_msg)?;
    write_proposals(&rpn_props, &paths.reports_dir().join("proposals_rpn.txt"))?;
    reports.insert(
        "rpn".to_string(),
        EvalReport { class_names: cfg.class_names(), recall: Some(rpn_recall), detection: None, meta: meta(cfg, "rpn") },
    );

    let cascade = harvest_cascade(&rpn, &frcn, &test, cfg)?;
    let cascade_recall = recall_at(&cascade.scored_boxes(), &gts, &cfg.eval).map_err(err_msg)?;
    write_proposal_set(&cascade, &paths.reports_dir().join("proposals_cascade.txt"))?;
    reports.insert(
        "cascade".to_string(),
        EvalReport {
            class_names: cfg.class_names(),
            recall: Some(cascade_recall),
            detection: None,
            meta: meta(cfg, "cascade"),
        },
    );

    if include_fused {
        let jitter = jittered_gt_proposals(&test, 2.0, 2, derive_seed(cfg.train_seed, stage_tag::JITTER));
        let rpn_k = harvest_rpn(&rpn, &test, cfg.proposer.primitive_k, cfg)?;
        let fused: Vec<Vec<ScoredBox>> = test
            .samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let sources = [rpn_k[i].clone(), jitter[i].clone()];
                fuse_proposals(&sources, &frcn, &s.image, &cfg.proposer)
                    .map(|v| v.iter().map(|r| r.to_scored()).collect())
                    .map_err(err_msg)
            })
            .collect::<Result<Vec<_>>>()?;
        let fused_recall = recall_at(&fused, &gts, &cfg.eval).map_err(err_msg)?;
        write_proposals(&fused, &paths.reports_dir().join("proposals_fused.txt"))?;
        reports.insert(
            "fused".to_string(),
            EvalReport {
                class_names: cfg.class_names(),
                recall: Some(fused_recall),
                detection: None,
                meta: meta(cfg, "fused"),
            },
        );
    }

    for (variant, report) in &reports {
        write_report(report, &paths.reports_dir(), &format!("proposals_{variant}"))?;
    }
    Ok(reports)
}

/// Detections of the cascade on the test split, in parallel.
pub fn detect_cascade_all(
    frcn1: &FRCN1Model,
    frcn2: &FRCN2Model,
    ds: &DetDataset,
    proposals: &[Vec<ScoredBox>],
    cfg: &ClassifierConfig,
) -> Result<Vec<Vec<Detection>>> {
    ds.samples
        .par_iter()
        .zip(proposals.par_iter())
        .map(|(s, p)| cascade_detect(frcn1, frcn2, &s.image, p, cfg).map_err(err_msg))
        .collect()
}

pub fn detect_frcn1_all(
    frcn1: &FRCN1Model,
    ds: &DetDataset,
    proposals: &[Vec<ScoredBox>],
    cfg: &ClassifierConfig,
) -> Result<Vec<Vec<Detection>>> {
    ds.samples
        .par_iter()
        .zip(proposals.par_iter())
        .map(|(s, p)| frcn1_detect(frcn1, &s.image, p, cfg).map_err(err_msg))
        .collect()
}

fn write_detection_artifacts(
    paths: &Paths,
    variant: &str,
    dets: &[Vec<Detection>],
) -> Result<()> {
    let scored: Vec<Vec<ScoredBox>> = dets.iter().map(|v| detections_to_scored(v)).collect();
    write_detections(&scored, &paths.reports_dir().join(format!("detections_{variant}.txt")))?;
    // extended dump with both stage score vectors, for ablation tooling
    let mut jsonl = String::new();
    for (i, list) in dets.iter().enumerate() {
        for d in list {
            let mut value = serde_json::to_value(d)?;
            value["id"] = serde_json::Value::String(DetDataset::image_id(i));
            jsonl.push_str(&serde_json::to_string(&value)?);
            jsonl.push('\n');
        }
    }
    std::fs::write(paths.reports_dir().join(format!("detections_{variant}.jsonl")), jsonl)?;
    Ok(())
}

/// Evaluates detection mAP and confusion for the `frcn1` and `cascade`
/// variants on the test split.
pub fn cmd_eval_detections(cfg: &ExperimentConfig) -> Result<BTreeMap<String, EvalReport>> {
    cfg.validate()?;
    let paths = Paths::new(&cfg.out_dir);
    let test = load_split(&paths, cfg, false)?;
    let rpn = load_rpn(&paths, cfg)?;
    let frcn = load_binary_frcn(&paths, cfg)?;
    let frcn1 = load_frcn1(&paths, cfg)?;
    let frcn2 = load_frcn2(&paths, cfg)?;
    let gts: Vec<_> = test.samples.iter().map(|s| s.gts.clone()).collect();
    let n = cfg.classifier.n_classes;

    let proposals = harvest_cascade(&rpn, &frcn, &test, cfg)?.scored_boxes();
    let mut reports = BTreeMap::new();

    let d1 = detect_frcn1_all(&frcn1, &test, &proposals, &cfg.classifier)?;
    let e1 = evaluate_detections(&d1.iter().map(|v| detections_to_scored(v)).collect::<Vec<_>>(), &gts, n, 0.5)
        .map_err(err_msg)?;
    write_detection_artifacts(&paths, "frcn1", &d1)?;
    reports.insert(
        "frcn1".to_string(),
        EvalReport { class_names: cfg.class_names(), recall: None, detection: Some(e1), meta: meta(cfg, "frcn1") },
    );

    let d2 = detect_cascade_all(&frcn1, &frcn2, &test, &proposals, &cfg.classifier)?;
    let e2 = evaluate_detections(&d2.iter().map(|v| detections_to_scored(v)).collect::<Vec<_>>(), &gts, n, 0.5)
        .map_err(err_msg)?;
    write_detection_artifacts(&paths, "cascade", &d2)?;
    reports.insert(
        "cascade".to_string(),
        EvalReport { class_names: cfg.class_names(), recall: None, detection: Some(e2), meta: meta(cfg, "cascade") },
    );

    for (variant, report) in &reports {
        write_report(report, &paths.reports_dir(), &format!("detections_{variant}"))?;
    }
    Ok(reports)
}

/// Ablation axes mirroring the design-choice tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    SamplingThresholds,
    FinetuneDepth,
    ClassifierObjective,
    Rescore,
    Fusion,
}

/// Runs one ablation axis with shared seeds, writes the comparison table and
/// returns it as text.
pub fn cmd_ablate(cfg: &ExperimentConfig, axis: Axis) -> Result<String> {
    cfg.validate()?;
    let paths = Paths::new(&cfg.out_dir);
    let train = load_split(&paths, cfg, true)?;
    let test = load_split(&paths, cfg, false)?;
    let gts: Vec<_> = test.samples.iter().map(|s| s.gts.clone()).collect();
    let n = cfg.classifier.n_classes;
    let mut table = String::new();

    match axis {
        Axis::SamplingThresholds => {
            let rpn = load_rpn(&paths, cfg)?;
            let train_prims = harvest_rpn(&rpn, &train, cfg.proposer.primitive_k, cfg)?;
            let max_budget = cfg.eval.budgets.iter().copied().max().unwrap_or(300);
            let rpn_test = harvest_rpn(&rpn, &test, max_budget, cfg)?;
            let r = recall_at(&rpn_test, &gts, &cfg.eval).map_err(err_msg)?;
            table.push_str("stage2,pos_thr,neg_thr,recall@0.5,recall@0.7\n");
            table.push_str(&format!(
                "rpn-only,0.7,0.3,{:.4},{:.4}\n",
                r.at(max_budget, 0.5).unwrap_or(f64::NAN),
                r.at(max_budget, 0.7).unwrap_or(f64::NAN)
            ));
            for (pos, neg) in [(0.5, 0.5), (0.5, 0.3), (0.7, 0.3)] {
                let mut pcfg = cfg.proposer.clone();
                pcfg.frcn_sampling.pos_thr = pos;
                pcfg.frcn_sampling.neg_thr = neg;
                let model = train_binary_frcn(&train, &train_prims, &pcfg, derive_seed(cfg.train_seed, stage_tag::BINARY_FRCN))
                    .map_err(err_msg)?;
                let props = test
                    .samples
                    .par_iter()
                    .map(|s| {
                        cascade_propose(&rpn, &model, &s.image, &pcfg)
                            .map(|v| v.iter().map(|r| r.to_scored()).collect::<Vec<_>>())
                            .map_err(err_msg)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let r = recall_at(&props, &gts, &cfg.eval).map_err(err_msg)?;
                table.push_str(&format!(
                    "frcn,{pos},{neg},{:.4},{:.4}\n",
                    r.at(max_budget, 0.5).unwrap_or(f64::NAN),
                    r.at(max_budget, 0.7).unwrap_or(f64::NAN)
                ));
            }
        }
        Axis::FinetuneDepth => {
            let rpn = load_rpn(&paths, cfg)?;
            let frcn = load_binary_frcn(&paths, cfg)?;
            let frcn1 = load_frcn1(&paths, cfg)?;
            let train_props = harvest_cascade(&rpn, &frcn, &train, cfg)?.scored_boxes();
            let test_props = harvest_cascade(&rpn, &frcn, &test, cfg)?.scored_boxes();
            let train_prims = harvest_primitives(&frcn1, &train, &train_props, &cfg.classifier)?;
            table.push_str("ft_layers,map\n");
            for (name, depth) in [
                ("same", FinetuneDepth::Same),
                ("clf", FinetuneDepth::Clf),
                ("fc+clf", FinetuneDepth::FcClf),
                ("conv+fc+clf", FinetuneDepth::ConvFcClf),
            ] {
                let mut ccfg = cfg.classifier.clone();
                ccfg.finetune_depth = depth;
                let frcn2 = train_frcn2(&frcn1, &train, &train_prims, &ccfg, derive_seed(cfg.train_seed, stage_tag::FRCN2))
                    .map_err(err_msg)?;
                let dets = detect_cascade_all(&frcn1, &frcn2, &test, &test_props, &ccfg)?;
                let e = evaluate_detections(
                    &dets.iter().map(|v| detections_to_scored(v)).collect::<Vec<_>>(),
                    &gts,
                    n,
                    0.5,
                )
                .map_err(err_msg)?;
                table.push_str(&format!("{name},{:.4}\n", e.map));
            }
        }
        Axis::ClassifierObjective => {
            let rpn = load_rpn(&paths, cfg)?;
            let frcn = load_binary_frcn(&paths, cfg)?;
            let frcn1 = load_frcn1(&paths, cfg)?;
            let frcn2 = load_frcn2(&paths, cfg)?;
            let train_props = harvest_cascade(&rpn, &frcn, &train, cfg)?.scored_boxes();
            let test_props = harvest_cascade(&rpn, &frcn, &test, cfg)?.scored_boxes();
            table.push_str("objective,map\n");

            let d1 = detect_frcn1_all(&frcn1, &test, &test_props, &cfg.classifier)?;
            let e1 = evaluate_detections(&d1.iter().map(|v| detections_to_scored(v)).collect::<Vec<_>>(), &gts, n, 0.5)
                .map_err(err_msg)?;
            table.push_str(&format!("one-shot,{:.4}\n", e1.map));

            let ovr: OvrModel =
                train_one_vs_rest_only(&train, &train_props, &cfg.classifier, derive_seed(cfg.train_seed, stage_tag::OVR))
                    .map_err(err_msg)?;
            let dov = test
                .samples
                .par_iter()
                .zip(test_props.par_iter())
                .map(|(s, p)| ovr_detect(&ovr, &s.image, p, &cfg.classifier).map_err(err_msg))
                .collect::<Result<Vec<_>>>()?;
            let eov = evaluate_detections(&dov.iter().map(|v| detections_to_scored(v)).collect::<Vec<_>>(), &gts, n, 0.5)
                .map_err(err_msg)?;
            table.push_str(&format!("one-vs-rest,{:.4}\n", eov.map));

            let d2 = detect_cascade_all(&frcn1, &frcn2, &test, &test_props, &cfg.classifier)?;
            let e2 = evaluate_detections(&d2.iter().map(|v| detections_to_scored(v)).collect::<Vec<_>>(), &gts, n, 0.5)
                .map_err(err_msg)?;
            table.push_str(&format!("one-shot + one-vs-rest,{:.4}\n", e2.map));
        }
        Axis::Rescore => {
            let rpn = load_rpn(&paths, cfg)?;
            let frcn = load_binary_frcn(&paths, cfg)?;
            let max_budget = cfg.eval.budgets.iter().copied().max().unwrap_or(300);
            table.push_str("rescore,recall@0.5,recall@0.7\n");
            for (name, mode) in [("second_only", RescoreMode::SecondOnly), ("product", RescoreMode::Product)] {
                let mut pcfg = cfg.proposer.clone();
                pcfg.rescore = mode;
                let xcfg = ExperimentConfig { proposer: pcfg, ..cfg.clone() };
                let props = harvest_cascade(&rpn, &frcn, &test, &xcfg)?.scored_boxes();
                let r = recall_at(&props, &gts, &cfg.eval).map_err(err_msg)?;
                table.push_str(&format!(
                    "{name},{:.4},{:.4}\n",
                    r.at(max_budget, 0.5).unwrap_or(f64::NAN),
                    r.at(max_budget, 0.7).unwrap_or(f64::NAN)
                ));
            }
        }
        Axis::Fusion => {
            let rpn = load_rpn(&paths, cfg)?;
            let frcn = load_binary_frcn(&paths, cfg)?;
            let max_budget = cfg.eval.budgets.iter().copied().max().unwrap_or(300);
            table.push_str("sources,recall@0.5,recall@0.7\n");

            let cascade = harvest_cascade(&rpn, &frcn, &test, cfg)?.scored_boxes();
            let r = recall_at(&cascade, &gts, &cfg.eval).map_err(err_msg)?;
            table.push_str(&format!(
                "rpn,{:.4},{:.4}\n",
                r.at(max_budget, 0.5).unwrap_or(f64::NAN),
                r.at(max_budget, 0.7).unwrap_or(f64::NAN)
            ));

            let jitter = jittered_gt_proposals(&test, 2.0, 2, derive_seed(cfg.train_seed, stage_tag::JITTER));
            let rpn_k = harvest_rpn(&rpn, &test, cfg.proposer.primitive_k, cfg)?;
            let fused: Vec<Vec<ScoredBox>> = test
                .samples
                .par_iter()
                .enumerate()
                .map(|(i, s)| {
                    let sources = [rpn_k[i].clone(), jitter[i].clone()];
                    fuse_proposals(&sources, &frcn, &s.image, &cfg.proposer)
                        .map(|v| v.iter().map(|r| r.to_scored()).collect())
                        .map_err(err_msg)
                })
                .collect::<Result<Vec<_>>>()?;
            let r = recall_at(&fused, &gts, &cfg.eval).map_err(err_msg)?;
            table.push_str(&format!(
                "rpn + jittered-gt,{:.4},{:.4}\n",
                r.at(max_budget, 0.5).unwrap_or(f64::NAN),
                r.at(max_budget, 0.7).unwrap_or(f64::NAN)
            ));
        }
    }

    let stem = match axis {
        Axis::SamplingThresholds => "ablate_sampling_thresholds",
        Axis::FinetuneDepth => "ablate_finetune_depth",
        Axis::ClassifierObjective => "ablate_classifier_objective",
        Axis::Rescore => "ablate_rescore",
        Axis::Fusion => "ablate_fusion",
    };
    std::fs::create_dir_all(paths.reports_dir())?;
    std::fs::write(paths.reports_dir().join(format!("{stem}.csv")), &table)?;
    Ok(table)
}

/// Fails when a requested stage's upstream checkpoint is missing.
pub fn check_dependencies(cfg: &ExperimentConfig, stage: Stage) -> Result<()> {
    let paths = Paths::new(&cfg.out_dir);
    let need: &[(&str, &str)] = match stage {
        Stage::Rpn | Stage::All => &[],
        Stage::CascadeProposer => &[("rpn", "rpn")],
        Stage::Frcn1 => &[("rpn", "rpn"), ("proposer_frcn", "cascade-proposer")],
        Stage::Frcn2 => &[("rpn", "rpn"), ("proposer_frcn", "cascade-proposer"), ("frcn1", "frcn1")],
    };
    for (ckpt, hint) in need {
        let p = paths.ckpt(ckpt);
        if !p.exists() {
            bail!("stage requires checkpoint {}; run `cascadet train {hint}` first", p.display());
        }
    }
    Ok(())
}
