//! Cascade proposal generation: a sliding-window region network produces
//! primitive proposals which a binary region classifier re-scores and
//! re-regresses. At test time the two stages run concatenated; the final set
//! comes from suppression plus a fixed budget or a score threshold. Multiple
//! proposal sources can be fused as the second stage's input.
//!
//! The two stages never share features and are trained separately, the
//! second on the first's output.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::anchors::{generate_anchors, AnchorConfig};
use crate::geometry::{clip_to_image, decode, encode, nms, BBox, RegressionTarget, ScoredBox};
use crate::rngutil;
use crate::sampling::{assign_labels, sample_minibatch, Label, SamplingCriterion};
use crate::synthdata::DetDataset;
use crate::tinynet::{
    backbone_spec, smooth_l1, softmax, softmax_xent, HeadSpec, Init, LayerSpec, NetSpec, Network, Tensor,
};
use crate::{Error, Result};

/// Epoch/optimizer settings for one training stage. The learning rate drops
/// by `lr_decay` once `lr_decay_at` of the epochs have run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay: f64,
    pub lr_decay_at: f64,
}

impl TrainHyper {
    pub fn new(epochs: usize, lr: f64) -> Self {
        Self { epochs, lr, momentum: 0.9, weight_decay: 5e-4, lr_decay: 0.2, lr_decay_at: 0.7 }
    }

    /// Learning rate in force at a given epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if (epoch as f64) >= self.lr_decay_at * self.epochs as f64 {
            self.lr * self.lr_decay
        } else {
            self.lr
        }
    }
}

/// Pads a roi for feature pooling: 20% per side and at least 20 px per
/// dimension, clamped to the image. Small and thin boxes otherwise cover too
/// few stride-8 feature cells to produce a usable descriptor. Geometry
/// (regression targets, IoU) always uses the unpadded box.
pub fn pad_roi_for_pooling(b: &BBox, img_w: f64, img_h: f64) -> BBox {
    let (cx, cy) = b.center();
    let w = (b.width() * 1.4).max(20.0);
    let h = (b.height() * 1.4).max(20.0);
    let padded = BBox {
        x1: cx - 0.5 * w,
        y1: cy - 0.5 * h,
        x2: cx + 0.5 * w,
        y2: cy + 0.5 * h,
    };
    clip_to_image(&padded, img_w, img_h)
}

/// How the final proposal set is cut down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OutputRule {
    /// Keep the top-k proposals per image.
    Budget(usize),
    /// Keep every proposal whose final score reaches the threshold.
    ScoreThr(f64),
}

/// How stage-1 and stage-2 scores combine into the final score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RescoreMode {
    /// Stage-2 score alone (the baseline).
    SecondOnly,
    /// Elementwise product of the two stage scores.
    Product,
}

/// Configuration of the full proposal cascade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposerConfig {
    pub anchor_cfg: AnchorConfig,
    /// Anchor labeling for stage-1 training.
    pub rpn_sampling: SamplingCriterion,
    /// Proposal labeling for stage-2 training.
    pub frcn_sampling: SamplingCriterion,
    /// Stage-1 proposals harvested per image.
    pub primitive_k: usize,
    pub output: OutputRule,
    /// Suppression threshold for the cascade output (the stricter policy).
    pub nms_thr: f64,
    /// Suppression threshold for stage-1 primitive harvesting; looser, to
    /// keep candidate diversity for the second stage.
    pub rpn_nms_thr: f64,
    pub rescore: RescoreMode,
    /// Suppress before applying the output rule (the default) or after.
    pub nms_first: bool,
    pub rpn_train: TrainHyper,
    pub frcn_train: TrainHyper,
    /// (batch size, positive fraction) for stage-1 anchor sampling.
    pub rpn_batch: (usize, f64),
    /// (batch size, positive fraction) for stage-2 roi sampling.
    pub frcn_batch: (usize, f64),
    /// Box-regression loss weight.
    pub lambda: f64,
    /// Boxes with a side below this are dropped as degenerate.
    pub min_side: f64,
    pub backbone_channels: Vec<usize>,
    pub roi_grid: usize,
    pub fc_dim: usize,
}

impl Default for ProposerConfig {
    fn default() -> Self {
        Self {
            anchor_cfg: AnchorConfig::toy_64(),
            rpn_sampling: SamplingCriterion { pos_thr: 0.7, neg_thr: 0.3, force_best_match: true },
            frcn_sampling: SamplingCriterion { pos_thr: 0.7, neg_thr: 0.3, force_best_match: false },
            primitive_k: 2000,
            output: OutputRule::Budget(300),
            nms_thr: 0.6,
            rpn_nms_thr: 0.7,
            rescore: RescoreMode::SecondOnly,
            nms_first: true,
            rpn_train: TrainHyper::new(24, 0.02),
            frcn_train: TrainHyper::new(20, 0.01),
            rpn_batch: (128, 0.5),
            frcn_batch: (64, 0.25),
            lambda: 1.0,
            min_side: 2.0,
            backbone_channels: alloc::vec![8, 16, 32],
            roi_grid: 4,
            fc_dim: 64,
        }
    }
}

impl ProposerConfig {
    pub fn validate(&self) -> Result<()> {
        self.anchor_cfg.validate()?;
        self.rpn_sampling.validate()?;
        self.frcn_sampling.validate()?;
        if let OutputRule::Budget(b) = self.output {
            if self.primitive_k < b {
                return Err(Error::InvalidConfig {
                    field: "primitive_k",
                    message: alloc::format!("must be ≥ output budget ({b}), got {}", self.primitive_k),
                });
            }
        }
        if !(0.0..=1.0).contains(&self.nms_thr) {
            return Err(Error::InvalidConfig { field: "nms_thr", message: "must lie in [0, 1]".into() });
        }
        if !(0.0..=1.0).contains(&self.rpn_nms_thr) {
            return Err(Error::InvalidConfig { field: "rpn_nms_thr", message: "must lie in [0, 1]".into() });
        }
        let pools = self.backbone_channels.len() as u32;
        if self.anchor_cfg.stride != (1usize << pools) {
            return Err(Error::InvalidConfig {
                field: "anchor_cfg.stride",
                message: alloc::format!("must equal backbone stride {}", 1usize << pools),
            });
        }
        Ok(())
    }

}

/// Stage-1 model: per-anchor objectness plus anchor regression heads on the
/// shared feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct RPNModel {
    pub net: Network,
    pub anchor_cfg: AnchorConfig,
    /// Mean loss per epoch.
    pub loss_curve: Vec<f64>,
}

/// Stage-2 model: binary object-vs-rest head with box refinement over
/// roi-pooled features.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryFRCNModel {
    pub net: Network,
    pub loss_curve: Vec<f64>,
    /// Images skipped because every proposal fell in the ignore band.
    pub skipped_images: usize,
}

/// One cascade proposal with both stage scores retained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub bbox: BBox,
    /// Final score under the configured rescore mode.
    pub score: f64,
    pub stage1: f64,
    pub stage2: Option<f64>,
}

impl ProposalRecord {
    pub fn to_scored(&self) -> ScoredBox {
        ScoredBox::new(self.bbox, self.score)
    }
}

/// Per-image proposal lists, aligned with the dataset sample order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProposalSet {
    pub per_image: Vec<Vec<ProposalRecord>>,
}

impl ProposalSet {
    pub fn scored_boxes(&self) -> Vec<Vec<ScoredBox>> {
        self.per_image.iter().map(|v| v.iter().map(ProposalRecord::to_scored).collect()).collect()
    }
}

fn rpn_spec(cfg: &ProposerConfig) -> NetSpec {
    let per_site = cfg.anchor_cfg.per_site();
    let last = *cfg.backbone_channels.last().expect("nonempty backbone");
    NetSpec {
        input: alloc::vec![3, cfg.anchor_cfg.image_h, cfg.anchor_cfg.image_w],
        trunk: backbone_spec(3, &cfg.backbone_channels),
        heads: alloc::vec![
            HeadSpec {
                name: "cls".into(),
                layers: alloc::vec![LayerSpec::Conv {
                    name: "rpn_cls".into(),
                    in_ch: last,
                    out_ch: 2 * per_site,
                    ksize: 1,
                    stride: 1,
                    pad: 0,
                    init: Init::Gaussian(0.01),
                }],
            },
            HeadSpec {
                name: "bbox".into(),
                layers: alloc::vec![LayerSpec::Conv {
                    name: "rpn_bbox".into(),
                    in_ch: last,
                    out_ch: 4 * per_site,
                    ksize: 1,
                    stride: 1,
                    pad: 0,
                    init: Init::Gaussian(0.01),
                }],
            },
        ],
    }
}

/// Roi-pooled trunk shared by every region-classification net in the crate:
/// backbone → roi-pool → flatten → two fc+relu stages.
pub fn frcn_trunk_spec(image_h: usize, image_w: usize, channels: &[usize], grid: usize, fc_dim: usize) -> Vec<LayerSpec> {
    let mut trunk = backbone_spec(3, channels);
    let stride = 1usize << channels.len();
    let last = *channels.last().expect("nonempty backbone");
    let _ = (image_h, image_w);
    trunk.push(LayerSpec::RoiPool { name: "roipool".into(), grid, stride });
    trunk.push(LayerSpec::Flatten { name: "flatten".into() });
    trunk.push(LayerSpec::Fc { name: "fc1".into(), in_dim: last * grid * grid, out_dim: fc_dim, init: Init::He });
    trunk.push(LayerSpec::Relu { name: "relu_fc1".into() });
    trunk.push(LayerSpec::Fc { name: "fc2".into(), in_dim: fc_dim, out_dim: fc_dim, init: Init::He });
    trunk.push(LayerSpec::Relu { name: "relu_fc2".into() });
    trunk
}

/// Fc head attached to the frcn trunk.
pub fn fc_head(name: &str, fc_dim: usize, out_dim: usize, sigma: f64) -> HeadSpec {
    HeadSpec {
        name: name.into(),
        layers: alloc::vec![LayerSpec::Fc {
            name: alloc::format!("{name}_fc"),
            in_dim: fc_dim,
            out_dim,
            init: Init::Gaussian(sigma),
        }],
    }
}

fn binary_frcn_spec(cfg: &ProposerConfig) -> NetSpec {
    NetSpec {
        input: alloc::vec![3, cfg.anchor_cfg.image_h, cfg.anchor_cfg.image_w],
        trunk: frcn_trunk_spec(
            cfg.anchor_cfg.image_h,
            cfg.anchor_cfg.image_w,
            &cfg.backbone_channels,
            cfg.roi_grid,
            cfg.fc_dim,
        ),
        heads: alloc::vec![fc_head("cls", cfg.fc_dim, 2, 0.01), fc_head("bbox", cfg.fc_dim, 4, 0.001)],
    }
}

/// Extracts the 2-way logits of anchor `a_local` at feature cell `(gy, gx)`.
fn anchor_logits(cls: &Tensor, a_local: usize, gy: usize, gx: usize) -> [f64; 2] {
    let (h, w) = (cls.shape()[1], cls.shape()[2]);
    let at = |ch: usize| cls.data()[(ch * h + gy) * w + gx];
    [at(2 * a_local), at(2 * a_local + 1)]
}

fn anchor_regression(bbox: &Tensor, a_local: usize, gy: usize, gx: usize) -> RegressionTarget {
    let (h, w) = (bbox.shape()[1], bbox.shape()[2]);
    let at = |ch: usize| bbox.data()[(ch * h + gy) * w + gx];
    RegressionTarget::new(at(4 * a_local), at(4 * a_local + 1), at(4 * a_local + 2), at(4 * a_local + 3))
}

/// Trains the stage-1 region network on anchor objectness and regression.
///
/// Fails with the offending image ids when any image that has ground truth
/// ends up without a single positive anchor.
pub fn train_rpn(train: &DetDataset, cfg: &ProposerConfig, seed: u64) -> Result<RPNModel> {
    cfg.validate()?;
    if train.samples.is_empty() {
        return Err(Error::MissingDependency { what: "nonempty training set".into() });
    }
    let grid = generate_anchors(&cfg.anchor_cfg)?;
    let per_site = grid.per_site;
    let gw = cfg.anchor_cfg.grid_w();

    // anchors and ground truth are fixed, so labels are computed once
    let mut assignments = Vec::with_capacity(train.samples.len());
    let mut unmatched_images = Vec::new();
    for (i, sample) in train.samples.iter().enumerate() {
        let gts: Vec<BBox> = sample.gts.iter().map(|(b, _)| *b).collect();
        let assign = assign_labels(&grid.anchors, &gts, &cfg.rpn_sampling)?;
        if !gts.is_empty() && assign.positives().is_empty() {
            unmatched_images.push(i);
        }
        assignments.push(assign);
    }
    if !unmatched_images.is_empty() {
        return Err(Error::NoPositives { image_ids: unmatched_images });
    }

    let mut net = Network::init(&rpn_spec(cfg), &mut rngutil::substream(seed, 0))?;
    let mut shuffle_rng = rngutil::substream(seed, 1);
    let mut batch_rng = rngutil::substream(seed, 2);

    let mut loss_curve = Vec::with_capacity(cfg.rpn_train.epochs);
    let mut order: Vec<usize> = (0..train.samples.len()).collect();
    for epoch in 0..cfg.rpn_train.epochs {
        let lr = cfg.rpn_train.lr_at(epoch);
        rngutil::shuffle(&mut shuffle_rng, &mut order);
        let mut epoch_loss = 0.0;
        for &img in &order {
            let sample = &train.samples[img];
            let assign = &assignments[img];
            let batch = match sample_minibatch(assign, cfg.rpn_batch.0, cfg.rpn_batch.1, &mut batch_rng) {
                Ok(b) => b,
                Err(Error::EmptyBatch) => continue,
                Err(e) => return Err(e),
            };

            let trace = net.forward_trace(&sample.image, None)?;
            let cls_out = &trace.outputs["cls"];
            let bbox_out = &trace.outputs["bbox"];
            let mut cls_grad = Tensor::zeros(cls_out.shape());
            let mut bbox_grad = Tensor::zeros(bbox_out.shape());
            let (fh, fw) = (cls_out.shape()[1], cls_out.shape()[2]);

            let positives: Vec<usize> =
                batch.iter().copied().filter(|&ai| matches!(assign.labels[ai], Label::Positive(_))).collect();
            let n = batch.len() as f64;
            let np = positives.len().max(1) as f64;

            let mut cls_loss = 0.0;
            for &ai in &batch {
                let site = ai / per_site;
                let a_local = ai % per_site;
                let (gy, gx) = (site / gw, site % gw);
                let target = usize::from(matches!(assign.labels[ai], Label::Positive(_)));
                let logits = anchor_logits(cls_out, a_local, gy, gx);
                let (loss, g) = softmax_xent(&logits, target)?;
                cls_loss += loss / n;
                for (k, gv) in g.iter().enumerate() {
                    cls_grad.data_mut()[((2 * a_local + k) * fh + gy) * fw + gx] += gv / n;
                }
            }

            let mut bbox_loss = 0.0;
            for &ai in &positives {
                let Label::Positive(gt_idx) = assign.labels[ai] else { unreachable!() };
                let site = ai / per_site;
                let a_local = ai % per_site;
                let (gy, gx) = (site / gw, site % gw);
                let target = encode(&grid.anchors[ai], &sample.gts[gt_idx].0)?;
                let pred = anchor_regression(bbox_out, a_local, gy, gx);
                let (loss, g) = smooth_l1(&pred, &target);
                bbox_loss += loss / np;
                for (k, gv) in g.iter().enumerate() {
                    bbox_grad.data_mut()[((4 * a_local + k) * fh + gy) * fw + gx] += cfg.lambda * gv / np;
                }
            }

            let mut grads = alloc::collections::BTreeMap::new();
            grads.insert("cls".into(), cls_grad);
            grads.insert("bbox".into(), bbox_grad);
            net.zero_grads();
            net.backward(&trace, &grads)?;
            net.sgd_step(lr, cfg.rpn_train.momentum, cfg.rpn_train.weight_decay)?;
            epoch_loss += cls_loss + cfg.lambda * bbox_loss;
        }
        loss_curve.push(epoch_loss / train.samples.len() as f64);
    }

    Ok(RPNModel { net, anchor_cfg: cfg.anchor_cfg.clone(), loss_curve })
}

/// Decodes, clips, drops degenerate boxes, suppresses and returns the top-k
/// stage-1 proposals of one image by objectness.
pub fn rpn_propose(model: &RPNModel, image: &Tensor, k: usize, cfg: &ProposerConfig) -> Result<Vec<ScoredBox>> {
    if k == 0 {
        return Err(Error::InvalidConfig { field: "k", message: "must be ≥ 1".into() });
    }
    let grid = generate_anchors(&model.anchor_cfg)?;
    let outputs = model.net.forward(image, None)?;
    let cls = &outputs["cls"];
    let bbox = &outputs["bbox"];
    let per_site = grid.per_site;
    let gw = model.anchor_cfg.grid_w();
    let (img_w, img_h) = (model.anchor_cfg.image_w as f64, model.anchor_cfg.image_h as f64);

    let mut candidates = Vec::with_capacity(grid.anchors.len());
    for (ai, anchor) in grid.anchors.iter().enumerate() {
        let site = ai / per_site;
        let a_local = ai % per_site;
        let (gy, gx) = (site / gw, site % gw);
        let logits = anchor_logits(cls, a_local, gy, gx);
        let score = softmax(&logits)[1];
        let t = anchor_regression(bbox, a_local, gy, gx);
        // an extreme regression output can overflow exp(); such boxes are
        // simply dropped rather than failing the whole image
        let Ok(decoded) = decode(anchor, &t) else { continue };
        let clipped = clip_to_image(&decoded, img_w, img_h);
        if clipped.width() < cfg.min_side || clipped.height() < cfg.min_side {
            continue;
        }
        candidates.push(ScoredBox::new(clipped, score));
    }
    let kept = nms(&candidates, cfg.rpn_nms_thr)?;
    Ok(kept.into_iter().take(k).map(|i| candidates[i]).collect())
}

/// Harvests stage-1 proposals for every image of a dataset.
pub fn rpn_propose_all(model: &RPNModel, dataset: &DetDataset, k: usize, cfg: &ProposerConfig) -> Result<Vec<Vec<ScoredBox>>> {
    dataset.samples.iter().map(|s| rpn_propose(model, &s.image, k, cfg)).collect()
}

/// Trains the stage-2 binary classifier on stage-1 proposals.
pub fn train_binary_frcn(
    train: &DetDataset,
    primitives: &[Vec<ScoredBox>],
    cfg: &ProposerConfig,
    seed: u64,
) -> Result<BinaryFRCNModel> {
    cfg.validate()?;
    if primitives.len() != train.samples.len() {
        return Err(Error::MissingDependency {
            what: alloc::format!(
                "primitives covering the train set ({} lists for {} images)",
                primitives.len(),
                train.samples.len()
            ),
        });
    }

    let mut assignments = Vec::with_capacity(train.samples.len());
    let mut skipped_images = 0usize;
    for (sample, props) in train.samples.iter().zip(primitives.iter()) {
        let cands: Vec<BBox> = props.iter().map(|p| p.bbox).collect();
        let gts: Vec<BBox> = sample.gts.iter().map(|(b, _)| *b).collect();
        let assign = assign_labels(&cands, &gts, &cfg.frcn_sampling)?;
        if assign.positives().is_empty() && assign.negatives().is_empty() {
            skipped_images += 1;
            assignments.push(None);
        } else {
            assignments.push(Some(assign));
        }
    }

    let mut net = Network::init(&binary_frcn_spec(cfg), &mut rngutil::substream(seed, 0))?;
    let mut shuffle_rng = rngutil::substream(seed, 1);
    let mut batch_rng = rngutil::substream(seed, 2);

    let mut loss_curve = Vec::with_capacity(cfg.frcn_train.epochs);
    let mut order: Vec<usize> = (0..train.samples.len()).collect();
    for epoch in 0..cfg.frcn_train.epochs {
        let lr = cfg.frcn_train.lr_at(epoch);
        rngutil::shuffle(&mut shuffle_rng, &mut order);
        let mut epoch_loss = 0.0;
        for &img in &order {
            let Some(assign) = &assignments[img] else { continue };
            let sample = &train.samples[img];
            let props = &primitives[img];
            let batch = match sample_minibatch(assign, cfg.frcn_batch.0, cfg.frcn_batch.1, &mut batch_rng) {
                Ok(b) => b,
                Err(Error::EmptyBatch) => continue,
                Err(e) => return Err(e),
            };
            let (img_w, img_h) = (cfg.anchor_cfg.image_w as f64, cfg.anchor_cfg.image_h as f64);
            let rois: Vec<BBox> =
                batch.iter().map(|&i| pad_roi_for_pooling(&props[i].bbox, img_w, img_h)).collect();

            let trace = net.forward_trace(&sample.image, Some(&rois))?;
            let cls_out = &trace.outputs["cls"];
            let bbox_out = &trace.outputs["bbox"];
            let mut cls_grad = Tensor::zeros(cls_out.shape());
            let mut bbox_grad = Tensor::zeros(bbox_out.shape());
            let n = batch.len() as f64;
            let n_pos = batch.iter().filter(|&&i| matches!(assign.labels[i], Label::Positive(_))).count().max(1) as f64;

            let mut cls_loss = 0.0;
            let mut bbox_loss = 0.0;
            for (ri, &ci) in batch.iter().enumerate() {
                let is_pos = matches!(assign.labels[ci], Label::Positive(_));
                let (loss, g) = softmax_xent(cls_out.row(ri), usize::from(is_pos))?;
                cls_loss += loss / n;
                for (k, gv) in g.iter().enumerate() {
                    cls_grad.row_mut(ri)[k] = gv / n;
                }
                if let Label::Positive(gt_idx) = assign.labels[ci] {
                    let target = encode(&props[ci].bbox, &sample.gts[gt_idx].0)?;
                    let row = bbox_out.row(ri);
                    let pred = RegressionTarget::new(row[0], row[1], row[2], row[3]);
                    let (loss, g) = smooth_l1(&pred, &target);
                    bbox_loss += loss / n_pos;
                    for (k, gv) in g.iter().enumerate() {
                        bbox_grad.row_mut(ri)[k] = cfg.lambda * gv / n_pos;
                    }
                }
            }

            let mut grads = alloc::collections::BTreeMap::new();
            grads.insert("cls".into(), cls_grad);
            grads.insert("bbox".into(), bbox_grad);
            net.zero_grads();
            net.backward(&trace, &grads)?;
            net.sgd_step(lr, cfg.frcn_train.momentum, cfg.frcn_train.weight_decay)?;
            epoch_loss += cls_loss + cfg.lambda * bbox_loss;
        }
        loss_curve.push(epoch_loss / train.samples.len() as f64);
    }

    Ok(BinaryFRCNModel { net, loss_curve, skipped_images })
}

/// Runs stage-2 on a list of candidate boxes: re-score, refine, suppress and
/// cut to the configured output.
fn stage2_pipeline(
    frcn: &BinaryFRCNModel,
    image: &Tensor,
    candidates: &[ScoredBox],
    cfg: &ProposerConfig,
) -> Result<Vec<ProposalRecord>> {
    let (img_w, img_h) = (cfg.anchor_cfg.image_w as f64, cfg.anchor_cfg.image_h as f64);
    let mut records: Vec<ProposalRecord> = Vec::with_capacity(candidates.len());
    if !candidates.is_empty() {
        let rois: Vec<BBox> =
            candidates.iter().map(|c| pad_roi_for_pooling(&c.bbox, img_w, img_h)).collect();
        let outputs = frcn.net.forward(image, Some(&rois))?;
        let cls = &outputs["cls"];
        let bbox = &outputs["bbox"];
        for (ri, cand) in candidates.iter().enumerate() {
            let s2 = softmax(cls.row(ri))[1];
            let row = bbox.row(ri);
            let t = RegressionTarget::new(row[0], row[1], row[2], row[3]);
            let Ok(refined) = decode(&cand.bbox, &t) else { continue };
            let clipped = clip_to_image(&refined, img_w, img_h);
            if clipped.width() < cfg.min_side || clipped.height() < cfg.min_side {
                continue;
            }
            let score = match cfg.rescore {
                RescoreMode::SecondOnly => s2,
                RescoreMode::Product => cand.score * s2,
            };
            records.push(ProposalRecord { bbox: clipped, score, stage1: cand.score, stage2: Some(s2) });
        }
    }

    let cut = |records: Vec<ProposalRecord>| -> Result<Vec<ProposalRecord>> {
        match cfg.output {
            OutputRule::Budget(b) => Ok(records.into_iter().take(b).collect()),
            OutputRule::ScoreThr(t) => Ok(records.into_iter().filter(|r| r.score >= t).collect()),
        }
    };
    let suppress = |records: Vec<ProposalRecord>| -> Result<Vec<ProposalRecord>> {
        let scored: Vec<ScoredBox> = records.iter().map(ProposalRecord::to_scored).collect();
        let kept = nms(&scored, cfg.nms_thr)?;
        Ok(kept.into_iter().map(|i| records[i]).collect())
    };

    // sort by final score before cutting so Budget means "top-k"
    records.sort_by(|a, b| b.score.total_cmp(&a.score));
    if cfg.nms_first {
        cut(suppress(records)?)
    } else {
        suppress(cut(records)?)
    }
}

/// Full cascade on one image: stage-1 primitives, stage-2 re-scoring and
/// refinement, suppression, output rule.
pub fn cascade_propose(
    rpn: &RPNModel,
    frcn: &BinaryFRCNModel,
    image: &Tensor,
    cfg: &ProposerConfig,
) -> Result<Vec<ProposalRecord>> {
    let primitives = rpn_propose(rpn, image, cfg.primitive_k, cfg)?;
    stage2_pipeline(frcn, image, &primitives, cfg)
}

/// Cascade over a whole dataset.
pub fn cascade_propose_all(
    rpn: &RPNModel,
    frcn: &BinaryFRCNModel,
    dataset: &DetDataset,
    cfg: &ProposerConfig,
) -> Result<ProposalSet> {
    let per_image = dataset
        .samples
        .iter()
        .map(|s| cascade_propose(rpn, frcn, &s.image, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProposalSet { per_image })
}

/// Merges proposals from several sources, deduplicates near-identical boxes
/// (IoU > 0.95, higher score wins) and runs them through stage-2.
pub fn fuse_proposals(
    sources: &[Vec<ScoredBox>],
    frcn: &BinaryFRCNModel,
    image: &Tensor,
    cfg: &ProposerConfig,
) -> Result<Vec<ProposalRecord>> {
    if sources.is_empty() {
        return Err(Error::MissingDependency { what: "at least one proposal source".into() });
    }
    let merged: Vec<ScoredBox> = sources.iter().flatten().copied().collect();
    let kept = nms(&merged, 0.95)?;
    let deduped: Vec<ScoredBox> = kept.into_iter().map(|i| merged[i]).collect();
    stage2_pipeline(frcn, image, &deduped, cfg)
}

/// Seeds for the sub-streams a proposer training run consumes.
pub mod seeds {
    pub const RPN: u64 = 0x5250;
    pub const FRCN: u64 = 0x4652;
}

/// Derives the stage seed for proposer training from a master seed.
pub fn stage_seed(master: u64, stage: u64) -> u64 {
    rngutil::derive_seed(master, stage)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate_dataset, DatasetConfig};

    fn small_cfg() -> ProposerConfig {
        ProposerConfig {
            rpn_train: TrainHyper::new(1, 0.01),
            frcn_train: TrainHyper::new(1, 0.01),
            ..ProposerConfig::default()
        }
    }

    fn small_dataset(n: usize, seed: u64) -> DetDataset {
        generate_dataset(&DatasetConfig { n_images: n, seed, ..DatasetConfig::craft_toy6(0, 0) }, "train").unwrap()
    }

    #[test]
    fn rpn_training_smoke() {
        let ds = small_dataset(5, 3);
        let cfg = small_cfg();
        let model = train_rpn(&ds, &cfg, 7).unwrap();
        assert_eq!(model.loss_curve.len(), 1);
        assert!(model.loss_curve[0].is_finite());
    }

    #[test]
    fn rpn_training_is_deterministic() {
        let ds = small_dataset(3, 3);
        let cfg = small_cfg();
        let a = train_rpn(&ds, &cfg, 7).unwrap();
        let b = train_rpn(&ds, &cfg, 7).unwrap();
        assert_eq!(a.net, b.net);
        let c = train_rpn(&ds, &cfg, 8).unwrap();
        assert_ne!(a.net, c.net);
    }

    #[test]
    fn untrained_rpn_still_proposes_valid_boxes() {
        let ds = small_dataset(2, 5);
        let cfg = small_cfg();
        let model = RPNModel {
            net: Network::init(&rpn_spec(&cfg), &mut rngutil::substream(1, 0)).unwrap(),
            anchor_cfg: cfg.anchor_cfg.clone(),
            loss_curve: Vec::new(),
        };
        let props = rpn_propose(&model, &ds.samples[0].image, 50, &cfg).unwrap();
        assert!(!props.is_empty() && props.len() <= 50);
        for p in &props {
            assert!(p.bbox.x1 >= 0.0 && p.bbox.x2 <= 64.0);
            assert!(p.bbox.width() >= cfg.min_side && p.bbox.height() >= cfg.min_side);
            assert!((0.0..=1.0).contains(&p.score));
        }
        // descending score order and k=1 gives the single best
        for w in props.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
        let top = rpn_propose(&model, &ds.samples[0].image, 1, &cfg).unwrap();
        assert_eq!(top[0], props[0]);
        // no two proposals overlap beyond the nms threshold
        for i in 0..props.len() {
            for j in 0..i {
                assert!(crate::geometry::iou(&props[i].bbox, &props[j].bbox) <= cfg.rpn_nms_thr + 1e-12);
            }
        }
    }

    #[test]
    fn binary_frcn_smoke_and_determinism() {
        let ds = small_dataset(3, 9);
        let cfg = small_cfg();
        let rpn = train_rpn(&ds, &cfg, 7).unwrap();
        let prims = rpn_propose_all(&rpn, &ds, cfg.primitive_k, &cfg).unwrap();
        let a = train_binary_frcn(&ds, &prims, &cfg, 11).unwrap();
        let b = train_binary_frcn(&ds, &prims, &cfg, 11).unwrap();
        assert_eq!(a.net, b.net);
        assert_eq!(a.loss_curve.len(), 1);
    }

    #[test]
    fn gt_primitives_have_no_negatives_and_train_gracefully() {
        let ds = small_dataset(3, 9);
        let cfg = small_cfg();
        let prims: Vec<Vec<ScoredBox>> = ds
            .samples
            .iter()
            .map(|s| s.gts.iter().map(|(b, _)| ScoredBox::new(*b, 1.0)).collect())
            .collect();
        let model = train_binary_frcn(&ds, &prims, &cfg, 1).unwrap();
        assert_eq!(model.skipped_images, 0);
        assert!(model.loss_curve[0].is_finite());
    }

    #[test]
    fn cascade_respects_budget_and_budget_monotonicity() {
        let ds = small_dataset(3, 13);
        let cfg = small_cfg();
        let rpn = train_rpn(&ds, &cfg, 7).unwrap();
        let prims = rpn_propose_all(&rpn, &ds, cfg.primitive_k, &cfg).unwrap();
        let frcn = train_binary_frcn(&ds, &prims, &cfg, 11).unwrap();

        let budget_n = ProposerConfig { output: OutputRule::Budget(30), ..cfg.clone() };
        let full = cascade_propose(&rpn, &frcn, &ds.samples[0].image, &budget_n).unwrap();
        assert!(full.len() <= 30);
        for w in full.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
        let budget_m = ProposerConfig { output: OutputRule::Budget(10), ..cfg.clone() };
        let small = cascade_propose(&rpn, &frcn, &ds.samples[0].image, &budget_m).unwrap();
        assert_eq!(&full[..small.len().min(10)], &small[..]);
    }

    #[test]
    fn score_threshold_above_one_gives_empty_set() {
        let ds = small_dataset(2, 13);
        let cfg = small_cfg();
        let rpn = train_rpn(&ds, &cfg, 7).unwrap();
        let prims = rpn_propose_all(&rpn, &ds, cfg.primitive_k, &cfg).unwrap();
        let frcn = train_binary_frcn(&ds, &prims, &cfg, 11).unwrap();
        let cfg_thr = ProposerConfig { output: OutputRule::ScoreThr(1.0 + 1e-9), ..cfg };
        let set = cascade_propose(&rpn, &frcn, &ds.samples[0].image, &cfg_thr).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn fusing_a_duplicated_source_changes_nothing() {
        let ds = small_dataset(2, 17);
        let cfg = small_cfg();
        let rpn = train_rpn(&ds, &cfg, 7).unwrap();
        let prims = rpn_propose_all(&rpn, &ds, cfg.primitive_k, &cfg).unwrap();
        let frcn = train_binary_frcn(&ds, &prims, &cfg, 11).unwrap();

        let src = prims[0].clone();
        let single = fuse_proposals(&[src.clone()], &frcn, &ds.samples[0].image, &cfg).unwrap();
        let doubled = fuse_proposals(&[src.clone(), src.clone()], &frcn, &ds.samples[0].image, &cfg).unwrap();
        assert_eq!(single, doubled);

        // a single source equals plain stage-2 on that source
        let direct = stage2_pipeline(&frcn, &ds.samples[0].image, &src, &cfg).unwrap();
        assert_eq!(single, direct);
    }

    #[test]
    fn product_rescore_multiplies_scores() {
        let ds = small_dataset(2, 19);
        let cfg = small_cfg();
        let rpn = train_rpn(&ds, &cfg, 7).unwrap();
        let prims = rpn_propose_all(&rpn, &ds, cfg.primitive_k, &cfg).unwrap();
        let frcn = train_binary_frcn(&ds, &prims, &cfg, 11).unwrap();
        let cfg_prod = ProposerConfig { rescore: RescoreMode::Product, ..cfg };
        let set = cascade_propose(&rpn, &frcn, &ds.samples[0].image, &cfg_prod).unwrap();
        for r in &set {
            let s2 = r.stage2.unwrap();
            assert!((r.score - r.stage1 * s2).abs() < 1e-12);
        }
    }
}
