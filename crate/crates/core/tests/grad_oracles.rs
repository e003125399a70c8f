//! Finite-difference gradient verification of the full toy backbone and every
//! head/loss type used by the cascades.

use std::collections::BTreeMap;

use cascadet::geometry::{BBox, RegressionTarget};
use cascadet::rngutil::{rng_from_seed, uniform_in};
use cascadet::tinynet::{
    backbone_spec, binary_xent_sum, grad_check, smooth_l1, softmax_xent, HeadSpec, Init, LayerSpec, NetSpec,
    Network, Tensor,
};

fn random_input(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = rng_from_seed(seed);
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = uniform_in(&mut rng, 0.0, 1.0);
    }
    t
}

/// The full toy backbone (3×3 convs 8→16→32 with relu+pool) with
/// sliding-window style 1×1 conv heads, checked end to end.
#[test]
fn backbone_with_conv_heads_passes_grad_check() {
    let spec = NetSpec {
        input: vec![3, 16, 16],
        trunk: backbone_spec(3, &[8, 16, 32]),
        heads: vec![
            HeadSpec {
                name: "cls".into(),
                layers: vec![LayerSpec::Conv {
                    name: "cls_conv".into(),
                    in_ch: 32,
                    out_ch: 4,
                    ksize: 1,
                    stride: 1,
                    pad: 0,
                    init: Init::Gaussian(0.05),
                }],
            },
            HeadSpec {
                name: "bbox".into(),
                layers: vec![LayerSpec::Conv {
                    name: "bbox_conv".into(),
                    in_ch: 32,
                    out_ch: 8,
                    ksize: 1,
                    stride: 1,
                    pad: 0,
                    init: Init::Gaussian(0.05),
                }],
            },
        ],
    };
    let mut net = Network::init(&spec, &mut rng_from_seed(12)).unwrap();
    let input = random_input(&[3, 16, 16], 3);

    // softmax objectness over the first two cls channels of cell (0, 0),
    // plus smooth-L1 on one bbox cell group
    let loss_fn = |outputs: &BTreeMap<String, Tensor>| -> cascadet::Result<(f64, BTreeMap<String, Tensor>)> {
        let cls = &outputs["cls"];
        let bbox = &outputs["bbox"];
        let (h, w) = (cls.shape()[1], cls.shape()[2]);
        let logits = [cls.data()[0], cls.data()[h * w]];
        let (l1, g1) = softmax_xent(&logits, 1)?;

        let pred = RegressionTarget::new(bbox.data()[0], bbox.data()[h * w], bbox.data()[2 * h * w], bbox.data()[3 * h * w]);
        let target = RegressionTarget::new(0.1, -0.2, 0.3, 0.05);
        let (l2, g2) = smooth_l1(&pred, &target);

        let mut cls_grad = Tensor::zeros(cls.shape());
        cls_grad.data_mut()[0] = g1[0];
        cls_grad.data_mut()[h * w] = g1[1];
        let mut bbox_grad = Tensor::zeros(bbox.shape());
        for k in 0..4 {
            bbox_grad.data_mut()[k * h * w] = g2[k];
        }
        let mut grads = BTreeMap::new();
        grads.insert("cls".into(), cls_grad);
        grads.insert("bbox".into(), bbox_grad);
        Ok((l1 + l2, grads))
    };

    let report = grad_check(&mut net, &input, None, loss_fn, 1e-4).unwrap();
    assert!(report.checked > 5000, "only checked {}", report.checked);
    assert!(
        report.max_rel_err < 1e-3,
        "max rel err {} over {} params ({} kink-skipped)",
        report.max_rel_err,
        report.checked,
        report.skipped_kink
    );
}

/// Roi-pooled head path with all three loss types: (N+1)-way softmax,
/// sum of N binary cross-entropies, and smooth-L1 regression.
#[test]
fn roi_head_with_every_loss_type_passes_grad_check() {
    let n = 3usize; // classes
    let spec = NetSpec {
        input: vec![3, 16, 16],
        trunk: {
            let mut t = backbone_spec(3, &[4, 8]);
            t.push(LayerSpec::RoiPool { name: "roipool".into(), grid: 4, stride: 4 });
            t.push(LayerSpec::Flatten { name: "flatten".into() });
            t.push(LayerSpec::Fc { name: "fc1".into(), in_dim: 8 * 16, out_dim: 24, init: Init::He });
            t.push(LayerSpec::Relu { name: "relu_fc1".into() });
            t.push(LayerSpec::Fc { name: "fc2".into(), in_dim: 24, out_dim: 24, init: Init::He });
            t.push(LayerSpec::Relu { name: "relu_fc2".into() });
            t
        },
        heads: vec![
            HeadSpec {
                name: "cls".into(),
                layers: vec![LayerSpec::Fc { name: "cls_fc".into(), in_dim: 24, out_dim: n + 1, init: Init::Gaussian(0.05) }],
            },
            HeadSpec {
                name: "ovr".into(),
                layers: vec![LayerSpec::Fc { name: "ovr_fc".into(), in_dim: 24, out_dim: 2 * n, init: Init::Gaussian(0.05) }],
            },
            HeadSpec {
                name: "bbox".into(),
                layers: vec![LayerSpec::Fc { name: "bbox_fc".into(), in_dim: 24, out_dim: 4 * n, init: Init::Gaussian(0.05) }],
            },
        ],
    };
    let mut net = Network::init(&spec, &mut rng_from_seed(21)).unwrap();
    let input = random_input(&[3, 16, 16], 7);
    let rois = vec![
        BBox::new(1.0, 1.0, 12.0, 12.0).unwrap(),
        BBox::new(4.0, 6.0, 15.0, 14.0).unwrap(),
    ];

    let loss_fn = |outputs: &BTreeMap<String, Tensor>| -> cascadet::Result<(f64, BTreeMap<String, Tensor>)> {
        use cascadet::tinynet::BinaryLabel::{Neg, Pos};
        let cls = &outputs["cls"];
        let ovr = &outputs["ovr"];
        let bbox = &outputs["bbox"];
        let mut total = 0.0;
        let mut cls_grad = Tensor::zeros(cls.shape());
        let mut ovr_grad = Tensor::zeros(ovr.shape());
        let mut bbox_grad = Tensor::zeros(bbox.shape());

        // roi 0: multi-class + regression of class 1
        let (l, g) = softmax_xent(cls.row(0), 2)?;
        total += l;
        cls_grad.row_mut(0).copy_from_slice(&g);
        let row = bbox.row(0);
        let pred = RegressionTarget::new(row[4], row[5], row[6], row[7]);
        let (l, g) = smooth_l1(&pred, &RegressionTarget::new(0.2, 0.1, -0.1, 0.3));
        total += l;
        for k in 0..4 {
            bbox_grad.row_mut(0)[4 + k] = g[k];
        }

        // roi 1: sum of binary one-vs-rest losses
        let ovr_row = Tensor::from_vec(&[n, 2], ovr.row(1).to_vec())?;
        let (l, g) = binary_xent_sum(&ovr_row, &[Pos, Neg, Neg])?;
        total += l;
        ovr_grad.row_mut(1).copy_from_slice(g.data());

        let mut grads = BTreeMap::new();
        grads.insert("cls".into(), cls_grad);
        grads.insert("ovr".into(), ovr_grad);
        grads.insert("bbox".into(), bbox_grad);
        Ok((total, grads))
    };

    let report = grad_check(&mut net, &input, Some(&rois), loss_fn, 1e-4).unwrap();
    assert!(report.checked > 3000, "only checked {}", report.checked);
    assert!(
        report.max_rel_err < 1e-3,
        "max rel err {} over {} params ({} kink-skipped)",
        report.max_rel_err,
        report.checked,
        report.skipped_kink
    );
}

/// Frozen-prefix nets only check the trainable remainder, and it passes.
#[test]
fn frozen_prefix_grad_check_covers_heads_only() {
    let spec = NetSpec {
        input: vec![1, 8, 8],
        trunk: backbone_spec(1, &[4]),
        heads: vec![HeadSpec {
            name: "out".into(),
            layers: vec![LayerSpec::Conv {
                name: "out_conv".into(),
                in_ch: 4,
                out_ch: 2,
                ksize: 1,
                stride: 1,
                pad: 0,
                init: Init::Gaussian(0.05),
            }],
        }],
    };
    let net = Network::init(&spec, &mut rng_from_seed(5)).unwrap();
    let mut frozen = net
        .clone_with_frozen(&["conv1".into(), "relu1".into(), "pool1".into()], &[], &mut rng_from_seed(0))
        .unwrap();
    let input = random_input(&[1, 8, 8], 11);
    let loss_fn = |outputs: &BTreeMap<String, Tensor>| -> cascadet::Result<(f64, BTreeMap<String, Tensor>)> {
        let y = &outputs["out"];
        let loss = 0.5 * y.data().iter().map(|v| v * v).sum::<f64>();
        let mut grads = BTreeMap::new();
        grads.insert("out".into(), y.clone());
        Ok((loss, grads))
    };
    let report = grad_check(&mut frozen, &input, None, loss_fn, 1e-4).unwrap();
    assert_eq!(report.checked + report.skipped_kink, 4 * 2 + 2);
    assert!(report.max_rel_err < 1e-3, "max rel err {}", report.max_rel_err);
}
