//! Finite-difference verification of analytic gradients.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::geometry::BBox;
use crate::tinynet::net::Network;
use crate::tinynet::tensor::Tensor;
use crate::Result;

/// Outcome of a gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Max of `|a−n| / max(|a|, |n|, 1e−8)` over checked parameters.
    pub max_rel_err: f64,
    pub checked: usize,
    /// Parameters whose ±ε perturbation flipped a relu input sign; excluded
    /// because the loss is not differentiable there.
    pub skipped_kink: usize,
}

/// Compares analytic parameter gradients against central finite differences.
///
/// `loss_fn` maps head outputs to a scalar loss and the gradients to feed
/// back into each head. Frozen parameters are not checked. Intended for
/// small networks (≤ ~1e4 parameters); cost is two forward passes per
/// parameter element.
pub fn grad_check<F>(
    net: &mut Network,
    input: &Tensor,
    rois: Option<&[BBox]>,
    loss_fn: F,
    epsilon: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&BTreeMap<String, Tensor>) -> Result<(f64, BTreeMap<String, Tensor>)>,
{
    let trace = net.forward_trace(input, rois)?;
    let (_, head_grads) = loss_fn(&trace.outputs)?;
    net.zero_grads();
    net.backward(&trace, &head_grads)?;
    let analytic: Vec<(String, Vec<f64>, bool)> = net
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.grad.data().to_vec(), p.frozen))
        .collect();

    let mut max_rel_err = 0.0_f64;
    let mut checked = 0;
    let mut skipped_kink = 0;

    for (pi, (_, grads, frozen)) in analytic.iter().enumerate() {
        if *frozen {
            continue;
        }
        for ei in 0..grads.len() {
            let orig = net.params()[pi].value.data()[ei];

            net.params_mut()[pi].value.data_mut()[ei] = orig + epsilon;
            let trace_hi = net.forward_trace(input, rois)?;
            let (loss_hi, _) = loss_fn(&trace_hi.outputs)?;

            net.params_mut()[pi].value.data_mut()[ei] = orig - epsilon;
            let trace_lo = net.forward_trace(input, rois)?;
            let (loss_lo, _) = loss_fn(&trace_lo.outputs)?;

            net.params_mut()[pi].value.data_mut()[ei] = orig;

            if trace_hi.relu_signature() != trace_lo.relu_signature() {
                skipped_kink += 1;
                continue;
            }

            let numeric = (loss_hi - loss_lo) / (2.0 * epsilon);
            let a = grads[ei];
            let rel = crate::fmath::abs(a - numeric) / crate::fmath::abs(a).max(crate::fmath::abs(numeric)).max(1e-8);
            if rel > max_rel_err {
                max_rel_err = rel;
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport { max_rel_err, checked, skipped_kink })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rngutil::rng_from_seed;
    use crate::tinynet::layers::{Init, LayerSpec};
    use crate::tinynet::net::{HeadSpec, NetSpec};

    fn linear_spec() -> NetSpec {
        NetSpec {
            input: alloc::vec![1, 6],
            trunk: alloc::vec![LayerSpec::Fc { name: "fc1".into(), in_dim: 6, out_dim: 4, init: Init::He }],
            heads: alloc::vec![HeadSpec {
                name: "out".into(),
                layers: alloc::vec![LayerSpec::Fc { name: "out_fc".into(), in_dim: 4, out_dim: 3, init: Init::He }],
            }],
        }
    }

    fn quadratic_loss(outputs: &BTreeMap<String, Tensor>) -> Result<(f64, BTreeMap<String, Tensor>)> {
        let y = &outputs["out"];
        let loss = 0.5 * y.data().iter().map(|v| v * v).sum::<f64>();
        let mut grads = BTreeMap::new();
        grads.insert("out".into(), y.clone());
        Ok((loss, grads))
    }

    #[test]
    fn linear_net_quadratic_loss_is_near_exact() {
        let mut net = Network::init(&linear_spec(), &mut rng_from_seed(4)).unwrap();
        let input = Tensor::from_vec(&[1, 6], alloc::vec![0.3, -0.8, 1.2, 0.05, -0.4, 0.9]).unwrap();
        let report = grad_check(&mut net, &input, None, quadratic_loss, 1e-4).unwrap();
        assert_eq!(report.skipped_kink, 0);
        assert!(report.checked > 0);
        assert!(report.max_rel_err < 1e-7, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        // negative control: a wrong analytic gradient must blow the check up
        let mut net = Network::init(&linear_spec(), &mut rng_from_seed(4)).unwrap();
        let input = Tensor::from_vec(&[1, 6], alloc::vec![0.3, -0.8, 1.2, 0.05, -0.4, 0.9]).unwrap();
        let skewed = |outputs: &BTreeMap<String, Tensor>| -> Result<(f64, BTreeMap<String, Tensor>)> {
            let (loss, mut grads) = quadratic_loss(outputs)?;
            for g in grads.get_mut("out").unwrap().data_mut() {
                *g = *g * 3.0 + 0.7;
            }
            Ok((loss, grads))
        };
        let report = grad_check(&mut net, &input, None, skewed, 1e-4).unwrap();
        assert!(report.max_rel_err > 1e-1, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn frozen_params_are_not_checked() {
        let net = Network::init(&linear_spec(), &mut rng_from_seed(4)).unwrap();
        let mut frozen = net.clone_with_frozen(&["fc1".into()], &[], &mut rng_from_seed(0)).unwrap();
        let input = Tensor::from_vec(&[1, 6], alloc::vec![0.3, -0.8, 1.2, 0.05, -0.4, 0.9]).unwrap();
        let report = grad_check(&mut frozen, &input, None, quadratic_loss, 1e-4).unwrap();
        // only the head's weight and bias remain
        assert_eq!(report.checked, 4 * 3 + 3);
    }
}
