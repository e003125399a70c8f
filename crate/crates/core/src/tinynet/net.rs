//! Layer graphs with named parameter sets and named output heads.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::rngutil::Rng;
use crate::tinynet::layers::{Cache, Init, Layer, LayerSpec, Param};
use crate::tinynet::tensor::Tensor;
use crate::{Error, Result};

/// Declarative head description: a name plus the layer producing its output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

/// Serializable architecture description. Checkpoints embed this as text so
/// a network can be rebuilt before its parameters are restored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    /// Expected input shape (channels, height, width).
    pub input: Vec<usize>,
    pub trunk: Vec<LayerSpec>,
    pub heads: Vec<HeadSpec>,
}

/// One named output branch.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub name: String,
    pub layers: Vec<Layer>,
}

/// An ordered layer stack with named heads branching from the trunk output.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetSpec,
    trunk: Vec<Layer>,
    heads: Vec<Head>,
}

/// Forward bookkeeping: every activation plus per-layer routing caches.
pub struct Trace {
    /// `acts[0]` is the input; `acts[i + 1]` is trunk layer `i`'s output.
    acts: Vec<Tensor>,
    caches: Vec<Cache>,
    /// Per head: activations (input is the trunk output) and caches.
    head_acts: Vec<Vec<Tensor>>,
    head_caches: Vec<Vec<Cache>>,
    pub outputs: BTreeMap<String, Tensor>,
}

impl Trace {
    /// Concatenated relu masks in execution order; two traces with equal
    /// masks saw no activation cross a relu kink.
    pub fn relu_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for c in self.caches.iter().chain(self.head_caches.iter().flatten()) {
            if let Cache::Relu(mask) = c {
                sig.extend_from_slice(mask);
            }
        }
        sig
    }
}

impl Network {
    /// Builds and initializes a network from its spec. Trunk weights follow
    /// each layer's declared init; biases start at zero.
    pub fn init(spec: &NetSpec, rng: &mut Rng) -> Result<Self> {
        if spec.heads.is_empty() {
            return Err(Error::InvalidConfig { field: "heads", message: "a network needs at least one head".into() });
        }
        let mut names = alloc::collections::BTreeSet::new();
        for l in spec.trunk.iter().chain(spec.heads.iter().flat_map(|h| &h.layers)) {
            if !names.insert(l.name().to_string()) {
                return Err(Error::InvalidConfig {
                    field: "layers",
                    message: alloc::format!("duplicate layer name `{}`", l.name()),
                });
            }
        }
        let trunk = spec.trunk.iter().map(|l| Layer::build(l, rng)).collect();
        let heads = spec
            .heads
            .iter()
            .map(|h| Head { name: h.name.clone(), layers: h.layers.iter().map(|l| Layer::build(l, rng)).collect() })
            .collect();
        Ok(Self { spec: spec.clone(), trunk, heads })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn trunk_layer_names(&self) -> Vec<&str> {
        self.trunk.iter().map(|l| l.name()).collect()
    }

    pub fn head_names(&self) -> Vec<&str> {
        self.heads.iter().map(|h| h.name.as_str()).collect()
    }

    /// All parameters in declaration order (trunk first, then heads).
    pub fn params(&self) -> Vec<&Param> {
        self.trunk
            .iter()
            .chain(self.heads.iter().flat_map(|h| &h.layers))
            .flat_map(|l| &l.params)
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.trunk
            .iter_mut()
            .chain(self.heads.iter_mut().flat_map(|h| &mut h.layers))
            .flat_map(|l| &mut l.params)
            .collect()
    }

    /// Replaces parameter values in declaration order; shapes must match.
    pub fn load_params(&mut self, values: &[(String, Tensor, bool)]) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != values.len() {
            return Err(Error::ShapeMismatch {
                context: "load_params count",
                expected: alloc::vec![params.len()],
                got: alloc::vec![values.len()],
            });
        }
        for (p, (name, value, frozen)) in params.iter_mut().zip(values.iter()) {
            if p.name != *name || p.value.shape() != value.shape() {
                return Err(Error::ShapeMismatch {
                    context: "load_params entry",
                    expected: p.value.shape().to_vec(),
                    got: value.shape().to_vec(),
                });
            }
            p.value = value.clone();
            p.frozen = *frozen;
            let shape = p.value.shape().to_vec();
            p.grad = Tensor::zeros(&shape);
            p.vel = Tensor::zeros(&shape);
        }
        Ok(())
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape() != self.spec.input.as_slice() {
            return Err(Error::ShapeMismatch {
                context: "network input",
                expected: self.spec.input.clone(),
                got: input.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn wants_rois(&self) -> bool {
        self.spec
            .trunk
            .iter()
            .chain(self.spec.heads.iter().flat_map(|h| &h.layers))
            .any(|l| matches!(l, LayerSpec::RoiPool { .. }))
    }

    /// Runs the network, returning one tensor per head.
    pub fn forward(&self, input: &Tensor, rois: Option<&[BBox]>) -> Result<BTreeMap<String, Tensor>> {
        Ok(self.forward_trace(input, rois)?.outputs)
    }

    /// Runs the network keeping every activation for a later backward pass.
    pub fn forward_trace(&self, input: &Tensor, rois: Option<&[BBox]>) -> Result<Trace> {
        self.check_input(input)?;
        if self.wants_rois() != rois.is_some() {
            return Err(Error::Usage(if rois.is_some() {
                "rois supplied to a network without a roi-pool layer".into()
            } else {
                "this network contains a roi-pool layer and requires rois".into()
            }));
        }
        let mut acts = Vec::with_capacity(self.trunk.len() + 1);
        let mut caches = Vec::with_capacity(self.trunk.len());
        acts.push(input.clone());
        for layer in &self.trunk {
            let (out, cache) = layer.forward(acts.last().unwrap(), rois)?;
            acts.push(out);
            caches.push(cache);
        }
        let trunk_out = acts.last().unwrap().clone();
        let mut head_acts = Vec::with_capacity(self.heads.len());
        let mut head_caches = Vec::with_capacity(self.heads.len());
        let mut outputs = BTreeMap::new();
        for head in &self.heads {
            let mut h_acts = alloc::vec![trunk_out.clone()];
            let mut h_caches = Vec::with_capacity(head.layers.len());
            for layer in &head.layers {
                let (out, cache) = layer.forward(h_acts.last().unwrap(), rois)?;
                h_acts.push(out);
                h_caches.push(cache);
            }
            outputs.insert(head.name.clone(), h_acts.last().unwrap().clone());
            head_acts.push(h_acts);
            head_caches.push(h_caches);
        }
        Ok(Trace { acts, caches, head_acts, head_caches, outputs })
    }

    /// Backpropagates per-head output gradients, accumulating into parameter
    /// gradient slots. Heads missing from `head_grads` are treated as zero.
    /// Backpropagation stops early once every layer below is frozen.
    pub fn backward(&mut self, trace: &Trace, head_grads: &BTreeMap<String, Tensor>) -> Result<()> {
        let trunk_out_shape = trace.acts.last().unwrap().shape().to_vec();
        let mut trunk_grad = Tensor::zeros(&trunk_out_shape);

        let lowest_trainable = self.trunk.iter().position(|l| l.has_trainable());
        let trunk_needs_grad = lowest_trainable.is_some();

        for (hi, head) in self.heads.iter_mut().enumerate() {
            let Some(g) = head_grads.get(&head.name) else { continue };
            let mut grad = g.clone();
            for (li, layer) in head.layers.iter_mut().enumerate().rev() {
                let want_dx = li > 0 || trunk_needs_grad;
                let input = &trace.head_acts[hi][li];
                let cache = &trace.head_caches[hi][li];
                match layer.backward(input, cache, &grad, want_dx)? {
                    Some(dx) => grad = dx,
                    None => break,
                }
                if li == 0 {
                    for (t, s) in trunk_grad.data_mut().iter_mut().zip(grad.data().iter()) {
                        *t += s;
                    }
                }
            }
            if head.layers.is_empty() {
                for (t, s) in trunk_grad.data_mut().iter_mut().zip(grad.data().iter()) {
                    *t += s;
                }
            }
        }

        let Some(lowest) = lowest_trainable else { return Ok(()) };
        let mut grad = trunk_grad;
        for li in (0..self.trunk.len()).rev() {
            if li < lowest {
                break;
            }
            let want_dx = li > lowest;
            let layer = &mut self.trunk[li];
            match layer.backward(&trace.acts[li], &trace.caches[li], &grad, want_dx)? {
                Some(dx) => grad = dx,
                None => break,
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            for g in p.grad.data_mut() {
                *g = 0.0;
            }
        }
    }

    /// One SGD-with-momentum step over all trainable parameters:
    /// `v ← momentum·v − lr·(g + weight_decay·w)`, `w ← w + v`.
    pub fn sgd_step(&mut self, lr: f64, momentum: f64, weight_decay: f64) -> Result<()> {
        for p in self.params_mut() {
            if p.frozen {
                continue;
            }
            let mut bad = false;
            let w = p.value.data_mut();
            let g = p.grad.data();
            let v = p.vel.data_mut();
            for i in 0..w.len() {
                v[i] = momentum * v[i] - lr * (g[i] + weight_decay * w[i]);
                w[i] += v[i];
                bad |= !w[i].is_finite();
            }
            if bad {
                return Err(Error::NonFinite { layer: p.name.clone() });
            }
        }
        Ok(())
    }

    /// Clones the network, freezing the named prefix of trunk layers and
    /// optionally replacing the heads with freshly initialized ones.
    ///
    /// `frozen_prefix` must equal the leading trunk layer names exactly.
    /// With no new heads the clone is functional: identical forward outputs.
    pub fn clone_with_frozen(
        &self,
        frozen_prefix: &[String],
        new_heads: &[HeadSpec],
        rng: &mut Rng,
    ) -> Result<Network> {
        if frozen_prefix.len() > self.trunk.len() {
            return Err(Error::UnknownLayer(alloc::format!(
                "frozen prefix of {} layers exceeds trunk of {}",
                frozen_prefix.len(),
                self.trunk.len()
            )));
        }
        for (want, have) in frozen_prefix.iter().zip(self.trunk.iter()) {
            if want != have.name() {
                return Err(Error::UnknownLayer(want.clone()));
            }
        }
        let mut out = self.clone();
        for p in out.params_mut() {
            let shape = p.value.shape().to_vec();
            p.grad = Tensor::zeros(&shape);
            p.vel = Tensor::zeros(&shape);
            p.frozen = false;
        }
        for (li, layer) in out.trunk.iter_mut().enumerate() {
            layer.set_frozen(li < frozen_prefix.len());
        }
        if !new_heads.is_empty() {
            out.spec.heads = new_heads.to_vec();
            out.heads = new_heads
                .iter()
                .map(|h| Head { name: h.name.clone(), layers: h.layers.iter().map(|l| Layer::build(l, rng)).collect() })
                .collect();
        }
        Ok(out)
    }

    /// Marks every parameter (trunk and heads) frozen.
    pub fn freeze_all(&mut self) {
        for p in self.params_mut() {
            p.frozen = true;
        }
    }
}

/// Builds the shared toy backbone: `channels.len()` blocks of
/// 3×3 conv (same padding) → relu → 2×2 maxpool. On 64×64 inputs with three
/// blocks this yields stride-8 feature maps.
pub fn backbone_spec(in_ch: usize, channels: &[usize]) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    let mut prev = in_ch;
    for (i, &ch) in channels.iter().enumerate() {
        let n = i + 1;
        layers.push(LayerSpec::Conv {
            name: alloc::format!("conv{n}"),
            in_ch: prev,
            out_ch: ch,
            ksize: 3,
            stride: 1,
            pad: 1,
            init: Init::He,
        });
        layers.push(LayerSpec::Relu { name: alloc::format!("relu{n}") });
        layers.push(LayerSpec::MaxPool2 { name: alloc::format!("pool{n}") });
        prev = ch;
    }
    layers
}
