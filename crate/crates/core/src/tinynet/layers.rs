//! The closed layer set: convolution, relu, 2×2 max pooling, RoI pooling,
//! flatten and fully-connected, each with explicit forward/backward kernels.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::fmath;
use crate::geometry::BBox;
use crate::rngutil::{self, Rng};
use crate::tinynet::tensor::Tensor;
use crate::{Error, Result};

/// A named parameter tensor with its gradient and momentum slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub vel: Tensor,
    pub frozen: bool,
}

impl Param {
    fn new(name: String, value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Self { name, value, grad: Tensor::zeros(&shape), vel: Tensor::zeros(&shape), frozen: false }
    }
}

/// Weight initialization for a layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Gaussian with σ = √(2 / fan_in); the default for trunk layers feeding
    /// relu activations.
    He,
    /// Gaussian with a fixed σ; used for freshly attached heads.
    Gaussian(f64),
}

/// Declarative layer description. Networks are built from (and serialized as)
/// lists of these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv { name: String, in_ch: usize, out_ch: usize, ksize: usize, stride: usize, pad: usize, init: Init },
    Relu { name: String },
    MaxPool2 { name: String },
    /// Pools each RoI to a `grid`×`grid` patch by max over the feature cells
    /// whose centers fall in each bin; `stride` maps feature cells to image
    /// pixels. Empty bins produce 0.
    RoiPool { name: String, grid: usize, stride: usize },
    Flatten { name: String },
    Fc { name: String, in_dim: usize, out_dim: usize, init: Init },
}

impl LayerSpec {
    pub fn name(&self) -> &str {
        match self {
            LayerSpec::Conv { name, .. }
            | LayerSpec::Relu { name }
            | LayerSpec::MaxPool2 { name }
            | LayerSpec::RoiPool { name, .. }
            | LayerSpec::Flatten { name }
            | LayerSpec::Fc { name, .. } => name,
        }
    }
}

fn gaussian_tensor(shape: &[usize], sigma: f64, rng: &mut Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = sigma * rngutil::normal01(rng);
    }
    t
}

/// A layer instance carrying its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    /// `[weight, bias]` for conv/fc, empty otherwise.
    pub params: Vec<Param>,
}

/// Per-layer forward bookkeeping consumed by the backward pass. Activations
/// themselves are kept by the caller; caches hold only routing information.
#[derive(Debug, Clone)]
pub enum Cache {
    None,
    /// input-positive mask, one bool per element.
    Relu(Vec<bool>),
    /// flat input index of each pooled maximum.
    MaxPool2 { argmax: Vec<u32>, in_shape: [usize; 3] },
    /// flat input index per output cell, `u32::MAX` for empty bins.
    RoiPool { argmax: Vec<u32>, in_shape: [usize; 3] },
    /// input shape before flattening.
    Flatten(Vec<usize>),
}

impl Layer {
    pub fn build(spec: &LayerSpec, rng: &mut Rng) -> Layer {
        let params = match spec {
            LayerSpec::Conv { name, in_ch, out_ch, ksize, init, .. } => {
                let fan_in = in_ch * ksize * ksize;
                let sigma = match init {
                    Init::He => fmath::sqrt(2.0 / fan_in as f64),
                    Init::Gaussian(s) => *s,
                };
                vec![
                    Param::new(
                        alloc::format!("{name}.w"),
                        gaussian_tensor(&[*out_ch, *in_ch, *ksize, *ksize], sigma, rng),
                    ),
                    Param::new(alloc::format!("{name}.b"), Tensor::zeros(&[*out_ch])),
                ]
            }
            LayerSpec::Fc { name, in_dim, out_dim, init } => {
                let sigma = match init {
                    Init::He => fmath::sqrt(2.0 / *in_dim as f64),
                    Init::Gaussian(s) => *s,
                };
                vec![
                    Param::new(alloc::format!("{name}.w"), gaussian_tensor(&[*in_dim, *out_dim], sigma, rng)),
                    Param::new(alloc::format!("{name}.b"), Tensor::zeros(&[*out_dim])),
                ]
            }
            _ => Vec::new(),
        };
        Layer { spec: spec.clone(), params }
    }

    pub fn name(&self) -> &str {
        self.spec.name()
    }

    pub fn is_frozen(&self) -> bool {
        !self.params.is_empty() && self.params.iter().all(|p| p.frozen)
    }

    pub fn has_trainable(&self) -> bool {
        self.params.iter().any(|p| !p.frozen)
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        for p in &mut self.params {
            p.frozen = frozen;
        }
    }

    pub fn forward(&self, input: &Tensor, rois: Option<&[BBox]>) -> Result<(Tensor, Cache)> {
        let out = match &self.spec {
            LayerSpec::Conv { in_ch, out_ch, ksize, stride, pad, .. } => {
                let (out, cache) =
                    conv_forward(input, &self.params[0].value, &self.params[1].value, *in_ch, *out_ch, *ksize, *stride, *pad, self.name())?;
                (out, cache)
            }
            LayerSpec::Relu { .. } => {
                let mut out = input.clone();
                let mask: Vec<bool> = input.data().iter().map(|&v| v > 0.0).collect();
                for v in out.data_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                (out, Cache::Relu(mask))
            }
            LayerSpec::MaxPool2 { .. } => maxpool2_forward(input, self.name())?,
            LayerSpec::RoiPool { grid, stride, .. } => {
                let rois = rois.ok_or(Error::Usage(alloc::format!(
                    "layer `{}` requires rois but none were supplied",
                    self.name()
                )))?;
                roipool_forward(input, rois, *grid, *stride, self.name())?
            }
            LayerSpec::Flatten { .. } => {
                let shape = input.shape().to_vec();
                let flat = if shape.len() <= 1 {
                    input.reshaped(&[1, input.len()])?
                } else {
                    let rows = shape[0];
                    input.reshaped(&[rows, input.len() / rows.max(1)])?
                };
                (flat, Cache::Flatten(shape))
            }
            LayerSpec::Fc { in_dim, out_dim, .. } => {
                fc_forward(input, &self.params[0].value, &self.params[1].value, *in_dim, *out_dim, self.name())?
            }
        };
        if !out.0.all_finite() {
            return Err(Error::NonFinite { layer: self.name().into() });
        }
        Ok(out)
    }

    /// Accumulates parameter gradients and, when `compute_dx` is set, returns
    /// the gradient with respect to the layer input.
    pub fn backward(
        &mut self,
        input: &Tensor,
        cache: &Cache,
        grad_out: &Tensor,
        compute_dx: bool,
    ) -> Result<Option<Tensor>> {
        match (&self.spec, cache) {
            (LayerSpec::Conv { in_ch, out_ch, ksize, stride, pad, .. }, Cache::None) => {
                let (in_ch, out_ch, ksize, stride, pad) = (*in_ch, *out_ch, *ksize, *stride, *pad);
                let trainable = !self.params[0].frozen;
                let (w, b) = self.params.split_at_mut(1);
                let Param { value: wval, grad: wgrad, .. } = &mut w[0];
                let bgrad = &mut b[0].grad;
                conv_backward(
                    input,
                    wval,
                    if trainable { Some(wgrad.data_mut()) } else { None },
                    if trainable { Some(bgrad.data_mut()) } else { None },
                    grad_out,
                    in_ch,
                    out_ch,
                    ksize,
                    stride,
                    pad,
                    compute_dx,
                )
            }
            (LayerSpec::Relu { .. }, Cache::Relu(mask)) => {
                if !compute_dx {
                    return Ok(None);
                }
                let mut dx = grad_out.clone();
                for (v, &m) in dx.data_mut().iter_mut().zip(mask.iter()) {
                    if !m {
                        *v = 0.0;
                    }
                }
                Ok(Some(dx))
            }
            (LayerSpec::MaxPool2 { .. }, Cache::MaxPool2 { argmax, in_shape }) => {
                if !compute_dx {
                    return Ok(None);
                }
                let mut dx = Tensor::zeros(in_shape);
                for (o, &src) in argmax.iter().enumerate() {
                    dx.data_mut()[src as usize] += grad_out.data()[o];
                }
                Ok(Some(dx))
            }
            (LayerSpec::RoiPool { .. }, Cache::RoiPool { argmax, in_shape }) => {
                if !compute_dx {
                    return Ok(None);
                }
                let mut dx = Tensor::zeros(in_shape);
                for (o, &src) in argmax.iter().enumerate() {
                    if src != u32::MAX {
                        dx.data_mut()[src as usize] += grad_out.data()[o];
                    }
                }
                Ok(Some(dx))
            }
            (LayerSpec::Flatten { .. }, Cache::Flatten(in_shape)) => {
                if !compute_dx {
                    return Ok(None);
                }
                Ok(Some(grad_out.reshaped(in_shape)?))
            }
            (LayerSpec::Fc { in_dim, out_dim, .. }, Cache::None) => {
                let (in_dim, out_dim) = (*in_dim, *out_dim);
                let trainable = !self.params[0].frozen;
                let (w, b) = self.params.split_at_mut(1);
                let Param { value: wval, grad: wgrad, .. } = &mut w[0];
                let bgrad = &mut b[0].grad;
                fc_backward(
                    input,
                    wval,
                    if trainable { Some(wgrad.data_mut()) } else { None },
                    if trainable { Some(bgrad.data_mut()) } else { None },
                    grad_out,
                    in_dim,
                    out_dim,
                    compute_dx,
                )
            }
            _ => Err(Error::Usage(alloc::format!("cache/layer mismatch at `{}`", self.name()))),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    in_ch: usize,
    out_ch: usize,
    k: usize,
    stride: usize,
    pad: usize,
    name: &str,
) -> Result<(Tensor, Cache)> {
    let shape = input.shape();
    if shape.len() != 3 || shape[0] != in_ch {
        return Err(Error::ShapeMismatch {
            context: "conv input",
            expected: vec![in_ch, 0, 0],
            got: shape.to_vec(),
        });
    }
    let (h, w) = (shape[1], shape[2]);
    if h + 2 * pad < k || w + 2 * pad < k {
        return Err(Error::ShapeMismatch { context: "conv kernel exceeds padded input", expected: vec![k, k], got: vec![h, w] });
    }
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros(&[out_ch, oh, ow]);
    let x = input.data();
    let wt = weight.data();
    let od = out.data_mut();

    for oc in 0..out_ch {
        let out_plane = &mut od[oc * oh * ow..(oc + 1) * oh * ow];
        let b = bias.data()[oc];
        for v in out_plane.iter_mut() {
            *v = b;
        }
        for ic in 0..in_ch {
            let in_plane = &x[ic * h * w..(ic + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = wt[((oc * in_ch + ic) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    if stride == 1 {
                        // iy = oy + ky − pad must land in [0, h)
                        let oy_lo = pad.saturating_sub(ky);
                        let oy_hi = (h + pad - ky).min(oh);
                        let ox_lo = pad.saturating_sub(kx);
                        let ox_hi = (w + pad - kx).min(ow);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = oy + ky - pad;
                            let in_row = &in_plane[iy * w + (ox_lo + kx - pad)..iy * w + (ox_hi - 1 + kx - pad) + 1];
                            let out_row = &mut out_plane[oy * ow + ox_lo..oy * ow + ox_hi];
                            for (o, &i) in out_row.iter_mut().zip(in_row.iter()) {
                                *o += wv * i;
                            }
                        }
                    } else {
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy as usize >= h {
                                continue;
                            }
                            for ox in 0..ow {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix as usize >= w {
                                    continue;
                                }
                                out_plane[oy * ow + ox] += wv * in_plane[iy as usize * w + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    let _ = name;
    Ok((out, Cache::None))
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &Tensor,
    weight: &Tensor,
    mut dw: Option<&mut [f64]>,
    mut db: Option<&mut [f64]>,
    grad_out: &Tensor,
    in_ch: usize,
    out_ch: usize,
    k: usize,
    stride: usize,
    pad: usize,
    compute_dx: bool,
) -> Result<Option<Tensor>> {
    let (h, w) = (input.shape()[1], input.shape()[2]);
    let (oh, ow) = (grad_out.shape()[1], grad_out.shape()[2]);
    let x = input.data();
    let wt = weight.data();
    let dy = grad_out.data();
    let mut dx = compute_dx.then(|| Tensor::zeros(&[in_ch, h, w]));

    for oc in 0..out_ch {
        let dy_plane = &dy[oc * oh * ow..(oc + 1) * oh * ow];
        if let Some(db) = db.as_deref_mut() {
            db[oc] += dy_plane.iter().sum::<f64>();
        }
        for ic in 0..in_ch {
            let in_plane = &x[ic * h * w..(ic + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let widx = ((oc * in_ch + ic) * k + ky) * k + kx;
                    let wv = wt[widx];
                    let mut dw_acc = 0.0;
                    if stride == 1 {
                        let oy_lo = pad.saturating_sub(ky);
                        let oy_hi = (h + pad - ky).min(oh);
                        let ox_lo = pad.saturating_sub(kx);
                        let ox_hi = (w + pad - kx).min(ow);
                        if ox_lo < ox_hi {
                            let span = ox_hi - ox_lo;
                            // ix0 = ox_lo + kx − pad is ≥ 0 by choice of ox_lo
                            let ix0 = ox_lo + kx - pad;
                            for oy in oy_lo..oy_hi {
                                let iy = oy + ky - pad;
                                let ibase = iy * w + ix0;
                                let in_row = &in_plane[ibase..ibase + span];
                                let dy_row = &dy_plane[oy * ow + ox_lo..oy * ow + ox_hi];
                                if dw.is_some() {
                                    let mut acc = 0.0;
                                    for (&g, &i) in dy_row.iter().zip(in_row.iter()) {
                                        acc += g * i;
                                    }
                                    dw_acc += acc;
                                }
                                if let Some(dx) = dx.as_mut() {
                                    let dx_row = &mut dx.data_mut()[ic * h * w + ibase..ic * h * w + ibase + span];
                                    for (d, &g) in dx_row.iter_mut().zip(dy_row.iter()) {
                                        *d += wv * g;
                                    }
                                }
                            }
                        }
                    } else {
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy as usize >= h {
                                continue;
                            }
                            for ox in 0..ow {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix as usize >= w {
                                    continue;
                                }
                                let g = dy_plane[oy * ow + ox];
                                dw_acc += g * in_plane[iy as usize * w + ix as usize];
                                if let Some(dx) = dx.as_mut() {
                                    dx.data_mut()[(ic * h + iy as usize) * w + ix as usize] += wv * g;
                                }
                            }
                        }
                    }
                    if let Some(dw) = dw.as_deref_mut() {
                        dw[widx] += dw_acc;
                    }
                }
            }
        }
    }
    Ok(dx)
}

fn maxpool2_forward(input: &Tensor, name: &str) -> Result<(Tensor, Cache)> {
    let shape = input.shape();
    if shape.len() != 3 || shape[1] % 2 != 0 || shape[2] % 2 != 0 {
        return Err(Error::ShapeMismatch {
            context: "maxpool2 input (C, even H, even W)",
            expected: vec![shape.first().copied().unwrap_or(0), 2, 2],
            got: shape.to_vec(),
        });
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let mut argmax = vec![0u32; c * oh * ow];
    let x = input.data();
    let od = out.data_mut();
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0u32;
                // fixed scan order: first maximum wins, deterministically
                for dy in 0..2 {
                    for dx_ in 0..2 {
                        let idx = (ch * h + oy * 2 + dy) * w + ox * 2 + dx_;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx as u32;
                        }
                    }
                }
                od[(ch * oh + oy) * ow + ox] = best;
                argmax[(ch * oh + oy) * ow + ox] = best_idx;
            }
        }
    }
    let _ = name;
    Ok((out, Cache::MaxPool2 { argmax, in_shape: [c, h, w] }))
}

fn roipool_forward(input: &Tensor, rois: &[BBox], grid: usize, stride: usize, _name: &str) -> Result<(Tensor, Cache)> {
    let shape = input.shape();
    if shape.len() != 3 {
        return Err(Error::ShapeMismatch { context: "roipool input", expected: vec![0, 0, 0], got: shape.to_vec() });
    }
    let (c, fh, fw) = (shape[0], shape[1], shape[2]);
    let r = rois.len();
    let mut out = Tensor::zeros(&[r, c, grid, grid]);
    let mut argmax = vec![u32::MAX; r * c * grid * grid];
    let x = input.data();
    let od = out.data_mut();

    // cell centers in image coordinates
    let s = stride as f64;
    for (ri, roi) in rois.iter().enumerate() {
        let bw = roi.width() / grid as f64;
        let bh = roi.height() / grid as f64;
        // map each feature cell to its bin (or none) for this roi
        let mut cell_bin = vec![usize::MAX; fh * fw];
        for fy in 0..fh {
            let cy = (fy as f64 + 0.5) * s;
            if cy < roi.y1 || cy >= roi.y2 || bh <= 0.0 {
                continue;
            }
            let gy = (((cy - roi.y1) / bh) as usize).min(grid - 1);
            for fx in 0..fw {
                let cx = (fx as f64 + 0.5) * s;
                if cx < roi.x1 || cx >= roi.x2 || bw <= 0.0 {
                    continue;
                }
                let gx = (((cx - roi.x1) / bw) as usize).min(grid - 1);
                cell_bin[fy * fw + fx] = gy * grid + gx;
            }
        }
        for ch in 0..c {
            let plane = &x[ch * fh * fw..(ch + 1) * fh * fw];
            let obase = (ri * c + ch) * grid * grid;
            for (cell, &bin) in cell_bin.iter().enumerate() {
                if bin == usize::MAX {
                    continue;
                }
                let oidx = obase + bin;
                let v = plane[cell];
                let src = (ch * fh * fw + cell) as u32;
                if argmax[oidx] == u32::MAX || v > od[oidx] {
                    od[oidx] = v;
                    argmax[oidx] = src;
                }
            }
        }
    }
    Ok((out, Cache::RoiPool { argmax, in_shape: [c, fh, fw] }))
}

fn fc_forward(input: &Tensor, weight: &Tensor, bias: &Tensor, in_dim: usize, out_dim: usize, _name: &str) -> Result<(Tensor, Cache)> {
    let shape = input.shape();
    if shape.len() != 2 || shape[1] != in_dim {
        return Err(Error::ShapeMismatch { context: "fc input", expected: vec![0, in_dim], got: shape.to_vec() });
    }
    let b = shape[0];
    let mut out = Tensor::zeros(&[b, out_dim]);
    let x = input.data();
    let wt = weight.data();
    let od = out.data_mut();
    for bi in 0..b {
        let x_row = &x[bi * in_dim..(bi + 1) * in_dim];
        let out_row = &mut od[bi * out_dim..(bi + 1) * out_dim];
        out_row.copy_from_slice(bias.data());
        for (i, &xi) in x_row.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let w_row = &wt[i * out_dim..(i + 1) * out_dim];
            for (o, &wv) in out_row.iter_mut().zip(w_row.iter()) {
                *o += xi * wv;
            }
        }
    }
    Ok((out, Cache::None))
}

#[allow(clippy::too_many_arguments)]
fn fc_backward(
    input: &Tensor,
    weight: &Tensor,
    mut dw: Option<&mut [f64]>,
    mut db: Option<&mut [f64]>,
    grad_out: &Tensor,
    in_dim: usize,
    out_dim: usize,
    compute_dx: bool,
) -> Result<Option<Tensor>> {
    let b = input.shape()[0];
    let x = input.data();
    let wt = weight.data();
    let dy = grad_out.data();
    let mut dx = compute_dx.then(|| Tensor::zeros(&[b, in_dim]));
    for bi in 0..b {
        let x_row = &x[bi * in_dim..(bi + 1) * in_dim];
        let dy_row = &dy[bi * out_dim..(bi + 1) * out_dim];
        if let Some(db) = db.as_deref_mut() {
            for (d, &g) in db.iter_mut().zip(dy_row.iter()) {
                *d += g;
            }
        }
        if let Some(dw) = dw.as_deref_mut() {
            for (i, &xi) in x_row.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let dw_row = &mut dw[i * out_dim..(i + 1) * out_dim];
                for (d, &g) in dw_row.iter_mut().zip(dy_row.iter()) {
                    *d += xi * g;
                }
            }
        }
        if let Some(dx) = dx.as_mut() {
            let dx_row = &mut dx.data_mut()[bi * in_dim..(bi + 1) * in_dim];
            for (i, dxi) in dx_row.iter_mut().enumerate() {
                let w_row = &wt[i * out_dim..(i + 1) * out_dim];
                let mut acc = 0.0;
                for (&g, &wv) in dy_row.iter().zip(w_row.iter()) {
                    acc += g * wv;
                }
                *dxi = acc;
            }
        }
    }
    Ok(dx)
}
