//! Layer set: dense, 3x3 convolution (pad 1), ReLU, sigmoid, 2x2 max pool,
//! nearest-neighbor 2x upsample, and channel concatenation with a recorded
//! skip activation.
//!
//! Layers operate on single-sample tensors: [features] for dense inputs and
//! [channels, rows, cols] for images. Batching is handled by the caller.

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense { w: Tensor, b: Tensor, in_f: usize, out_f: usize },
    /// Weights [out_ch, in_ch, 3, 3], zero padding 1, stride 1.
    Conv3x3 { w: Tensor, b: Tensor, in_ch: usize, out_ch: usize },
    ReLU,
    Sigmoid,
    MaxPool2,
    UpsampleNearest2,
    /// Concatenate the cached activation at the given activation index
    /// (0 = network input) after the current channels.
    SkipConcat(usize),
}

impl Layer {
    pub fn dense(in_f: usize, out_f: usize) -> Self {
        Layer::Dense { w: Tensor::zeros(&[out_f, in_f]), b: Tensor::zeros(&[out_f]), in_f, out_f }
    }

    pub fn conv3x3(in_ch: usize, out_ch: usize) -> Self {
        Layer::Conv3x3 {
            w: Tensor::zeros(&[out_ch, in_ch, 3, 3]),
            b: Tensor::zeros(&[out_ch]),
            in_ch,
            out_ch,
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense { w, b, .. } | Layer::Conv3x3 { w, b, .. } => vec![w, b],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense { w, b, .. } | Layer::Conv3x3 { w, b, .. } => vec![w, b],
            _ => vec![],
        }
    }

    /// Fan-in / fan-out for initialization.
    pub fn fans(&self) -> Option<(usize, usize)> {
        match self {
            Layer::Dense { in_f, out_f, .. } => Some((*in_f, *out_f)),
            Layer::Conv3x3 { in_ch, out_ch, .. } => Some((in_ch * 9, out_ch * 9)),
            _ => None,
        }
    }

    /// Forward one sample. `skip` supplies the cached activation for
    /// SkipConcat layers.
    pub fn forward(&self, input: &Tensor, skip: Option<&Tensor>) -> Result<Tensor> {
        match self {
            Layer::Dense { w, b, in_f, out_f } => {
                if input.shape() != [*in_f] {
                    return Err(Error::TensorShape(format!(
                        "dense expects [{in_f}], got {:?}",
                        input.shape()
                    )));
                }
                let x = input.data();
                let mut out = b.data().to_vec();
                let wd = w.data();
                for (o, out_v) in out.iter_mut().enumerate() {
                    let row = &wd[o * in_f..(o + 1) * in_f];
                    let mut acc = 0.0;
                    for (wi, xi) in row.iter().zip(x) {
                        acc += wi * xi;
                    }
                    *out_v += acc;
                }
                Tensor::new(vec![*out_f], out)
            }
            Layer::Conv3x3 { w, b, in_ch, out_ch } => {
                let (c, h, wd_) = image_shape(input)?;
                if c != *in_ch {
                    return Err(Error::TensorShape(format!("conv expects {in_ch} channels, got {c}")));
                }
                let mut out = vec![0.0f64; out_ch * h * wd_];
                conv3x3_forward(w.data(), b.data(), input.data(), &mut out, *in_ch, *out_ch, h, wd_);
                Tensor::new(vec![*out_ch, h, wd_], out)
            }
            Layer::ReLU => {
                let data = input.data().iter().map(|&v| v.max(0.0)).collect();
                Tensor::new(input.shape().to_vec(), data)
            }
            Layer::Sigmoid => {
                let data = input.data().iter().map(|&v| sigmoid(v)).collect();
                Tensor::new(input.shape().to_vec(), data)
            }
            Layer::MaxPool2 => {
                let (c, h, w) = image_shape(input)?;
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::TensorShape(format!("maxpool needs even dims, got {h}x{w}")));
                }
                let (oh, ow) = (h / 2, w / 2);
                let x = input.data();
                let mut out = vec![0.0f64; c * oh * ow];
                for ch in 0..c {
                    for r in 0..oh {
                        for cc in 0..ow {
                            let mut m = f64::NEG_INFINITY;
                            for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                let v = x[ch * h * w + (2 * r + dr) * w + 2 * cc + dc];
                                if v > m {
                                    m = v;
                                }
                            }
                            out[ch * oh * ow + r * ow + cc] = m;
                        }
                    }
                }
                Tensor::new(vec![c, oh, ow], out)
            }
            Layer::UpsampleNearest2 => {
                let (c, h, w) = image_shape(input)?;
                let (oh, ow) = (h * 2, w * 2);
                let x = input.data();
                let mut out = vec![0.0f64; c * oh * ow];
                for ch in 0..c {
                    for r in 0..h {
                        for cc in 0..w {
                            let v = x[ch * h * w + r * w + cc];
                            for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                out[ch * oh * ow + (2 * r + dr) * ow + 2 * cc + dc] = v;
                            }
                        }
                    }
                }
                Tensor::new(vec![c, oh, ow], out)
            }
            Layer::SkipConcat(_) => {
                let skip = skip.ok_or_else(|| Error::TensorShape("missing skip activation".into()))?;
                let (c1, h, w) = image_shape(input)?;
                let (c2, h2, w2) = image_shape(skip)?;
                if (h, w) != (h2, w2) {
                    return Err(Error::TensorShape(format!(
                        "skip concat spatial mismatch: {h}x{w} vs {h2}x{w2}"
                    )));
                }
                let mut data = Vec::with_capacity((c1 + c2) * h * w);
                data.extend_from_slice(input.data());
                data.extend_from_slice(skip.data());
                Tensor::new(vec![c1 + c2, h, w], data)
            }
        }
    }

    /// Backward one sample. Returns (input gradient, parameter gradients,
    /// optional skip gradient for SkipConcat).
    pub fn backward(
        &self,
        input: &Tensor,
        output: &Tensor,
        grad_out: &Tensor,
        skip: Option<&Tensor>,
    ) -> Result<(Tensor, Vec<Tensor>, Option<Tensor>)> {
        match self {
            Layer::Dense { w, in_f, out_f, .. } => {
                let x = input.data();
                let g = grad_out.data();
                let wd = w.data();
                let mut gw = vec![0.0f64; out_f * in_f];
                let mut gx = vec![0.0f64; *in_f];
                for o in 0..*out_f {
                    let go = g[o];
                    let row = &wd[o * in_f..(o + 1) * in_f];
                    let grow = &mut gw[o * in_f..(o + 1) * in_f];
                    for i in 0..*in_f {
                        grow[i] = go * x[i];
                        gx[i] += go * row[i];
                    }
                }
                Ok((
                    Tensor::new(vec![*in_f], gx)?,
                    vec![Tensor::new(vec![*out_f, *in_f], gw)?, Tensor::new(vec![*out_f], g.to_vec())?],
                    None,
                ))
            }
            Layer::Conv3x3 { w, in_ch, out_ch, .. } => {
                let (_, h, wd_) = image_shape(input)?;
                let mut gx = vec![0.0f64; in_ch * h * wd_];
                let mut gw = vec![0.0f64; out_ch * in_ch * 9];
                let mut gb = vec![0.0f64; *out_ch];
                conv3x3_backward(
                    w.data(),
                    input.data(),
                    grad_out.data(),
                    &mut gx,
                    &mut gw,
                    &mut gb,
                    *in_ch,
                    *out_ch,
                    h,
                    wd_,
                );
                Ok((
                    Tensor::new(vec![*in_ch, h, wd_], gx)?,
                    vec![Tensor::new(vec![*out_ch, *in_ch, 3, 3], gw)?, Tensor::new(vec![*out_ch], gb)?],
                    None,
                ))
            }
            Layer::ReLU => {
                let data = input
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                Ok((Tensor::new(input.shape().to_vec(), data)?, vec![], None))
            }
            Layer::Sigmoid => {
                let data = output
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(&s, &g)| g * s * (1.0 - s))
                    .collect();
                Ok((Tensor::new(input.shape().to_vec(), data)?, vec![], None))
            }
            Layer::MaxPool2 => {
                let (c, h, w) = image_shape(input)?;
                let (oh, ow) = (h / 2, w / 2);
                let x = input.data();
                let g = grad_out.data();
                let mut gx = vec![0.0f64; c * h * w];
                for ch in 0..c {
                    for r in 0..oh {
                        for cc in 0..ow {
                            // route to the first maximum in scan order
                            let mut m = f64::NEG_INFINITY;
                            let mut arg = 0usize;
                            for (k, (dr, dc)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                                let v = x[ch * h * w + (2 * r + dr) * w + 2 * cc + dc];
                                if v > m {
                                    m = v;
                                    arg = k;
                                }
                            }
                            let (dr, dc) = [(0, 0), (0, 1), (1, 0), (1, 1)][arg];
                            gx[ch * h * w + (2 * r + dr) * w + 2 * cc + dc] +=
                                g[ch * oh * ow + r * ow + cc];
                        }
                    }
                }
                Ok((Tensor::new(vec![c, h, w], gx)?, vec![], None))
            }
            Layer::UpsampleNearest2 => {
                let (c, h, w) = image_shape(input)?;
                let (oh, ow) = (h * 2, w * 2);
                let g = grad_out.data();
                let mut gx = vec![0.0f64; c * h * w];
                for ch in 0..c {
                    for r in 0..h {
                        for cc in 0..w {
                            let mut acc = 0.0;
                            for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                acc += g[ch * oh * ow + (2 * r + dr) * ow + 2 * cc + dc];
                            }
                            gx[ch * h * w + r * w + cc] = acc;
                        }
                    }
                }
                Ok((Tensor::new(vec![c, h, w], gx)?, vec![], None))
            }
            Layer::SkipConcat(_) => {
                let skip = skip.ok_or_else(|| Error::TensorShape("missing skip activation".into()))?;
                let (c1, h, w) = image_shape(input)?;
                let (c2, _, _) = image_shape(skip)?;
                let split = c1 * h * w;
                let gx = Tensor::new(vec![c1, h, w], grad_out.data()[..split].to_vec())?;
                let gs = Tensor::new(vec![c2, h, w], grad_out.data()[split..].to_vec())?;
                Ok((gx, vec![], Some(gs)))
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn image_shape(t: &Tensor) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        other => Err(Error::TensorShape(format!("expected [C,H,W], got {other:?}"))),
    }
}

#[allow(clippy::too_many_arguments)]
fn conv3x3_forward(
    w: &[f64],
    b: &[f64],
    x: &[f64],
    out: &mut [f64],
    in_ch: usize,
    out_ch: usize,
    h: usize,
    wd: usize,
) {
    for oc in 0..out_ch {
        let plane = &mut out[oc * h * wd..(oc + 1) * h * wd];
        plane.fill(b[oc]);
        for ic in 0..in_ch {
            let xin = &x[ic * h * wd..(ic + 1) * h * wd];
            let wtap = &w[(oc * in_ch + ic) * 9..(oc * in_ch + ic + 1) * 9];
            for dr in 0..3usize {
                for dc in 0..3usize {
                    let k = wtap[dr * 3 + dc];
                    if k == 0.0 {
                        continue;
                    }
                    // out[r][c] += k * x[r+dr-1][c+dc-1]
                    let r_lo = 1usize.saturating_sub(dr);
                    let r_hi = (h + 1 - dr).min(h);
                    let c_lo = 1usize.saturating_sub(dc);
                    let c_hi = (wd + 1 - dc).min(wd);
                    for r in r_lo..r_hi {
                        let src = &xin[(r + dr - 1) * wd + (c_lo + dc - 1)..(r + dr - 1) * wd + (c_hi + dc - 1)];
                        let dst = &mut plane[r * wd + c_lo..r * wd + c_hi];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += k * s;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    w: &[f64],
    x: &[f64],
    g: &[f64],
    gx: &mut [f64],
    gw: &mut [f64],
    gb: &mut [f64],
    in_ch: usize,
    out_ch: usize,
    h: usize,
    wd: usize,
) {
    for oc in 0..out_ch {
        let gplane = &g[oc * h * wd..(oc + 1) * h * wd];
        gb[oc] = gplane.iter().sum();
        for ic in 0..in_ch {
            let xin = &x[ic * h * wd..(ic + 1) * h * wd];
            let gxin = &mut gx[ic * h * wd..(ic + 1) * h * wd];
            let wtap = &w[(oc * in_ch + ic) * 9..(oc * in_ch + ic + 1) * 9];
            let gtap = &mut gw[(oc * in_ch + ic) * 9..(oc * in_ch + ic + 1) * 9];
            for dr in 0..3usize {
                for dc in 0..3usize {
                    let r_lo = 1usize.saturating_sub(dr);
                    let r_hi = (h + 1 - dr).min(h);
                    let c_lo = 1usize.saturating_sub(dc);
                    let c_hi = (wd + 1 - dc).min(wd);
                    let k = wtap[dr * 3 + dc];
                    let mut acc = 0.0;
                    for r in r_lo..r_hi {
                        let src_base = (r + dr - 1) * wd + dc;
                        let grow = &gplane[r * wd + c_lo..r * wd + c_hi];
                        let xrow = &xin[src_base + c_lo - 1..src_base + c_hi - 1];
                        let gxrow = &mut gxin[src_base + c_lo - 1..src_base + c_hi - 1];
                        for ((gv, xv), gxv) in grow.iter().zip(xrow).zip(gxrow.iter_mut()) {
                            acc += gv * xv;
                            *gxv += k * gv;
                        }
                    }
                    gtap[dr * 3 + dc] = acc;
                }
            }
        }
    }
}
