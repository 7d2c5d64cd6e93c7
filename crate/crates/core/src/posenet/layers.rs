//! Per-example forward and backward passes of the network's layer types.

use serde::{Deserialize, Serialize};

use super::tensor::FeatureMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Conv {
        k: usize,
        filters: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    /// Floor-mode pooling: windows hanging over the border are dropped.
    MaxPool {
        k: usize,
        stride: usize,
    },
    AvgPoolGlobal,
    /// Cross-channel normalization `a / (κ + α Σ a²)^β` over `n` neighbors.
    Lrn {
        n: usize,
        alpha: f64,
        beta: f64,
        kappa: f64,
    },
    /// Inverted dropout; identity outside training.
    Dropout {
        rate: f64,
    },
}

impl Layer {
    pub fn lrn_default() -> Self {
        Layer::Lrn { n: 5, alpha: 1e-4, beta: 0.75, kappa: 2.0 }
    }

    /// Output `(c, h, w)` for an input of `(c, h, w)`.
    pub fn out_dims(&self, (c, h, w): (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        let bad = |what: String| Error::ShapeMismatch { expected: what, got: format!("{:?}", (c, h, w)) };
        match *self {
            Layer::Conv { k, filters, stride, pad } => {
                if k == 0 || stride == 0 || filters == 0 || h + 2 * pad < k || w + 2 * pad < k {
                    return Err(bad(format!("input fitting a {k}x{k} kernel with pad {pad}")));
                }
                Ok((filters, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1))
            }
            Layer::MaxPool { k, stride } => {
                if k == 0 || stride == 0 || h < k || w < k {
                    return Err(bad(format!("input of at least {k}x{k}")));
                }
                Ok((c, (h - k) / stride + 1, (w - k) / stride + 1))
            }
            Layer::AvgPoolGlobal => Ok((c, 1, 1)),
            Layer::Lrn { n: 0, .. } => Err(Error::InvalidArgument("LRN size must be positive".into())),
            Layer::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")))
            }
            _ => Ok((c, h, w)),
        }
    }

    /// Parameter shapes `(weight, bias)` for an input with `in_c` channels.
    pub fn param_shapes(&self, in_c: usize) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            Layer::Conv { k, filters, .. } => Some((vec![filters, in_c, k, k], vec![filters])),
            _ => None,
        }
    }
}

/// State saved by a forward pass for the matching backward pass.
pub enum Cache {
    Conv { cols: Vec<f64>, in_dims: (usize, usize, usize) },
    Relu { positive: Vec<bool> },
    MaxPool { argmax: Vec<usize>, in_dims: (usize, usize, usize) },
    AvgPoolGlobal { in_dims: (usize, usize, usize) },
    Lrn { input: FeatureMap, denom: Vec<f64> },
    Dropout { mask: Option<Vec<f64>> },
}

/// Weights of one conv layer: `w` is `(filters, in_c, k, k)` row-major.
#[derive(Clone, Copy)]
pub struct ConvParams<'a> {
    pub w: &'a [f64],
    pub b: &'a [f64],
}

/// Column matrix `(in_c·k·k) × (oh·ow)` of the padded input patches.
fn im2col(x: &FeatureMap, k: usize, stride: usize, pad: usize, oh: usize, ow: usize) -> Vec<f64> {
    let p = oh * ow;
    let mut cols = vec![0.0; x.c * k * k * p];
    for c in 0..x.c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * p;
                for oy in 0..oh {
                    let y = (oy * stride + ky) as isize - pad as isize;
                    if y < 0 || y >= x.h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let xx = (ox * stride + kx) as isize - pad as isize;
                        if xx >= 0 && xx < x.w as isize {
                            cols[row + oy * ow + ox] = x.at(c, y as usize, xx as usize);
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-adds a column matrix back onto an input-shaped gradient.
#[allow(clippy::too_many_arguments)]
fn col2im(cols: &[f64], dims: (usize, usize, usize), k: usize, stride: usize, pad: usize, oh: usize, ow: usize) -> FeatureMap {
    let (c_n, h, w) = dims;
    let mut out = FeatureMap::zeros(c_n, h, w);
    let p = oh * ow;
    for c in 0..c_n {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * p;
                for oy in 0..oh {
                    let y = (oy * stride + ky) as isize - pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let xx = (ox * stride + kx) as isize - pad as isize;
                        if xx >= 0 && xx < w as isize {
                            out.data[(c * h + y as usize) * w + xx as usize] += cols[row + oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Runs one layer. `dropout_mask` draws the keep mask in training mode.
pub fn forward(
    layer: &Layer,
    x: &FeatureMap,
    params: Option<ConvParams<'_>>,
    dropout_mask: Option<&mut dyn FnMut(usize) -> Vec<bool>>,
) -> Result<(FeatureMap, Cache)> {
    let (oc, oh, ow) = layer.out_dims(x.dims())?;
    match *layer {
        Layer::Conv { k, filters, stride, pad } => {
            let ConvParams { w, b } = params.expect("conv layer has parameters");
            let q = x.c * k * k;
            if w.len() != filters * q || b.len() != filters {
                return Err(Error::ShapeMismatch {
                    expected: format!("{filters}x{}x{k}x{k} kernel", x.c),
                    got: format!("{} weights", w.len()),
                });
            }
            let cols = im2col(x, k, stride, pad, oh, ow);
            let p = oh * ow;
            let mut out = FeatureMap::zeros(oc, oh, ow);
            for f in 0..filters {
                let dst = &mut out.data[f * p..(f + 1) * p];
                dst.fill(b[f]);
                for (qi, &wv) in w[f * q..(f + 1) * q].iter().enumerate() {
                    if wv == 0.0 {
                        continue;
                    }
                    let src = &cols[qi * p..(qi + 1) * p];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += wv * s;
                    }
                }
            }
            Ok((out, Cache::Conv { cols, in_dims: x.dims() }))
        }
        Layer::Relu => {
            let positive: Vec<bool> = x.data.iter().map(|&v| v > 0.0).collect();
            let data = x.data.iter().map(|&v| v.max(0.0)).collect();
            Ok((FeatureMap { c: oc, h: oh, w: ow, data }, Cache::Relu { positive }))
        }
        Layer::MaxPool { k, stride } => {
            let mut out = FeatureMap::zeros(oc, oh, ow);
            let mut argmax = vec![0; oc * oh * ow];
            for c in 0..oc {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = (f64::NEG_INFINITY, 0);
                        for ky in 0..k {
                            for kx in 0..k {
                                let idx = (c * x.h + oy * stride + ky) * x.w + ox * stride + kx;
                                // strict comparison keeps the first maximum in scan order
                                if x.data[idx] > best.0 {
                                    best = (x.data[idx], idx);
                                }
                            }
                        }
                        let o = (c * oh + oy) * ow + ox;
                        out.data[o] = best.0;
                        argmax[o] = best.1;
                    }
                }
            }
            Ok((out, Cache::MaxPool { argmax, in_dims: x.dims() }))
        }
        Layer::AvgPoolGlobal => {
            let hw = x.h * x.w;
            let data = (0..x.c).map(|c| x.data[c * hw..(c + 1) * hw].iter().sum::<f64>() / hw as f64).collect();
            Ok((FeatureMap { c: oc, h: 1, w: 1, data }, Cache::AvgPoolGlobal { in_dims: x.dims() }))
        }
        Layer::Lrn { n, alpha, beta, kappa } => {
            let hw = x.h * x.w;
            let mut denom = vec![0.0; x.data.len()];
            let mut out = FeatureMap::zeros(oc, oh, ow);
            for c in 0..x.c {
                let (lo, hi) = lrn_window(c, n, x.c);
                for i in 0..hw {
                    let s: f64 = (lo..=hi).map(|j| x.data[j * hw + i].powi(2)).sum();
                    let d = kappa + alpha * s;
                    denom[c * hw + i] = d;
                    out.data[c * hw + i] = x.data[c * hw + i] * d.powf(-beta);
                }
            }
            Ok((out, Cache::Lrn { input: x.clone(), denom }))
        }
        Layer::Dropout { rate } => match dropout_mask {
            Some(draw) => {
                let keep = draw(x.data.len());
                let scale = 1.0 / (1.0 - rate);
                let mask: Vec<f64> = keep.iter().map(|&k| if k { scale } else { 0.0 }).collect();
                let data = x.data.iter().zip(&mask).map(|(v, m)| v * m).collect();
                Ok((FeatureMap { c: oc, h: oh, w: ow, data }, Cache::Dropout { mask: Some(mask) }))
            }
            None => Ok((x.clone(), Cache::Dropout { mask: None })),
        },
    }
}

/// Channels `[lo, hi]` normalizing channel `c`.
fn lrn_window(c: usize, n: usize, channels: usize) -> (usize, usize) {
    let half = n / 2;
    (c.saturating_sub(half), (c + half).min(channels - 1))
}

/// `(dw, db)` of a conv layer.
pub type ParamGrads = (Vec<f64>, Vec<f64>);

/// Gradients of one layer: input gradient (when `need_input`) and, for
/// conv layers, `(dw, db)`.
pub fn backward(
    layer: &Layer,
    grad: &FeatureMap,
    cache: &Cache,
    params: Option<ConvParams<'_>>,
    need_input: bool,
) -> (Option<FeatureMap>, Option<ParamGrads>) {
    match (layer, cache) {
        (&Layer::Conv { k, filters, stride, pad }, Cache::Conv { cols, in_dims }) => {
            let ConvParams { w, .. } = params.expect("conv layer has parameters");
            let p = grad.h * grad.w;
            let q = in_dims.0 * k * k;
            let mut dw = vec![0.0; filters * q];
            let mut db = vec![0.0; filters];
            for f in 0..filters {
                let g = &grad.data[f * p..(f + 1) * p];
                db[f] = g.iter().sum();
                for qi in 0..q {
                    let src = &cols[qi * p..(qi + 1) * p];
                    dw[f * q + qi] = g.iter().zip(src).map(|(a, b)| a * b).sum();
                }
            }
            let dx = need_input.then(|| {
                let mut dcols = vec![0.0; q * p];
                for f in 0..filters {
                    let g = &grad.data[f * p..(f + 1) * p];
                    for qi in 0..q {
                        let wv = w[f * q + qi];
                        if wv == 0.0 {
                            continue;
                        }
                        for (d, gv) in dcols[qi * p..(qi + 1) * p].iter_mut().zip(g) {
                            *d += wv * gv;
                        }
                    }
                }
                col2im(&dcols, *in_dims, k, stride, pad, grad.h, grad.w)
            });
            (dx, Some((dw, db)))
        }
        (Layer::Relu, Cache::Relu { positive }) => {
            let data = grad.data.iter().zip(positive).map(|(g, &p)| if p { *g } else { 0.0 }).collect();
            (Some(FeatureMap { data, ..grad.clone() }), None)
        }
        (Layer::MaxPool { .. }, Cache::MaxPool { argmax, in_dims }) => {
            let mut dx = FeatureMap::zeros(in_dims.0, in_dims.1, in_dims.2);
            for (g, &i) in grad.data.iter().zip(argmax) {
                dx.data[i] += g;
            }
            (Some(dx), None)
        }
        (Layer::AvgPoolGlobal, Cache::AvgPoolGlobal { in_dims }) => {
            let (c, h, w) = *in_dims;
            let hw = h * w;
            let mut dx = FeatureMap::zeros(c, h, w);
            for ch in 0..c {
                let v = grad.data[ch] / hw as f64;
                dx.data[ch * hw..(ch + 1) * hw].fill(v);
            }
            (Some(dx), None)
        }
        (&Layer::Lrn { n, alpha, beta, .. }, Cache::Lrn { input, denom }) => {
            let hw = input.h * input.w;
            let mut dx = FeatureMap::zeros(input.c, input.h, input.w);
            // t_c = g_c · a_c · d_c^(−β−1), shared by every channel in c's window
            let t: Vec<f64> = (0..input.data.len()).map(|i| grad.data[i] * input.data[i] * denom[i].powf(-beta - 1.0)).collect();
            for j in 0..input.c {
                // channels whose window contains j are those within n/2 of it
                let (lo, hi) = lrn_window(j, n, input.c);
                for i in 0..hw {
                    let idx = j * hw + i;
                    let cross: f64 = (lo..=hi).map(|c| t[c * hw + i]).sum();
                    dx.data[idx] = grad.data[idx] * denom[idx].powf(-beta) - 2.0 * alpha * beta * input.data[idx] * cross;
                }
            }
            (Some(dx), None)
        }
        (Layer::Dropout { .. }, Cache::Dropout { mask }) => {
            let dx = match mask {
                Some(m) => FeatureMap { data: grad.data.iter().zip(m).map(|(g, m)| g * m).collect(), ..grad.clone() },
                None => grad.clone(),
            };
            (Some(dx), None)
        }
        _ => unreachable!("cache does not match layer"),
    }
}
