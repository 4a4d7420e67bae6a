//! Layer primitives: strided convolution with reflect padding, leaky
//! rectifier, and bilinear 2x upsampling, each with its exact adjoint.
//!
//! Everything is f64 and single-threaded with fixed summation order, so a
//! forward pass is bit-reproducible and the backward pass is the exact
//! transpose of the forward linearization (finite differences agree to
//! first order).

/// Channel-major feature map: data index = (c * height + y) * width + x.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureMap {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_plane(height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), height * width);
        FeatureMap {
            channels: 1,
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * n - 2 - i;
    }
    debug_assert!(i >= 0 && i < n);
    i as usize
}

/// Convolution weights for one layer, `[c_out][c_in][k][k]` row-major plus
/// per-output-channel bias.
#[derive(Debug, Clone, Copy)]
pub struct ConvShape {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.kernel * self.kernel * self.c_in * self.c_out
    }
    pub fn param_len(&self) -> usize {
        self.weight_len() + self.c_out
    }
    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        // Same-size for stride 1, halved for stride 2 (even dims required
        // upstream).
        (h.div_ceil(self.stride), w.div_ceil(self.stride))
    }
    #[inline]
    fn w_index(&self, co: usize, ci: usize, ky: usize, kx: usize) -> usize {
        ((co * self.c_in + ci) * self.kernel + ky) * self.kernel + kx
    }
}

/// Forward convolution; `params` holds weights then biases.
pub fn conv_forward(shape: &ConvShape, params: &[f64], input: &FeatureMap) -> FeatureMap {
    assert_eq!(input.channels, shape.c_in);
    assert_eq!(params.len(), shape.param_len());
    let (oh, ow) = shape.out_dims(input.height, input.width);
    let pad = (shape.kernel / 2) as isize;
    let bias = &params[shape.weight_len()..];
    let mut out = FeatureMap::zeros(shape.c_out, oh, ow);
    for co in 0..shape.c_out {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[co];
                for ci in 0..shape.c_in {
                    for ky in 0..shape.kernel {
                        let iy = reflect(
                            (oy * shape.stride) as isize + ky as isize - pad,
                            input.height,
                        );
                        for kx in 0..shape.kernel {
                            let ix = reflect(
                                (ox * shape.stride) as isize + kx as isize - pad,
                                input.width,
                            );
                            acc += params[shape.w_index(co, ci, ky, kx)] * input.at(ci, iy, ix);
                        }
                    }
                }
                *out.at_mut(co, oy, ox) = acc;
            }
        }
    }
    out
}

/// Backward convolution: gradients w.r.t. parameters (same layout as
/// `params`) and w.r.t. the input.
pub fn conv_backward(
    shape: &ConvShape,
    params: &[f64],
    input: &FeatureMap,
    grad_out: &FeatureMap,
) -> (Vec<f64>, FeatureMap) {
    let (oh, ow) = shape.out_dims(input.height, input.width);
    assert_eq!((grad_out.height, grad_out.width), (oh, ow));
    assert_eq!(grad_out.channels, shape.c_out);
    let pad = (shape.kernel / 2) as isize;
    let mut grad_params = vec![0.0; shape.param_len()];
    let mut grad_in = FeatureMap::zeros(input.channels, input.height, input.width);
    let w_len = shape.weight_len();
    for co in 0..shape.c_out {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = grad_out.at(co, oy, ox);
                grad_params[w_len + co] += g;
                for ci in 0..shape.c_in {
                    for ky in 0..shape.kernel {
                        let iy = reflect(
                            (oy * shape.stride) as isize + ky as isize - pad,
                            input.height,
                        );
                        for kx in 0..shape.kernel {
                            let ix = reflect(
                                (ox * shape.stride) as isize + kx as isize - pad,
                                input.width,
                            );
                            grad_params[shape.w_index(co, ci, ky, kx)] += g * input.at(ci, iy, ix);
                            *grad_in.at_mut(ci, iy, ix) +=
                                g * params[shape.w_index(co, ci, ky, kx)];
                        }
                    }
                }
            }
        }
    }
    (grad_params, grad_in)
}

/// Leaky rectifier: x for x > 0, slope*x otherwise (slope also taken as the
/// derivative at exactly zero).
pub fn leaky_forward(input: &FeatureMap, slope: f64) -> FeatureMap {
    let data = input
        .data
        .iter()
        .map(|&v| if v > 0.0 { v } else { slope * v })
        .collect();
    FeatureMap {
        channels: input.channels,
        height: input.height,
        width: input.width,
        data,
    }
}

/// Chain rule through the leaky rectifier given the pre-activation values.
pub fn leaky_backward(pre: &FeatureMap, grad_out: &FeatureMap, slope: f64) -> FeatureMap {
    let data = pre
        .data
        .iter()
        .zip(&grad_out.data)
        .map(|(&v, &g)| if v > 0.0 { g } else { slope * g })
        .collect();
    FeatureMap {
        channels: pre.channels,
        height: pre.height,
        width: pre.width,
        data,
    }
}

#[inline]
fn bilinear_taps(o: usize, n_in: usize) -> (usize, usize, f64) {
    // align-corners-false: output center maps to (o + 0.5)/2 - 0.5, clamped.
    let pos = ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n_in - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n_in - 1);
    (lo, hi, pos - lo as f64)
}

/// Bilinear 2x upsampling (align-corners-false); constants stay constant.
pub fn bilinear_upsample2(input: &FeatureMap) -> FeatureMap {
    let (h, w) = (input.height, input.width);
    let (oh, ow) = (h * 2, w * 2);
    let mut out = FeatureMap::zeros(input.channels, oh, ow);
    for c in 0..input.channels {
        for oy in 0..oh {
            let (y0, y1, wy) = bilinear_taps(oy, h);
            for ox in 0..ow {
                let (x0, x1, wx) = bilinear_taps(ox, w);
                let v = (1.0 - wy) * (1.0 - wx) * input.at(c, y0, x0)
                    + (1.0 - wy) * wx * input.at(c, y0, x1)
                    + wy * (1.0 - wx) * input.at(c, y1, x0)
                    + wy * wx * input.at(c, y1, x1);
                *out.at_mut(c, oy, ox) = v;
            }
        }
    }
    out
}

/// Exact adjoint of [`bilinear_upsample2`].
pub fn bilinear_upsample2_adjoint(grad_out: &FeatureMap) -> FeatureMap {
    let (oh, ow) = (grad_out.height, grad_out.width);
    let (h, w) = (oh / 2, ow / 2);
    let mut grad_in = FeatureMap::zeros(grad_out.channels, h, w);
    for c in 0..grad_out.channels {
        for oy in 0..oh {
            let (y0, y1, wy) = bilinear_taps(oy, h);
            for ox in 0..ow {
                let (x0, x1, wx) = bilinear_taps(ox, w);
                let g = grad_out.at(c, oy, ox);
                *grad_in.at_mut(c, y0, x0) += (1.0 - wy) * (1.0 - wx) * g;
                *grad_in.at_mut(c, y0, x1) += (1.0 - wy) * wx * g;
                *grad_in.at_mut(c, y1, x0) += wy * (1.0 - wx) * g;
                *grad_in.at_mut(c, y1, x1) += wy * wx * g;
            }
        }
    }
    grad_in
}
