//! Standard differentiable layers with explicit forward/backward pairs.
//!
//! Tensor layout is `(batch, height, width, channels)` throughout. Every
//! backward here computes the exact reverse-mode gradient of its forward,
//! which the finite-difference checker in [`crate::numcore::gradcheck`]
//! verifies independently.

#![allow(clippy::too_many_arguments)]

use rand::Rng;

use super::tensor::{NumError, Tensor};

/// Parameters of a standard 2-D convolution.
///
/// Weights are `(c_out, kh, kw, c_in)`, bias is `(c_out)`. Padding is zero
/// padding applied to all spatial sides.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weights: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl ConvParams {
    pub fn new(
        weights: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Self, NumError> {
        let wdims = weights.expect_rank("ConvParams weights", 4)?;
        let c_out = wdims[0];
        bias.expect_shape("ConvParams bias", &[c_out])?;
        if stride == 0 {
            return Err(NumError::InvalidShape {
                context: "ConvParams: stride must be positive".to_string(),
                shape: vec![stride],
            });
        }
        Ok(ConvParams {
            weights,
            bias,
            stride,
            padding,
        })
    }

    /// Seeded init: weights uniform in ±1/sqrt(kh*kw*c_in), bias zero.
    pub fn init(
        c_out: usize,
        kh: usize,
        kw: usize,
        c_in: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = (kh * kw * c_in) as f64;
        let bound = 1.0 / fan_in.sqrt();
        let data = (0..c_out * kh * kw * c_in)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        ConvParams {
            weights: Tensor::new(vec![c_out, kh, kw, c_in], data).unwrap(),
            bias: Tensor::zeros(&[c_out]),
            stride,
            padding,
        }
    }

    pub fn c_out(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn c_in(&self) -> usize {
        self.weights.shape()[3]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weights.shape()[1], self.weights.shape()[2])
    }
}

/// Output spatial size of a padded strided convolution along one axis.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding - kernel) / stride + 1
}

/// Direct-summation convolution. `x` is `(n, h, w, c_in)`, output is
/// `(n, h', w', c_out)` with `h' = floor((h + 2p - kh)/stride) + 1`.
pub fn conv2d_forward(x: &Tensor, p: &ConvParams) -> Result<Tensor, NumError> {
    let xd = x.expect_rank("conv2d_forward input", 4)?;
    let (n, h, w, c_in) = (xd[0], xd[1], xd[2], xd[3]);
    let wd = p.weights.shape();
    let (c_out, kh, kw) = (wd[0], wd[1], wd[2]);
    if wd[3] != c_in {
        return Err(NumError::ShapeMismatch {
            context: "conv2d_forward: input channels vs weight c_in".to_string(),
            expected: wd.to_vec(),
            actual: xd.to_vec(),
        });
    }
    if h + 2 * p.padding < kh || w + 2 * p.padding < kw {
        return Err(NumError::InvalidShape {
            context: format!(
                "conv2d_forward: padded input smaller than {kh}x{kw} kernel"
            ),
            shape: xd.to_vec(),
        });
    }
    let oh = conv_out_dim(h, kh, p.stride, p.padding);
    let ow = conv_out_dim(w, kw, p.stride, p.padding);
    let mut out = Tensor::zeros(&[n, oh, ow, c_out]);

    let xs = x.data();
    let ws = p.weights.data();
    let bs = p.bias.data();
    let od = out.data_mut();
    for b in 0..n {
        for oi in 0..oh {
            for oj in 0..ow {
                let out_base = ((b * oh + oi) * ow + oj) * c_out;
                for co in 0..c_out {
                    let mut acc = bs[co];
                    let w_filter = co * kh * kw * c_in;
                    for ki in 0..kh {
                        let ii = (oi * p.stride + ki) as isize - p.padding as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        for kj in 0..kw {
                            let jj = (oj * p.stride + kj) as isize - p.padding as isize;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            let xrow = ((b * h + ii as usize) * w + jj as usize) * c_in;
                            let wrow = w_filter + (ki * kw + kj) * c_in;
                            for ci in 0..c_in {
                                acc += xs[xrow + ci] * ws[wrow + ci];
                            }
                        }
                    }
                    od[out_base + co] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d_forward`] with respect to input, weights and bias.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub x: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(
    x: &Tensor,
    p: &ConvParams,
    grad_out: &Tensor,
) -> Result<ConvGrads, NumError> {
    let xd = x.expect_rank("conv2d_backward input", 4)?;
    let (n, h, w, c_in) = (xd[0], xd[1], xd[2], xd[3]);
    let wd = p.weights.shape();
    let (c_out, kh, kw) = (wd[0], wd[1], wd[2]);
    if wd[3] != c_in {
        return Err(NumError::ShapeMismatch {
            context: "conv2d_backward: input channels vs weight c_in".to_string(),
            expected: wd.to_vec(),
            actual: xd.to_vec(),
        });
    }
    let oh = conv_out_dim(h, kh, p.stride, p.padding);
    let ow = conv_out_dim(w, kw, p.stride, p.padding);
    grad_out.expect_shape("conv2d_backward grad_out", &[n, oh, ow, c_out])?;

    let mut grad_x = Tensor::zeros(&[n, h, w, c_in]);
    let mut grad_w = Tensor::zeros(&[c_out, kh, kw, c_in]);
    let mut grad_b = Tensor::zeros(&[c_out]);

    let xs = x.data();
    let ws = p.weights.data();
    let gs = grad_out.data();
    let gx = grad_x.data_mut();
    let gw = grad_w.data_mut();
    let gb = grad_b.data_mut();
    for b in 0..n {
        for oi in 0..oh {
            for oj in 0..ow {
                let out_base = ((b * oh + oi) * ow + oj) * c_out;
                for co in 0..c_out {
                    let g = gs[out_base + co];
                    gb[co] += g;
                    let w_filter = co * kh * kw * c_in;
                    for ki in 0..kh {
                        let ii = (oi * p.stride + ki) as isize - p.padding as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        for kj in 0..kw {
                            let jj = (oj * p.stride + kj) as isize - p.padding as isize;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            let xrow = ((b * h + ii as usize) * w + jj as usize) * c_in;
                            let wrow = w_filter + (ki * kw + kj) * c_in;
                            for ci in 0..c_in {
                                gw[wrow + ci] += g * xs[xrow + ci];
                                gx[xrow + ci] += g * ws[wrow + ci];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        x: grad_x,
        weights: grad_w,
        bias: grad_b,
    })
}

/// Fully connected layer parameters. Weights are `(out_dim, in_dim)`; the
/// bias is optional and absent by default.
#[derive(Debug, Clone, PartialEq)]
pub struct FcParams {
    pub weights: Tensor,
    pub bias: Option<Tensor>,
}

impl FcParams {
    pub fn new(weights: Tensor, bias: Option<Tensor>) -> Result<Self, NumError> {
        let wd = weights.expect_rank("FcParams weights", 2)?;
        if let Some(ref b) = bias {
            b.expect_shape("FcParams bias", &[wd[0]])?;
        }
        Ok(FcParams { weights, bias })
    }

    /// Seeded bias-free init: weights uniform in ±1/sqrt(in_dim).
    pub fn init(out_dim: usize, in_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let data = (0..out_dim * in_dim)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        FcParams {
            weights: Tensor::new(vec![out_dim, in_dim], data).unwrap(),
            bias: None,
        }
    }

    pub fn use_bias(&self) -> bool {
        self.bias.is_some()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape()[1]
    }
}

/// `out[b, o] = sum_i w[o, i] * z[b, i] (+ bias[o])` for `z` of shape `(n, in)`.
pub fn fc_forward(z: &Tensor, p: &FcParams) -> Result<Tensor, NumError> {
    let zd = z.expect_rank("fc_forward input", 2)?;
    let (n, in_dim) = (zd[0], zd[1]);
    if in_dim != p.in_dim() {
        return Err(NumError::ShapeMismatch {
            context: "fc_forward: input width vs weight in_dim".to_string(),
            expected: p.weights.shape().to_vec(),
            actual: zd.to_vec(),
        });
    }
    let out_dim = p.out_dim();
    let mut out = Tensor::zeros(&[n, out_dim]);
    for b in 0..n {
        for o in 0..out_dim {
            let mut acc = p.bias.as_ref().map_or(0.0, |bias| bias.data()[o]);
            for i in 0..in_dim {
                acc += p.weights.at2(o, i) * z.at2(b, i);
            }
            *out.at2_mut(b, o) = acc;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct FcGrads {
    pub z: Tensor,
    pub weights: Tensor,
    pub bias: Option<Tensor>,
}

pub fn fc_backward(z: &Tensor, p: &FcParams, grad_out: &Tensor) -> Result<FcGrads, NumError> {
    let zd = z.expect_rank("fc_backward input", 2)?;
    let (n, in_dim) = (zd[0], zd[1]);
    if in_dim != p.in_dim() {
        return Err(NumError::ShapeMismatch {
            context: "fc_backward: input width vs weight in_dim".to_string(),
            expected: p.weights.shape().to_vec(),
            actual: zd.to_vec(),
        });
    }
    let out_dim = p.out_dim();
    grad_out.expect_shape("fc_backward grad_out", &[n, out_dim])?;

    let mut grad_z = Tensor::zeros(&[n, in_dim]);
    let mut grad_w = Tensor::zeros(&[out_dim, in_dim]);
    let mut grad_b = p.bias.as_ref().map(|_| Tensor::zeros(&[out_dim]));
    for b in 0..n {
        for o in 0..out_dim {
            let g = grad_out.at2(b, o);
            if let Some(ref mut gb) = grad_b {
                gb.data_mut()[o] += g;
            }
            for i in 0..in_dim {
                *grad_w.at2_mut(o, i) += g * z.at2(b, i);
                *grad_z.at2_mut(b, i) += g * p.weights.at2(o, i);
            }
        }
    }
    Ok(FcGrads {
        z: grad_z,
        weights: grad_w,
        bias: grad_b,
    })
}

/// Elementwise `max(0, x)`.
pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Backward of [`relu`], gated on the forward *input*.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor, NumError> {
    grad_out.expect_shape("relu_backward grad_out", x.shape())?;
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Elementwise logistic function.
pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(|v| 1.0 / (1.0 + (-v).exp()))
}

/// Backward of [`sigmoid`], taking the forward *output* `y`.
pub fn sigmoid_backward(y: &Tensor, grad_out: &Tensor) -> Result<Tensor, NumError> {
    grad_out.expect_shape("sigmoid_backward grad_out", y.shape())?;
    let data = y
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| g * v * (1.0 - v))
        .collect();
    Tensor::new(y.shape().to_vec(), data)
}

/// Nearest-neighbour 2x upsampling: each spatial cell becomes a 2x2 block.
pub fn upsample2x_nearest(x: &Tensor) -> Result<Tensor, NumError> {
    let xd = x.expect_rank("upsample2x_nearest input", 4)?;
    let (n, h, w, c) = (xd[0], xd[1], xd[2], xd[3]);
    let mut out = Tensor::zeros(&[n, 2 * h, 2 * w, c]);
    for b in 0..n {
        for i in 0..h {
            for j in 0..w {
                for ch in 0..c {
                    let v = x.at4(b, i, j, ch);
                    *out.at4_mut(b, 2 * i, 2 * j, ch) = v;
                    *out.at4_mut(b, 2 * i, 2 * j + 1, ch) = v;
                    *out.at4_mut(b, 2 * i + 1, 2 * j, ch) = v;
                    *out.at4_mut(b, 2 * i + 1, 2 * j + 1, ch) = v;
                }
            }
        }
    }
    Ok(out)
}

/// Backward of [`upsample2x_nearest`]: sums each 2x2 block of the output
/// gradient back onto its source cell.
pub fn upsample2x_backward(grad_out: &Tensor) -> Result<Tensor, NumError> {
    let gd = grad_out.expect_rank("upsample2x_backward grad_out", 4)?;
    let (n, oh, ow, c) = (gd[0], gd[1], gd[2], gd[3]);
    if oh % 2 != 0 || ow % 2 != 0 {
        return Err(NumError::InvalidShape {
            context: "upsample2x_backward: spatial dims must be even".to_string(),
            shape: gd.to_vec(),
        });
    }
    let (h, w) = (oh / 2, ow / 2);
    let mut grad_x = Tensor::zeros(&[n, h, w, c]);
    for b in 0..n {
        for i in 0..h {
            for j in 0..w {
                for ch in 0..c {
                    *grad_x.at4_mut(b, i, j, ch) = grad_out.at4(b, 2 * i, 2 * j, ch)
                        + grad_out.at4(b, 2 * i, 2 * j + 1, ch)
                        + grad_out.at4(b, 2 * i + 1, 2 * j, ch)
                        + grad_out.at4(b, 2 * i + 1, 2 * j + 1, ch);
                }
            }
        }
    }
    Ok(grad_x)
}
