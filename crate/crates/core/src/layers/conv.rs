use crate::error::{Error, Result};
use crate::tensor::{Dims, Tensor4};

/// Convolution geometry. Padding is symmetric zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvConfig {
    pub filters: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub pad: usize,
}

impl ConvConfig {
    pub const DEFAULT_KERNEL: usize = 3;
    pub const DEFAULT_STRIDE: usize = 1;
    pub const DEFAULT_PAD: usize = 1;

    /// `filters` output channels with the default shape-preserving 3x3/s1/p1 geometry.
    pub fn new(filters: usize) -> Self {
        ConvConfig {
            filters,
            kernel: (Self::DEFAULT_KERNEL, Self::DEFAULT_KERNEL),
            stride: Self::DEFAULT_STRIDE,
            pad: Self::DEFAULT_PAD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.filters == 0 || self.kernel.0 == 0 || self.kernel.1 == 0 || self.stride == 0 {
            return Err(Error::InvalidArgument(format!("invalid conv config {self:?}")));
        }
        Ok(())
    }

    /// Output spatial dims for an `h x w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        Ok((
            window_count(h, self.kernel.0, self.stride, self.pad)?,
            window_count(w, self.kernel.1, self.stride, self.pad)?,
        ))
    }

    pub fn weight_dims(&self, in_channels: usize) -> Dims {
        Dims::new(self.filters, in_channels, self.kernel.0, self.kernel.1)
    }

    pub fn bias_dims(&self) -> Dims {
        Dims::new(1, self.filters, 1, 1)
    }
}

/// Number of sliding-window positions along one axis; requires exact division.
pub(crate) fn window_count(len: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = len + 2 * pad;
    if padded < k {
        return Err(Error::InvalidShape(format!(
            "window {k} larger than padded extent {padded}"
        )));
    }
    if !(padded - k).is_multiple_of(stride) {
        return Err(Error::InvalidShape(format!(
            "({padded} - {k}) / {stride} is not integral"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// Output positions `o` in `0..out` for which `o*stride + k - pad` lands in `0..len`.
#[inline]
fn valid_range(out: usize, len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if len + pad > k { ((len - 1 + pad - k) / stride + 1).min(out) } else { 0 };
    (lo, hi.max(lo))
}

fn check_conv_shapes(input: Dims, weights: Dims, cfg: &ConvConfig) -> Result<Dims> {
    let expected = cfg.weight_dims(input.c);
    if weights != expected {
        return Err(Error::InvalidShape(format!(
            "conv weights {weights} do not match {expected} for input {input}"
        )));
    }
    let (oh, ow) = cfg.output_hw(input.h, input.w)?;
    Ok(Dims::new(input.n, cfg.filters, oh, ow))
}

pub fn conv2d_forward(
    input: &Tensor4,
    weights: &Tensor4,
    bias: &Tensor4,
    cfg: &ConvConfig,
) -> Result<Tensor4> {
    let id = input.dims();
    let od = check_conv_shapes(id, weights.dims(), cfg)?;
    if bias.dims() != cfg.bias_dims() {
        return Err(Error::InvalidShape(format!("conv bias {} for {} filters", bias.dims(), cfg.filters)));
    }
    let (kh, kw) = cfg.kernel;
    let (s, p) = (cfg.stride, cfg.pad);
    let (oh, ow) = (od.h, od.w);
    let mut out = Tensor4::zeros(od)?;
    let inp = input.data();
    let wts = weights.data();
    let out_data = out.data_mut();
    let plane_in = id.h * id.w;
    let plane_out = oh * ow;

    for i in 0..id.n {
        for f in 0..cfg.filters {
            let obase = (i * cfg.filters + f) * plane_out;
            let oplane = &mut out_data[obase..obase + plane_out];
            oplane.fill(bias.data()[f]);
            for j in 0..id.c {
                let iplane = &inp[(i * id.c + j) * plane_in..][..plane_in];
                for u in 0..kh {
                    let (y_lo, y_hi) = valid_range(oh, id.h, u, s, p);
                    for v in 0..kw {
                        let wv = wts[((f * id.c + j) * kh + u) * kw + v];
                        let (x_lo, x_hi) = valid_range(ow, id.w, v, s, p);
                        for y in y_lo..y_hi {
                            let iy = y * s + u - p;
                            let irow = &iplane[iy * id.w..(iy + 1) * id.w];
                            let orow = &mut oplane[y * ow..(y + 1) * ow];
                            if s == 1 {
                                let off = x_lo + v - p;
                                for (o, iv) in orow[x_lo..x_hi].iter_mut().zip(&irow[off..]) {
                                    *o += wv * iv;
                                }
                            } else {
                                for x in x_lo..x_hi {
                                    orow[x] += wv * irow[x * s + v - p];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a convolution with respect to its input, weights and bias.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor4,
    pub weights: Tensor4,
    pub bias: Tensor4,
}

pub fn conv2d_backward(
    input: &Tensor4,
    weights: &Tensor4,
    cfg: &ConvConfig,
    grad_out: &Tensor4,
) -> Result<ConvGrads> {
    let (gi, gw, gb) = conv2d_backward_impl(input, weights, cfg, grad_out, true)?;
    Ok(ConvGrads { input: gi.expect("input gradient requested"), weights: gw, bias: gb })
}

/// Weight gradient is the correlation of the input with `grad_out`; the input
/// gradient scatters `grad_out` back through the kernel. The input gradient is
/// skipped when `want_input` is false (first layer of a network).
pub(crate) fn conv2d_backward_impl(
    input: &Tensor4,
    weights: &Tensor4,
    cfg: &ConvConfig,
    grad_out: &Tensor4,
    want_input: bool,
) -> Result<(Option<Tensor4>, Tensor4, Tensor4)> {
    let id = input.dims();
    let od = check_conv_shapes(id, weights.dims(), cfg)?;
    if grad_out.dims() != od {
        return Err(Error::InvalidShape(format!(
            "conv grad_out {} does not match output {od}",
            grad_out.dims()
        )));
    }
    let (kh, kw) = cfg.kernel;
    let (s, p) = (cfg.stride, cfg.pad);
    let (oh, ow) = (od.h, od.w);
    let plane_in = id.h * id.w;
    let plane_out = oh * ow;

    let mut gin = if want_input { Some(input.zeros_like()) } else { None };
    let mut gw = weights.zeros_like();
    let mut gb = Tensor4::zeros(cfg.bias_dims())?;
    let inp = input.data();
    let wts = weights.data();
    let go = grad_out.data();

    for i in 0..id.n {
        for f in 0..cfg.filters {
            let gplane = &go[(i * cfg.filters + f) * plane_out..][..plane_out];
            gb.data_mut()[f] += gplane.iter().sum::<f64>();
            for j in 0..id.c {
                let ibase = (i * id.c + j) * plane_in;
                let iplane = &inp[ibase..ibase + plane_in];
                for u in 0..kh {
                    let (y_lo, y_hi) = valid_range(oh, id.h, u, s, p);
                    for v in 0..kw {
                        let widx = ((f * id.c + j) * kh + u) * kw + v;
                        let wv = wts[widx];
                        let (x_lo, x_hi) = valid_range(ow, id.w, v, s, p);
                        let mut acc = 0.0;
                        for y in y_lo..y_hi {
                            let iy = y * s + u - p;
                            let grow = &gplane[y * ow..(y + 1) * ow];
                            let irow = &iplane[iy * id.w..(iy + 1) * id.w];
                            for x in x_lo..x_hi {
                                acc += grow[x] * irow[x * s + v - p];
                            }
                            if let Some(gin) = gin.as_mut() {
                                let girow = &mut gin.data_mut()[ibase + iy * id.w..][..id.w];
                                for x in x_lo..x_hi {
                                    girow[x * s + v - p] += wv * grow[x];
                                }
                            }
                        }
                        gw.data_mut()[widx] += acc;
                    }
                }
            }
        }
    }
    Ok((gin, gw, gb))
}
