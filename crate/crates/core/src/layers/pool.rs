use super::conv::window_count;
use crate::error::{Error, Result};
use crate::tensor::{Dims, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolConfig {
    pub kernel: usize,
    pub stride: usize,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig { kernel: 2, stride: 2 }
    }
}

impl PoolConfig {
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.kernel == 0 || self.stride == 0 {
            return Err(Error::InvalidArgument(format!("invalid pool config {self:?}")));
        }
        Ok((
            window_count(h, self.kernel, self.stride, 0)?,
            window_count(w, self.kernel, self.stride, 0)?,
        ))
    }
}

/// Max pooling. Returns the pooled tensor and, per output element, the flat
/// input offset of its maximizer (first in row-major scan order on ties).
pub fn maxpool_forward(input: &Tensor4, cfg: &PoolConfig) -> Result<(Tensor4, Vec<usize>)> {
    let d = input.dims();
    let (oh, ow) = cfg.output_hw(d.h, d.w)?;
    let mut out = Tensor4::zeros((d.n, d.c, oh, ow))?;
    let mut argmax = Vec::with_capacity(out.len());
    let inp = input.data();
    let (k, s) = (cfg.kernel, cfg.stride);
    let mut o = 0;
    for plane in 0..d.n * d.c {
        let base = plane * d.h * d.w;
        for y in 0..oh {
            for x in 0..ow {
                let mut best_off = base + (y * s) * d.w + x * s;
                let mut best = inp[best_off];
                for u in 0..k {
                    let row = base + (y * s + u) * d.w + x * s;
                    for v in 0..k {
                        if inp[row + v] > best {
                            best = inp[row + v];
                            best_off = row + v;
                        }
                    }
                }
                out.data_mut()[o] = best;
                argmax.push(best_off);
                o += 1;
            }
        }
    }
    Ok((out, argmax))
}

/// Routes each output gradient to its recorded maximizer.
pub fn maxpool_backward(input_dims: Dims, argmax: &[usize], grad_out: &Tensor4) -> Result<Tensor4> {
    if argmax.len() != grad_out.len() {
        return Err(Error::InvalidShape(format!(
            "maxpool grad_out {} does not match {} cached outputs",
            grad_out.dims(),
            argmax.len()
        )));
    }
    let mut g = Tensor4::zeros(input_dims)?;
    for (&off, &gv) in argmax.iter().zip(grad_out.data()) {
        g.data_mut()[off] += gv;
    }
    Ok(g)
}
