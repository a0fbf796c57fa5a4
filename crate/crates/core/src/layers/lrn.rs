use crate::error::{Error, Result};
use crate::tensor::{ensure_same_dims, Tensor4};

/// Cross-channel local response normalization:
/// `b[c] = a[c] / (k + alpha * sum_{c' in window(c)} a[c']^2)^beta`,
/// window = channels `c - n/2 ..= c + n/2` clipped to the valid range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrnConfig {
    pub k: f64,
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LrnConfig {
    fn default() -> Self {
        LrnConfig { k: 2.0, n: 5, alpha: 1e-4, beta: 0.75 }
    }
}

impl LrnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n.is_multiple_of(2) || !(self.k > 0.0) || !(self.alpha >= 0.0) || !(self.beta > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid LRN config {self:?}")));
        }
        Ok(())
    }

    fn window(&self, c: usize, channels: usize) -> (usize, usize) {
        let half = self.n / 2;
        (c.saturating_sub(half), (c + half).min(channels - 1))
    }
}

/// Per-element denominators base `k + alpha * window sum of squares`.
fn scales(input: &Tensor4, cfg: &LrnConfig) -> Vec<f64> {
    let d = input.dims();
    let plane = d.h * d.w;
    let x = input.data();
    let mut out = vec![0.0; x.len()];
    for i in 0..d.n {
        let sample = i * d.c * plane;
        for c in 0..d.c {
            let (lo, hi) = cfg.window(c, d.c);
            let dst = sample + c * plane;
            for p in 0..plane {
                let mut acc = 0.0;
                for cc in lo..=hi {
                    let v = x[sample + cc * plane + p];
                    acc += v * v;
                }
                out[dst + p] = cfg.k + cfg.alpha * acc;
            }
        }
    }
    out
}

pub fn lrn_forward(input: &Tensor4, cfg: &LrnConfig) -> Tensor4 {
    let s = scales(input, cfg);
    let mut out = input.clone();
    for (o, sv) in out.data_mut().iter_mut().zip(&s) {
        *o /= sv.powf(cfg.beta);
    }
    out
}

/// `dL/da[m] = g[m] * S[m]^-beta - 2 alpha beta a[m] * sum_{c: m in window(c)} g[c] a[c] S[c]^(-beta-1)`.
/// The window relation is symmetric, so the inner sum runs over `window(m)`.
pub fn lrn_backward(input: &Tensor4, cfg: &LrnConfig, grad_out: &Tensor4) -> Result<Tensor4> {
    ensure_same_dims(input, grad_out)?;
    let d = input.dims();
    let plane = d.h * d.w;
    let s = scales(input, cfg);
    let a = input.data();
    let g = grad_out.data();
    // t[c] = g[c] * a[c] * S[c]^(-beta-1)
    let t: Vec<f64> = (0..a.len()).map(|e| g[e] * a[e] * s[e].powf(-cfg.beta - 1.0)).collect();
    let mut gin = input.zeros_like();
    let out = gin.data_mut();
    for i in 0..d.n {
        let sample = i * d.c * plane;
        for m in 0..d.c {
            let (lo, hi) = cfg.window(m, d.c);
            let base = sample + m * plane;
            for p in 0..plane {
                let e = base + p;
                let mut acc = 0.0;
                for c in lo..=hi {
                    acc += t[sample + c * plane + p];
                }
                out[e] = g[e] * s[e].powf(-cfg.beta) - 2.0 * cfg.alpha * cfg.beta * a[e] * acc;
            }
        }
    }
    Ok(gin)
}
