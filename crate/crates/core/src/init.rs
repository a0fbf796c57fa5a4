//! Parameter initializers: uniform Xavier/Glorot for weights, zero-mean
//! Gaussian for re-initialized classifier heads, zeros for biases.

use rand::Rng as _;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Dims, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitKind {
    Xavier,
    /// Zero-mean normal with the given standard deviation.
    Gaussian { std: f64 },
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitSpec {
    pub kind: InitKind,
    pub seed: u64,
}

impl InitSpec {
    pub fn xavier(seed: u64) -> Self {
        InitSpec { kind: InitKind::Xavier, seed }
    }

    pub fn gaussian(std: f64, seed: u64) -> Self {
        InitSpec { kind: InitKind::Gaussian { std }, seed }
    }
}

/// Samples i.i.d. from `U[-L, L]`, `L = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_init(fan_in: usize, fan_out: usize, dims: impl Into<Dims>, rng: &mut Rng) -> Result<Tensor4> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::InvalidArgument(format!("xavier fans must be positive ({fan_in}, {fan_out})")));
    }
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut t = Tensor4::zeros(dims)?;
    for v in t.data_mut() {
        *v = dist.sample(rng);
    }
    Ok(t)
}

pub fn gaussian_init(std: f64, dims: impl Into<Dims>, rng: &mut Rng) -> Result<Tensor4> {
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::InvalidArgument(format!("gaussian std must be positive, got {std}")));
    }
    let dist = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut t = Tensor4::zeros(dims)?;
    for v in t.data_mut() {
        *v = dist.sample(rng);
    }
    Ok(t)
}

pub fn zero_init(dims: impl Into<Dims>) -> Result<Tensor4> {
    Tensor4::zeros(dims)
}

/// Fans for a weight tensor: conv `(f, c, kh, kw)` gives `(c*kh*kw, f*kh*kw)`;
/// FC `(out, in, 1, 1)` gives `(in, out)`.
pub fn fans(weight_dims: Dims) -> (usize, usize) {
    let receptive = weight_dims.h * weight_dims.w;
    (weight_dims.c * receptive, weight_dims.n * receptive)
}

/// Initializes a weight tensor according to `kind`.
pub fn init_weights(kind: InitKind, dims: Dims, rng: &mut Rng) -> Result<Tensor4> {
    match kind {
        InitKind::Xavier => {
            let (fan_in, fan_out) = fans(dims);
            xavier_init(fan_in, fan_out, dims, rng)
        }
        InitKind::Gaussian { std } => gaussian_init(std, dims, rng),
        InitKind::Zero => zero_init(dims),
    }
}

/// Fills a tensor with i.i.d. draws from `U[lo, hi)`.
pub fn uniform_tensor(lo: f64, hi: f64, dims: impl Into<Dims>, rng: &mut Rng) -> Result<Tensor4> {
    let mut t = Tensor4::zeros(dims)?;
    for v in t.data_mut() {
        *v = rng.random_range(lo..hi);
    }
    Ok(t)
}
