//! Forward and backward passes for every layer kind: convolution, ReLU, max
//! pooling, local response normalization, dropout, fully connected, and the
//! softmax cross-entropy head.
//!
//! The free functions in the submodules are pure. [`Layer`] bundles a layer's
//! configuration with its parameters and dispatches forward/backward through a
//! [`LayerCache`] holding whatever the backward pass needs.

mod conv;
mod dropout;
mod fc;
mod lrn;
mod pool;
mod relu;
mod softmax;

pub use conv::{conv2d_backward, conv2d_forward, ConvConfig, ConvGrads};
pub use dropout::{dropout_apply, dropout_backward, DropoutConfig};
pub use fc::{fc_backward, fc_forward, fc_weight_dims, FcGrads};
pub use lrn::{lrn_backward, lrn_forward, LrnConfig};
pub use pool::{maxpool_backward, maxpool_forward, PoolConfig};
pub use relu::{relu_backward, relu_forward};
pub use softmax::{softmax, softmax_cross_entropy, SoftmaxOutput};


use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{ensure_same_dims, Dims, Tensor4};

/// Only dropout behaves differently between the two.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Test,
}

/// A layer together with its parameters (if any).
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv { cfg: ConvConfig, weights: Tensor4, bias: Tensor4 },
    Relu,
    MaxPool(PoolConfig),
    Lrn(LrnConfig),
    Dropout(DropoutConfig),
    Fc { weights: Tensor4, bias: Tensor4 },
}

/// Forward state retained for the backward pass.
#[derive(Debug, Clone)]
pub enum LayerCache {
    Conv { input: Tensor4 },
    Relu { input: Tensor4 },
    MaxPool { input_dims: Dims, output_dims: Dims, argmax: Vec<usize> },
    Lrn { input: Tensor4 },
    Dropout { mask: Tensor4 },
    Fc { input: Tensor4 },
}

/// Gradients produced by [`Layer::backward`]. `params` follows the order of
/// [`Layer::params`] (weights, then bias).
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub input: Option<Tensor4>,
    pub params: Vec<Tensor4>,
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv { .. } => "conv",
            Layer::Relu => "relu",
            Layer::MaxPool(_) => "maxpool",
            Layer::Lrn(_) => "lrn",
            Layer::Dropout(_) => "dropout",
            Layer::Fc { .. } => "fc",
        }
    }

    pub fn params(&self) -> Vec<&Tensor4> {
        match self {
            Layer::Conv { weights, bias, .. } | Layer::Fc { weights, bias } => vec![weights, bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor4> {
        match self {
            Layer::Conv { weights, bias, .. } | Layer::Fc { weights, bias } => vec![weights, bias],
            _ => Vec::new(),
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Conv { .. } | Layer::Fc { .. })
    }

    /// Runs the layer. `rng` is only consumed by dropout in `Train` mode.
    pub fn forward(&self, input: &Tensor4, mode: Mode, rng: &mut Rng) -> Result<(Tensor4, LayerCache)> {
        Ok(match self {
            Layer::Conv { cfg, weights, bias } => {
                let out = conv2d_forward(input, weights, bias, cfg)?;
                (out, LayerCache::Conv { input: input.clone() })
            }
            Layer::Relu => (relu_forward(input), LayerCache::Relu { input: input.clone() }),
            Layer::MaxPool(cfg) => {
                let (out, argmax) = maxpool_forward(input, cfg)?;
                let cache = LayerCache::MaxPool {
                    input_dims: input.dims(),
                    output_dims: out.dims(),
                    argmax,
                };
                (out, cache)
            }
            Layer::Lrn(cfg) => (lrn_forward(input, cfg), LayerCache::Lrn { input: input.clone() }),
            Layer::Dropout(cfg) => {
                let (out, mask) = dropout_apply(input, cfg, mode, rng);
                (out, LayerCache::Dropout { mask })
            }
            Layer::Fc { weights, bias } => {
                let out = fc_forward(input, weights, bias)?;
                (out, LayerCache::Fc { input: input.clone() })
            }
        })
    }

    /// Exact gradients given the cached forward state. When `want_input` is
    /// false the input gradient is not computed (`LayerGrads::input` is `None`).
    pub fn backward(
        &self,
        cache: Option<&LayerCache>,
        grad_out: &Tensor4,
        want_input: bool,
    ) -> Result<LayerGrads> {
        let cache = cache.ok_or_else(|| {
            Error::State(format!("{} backward called without a cached forward pass", self.name()))
        })?;
        let mismatch = || Error::State(format!("cache does not belong to a {} layer", self.name()));
        let only_input = |g: Tensor4| LayerGrads { input: Some(g), params: Vec::new() };
        match (self, cache) {
            (Layer::Conv { cfg, weights, .. }, LayerCache::Conv { input }) => {
                let (gi, gw, gb) = conv::conv2d_backward_impl(input, weights, cfg, grad_out, want_input)?;
                Ok(LayerGrads { input: gi, params: vec![gw, gb] })
            }
            (Layer::Fc { weights, .. }, LayerCache::Fc { input }) => {
                let (gi, gw, gb) = fc::fc_backward_impl(input, weights, grad_out, want_input)?;
                Ok(LayerGrads { input: gi, params: vec![gw, gb] })
            }
            (Layer::Relu, LayerCache::Relu { input }) => Ok(only_input(relu_backward(input, grad_out)?)),
            (Layer::MaxPool(_), LayerCache::MaxPool { input_dims, output_dims, argmax }) => {
                if grad_out.dims() != *output_dims {
                    return Err(Error::InvalidShape(format!(
                        "maxpool grad_out {} does not match output {output_dims}",
                        grad_out.dims()
                    )));
                }
                Ok(only_input(maxpool_backward(*input_dims, argmax, grad_out)?))
            }
            (Layer::Lrn(cfg), LayerCache::Lrn { input }) => Ok(only_input(lrn_backward(input, cfg, grad_out)?)),
            (Layer::Dropout(_), LayerCache::Dropout { mask }) => {
                ensure_same_dims(mask, grad_out)?;
                Ok(only_input(dropout_backward(mask, grad_out)?))
            }
            _ => Err(mismatch()),
        }
    }
}

/// Backward through one layer, always computing the input gradient.
pub fn layer_backward(
    layer: &Layer,
    cache: Option<&LayerCache>,
    grad_out: &Tensor4,
) -> Result<(Tensor4, Vec<Tensor4>)> {
    let g = layer.backward(cache, grad_out, true)?;
    Ok((g.input.expect("input gradient requested"), g.params))
}
