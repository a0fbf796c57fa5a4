use crate::archdsl::{render, LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::init::{init_weights, zero_init, InitKind, InitSpec};
use crate::layers::{fc_weight_dims, Layer, LayerCache, Mode};
use crate::rng::{self, stream, Rng};
use crate::tensor::{Dims, Tensor4};

/// Ordered layers with parameters, per-layer freeze flags, and the forward
/// caches of the most recent training-mode pass.
///
/// Layer `i` corresponds to `spec.layers[i]`; a trailing `Softmax` in the spec
/// is the loss head and has no layer of its own.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Layer>,
    frozen: Vec<bool>,
    seed: u64,
    rng: Rng,
    caches: Vec<Option<LayerCache>>,
}

/// Parameter gradients of one layer. `discard` is set for frozen layers.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub tensors: Vec<Tensor4>,
    pub discard: bool,
}

/// Per-layer gradients from [`Network::backward`]; `None` for parameter-free layers.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<Option<ParamGrads>>,
}

impl Gradients {
    /// Gradients of trainable (non-discarded) parameters, in parameter order.
    pub fn trainable(&self) -> Vec<&Tensor4> {
        self.layers.iter().flatten().filter(|g| !g.discard).flat_map(|g| g.tensors.iter()).collect()
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor4> {
        self.layers.iter_mut().flatten().filter(|g| !g.discard).flat_map(|g| g.tensors.iter_mut()).collect()
    }
}

fn layer_count(spec: &NetworkSpec) -> usize {
    spec.layers.len() - usize::from(spec.ends_with_softmax())
}

fn init_layer(spec: &LayerSpec, input_channels: usize, input_len: usize, kind: InitKind, rng: &mut Rng) -> Result<Layer> {
    Ok(match spec {
        LayerSpec::Conv(cfg) => Layer::Conv {
            cfg: *cfg,
            weights: init_weights(kind, cfg.weight_dims(input_channels), rng)?,
            bias: zero_init(cfg.bias_dims())?,
        },
        LayerSpec::Fc { neurons } => Layer::Fc {
            weights: init_weights(kind, fc_weight_dims(input_len, *neurons), rng)?,
            bias: zero_init((1, *neurons, 1, 1))?,
        },
        LayerSpec::ReLU => Layer::Relu,
        LayerSpec::MaxPool(cfg) => Layer::MaxPool(*cfg),
        LayerSpec::Lrn(cfg) => Layer::Lrn(*cfg),
        LayerSpec::Dropout(cfg) => Layer::Dropout(*cfg),
        LayerSpec::Softmax => unreachable!("softmax head has no layer"),
    })
}

impl Network {
    /// Builds with one initializer for all weights (biases are always zero).
    pub fn build(spec: NetworkSpec, init: &InitSpec) -> Result<Network> {
        Self::build_with(spec, init.kind, init.kind, init.seed)
    }

    /// Builds with separate conv and FC weight initializers. Each layer draws
    /// from its own stream derived from `seed` and its index.
    pub fn build_with(spec: NetworkSpec, conv_init: InitKind, fc_init: InitKind, seed: u64) -> Result<Network> {
        let n = layer_count(&spec);
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let input = if i == 0 { spec.input } else { spec.shapes[i - 1] };
            let kind = if spec.layers[i].is_conv() { conv_init } else { fc_init };
            let mut r = rng::derived(seed, stream::INIT, i as u64);
            layers.push(init_layer(&spec.layers[i], input.c, input.len(), kind, &mut r)?);
        }
        Ok(Network {
            spec,
            layers,
            frozen: vec![false; n],
            seed,
            rng: rng::derived(seed, stream::DROPOUT, 0),
            caches: vec![None; n],
        })
    }

    /// Reassembles a network from stored parameters (weights then bias per
    /// parameterized layer, in layer order).
    pub fn from_parts(spec: NetworkSpec, params: Vec<Tensor4>, frozen: Vec<bool>, seed: u64) -> Result<Network> {
        let mut net = Self::build_with(spec, InitKind::Zero, InitKind::Zero, seed)?;
        if frozen.len() != net.layers.len() {
            return Err(Error::InvalidShape(format!(
                "{} freeze flags for {} layers",
                frozen.len(),
                net.layers.len()
            )));
        }
        let expected: Vec<Dims> = net.params().iter().map(|p| p.dims()).collect();
        let got: Vec<Dims> = params.iter().map(Tensor4::dims).collect();
        if expected != got {
            return Err(Error::InvalidShape(format!("stored parameters {got:?} do not match architecture {expected:?}")));
        }
        for (dst, src) in net.params_mut().into_iter().zip(params) {
            *dst = src;
        }
        net.frozen = frozen;
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn arch(&self) -> String {
        render(&self.spec)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn frozen(&self) -> &[bool] {
        &self.frozen
    }

    pub fn classes(&self) -> Option<usize> {
        self.spec.classes()
    }

    /// Every parameter tensor: weights then bias, layer by layer.
    pub fn params(&self) -> Vec<&Tensor4> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor4> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    /// Parameters of unfrozen layers, in parameter order.
    pub fn trainable_params_mut(&mut self) -> Vec<&mut Tensor4> {
        self.layers
            .iter_mut()
            .zip(&self.frozen)
            .filter(|(_, f)| !**f)
            .flat_map(|(l, _)| l.params_mut())
            .collect()
    }

    pub fn trainable_dims(&self) -> Vec<Dims> {
        self.layers
            .iter()
            .zip(&self.frozen)
            .filter(|(_, f)| !**f)
            .flat_map(|(l, _)| l.params())
            .map(Tensor4::dims)
            .collect()
    }

    /// Weight tensors (never biases), with a flag telling whether each is trainable.
    pub fn weights(&self) -> Vec<(&Tensor4, bool)> {
        self.layers
            .iter()
            .zip(&self.frozen)
            .filter_map(|(l, &f)| match l {
                Layer::Conv { weights, .. } | Layer::Fc { weights, .. } => Some((weights, !f)),
                _ => None,
            })
            .collect()
    }

    /// Bias tensors, with trainable flags.
    pub fn biases(&self) -> Vec<(&Tensor4, bool)> {
        self.layers
            .iter()
            .zip(&self.frozen)
            .filter_map(|(l, &f)| match l {
                Layer::Conv { bias, .. } | Layer::Fc { bias, .. } => Some((bias, !f)),
                _ => None,
            })
            .collect()
    }

    /// Marks every layer satisfying `pred` as frozen; other flags are unchanged.
    pub fn freeze(&mut self, pred: impl Fn(usize, &LayerSpec) -> bool) -> &mut Self {
        for (i, f) in self.frozen.iter_mut().enumerate() {
            if pred(i, &self.spec.layers[i]) {
                *f = true;
            }
        }
        self
    }

    pub fn unfreeze_all(&mut self) -> &mut Self {
        self.frozen.iter_mut().for_each(|f| *f = false);
        self
    }

    /// Re-draws the weights of layers satisfying `pred` and zeroes their biases.
    pub fn reinit(&mut self, pred: impl Fn(usize, &LayerSpec) -> bool, kind: InitKind, seed: u64) -> Result<()> {
        for i in 0..self.layers.len() {
            if !self.layers[i].has_params() || !pred(i, &self.spec.layers[i]) {
                continue;
            }
            let input = if i == 0 { self.spec.input } else { self.spec.shapes[i - 1] };
            let mut r = rng::derived(seed, stream::FINETUNE_INIT, i as u64);
            self.layers[i] = init_layer(&self.spec.layers[i], input.c, input.len(), kind, &mut r)?;
        }
        Ok(())
    }

    /// Selects the dropout stream; the training loop uses one stream per iteration.
    pub fn set_rng_stream(&mut self, index: u64) {
        self.rng = rng::derived(self.seed, stream::DROPOUT, index);
    }

    fn check_input(&self, batch: &Tensor4) -> Result<()> {
        let d = batch.dims();
        let i = self.spec.input;
        if (d.c, d.h, d.w) != (i.c, i.h, i.w) {
            return Err(Error::InvalidShape(format!("batch {d} does not match network input {i}")));
        }
        Ok(())
    }

    /// Runs all layers. Train mode caches every layer's forward state and
    /// draws dropout masks; Test mode clears the caches.
    pub fn forward(&mut self, batch: &Tensor4, mode: Mode) -> Result<Tensor4> {
        if mode == Mode::Test {
            self.caches.iter_mut().for_each(|c| *c = None);
            return self.logits(batch);
        }
        self.check_input(batch)?;
        let mut x = batch.clone();
        for (layer, cache) in self.layers.iter().zip(self.caches.iter_mut()) {
            let (y, c) = layer.forward(&x, mode, &mut self.rng)?;
            *cache = Some(c);
            x = y;
        }
        Ok(x)
    }

    /// Test-mode forward pass without touching caches.
    pub fn logits(&self, batch: &Tensor4) -> Result<Tensor4> {
        self.check_input(batch)?;
        let mut scratch = rng::seeded(0);
        let mut x = batch.clone();
        for layer in &self.layers {
            x = layer.forward(&x, Mode::Test, &mut scratch)?.0;
        }
        Ok(x)
    }

    /// Chains layer backward passes in reverse order from the gradient of the
    /// loss with respect to the network output.
    pub fn backward(&mut self, grad_logits: &Tensor4) -> Result<Gradients> {
        let mut grads: Vec<Option<ParamGrads>> = vec![None; self.layers.len()];
        let mut g = grad_logits.clone();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let cache = self.caches[i].as_ref().ok_or_else(|| {
                Error::State(format!("backward without a cached training forward pass (layer {i})"))
            })?;
            let lg = layer.backward(Some(cache), &g, i > 0)?;
            if layer.has_params() {
                grads[i] = Some(ParamGrads { tensors: lg.params, discard: self.frozen[i] });
            }
            if let Some(gi) = lg.input {
                g = gi;
            }
        }
        Ok(Gradients { layers: grads })
    }

    /// Copies conv layer parameters from `source`, re-initializes FC layers with
    /// a zero-mean Gaussian of `std` (zero biases) and freezes every conv layer.
    pub fn prepare_finetune(&mut self, source: &Network, std: f64, seed: u64) -> Result<()> {
        for (i, spec) in self.spec.layers.iter().enumerate() {
            if !spec.is_conv() {
                continue;
            }
            let src = source.layers.get(i).filter(|l| {
                matches!(l, Layer::Conv { .. }) && l.params().iter().map(|p| p.dims()).eq(self.layers[i].params().iter().map(|p| p.dims()))
            });
            match src {
                Some(l) => self.layers[i] = l.clone(),
                None => {
                    return Err(Error::State(format!("source network has no matching conv layer at index {i}")));
                }
            }
        }
        self.reinit(|_, s| s.is_fc(), InitKind::Gaussian { std }, seed)?;
        self.unfreeze_all();
        self.freeze(|_, s| s.is_conv());
        Ok(())
    }
}
