//! Finite-difference verification of analytic gradients.
//!
//! Every check uses the scalar probe `L = sum(out * R)` for a fixed random `R`
//! (or the cross-entropy loss for the softmax head and whole networks), and
//! compares the analytic gradient with central differences.

use std::fmt;

use crate::archdsl::{parse_with_input, Shape};
use crate::error::Result;
use crate::init::{uniform_tensor, InitSpec};
use crate::layers::{softmax_cross_entropy, ConvConfig, DropoutConfig, Layer, LrnConfig, Mode, PoolConfig};
use crate::rng::{self, Rng};
use crate::tensor::Tensor4;
use crate::trainer::Network;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Check at most this many entries per tensor (evenly strided); `None` checks all.
    pub max_probes: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { epsilon: 1e-5, tolerance: 1e-4, max_probes: None }
    }
}

/// `|a - b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<24} entries={:<6} max_rel_err={:.3e} (worst #{})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.checked,
            self.max_rel_error,
            self.worst_index
        )
    }
}

fn probe_indices(len: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < len => (0..m).map(|k| k * len / m).collect(),
        _ => (0..len).collect(),
    }
}

/// Compares `analytic` with central differences of `loss` around `x`.
pub fn check_tensor(
    name: &str,
    x: &Tensor4,
    analytic: &Tensor4,
    cfg: &GradCheckConfig,
    mut loss: impl FnMut(&Tensor4) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut probe = x.clone();
    let mut report = GradCheckReport {
        name: name.to_string(),
        checked: 0,
        max_rel_error: 0.0,
        worst_index: 0,
        tolerance: cfg.tolerance,
    };
    for i in probe_indices(x.len(), cfg.max_probes) {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + cfg.epsilon;
        let plus = loss(&probe)?;
        probe.data_mut()[i] = orig - cfg.epsilon;
        let minus = loss(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * cfg.epsilon);
        let err = relative_error(analytic.data()[i], numeric);
        if err > report.max_rel_error || err.is_nan() {
            report.max_rel_error = err;
            report.worst_index = i;
        }
        report.checked += 1;
    }
    Ok(report)
}

fn dot(a: &Tensor4, b: &Tensor4) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

const MASK_SEED: u64 = 0xD0;

fn probe_forward(layer: &Layer, x: &Tensor4, r: &Tensor4) -> Result<f64> {
    // Re-seeding makes dropout draw the same mask on every evaluation.
    let (out, _) = layer.forward(x, Mode::Train, &mut rng::seeded(MASK_SEED))?;
    Ok(dot(&out, r))
}

/// Checks the input gradient and every parameter gradient of one layer.
pub fn check_layer(layer: &Layer, input: &Tensor4, cfg: &GradCheckConfig, seed: u64) -> Result<Vec<GradCheckReport>> {
    let (out, cache) = layer.forward(input, Mode::Train, &mut rng::seeded(MASK_SEED))?;
    let r = uniform_tensor(-1.0, 1.0, out.dims(), &mut rng::derived(seed, 0x9C, 0))?;
    let grads = layer.backward(Some(&cache), &r, true)?;
    let mut reports = Vec::new();
    if let Some(gi) = &grads.input {
        let name = format!("{}/input", layer.name());
        reports.push(check_tensor(&name, input, gi, cfg, |x| probe_forward(layer, x, &r))?);
    }
    let slots = ["weights", "bias"];
    for (k, g) in grads.params.iter().enumerate() {
        let name = format!("{}/{}", layer.name(), slots[k]);
        let base = layer.params()[k].clone();
        let report = check_tensor(&name, &base, g, cfg, |p| {
            let mut l = layer.clone();
            *l.params_mut()[k] = p.clone();
            probe_forward(&l, input, &r)
        })?;
        reports.push(report);
    }
    Ok(reports)
}

/// Checks the gradient of mean cross-entropy with respect to the logits.
pub fn check_softmax_ce(logits: &Tensor4, labels: &[usize], cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let analytic = softmax_cross_entropy(logits, labels)?.grad_logits;
    check_tensor("softmax-ce/logits", logits, &analytic, cfg, |z| Ok(softmax_cross_entropy(z, labels)?.loss))
}

fn network_loss(net: &mut Network, batch: &Tensor4, labels: &[usize]) -> Result<f64> {
    net.set_rng_stream(0);
    let logits = net.forward(batch, Mode::Train)?;
    Ok(softmax_cross_entropy(&logits, labels)?.loss)
}

/// Checks every parameter tensor of a network under the cross-entropy loss.
pub fn check_network(
    net: &Network,
    batch: &Tensor4,
    labels: &[usize],
    cfg: &GradCheckConfig,
) -> Result<Vec<GradCheckReport>> {
    let mut work = net.clone();
    work.set_rng_stream(0);
    let logits = work.forward(batch, Mode::Train)?;
    let out = softmax_cross_entropy(&logits, labels)?;
    let grads = work.backward(&out.grad_logits)?;

    let mut reports = Vec::new();
    let mut slot = 0;
    for (i, g) in grads.layers.iter().enumerate() {
        let Some(g) = g else { continue };
        for (k, analytic) in g.tensors.iter().enumerate() {
            let name = format!("network/{}{}/{}", net.layers()[i].name(), i, ["weights", "bias"][k]);
            let base = net.params()[slot].clone();
            let s = slot;
            let report = check_tensor(&name, &base, analytic, cfg, |p| {
                *work.params_mut()[s] = p.clone();
                network_loss(&mut work, batch, labels)
            })?;
            *work.params_mut()[s] = base;
            reports.push(report);
            slot += 1;
        }
    }
    Ok(reports)
}

/// Layer kinds understood by [`standard_suite`].
pub const SUITE_KINDS: [&str; 8] = ["conv", "relu", "maxpool", "lrn", "dropout", "fc", "softmax", "network"];

/// Values in `[lo, hi)` bounded away from zero by at least `gap`.
fn away_from_zero(dims: (usize, usize, usize, usize), gap: f64, rng: &mut Rng) -> Result<Tensor4> {
    let t = uniform_tensor(-1.0, 1.0, dims, rng)?;
    Ok(t.map(|v| if v >= 0.0 { v + gap } else { v - gap }))
}

/// Distinct, well-separated values so that every pooling window has a unique maximum.
fn distinct(dims: (usize, usize, usize, usize), rng: &mut Rng) -> Result<Tensor4> {
    use rand::seq::SliceRandom;
    let mut t = Tensor4::zeros(dims)?;
    let mut order: Vec<usize> = (0..t.len()).collect();
    order.shuffle(rng);
    for (v, k) in t.data_mut().iter_mut().zip(order) {
        *v = k as f64 * 0.05 - 1.0;
    }
    Ok(t)
}

/// Runs the built-in checks for one layer kind (see [`SUITE_KINDS`]), or all of them.
pub fn standard_suite(kind: Option<&str>, seed: u64) -> Result<Vec<GradCheckReport>> {
    let cfg = GradCheckConfig::default();
    let mut r = rng::derived(seed, 0x6C, 0);
    let mut reports = Vec::new();
    let want = |k: &str| kind.is_none_or(|w| w == k);

    if want("conv") {
        for conv in [ConvConfig::new(3), ConvConfig { filters: 2, kernel: (3, 3), stride: 2, pad: 1 }] {
            let x = uniform_tensor(-1.0, 1.0, (2, 2, 5, 5), &mut r)?;
            let layer = Layer::Conv {
                cfg: conv,
                weights: uniform_tensor(-0.5, 0.5, conv.weight_dims(2), &mut r)?,
                bias: uniform_tensor(-0.5, 0.5, conv.bias_dims(), &mut r)?,
            };
            reports.extend(check_layer(&layer, &x, &cfg, seed)?);
        }
    }
    if want("relu") {
        let x = away_from_zero((2, 3, 4, 4), 0.1, &mut r)?;
        reports.extend(check_layer(&Layer::Relu, &x, &cfg, seed)?);
    }
    if want("maxpool") {
        let x = distinct((2, 2, 4, 6), &mut r)?;
        reports.extend(check_layer(&Layer::MaxPool(PoolConfig::default()), &x, &cfg, seed)?);
    }
    if want("lrn") {
        let x = uniform_tensor(-2.0, 2.0, (2, 7, 3, 3), &mut r)?;
        reports.extend(check_layer(&Layer::Lrn(LrnConfig::default()), &x, &cfg, seed)?);
        // A large alpha makes the cross-channel term dominate.
        let strong = LrnConfig { alpha: 0.5, ..LrnConfig::default() };
        reports.extend(check_layer(&Layer::Lrn(strong), &x, &cfg, seed)?);
    }
    if want("dropout") {
        let x = uniform_tensor(-1.0, 1.0, (2, 3, 4, 4), &mut r)?;
        reports.extend(check_layer(&Layer::Dropout(DropoutConfig::default()), &x, &cfg, seed)?);
    }
    if want("fc") {
        let x = uniform_tensor(-1.0, 1.0, (3, 2, 2, 2), &mut r)?;
        let layer = Layer::Fc {
            weights: uniform_tensor(-0.5, 0.5, crate::layers::fc_weight_dims(8, 4), &mut r)?,
            bias: uniform_tensor(-0.5, 0.5, (1, 4, 1, 1), &mut r)?,
        };
        reports.extend(check_layer(&layer, &x, &cfg, seed)?);
    }
    if want("softmax") {
        let z = uniform_tensor(-3.0, 3.0, (4, 5, 1, 1), &mut r)?;
        reports.push(check_softmax_ce(&z, &[0, 4, 2, 2], &cfg)?);
    }
    if want("network") {
        let spec = parse_with_input("IMG-(Conv2-ReLU-MaxPool)-(FC4-ReLU-FC3)-Softmax", Shape::new(3, 8, 8))?;
        let net = Network::build(spec, &InitSpec::xavier(seed))?;
        let x = uniform_tensor(-1.0, 1.0, (2, 3, 8, 8), &mut r)?;
        reports.extend(check_network(&net, &x, &[0, 2], &cfg)?);
    }
    Ok(reports)
}
