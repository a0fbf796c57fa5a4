//! Adam with bias correction, L2 weight penalty, and a plateau learning-rate
//! schedule.

use crate::error::{Error, Result};
use crate::tensor::{ensure_same_dims, Dims, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    /// Learning rate.
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 penalty strength.
    pub lambda: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { alpha: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, lambda: 5e-4 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.lambda >= 0.0;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid Adam config {self:?}")));
        }
        Ok(())
    }
}

/// First/second moment estimates for each optimized tensor, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor4>,
    pub v: Vec<Tensor4>,
    pub t: u64,
}

impl AdamState {
    /// Zeroed moments for tensors of the given dims.
    pub fn new(dims: impl IntoIterator<Item = Dims>) -> Result<Self> {
        let m = dims.into_iter().map(Tensor4::zeros).collect::<Result<Vec<_>>>()?;
        let v = m.clone();
        Ok(AdamState { m, v, t: 0 })
    }

    pub fn dims(&self) -> Vec<Dims> {
        self.m.iter().map(Tensor4::dims).collect()
    }
}

/// One Adam step over all tensors:
/// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`,
/// `W <- W - alpha * sqrt(1-b2^t)/(1-b1^t) * m / (sqrt(v) + eps)`.
///
/// All shapes are validated before anything is mutated.
pub fn adam_step(
    params: &mut [&mut Tensor4],
    grads: &[&Tensor4],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || state.m.len() != state.v.len() {
        return Err(Error::InvalidShape(format!(
            "adam_step: {} params, {} grads, {} moment tensors",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), (m, v)) in params.iter().zip(grads).zip(state.m.iter().zip(&state.v)) {
        ensure_same_dims(p, g)?;
        ensure_same_dims(p, m)?;
        ensure_same_dims(p, v)?;
    }
    let t = state.t.checked_add(1).ok_or_else(|| Error::State("Adam step counter overflow".into()))?;
    state.t = t;
    let tf = t as f64;
    let step = cfg.alpha * (1.0 - cfg.beta2.powf(tf)).sqrt() / (1.0 - cfg.beta1.powf(tf));

    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let pw = p.data_mut();
        for (i, &gv) in g.data().iter().enumerate() {
            let mi = &mut m.data_mut()[i];
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gv;
            let vi = &mut v.data_mut()[i];
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gv * gv;
            pw[i] -= step * *mi / (vi.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

/// Adds `2*lambda*W` to each weight gradient and returns `lambda * sum ||W||^2`.
/// Callers pass only the tensors that are regularized (weights, not biases, by default).
pub fn apply_l2(weights: &[&Tensor4], grads: &mut [&mut Tensor4], lambda: f64) -> Result<f64> {
    if weights.len() != grads.len() {
        return Err(Error::InvalidShape(format!("{} weights, {} grads", weights.len(), grads.len())));
    }
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let mut penalty = 0.0;
    for (w, g) in weights.iter().zip(grads.iter_mut()) {
        g.add_scaled(2.0 * lambda, w)?;
        penalty += w.sq_l2();
    }
    Ok(lambda * penalty)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlateauMetric {
    /// Higher is better.
    ValidationAccuracy,
    /// Lower is better.
    TrainingLoss,
}

/// Divides the learning rate by `factor` once the monitored metric has failed
/// to improve by more than `min_delta` for `patience` consecutive observations.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub metric: PlateauMetric,
    pub patience: usize,
    pub min_delta: f64,
    pub factor: f64,
    pub floor: f64,
    best: Option<f64>,
    stalled: usize,
}

impl Default for PlateauScheduler {
    fn default() -> Self {
        PlateauScheduler::new(PlateauMetric::ValidationAccuracy, 5, 1e-3, 10.0, 1e-8)
    }
}

impl PlateauScheduler {
    pub fn new(metric: PlateauMetric, patience: usize, min_delta: f64, factor: f64, floor: f64) -> Self {
        PlateauScheduler { metric, patience, min_delta, factor, floor, best: None, stalled: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 1.0) || self.patience == 0 || !(self.min_delta >= 0.0) || !(self.floor >= 0.0) {
            return Err(Error::InvalidArgument(format!("invalid plateau scheduler {self:?}")));
        }
        Ok(())
    }

    /// Best value seen so far and the current count of non-improving observations.
    pub fn progress(&self) -> (Option<f64>, usize) {
        (self.best, self.stalled)
    }

    /// Restores progress saved by [`PlateauScheduler::progress`].
    pub fn restore(&mut self, best: Option<f64>, stalled: usize) {
        self.best = best;
        self.stalled = stalled;
    }

    /// Feeds one observation and returns the (possibly reduced) learning rate.
    pub fn observe(&mut self, value: f64, current_alpha: f64) -> f64 {
        let improved = match (self.best, self.metric) {
            (None, _) => true,
            (Some(b), PlateauMetric::ValidationAccuracy) => value > b + self.min_delta,
            (Some(b), PlateauMetric::TrainingLoss) => value < b - self.min_delta,
        };
        if improved {
            self.best = Some(value);
            self.stalled = 0;
            return current_alpha;
        }
        self.stalled += 1;
        if self.stalled < self.patience {
            return current_alpha;
        }
        self.stalled = 0;
        if current_alpha <= self.floor {
            return current_alpha;
        }
        (current_alpha / self.factor).max(self.floor)
    }
}
