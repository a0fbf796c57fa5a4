use rand::Rng as _;

use super::Mode;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{ensure_same_dims, Tensor4};

/// `p` is the probability of dropping a unit during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutConfig {
    pub p: f64,
}

impl Default for DropoutConfig {
    fn default() -> Self {
        DropoutConfig { p: 0.5 }
    }
}

impl DropoutConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.p) {
            return Err(Error::InvalidArgument(format!("dropout p={} outside [0, 1)", self.p)));
        }
        Ok(())
    }
}

/// Train: zero each element with probability `p` (one uniform draw per
/// element), returning the 0/1 keep mask. Test: scale by `1 - p`, mask all ones.
pub fn dropout_apply(
    input: &Tensor4,
    cfg: &DropoutConfig,
    mode: Mode,
    rng: &mut Rng,
) -> (Tensor4, Tensor4) {
    match mode {
        Mode::Train => {
            let mut mask = input.zeros_like();
            for m in mask.data_mut() {
                *m = if rng.random::<f64>() >= cfg.p { 1.0 } else { 0.0 };
            }
            (apply_mask(input, &mask), mask)
        }
        Mode::Test => {
            let keep = 1.0 - cfg.p;
            (input.map(|v| v * keep), Tensor4::new(input.dims(), 1.0).expect("valid dims"))
        }
    }
}

pub(crate) fn apply_mask(input: &Tensor4, mask: &Tensor4) -> Tensor4 {
    let mut out = input.clone();
    for (o, &m) in out.data_mut().iter_mut().zip(mask.data()) {
        if m == 0.0 {
            *o = 0.0;
        }
    }
    out
}

pub fn dropout_backward(mask: &Tensor4, grad_out: &Tensor4) -> Result<Tensor4> {
    ensure_same_dims(mask, grad_out)?;
    Ok(apply_mask(grad_out, mask))
}
