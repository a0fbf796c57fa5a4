use crate::error::Result;
use crate::tensor::{ensure_same_dims, Tensor4};

pub fn relu_forward(input: &Tensor4) -> Tensor4 {
    input.map(|v| v.max(0.0))
}

/// Passes gradient where the forward input was strictly positive.
pub fn relu_backward(input: &Tensor4, grad_out: &Tensor4) -> Result<Tensor4> {
    ensure_same_dims(input, grad_out)?;
    let mut g = grad_out.clone();
    for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *gv = 0.0;
        }
    }
    Ok(g)
}
