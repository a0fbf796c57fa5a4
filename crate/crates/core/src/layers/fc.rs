use crate::error::{Error, Result};
use crate::tensor::{Dims, Tensor4};

pub fn fc_weight_dims(inputs: usize, outputs: usize) -> Dims {
    Dims::new(outputs, inputs, 1, 1)
}

fn check_fc(input: Dims, weights: Dims) -> Result<()> {
    if weights.c != input.sample_len() || weights.h != 1 || weights.w != 1 {
        return Err(Error::InvalidShape(format!(
            "fc weights {weights} do not accept flattened input of {} from {input}",
            input.sample_len()
        )));
    }
    Ok(())
}

/// Fully connected layer on the flattened (layout-order) sample.
pub fn fc_forward(input: &Tensor4, weights: &Tensor4, bias: &Tensor4) -> Result<Tensor4> {
    let id = input.dims();
    let wd = weights.dims();
    check_fc(id, wd)?;
    let outputs = wd.n;
    if bias.dims() != Dims::new(1, outputs, 1, 1) {
        return Err(Error::InvalidShape(format!("fc bias {} for {outputs} outputs", bias.dims())));
    }
    let k = wd.c;
    let mut out = Tensor4::zeros((id.n, outputs, 1, 1))?;
    for (i, orow) in out.data_mut().chunks_exact_mut(outputs).enumerate() {
        let x = &input.data()[i * k..(i + 1) * k];
        for (o, ov) in orow.iter_mut().enumerate() {
            let w = &weights.data()[o * k..(o + 1) * k];
            *ov = bias.data()[o] + dot(x, w);
        }
    }
    Ok(out)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorize without reassociation flags.
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[c * 4 + l] * b[c * 4 + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for e in chunks * 4..a.len() {
        s += a[e] * b[e];
    }
    s
}

#[derive(Debug, Clone)]
pub struct FcGrads {
    pub input: Tensor4,
    pub weights: Tensor4,
    pub bias: Tensor4,
}

pub fn fc_backward(input: &Tensor4, weights: &Tensor4, grad_out: &Tensor4) -> Result<FcGrads> {
    let (gi, gw, gb) = fc_backward_impl(input, weights, grad_out, true)?;
    Ok(FcGrads { input: gi.expect("input gradient requested"), weights: gw, bias: gb })
}

/// `dW = grad_out^T x`, `db = sum_i grad_out`, `dx = grad_out W`.
pub(crate) fn fc_backward_impl(
    input: &Tensor4,
    weights: &Tensor4,
    grad_out: &Tensor4,
    want_input: bool,
) -> Result<(Option<Tensor4>, Tensor4, Tensor4)> {
    let id = input.dims();
    let wd = weights.dims();
    check_fc(id, wd)?;
    let outputs = wd.n;
    if grad_out.dims() != Dims::new(id.n, outputs, 1, 1) {
        return Err(Error::InvalidShape(format!(
            "fc grad_out {} does not match ({},{outputs},1,1)",
            grad_out.dims(),
            id.n
        )));
    }
    let k = wd.c;
    let mut gw = weights.zeros_like();
    let mut gb = Tensor4::zeros((1, outputs, 1, 1))?;
    let mut gin = if want_input { Some(input.zeros_like()) } else { None };
    for i in 0..id.n {
        let x = &input.data()[i * k..(i + 1) * k];
        let g = &grad_out.data()[i * outputs..(i + 1) * outputs];
        for (o, &go) in g.iter().enumerate() {
            gb.data_mut()[o] += go;
            if go == 0.0 {
                continue;
            }
            let wrow = &mut gw.data_mut()[o * k..(o + 1) * k];
            for (w, &xv) in wrow.iter_mut().zip(x) {
                *w += go * xv;
            }
            if let Some(gin) = gin.as_mut() {
                let src = &weights.data()[o * k..(o + 1) * k];
                for (d, &wv) in gin.data_mut()[i * k..(i + 1) * k].iter_mut().zip(src) {
                    *d += go * wv;
                }
            }
        }
    }
    Ok((gin, gw, gb))
}
