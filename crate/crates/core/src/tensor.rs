//! Dense rank-4 tensor in `(batch, channel, height, width)` row-major layout.
//!
//! Images, activations, weights, gradients and optimizer moments all live in
//! this one container. Conv weights are `(filters, in_channels, kh, kw)`, FC
//! weights `(out, in, 1, 1)` and biases `(1, out, 1, 1)`.

use std::fmt;

use crate::error::{Error, Result};

/// Tensor dimensions `(n, c, h, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Dims { n, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one sample (`c * h * w`).
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.c == 0 || self.h == 0 || self.w == 0 {
            return Err(Error::InvalidShape(format!("zero dimension in {self}")));
        }
        Ok(())
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.c, self.h, self.w)
    }
}

impl From<(usize, usize, usize, usize)> for Dims {
    fn from((n, c, h, w): (usize, usize, usize, usize)) -> Self {
        Dims { n, c, h, w }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    dims: Dims,
    data: Vec<f64>,
}

impl Tensor4 {
    /// Tensor of `dims` with every element set to `fill`.
    pub fn new(dims: impl Into<Dims>, fill: f64) -> Result<Self> {
        let dims = dims.into();
        dims.validate()?;
        Ok(Tensor4 { dims, data: vec![fill; dims.len()] })
    }

    pub fn zeros(dims: impl Into<Dims>) -> Result<Self> {
        Self::new(dims, 0.0)
    }

    pub fn from_vec(dims: impl Into<Dims>, data: Vec<f64>) -> Result<Self> {
        let dims = dims.into();
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(Error::InvalidShape(format!(
                "{} elements supplied for dims {dims} ({} expected)",
                data.len(),
                dims.len()
            )));
        }
        Ok(Tensor4 { dims, data })
    }

    /// Zero tensor with the same dims as `self`.
    pub fn zeros_like(&self) -> Self {
        Tensor4 { dims: self.dims, data: vec![0.0; self.data.len()] }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Flat offset of `(i, j, y, x)`: `((i*c + j)*h + y)*w + x`.
    #[inline]
    pub fn offset(&self, i: usize, j: usize, y: usize, x: usize) -> usize {
        ((i * self.dims.c + j) * self.dims.h + y) * self.dims.w + x
    }

    fn checked_offset(&self, i: usize, j: usize, y: usize, x: usize) -> Result<usize> {
        let d = self.dims;
        if i >= d.n || j >= d.c || y >= d.h || x >= d.w {
            return Err(Error::Index { index: [i, j, y, x], dims: d });
        }
        Ok(self.offset(i, j, y, x))
    }

    pub fn get(&self, i: usize, j: usize, y: usize, x: usize) -> Result<f64> {
        Ok(self.data[self.checked_offset(i, j, y, x)?])
    }

    pub fn set(&mut self, i: usize, j: usize, y: usize, x: usize, v: f64) -> Result<()> {
        let off = self.checked_offset(i, j, y, x)?;
        self.data[off] = v;
        Ok(())
    }

    /// Same data under new dims of equal length.
    pub fn reshape(self, dims: impl Into<Dims>) -> Result<Self> {
        Self::from_vec(dims, self.data)
    }

    /// Copy of sample `i` as a `(1, c, h, w)` tensor.
    pub fn sample(&self, i: usize) -> Result<Tensor4> {
        if i >= self.dims.n {
            return Err(Error::Index { index: [i, 0, 0, 0], dims: self.dims });
        }
        let len = self.dims.sample_len();
        Tensor4::from_vec(
            (1, self.dims.c, self.dims.h, self.dims.w),
            self.data[i * len..(i + 1) * len].to_vec(),
        )
    }

    /// Stack `(1, c, h, w)` tensors of equal dims into one `(k, c, h, w)` batch.
    pub fn stack<'a>(items: impl IntoIterator<Item = &'a Tensor4>) -> Result<Tensor4> {
        let mut data = Vec::new();
        let mut dims: Option<Dims> = None;
        let mut n = 0;
        for t in items {
            let d = t.dims();
            match dims {
                None => dims = Some(d),
                Some(first) if (first.c, first.h, first.w) != (d.c, d.h, d.w) => {
                    return Err(Error::InvalidShape(format!("cannot stack {d} onto {first}")));
                }
                _ => {}
            }
            n += d.n;
            data.extend_from_slice(t.data());
        }
        let d = dims.ok_or_else(|| Error::InvalidShape("cannot stack zero tensors".into()))?;
        Tensor4::from_vec((n, d.c, d.h, d.w), data)
    }

    /// Elementwise `a * x + y`.
    pub fn axpy_scale(a: f64, x: &Tensor4, y: &Tensor4) -> Result<Tensor4> {
        ensure_same_dims(x, y)?;
        let data = x.data.iter().zip(&y.data).map(|(xv, yv)| a * xv + yv).collect();
        Ok(Tensor4 { dims: y.dims, data })
    }

    /// In-place `self += a * x`.
    pub fn add_scaled(&mut self, a: f64, x: &Tensor4) -> Result<()> {
        ensure_same_dims(x, self)?;
        for (s, xv) in self.data.iter_mut().zip(&x.data) {
            *s += a * xv;
        }
        Ok(())
    }

    /// Squared L2 norm: sum of squared elements.
    pub fn sq_l2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor4 {
        Tensor4 { dims: self.dims, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|e| *e = v);
    }
}

pub(crate) fn ensure_same_dims(a: &Tensor4, b: &Tensor4) -> Result<()> {
    if a.dims != b.dims {
        return Err(Error::InvalidShape(format!("dims {} and {} differ", a.dims, b.dims)));
    }
    Ok(())
}
