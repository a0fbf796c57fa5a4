//! Dataset preprocessing and label-preserving augmentation.
//!
//! Images are `(1, 3, H, W)` tensors of raw `[0, 255]` values until
//! [`mean_subtract`] centers them.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{self, stream, Rng};
use crate::tensor::Tensor4;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor4,
    pub label: usize,
    pub id: String,
}

impl Sample {
    pub fn new(image: Tensor4, label: usize, id: impl Into<String>) -> Result<Self> {
        let d = image.dims();
        if d.n != 1 || d.c != 3 {
            return Err(Error::InvalidShape(format!("sample image must be (1,3,H,W), got {d}")));
        }
        Ok(Sample { image, label, id: id.into() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

/// How the training mean is computed for centering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MeanMode {
    /// One scalar per channel.
    #[default]
    PerChannel,
    /// A full mean image; requires every image to share one size.
    PerPixel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub split: Vec<Split>,
    pub class_names: Vec<String>,
    /// Training mean that was subtracted: `(1,3,1,1)` per-channel or `(1,3,H,W)` per-pixel.
    pub mean: Option<Tensor4>,
}

impl Dataset {
    pub fn split_samples(&self, which: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().zip(&self.split).filter(move |(_, s)| **s == which).map(|(s, _)| s)
    }

    pub fn train(&self) -> Vec<&Sample> {
        self.split_samples(Split::Train).collect()
    }

    pub fn val(&self) -> Vec<&Sample> {
        self.split_samples(Split::Val).collect()
    }

    /// Per-channel values of the subtracted mean (averaged over pixels for a mean image).
    pub fn channel_means(&self) -> Option<[f64; 3]> {
        self.mean.as_ref().map(channel_averages)
    }
}

fn channel_averages(t: &Tensor4) -> [f64; 3] {
    let d = t.dims();
    let plane = d.h * d.w;
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate().take(d.c.min(3)) {
        *o = t.data()[c * plane..(c + 1) * plane].iter().sum::<f64>() / plane as f64;
    }
    out
}

/// Bilinear resize with half-pixel centers. Each output is a convex
/// combination of its four neighbours, clamped to their range.
pub fn resize_to(image: &Tensor4, target: (usize, usize)) -> Result<Tensor4> {
    let d = image.dims();
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::InvalidArgument(format!("resize target {th}x{tw}")));
    }
    if (d.h, d.w) == (th, tw) {
        return Ok(image.clone());
    }
    let coords = |out: usize, src: usize, dst: usize| -> (usize, usize, f64) {
        let s = ((out as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(src - 1);
        (i0, i1, s - i0 as f64)
    };
    let xs: Vec<_> = (0..tw).map(|x| coords(x, d.w, tw)).collect();
    let mut out = Tensor4::zeros((d.n, d.c, th, tw))?;
    let src = image.data();
    let mut o = 0;
    for plane in 0..d.n * d.c {
        let base = plane * d.h * d.w;
        for y in 0..th {
            let (y0, y1, fy) = coords(y, d.h, th);
            for &(x0, x1, fx) in &xs {
                let a = src[base + y0 * d.w + x0];
                let b = src[base + y0 * d.w + x1];
                let c = src[base + y1 * d.w + x0];
                let e = src[base + y1 * d.w + x1];
                let top = (1.0 - fx) * a + fx * b;
                let bottom = (1.0 - fx) * c + fx * e;
                let v = (1.0 - fy) * top + fy * bottom;
                let lo = a.min(b).min(c).min(e);
                let hi = a.max(b).max(c).max(e);
                out.data_mut()[o] = v.clamp(lo, hi);
                o += 1;
            }
        }
    }
    Ok(out)
}

/// Mirror along the width axis.
pub fn hflip(image: &Tensor4) -> Tensor4 {
    let d = image.dims();
    let mut out = image.clone();
    for (dst, src) in out.data_mut().chunks_exact_mut(d.w).zip(image.data().chunks_exact(d.w)) {
        for (x, v) in dst.iter_mut().enumerate() {
            *v = src[d.w - 1 - x];
        }
    }
    out
}

/// Extracts the `ch x cw` block at `(top, left)`.
pub fn crop_at(image: &Tensor4, top: usize, left: usize, crop: (usize, usize)) -> Result<Tensor4> {
    let d = image.dims();
    let (ch, cw) = crop;
    if ch == 0 || cw == 0 || top + ch > d.h || left + cw > d.w {
        return Err(Error::InvalidArgument(format!(
            "crop {ch}x{cw} at ({top},{left}) does not fit {}x{}",
            d.h, d.w
        )));
    }
    let mut data = Vec::with_capacity(d.n * d.c * ch * cw);
    for plane in 0..d.n * d.c {
        for y in top..top + ch {
            let row = plane * d.h * d.w + y * d.w;
            data.extend_from_slice(&image.data()[row + left..row + left + cw]);
        }
    }
    Tensor4::from_vec((d.n, d.c, ch, cw), data)
}

/// Crop of size `crop` at an offset drawn uniformly from all valid offsets.
pub fn random_crop(image: &Tensor4, crop: (usize, usize), rng: &mut Rng) -> Result<Tensor4> {
    let d = image.dims();
    let (ch, cw) = crop;
    if ch == 0 || cw == 0 || ch > d.h || cw > d.w {
        return Err(Error::InvalidArgument(format!("crop {ch}x{cw} larger than image {}x{}", d.h, d.w)));
    }
    let top = rng.random_range(0..=d.h - ch);
    let left = rng.random_range(0..=d.w - cw);
    crop_at(image, top, left, crop)
}

/// Which set of augmented copies each training sample expands into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Expansion {
    /// Original, its mirror, and three random crops of the original: 5 copies.
    #[default]
    Five,
    /// Three random crops of the original and three of its mirror: 6 copies.
    SixCrops,
}

impl Expansion {
    pub fn factor(&self) -> usize {
        match self {
            Expansion::Five => 5,
            Expansion::SixCrops => 6,
        }
    }
}

fn cropped_copy(sample: &Sample, source: &Tensor4, crop: (usize, usize), rng: &mut Rng, tag: String) -> Result<Sample> {
    let d = sample.image.dims();
    let img = resize_to(&random_crop(source, crop, rng)?, (d.h, d.w))?;
    Ok(Sample { image: img, label: sample.label, id: format!("{}#{tag}", sample.id) })
}

/// `{original, hflip(original), 3 random crops resized back to the original size}`.
pub fn expand_x5(sample: &Sample, crop: (usize, usize), rng: &mut Rng) -> Result<Vec<Sample>> {
    expand(sample, crop, Expansion::Five, rng)
}

pub fn expand(sample: &Sample, crop: (usize, usize), mode: Expansion, rng: &mut Rng) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(mode.factor());
    match mode {
        Expansion::Five => {
            out.push(Sample { id: format!("{}#orig", sample.id), ..sample.clone() });
            out.push(Sample {
                image: hflip(&sample.image),
                label: sample.label,
                id: format!("{}#flip", sample.id),
            });
            for k in 0..3 {
                out.push(cropped_copy(sample, &sample.image, crop, rng, format!("crop{k}"))?);
            }
        }
        Expansion::SixCrops => {
            let flipped = hflip(&sample.image);
            for k in 0..3 {
                out.push(cropped_copy(sample, &sample.image, crop, rng, format!("crop{k}"))?);
            }
            for k in 0..3 {
                out.push(cropped_copy(sample, &flipped, crop, rng, format!("flipcrop{k}"))?);
            }
        }
    }
    Ok(out)
}

/// Expands every training sample. Each sample draws from its own stream
/// derived from `(seed, sample id)`, so output is independent of ordering.
pub fn augment_train(dataset: &Dataset, crop: (usize, usize), mode: Expansion, seed: u64) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for s in dataset.split_samples(Split::Train) {
        let mut r = rng::derived(seed, stream::AUGMENT, rng::stable_hash(&s.id));
        out.extend(expand(s, crop, mode, &mut r)?);
    }
    Ok(out)
}

/// Number of training samples for `n` total: `ceil(0.6 n)`.
pub fn train_count(n: usize) -> usize {
    (3 * n).div_ceil(5)
}

/// Seeded shuffle, then the first `ceil(0.6 N)` samples are Train, the rest Val.
pub fn split_60_40(mut samples: Vec<Sample>, seed: u64) -> Result<Dataset> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty sample list".into()));
    }
    samples.shuffle(&mut rng::derived(seed, stream::SPLIT, 0));
    let n_train = train_count(samples.len());
    let split = (0..samples.len()).map(|i| if i < n_train { Split::Train } else { Split::Val }).collect();
    Ok(Dataset { samples, split, class_names: Vec::new(), mean: None })
}

/// Computes the training-split mean and subtracts it from every image of both splits.
pub fn mean_subtract(dataset: &mut Dataset, mode: MeanMode) -> Result<()> {
    let train: Vec<&Sample> = dataset.train();
    let first = train
        .first()
        .ok_or_else(|| Error::State("mean subtraction needs a non-empty train split".into()))?;
    let mean = match mode {
        MeanMode::PerChannel => {
            let mut sums = [0.0f64; 3];
            let mut count = 0usize;
            for s in &train {
                let d = s.image.dims();
                let plane = d.h * d.w;
                for (c, sum) in sums.iter_mut().enumerate() {
                    *sum += s.image.data()[c * plane..(c + 1) * plane].iter().sum::<f64>();
                }
                count += plane;
            }
            Tensor4::from_vec((1, 3, 1, 1), sums.iter().map(|s| s / count as f64).collect())?
        }
        MeanMode::PerPixel => {
            let mut acc = first.image.zeros_like();
            for s in &train {
                acc.add_scaled(1.0, &s.image).map_err(|_| {
                    Error::State("per-pixel mean requires equally sized images".into())
                })?;
            }
            let n = train.len() as f64;
            acc.map(|v| v / n)
        }
    };
    for s in &mut dataset.samples {
        s.image = subtract_mean(&s.image, &mean)?;
    }
    dataset.mean = Some(mean);
    Ok(())
}

/// Subtracts a `(1,3,1,1)` channel mean or a same-size mean image.
pub fn subtract_mean(image: &Tensor4, mean: &Tensor4) -> Result<Tensor4> {
    let d = image.dims();
    let md = mean.dims();
    if md.n != 1 || md.c != d.c {
        return Err(Error::InvalidShape(format!("mean {md} incompatible with image {d}")));
    }
    let mut out = image.clone();
    let plane = d.h * d.w;
    if md.h == 1 && md.w == 1 {
        for (k, chunk) in out.data_mut().chunks_exact_mut(plane).enumerate() {
            let m = mean.data()[k % d.c];
            chunk.iter_mut().for_each(|v| *v -= m);
        }
    } else if (md.h, md.w) == (d.h, d.w) {
        for chunk in out.data_mut().chunks_exact_mut(mean.len()) {
            for (v, m) in chunk.iter_mut().zip(mean.data()) {
                *v -= m;
            }
        }
    } else {
        return Err(Error::InvalidShape(format!("mean image {md} does not match {d}")));
    }
    Ok(out)
}

/// Deterministic single-label reduction: the lexicographically smallest name.
pub fn reduce_multilabel<S: AsRef<str>>(labels: &[S]) -> Result<String> {
    labels
        .iter()
        .map(AsRef::as_ref)
        .min()
        .map(str::to_owned)
        .ok_or_else(|| Error::InvalidArgument("empty label set".into()))
}
