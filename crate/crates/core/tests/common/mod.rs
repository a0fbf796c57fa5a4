//! Synthetic datasets shared by the integration and acceptance tests.
#![allow(dead_code)]

use microvoc::augment::{Dataset, Sample, Split};
use microvoc::rng;
use microvoc::Tensor4;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

/// Pattern drawn into an image before noise is added.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    HBar,
    VBar,
    Cross,
    Square,
    Diagonal,
    Checker,
}

fn paint(img: &mut Tensor4, pattern: Pattern, size: usize, r: &mut rng::Rng) {
    let thick = (size / 8).max(1);
    let lo = size / 8;
    let hi = size - lo - thick;
    let a = r.random_range(lo..=hi);
    let b = r.random_range(lo..=hi);
    let amp = r.random_range(0.8..1.2);
    let mut put = |y: usize, x: usize| {
        for c in 0..3 {
            let v = img.get(0, c, y, x).unwrap();
            img.set(0, c, y, x, v + amp).unwrap();
        }
    };
    match pattern {
        Pattern::HBar => (0..size).for_each(|x| (a..a + thick).for_each(|y| put(y, x))),
        Pattern::VBar => (0..size).for_each(|y| (a..a + thick).for_each(|x| put(y, x))),
        Pattern::Cross => {
            (0..size).for_each(|x| (a..a + thick).for_each(|y| put(y, x)));
            (0..size).for_each(|y| (b..b + thick).for_each(|x| if !(a..a + thick).contains(&y) { put(y, x) }));
        }
        Pattern::Square => {
            let side = size / 2;
            let top = r.random_range(0..=size - side);
            let left = r.random_range(0..=size - side);
            for k in 0..side {
                for t in 0..thick {
                    put(top + t, left + k);
                    put(top + side - 1 - t, left + k);
                    if k >= thick && k < side - thick {
                        put(top + k, left + t);
                        put(top + k, left + side - 1 - t);
                    }
                }
            }
        }
        Pattern::Diagonal => {
            for i in 0..size {
                for t in 0..thick {
                    let x = (i + a + t) % size;
                    put(i, x);
                }
            }
        }
        Pattern::Checker => {
            let cell = (size / 4).max(1);
            let flip = a % 2;
            for y in 0..size {
                for x in 0..size {
                    if ((y / cell + x / cell) % 2) == flip {
                        put(y, x);
                    }
                }
            }
        }
    }
}

/// `n` images of `size`×`size`, classes cycling through `patterns`, plus
/// Gaussian noise of standard deviation `noise`.
pub fn pattern_samples(patterns: &[Pattern], n: usize, size: usize, noise: f64, seed: u64) -> Vec<Sample> {
    let mut r = rng::seeded(seed);
    let normal = Normal::new(0.0, noise).unwrap();
    (0..n)
        .map(|i| {
            let label = i % patterns.len();
            let mut img = Tensor4::zeros((1, 3, size, size)).unwrap();
            paint(&mut img, patterns[label], size, &mut r);
            for v in img.data_mut() {
                *v += normal.sample(&mut r);
            }
            Sample::new(img, label, format!("img{i:05}")).unwrap()
        })
        .collect()
}

/// Seeded 60/40 split with class names attached; no mean subtraction.
pub fn split(samples: Vec<Sample>, names: &[&str], seed: u64) -> Dataset {
    let mut ds = microvoc::augment::split_60_40(samples, seed).unwrap();
    ds.class_names = names.iter().map(|s| s.to_string()).collect();
    ds
}

/// Dataset where the first `n_train` samples are Train and the rest Val.
pub fn fixed_split(samples: Vec<Sample>, n_train: usize, names: &[&str]) -> Dataset {
    let split = (0..samples.len()).map(|i| if i < n_train { Split::Train } else { Split::Val }).collect();
    Dataset { samples, split, class_names: names.iter().map(|s| s.to_string()).collect(), mean: None }
}

pub fn bars(n: usize, size: usize, noise: f64, seed: u64) -> Dataset {
    split(pattern_samples(&[Pattern::HBar, Pattern::VBar], n, size, noise, seed), &["horizontal", "vertical"], seed)
}
