//! Seeded parameter initialization.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::{Array, Real};

/// Normal(0, std) truncated to ±2·std by resampling.
pub fn truncated_normal<T: Real, R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Array<T> {
    let normal = Normal::new(0.0, std).expect("std must be finite and positive");
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let x: f64 = normal.sample(rng);
            if x.abs() <= 2.0 * std {
                break T::of(x);
            }
        })
        .collect();
    Array::new(shape.to_vec(), data).expect("shape and data agree")
}
