use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::real::Real;

/// He-normal initialisation: `N(0, 2 / fan_in)`.
pub fn he_normal<F: Real, R: Rng + ?Sized>(len: usize, fan_in: usize, rng: &mut R) -> Vec<F> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..len).map(|_| F::lit(dist.sample(rng))).collect()
}
