use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Dataset;

/// Centred Gaussian dataset with both mediation paths active.
pub(crate) fn random_dataset(n: usize, p: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    let x = DMatrix::from_fn(n, p, |_, _| draw());
    let alpha = DVector::from_fn(p, |_, _| draw());
    let beta = DVector::from_fn(p, |_, _| draw());
    let a = &x * &alpha / (p as f64).sqrt() + DVector::from_fn(n, |_, _| draw());
    let y = &x * &beta / (p as f64).sqrt() + &a * 0.3 + DVector::from_fn(n, |_, _| draw());
    Dataset::new(x, a, y)
        .unwrap()
        .center_and_standardise(false)
        .unwrap()
}
