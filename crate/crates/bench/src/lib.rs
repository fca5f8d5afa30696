//! Shared fixtures for the benchmarks: random desk-scale models and
//! MNIST-like binary inputs that need no dataset on disk.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use counternet::arch::parse_arch;
use counternet::train::TrainerCheckpoint;
use counternet::{ActivationKind, Model};

/// Randomly initialized model for `arch`.
pub fn random_model(arch: &str, activation: ActivationKind, seed: u64) -> Model {
    let spec = parse_arch(arch, activation).expect("valid architecture");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TrainerCheckpoint::init(&spec, 2.0, &mut rng).model()
}

/// Binary 28x28 inputs with a roughly digit-sized blob of active pixels.
pub fn blob_inputs(count: usize, seed: u64) -> Vec<Vec<i32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let (cy, cx) = (rng.gen_range(10.0..18.0), rng.gen_range(10.0..18.0));
            let (ry, rx): (f64, f64) = (rng.gen_range(5.0..9.0), rng.gen_range(3.0..7.0));
            (0..784)
                .map(|i| {
                    let (y, x) = ((i / 28) as f64, (i % 28) as f64);
                    let d = ((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2);
                    i32::from(d < 1.0 && rng.gen_bool(0.8))
                })
                .collect()
        })
        .collect()
}
