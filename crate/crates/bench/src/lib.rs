//! Fixed-seed inputs shared by the benchmarks.

use ndarray::{Array1, Array2};
use pace_core::dictionary::Dictionary;
use pace_core::{CHANNELS, SLOTS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DIM: usize = CHANNELS * SLOTS;

/// `rows x DIM` matrix of uniform draws in [-1, 1).
pub fn random_signals(rows: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, DIM), |_| rng.random_range(-1.0..1.0))
}

/// Dictionary of `k` random unit-norm atoms over the weekly signal layout.
pub fn random_dictionary(k: usize, lambda: f64, seed: u64) -> Dictionary {
    let mut atoms = random_signals(k, seed);
    for mut row in atoms.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    Dictionary::from_atoms(atoms, CHANNELS, SLOTS, lambda, seed).expect("unit-norm atoms")
}

/// Scores and labels for an AUC of roughly 0.75, with many tied scores.
pub fn scored_labels(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
    let scores = labels
        .iter()
        .map(|&y| ((rng.random::<f64>() + if y { 0.45 } else { 0.0 }) * 50.0).round())
        .collect();
    (scores, labels)
}

pub fn random_signal(seed: u64) -> Array1<f64> {
    random_signals(1, seed).row(0).to_owned()
}
