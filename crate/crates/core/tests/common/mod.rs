#![allow(dead_code)]

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tdv::diff_ops::PlaneFrame;
use tdv::{Dims, Volume, WeightField};

pub fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

pub fn random_volume(dims: Dims, seed: u64, scale: f64) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..dims.len()).map(|_| scale * (2.0 * uniform(&mut rng) - 1.0)).collect();
    Volume::new(dims, data).unwrap()
}

pub fn random_vec(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| 2.0 * uniform(&mut rng) - 1.0).collect()
}

/// Confidences in `[0, 1]` and orthonormal frames at random angles.
pub fn random_weights(dims: Dims, seed: u64) -> WeightField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = dims.cells();
    let frames: Vec<[PlaneFrame; 3]> = (0..cells.len())
        .map(|_| {
            [0, 1, 2].map(|_| {
                let theta = std::f64::consts::TAU * uniform(&mut rng);
                let (s, c) = theta.sin_cos();
                PlaneFrame { confidence: uniform(&mut rng), gradient: [c, s], tangent: [-s, c] }
            })
        })
        .collect();
    WeightField::from_frames(cells, &frames).unwrap()
}

pub fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
