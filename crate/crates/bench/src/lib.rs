//! Shared fixtures for the benchmarks.

use cavlab_core::maps::ball_samples;
use cavlab_core::{Mat3, Vec3};

/// Deterministic, well-conditioned matrices.
pub fn matrices(n: usize) -> Vec<Mat3> {
    ball_samples(3 * n, Vec3::ZERO, 0.0)
        .chunks_exact(3)
        .map(|c| Mat3::IDENTITY + Mat3::from_columns(c[0], c[1], c[2]) * 0.5)
        .collect()
}

/// Points of the unit ball at distance at least 0.01 from the origin.
pub fn points(n: usize) -> Vec<Vec3> {
    ball_samples(n, Vec3::ZERO, 0.01)
}
