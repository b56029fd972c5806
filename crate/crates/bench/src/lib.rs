//! Shared inputs for the benchmarks.

use utime::Tensor;

/// Deterministic pseudo-signal in [-1, 1) of shape `[batch, len, channels]`.
pub fn signal(batch: usize, len: usize, channels: usize) -> Tensor {
    Tensor::from_fn([batch, len, channels], |i| ((i * 7919) % 1000) as f32 / 500.0 - 1.0)
}

/// One-hot targets cycling through the classes, shape `[batch, segments, classes]`.
pub fn targets(batch: usize, segments: usize, classes: usize) -> Tensor {
    Tensor::from_fn([batch, segments, classes], |i| {
        if i % classes == (i / classes) % classes {
            1.0
        } else {
            0.0
        }
    })
}
