//! Deterministic inputs for the benches.

use microyolo_core::prelude::*;

/// Values in `[-amp, amp)` from a fixed sequence; no RNG needed for timing.
pub fn pseudo(n: usize, seed: u32, amp: f32) -> Vec<f32> {
    let mut state = seed.wrapping_mul(747_796_405).wrapping_add(2_891_336_453);
    (0..n)
        .map(|_| {
            state = state.wrapping_mul(1_664_525).wrapping_add(1_013_904_223);
            ((state >> 8) as f32 / (1u32 << 24) as f32 * 2.0 - 1.0) * amp
        })
        .collect()
}

pub fn image(seed: u32) -> Tensor {
    let data = pseudo(3 * 88 * 88, seed, 0.5).into_iter().map(|v| v + 0.5).collect();
    Tensor::new(vec![3, 88, 88], data).expect("shape matches")
}

pub fn samples(n: usize) -> Vec<Sample> {
    (0..n)
        .map(|i| Sample {
            image: image(i as u32),
            boxes: Vec::new(),
            source_id: format!("bench-{i}"),
        })
        .collect()
}
