use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

/// Centered, orthonormal DFT along the middle axis of `data` viewed as `[outer][n][inner]`.
///
/// Each line is ifftshifted, transformed and fftshifted, then scaled by `1/sqrt(n)`,
/// so the zero frequency sits at index `n / 2` on both sides of the transform.
pub fn transform_axis(
    data: &mut [Complex64],
    outer: usize,
    n: usize,
    inner: usize,
    direction: FftDirection,
) {
    debug_assert_eq!(data.len(), outer * n * inner);
    if n == 0 {
        return;
    }
    let plan: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft(n, direction);
    let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let half = n / 2;
    let norm = 1.0 / (n as f64).sqrt();
    for o in 0..outer {
        let base = o * n * inner;
        for i in 0..inner {
            for (k, v) in line.iter_mut().enumerate() {
                *v = data[base + ((k + half) % n) * inner + i];
            }
            plan.process_with_scratch(&mut line, &mut scratch);
            for (k, v) in line.iter().enumerate() {
                data[base + ((k + half) % n) * inner + i] = *v * norm;
            }
        }
    }
}
