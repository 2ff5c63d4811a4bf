//! N-dimensional FFT on the periodic grid, one axis at a time.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use super::PeriodicGrid;

fn plans(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    }
}

/// In-place transform of one scalar block of `n^dim` values.
pub(crate) fn transform(grid: &PeriodicGrid, data: &mut [Complex64], inverse: bool) {
    let n = grid.n;
    let fft = plans(n, inverse);
    let total = data.len();
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for axis in 0..grid.dim {
        let stride = n.pow((grid.dim - 1 - axis) as u32);
        if stride == 1 {
            for chunk in data.chunks_exact_mut(n) {
                fft.process_with_scratch(chunk, &mut scratch);
            }
            continue;
        }
        let block = stride * n;
        for base in (0..total).step_by(block) {
            for off in 0..stride {
                let start = base + off;
                for (i, v) in line.iter_mut().enumerate() {
                    *v = data[start + i * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (i, v) in line.iter().enumerate() {
                    data[start + i * stride] = *v;
                }
            }
        }
    }
}

/// Normalized forward transform of component `comp` of node-major values.
pub(crate) fn forward(grid: &PeriodicGrid, values: &[f64], comps: usize, comp: usize) -> Vec<Complex64> {
    let mut data: Vec<Complex64> =
        values.iter().skip(comp).step_by(comps).map(|&v| Complex64::new(v, 0.0)).collect();
    transform(grid, &mut data, false);
    let scale = 1.0 / grid.node_count() as f64;
    data.iter_mut().for_each(|c| *c *= scale);
    data
}

/// Real part of the inverse transform of normalized coefficients.
pub(crate) fn inverse_real(grid: &PeriodicGrid, coeffs: &[Complex64]) -> Vec<f64> {
    let mut data = coeffs.to_vec();
    transform(grid, &mut data, true);
    data.iter().map(|c| c.re).collect()
}
