//! Multi-dimensional complex FFT on row-major grids.
//!
//! Coefficients are Fourier-series coefficients: `forward` divides by the
//! number of grid points and `inverse` is the plain synthesis sum.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::GridSpec;

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans(n: usize) -> Arc<Plans> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Plans>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Arc::new(Plans {
                forward: planner.plan_fft_forward(n),
                inverse: planner.plan_fft_inverse(n),
            })
        })
        .clone()
}

fn transform(grid: &GridSpec, data: &mut [Complex64], forward: bool) {
    let n = grid.points_per_axis;
    let len = grid.len();
    assert_eq!(data.len(), len, "buffer does not match grid");
    let p = plans(n);
    let fft = if forward { &p.forward } else { &p.inverse };
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut lines = vec![Complex64::new(0.0, 0.0); len];
    for axis in 0..grid.dimension {
        let stride = n.pow((grid.dimension - 1 - axis) as u32);
        if stride == 1 {
            fft.process_with_scratch(data, &mut scratch);
            continue;
        }
        let block = stride * n;
        let mut line = 0;
        for outer in (0..len).step_by(block) {
            for inner in 0..stride {
                let base = outer + inner;
                let dst = &mut lines[line * n..(line + 1) * n];
                for (m, v) in dst.iter_mut().enumerate() {
                    *v = data[base + m * stride];
                }
                line += 1;
            }
        }
        fft.process_with_scratch(&mut lines, &mut scratch);
        let mut line = 0;
        for outer in (0..len).step_by(block) {
            for inner in 0..stride {
                let base = outer + inner;
                let src = &lines[line * n..(line + 1) * n];
                for (m, v) in src.iter().enumerate() {
                    data[base + m * stride] = *v;
                }
                line += 1;
            }
        }
    }
}

/// Physical samples to Fourier coefficients, in place.
pub fn forward(grid: &GridSpec, data: &mut [Complex64]) {
    transform(grid, data, true);
    let scale = 1.0 / grid.len() as f64;
    for v in data.iter_mut() {
        *v *= scale;
    }
}

/// Fourier coefficients to physical samples, in place.
pub fn inverse(grid: &GridSpec, data: &mut [Complex64]) {
    transform(grid, data, false);
}

/// Real physical samples to coefficients.
pub fn forward_real(grid: &GridSpec, values: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    forward(grid, &mut buf);
    buf
}

/// Coefficients to real physical samples (imaginary residue dropped).
pub fn inverse_real(grid: &GridSpec, coeffs: &[Complex64]) -> Vec<f64> {
    let mut buf = coeffs.to_vec();
    inverse(grid, &mut buf);
    buf.into_iter().map(|c| c.re).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_mode_lands_on_its_coefficient() {
        let g = GridSpec::periodic(3, 16).unwrap();
        let values: Vec<f64> = (0..g.len())
            .map(|idx| {
                let m = g.unravel(idx);
                (3.0 * g.coordinate(m[0]) - 2.0 * g.coordinate(m[2])).cos()
            })
            .collect();
        let c = forward_real(&g, &values);
        let a = g.mode_index([3, 0, -2]);
        let b = g.mode_index([-3, 0, 2]);
        for (idx, v) in c.iter().enumerate() {
            let expect = if idx == a || idx == b { 0.5 } else { 0.0 };
            assert!((v.re - expect).abs() < 1e-13 && v.im.abs() < 1e-13, "{idx}");
        }
        let back = inverse_real(&g, &c);
        for (x, y) in back.iter().zip(&values) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn two_dimensional_roundtrip() {
        let g = GridSpec::new(2, 32, 3.0).unwrap();
        let values: Vec<f64> = (0..g.len())
            .map(|i| ((i * 7919) % 101) as f64 / 101.0 - 0.5)
            .collect();
        let back = inverse_real(&g, &forward_real(&g, &values));
        let err = back
            .iter()
            .zip(&values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-14);
    }
}
