//! d-dimensional FFT on torus fields and Fourier-multiplier application.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::fields::ScalarField;
use crate::geometry::TorusGeometry;

/// Planned forward/inverse transforms for one torus geometry.
pub struct NdFft {
    geometry: TorusGeometry,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for NdFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NdFft").field("geometry", &self.geometry).finish()
    }
}

impl NdFft {
    pub fn new(geometry: TorusGeometry) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(geometry.side());
        let inverse = planner.plan_fft_inverse(geometry.side());
        Self {
            geometry,
            forward,
            inverse,
        }
    }

    pub fn geometry(&self) -> TorusGeometry {
        self.geometry
    }

    fn pass(&self, data: &mut [Complex<f64>], axis: usize, fft: &Arc<dyn Fft<f64>>) {
        let g = &self.geometry;
        let n = g.side();
        let stride = g.stride(axis);
        let mut line = vec![Complex::default(); n];
        for start in 0..g.sites() {
            if (start / stride) % n != 0 {
                continue;
            }
            for (k, slot) in line.iter_mut().enumerate() {
                *slot = data[start + k * stride];
            }
            fft.process(&mut line);
            for (k, slot) in line.iter().enumerate() {
                data[start + k * stride] = *slot;
            }
        }
    }

    /// In-place forward DFT: F(p) = sum_x f(x) e^{-2 pi i p.x / N}.
    pub fn forward(&self, data: &mut [Complex<f64>]) {
        debug_assert_eq!(data.len(), self.geometry.sites());
        for axis in 0..self.geometry.dim() {
            self.pass(data, axis, &self.forward);
        }
    }

    /// In-place inverse DFT with the 1/N^d normalization.
    pub fn inverse(&self, data: &mut [Complex<f64>]) {
        debug_assert_eq!(data.len(), self.geometry.sites());
        for axis in 0..self.geometry.dim() {
            self.pass(data, axis, &self.inverse);
        }
        let scale = 1.0 / self.geometry.sites() as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    /// Forward transform of a real field.
    pub fn forward_real(&self, values: &[f64]) -> Vec<Complex<f64>> {
        let mut data: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.forward(&mut data);
        data
    }

    /// Apply a real Fourier multiplier to a real field.
    pub fn apply_multiplier(&self, field: &ScalarField, multiplier: &[f64]) -> ScalarField {
        let mut data = self.forward_real(&field.values);
        for (v, m) in data.iter_mut().zip(multiplier) {
            *v *= *m;
        }
        self.inverse(&mut data);
        let values: Vec<f64> = data.iter().map(|c| c.re).collect();
        ScalarField::from_values(field.geometry, values)
    }
}

/// Fourier symbol of |Delta| at every dual lattice point:
/// lambda(p) = 4 sum_j (1 - cos(2 pi n_j / N)), zero only at p = 0.
pub fn abs_lap_symbol(geometry: TorusGeometry) -> Vec<f64> {
    let n = geometry.side();
    let d = geometry.dim();
    let step = 2.0 * std::f64::consts::PI / n as f64;
    let one_minus_cos: Vec<f64> = (0..n).map(|k| 1.0 - (step * k as f64).cos()).collect();
    (0..geometry.sites())
        .map(|idx| {
            let mut rest = idx;
            let mut sum = 0.0;
            for _ in 0..d {
                sum += one_minus_cos[rest % n];
                rest /= n;
            }
            4.0 * sum
        })
        .collect()
}
