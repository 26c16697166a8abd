//! Thin real-FFT wrapper shared by the filter bank and the adaptive filters.
//!
//! Forward transforms are unnormalized; the inverse carries the 1/N factor,
//! so `inverse(forward(x)) == x` up to rounding. Spectra are stored as half
//! spectra of length N/2+1 (Hermitian symmetry implied by the real input).

use std::sync::Arc;

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

pub(crate) struct RealDft {
    size: usize,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

impl RealDft {
    pub fn new(size: usize) -> Self {
        let mut planner = RealFftPlanner::<f64>::new();
        Self {
            size,
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Number of half-spectrum bins, N/2 + 1.
    pub fn bins(&self) -> usize {
        self.size / 2 + 1
    }

    pub fn forward(&self, time: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(time.len(), self.size);
        let mut input = time.to_vec();
        let mut spectrum = self.forward.make_output_vec();
        self.forward
            .process(&mut input, &mut spectrum)
            .expect("forward FFT length mismatch");
        spectrum
    }

    /// Inverse transform with 1/N scaling. Imaginary residues at DC and
    /// Nyquist are discarded (the output is real by construction).
    pub fn inverse(&self, spectrum: &[Complex64]) -> Vec<f64> {
        debug_assert_eq!(spectrum.len(), self.bins());
        let mut spec = spectrum.to_vec();
        spec[0].im = 0.0;
        if let Some(last) = spec.last_mut() {
            last.im = 0.0;
        }
        let mut time = self.inverse.make_output_vec();
        self.inverse
            .process(&mut spec, &mut time)
            .expect("inverse FFT length mismatch");
        let scale = 1.0 / self.size as f64;
        for v in &mut time {
            *v *= scale;
        }
        time
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_identity() {
        let dft = RealDft::new(16);
        let x: Vec<f64> = (0..16).map(|k| (k as f64 * 0.3).sin()).collect();
        let spec = dft.forward(&x);
        assert_eq!(spec.len(), 9);
        let back = dft.inverse(&spec);
        for (a, b) in x.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dc_bin_is_sum() {
        let dft = RealDft::new(8);
        let x = vec![0.5; 8];
        let spec = dft.forward(&x);
        assert!((spec[0].re - 4.0).abs() < 1e-12);
        assert!(spec[0].im.abs() < 1e-12);
    }
}
