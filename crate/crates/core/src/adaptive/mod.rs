//! Frequency-domain adaptive filters.
//!
//! Both filters use overlap-save block convolution with 2*N-point transforms
//! (half spectra stored) and apply the gradient constraint every block: the
//! upper time-domain half of each weight partition is forced to zero so the
//! weights always correspond to causal length-N impulse responses.

mod flms;
mod kalman;

pub use flms::{flms_predictor, BiasSolution, Flms, FlmsConfig};
pub use kalman::{KalmanConfig, MdfKalman};

use num_complex::Complex64;

use crate::fft::RealDft;

/// Project a weight spectrum onto causal length-N responses: transform to
/// time, zero the upper half, transform back.
pub(crate) fn constrain(dft: &RealDft, weights: &mut Vec<Complex64>) {
    let mut time = dft.inverse(weights);
    let half = dft.size() / 2;
    time[half..].fill(0.0);
    *weights = dft.forward(&time);
}

/// Relative regularization floor applied to power normalizations.
pub(crate) const POWER_FLOOR_REL: f64 = 1e-10;

/// Smoothing constant for recursive per-bin power estimates.
pub(crate) const POWER_SMOOTHING: f64 = 0.9;

pub(crate) fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constraint_zeroes_upper_half() {
        let dft = RealDft::new(16);
        let mut time: Vec<f64> = (0..16).map(|k| (k as f64 * 0.7).cos()).collect();
        let mut spec = dft.forward(&time);
        constrain(&dft, &mut spec);
        time = dft.inverse(&spec);
        for v in &time[8..] {
            assert!(v.abs() < 1e-12);
        }
        // Idempotent on the lower half.
        let lower: Vec<f64> = time[..8].to_vec();
        constrain(&dft, &mut spec);
        let again = dft.inverse(&spec);
        for (a, b) in lower.iter().zip(again.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
