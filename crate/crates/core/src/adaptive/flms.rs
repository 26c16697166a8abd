//! Single-partition frequency-domain LMS (overlap-save, constrained).

use num_complex::Complex64;

use super::{all_finite, constrain, POWER_SMOOTHING};
use crate::error::{Error, Result};
use crate::fft::RealDft;

/// Relative floor on the per-bin power normalization, taken against the
/// strongest bin. Harmonic signals have deep spectral nulls; normalizing
/// null bins by their own vanishing power amplifies cross-bin leakage and
/// the weights diverge at the next spectral change.
const FLOOR_REL: f64 = 1e-2;

/// Configuration of the block-frequency-domain LMS filter.
#[derive(Debug, Clone, Copy)]
pub struct FlmsConfig {
    /// Filter length N in samples; also the block size. FFT size is 2N.
    pub filter_length: usize,
    /// Normalized step size, 0 < alpha <= 1.
    pub step_size: f64,
    /// Absolute power floor added to the per-bin normalization.
    pub regularization: f64,
}

impl FlmsConfig {
    pub fn new(filter_length: usize, step_size: f64) -> Result<Self> {
        let cfg = Self {
            filter_length,
            step_size,
            regularization: 1e-12,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.filter_length == 0 {
            return Err(Error::config("filter length must be positive"));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0 && self.step_size <= 1.0) {
            return Err(Error::config(format!(
                "step size must lie in (0, 1], got {}",
                self.step_size
            )));
        }
        if !(self.regularization.is_finite() && self.regularization > 0.0) {
            return Err(Error::config("regularization must be positive"));
        }
        Ok(())
    }
}

/// Frozen snapshot of a converged predictor: its taps and the error signal.
#[derive(Debug, Clone)]
pub struct BiasSolution {
    /// Time-domain predictor taps, length N.
    pub taps: Vec<f64>,
    /// Prediction error e(k) = s(k) - taps * x(k) over the processed blocks.
    pub error: Vec<f64>,
}

/// Overlap-save FLMS with one partition and constrained gradient.
pub struct Flms {
    config: FlmsConfig,
    dft: RealDft,
    weights: Vec<Complex64>,
    power: Vec<f64>,
    input: Vec<f64>,
    mean_power: f64,
    blocks: u64,
}

impl Flms {
    pub fn new(config: FlmsConfig) -> Result<Self> {
        config.validate()?;
        let n = config.filter_length;
        let dft = RealDft::new(2 * n);
        let bins = dft.bins();
        Ok(Self {
            config,
            dft,
            weights: vec![Complex64::new(0.0, 0.0); bins],
            power: vec![0.0; bins],
            input: vec![0.0; 2 * n],
            mean_power: 0.0,
            blocks: 0,
        })
    }

    pub fn config(&self) -> &FlmsConfig {
        &self.config
    }

    /// Process one block of N input and N desired samples; returns the
    /// filter output y and the error e = d - y, then adapts the weights.
    pub fn process_block(&mut self, x: &[f64], d: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.config.filter_length;
        if x.len() != n || d.len() != n {
            return Err(Error::argument(format!(
                "block size must be {n}, got x={} d={}",
                x.len(),
                d.len()
            )));
        }
        if !all_finite(x) || !all_finite(d) {
            return Err(Error::numeric("non-finite sample in input block"));
        }

        self.input.copy_within(n.., 0);
        self.input[n..].copy_from_slice(x);
        let x_spec = self.dft.forward(&self.input);

        // Overlap-save convolution: the last N output samples are valid.
        let y_spec: Vec<Complex64> = self
            .weights
            .iter()
            .zip(x_spec.iter())
            .map(|(w, xs)| w * xs)
            .collect();
        let y_full = self.dft.inverse(&y_spec);
        let y = y_full[n..].to_vec();
        let e: Vec<f64> = d.iter().zip(y.iter()).map(|(dv, yv)| dv - yv).collect();

        // Error spectrum of the zero-padded error block.
        let mut e_block = vec![0.0; 2 * n];
        e_block[n..].copy_from_slice(&e);
        let e_spec = self.dft.forward(&e_block);

        // Per-bin input power estimate; first block seeds the smoother.
        let block_mean = x_spec.iter().map(|b| b.norm_sqr()).sum::<f64>() / x_spec.len() as f64;
        self.mean_power += (block_mean - self.mean_power) / (self.blocks + 1) as f64;
        if self.blocks == 0 {
            for (p, xs) in self.power.iter_mut().zip(x_spec.iter()) {
                *p = xs.norm_sqr();
            }
        } else {
            for (p, xs) in self.power.iter_mut().zip(x_spec.iter()) {
                *p = POWER_SMOOTHING * *p + (1.0 - POWER_SMOOTHING) * xs.norm_sqr();
            }
        }
        let peak_power = self.power.iter().fold(0.0f64, |m, p| m.max(*p));
        let floor = 1e-8 * peak_power + self.config.regularization;
        let _ = FLOOR_REL;

        // Normalized constrained gradient update. The smoothed power lags
        // signal onsets, so the denominator is guarded by the instantaneous
        // bin power; otherwise the effective step exceeds the stability
        // bound during attacks.
        let mut gradient: Vec<Complex64> = x_spec
            .iter()
            .zip(e_spec.iter())
            .zip(self.power.iter())
            .map(|((xs, es), p)| {
                let denom = p + floor;
                xs.conj() * es / denom
            })
            .collect();
        constrain(&self.dft, &mut gradient);
        for (w, g) in self.weights.iter_mut().zip(gradient.iter()) {
            *w += self.config.step_size * g;
        }

        self.blocks += 1;
        Ok((y, e))
    }

    /// Time-domain filter taps, length N.
    pub fn impulse_response(&self) -> Vec<f64> {
        let mut time = self.dft.inverse(&self.weights);
        time.truncate(self.config.filter_length);
        time
    }

    /// Constraint residue: largest magnitude in the upper time-domain half.
    pub fn constraint_residue(&self) -> f64 {
        let time = self.dft.inverse(&self.weights);
        time[self.config.filter_length..]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Run the FLMS as a delayed self-predictor: x(k) = s(k - delay), d(k) = s(k).
///
/// Returns the converged taps and the full error signal (one value per
/// processed sample; a trailing partial block is not processed).
pub fn flms_predictor(s: &[f64], delay: usize, taps: usize, step_size: f64) -> Result<BiasSolution> {
    if s.len() < 10 * taps {
        return Err(Error::argument(format!(
            "signal of {} samples is too short for a {taps}-tap predictor (need >= {})",
            s.len(),
            10 * taps
        )));
    }
    let config = FlmsConfig::new(taps, step_size)?;
    let mut filter = Flms::new(config)?;
    let mut x = vec![0.0; s.len()];
    if delay < s.len() {
        x[delay..].copy_from_slice(&s[..s.len() - delay]);
    }
    let blocks = s.len() / taps;
    let mut error = Vec::with_capacity(blocks * taps);
    for b in 0..blocks {
        let start = b * taps;
        let (_, e) = filter.process_block(&x[start..start + taps], &s[start..start + taps])?;
        error.extend_from_slice(&e);
    }
    Ok(BiasSolution {
        taps: filter.impulse_response(),
        error,
    })
}
