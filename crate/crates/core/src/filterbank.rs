//! Windowed-DFT analysis/synthesis filter bank with overlap-add.
//!
//! The same normalized Hanning-derived window is applied before the DFT and
//! after the IDFT. The window normalization is chosen so that the overlapped
//! sum of squared coefficients is exactly 1 at every sample position, which
//! makes the identity transform a pure delay of N-L samples.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::RealDft;

/// Geometry of the analysis/synthesis bank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterBankConfig {
    /// DFT size N (samples per frame), power of two.
    pub dft_size: usize,
    /// Frame shift L between consecutive frames; N/2 or N/4.
    pub frame_shift: usize,
    /// Sample rate in Hz.
    pub sample_rate: f64,
}

impl FilterBankConfig {
    pub fn new(dft_size: usize, frame_shift: usize, sample_rate: f64) -> Result<Self> {
        if dft_size == 0 || !dft_size.is_power_of_two() {
            return Err(Error::config(format!(
                "DFT size must be a power of two, got {dft_size}"
            )));
        }
        if frame_shift != dft_size / 2 && frame_shift != dft_size / 4 {
            return Err(Error::config(format!(
                "frame shift must be N/2 or N/4 (N={dft_size}), got {frame_shift}"
            )));
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::config(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        Ok(Self {
            dft_size,
            frame_shift,
            sample_rate,
        })
    }

    /// Half-spectrum size N/2 + 1.
    pub fn bins(&self) -> usize {
        self.dft_size / 2 + 1
    }

    /// Center frequency of bin `n` in Hz.
    pub fn bin_hz(&self, n: usize) -> f64 {
        n as f64 * self.sample_rate / self.dft_size as f64
    }

    /// Time in seconds of frame `l`: t = L*l / f_a.
    pub fn frame_time(&self, l: u64) -> f64 {
        self.frame_shift as f64 * l as f64 / self.sample_rate
    }

    /// Analysis-synthesis latency of the identity transform, N - L samples.
    pub fn latency(&self) -> usize {
        self.dft_size - self.frame_shift
    }
}

/// Real analysis/synthesis window of length N.
#[derive(Debug, Clone)]
pub struct WindowVector {
    coefficients: Vec<f64>,
}

fn hann_periodic(k: usize, n: usize) -> f64 {
    0.5 * (1.0 - (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos())
}

impl WindowVector {
    /// Build the normalized window for the given geometry.
    ///
    /// Half overlap uses sqrt(2L/N) * sqrt(hann(N)); quarter overlap uses
    /// 2 * sqrt(L/(1.5 N)) * hann(N). Both satisfy the squared-COLA property
    /// with the periodic Hanning definition.
    pub fn make(config: &FilterBankConfig) -> Result<Self> {
        let n = config.dft_size;
        let l = config.frame_shift;
        let coefficients: Vec<f64> = if l == n / 2 {
            let scale = (2.0 * l as f64 / n as f64).sqrt();
            (0..n).map(|k| scale * hann_periodic(k, n).sqrt()).collect()
        } else if l == n / 4 {
            let scale = 2.0 * (l as f64 / (1.5 * n as f64)).sqrt();
            (0..n).map(|k| scale * hann_periodic(k, n)).collect()
        } else {
            return Err(Error::config(format!(
                "no window formula for N={n}, L={l}"
            )));
        };
        Ok(Self { coefficients })
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// Largest deviation of the overlapped squared-coefficient sum from 1.
    pub fn cola_squared_deviation(&self, frame_shift: usize) -> f64 {
        let n = self.coefficients.len();
        let overlap = n / frame_shift;
        let mut worst = 0.0f64;
        for k in 0..frame_shift {
            let sum: f64 = (0..overlap)
                .map(|j| {
                    let w = self.coefficients[k + j * frame_shift];
                    w * w
                })
                .sum();
            worst = worst.max((sum - 1.0).abs());
        }
        worst
    }
}

/// One windowed DFT block: half spectrum plus its frame index.
#[derive(Debug, Clone)]
pub struct SpectralFrame {
    /// Half spectrum, N/2 + 1 complex bins.
    pub bins: Vec<Complex64>,
    /// Frame index l; maps to time L*l / f_a.
    pub frame_index: u64,
    /// Geometry the frame was produced with.
    pub config: FilterBankConfig,
}

impl SpectralFrame {
    pub fn time(&self) -> f64 {
        self.config.frame_time(self.frame_index)
    }
}

/// Overlap-add accumulator holding N - L samples of synthesis history.
#[derive(Debug, Clone)]
pub struct OlaState {
    accumulator: Vec<f64>,
}

impl OlaState {
    pub fn new(config: &FilterBankConfig) -> Self {
        Self {
            accumulator: vec![0.0; config.dft_size],
        }
    }
}

/// Analysis/synthesis engine for one geometry.
pub struct FilterBank {
    config: FilterBankConfig,
    window: WindowVector,
    dft: RealDft,
}

impl FilterBank {
    pub fn new(config: FilterBankConfig) -> Result<Self> {
        let window = WindowVector::make(&config)?;
        Ok(Self {
            config,
            window,
            dft: RealDft::new(config.dft_size),
        })
    }

    pub fn config(&self) -> &FilterBankConfig {
        &self.config
    }

    pub fn window(&self) -> &WindowVector {
        &self.window
    }

    /// Window a length-N block and transform it to a half spectrum.
    pub fn analyze(&self, samples: &[f64], frame_index: u64) -> Result<SpectralFrame> {
        if samples.len() != self.config.dft_size {
            return Err(Error::argument(format!(
                "analyze expects {} samples, got {}",
                self.config.dft_size,
                samples.len()
            )));
        }
        let windowed: Vec<f64> = samples
            .iter()
            .zip(self.window.coefficients())
            .map(|(x, w)| x * w)
            .collect();
        Ok(SpectralFrame {
            bins: self.dft.forward(&windowed),
            frame_index,
            config: self.config,
        })
    }

    /// Inverse transform, window, overlap-add; emits the next L samples.
    pub fn synthesize(&self, frame: &SpectralFrame, ola: &mut OlaState) -> Result<Vec<f64>> {
        let n = self.config.dft_size;
        let l = self.config.frame_shift;
        if frame.bins.len() != self.config.bins() {
            return Err(Error::argument(format!(
                "frame has {} bins, expected {}",
                frame.bins.len(),
                self.config.bins()
            )));
        }
        if ola.accumulator.len() != n {
            return Err(Error::argument("overlap-add state geometry mismatch"));
        }
        let time = self.dft.inverse(&frame.bins);
        ola.accumulator.copy_within(l.., 0);
        ola.accumulator[n - l..].fill(0.0);
        for ((acc, t), w) in ola
            .accumulator
            .iter_mut()
            .zip(time.iter())
            .zip(self.window.coefficients())
        {
            *acc += t * w;
        }
        Ok(ola.accumulator[..l].to_vec())
    }

    /// Drive analyze / transform / synthesize over a whole signal.
    ///
    /// The output has the same length as the input; with the identity
    /// transform it equals the input delayed by N - L samples.
    pub fn process_stream<F>(&self, signal: &[f64], mut transform: F) -> Result<Vec<f64>>
    where
        F: FnMut(SpectralFrame) -> SpectralFrame,
    {
        let n = self.config.dft_size;
        if signal.len() < n {
            return Err(Error::argument(format!(
                "signal of {} samples is shorter than one frame ({n})",
                signal.len()
            )));
        }
        let mut stream = StftStream::new(self.config)?;
        let l = self.config.frame_shift;
        let mut output = Vec::with_capacity(signal.len() + l);
        let mut hop = vec![0.0; l];
        for chunk in signal.chunks(l) {
            hop[..chunk.len()].copy_from_slice(chunk);
            hop[chunk.len()..].fill(0.0);
            let out = stream.process_hop(&hop, &mut transform)?;
            output.extend_from_slice(&out);
        }
        output.truncate(signal.len());
        Ok(output)
    }
}

/// Stateful streaming wrapper: push L input samples, get L output samples.
///
/// The input buffer starts zero-filled, so the emitted stream is the
/// processed input delayed by exactly N - L samples from the first sample on.
pub struct StftStream {
    bank: FilterBank,
    input: Vec<f64>,
    ola: OlaState,
    next_frame: u64,
}

impl StftStream {
    pub fn new(config: FilterBankConfig) -> Result<Self> {
        let bank = FilterBank::new(config)?;
        let ola = OlaState::new(&config);
        Ok(Self {
            bank,
            input: vec![0.0; config.dft_size],
            ola,
            next_frame: 0,
        })
    }

    pub fn config(&self) -> &FilterBankConfig {
        self.bank.config()
    }

    pub fn frames_processed(&self) -> u64 {
        self.next_frame
    }

    /// Push one hop of L samples through analyze/transform/synthesize.
    pub fn process_hop<F>(&mut self, hop: &[f64], transform: &mut F) -> Result<Vec<f64>>
    where
        F: FnMut(SpectralFrame) -> SpectralFrame,
    {
        let l = self.bank.config.frame_shift;
        let n = self.bank.config.dft_size;
        if hop.len() != l {
            return Err(Error::argument(format!(
                "hop must be {l} samples, got {}",
                hop.len()
            )));
        }
        self.input.copy_within(l.., 0);
        self.input[n - l..].copy_from_slice(hop);
        let frame = self.bank.analyze(&self.input, self.next_frame)?;
        let frame = transform(frame);
        self.next_frame += 1;
        self.bank.synthesize(&frame, &mut self.ola)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, l: usize) -> FilterBankConfig {
        FilterBankConfig::new(n, l, 16_000.0).unwrap()
    }

    fn white_noise(len: usize, seed: u64) -> Vec<f64> {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..len)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect()
    }

    #[test]
    fn config_rejects_bad_geometry() {
        assert!(FilterBankConfig::new(500, 250, 16_000.0).is_err());
        assert!(FilterBankConfig::new(256, 32, 16_000.0).is_err());
    }

    #[test]
    fn config_accepts_supported_overlaps() {
        assert!(FilterBankConfig::new(256, 128, 16_000.0).is_ok());
        assert!(FilterBankConfig::new(256, 64, 16_000.0).is_ok());
        assert!(FilterBankConfig::new(512, 128, 16_000.0).is_ok());
        assert!(FilterBankConfig::new(512, 256, 16_000.0).is_ok());
        assert!(FilterBankConfig::new(512, 64, 16_000.0).is_err());
        assert!(FilterBankConfig::new(256, 128, 0.0).is_err());
    }

    #[test]
    fn window_half_overlap_peak_is_one() {
        // N=512, L=256: scale sqrt(2*256/512) = 1, hann peak 1, sqrt(1) = 1.
        let w = WindowVector::make(&cfg(512, 256)).unwrap();
        assert!((w.coefficients()[256] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn window_quarter_overlap_peak() {
        // N=512, L=128: 2*sqrt(128/768) at the hann peak.
        let w = WindowVector::make(&cfg(512, 128)).unwrap();
        let expected = 2.0 * (128.0f64 / 768.0).sqrt();
        assert!((expected - 0.816_496_580_927_726).abs() < 1e-12);
        assert!((w.coefficients()[256] - expected).abs() < 1e-12);
    }

    #[test]
    fn window_nonnegative() {
        for (n, l) in [(256, 128), (256, 64), (512, 256), (512, 128)] {
            let w = WindowVector::make(&cfg(n, l)).unwrap();
            assert!(w.coefficients().iter().all(|&c| c >= 0.0));
        }
    }

    #[test]
    fn cola_squared_holds_for_both_overlaps() {
        for (n, l) in [(256, 128), (256, 64), (512, 256), (512, 128), (1024, 256)] {
            let w = WindowVector::make(&cfg(n, l)).unwrap();
            assert!(
                w.cola_squared_deviation(l) < 1e-9,
                "COLA violated for N={n}, L={l}: {}",
                w.cola_squared_deviation(l)
            );
        }
    }

    #[test]
    fn analyze_zero_input_gives_zero_bins() {
        let bank = FilterBank::new(cfg(256, 128)).unwrap();
        let frame = bank.analyze(&vec![0.0; 256], 0).unwrap();
        assert!(frame.bins.iter().all(|b| b.norm() == 0.0));
    }

    #[test]
    fn analyze_dc_input_bin0_is_window_sum() {
        let bank = FilterBank::new(cfg(256, 128)).unwrap();
        let c = 0.37;
        let frame = bank.analyze(&vec![c; 256], 3).unwrap();
        let wsum: f64 = bank.window().coefficients().iter().sum();
        assert!((frame.bins[0].re - c * wsum).abs() < 1e-9);
        assert!(frame.bins[0].im.abs() < 1e-12);
        assert_eq!(frame.frame_index, 3);
    }

    #[test]
    fn analyze_impulse_is_flat() {
        let bank = FilterBank::new(cfg(256, 128)).unwrap();
        let mut x = vec![0.0; 256];
        x[0] = 1.0;
        let frame = bank.analyze(&x, 0).unwrap();
        let w0 = bank.window().coefficients()[0];
        for b in &frame.bins {
            assert!((b.re - w0).abs() < 1e-12);
            assert!(b.im.abs() < 1e-12);
        }
    }

    #[test]
    fn analyze_length_mismatch_errors() {
        let bank = FilterBank::new(cfg(256, 128)).unwrap();
        assert!(bank.analyze(&vec![0.0; 255], 0).is_err());
    }

    #[test]
    fn real_frame_edges_have_zero_imag() {
        let bank = FilterBank::new(cfg(256, 128)).unwrap();
        let x = white_noise(256, 7);
        let frame = bank.analyze(&x, 0).unwrap();
        assert_eq!(frame.bins.len(), 129);
        assert_eq!(frame.bins[0].im, 0.0);
        assert_eq!(frame.bins[128].im, 0.0);
    }

    fn check_delayed_identity(n: usize, l: usize, len: usize, tol: f64) {
        let bank = FilterBank::new(cfg(n, l)).unwrap();
        let x = white_noise(len, 42);
        let y = bank.process_stream(&x, |f| f).unwrap();
        assert_eq!(y.len(), x.len());
        let delay = n - l;
        let mut max_err = 0.0f64;
        for k in n..y.len() {
            max_err = max_err.max((y[k] - x[k - delay]).abs());
        }
        assert!(max_err < tol, "N={n} L={l}: max err {max_err}");
    }

    #[test]
    fn perfect_reconstruction_half_overlap() {
        check_delayed_identity(256, 128, 16_000, 1e-9);
    }

    #[test]
    fn perfect_reconstruction_quarter_overlap() {
        check_delayed_identity(512, 128, 16_000, 1e-9);
    }

    #[test]
    fn reconstruction_snr_on_sine() {
        let bank = FilterBank::new(cfg(256, 128)).unwrap();
        let fs = 16_000.0;
        let x: Vec<f64> = (0..16_000)
            .map(|k| (2.0 * std::f64::consts::PI * 1000.0 * k as f64 / fs).sin())
            .collect();
        let y = bank.process_stream(&x, |f| f).unwrap();
        let delay = 128;
        let mut sig = 0.0;
        let mut err = 0.0;
        for k in 256..y.len() {
            sig += x[k - delay] * x[k - delay];
            err += (y[k] - x[k - delay]) * (y[k] - x[k - delay]);
        }
        let snr_db = 10.0 * (sig / err.max(1e-300)).log10();
        assert!(snr_db > 180.0, "SNR {snr_db} dB");
    }

    #[test]
    fn zero_spectrum_gives_zero_output() {
        let bank = FilterBank::new(cfg(256, 128)).unwrap();
        let x = white_noise(4096, 3);
        let y = bank
            .process_stream(&x, |mut f| {
                f.bins.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
                f
            })
            .unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_scaling_transform() {
        let bank = FilterBank::new(cfg(256, 128)).unwrap();
        let x = white_noise(4096, 4);
        let y = bank
            .process_stream(&x, |mut f| {
                f.bins.iter_mut().for_each(|b| *b *= 2.0);
                f
            })
            .unwrap();
        for k in 256..y.len() {
            assert!((y[k] - 2.0 * x[k - 128]).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_preserves_rms() {
        let bank = FilterBank::new(cfg(512, 128)).unwrap();
        let x = white_noise(64_000, 5);
        let y = bank.process_stream(&x, |f| f).unwrap();
        let delay = 384;
        let rms = |v: &[f64]| (v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64).sqrt();
        let rin = rms(&x[..x.len() - delay]);
        let rout = rms(&y[delay..]);
        let db = 20.0 * (rout / rin).log10();
        assert!(db.abs() < 0.01, "RMS drift {db} dB");
    }

    #[test]
    fn short_signal_rejected() {
        let bank = FilterBank::new(cfg(256, 128)).unwrap();
        assert!(bank.process_stream(&vec![0.0; 255], |f| f).is_err());
    }
}
