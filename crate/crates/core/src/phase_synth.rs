//! Per-bin phase modification on spectral frames: frequency shifting,
//! periodic phase modulation, and a frequency-domain variable delay line
//! (vibrato). Components are combined by summing their phase increments and
//! wrapping once; bin magnitudes are never touched.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::filterbank::{FilterBankConfig, SpectralFrame, StftStream};

/// Subband width used for profile anchors, in Hz.
pub const SUBBAND_HZ: f64 = 312.5;

/// Wrap a phase to [-pi, pi).
pub fn wrap_phase(phi: f64) -> f64 {
    phi - 2.0 * PI * ((phi + PI) / (2.0 * PI)).floor()
}

/// Per-bin amplitude profile (radians or Hz depending on the host spec),
/// length N/2 + 1, built from subband anchors by linear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct BinProfile {
    values: Vec<f64>,
}

impl BinProfile {
    pub fn zeros(config: &FilterBankConfig) -> Self {
        Self {
            values: vec![0.0; config.bins()],
        }
    }

    /// Uniform value at every bin.
    pub fn uniform(value: f64, config: &FilterBankConfig) -> Self {
        Self {
            values: vec![value; config.bins()],
        }
    }

    /// Build a profile from subband anchors. Subband `s` is anchored at its
    /// center frequency s * 312.5 Hz; values between anchors are linearly
    /// interpolated, the last anchor value is held up to f_a/2, and bins
    /// below the first anchor are zero.
    pub fn from_subband_steps(anchors: &[(usize, f64)], config: &FilterBankConfig) -> Result<Self> {
        if anchors.is_empty() {
            return Ok(Self::zeros(config));
        }
        let nyquist = config.sample_rate / 2.0;
        let mut points = Vec::with_capacity(anchors.len());
        let mut last_index = None;
        for &(subband, value) in anchors {
            if let Some(prev) = last_index {
                if subband <= prev {
                    return Err(Error::config(
                        "subband anchors must be sorted by strictly increasing index",
                    ));
                }
            }
            let hz = subband as f64 * SUBBAND_HZ;
            if hz > nyquist {
                return Err(Error::config(format!(
                    "subband {subband} center {hz} Hz exceeds f_a/2 = {nyquist} Hz"
                )));
            }
            points.push((hz, value));
            last_index = Some(subband);
        }
        Ok(Self::from_breakpoints(&points, config))
    }

    /// Linear ramp from 0 at `start_hz` up to `peak` at f_a/2; zero below.
    pub fn ramp_to_nyquist(start_hz: f64, peak: f64, config: &FilterBankConfig) -> Result<Self> {
        let nyquist = config.sample_rate / 2.0;
        if !(start_hz >= 0.0 && start_hz < nyquist) {
            return Err(Error::config(format!(
                "ramp start {start_hz} Hz must lie in [0, f_a/2)"
            )));
        }
        Ok(Self::from_breakpoints(
            &[(0.0, 0.0), (start_hz, 0.0), (nyquist, peak)],
            config,
        ))
    }

    fn from_breakpoints(points: &[(f64, f64)], config: &FilterBankConfig) -> Self {
        let values = (0..config.bins())
            .map(|n| {
                let f = config.bin_hz(n);
                if f < points[0].0 {
                    return 0.0;
                }
                for pair in points.windows(2) {
                    let (f0, v0) = pair[0];
                    let (f1, v1) = pair[1];
                    if f <= f1 {
                        if f1 == f0 {
                            return v1;
                        }
                        return v0 + (v1 - v0) * (f - f0) / (f1 - f0);
                    }
                }
                points[points.len() - 1].1
            })
            .collect();
        Self { values }
    }

    pub fn value(&self, n: usize) -> f64 {
        self.values[n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Modulator waveform for periodic phase modulation.
#[derive(Debug, Clone)]
pub enum Waveform {
    /// sin(phase).
    Sine,
    /// One period of a user table, linearly interpolated over the phase.
    Table(Vec<f64>),
    /// Low-pass filtered noise, materialized per frame index at construction
    /// so that evaluation stays pure and runs are reproducible.
    FilteredNoise(Vec<f64>),
}

impl Waveform {
    /// First-order low-pass (cutoff at the modulation frequency) applied to
    /// unit-variance white noise at the frame rate, renormalized to unit peak.
    pub fn filtered_noise(
        seed: u64,
        cutoff_hz: f64,
        config: &FilterBankConfig,
        frames: usize,
    ) -> Self {
        let frame_rate = config.sample_rate / config.frame_shift as f64;
        let coeff = 1.0 - (-2.0 * PI * cutoff_hz / frame_rate).exp();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut state = 0.0f64;
        let mut table = Vec::with_capacity(frames.max(1));
        for _ in 0..frames.max(1) {
            let x: f64 = StandardNormal.sample(&mut rng);
            state += coeff * (x - state);
            table.push(state);
        }
        let peak = table.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        table.iter_mut().for_each(|v| *v /= peak);
        Waveform::FilteredNoise(table)
    }

    /// Evaluate at modulation phase `phase` (radians) for frame `l`.
    pub fn value(&self, phase: f64, l: u64) -> f64 {
        match self {
            Waveform::Sine => phase.sin(),
            Waveform::Table(table) => {
                if table.is_empty() {
                    return 0.0;
                }
                let len = table.len() as f64;
                let pos = (phase / (2.0 * PI)).rem_euclid(1.0) * len;
                let i = pos.floor() as usize % table.len();
                let j = (i + 1) % table.len();
                let frac = pos - pos.floor();
                table[i] * (1.0 - frac) + table[j] * frac
            }
            Waveform::FilteredNoise(table) => table[(l as usize) % table.len()],
        }
    }
}

/// Frequency shift; per-bin shift values in Hz.
#[derive(Debug, Clone)]
pub struct ShiftSpec {
    pub shift_hz: BinProfile,
}

impl ShiftSpec {
    pub fn uniform(f_s: f64, config: &FilterBankConfig) -> Self {
        Self {
            shift_hz: BinProfile::uniform(f_s, config),
        }
    }
}

/// Periodic phase modulation; per-bin amplitude in radians.
#[derive(Debug, Clone)]
pub struct ModulationSpec {
    pub amplitude_rad: BinProfile,
    pub mod_freq_hz: f64,
    pub waveform: Waveform,
}

/// Frequency-domain variable delay line. The per-bin phase slope follows the
/// profile (radians); the default law is linear in the bin index with peak
/// magnitude `max_delay_samples * pi` at n = N/2, which realizes a sinusoidal
/// delay of +-`max_delay_samples` samples.
#[derive(Debug, Clone)]
pub struct VibratoSpec {
    pub max_delay_samples: f64,
    pub mod_freq_hz: f64,
    pub profile_rad: BinProfile,
}

impl VibratoSpec {
    /// Full-band delay line: phase slope linear from 0 at DC to k_s*pi at N/2.
    pub fn full_band(max_delay_samples: f64, mod_freq_hz: f64, config: &FilterBankConfig) -> Self {
        let profile = BinProfile::ramp_to_nyquist(0.0, max_delay_samples * PI, config)
            .expect("0 Hz ramp start is always valid");
        Self {
            max_delay_samples,
            mod_freq_hz,
            profile_rad: profile,
        }
    }

    /// Band-limited delay line: zero below `start_hz`, then a linear ramp to
    /// k_s*pi at f_a/2.
    pub fn banded(
        max_delay_samples: f64,
        mod_freq_hz: f64,
        start_hz: f64,
        config: &FilterBankConfig,
    ) -> Result<Self> {
        let profile = BinProfile::ramp_to_nyquist(start_hz, max_delay_samples * PI, config)?;
        Ok(Self {
            max_delay_samples,
            mod_freq_hz,
            profile_rad: profile,
        })
    }
}

/// Modulation phase at frame `l`: 2*pi * (f/f_a) * L * l.
fn lfo_phase(freq_hz: f64, l: u64, config: &FilterBankConfig) -> f64 {
    2.0 * PI * freq_hz / config.sample_rate * config.frame_shift as f64 * l as f64
}

/// Phase increment of a frequency shift `f_s` at frame `l`, wrapped.
pub fn shift_phase_increment(f_s: f64, l: u64, config: &FilterBankConfig) -> f64 {
    wrap_phase(lfo_phase(f_s, l, config))
}

/// Phase increment of periodic modulation at bin `n`, frame `l`, wrapped.
pub fn modulation_phase_increment(
    spec: &ModulationSpec,
    n: usize,
    l: u64,
    config: &FilterBankConfig,
) -> f64 {
    let phase = lfo_phase(spec.mod_freq_hz, l, config);
    wrap_phase(spec.amplitude_rad.value(n) * spec.waveform.value(phase, l))
}

/// Raw (unwrapped) delay-line phase increment at bin `n`, frame `l`.
///
/// Not wrapped: when components are combined the contributions are summed
/// first and wrapped once, and the unwrapped value keeps the delay-line
/// analogy (peak magnitude k_s*pi at the highest bin).
pub fn vibrato_phase_increment(
    spec: &VibratoSpec,
    n: usize,
    l: u64,
    config: &FilterBankConfig,
) -> f64 {
    -spec.profile_rad.value(n) * lfo_phase(spec.mod_freq_hz, l, config).sin()
}

/// A per-bin phase-modification program: any combination of shift,
/// modulation and delay line, or an explicit bypass.
#[derive(Debug, Clone)]
pub struct PhaseSynthConfig {
    pub bank: FilterBankConfig,
    pub shift: Option<ShiftSpec>,
    pub modulation: Option<ModulationSpec>,
    pub vibrato: Option<VibratoSpec>,
}

impl PhaseSynthConfig {
    pub fn bypass(bank: FilterBankConfig) -> Self {
        Self {
            bank,
            shift: None,
            modulation: None,
            vibrato: None,
        }
    }

    pub fn is_bypass(&self) -> bool {
        self.shift.is_none() && self.modulation.is_none() && self.vibrato.is_none()
    }

    /// Build one of the eleven predefined parameter sets.
    ///
    /// 1 bypass; 2 a 10 Hz shift above 1.25 kHz; 3 sine phase modulation with
    /// stepped subband amplitudes at 10 Hz; 4 the combination of 2 and 3;
    /// 5-11 band-limited delay lines ramping to 8/16/32 samples peak delay
    /// with 1-3 Hz modulation.
    pub fn parameter_set(id: u8, bank: FilterBankConfig) -> Result<Self> {
        let shift_steps: &[(usize, f64)] = &[
            (0, 0.0),
            (1, 0.0),
            (2, 0.0),
            (3, 0.0),
            (4, 10.0),
            (5, 10.0),
            (6, 10.0),
            (7, 10.0),
        ];
        let mod_steps: &[(usize, f64)] = &[
            (0, 0.11 * PI),
            (1, 0.11 * PI),
            (2, 0.11 * PI),
            (3, 0.11 * PI),
            (4, 0.22 * PI),
            (5, 0.39 * PI),
            (6, 0.5 * PI),
            (7, PI),
        ];
        // Delay-line ramps start at the upper edge of subband 3.
        let ramp_start_hz = 4.0 * SUBBAND_HZ;
        let make_shift = || -> Result<ShiftSpec> {
            Ok(ShiftSpec {
                shift_hz: BinProfile::from_subband_steps(shift_steps, &bank)?,
            })
        };
        let make_mod = || -> Result<ModulationSpec> {
            Ok(ModulationSpec {
                amplitude_rad: BinProfile::from_subband_steps(mod_steps, &bank)?,
                mod_freq_hz: 10.0,
                waveform: Waveform::Sine,
            })
        };
        let mut cfg = Self::bypass(bank);
        match id {
            1 => {}
            2 => cfg.shift = Some(make_shift()?),
            3 => cfg.modulation = Some(make_mod()?),
            4 => {
                cfg.shift = Some(make_shift()?);
                cfg.modulation = Some(make_mod()?);
            }
            5..=11 => {
                let (k_s, f_p) = match id {
                    5 => (8.0, 1.0),
                    6 => (16.0, 1.0),
                    7 => (16.0, 2.0),
                    8 => (16.0, 3.0),
                    9 => (32.0, 1.0),
                    10 => (32.0, 2.0),
                    11 => (32.0, 3.0),
                    _ => unreachable!(),
                };
                cfg.vibrato = Some(VibratoSpec::banded(k_s, f_p, ramp_start_hz, &bank)?);
            }
            other => {
                return Err(Error::config(format!(
                    "unknown parameter set {other}, expected 1..=11"
                )))
            }
        }
        Ok(cfg)
    }

    /// Raw (unwrapped) total phase increment of all enabled components.
    pub fn phase_increment(&self, n: usize, l: u64) -> f64 {
        let mut phi = 0.0;
        if let Some(shift) = &self.shift {
            phi += lfo_phase(shift.shift_hz.value(n), l, &self.bank);
        }
        if let Some(m) = &self.modulation {
            let phase = lfo_phase(m.mod_freq_hz, l, &self.bank);
            phi += m.amplitude_rad.value(n) * m.waveform.value(phase, l);
        }
        if let Some(v) = &self.vibrato {
            phi += vibrato_phase_increment(v, n, l, &self.bank);
        }
        phi
    }

    /// Apply the phase program to a frame: each bin is rotated by the summed
    /// increment, wrapped once to [-pi, pi). Magnitudes are unchanged.
    pub fn apply(&self, frame: &SpectralFrame, l: u64) -> Result<SpectralFrame> {
        if frame.bins.len() != self.bank.bins() {
            return Err(Error::argument(format!(
                "frame has {} bins but the phase program expects {}",
                frame.bins.len(),
                self.bank.bins()
            )));
        }
        let mut out = frame.clone();
        if self.is_bypass() {
            return Ok(out);
        }
        for (n, bin) in out.bins.iter_mut().enumerate() {
            let phi = wrap_phase(self.phase_increment(n, l));
            *bin *= Complex64::from_polar(1.0, phi);
        }
        Ok(out)
    }
}

/// Streaming phase synthesizer: a filter-bank stream with the phase program
/// applied to every frame.
pub struct SynthStream {
    stream: StftStream,
    config: PhaseSynthConfig,
}

impl SynthStream {
    pub fn new(config: PhaseSynthConfig) -> Result<Self> {
        Ok(Self {
            stream: StftStream::new(config.bank)?,
            config,
        })
    }

    pub fn config(&self) -> &PhaseSynthConfig {
        &self.config
    }

    /// Push L input samples, receive L output samples.
    pub fn push_hop(&mut self, hop: &[f64]) -> Result<Vec<f64>> {
        let config = &self.config;
        let mut failure = None;
        let out = self.stream.process_hop(hop, &mut |frame: SpectralFrame| {
            let l = frame.frame_index;
            match config.apply(&frame, l) {
                Ok(f) => f,
                Err(e) => {
                    failure = Some(e);
                    frame
                }
            }
        })?;
        match failure {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }

    /// Process a whole signal; output length equals input length.
    pub fn process(config: PhaseSynthConfig, signal: &[f64]) -> Result<Vec<f64>> {
        let l = config.bank.frame_shift;
        if signal.len() < config.bank.dft_size {
            return Err(Error::argument(format!(
                "signal of {} samples is shorter than one frame ({})",
                signal.len(),
                config.bank.dft_size
            )));
        }
        let mut stream = Self::new(config)?;
        let mut out = Vec::with_capacity(signal.len() + l);
        let mut hop = vec![0.0; l];
        for chunk in signal.chunks(l) {
            hop[..chunk.len()].copy_from_slice(chunk);
            hop[chunk.len()..].fill(0.0);
            out.extend_from_slice(&stream.push_hop(&hop)?);
        }
        out.truncate(signal.len());
        Ok(out)
    }
}
