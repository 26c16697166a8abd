//! Deterministic test-signal synthesis: noise, sines, sweeps, vowel
//! sequences, speech-like sequences and synthetic room responses.
//!
//! Everything draws from a seeded generator so repeated runs are
//! bit-identical. Generated buffers are peak-normalized to -3 dBFS.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

/// Peak level of generated signals, linear (-3 dBFS).
const PEAK: f64 = 0.707_945_784_384_138;

/// Kinds of synthetic test signals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SignalKind {
    WhiteNoise,
    Sine { hz: f64 },
    /// Linear chirp from 100 Hz to 0.45 * f_a.
    Sweep,
    /// Five sustained vowels (a-e-i-o-u), one second each, cycled.
    VowelSequence,
    /// Vowels, fricative bursts and pauses in speech-like alternation.
    SpeechLike,
}

/// Voice parameters for the vowel/speech generators.
#[derive(Debug, Clone, Copy)]
pub struct VoiceParams {
    /// Fundamental frequency in Hz.
    pub f0_hz: f64,
    /// Multiplier applied to the formant frequencies.
    pub formant_scale: f64,
    /// Relative depth of the slow pitch drift; higher values make voiced
    /// segments less predictable over long delays.
    pub jitter: f64,
}

impl VoiceParams {
    pub fn male() -> Self {
        Self {
            f0_hz: 120.0,
            formant_scale: 1.0,
            jitter: 0.015,
        }
    }

    pub fn female() -> Self {
        Self {
            f0_hz: 210.0,
            formant_scale: 1.17,
            jitter: 0.015,
        }
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }
}

/// Formant descriptions of the five vowels, (F1, F2) in Hz.
const VOWELS: [(f64, f64); 5] = [
    (700.0, 1150.0), // a
    (430.0, 2100.0), // e
    (290.0, 2300.0), // i
    (450.0, 850.0),  // o
    (320.0, 700.0),  // u
];

const FORMANT_BW: (f64, f64) = (90.0, 130.0);

/// Shared third formant keeps high-band energy present in every vowel.
const F3_HZ: f64 = 2700.0;
const F3_BW: f64 = 180.0;

/// Generate a synthetic signal. Deterministic for a fixed seed.
pub fn generate(kind: SignalKind, duration_s: f64, sample_rate: f64, seed: u64) -> Result<AudioBuffer> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(Error::argument(format!(
            "duration must be positive, got {duration_s}"
        )));
    }
    let len = (duration_s * sample_rate).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = match kind {
        SignalKind::WhiteNoise => (0..len)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect(),
        SignalKind::Sine { hz } => (0..len)
            .map(|k| (2.0 * PI * hz * k as f64 / sample_rate).sin())
            .collect(),
        SignalKind::Sweep => {
            let f0 = 100.0;
            let f1 = 0.45 * sample_rate;
            let rate = (f1 - f0) / duration_s;
            (0..len)
                .map(|k| {
                    let t = k as f64 / sample_rate;
                    (2.0 * PI * (f0 * t + 0.5 * rate * t * t)).sin()
                })
                .collect()
        }
        SignalKind::VowelSequence => {
            vowel_sequence(len, sample_rate, VoiceParams::male(), &mut rng)
        }
        SignalKind::SpeechLike => speech_like(len, sample_rate, VoiceParams::male(), &mut rng),
    };
    Ok(AudioBuffer {
        samples: peak_normalize(samples),
        sample_rate: sample_rate as u32,
    })
}

/// Vowel sequence with an explicit voice.
pub fn synth_vowels(
    duration_s: f64,
    sample_rate: f64,
    voice: VoiceParams,
    seed: u64,
) -> Result<AudioBuffer> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(Error::argument("duration must be positive"));
    }
    let len = (duration_s * sample_rate).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = vowel_sequence(len, sample_rate, voice, &mut rng);
    Ok(AudioBuffer {
        samples: peak_normalize(samples),
        sample_rate: sample_rate as u32,
    })
}

/// Speech-like sequence with an explicit voice; used for multi-speaker
/// corpora.
pub fn synth_speech(
    duration_s: f64,
    sample_rate: f64,
    voice: VoiceParams,
    seed: u64,
) -> Result<AudioBuffer> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(Error::argument("duration must be positive"));
    }
    let len = (duration_s * sample_rate).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = speech_like(len, sample_rate, voice, &mut rng);
    Ok(AudioBuffer {
        samples: peak_normalize(samples),
        sample_rate: sample_rate as u32,
    })
}

fn peak_normalize(mut samples: Vec<f64>) -> Vec<f64> {
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let scale = PEAK / peak;
        samples.iter_mut().for_each(|v| *v *= scale);
    }
    samples
}

/// Magnitude response of a two-pole resonance at frequency `f`.
fn resonance_gain(f: f64, center: f64, bandwidth: f64) -> f64 {
    let half_bw = bandwidth / 2.0;
    let d = f - center;
    half_bw * half_bw / (d * d + half_bw * half_bw)
}

/// Harmonic amplitude of one vowel at harmonic frequency `f`.
fn vowel_amplitude(f: f64, vowel: (f64, f64), scale: f64) -> f64 {
    let g1 = resonance_gain(f, vowel.0 * scale, FORMANT_BW.0);
    let g2 = resonance_gain(f, vowel.1 * scale, FORMANT_BW.1);
    let g3 = resonance_gain(f, F3_HZ * scale, F3_BW);
    // Parallel formants over a gentle source tilt, with a small floor so
    // high harmonics do not vanish entirely.
    (g1 + 0.8 * g2 + 0.5 * g3 + 0.01) * (100.0 / f).powf(0.7)
}

/// Additive vowel synthesis with slow pitch drift; phase-continuous.
struct VowelVoice {
    phases: Vec<f64>,
    amps: Vec<f64>,
    f0: f64,
    drift_phase: f64,
    drift_rate_hz: f64,
    drift_depth: f64,
}

impl VowelVoice {
    fn new(vowel: (f64, f64), voice: VoiceParams, sample_rate: f64, rng: &mut ChaCha8Rng) -> Self {
        let max_harmonic = (7_000.0 / voice.f0_hz).floor() as usize;
        let amps: Vec<f64> = (1..=max_harmonic)
            .map(|k| vowel_amplitude(k as f64 * voice.f0_hz, vowel, voice.formant_scale))
            .collect();
        let phases: Vec<f64> = (0..max_harmonic)
            .map(|_| rng.random::<f64>() * 2.0 * PI)
            .collect();
        let _ = sample_rate;
        Self {
            phases,
            amps,
            f0: voice.f0_hz * (1.0 + 0.02 * (rng.random::<f64>() - 0.5)),
            drift_phase: rng.random::<f64>() * 2.0 * PI,
            drift_rate_hz: 0.8 + 0.8 * rng.random::<f64>(),
            drift_depth: voice.jitter,
        }
    }

    fn tick(&mut self, sample_rate: f64) -> f64 {
        self.drift_phase += 2.0 * PI * self.drift_rate_hz / sample_rate;
        let f0 = self.f0 * (1.0 + self.drift_depth * self.drift_phase.sin());
        let mut out = 0.0;
        for (k, (phase, amp)) in self.phases.iter_mut().zip(self.amps.iter()).enumerate() {
            *phase += 2.0 * PI * (k + 1) as f64 * f0 / sample_rate;
            if *phase > 2.0 * PI {
                *phase -= 2.0 * PI;
            }
            out += amp * phase.sin();
        }
        out
    }
}

fn raised_cosine_env(k: usize, len: usize, edge: usize) -> f64 {
    if k < edge {
        0.5 * (1.0 - (PI * k as f64 / edge as f64).cos())
    } else if k + edge > len {
        let r = len - k;
        0.5 * (1.0 - (PI * r as f64 / edge as f64).cos())
    } else {
        1.0
    }
}

/// Concatenated sustained vowels, one second each, cycling a-e-i-o-u.
fn vowel_sequence(
    len: usize,
    sample_rate: f64,
    voice: VoiceParams,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let seg = sample_rate as usize;
    let edge = (0.03 * sample_rate) as usize;
    let mut out = Vec::with_capacity(len);
    let mut vowel_index = 0usize;
    while out.len() < len {
        let remaining = len - out.len();
        let seg_len = seg.min(remaining);
        let mut synth = VowelVoice::new(VOWELS[vowel_index % 5], voice, sample_rate, rng);
        for k in 0..seg_len {
            out.push(synth.tick(sample_rate) * raised_cosine_env(k, seg_len, edge));
        }
        vowel_index += 1;
    }
    out
}

/// Vowel segments, fricative noise bursts and pauses in random alternation.
fn speech_like(
    len: usize,
    sample_rate: f64,
    voice: VoiceParams,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    let edge = (0.012 * sample_rate) as usize;
    let mut hp_state = 0.0f64;
    while out.len() < len {
        let remaining = len - out.len();
        let draw: f64 = rng.random();
        if draw < 0.55 {
            // Voiced segment.
            let seg_len = ((0.12 + 0.25 * rng.random::<f64>()) * sample_rate) as usize;
            let seg_len = seg_len.min(remaining);
            let vowel = VOWELS[rng.random_range(0..5)];
            let mut synth = VowelVoice::new(vowel, voice, sample_rate, rng);
            for k in 0..seg_len {
                out.push(synth.tick(sample_rate) * raised_cosine_env(k, seg_len, edge));
            }
        } else if draw < 0.8 {
            // Fricative-like burst: first-difference of white noise.
            let seg_len = ((0.04 + 0.08 * rng.random::<f64>()) * sample_rate) as usize;
            let seg_len = seg_len.min(remaining);
            let level = 0.2;
            for k in 0..seg_len {
                let w: f64 = StandardNormal.sample(rng);
                let v = w - hp_state;
                hp_state = w;
                out.push(level * v * raised_cosine_env(k, seg_len, edge));
            }
        } else {
            // Pause with a faint noise floor.
            let seg_len = ((0.04 + 0.18 * rng.random::<f64>()) * sample_rate) as usize;
            let seg_len = seg_len.min(remaining);
            for _ in 0..seg_len {
                let w: f64 = StandardNormal.sample(rng);
                out.push(1e-3 * w);
            }
        }
    }
    out.truncate(len);
    out
}

/// Synthetic room response: direct path, a few early reflections and an
/// exponentially decaying diffuse tail with mild low-pass coloration.
pub fn synthetic_room_ir(length: usize, sample_rate: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = vec![0.0f64; length.max(1)];
    let direct = ((0.002 * sample_rate) as usize).min(h.len() - 1);
    h[direct] = 1.0;
    // Dense weak early reflections keep the frequency response free of deep
    // comb structure.
    let reflections = 24;
    for _ in 0..reflections {
        let pos = direct + rng.random_range(1..(0.014 * sample_rate) as usize);
        if pos < h.len() {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            h[pos] += sign * (0.05 + 0.15 * rng.random::<f64>());
        }
    }
    // Diffuse tail, T60 around 60 ms.
    let tau = 0.06 / 6.9 * sample_rate;
    for (k, tap) in h.iter_mut().enumerate().skip(direct + 1) {
        let g: f64 = StandardNormal.sample(&mut rng);
        *tap += 0.3 * g * (-((k - direct) as f64) / tau).exp();
    }
    // One-pole low-pass for speaker/microphone coloration.
    let mut state = 0.0;
    for tap in h.iter_mut() {
        state += 0.6 * (*tap - state);
        *tap = state;
    }
    // Small in-car loudspeakers carry little bass; roll off below ~350 Hz
    // (two cascaded first-order high-pass sections).
    let rc = 1.0 / (2.0 * PI * 350.0);
    let dt = 1.0 / sample_rate;
    let a = rc / (rc + dt);
    for _ in 0..2 {
        let mut y = 0.0;
        let mut x_prev = 0.0;
        for tap in h.iter_mut() {
            y = a * (y + *tap - x_prev);
            x_prev = *tap;
            *tap = y;
        }
    }
    let peak = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        h.iter_mut().for_each(|v| *v /= peak);
    }
    h
}
