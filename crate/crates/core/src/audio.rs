//! WAV input/output. Experiments run at 16 kHz mono; files at other rates
//! are rejected rather than silently resampled.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// Sample rate all experiments run at.
pub const EXPERIMENT_RATE: u32 = 16_000;

/// Mono audio in 64-bit floats, nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64).sqrt()
    }
}

/// Load a WAV file: PCM16 or float32, mono or stereo (mixed down), 16 kHz.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.sample_rate != EXPERIMENT_RATE {
        return Err(Error::Audio(format!(
            "{}: sample rate {} Hz is not supported; resample to {} Hz first",
            path.display(),
            spec.sample_rate,
            EXPERIMENT_RATE
        )));
    }
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Audio(format!("{}: zero channels", path.display())));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32_768.0))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (format, bits) => {
            return Err(Error::Audio(format!(
                "{}: unsupported encoding {:?}/{} bit; use 16-bit PCM or 32-bit float",
                path.display(),
                format,
                bits
            )))
        }
    };
    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    Ok(AudioBuffer {
        samples,
        sample_rate: spec.sample_rate,
    })
}

/// Write 16-bit PCM mono. Values are clamped to the PCM range; buffers
/// loaded from 16-bit files round-trip exactly.
pub fn write_wav(path: impl AsRef<Path>, buffer: &AudioBuffer) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: buffer.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &v in &buffer.samples {
        let scaled = (v * 32_768.0).round().clamp(-32_768.0, 32_767.0);
        writer.write_sample(scaled as i16)?;
    }
    writer.finalize()?;
    Ok(())
}

/// Write 32-bit float mono; used for impulse responses that may exceed
/// full scale.
pub fn write_wav_f32(path: impl AsRef<Path>, buffer: &AudioBuffer) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: buffer.sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &v in &buffer.samples {
        writer.write_sample(v as f32)?;
    }
    writer.finalize()?;
    Ok(())
}
