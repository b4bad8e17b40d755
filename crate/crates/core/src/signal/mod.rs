//! Audio buffers and the preprocessing chain: WAV I/O, resampling, silence
//! gating, STFT/iSTFT and log-mel features.
//!
//! Defaults follow the feature pipeline the built-in classifier is trained
//! with: 16 kHz mono, 1024-point STFT with hop 512, 128 mel bins.

mod mel;
mod resample;
mod stft;
mod trim;
mod wav;

pub use mel::{mel_spectrogram, mel_spectrogram_with, MelFilterbank, MelSpectrogram, LOG_FLOOR};
pub use resample::resample;
pub use stft::{istft, stft, stft_with, ComplexSpectrogram, StftConfig, Window};
pub use trim::{trim_silence, TRIM_FRAME};
pub use wav::{load_wav, save_wav};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
pub const DEFAULT_N_FFT: usize = 1024;
pub const DEFAULT_HOP: usize = 512;
pub const DEFAULT_N_MELS: usize = 128;

/// Mono audio with a sample rate. Samples are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample_rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFiniteSample(i));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silent(len: usize, sample_rate: u32) -> Self {
        assert!(sample_rate > 0);
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    /// Caller guarantees finiteness; used for arithmetic on buffers that are
    /// already known to be finite.
    pub(crate) fn from_parts(samples: Vec<f32>, sample_rate: u32) -> Self {
        debug_assert!(sample_rate > 0);
        debug_assert!(samples.iter().all(|s| s.is_finite()));
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            (self.energy() / self.samples.len() as f64).sqrt()
        }
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }

    /// Samples `[start, end)` as a new buffer.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self::from_parts(self.samples[start..end].to_vec(), self.sample_rate)
    }

    pub fn scaled(&self, gain: f32) -> Self {
        Self::new(
            self.samples.iter().map(|s| s * gain).collect(),
            self.sample_rate,
        )
        .expect("finite gain on finite samples")
    }

    /// Zero-pads or truncates to exactly `len` samples.
    pub fn fit_to_len(mut self, len: usize) -> Self {
        self.samples.resize(len, 0.0);
        self
    }

    pub(crate) fn check_same_shape(&self, other: &AudioBuffer) -> Result<()> {
        if self.sample_rate != other.sample_rate {
            return Err(Error::SampleRateMismatch {
                expected: self.sample_rate,
                found: other.sample_rate,
            });
        }
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch(format!(
                "buffer lengths {} and {}",
                self.len(),
                other.len()
            )));
        }
        Ok(())
    }
}

/// Sum of equally shaped buffers, accumulated in the given order.
pub(crate) fn sum_buffers<'a>(
    len: usize,
    sample_rate: u32,
    buffers: impl IntoIterator<Item = &'a AudioBuffer>,
) -> AudioBuffer {
    let mut acc = vec![0.0f32; len];
    for b in buffers {
        for (a, s) in acc.iter_mut().zip(b.samples()) {
            *a += *s;
        }
    }
    AudioBuffer::from_parts(acc, sample_rate)
}
