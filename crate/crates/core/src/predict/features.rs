use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{
    mel_spectrogram_with, AudioBuffer, MelFilterbank, MelSpectrogram, StftConfig, DEFAULT_HOP,
    DEFAULT_N_FFT, DEFAULT_N_MELS, DEFAULT_SAMPLE_RATE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop_length: usize,
    pub n_mels: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: DEFAULT_SAMPLE_RATE,
            n_fft: DEFAULT_N_FFT,
            hop_length: DEFAULT_HOP,
            n_mels: DEFAULT_N_MELS,
        }
    }
}

impl FeatureConfig {
    pub fn stft(&self) -> StftConfig {
        StftConfig {
            n_fft: self.n_fft,
            hop_length: self.hop_length,
        }
    }

    /// Frames covering `seconds` of audio.
    pub fn frames_for(&self, seconds: f64) -> usize {
        let samples = (seconds * self.sample_rate as f64).round() as usize;
        samples / self.hop_length + 1
    }
}

/// Log-mel front end with a prebuilt filterbank.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    config: FeatureConfig,
    bank: MelFilterbank,
}

impl FeatureExtractor {
    pub fn new(config: FeatureConfig) -> Result<Self> {
        config.stft().validate()?;
        let bank = MelFilterbank::new(config.n_mels, config.n_fft, config.sample_rate)?;
        Ok(Self { config, bank })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn mel(&self, buffer: &AudioBuffer) -> Result<MelSpectrogram> {
        if buffer.sample_rate() != self.config.sample_rate {
            return Err(Error::SampleRateMismatch {
                expected: self.config.sample_rate,
                found: buffer.sample_rate(),
            });
        }
        mel_spectrogram_with(buffer, self.config.stft(), &self.bank)
    }

    /// Time-mean of the log-mel spectrogram, one value per mel bin. This is
    /// the raw feature; standardization belongs to the model.
    pub fn features(&self, buffer: &AudioBuffer) -> Result<Vec<f64>> {
        Ok(self.mel(buffer)?.time_mean())
    }
}

pub fn extract_features(buffer: &AudioBuffer, config: &FeatureConfig) -> Result<Vec<f64>> {
    FeatureExtractor::new(*config)?.features(buffer)
}
