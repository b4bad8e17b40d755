use super::{stft_with, AudioBuffer, StftConfig, DEFAULT_N_MELS};
use crate::error::{Error, Result};

/// Additive floor inside the log so digital silence stays finite.
pub const LOG_FLOOR: f64 = 1e-10;

/// Triangular filters on the Slaney mel scale spanning 0 Hz to Nyquist.
///
/// Each filter is normalized to unit area over the FFT bins (its weights
/// sum to one), so a filter output is a weighted average of the bins it
/// covers. Filters narrower than one bin collapse onto the nearest bin.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    n_mels: usize,
    n_freqs: usize,
    /// Per filter: first covered bin and its weights.
    filters: Vec<(usize, Vec<f64>)>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: u32) -> Result<Self> {
        if n_mels == 0 {
            return Err(Error::InvalidArgument("n_mels must be positive".into()));
        }
        let n_freqs = n_fft / 2 + 1;
        let nyquist = sample_rate as f64 / 2.0;
        let mel_max = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / n_fft as f64;

        let filters = (0..n_mels)
            .map(|m| {
                let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                let mut weights: Vec<(usize, f64)> = (0..n_freqs)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let rising = (f - lo) / (center - lo);
                        let falling = (hi - f) / (hi - center);
                        let w = rising.min(falling);
                        (w > 0.0).then_some((k, w))
                    })
                    .collect();
                if weights.is_empty() {
                    let nearest = ((center / bin_hz).round() as usize).min(n_freqs - 1);
                    weights.push((nearest, 1.0));
                }
                let total: f64 = weights.iter().map(|(_, w)| w).sum();
                let start = weights[0].0;
                let dense: Vec<f64> = {
                    let end = weights.last().unwrap().0;
                    let mut d = vec![0.0; end - start + 1];
                    for (k, w) in &weights {
                        d[k - start] = w / total;
                    }
                    d
                };
                (start, dense)
            })
            .collect();
        Ok(Self {
            n_mels,
            n_freqs,
            filters,
        })
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_freqs(&self) -> usize {
        self.n_freqs
    }

    /// Dense weight row for filter `m`.
    pub fn row(&self, m: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.n_freqs];
        let (start, w) = &self.filters[m];
        row[*start..start + w.len()].copy_from_slice(w);
        row
    }

    /// Applies the filterbank to one spectrum column.
    pub fn apply(&self, column: &[f64], out: &mut [f64]) {
        debug_assert_eq!(column.len(), self.n_freqs);
        for (o, (start, w)) in out.iter_mut().zip(&self.filters) {
            *o = w.iter().zip(&column[*start..]).map(|(a, b)| a * b).sum();
        }
    }

    /// Center frequency of filter `m` in Hz.
    pub fn center_hz(&self, m: usize, sample_rate: u32) -> f64 {
        let mel_max = hz_to_mel(sample_rate as f64 / 2.0);
        mel_to_hz(mel_max * (m + 1) as f64 / (self.n_mels + 1) as f64)
    }
}

/// Log-mel spectrogram, stored frame-major (`n_frames × n_mels`).
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    values: Vec<f64>,
    n_mels: usize,
    n_frames: usize,
    sample_rate: u32,
}

impl MelSpectrogram {
    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_mels, self.n_frames)
    }

    pub fn get(&self, mel: usize, frame: usize) -> f64 {
        self.values[frame * self.n_mels + mel]
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_mels..(t + 1) * self.n_mels]
    }

    /// Per-bin mean over frames `[start, end)`.
    pub fn mean_over(&self, start: usize, end: usize) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_mels];
        for t in start..end {
            for (a, v) in acc.iter_mut().zip(self.frame(t)) {
                *a += v;
            }
        }
        let n = (end - start) as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    pub fn time_mean(&self) -> Vec<f64> {
        self.mean_over(0, self.n_frames)
    }
}

/// 128-bin log-mel spectrogram with the default STFT geometry.
pub fn mel_spectrogram(buffer: &AudioBuffer) -> Result<MelSpectrogram> {
    let config = StftConfig::default();
    let bank = MelFilterbank::new(DEFAULT_N_MELS, config.n_fft, buffer.sample_rate())?;
    mel_spectrogram_with(buffer, config, &bank)
}

/// Filterbank applied to `ln(|STFT| + 1e-10)`.
pub fn mel_spectrogram_with(
    buffer: &AudioBuffer,
    config: StftConfig,
    bank: &MelFilterbank,
) -> Result<MelSpectrogram> {
    if buffer.len() < config.n_fft {
        return Err(Error::InvalidArgument(format!(
            "need at least {} samples for a mel spectrogram, got {}",
            config.n_fft,
            buffer.len()
        )));
    }
    if bank.n_freqs() != config.n_freqs() {
        return Err(Error::DimensionMismatch(format!(
            "filterbank expects {} frequencies, STFT has {}",
            bank.n_freqs(),
            config.n_freqs()
        )));
    }
    let spec = stft_with(buffer, config)?;
    let n_frames = spec.n_frames();
    let mut values = vec![0.0; n_frames * bank.n_mels()];
    let mut column = vec![0.0; spec.n_freqs()];
    for t in 0..n_frames {
        for (c, bin) in column.iter_mut().zip(spec.frame(t)) {
            *c = (bin.norm() + LOG_FLOOR).ln();
        }
        bank.apply(&column, &mut values[t * bank.n_mels()..(t + 1) * bank.n_mels()]);
    }
    Ok(MelSpectrogram {
        values,
        n_mels: bank.n_mels(),
        n_frames,
        sample_rate: buffer.sample_rate(),
    })
}

// Slaney mel scale: linear below 1 kHz, logarithmic above.
const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

pub(crate) fn hz_to_mel(hz: f64) -> f64 {
    if hz < MIN_LOG_HZ {
        hz / F_SP
    } else {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / log_step()
    }
}

pub(crate) fn mel_to_hz(mel: f64) -> f64 {
    if mel < MIN_LOG_MEL {
        mel * F_SP
    } else {
        MIN_LOG_HZ * (log_step() * (mel - MIN_LOG_MEL)).exp()
    }
}
