use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{AudioBuffer, DEFAULT_HOP, DEFAULT_N_FFT};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop_length: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            n_fft: DEFAULT_N_FFT,
            hop_length: DEFAULT_HOP,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_fft == 0 || !self.n_fft.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "n_fft must be positive and even, got {}",
                self.n_fft
            )));
        }
        if self.hop_length == 0 || self.hop_length > self.n_fft {
            return Err(Error::InvalidArgument(format!(
                "hop_length must be in 1..={}, got {}",
                self.n_fft, self.hop_length
            )));
        }
        Ok(())
    }

    pub fn n_freqs(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frame count for a centered STFT of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        len / self.hop_length + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    /// Periodic Hann, `sin²(πn/N)`.
    Hann,
}

impl Window {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..n)
                .map(|i| {
                    let s = (PI * i as f64 / n as f64).sin();
                    s * s
                })
                .collect(),
        }
    }
}

/// One-sided complex spectrogram, stored frame-major (`n_frames × n_freqs`).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    bins: Vec<Complex64>,
    n_freqs: usize,
    n_frames: usize,
    config: StftConfig,
    sample_rate: u32,
    window: Window,
}

impl ComplexSpectrogram {
    pub fn from_parts(
        bins: Vec<Complex64>,
        n_frames: usize,
        config: StftConfig,
        sample_rate: u32,
    ) -> Result<Self> {
        config.validate()?;
        let n_freqs = config.n_freqs();
        if bins.len() != n_freqs * n_frames {
            return Err(Error::DimensionMismatch(format!(
                "{} bins for {} frames of {} frequencies",
                bins.len(),
                n_frames,
                n_freqs
            )));
        }
        Ok(Self {
            bins,
            n_freqs,
            n_frames,
            config,
            sample_rate,
            window: Window::Hann,
        })
    }

    pub fn n_freqs(&self) -> usize {
        self.n_freqs
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn config(&self) -> StftConfig {
        self.config
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.bins[t * self.n_freqs..(t + 1) * self.n_freqs]
    }

    pub fn get(&self, freq: usize, frame: usize) -> Complex64 {
        self.bins[frame * self.n_freqs + freq]
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.bins.iter().map(|c| c.norm()).collect()
    }

    /// Same geometry, bins multiplied element-wise by `gains` (frame-major).
    pub fn masked(&self, gains: &[f64]) -> Self {
        assert_eq!(gains.len(), self.bins.len());
        Self {
            bins: self.bins.iter().zip(gains).map(|(c, g)| c * *g).collect(),
            ..self.clone()
        }
    }

    pub fn total_energy(&self) -> f64 {
        self.bins.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Centered STFT with the default 1024/512 geometry.
pub fn stft(buffer: &AudioBuffer) -> Result<ComplexSpectrogram> {
    stft_with(buffer, StftConfig::default())
}

/// Centered STFT: the signal is reflection-padded by `n_fft / 2` on both
/// sides and framed with a periodic Hann window, giving
/// `len / hop + 1` frames.
pub fn stft_with(buffer: &AudioBuffer, config: StftConfig) -> Result<ComplexSpectrogram> {
    config.validate()?;
    let x = buffer.samples();
    if x.is_empty() {
        return Err(Error::InvalidArgument("STFT of an empty buffer".into()));
    }
    let n_fft = config.n_fft;
    let pad = n_fft / 2;
    let n_frames = config.n_frames(x.len());
    let n_freqs = config.n_freqs();
    let window = Window::Hann.coefficients(n_fft);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);

    let mut bins = Vec::with_capacity(n_frames * n_freqs);
    let mut frame = vec![Complex64::new(0.0, 0.0); n_fft];
    for t in 0..n_frames {
        let start = (t * config.hop_length) as isize - pad as isize;
        for (i, slot) in frame.iter_mut().enumerate() {
            let idx = reflect(start + i as isize, x.len());
            *slot = Complex64::new(x[idx] as f64 * window[i], 0.0);
        }
        fft.process(&mut frame);
        bins.extend_from_slice(&frame[..n_freqs]);
    }
    ComplexSpectrogram::from_parts(bins, n_frames, config, buffer.sample_rate())
}

/// Overlap-add inverse with squared-window normalization.
///
/// `length` selects the output length after removing the center padding; by
/// default `(n_frames - 1) * hop`.
pub fn istft(spec: &ComplexSpectrogram, length: Option<usize>) -> Result<AudioBuffer> {
    let config = spec.config;
    let n_fft = config.n_fft;
    let hop = config.hop_length;
    if spec.n_freqs != config.n_freqs() || spec.bins.len() != spec.n_freqs * spec.n_frames {
        return Err(Error::DimensionMismatch("inconsistent spectrogram".into()));
    }
    if spec.n_frames == 0 {
        return Err(Error::DimensionMismatch("spectrogram has no frames".into()));
    }
    let pad = n_fft / 2;
    let out_len = length.unwrap_or((spec.n_frames - 1) * hop);
    let padded_len = (spec.n_frames - 1) * hop + n_fft;
    let window = Window::Hann.coefficients(n_fft);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n_fft);

    let mut acc = vec![0.0f64; padded_len];
    let mut norm = vec![0.0f64; padded_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for t in 0..spec.n_frames {
        let frame = spec.frame(t);
        buf[..spec.n_freqs].copy_from_slice(frame);
        // Hermitian completion of the negative frequencies.
        for k in 1..n_fft - spec.n_freqs + 1 {
            buf[n_fft - k] = frame[k].conj();
        }
        buf[0].im = 0.0;
        buf[n_fft / 2].im = 0.0;
        ifft.process(&mut buf);
        let offset = t * hop;
        for i in 0..n_fft {
            acc[offset + i] += buf[i].re / n_fft as f64 * window[i];
            norm[offset + i] += window[i] * window[i];
        }
    }

    let out: Vec<f32> = (0..out_len)
        .map(|i| {
            let j = i + pad;
            if j < padded_len && norm[j] > 1e-10 {
                (acc[j] / norm[j]) as f32
            } else {
                0.0
            }
        })
        .collect();
    AudioBuffer::new(out, spec.sample_rate)
}

/// Mirror an index into `0..len` without repeating the edge sample.
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= len as isize {
        m = period - m;
    }
    m as usize
}
