use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::AudioBuffer;

/// Envelope and spectrum of one harmonic note.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Note {
    pub f0: f64,
    /// Partial `k` has amplitude `k^(-rolloff)`.
    pub rolloff: f64,
    /// Exponential decay rate of the amplitude envelope, per second.
    pub decay: f64,
    /// Linear fade-in, in seconds.
    pub attack: f64,
    /// Partials at or above this frequency are dropped; `None` keeps all
    /// partials below Nyquist.
    #[serde(default)]
    pub max_partial_hz: Option<f64>,
}

impl Note {
    pub fn new(f0: f64, rolloff: f64) -> Self {
        Self {
            f0,
            rolloff,
            decay: 2.0,
            attack: 0.01,
            max_partial_hz: None,
        }
    }
}

/// Additive synthesis of all partials of `note.f0` below Nyquist (and
/// below `note.max_partial_hz`, if set) with
/// seeded random phases, shaped by the note envelope and peak-normalized
/// to 1. Partials are advanced with complex phasors, renormalized every
/// block, so the only transcendental calls are per partial rather than per
/// sample.
pub fn synth_harmonic(note: &Note, duration: f64, sample_rate: u32, seed: u64) -> Result<AudioBuffer> {
    if !note.f0.is_finite() || note.f0 <= 0.0 {
        return Err(Error::InvalidArgument(format!("f0 must be positive, got {}", note.f0)));
    }
    let len = samples_for(duration, sample_rate)?;
    let limit = (sample_rate as f64 / 2.0).min(note.max_partial_hz.unwrap_or(f64::INFINITY));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0f64; len];
    let mut k = 1usize;
    while k as f64 * note.f0 < limit {
        let amp = (k as f64).powf(-note.rolloff);
        let phase0 = rng.gen_range(0.0..std::f64::consts::TAU);
        if amp > 1e-9 {
            add_partial(&mut out, k as f64 * note.f0 / sample_rate as f64, phase0, amp);
        }
        k += 1;
    }
    apply_envelope(&mut out, note, sample_rate);
    normalize_peak(&mut out);
    to_buffer(out, sample_rate)
}

/// Decaying white-noise bursts of `burst_ms` at `rate` per second. Burst
/// `i` nominally starts at `(i + 0.5) / rate`, jittered uniformly by up to
/// 10% of the period. Peak-normalized to 1.
pub fn synth_percussive(
    rate: f64,
    burst_ms: f64,
    duration: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<AudioBuffer> {
    if !rate.is_finite() || rate <= 0.0 {
        return Err(Error::InvalidArgument(format!("burst rate must be positive, got {rate}")));
    }
    if burst_ms.is_nan() || burst_ms <= 0.0 {
        return Err(Error::InvalidArgument("burst length must be positive".into()));
    }
    let len = samples_for(duration, sample_rate)?;
    let sr = sample_rate as f64;
    let burst_len = ((burst_ms / 1000.0 * sr).round() as usize).max(1);
    let tau = burst_len as f64 / 4.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0f64; len];
    for onset in burst_onsets(rate, duration, &mut rng) {
        let start = (onset * sr).round() as usize;
        for j in 0..burst_len {
            if start + j >= len {
                break;
            }
            out[start + j] += rng.gen_range(-1.0..1.0) * (-(j as f64) / tau).exp();
        }
    }
    normalize_peak(&mut out);
    to_buffer(out, sample_rate)
}

/// Onset times in seconds of the bursts within `duration`.
pub(crate) fn burst_onsets(rate: f64, duration: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let period = 1.0 / rate;
    let mut onsets = Vec::new();
    let mut i = 0usize;
    loop {
        let nominal = (i as f64 + 0.5) * period;
        if nominal - 0.1 * period >= duration {
            break;
        }
        let t = nominal + rng.gen_range(-0.1..=0.1) * period;
        if (0.0..duration).contains(&t) {
            onsets.push(t);
        }
        i += 1;
    }
    onsets
}

fn samples_for(duration: f64, sample_rate: u32) -> Result<usize> {
    let len = (duration * sample_rate as f64).round();
    if len.is_nan() || len < 1.0 || sample_rate == 0 {
        return Err(Error::InvalidArgument(format!(
            "duration {duration} s at {sample_rate} Hz gives no samples"
        )));
    }
    Ok(len as usize)
}

const RENORM_BLOCK: usize = 1024;

fn add_partial(out: &mut [f64], cycles_per_sample: f64, phase0: f64, amp: f64) {
    let w = std::f64::consts::TAU * cycles_per_sample;
    let (step_re, step_im) = (w.cos(), w.sin());
    let (mut re, mut im) = (phase0.cos(), phase0.sin());
    for (n, o) in out.iter_mut().enumerate() {
        *o += amp * im;
        let next_re = re * step_re - im * step_im;
        im = re * step_im + im * step_re;
        re = next_re;
        if n % RENORM_BLOCK == RENORM_BLOCK - 1 {
            let norm = (re * re + im * im).sqrt();
            re /= norm;
            im /= norm;
        }
    }
}

fn apply_envelope(out: &mut [f64], note: &Note, sample_rate: u32) {
    let sr = sample_rate as f64;
    let attack = (note.attack * sr).max(1.0);
    let decay = (-note.decay / sr).exp();
    let mut env = 1.0;
    for (n, o) in out.iter_mut().enumerate() {
        let ramp = ((n as f64 + 1.0) / attack).min(1.0);
        *o *= env * ramp;
        env *= decay;
    }
}

fn normalize_peak(out: &mut [f64]) {
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v /= peak);
    }
}

fn to_buffer(out: Vec<f64>, sample_rate: u32) -> Result<AudioBuffer> {
    AudioBuffer::new(out.into_iter().map(|v| v as f32).collect(), sample_rate)
}
