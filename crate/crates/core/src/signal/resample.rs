use std::f64::consts::PI;

use super::AudioBuffer;
use crate::error::{Error, Result};

/// Zero crossings of the sinc kernel on each side of the interpolation point.
const HALF_TAPS: f64 = 32.0;

/// Band-limited resampling with a Blackman-windowed sinc kernel whose cutoff
/// sits at the lower of the two Nyquist frequencies.
///
/// The output holds `round(len * target / source)` samples.
pub fn resample(buffer: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer> {
    if target_rate == 0 {
        return Err(Error::InvalidArgument("target_rate must be positive".into()));
    }
    let source_rate = buffer.sample_rate();
    if source_rate == target_rate {
        return Ok(buffer.clone());
    }
    let input = buffer.samples();
    let out_len = ((input.len() as u128 * target_rate as u128 + source_rate as u128 / 2)
        / source_rate as u128) as usize;

    let step = source_rate as f64 / target_rate as f64;
    // Fraction of the input band kept; < 1 when downsampling.
    let ratio = (target_rate as f64 / source_rate as f64).min(1.0);
    let reach = HALF_TAPS / ratio;

    let out: Vec<f32> = (0..out_len)
        .map(|n| {
            let t = n as f64 * step;
            let lo = (t - reach).ceil().max(0.0) as usize;
            let hi = ((t + reach).floor() as usize).min(input.len().saturating_sub(1));
            let mut acc = 0.0f64;
            for (k, &x) in input.iter().enumerate().take(hi + 1).skip(lo) {
                let delta = t - k as f64;
                acc += x as f64 * ratio * sinc(ratio * delta) * blackman(delta / reach);
            }
            acc as f32
        })
        .collect();
    Ok(AudioBuffer::from_parts(out, target_rate))
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Blackman window on `u ∈ [-1, 1]`, zero outside.
fn blackman(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        return 0.0;
    }
    let phase = PI * (u + 1.0);
    0.42 - 0.5 * phase.cos() + 0.08 * (2.0 * phase).cos()
}
