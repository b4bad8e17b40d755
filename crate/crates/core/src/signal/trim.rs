use super::AudioBuffer;
use crate::error::{Error, Result};

/// Frame length used for silence gating.
pub const TRIM_FRAME: usize = 512;

/// Frame-wise silence gate: the buffer is cut into consecutive 512-sample
/// frames (the last one may be shorter) and every frame whose RMS lies more
/// than `threshold_db` below the loudest frame is dropped. Surviving frames
/// are concatenated in order, so silent gaps inside the audio disappear too.
pub fn trim_silence(buffer: &AudioBuffer, threshold_db: f64) -> Result<AudioBuffer> {
    if threshold_db.is_nan() || threshold_db <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "threshold_db must be positive, got {threshold_db}"
        )));
    }
    let frames: Vec<&[f32]> = buffer.samples().chunks(TRIM_FRAME).collect();
    let rms: Vec<f64> = frames
        .iter()
        .map(|f| (f.iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / f.len() as f64).sqrt())
        .collect();
    let loudest = rms.iter().cloned().fold(0.0, f64::max);
    if loudest <= 0.0 {
        return Err(Error::EmptyAfterTrim);
    }
    let floor = loudest * 10f64.powf(-threshold_db / 20.0);
    let kept: Vec<f32> = frames
        .iter()
        .zip(&rms)
        .filter(|(_, &r)| r >= floor && r > 0.0)
        .flat_map(|(f, _)| f.iter().copied())
        .collect();
    Ok(AudioBuffer::from_parts(kept, buffer.sample_rate()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(amp: f64, len: usize) -> Vec<f32> {
        (0..len)
            .map(|n| (amp * (2.0 * PI * 440.0 * n as f64 / 16_000.0).sin()) as f32)
            .collect()
    }

    #[test]
    fn drops_trailing_digital_silence() {
        let mut s = sine(1.0, 16_000);
        s.extend(std::iter::repeat_n(0.0, 16_000));
        let out = trim_silence(&AudioBuffer::new(s, 16_000).unwrap(), 60.0).unwrap();
        assert!(out.len() >= 16_000 && out.len() < 16_000 + TRIM_FRAME);
    }

    #[test]
    fn loud_signal_is_untouched() {
        let b = AudioBuffer::new(sine(0.5, 10_000), 16_000).unwrap();
        assert_eq!(trim_silence(&b, 60.0).unwrap(), b);
    }

    #[test]
    fn removes_quiet_interleaved_segments() {
        // Four loud and three -80 dB blocks, each exactly four frames long.
        let block = 4 * TRIM_FRAME;
        let mut s = Vec::new();
        for i in 0..7 {
            let amp = if i % 2 == 0 { 1.0 } else { 1e-4 };
            s.extend(sine(amp, block));
        }
        let b = AudioBuffer::new(s.clone(), 16_000).unwrap();
        let out = trim_silence(&b, 60.0).unwrap();
        // Oracle from the construction: keep exactly the loud blocks.
        let expected: Vec<f32> = s
            .chunks(block)
            .enumerate()
            .filter(|(i, _)| i % 2 == 0)
            .flat_map(|(_, c)| c.iter().copied())
            .collect();
        assert_eq!(out.samples(), expected.as_slice());
    }

    #[test]
    fn all_silent_is_an_error() {
        let err = trim_silence(&AudioBuffer::silent(2000, 16_000), 60.0).unwrap_err();
        assert_eq!(err.to_string(), "empty after trim");
        assert!(trim_silence(&AudioBuffer::silent(10, 16_000), 0.0).is_err());
    }

    #[test]
    fn idempotent() {
        let mut s = sine(1.0, 3000);
        s.extend(vec![0.0; 2000]);
        s.extend(sine(0.01, 1700));
        let b = AudioBuffer::new(s, 16_000).unwrap();
        let once = trim_silence(&b, 30.0).unwrap();
        assert_eq!(trim_silence(&once, 30.0).unwrap(), once);
    }
}
