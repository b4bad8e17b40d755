use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::AudioBuffer;
use crate::error::{Error, Result};

/// Reads a PCM16 or float32 WAV file with one or two channels, averaging
/// channels to mono.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = WavReader::new(BufReader::new(file)).map_err(map_hound)?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.channels > 2 {
        return Err(Error::UnsupportedEncoding(format!(
            "{} channels",
            spec.channels
        )));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(map_hound)?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(map_hound)?,
        (format, bits) => {
            return Err(Error::UnsupportedEncoding(format!(
                "{bits}-bit {}",
                match format {
                    SampleFormat::Int => "integer PCM",
                    SampleFormat::Float => "float",
                }
            )))
        }
    };
    let channels = spec.channels as usize;
    if interleaved.len() < channels {
        return Err(Error::EmptyAudio);
    }
    let mono: Vec<f32> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f32>() / channels as f32)
            .collect()
    };
    AudioBuffer::new(mono, spec.sample_rate)
}

/// Writes a mono 32-bit float WAV. Samples are stored as-is, so loading the
/// file back reproduces the buffer bit for bit.
pub fn save_wav(buffer: &AudioBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if buffer.is_empty() {
        return Err(Error::InvalidArgument("cannot write an empty buffer".into()));
    }
    if let Some(i) = buffer.samples().iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFiniteSample(i));
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate: buffer.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let unwritable = |source: std::io::Error| Error::Unwritable {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| match e {
        hound::Error::IoError(io) => unwritable(io),
        other => Error::MalformedWav(other.to_string()),
    })?;
    for &s in buffer.samples() {
        writer.write_sample(s).map_err(|e| match e {
            hound::Error::IoError(io) => unwritable(io),
            other => Error::MalformedWav(other.to_string()),
        })?;
    }
    writer.finalize().map_err(|e| match e {
        hound::Error::IoError(io) => unwritable(io),
        other => Error::MalformedWav(other.to_string()),
    })
}

fn map_hound(e: hound::Error) -> Error {
    match e {
        hound::Error::Unsupported => Error::UnsupportedEncoding("unsupported WAV format".into()),
        hound::Error::FormatError(msg) => Error::MalformedWav(msg.to_string()),
        hound::Error::IoError(io) => Error::MalformedWav(io.to_string()),
        hound::Error::TooWide | hound::Error::UnfinishedSample => {
            Error::MalformedWav(e.to_string())
        }
        hound::Error::InvalidSampleFormat => Error::UnsupportedEncoding(e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_pcm16(path: &Path, channels: u16, frames: &[i16]) {
        let spec = WavSpec {
            channels,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(path, spec).unwrap();
        for &s in frames {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn pcm16_constant_scales_to_half() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.wav");
        write_pcm16(&path, 1, &[16384; 100]);
        let b = load_wav(&path).unwrap();
        assert_eq!(b.len(), 100);
        for &s in b.samples() {
            assert!((s - 0.5).abs() <= 2f32.powi(-15));
        }
    }

    #[test]
    fn stereo_float_is_averaged() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 16_000,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for _ in 0..50 {
            w.write_sample(0.2f32).unwrap();
            w.write_sample(0.6f32).unwrap();
        }
        w.finalize().unwrap();
        let b = load_wav(&path).unwrap();
        assert_eq!(b.len(), 50);
        for &s in b.samples() {
            assert!((s - 0.4).abs() < 1e-7);
        }
    }

    #[test]
    fn truncated_header_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        std::fs::write(&path, b"RIFF\x24\x00\x00\x00WAVEfmt ").unwrap();
        assert!(matches!(load_wav(&path), Err(Error::MalformedWav(_))));
    }

    #[test]
    fn missing_file_is_unreadable() {
        let err = load_wav("/nonexistent/definitely/missing.wav").unwrap_err();
        assert!(matches!(err, Error::Unreadable { .. }));
    }

    #[test]
    fn zero_length_and_unsupported_encodings() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("e.wav");
        write_pcm16(&empty, 1, &[]);
        assert!(matches!(load_wav(&empty), Err(Error::EmptyAudio)));

        let wide = dir.path().join("w.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 24,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&wide, spec).unwrap();
        w.write_sample(1i32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_wav(&wide), Err(Error::UnsupportedEncoding(_))));
    }

    #[test]
    fn float_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.wav");
        let samples: Vec<f32> = (0..16_000)
            .map(|n| (2.0 * std::f64::consts::PI * 440.0 * n as f64 / 16_000.0).sin() as f32)
            .collect();
        let b = AudioBuffer::new(samples, 16_000).unwrap();
        save_wav(&b, &path).unwrap();
        let back = load_wav(&path).unwrap();
        assert_eq!(back.sample_rate(), 16_000);
        assert!(b
            .samples()
            .iter()
            .zip(back.samples())
            .all(|(a, c)| a.to_bits() == c.to_bits()));
    }

    #[test]
    fn save_rejects_empty_buffer_and_bad_path() {
        let dir = tempfile::tempdir().unwrap();
        let empty = AudioBuffer::silent(0, 16_000);
        assert!(save_wav(&empty, dir.path().join("x.wav")).is_err());
        let b = AudioBuffer::silent(4, 16_000);
        let err = save_wav(&b, dir.path().join("no/such/dir/x.wav")).unwrap_err();
        assert!(matches!(err, Error::Unwritable { .. }));
    }

    #[test]
    fn save_rejects_nan() {
        // Bypass the constructor to model a buffer corrupted after creation.
        let b = AudioBuffer {
            samples: vec![0.0, f32::NAN],
            sample_rate: 16_000,
        };
        let dir = tempfile::tempdir().unwrap();
        let err = save_wav(&b, dir.path().join("n.wav")).unwrap_err();
        assert_eq!(err.to_string(), "non-finite sample at index 1");
    }
}
