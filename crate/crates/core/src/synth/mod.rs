//! Synthetic confounded datasets and the end-to-end confounder experiment.
//!
//! Two harmonic "instruments" that differ only in timbre define the
//! classes. A percussive stem co-occurs with class A in training, and with
//! class B in the swapped test split.

mod experiment;
mod io;
mod tones;

pub use experiment::{
    run_confounder_experiment, run_sanity_experiment, snippet_decompositions, DecomposerChoice,
    DecomposerRun, ExperimentConfig, ExperimentReport, MeanSd, RunReport, SanityExperimentConfig,
};
pub use io::{read_dataset, write_dataset, ExampleMeta, DATASET_FILE};
pub use tones::{synth_harmonic, synth_percussive, Note};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decompose::{oracle_decompose, Decomposition};
use crate::error::{Error, Result};
use crate::signal::{sum_buffers, AudioBuffer};

/// Name of the pinned random generator, recorded with every dataset.
pub const GENERATOR: &str = "chacha8";

pub const BASS_STEM: &str = "bass";
pub const CONFOUNDER_STEM: &str = "confounder";
pub const TARGET_STEM: &str = "target";
pub const EXTRA_STEM: &str = "extra";

/// Peak of every normalized mix.
/// Default band limit of the harmonic instruments; the confounder alone
/// occupies the mel bins above it.
pub const MAX_PARTIAL_HZ: f64 = 2000.0;
pub const MIX_PEAK: f32 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timbre {
    pub label: String,
    pub rolloff: f64,
    /// Per-note rolloff drawn uniformly from `rolloff ± rolloff_jitter`.
    pub rolloff_jitter: f64,
    pub f0_min: f64,
    pub f0_max: f64,
    pub decay: f64,
    pub notes_per_second: f64,
    /// Upper frequency limit for partials; `None` extends to Nyquist.
    #[serde(default)]
    pub max_partial_hz: Option<f64>,
    /// Stem gain drawn uniformly from this range before mixing.
    pub gain: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfounderSpec {
    pub rate_hz: f64,
    pub burst_ms: f64,
    pub gain: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accompaniment {
    pub bass: Timbre,
    /// Optional second accompaniment track present in every example.
    pub extra: Option<Timbre>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub class_a: Timbre,
    pub class_b: Timbre,
    pub confounder: ConfounderSpec,
    pub accompaniment: Accompaniment,
    pub snippet_seconds: f64,
    pub sample_rate: u32,
    pub counts: SplitCounts,
    /// When false no split contains the confounder (control condition).
    pub confounded: bool,
    pub seed: u64,
    pub generator: String,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            class_a: Timbre {
                label: "guitar".into(),
                rolloff: 1.0,
                rolloff_jitter: 0.1,
                f0_min: 110.0,
                f0_max: 440.0,
                decay: 3.0,
                notes_per_second: 2.0,
                max_partial_hz: Some(MAX_PARTIAL_HZ),
                gain: (0.5, 1.0),
            },
            class_b: Timbre {
                label: "piano".into(),
                rolloff: 1.6,
                rolloff_jitter: 0.1,
                f0_min: 110.0,
                f0_max: 440.0,
                decay: 1.5,
                notes_per_second: 2.0,
                max_partial_hz: Some(MAX_PARTIAL_HZ),
                gain: (0.5, 1.0),
            },
            confounder: ConfounderSpec {
                rate_hz: 4.0,
                burst_ms: 5.0,
                gain: (0.5, 0.9),
            },
            accompaniment: Accompaniment {
                bass: Timbre {
                    label: BASS_STEM.into(),
                    rolloff: 2.0,
                    rolloff_jitter: 0.0,
                    f0_min: 41.0,
                    f0_max: 82.0,
                    decay: 1.0,
                    notes_per_second: 1.0,
                    max_partial_hz: Some(MAX_PARTIAL_HZ),
                    gain: (0.3, 0.6),
                },
                extra: None,
            },
            snippet_seconds: 2.0,
            sample_rate: 16_000,
            counts: SplitCounts {
                train: 200,
                valid: 50,
                test: 50,
            },
            confounded: true,
            seed: 0,
            generator: GENERATOR.into(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.generator != GENERATOR {
            return Err(Error::InvalidArgument(format!(
                "unsupported generator {:?}, only {GENERATOR:?} is available",
                self.generator
            )));
        }
        for (name, n) in [
            ("train", self.counts.train),
            ("valid", self.counts.valid),
            ("test", self.counts.test),
        ] {
            if n < 4 || n % 2 != 0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} count must be even and at least 4 (2 per class), got {n}"
                )));
            }
        }
        if self.class_a.label == self.class_b.label {
            return Err(Error::InvalidArgument("class labels must differ".into()));
        }
        if self.class_a.rolloff == self.class_b.rolloff {
            return Err(Error::InvalidArgument("class rolloffs must differ".into()));
        }
        let timbres = [&self.class_a, &self.class_b, &self.accompaniment.bass]
            .into_iter()
            .chain(self.accompaniment.extra.as_ref());
        for t in timbres {
            let cutoff_ok = t.max_partial_hz.is_none_or(|hz| hz > t.f0_max);
            if !(t.f0_min > 0.0 && t.f0_min <= t.f0_max) || t.notes_per_second.is_nan() || t.notes_per_second <= 0.0 || !cutoff_ok {
                return Err(Error::InvalidArgument(format!("invalid timbre {:?}", t.label)));
            }
            check_gain(t.gain)?;
        }
        check_gain(self.confounder.gain)?;
        if self.snippet_seconds.is_nan() || self.snippet_seconds <= 0.0 || self.sample_rate == 0 {
            return Err(Error::InvalidArgument("snippet length and rate must be positive".into()));
        }
        Ok(())
    }

    pub fn labels(&self) -> [String; 2] {
        [self.class_a.label.clone(), self.class_b.label.clone()]
    }
}

fn check_gain((lo, hi): (f64, f64)) -> Result<()> {
    if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "gain range ({lo}, {hi}) must lie within [0, 1]"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    TestMatched,
    TestSwapped,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Valid, Split::TestMatched, Split::TestSwapped];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::TestMatched => "test_matched",
            Split::TestSwapped => "test_swapped",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub split: Split,
    pub label: String,
    pub confounder_present: bool,
    pub seed: u64,
    /// Factor applied to every stem so the mix peaks at [`MIX_PEAK`].
    pub gain: f32,
    pub mix: AudioBuffer,
    /// Sorted by name; the mix is their exact sum.
    pub stems: Vec<(String, AudioBuffer)>,
}

impl Example {
    pub fn decompose(&self) -> Result<Decomposition> {
        oracle_decompose(&self.mix, &self.stems)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfoundedDataset {
    pub spec: SynthSpec,
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
    pub test_matched: Vec<Example>,
    pub test_swapped: Vec<Example>,
}

impl ConfoundedDataset {
    pub fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::TestMatched => &self.test_matched,
            Split::TestSwapped => &self.test_swapped,
        }
    }
}

/// Seed for one named sub-stream of a base seed, stable across platforms.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update((tag.len() as u64).to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("8 bytes"))
}

/// Builds all four splits. Within each split even indices are class A and
/// odd indices class B, so classes are balanced 50:50.
pub fn build_confounded_dataset(spec: &SynthSpec) -> Result<ConfoundedDataset> {
    spec.validate()?;
    let build = |split: Split, n: usize| -> Result<Vec<Example>> {
        (0..n)
            .into_par_iter()
            .map(|i| build_example(spec, split, i))
            .collect()
    };
    Ok(ConfoundedDataset {
        spec: spec.clone(),
        train: build(Split::Train, spec.counts.train)?,
        valid: build(Split::Valid, spec.counts.valid)?,
        test_matched: build(Split::TestMatched, spec.counts.test)?,
        test_swapped: build(Split::TestSwapped, spec.counts.test)?,
    })
}

fn build_example(spec: &SynthSpec, split: Split, index: usize) -> Result<Example> {
    let is_a = index.is_multiple_of(2);
    let timbre = if is_a { &spec.class_a } else { &spec.class_b };
    let confounder_present = spec.confounded
        && match split {
            Split::TestSwapped => !is_a,
            _ => is_a,
        };
    let seed = derive_seed(spec.seed, split.name(), index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = (spec.snippet_seconds * spec.sample_rate as f64).round() as usize;

    let mut stems = vec![
        (TARGET_STEM.to_string(), render_part(timbre, spec, &mut rng)?),
        (BASS_STEM.to_string(), render_part(&spec.accompaniment.bass, spec, &mut rng)?),
    ];
    if let Some(extra) = &spec.accompaniment.extra {
        stems.push((EXTRA_STEM.to_string(), render_part(extra, spec, &mut rng)?));
    }
    let confounder = if confounder_present {
        let c = &spec.confounder;
        let burst_seed = rng.gen();
        synth_percussive(c.rate_hz, c.burst_ms, spec.snippet_seconds, spec.sample_rate, burst_seed)?
            .scaled(draw_gain(c.gain, &mut rng))
    } else {
        AudioBuffer::silent(len, spec.sample_rate)
    };
    stems.push((CONFOUNDER_STEM.to_string(), confounder));
    stems.sort_by(|a, b| a.0.cmp(&b.0));

    let premix = sum_buffers(len, spec.sample_rate, stems.iter().map(|(_, b)| b));
    let peak = premix.peak();
    let gain = if peak > 0.0 { MIX_PEAK / peak } else { 1.0 };
    let stems: Vec<(String, AudioBuffer)> = stems
        .into_iter()
        .map(|(name, b)| (name, b.scaled(gain)))
        .collect();
    let mix = sum_buffers(len, spec.sample_rate, stems.iter().map(|(_, b)| b));
    Ok(Example {
        id: format!("{}-{index:04}", split.name()),
        split,
        label: timbre.label.clone(),
        confounder_present,
        seed,
        gain,
        mix,
        stems,
    })
}

fn draw_gain((lo, hi): (f64, f64), rng: &mut ChaCha8Rng) -> f32 {
    if lo == hi {
        lo as f32
    } else {
        rng.gen_range(lo..=hi) as f32
    }
}

/// A sequence of notes from `timbre`, one per slot of
/// `1 / notes_per_second` seconds, with log-uniform fundamentals.
fn render_part(timbre: &Timbre, spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<AudioBuffer> {
    let sr = spec.sample_rate;
    let len = (spec.snippet_seconds * sr as f64).round() as usize;
    let slot = ((sr as f64 / timbre.notes_per_second).round() as usize).max(1);
    let mut out = vec![0.0f32; len];
    let mut start = 0;
    while start < len {
        let n = slot.min(len - start);
        let f0 = (rng.gen_range(timbre.f0_min.ln()..=timbre.f0_max.ln())).exp();
        let rolloff = if timbre.rolloff_jitter > 0.0 {
            rng.gen_range(timbre.rolloff - timbre.rolloff_jitter..=timbre.rolloff + timbre.rolloff_jitter)
        } else {
            timbre.rolloff
        };
        let note = Note {
            f0,
            rolloff,
            decay: timbre.decay,
            attack: NOTE_RAMP,
            max_partial_hz: timbre.max_partial_hz,
        };
        let tone = synth_harmonic(&note, n as f64 / sr as f64, sr, rng.gen())?;
        let release = ((NOTE_RAMP * sr as f64) as usize).min(n);
        for (j, s) in tone.samples().iter().enumerate() {
            let fade = if j + release >= n {
                (n - j) as f32 / release as f32
            } else {
                1.0
            };
            out[start + j] = s * fade;
        }
        start += n;
    }
    Ok(AudioBuffer::new(out, sr)?.scaled(draw_gain(timbre.gain, rng)))
}

/// Attack and release ramps of every note, in seconds.
const NOTE_RAMP: f64 = 0.01;
