//! Interpretable components: sources (optionally split into time segments)
//! whose presence or absence defines a perturbation, plus the remix that
//! maps a binary mask back to audio.
//!
//! Every provider produces a [`Decomposition`] satisfying
//! `mix == Σ components + residual` to within 1e-6 per sample, with
//! components ordered source-major, segment-minor.

mod hpss;
mod stems;

pub use hpss::{hpss_decompose, HpssDecomposer, DEFAULT_KERNEL};
pub use stems::{load_stem_dir, oracle_decompose, OracleDecomposer, MIX_FILE};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{sum_buffers, AudioBuffer};

/// One interpretable component. Its audio spans the whole mix and is zero
/// outside its time segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub label: String,
    pub segment_index: usize,
    pub audio: AudioBuffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    mix: AudioBuffer,
    components: Vec<Component>,
    residual: AudioBuffer,
    source_labels: Vec<String>,
    tau: usize,
}

/// Presence (true) or absence (false) of each component.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InterpretableMask(Vec<bool>);

impl InterpretableMask {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn ones(len: usize) -> Self {
        Self(vec![true; len])
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![false; len])
    }

    /// Mask from the low `len` bits of `value`, most significant bit first,
    /// so ascending integers give ascending binary order.
    pub fn from_index(value: u64, len: usize) -> Self {
        assert!(len <= 64);
        Self(
            (0..len)
                .map(|i| (value >> (len - 1 - i)) & 1 == 1)
                .collect(),
        )
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

impl fmt::Display for InterpretableMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl Decomposition {
    /// Assembles a decomposition, checking lengths, rates and the
    /// reconstruction identity.
    pub fn new(
        mix: AudioBuffer,
        components: Vec<Component>,
        residual: AudioBuffer,
        source_labels: Vec<String>,
        tau: usize,
    ) -> Result<Self> {
        if tau == 0 {
            return Err(Error::InvalidArgument("tau must be at least 1".into()));
        }
        if components.len() != source_labels.len() * tau {
            return Err(Error::DimensionMismatch(format!(
                "{} components for {} sources x {} segments",
                components.len(),
                source_labels.len(),
                tau
            )));
        }
        for c in &components {
            mix.check_same_shape(&c.audio)?;
        }
        mix.check_same_shape(&residual)?;
        let d = Self {
            mix,
            components,
            residual,
            source_labels,
            tau,
        };
        let err = d.reconstruction_error();
        if err > RECONSTRUCTION_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "components and residual do not sum to the mix (max error {err:e})"
            )));
        }
        Ok(d)
    }

    /// Builds the decomposition with the residual set to
    /// `mix - Σ components`.
    pub fn with_computed_residual(
        mix: AudioBuffer,
        components: Vec<Component>,
        source_labels: Vec<String>,
        tau: usize,
    ) -> Result<Self> {
        for c in &components {
            mix.check_same_shape(&c.audio)?;
        }
        let sum = sum_buffers(mix.len(), mix.sample_rate(), components.iter().map(|c| &c.audio));
        let residual = AudioBuffer::from_parts(
            mix.samples()
                .iter()
                .zip(sum.samples())
                .map(|(m, s)| m - s)
                .collect(),
            mix.sample_rate(),
        );
        Self::new(mix, components, residual, source_labels, tau)
    }

    pub fn mix(&self) -> &AudioBuffer {
        &self.mix
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn residual(&self) -> &AudioBuffer {
        &self.residual
    }

    pub fn source_labels(&self) -> &[String] {
        &self.source_labels
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    /// Number of interpretable components, `C × τ`.
    pub fn d_prime(&self) -> usize {
        self.components.len()
    }

    /// Display labels: the source name, suffixed `#<segment>` when τ > 1.
    pub fn component_labels(&self) -> Vec<String> {
        self.components
            .iter()
            .map(|c| component_label(&c.label, c.segment_index, self.tau))
            .collect()
    }

    /// Largest absolute deviation from `mix = Σ components + residual`.
    pub fn reconstruction_error(&self) -> f64 {
        let all = self.components.iter().map(|c| &c.audio).chain([&self.residual]);
        let sum = sum_buffers(self.mix.len(), self.mix.sample_rate(), all);
        self.mix
            .samples()
            .iter()
            .zip(sum.samples())
            .map(|(m, s)| (*m as f64 - *s as f64).abs())
            .fold(0.0, f64::max)
    }

    pub fn remix(&self, mask: &InterpretableMask, include_residual: bool) -> Result<AudioBuffer> {
        remix(self, mask, include_residual)
    }
}

pub const RECONSTRUCTION_TOLERANCE: f64 = 1e-6;

pub(crate) fn component_label(source: &str, segment: usize, tau: usize) -> String {
    if tau > 1 {
        format!("{source}#{segment}")
    } else {
        source.to_string()
    }
}

/// Sum of the components selected by `mask`, plus the residual when
/// requested. No clipping is applied here.
pub fn remix(d: &Decomposition, mask: &InterpretableMask, include_residual: bool) -> Result<AudioBuffer> {
    if mask.len() != d.d_prime() {
        return Err(Error::DimensionMismatch(format!(
            "mask has {} bits, decomposition has {} components",
            mask.len(),
            d.d_prime()
        )));
    }
    let selected = d
        .components
        .iter()
        .zip(mask.bits())
        .filter(|(_, &on)| on)
        .map(|(c, _)| &c.audio);
    let residual = include_residual.then_some(&d.residual);
    Ok(sum_buffers(
        d.mix.len(),
        d.mix.sample_rate(),
        selected.chain(residual),
    ))
}

/// Splits every source into `tau` hard-edged time segments of equal length;
/// the last segment absorbs the remainder.
pub fn segment_time(d: &Decomposition, tau: usize) -> Result<Decomposition> {
    if tau == 0 {
        return Err(Error::InvalidArgument("tau must be at least 1".into()));
    }
    if tau == 1 {
        return Ok(d.clone());
    }
    if d.tau != 1 {
        return Err(Error::InvalidArgument(format!(
            "decomposition is already segmented (tau = {})",
            d.tau
        )));
    }
    let len = d.mix.len();
    if len < tau {
        return Err(Error::InvalidArgument(format!(
            "cannot split {len} samples into {tau} segments"
        )));
    }
    let bounds = segment_bounds(len, tau);
    let mut components = Vec::with_capacity(d.components.len() * tau);
    for c in &d.components {
        for (i, &(start, end)) in bounds.iter().enumerate() {
            let mut samples = vec![0.0f32; len];
            samples[start..end].copy_from_slice(&c.audio.samples()[start..end]);
            components.push(Component {
                label: c.label.clone(),
                segment_index: i,
                audio: AudioBuffer::from_parts(samples, c.audio.sample_rate()),
            });
        }
    }
    Decomposition::new(
        d.mix.clone(),
        components,
        d.residual.clone(),
        d.source_labels.clone(),
        tau,
    )
}

/// `[start, end)` sample ranges of each segment.
pub fn segment_bounds(len: usize, tau: usize) -> Vec<(usize, usize)> {
    let seg = len / tau;
    (0..tau)
        .map(|i| (i * seg, if i + 1 == tau { len } else { (i + 1) * seg }))
        .collect()
}

/// A source-separation provider.
pub trait Decomposer: Send + Sync {
    fn decompose(&self, mix: &AudioBuffer) -> Result<Decomposition>;

    /// Short identifier recorded in explanation provenance.
    fn name(&self) -> String;
}

/// Wraps a provider and splits its sources into `tau` time segments.
pub struct Segmented<D> {
    pub inner: D,
    pub tau: usize,
}

impl<D: Decomposer> Decomposer for Segmented<D> {
    fn decompose(&self, mix: &AudioBuffer) -> Result<Decomposition> {
        segment_time(&self.inner.decompose(mix)?, self.tau)
    }

    fn name(&self) -> String {
        format!("{}+tau{}", self.inner.name(), self.tau)
    }
}

impl<D: Decomposer + ?Sized> Decomposer for Box<D> {
    fn decompose(&self, mix: &AudioBuffer) -> Result<Decomposition> {
        (**self).decompose(mix)
    }

    fn name(&self) -> String {
        (**self).name()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn buffer(samples: Vec<f32>) -> AudioBuffer {
        AudioBuffer::new(samples, 8_000).unwrap()
    }

    fn four_sources() -> Decomposition {
        let stems: Vec<(String, AudioBuffer)> = ["piano", "guitar", "vocals", "bass"]
            .iter()
            .enumerate()
            .map(|(i, l)| {
                (
                    l.to_string(),
                    buffer((0..100).map(|n| ((n * (i + 2)) % 7) as f32 * 0.01).collect()),
                )
            })
            .collect();
        let mix = sum_buffers(100, 8_000, stems.iter().map(|(_, b)| b));
        oracle_decompose(&mix, &stems).unwrap()
    }

    #[test]
    fn mask_from_index_is_msb_first() {
        assert_eq!(InterpretableMask::from_index(0b0101, 4).to_string(), "0101");
        assert_eq!(InterpretableMask::from_index(1, 1).to_string(), "1");
    }

    #[test]
    fn remix_keeps_only_selected_sources() {
        let d = four_sources();
        let mask = InterpretableMask::new(vec![false, true, false, true]);
        let out = remix(&d, &mask, false).unwrap();
        let expected = sum_buffers(100, 8_000, [&d.components()[1].audio, &d.components()[3].audio]);
        assert_eq!(out, expected);
    }

    #[test]
    fn all_ones_with_residual_is_the_mix() {
        let d = four_sources();
        let out = remix(&d, &InterpretableMask::ones(4), true).unwrap();
        for (a, b) in out.samples().iter().zip(d.mix().samples()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn all_zeros_is_silence_or_residual() {
        let d = four_sources();
        let z = InterpretableMask::zeros(4);
        assert!(remix(&d, &z, false).unwrap().samples().iter().all(|&s| s == 0.0));
        assert_eq!(remix(&d, &z, true).unwrap(), *d.residual());
    }

    #[test]
    fn remix_rejects_wrong_mask_length() {
        let d = four_sources();
        assert!(matches!(
            remix(&d, &InterpretableMask::ones(3), false),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn segmenting_four_sources_in_two() {
        let d = four_sources();
        let s = segment_time(&d, 2).unwrap();
        assert_eq!(s.d_prime(), 8);
        assert_eq!(s.component_labels()[..3], ["piano#0", "piano#1", "guitar#0"]);
        assert!(s.reconstruction_error() <= 1e-6);
        assert_eq!(segment_time(&d, 1).unwrap(), d);
        assert!(segment_time(&d, 0).is_err());
        assert!(segment_time(&s, 2).is_err());
    }

    #[test]
    fn segments_partition_each_source() {
        let d = four_sources();
        let s = segment_time(&d, 3).unwrap();
        for (c, original) in d.components().iter().enumerate() {
            let pieces = &s.components()[c * 3..c * 3 + 3];
            let sum = sum_buffers(100, 8_000, pieces.iter().map(|p| &p.audio));
            assert_eq!(sum, original.audio);
            let energy: f64 = pieces.iter().map(|p| p.audio.energy()).sum();
            let whole = original.audio.energy();
            assert!((energy - whole).abs() <= 1e-12 * whole.max(1e-300));
            // Last segment absorbs the remainder: 33 + 33 + 34.
            let (start, end) = segment_bounds(100, 3)[2];
            assert_eq!((start, end), (66, 100));
            assert!(pieces[0].audio.samples()[33..].iter().all(|&x| x == 0.0));
        }
    }

    proptest! {
        #[test]
        fn disjoint_remixes_add(bits in prop::collection::vec(0u8..3, 4)) {
            let d = four_sources();
            // 0: neither, 1: first mask, 2: second mask.
            let m1 = InterpretableMask::new(bits.iter().map(|&b| b == 1).collect());
            let m2 = InterpretableMask::new(bits.iter().map(|&b| b == 2).collect());
            let union = InterpretableMask::new(bits.iter().map(|&b| b != 0).collect());
            let a = remix(&d, &m1, false).unwrap();
            let b = remix(&d, &m2, false).unwrap();
            let u = remix(&d, &union, false).unwrap();
            for i in 0..u.len() {
                prop_assert!((a.samples()[i] + b.samples()[i] - u.samples()[i]).abs() <= 1e-6);
            }
        }
    }
}
