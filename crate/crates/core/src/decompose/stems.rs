use std::path::Path;

use super::{Component, Decomposer, Decomposition};
use crate::error::{Error, Result, ResultExt};
use crate::signal::{load_wav, AudioBuffer};

/// File holding the mixture inside a stem directory.
pub const MIX_FILE: &str = "mix.wav";

/// Uses ground-truth stems as the components (τ = 1); the residual is
/// whatever the stems do not account for. Stems may differ from the mix
/// length by one sample and are zero-padded or truncated to match.
pub fn oracle_decompose(mix: &AudioBuffer, stems: &[(String, AudioBuffer)]) -> Result<Decomposition> {
    if stems.is_empty() {
        return Err(Error::InvalidArgument("no stems given".into()));
    }
    let components = stems
        .iter()
        .map(|(label, audio)| {
            if audio.sample_rate() != mix.sample_rate() {
                return Err(Error::SampleRateMismatch {
                    expected: mix.sample_rate(),
                    found: audio.sample_rate(),
                });
            }
            if audio.len().abs_diff(mix.len()) > 1 {
                return Err(Error::DimensionMismatch(format!(
                    "stem {label:?} has {} samples, mix has {}",
                    audio.len(),
                    mix.len()
                )));
            }
            Ok(Component {
                label: label.clone(),
                segment_index: 0,
                audio: audio.clone().fit_to_len(mix.len()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = stems.iter().map(|(l, _)| l.clone()).collect();
    Decomposition::with_computed_residual(mix.clone(), components, labels, 1)
}

/// Ground-truth stems bound to one mix.
#[derive(Debug, Clone)]
pub struct OracleDecomposer {
    pub stems: Vec<(String, AudioBuffer)>,
}

impl Decomposer for OracleDecomposer {
    fn decompose(&self, mix: &AudioBuffer) -> Result<Decomposition> {
        oracle_decompose(mix, &self.stems)
    }

    fn name(&self) -> String {
        "oracle".into()
    }
}

/// Reads a stem directory: `mix.wav` plus one `<label>.wav` per source.
/// Stems are returned sorted by label so every directory yields the same
/// component order.
pub fn load_stem_dir(dir: impl AsRef<Path>) -> Result<(AudioBuffer, OracleDecomposer)> {
    let dir = dir.as_ref();
    let mix_path = dir.join(MIX_FILE);
    let mix = load_wav(&mix_path).with_context(|| mix_path.display().to_string())?;
    let entries = std::fs::read_dir(dir).map_err(|source| Error::Unreadable {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut stems = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let is_wav = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if !is_wav || path.file_name().is_some_and(|n| n == MIX_FILE) {
            continue;
        }
        let label = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::InvalidArgument(format!("bad stem name {}", path.display())))?
            .to_string();
        let audio = load_wav(&path).with_context(|| path.display().to_string())?;
        stems.push((label, audio));
    }
    if stems.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no stems besides {MIX_FILE} in {}",
            dir.display()
        )));
    }
    stems.sort_by(|a, b| a.0.cmp(&b.0));
    Ok((mix, OracleDecomposer { stems }))
}
