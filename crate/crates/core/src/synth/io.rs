use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ConfoundedDataset, Example, Split, SynthSpec};
use crate::decompose::MIX_FILE;
use crate::error::{Error, Result};
use crate::signal::{load_wav, save_wav};

pub const DATASET_FILE: &str = "dataset.json";
const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleMeta {
    pub id: String,
    pub split: Split,
    pub label: String,
    pub confounder_present: bool,
    pub seed: u64,
    pub gain: f32,
    pub sample_rate: u32,
    pub stems: Vec<String>,
}

/// Writes `<dir>/dataset.json` and one directory per example under
/// `<dir>/<split>/<id>/` holding `mix.wav`, one WAV per stem and
/// `meta.json`.
pub fn write_dataset(ds: &ConfoundedDataset, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write_json(&dir.join(DATASET_FILE), &ds.spec)?;
    for split in Split::ALL {
        for e in ds.split(split) {
            let ex_dir = dir.join(split.name()).join(&e.id);
            create_dir(&ex_dir)?;
            save_wav(&e.mix, ex_dir.join(MIX_FILE))?;
            for (name, audio) in &e.stems {
                save_wav(audio, ex_dir.join(format!("{name}.wav")))?;
            }
            let meta = ExampleMeta {
                id: e.id.clone(),
                split,
                label: e.label.clone(),
                confounder_present: e.confounder_present,
                seed: e.seed,
                gain: e.gain,
                sample_rate: e.mix.sample_rate(),
                stems: e.stems.iter().map(|(n, _)| n.clone()).collect(),
            };
            write_json(&ex_dir.join(META_FILE), &meta)?;
        }
    }
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<ConfoundedDataset> {
    let spec: SynthSpec = read_json(&dir.join(DATASET_FILE))?;
    let read_split = |split: Split| -> Result<Vec<Example>> {
        let split_dir = dir.join(split.name());
        let mut ids: Vec<_> = fs::read_dir(&split_dir)
            .map_err(|source| Error::Unreadable {
                path: split_dir.clone(),
                source,
            })?
            .filter_map(|entry| entry.ok())
            .filter(|entry| entry.path().is_dir())
            .map(|entry| entry.path())
            .collect();
        ids.sort();
        ids.iter()
            .map(|ex_dir| {
                let meta: ExampleMeta = read_json(&ex_dir.join(META_FILE))?;
                let stems = meta
                    .stems
                    .iter()
                    .map(|name| Ok((name.clone(), load_wav(ex_dir.join(format!("{name}.wav")))?)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Example {
                    id: meta.id,
                    split: meta.split,
                    label: meta.label,
                    confounder_present: meta.confounder_present,
                    seed: meta.seed,
                    gain: meta.gain,
                    mix: load_wav(ex_dir.join(MIX_FILE))?,
                    stems,
                })
            })
            .collect()
    };
    Ok(ConfoundedDataset {
        train: read_split(Split::Train)?,
        valid: read_split(Split::Valid)?,
        test_matched: read_split(Split::TestMatched)?,
        test_swapped: read_split(Split::TestSwapped)?,
        spec,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Unwritable {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|source| Error::Unwritable {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::super::{build_confounded_dataset, SplitCounts};
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let spec = SynthSpec {
            counts: SplitCounts {
                train: 4,
                valid: 4,
                test: 4,
            },
            ..SynthSpec::default()
        };
        let ds = build_confounded_dataset(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        assert!(dir.path().join("train/train-0000/confounder.wav").exists());
        assert!(dir.path().join("test_swapped/test_swapped-0001/meta.json").exists());
        assert_eq!(read_dataset(dir.path()).unwrap(), ds);
    }
}
