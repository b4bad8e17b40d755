#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Duration;

use audexplain::predict::external_predict;
use audexplain::signal::AudioBuffer;
use audexplain::{Error, ExternalError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CLI: &str = env!("CARGO_BIN_EXE_audexplain");
pub const ECHO: &str = env!("CARGO_BIN_EXE_audexplain-echo-predictor");

pub fn noise(len: usize, amp: f32, seed: u64) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AudioBuffer::new((0..len).map(|_| rng.gen_range(-amp..amp)).collect(), 16_000).unwrap()
}

pub fn cli(args: &[&str], cwd: &Path) -> Output {
    Command::new(CLI)
        .args(args)
        .current_dir(cwd)
        .env_remove("AUDEXPLAIN_SEED")
        .output()
        .expect("run audexplain")
}

/// Contents of every JSON, CSV and WAV file under `dir`, keyed by relative
/// path.
pub fn output_files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else if path
                .extension()
                .is_some_and(|e| e == "json" || e == "csv" || e == "wav")
            {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Runs `args` twice into the same output directory and compares every
/// output file byte for byte.
pub fn rerun_identical(args: &[&str], cwd: &Path, out: &str) -> Result<usize, String> {
    let run = || -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
        let _ = fs::remove_dir_all(cwd.join(out));
        let o = cli(args, cwd);
        if !o.status.success() {
            return Err(format!(
                "{:?} failed: {}",
                args,
                String::from_utf8_lossy(&o.stderr)
            ));
        }
        Ok(output_files(&cwd.join(out)))
    };
    let first = run()?;
    let second = run()?;
    if first.is_empty() {
        return Err(format!("{args:?} wrote no outputs"));
    }
    if first != second {
        let differing: Vec<_> = first
            .iter()
            .filter(|(k, v)| second.get(*k) != Some(v))
            .map(|(k, _)| k.display().to_string())
            .collect();
        return Err(format!("{args:?}: outputs differ: {differing:?}"));
    }
    Ok(first.len())
}

pub fn echo_command(mode: &str) -> String {
    format!("{ECHO} --mode {mode}")
}

fn protocol_batch() -> Vec<AudioBuffer> {
    [0.05f32, 0.2, 0.4].iter().enumerate().map(|(i, &a)| noise(4000, a, i as u64)).collect()
}

fn call(mode: &str, labels: &[&str]) -> audexplain::Result<Vec<audexplain::predict::Prediction>> {
    let dir = tempfile::tempdir().unwrap();
    let labels: Vec<String> = labels.iter().map(|s| s.to_string()).collect();
    external_predict(
        &echo_command(mode),
        &protocol_batch(),
        dir.path(),
        Duration::from_secs(30),
        &labels,
    )
}

/// The five protocol checks against the bundled echo predictor. Each returns
/// a short description on success.
pub fn golden_round_trip() -> Result<String, String> {
    let preds = call("ok", &["rock", "jazz"]).map_err(|e| e.to_string())?;
    let ok = preds.len() == 3
        && preds.iter().all(|p| {
            p.labels == ["rock", "jazz"] && p.probabilities.iter().all(|&v| v == 0.5)
        });
    ok.then(|| "3 items, labels echoed, all probabilities 0.5".to_string())
        .ok_or_else(|| format!("unexpected predictions {preds:?}"))
}

pub fn golden_id_matching() -> Result<String, String> {
    let batch = protocol_batch();
    let preds = call("rms", &["loud"]).map_err(|e| e.to_string())?;
    for (p, b) in preds.iter().zip(&batch) {
        let expected = (2.0 * b.rms()).min(1.0);
        let got = p.score("loud").ok_or("missing label")?;
        if (got - expected).abs() > 1e-5 {
            return Err(format!("score {got} does not match input rms-derived {expected}"));
        }
    }
    Ok("scores follow input order".into())
}

pub fn golden_nonzero_exit() -> Result<String, String> {
    match call("fail", &["x"]) {
        Err(Error::External(ExternalError::NonZeroExit { diagnostics, .. }))
            if diagnostics.contains("echo predictor: deliberate failure") =>
        {
            Ok("NonZeroExit carries stderr".into())
        }
        other => Err(format!("expected NonZeroExit, got {other:?}")),
    }
}

pub fn golden_malformed() -> Result<String, String> {
    match call("malformed", &["x"]) {
        Err(Error::External(ExternalError::MalformedResult { .. })) => Ok("MalformedResult".into()),
        other => Err(format!("expected MalformedResult, got {other:?}")),
    }
}

pub fn golden_missing_id() -> Result<String, String> {
    match call("missing", &["x"]) {
        Err(Error::External(ExternalError::MissingId { id, .. })) if id == "item000002" => {
            Ok("MissingId names item000002".into())
        }
        other => Err(format!("expected MissingId for item000002, got {other:?}")),
    }
}
