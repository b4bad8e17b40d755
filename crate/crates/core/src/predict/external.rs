use std::collections::HashMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{Prediction, Predictor};
use crate::error::{Error, ExternalError, Result};
use crate::signal::{save_wav, AudioBuffer};

pub const PROTOCOL_VERSION: u32 = 1;

/// Longest tail of child output kept in an error.
const MAX_DIAGNOSTICS: usize = 8 * 1024;

const POLL_INTERVAL: Duration = Duration::from_millis(5);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub sample_rate: u32,
    pub labels_requested: Vec<String>,
    pub items: Vec<ManifestItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub id: String,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorResult {
    pub version: u32,
    pub items: Vec<ResultItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultItem {
    pub id: String,
    pub labels: Vec<String>,
    pub probs: Vec<f64>,
}

/// Runs `command` once over the whole batch.
///
/// `command` is split on whitespace into program and leading arguments;
/// the manifest and result paths are appended. The batch is written under
/// `workdir` as float32 WAVs named by id.
pub fn external_predict(
    command: &str,
    batch: &[AudioBuffer],
    workdir: &Path,
    timeout: Duration,
    labels_requested: &[String],
) -> Result<Vec<Prediction>> {
    let mut parts = command.split_whitespace();
    let program = parts
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty predictor command".into()))?;
    let args: Vec<&str> = parts.collect();
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let sample_rate = batch[0].sample_rate();
    if let Some(b) = batch.iter().find(|b| b.sample_rate() != sample_rate) {
        return Err(Error::SampleRateMismatch {
            expected: sample_rate,
            found: b.sample_rate(),
        });
    }

    fs::create_dir_all(workdir).map_err(|source| Error::Unwritable {
        path: workdir.to_path_buf(),
        source,
    })?;
    let workdir = workdir.canonicalize()?;
    let mut items = Vec::with_capacity(batch.len());
    for (i, buffer) in batch.iter().enumerate() {
        let id = format!("item{i:06}");
        let path = workdir.join(format!("{id}.wav"));
        save_wav(buffer, &path)?;
        items.push(ManifestItem {
            id,
            path: path.to_string_lossy().into_owned(),
        });
    }
    let manifest = Manifest {
        version: PROTOCOL_VERSION,
        sample_rate,
        labels_requested: labels_requested.to_vec(),
        items,
    };
    let manifest_path = workdir.join("manifest.json");
    let result_path = workdir.join("result.json");
    let _ = fs::remove_file(&result_path);
    fs::write(&manifest_path, serde_json::to_string(&manifest)?).map_err(|source| {
        Error::Unwritable {
            path: manifest_path.clone(),
            source,
        }
    })?;

    let child = Command::new(program)
        .args(&args)
        .arg(&manifest_path)
        .arg(&result_path)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|source| ExternalError::Spawn {
            command: command.to_string(),
            source,
        })?;
    let (status, diagnostics) = wait_with_timeout(child, timeout)?;
    let status = match status {
        Some(s) => s,
        None => {
            return Err(ExternalError::Timeout {
                seconds: timeout.as_secs_f64(),
                diagnostics,
            }
            .into())
        }
    };
    if !status.success() {
        return Err(ExternalError::NonZeroExit {
            status: status.to_string(),
            diagnostics,
        }
        .into());
    }

    let malformed = |message: String| -> Error {
        ExternalError::MalformedResult {
            message,
            diagnostics: diagnostics.clone(),
        }
        .into()
    };
    let text = fs::read_to_string(&result_path)
        .map_err(|e| malformed(format!("cannot read {}: {e}", result_path.display())))?;
    let result: PredictorResult =
        serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    if result.version != PROTOCOL_VERSION {
        return Err(malformed(format!("unsupported version {}", result.version)));
    }
    let mut by_id: HashMap<&str, &ResultItem> = HashMap::new();
    for item in &result.items {
        if item.labels.len() != item.probs.len() {
            return Err(malformed(format!(
                "item {:?} has {} labels but {} probs",
                item.id,
                item.labels.len(),
                item.probs.len()
            )));
        }
        if item.probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(malformed(format!(
                "item {:?} has a probability outside [0, 1]",
                item.id
            )));
        }
        if by_id.insert(item.id.as_str(), item).is_some() {
            return Err(malformed(format!("duplicate id {:?}", item.id)));
        }
    }
    let predictions = manifest
        .items
        .iter()
        .map(|m| {
            by_id
                .get(m.id.as_str())
                .map(|r| Prediction {
                    labels: r.labels.clone(),
                    probabilities: r.probs.clone(),
                })
                .ok_or_else(|| {
                    Error::from(ExternalError::MissingId {
                        id: m.id.clone(),
                        diagnostics: diagnostics.clone(),
                    })
                })
        })
        .collect::<Result<Vec<_>>>()?;

    for m in &manifest.items {
        let _ = fs::remove_file(&m.path);
    }
    Ok(predictions)
}

/// Waits for the child, killing it once `timeout` elapses. Returns `None`
/// as the status on timeout, plus everything the child wrote.
fn wait_with_timeout(
    mut child: Child,
    timeout: Duration,
) -> Result<(Option<std::process::ExitStatus>, String)> {
    let drain = |pipe: Option<Box<dyn Read + Send>>| {
        thread::spawn(move || {
            let mut buf = Vec::new();
            if let Some(mut p) = pipe {
                let _ = p.read_to_end(&mut buf);
            }
            buf
        })
    };
    let out = drain(child.stdout.take().map(|p| Box::new(p) as Box<dyn Read + Send>));
    let err = drain(child.stderr.take().map(|p| Box::new(p) as Box<dyn Read + Send>));

    let deadline = Instant::now() + timeout;
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break Some(status);
        }
        if Instant::now() >= deadline {
            let _ = child.kill();
            let _ = child.wait();
            break None;
        }
        thread::sleep(POLL_INTERVAL);
    };
    let mut text = String::from_utf8_lossy(&err.join().unwrap_or_default()).into_owned();
    let stdout = out.join().unwrap_or_default();
    if !stdout.is_empty() {
        if !text.is_empty() && !text.ends_with('\n') {
            text.push('\n');
        }
        text.push_str(&String::from_utf8_lossy(&stdout));
    }
    if text.len() > MAX_DIAGNOSTICS {
        let mut cut = text.len() - MAX_DIAGNOSTICS;
        while !text.is_char_boundary(cut) {
            cut += 1;
        }
        text = text[cut..].to_string();
    }
    Ok((status, text))
}

/// [`Predictor`] backed by an external command. Invocations are serialized;
/// each one gets a fresh numbered subdirectory of the workdir.
#[derive(Debug)]
pub struct ExternalPredictor {
    command: String,
    workdir: PathBuf,
    timeout: Duration,
    labels_requested: Vec<String>,
    calls: Mutex<u64>,
}

impl ExternalPredictor {
    pub fn new(
        command: impl Into<String>,
        workdir: impl Into<PathBuf>,
        timeout: Duration,
        labels_requested: Vec<String>,
    ) -> Self {
        Self {
            command: command.into(),
            workdir: workdir.into(),
            timeout,
            labels_requested,
            calls: Mutex::new(0),
        }
    }

    pub fn command(&self) -> &str {
        &self.command
    }
}

impl Predictor for ExternalPredictor {
    fn labels(&self) -> Vec<String> {
        self.labels_requested.clone()
    }

    fn predict(&self, batch: &[AudioBuffer]) -> Result<Vec<Prediction>> {
        let mut calls = self.calls.lock().unwrap_or_else(|e| e.into_inner());
        let dir = self.workdir.join(format!("call{:06}", *calls));
        *calls += 1;
        let out = external_predict(&self.command, batch, &dir, self.timeout, &self.labels_requested)?;
        let _ = fs::remove_dir_all(&dir);
        Ok(out)
    }
}
