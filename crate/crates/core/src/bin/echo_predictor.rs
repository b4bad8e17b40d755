//! Test double for the external predictor protocol.
//!
//! Usage: `audexplain-echo-predictor [--mode MODE] <manifest> <result>`
//!
//! Modes: `ok` scores 0.5 for every requested label; `rms` scores each label
//! with `min(1, 2·rms)` of the item; `fail` exits with status 3; `malformed`
//! writes an unparsable result; `missing` drops the last item; `sleep`
//! hangs for a minute.

use std::process::ExitCode;
use std::time::Duration;

use audexplain::predict::{Manifest, PredictorResult, ResultItem, PROTOCOL_VERSION};
use audexplain::signal::load_wav;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (mode, paths) = match args.as_slice() {
        [flag, mode, rest @ ..] if flag == "--mode" => (mode.as_str(), rest),
        rest => ("ok", rest),
    };
    let [manifest_path, result_path] = paths else {
        eprintln!("usage: audexplain-echo-predictor [--mode MODE] <manifest> <result>");
        return ExitCode::from(2);
    };

    match mode {
        "fail" => {
            eprintln!("echo predictor: deliberate failure");
            return ExitCode::from(3);
        }
        "sleep" => {
            std::thread::sleep(Duration::from_secs(60));
            return ExitCode::SUCCESS;
        }
        "malformed" => {
            std::fs::write(result_path, "{\"version\": 1, \"items\": [").unwrap();
            return ExitCode::SUCCESS;
        }
        _ => {}
    }

    let manifest: Manifest = match std::fs::read_to_string(manifest_path)
        .map_err(|e| e.to_string())
        .and_then(|t| serde_json::from_str(&t).map_err(|e| e.to_string()))
    {
        Ok(m) => m,
        Err(e) => {
            eprintln!("echo predictor: bad manifest: {e}");
            return ExitCode::from(4);
        }
    };
    let labels = if manifest.labels_requested.is_empty() {
        vec!["echo".to_string()]
    } else {
        manifest.labels_requested.clone()
    };
    let mut items = Vec::new();
    for item in &manifest.items {
        let score = match mode {
            "rms" => match load_wav(&item.path) {
                Ok(b) => (2.0 * b.rms()).min(1.0),
                Err(e) => {
                    eprintln!("echo predictor: {e}");
                    return ExitCode::from(5);
                }
            },
            _ => 0.5,
        };
        items.push(ResultItem {
            id: item.id.clone(),
            labels: labels.clone(),
            probs: vec![score; labels.len()],
        });
    }
    if mode == "missing" {
        items.pop();
    }
    let result = PredictorResult {
        version: PROTOCOL_VERSION,
        items,
    };
    std::fs::write(result_path, serde_json::to_string(&result).unwrap()).unwrap();
    ExitCode::SUCCESS
}
