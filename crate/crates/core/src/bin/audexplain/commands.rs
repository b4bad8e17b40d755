use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use audexplain::analyze::{export_coefficients, export_faithfulness};
use audexplain::decompose::{
    hpss_decompose, load_stem_dir, oracle_decompose, segment_time, Decomposition, MIX_FILE,
};
use audexplain::explain::{explain_decomposition, render_explanation, Explanation};
use audexplain::predict::{
    train_builtin, ExternalPredictor, FeatureConfig, LabeledAudio, LinearClassifier, Predictor,
    TrainingReport,
};
use audexplain::signal::{load_wav, resample, save_wav, AudioBuffer, DEFAULT_SAMPLE_RATE};
use audexplain::synth::{
    build_confounded_dataset, derive_seed, read_dataset, run_confounder_experiment,
    run_sanity_experiment, write_dataset, DecomposerChoice, Example, ExperimentConfig,
    SanityExperimentConfig,
};
use audexplain::Error;
use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{write_effective, DecomposerKind, RunConfig};

pub const EXPERIMENT_REPORT: &str = "experiment_report.json";
pub const EXPERIMENT_CSV: &str = "experiment_runs.csv";
pub const SANITY_REPORT: &str = "sanity_report.json";
pub const MODEL_FILE: &str = "model.json";
pub const TRAINING_REPORT: &str = "training_report.json";
pub const BATCH_EXPLANATIONS: &str = "explanations.json";
pub const COEFFICIENTS_CSV: &str = "coefficients.csv";
pub const FAITHFULNESS_CSV: &str = "faithfulness.csv";
const PREDICTOR_WORKDIR: &str = "predictor-work";

#[derive(Debug)]
pub enum Failure {
    /// Bad flags, config or missing inputs named by the config: exit 2.
    Config(String),
    /// Anything that fails while running: exit 1.
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Runtime(m) => m,
        }
    }
}

fn stage(name: &'static str) -> impl Fn(Error) -> Failure {
    move |e| Failure::Runtime(format!("[{name}] {e}"))
}

fn prepare_out(cfg: &RunConfig) -> Result<(), Failure> {
    fs::create_dir_all(&cfg.out)
        .map_err(|e| Failure::Runtime(format!("[output] cannot create {}: {e}", cfg.out.display())))?;
    write_effective(cfg, &cfg.out).map_err(Failure::Runtime)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(format!("[output] {e}")))?;
    fs::write(path, text + "\n").map_err(|e| Failure::Runtime(format!("[output] cannot write {}: {e}", path.display())))
}

struct PredictorHandle {
    predictor: Box<dyn Predictor>,
    workdir: Option<PathBuf>,
}

impl Drop for PredictorHandle {
    fn drop(&mut self) {
        if let Some(dir) = &self.workdir {
            // Only removed when the adapter left nothing behind.
            let _ = fs::remove_dir(dir);
        }
    }
}

fn build_predictor(cfg: &RunConfig) -> Result<PredictorHandle, Failure> {
    let spec = cfg.predictor.as_deref().ok_or_else(|| {
        Failure::Config("a predictor is required: --predictor builtin:<model file> or external:<command>".into())
    })?;
    if let Some(path) = spec.strip_prefix("builtin:") {
        let path = Path::new(path);
        if !path.is_file() {
            return Err(Failure::Config(format!("model file not found: {}", path.display())));
        }
        let model = LinearClassifier::load(path)
            .map_err(|e| Failure::Config(format!("cannot load model {}: {e}", path.display())))?;
        Ok(PredictorHandle {
            predictor: Box::new(model),
            workdir: None,
        })
    } else if let Some(command) = spec.strip_prefix("external:") {
        if command.trim().is_empty() {
            return Err(Failure::Config("external predictor command is empty".into()));
        }
        let labels = if !cfg.labels.is_empty() {
            cfg.labels.clone()
        } else if let Some(target) = &cfg.target {
            vec![target.clone()]
        } else {
            return Err(Failure::Config(
                "an external predictor needs --labels or --target".into(),
            ));
        };
        let workdir = cfg.out.join(PREDICTOR_WORKDIR);
        fs::create_dir_all(&workdir)
            .map_err(|e| Failure::Runtime(format!("[predict] cannot create {}: {e}", workdir.display())))?;
        Ok(PredictorHandle {
            predictor: Box::new(ExternalPredictor::new(
                command,
                &workdir,
                Duration::from_secs_f64(cfg.timeout_secs),
                labels,
            )),
            workdir: Some(workdir),
        })
    } else {
        Err(Failure::Config(format!(
            "unknown predictor {spec:?}: expected builtin:<model file> or external:<command>"
        )))
    }
}

/// One input file or stem directory, resampled to the model rate.
struct Source {
    mix: AudioBuffer,
    stems: Option<Vec<(String, AudioBuffer)>>,
}

fn to_model_rate(b: AudioBuffer) -> audexplain::Result<AudioBuffer> {
    if b.sample_rate() == DEFAULT_SAMPLE_RATE {
        Ok(b)
    } else {
        resample(&b, DEFAULT_SAMPLE_RATE)
    }
}

fn stem_dir_of(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

/// File stem for plain audio files, otherwise (and for `mix.wav`) the
/// name of the containing stem directory.
fn display_name(path: &Path, kind: DecomposerKind) -> String {
    if kind == DecomposerKind::Hpss && !path.is_dir() {
        if let Some(stem) = path.file_stem().filter(|s| *s != "mix") {
            return stem.to_string_lossy().into_owned();
        }
    }
    stem_dir_of(path)
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "input".into())
}

fn load_source(path: &Path, kind: DecomposerKind) -> audexplain::Result<Source> {
    match kind {
        DecomposerKind::Hpss => Ok(Source {
            mix: to_model_rate(load_wav(path)?)?,
            stems: None,
        }),
        DecomposerKind::Oracle | DecomposerKind::StemsDir => {
            if kind == DecomposerKind::StemsDir && !path.is_dir() {
                return Err(Error::InvalidArgument(format!(
                    "{} is not a stem directory",
                    path.display()
                )));
            }
            let (mix, oracle) = load_stem_dir(stem_dir_of(path))?;
            let stems = oracle
                .stems
                .into_iter()
                .map(|(l, b)| Ok((l, to_model_rate(b)?)))
                .collect::<audexplain::Result<Vec<_>>>()?;
            Ok(Source {
                mix: to_model_rate(mix)?,
                stems: Some(stems),
            })
        }
    }
}

fn decomposer_kind(cfg: &RunConfig) -> DecomposerKind {
    cfg.decomposer.unwrap_or(DecomposerKind::Hpss)
}

fn decomposer_name(cfg: &RunConfig) -> String {
    let inner = match decomposer_kind(cfg) {
        DecomposerKind::Hpss => format!(
            "hpss(h={},p={})",
            cfg.hpss_harmonic_kernel, cfg.hpss_percussive_kernel
        ),
        DecomposerKind::Oracle => "oracle".into(),
        DecomposerKind::StemsDir => "stems-dir".into(),
    };
    if cfg.tau > 1 {
        format!("{inner}+tau{}", cfg.tau)
    } else {
        inner
    }
}

fn decompose(
    mix: &AudioBuffer,
    stems: Option<&[(String, AudioBuffer)]>,
    cfg: &RunConfig,
) -> audexplain::Result<Decomposition> {
    let d = match stems {
        Some(s) => oracle_decompose(mix, s)?,
        None => hpss_decompose(mix, cfg.hpss_harmonic_kernel, cfg.hpss_percussive_kernel)?,
    };
    if let Some(expected) = cfg.sources {
        let found = d.source_labels().len();
        if found != expected {
            return Err(Error::InvalidArgument(format!(
                "decomposer produced {found} sources ({}), expected {expected}",
                d.source_labels().join(", ")
            )));
        }
    }
    segment_time(&d, cfg.tau)
}

fn choose_target(cfg: &RunConfig, predictor: &dyn Predictor, mix: &AudioBuffer) -> audexplain::Result<String> {
    if let Some(t) = &cfg.target {
        return Ok(t.clone());
    }
    let p = predictor.predict(std::slice::from_ref(mix))?;
    p[0].top_label()
        .map(str::to_string)
        .ok_or_else(|| Error::InvalidArgument("predictor returned no labels".into()))
}

/// Decomposes, picks the target and explains one snippet; errors carry the
/// failing stage.
fn explain_one(
    mix: &AudioBuffer,
    stems: Option<&[(String, AudioBuffer)]>,
    cfg: &RunConfig,
    predictor: &dyn Predictor,
) -> Result<(Decomposition, Explanation), String> {
    let d = decompose(mix, stems, cfg).map_err(|e| format!("[decompose] {e}"))?;
    let target = choose_target(cfg, predictor, mix).map_err(|e| format!("[predict] {e}"))?;
    let e = explain_decomposition(&d, predictor, &target, &cfg.explain, &decomposer_name(cfg))
        .map_err(|e| format!("[explain] {e}"))?;
    Ok((d, e))
}

fn unique_names(sources: &mut [String]) {
    let mut seen = BTreeSet::new();
    for name in sources.iter_mut() {
        let base = name.clone();
        let mut i = 1;
        while !seen.insert(name.clone()) {
            *name = format!("{base}-{i}");
            i += 1;
        }
    }
}

fn require_inputs(cfg: &RunConfig) -> Result<(), Failure> {
    if cfg.inputs.is_empty() {
        return Err(Failure::Config("no input given".into()));
    }
    for p in &cfg.inputs {
        if !p.exists() {
            return Err(Failure::Config(format!("input not found: {}", p.display())));
        }
    }
    Ok(())
}

pub fn cmd_explain(cfg: &RunConfig) -> Result<(), Failure> {
    require_inputs(cfg)?;
    let handle = build_predictor(cfg)?;
    prepare_out(cfg)?;
    let kind = decomposer_kind(cfg);
    let mut names: Vec<String> = cfg.inputs.iter().map(|p| display_name(p, kind)).collect();
    unique_names(&mut names);
    let mut failed = 0;
    for (path, name) in cfg.inputs.iter().zip(&names) {
        let result = load_source(path, kind)
            .map_err(|e| format!("[load] {e}"))
            .and_then(|src| {
                let (d, e) = explain_one(&src.mix, src.stems.as_deref(), cfg, handle.predictor.as_ref())?;
                write_explanation(cfg, name, &d, &e)?;
                Ok(e)
            });
        match result {
            Ok(e) => println!(
                "{name}: target={} score={:.4} top={} faithfulness={:.4}",
                e.target_label,
                e.instance_score,
                e.top_component().label(&e.component_labels),
                e.faithfulness_r
            ),
            Err(msg) => {
                failed += 1;
                eprintln!("error: {}: {msg}", path.display());
            }
        }
    }
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} of {} inputs failed", cfg.inputs.len())));
    }
    Ok(())
}

fn write_explanation(cfg: &RunConfig, name: &str, d: &Decomposition, e: &Explanation) -> Result<(), String> {
    let json = cfg.out.join(format!("{name}.explanation.json"));
    let text = e.to_json().map_err(|e| format!("[output] {e}"))?;
    fs::write(&json, text + "\n").map_err(|err| format!("[output] cannot write {}: {err}", json.display()))?;
    let k = cfg.render_top.min(d.d_prime());
    if k > 0 {
        match render_explanation(d, e, k) {
            Ok(audio) => {
                let wav = cfg.out.join(format!("{name}.top{k}.wav"));
                save_wav(&audio, &wav).map_err(|e| format!("[render] {e}"))?;
            }
            Err(Error::NoPositiveCoefficients) => {
                warn!("{name}: no component supports {:?}; nothing rendered", e.target_label)
            }
            Err(err) => return Err(format!("[render] {err}")),
        }
    }
    Ok(())
}

/// Expands directory inputs: WAV files for hpss, stem directories
/// (directories holding `mix.wav`) otherwise.
fn expand_inputs(inputs: &[PathBuf], kind: DecomposerKind) -> Result<Vec<PathBuf>, Failure> {
    let mut out = Vec::new();
    for p in inputs {
        let is_stem_dir = p.is_dir() && p.join(MIX_FILE).is_file();
        if !p.is_dir() || (kind != DecomposerKind::Hpss && is_stem_dir) {
            out.push(p.clone());
            continue;
        }
        let mut entries: Vec<PathBuf> = fs::read_dir(p)
            .map_err(|e| Failure::Runtime(format!("[load] cannot list {}: {e}", p.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter_map(|e| match kind {
                DecomposerKind::Hpss if e.is_dir() => {
                    let mix = e.join(MIX_FILE);
                    mix.is_file().then_some(mix)
                }
                DecomposerKind::Hpss => e
                    .extension()
                    .is_some_and(|x| x.eq_ignore_ascii_case("wav"))
                    .then_some(e),
                _ => (e.is_dir() && e.join(MIX_FILE).is_file()).then_some(e),
            })
            .collect();
        entries.sort();
        out.extend(entries);
    }
    Ok(out)
}

#[derive(Serialize)]
struct BatchEntry<'a> {
    id: &'a str,
    source: String,
    snippet: usize,
    explanation: &'a Explanation,
}

pub fn cmd_batch_explain(cfg: &RunConfig) -> Result<(), Failure> {
    require_inputs(cfg)?;
    let kind = decomposer_kind(cfg);
    let files = expand_inputs(&cfg.inputs, kind)?;
    if files.is_empty() {
        return Err(Failure::Runtime("no input: no audio found in the given paths".into()));
    }
    let handle = build_predictor(cfg)?;
    prepare_out(cfg)?;
    let mut names: Vec<String> = files.iter().map(|p| display_name(p, kind)).collect();
    unique_names(&mut names);
    let window = (cfg.snippet_seconds * DEFAULT_SAMPLE_RATE as f64).round() as usize;

    let mut rows: Vec<(String, Explanation)> = Vec::new();
    let mut sources = Vec::new();
    let mut failed = 0;
    for (path, name) in files.iter().zip(&names) {
        let result = load_source(path, kind).map_err(|e| format!("[load] {e}")).and_then(|src| {
            let n = src.mix.len() / window;
            if n == 0 {
                return Err(format!(
                    "[snippet] shorter than one {} s snippet",
                    cfg.snippet_seconds
                ));
            }
            (0..n)
                .into_par_iter()
                .map(|k| {
                    let (a, b) = (k * window, (k + 1) * window);
                    let stems: Option<Vec<_>> = src
                        .stems
                        .as_ref()
                        .map(|s| s.iter().map(|(l, x)| (l.clone(), x.slice(a, b))).collect());
                    explain_one(&src.mix.slice(a, b), stems.as_deref(), cfg, handle.predictor.as_ref())
                        .map(|(_, e)| (format!("{name}:{k:04}"), e))
                        .map_err(|m| format!("snippet {k}: {m}"))
                })
                .collect::<Result<Vec<_>, String>>()
        });
        match result {
            Ok(mut r) => {
                println!("{name}: {} snippets explained", r.len());
                sources.extend(std::iter::repeat_n(path.display().to_string(), r.len()));
                rows.append(&mut r);
            }
            Err(msg) => {
                failed += 1;
                warn!("{}: {msg}", path.display());
                eprintln!("error: {}: {msg}", path.display());
            }
        }
    }

    let entries: Vec<BatchEntry> = rows
        .iter()
        .zip(&sources)
        .map(|((id, e), source)| BatchEntry {
            id,
            source: source.clone(),
            snippet: id.rsplit(':').next().and_then(|k| k.parse().ok()).unwrap_or(0),
            explanation: e,
        })
        .collect();
    write_json(&entries, &cfg.out.join(BATCH_EXPLANATIONS))?;
    export_coefficients(&rows, &cfg.out.join(COEFFICIENTS_CSV)).map_err(stage("export"))?;
    export_faithfulness(&rows, &cfg.out.join(FAITHFULNESS_CSV)).map_err(stage("export"))?;
    println!("{} explanations from {} files", rows.len(), files.len() - failed);
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} of {} inputs failed", files.len())));
    }
    Ok(())
}

fn hpss_choice(cfg: &RunConfig) -> DecomposerChoice {
    DecomposerChoice::Hpss {
        harmonic_kernel: cfg.hpss_harmonic_kernel,
        percussive_kernel: cfg.hpss_percussive_kernel,
    }
}

fn synthetic_choice(cfg: &RunConfig) -> Result<DecomposerChoice, Failure> {
    match cfg.decomposer {
        None | Some(DecomposerKind::Oracle) => Ok(DecomposerChoice::Oracle),
        Some(DecomposerKind::Hpss) => Ok(hpss_choice(cfg)),
        Some(DecomposerKind::StemsDir) => Err(Failure::Config(
            "stems-dir does not apply to synthetic experiments; use oracle or hpss".into(),
        )),
    }
}

pub fn cmd_experiment(cfg: &RunConfig) -> Result<(), Failure> {
    if cfg.runs == 0 {
        return Err(Failure::Config("runs must be at least 1".into()));
    }
    let mut decomposers = vec![DecomposerChoice::Oracle];
    if synthetic_choice(cfg)? != DecomposerChoice::Oracle {
        decomposers.push(hpss_choice(cfg));
    }
    prepare_out(cfg)?;
    let config = ExperimentConfig {
        spec: cfg.synth.clone(),
        train: cfg.train,
        explain: cfg.explain,
        n_runs: cfg.runs,
        decomposers,
    };
    let report = run_confounder_experiment(&config).map_err(stage("experiment"))?;
    write_json(&report, &cfg.out.join(EXPERIMENT_REPORT))?;
    report
        .write_csv(&cfg.out.join(EXPERIMENT_CSV))
        .map_err(stage("output"))?;
    print!("{}", report.summary_table());
    Ok(())
}

pub fn cmd_sanity(cfg: &RunConfig) -> Result<(), Failure> {
    if cfg.models < 2 {
        return Err(Failure::Config(format!(
            "the sanity check needs at least 2 models, got {}",
            cfg.models
        )));
    }
    let decomposer = synthetic_choice(cfg)?;
    prepare_out(cfg)?;
    let config = SanityExperimentConfig {
        spec: cfg.synth.clone(),
        train: cfg.train,
        explain: cfg.explain,
        model_seeds: (0..cfg.models as u64).map(|i| derive_seed(cfg.seed, "model", i)).collect(),
        decomposer,
    };
    let report = run_sanity_experiment(&config).map_err(stage("sanity"))?;
    write_json(&report, &cfg.out.join(SANITY_REPORT))?;
    let rate = |r: Option<f64>| r.map_or("n/a".to_string(), |v| format!("{v:.3}"));
    println!("models: {}, snippets: {}", report.per_model.len(), report.n_snippets);
    println!("normalized entropy of top components: {:.3}", report.normalized_entropy);
    println!("none-positive share: {:.3}", report.none_positive_share);
    println!("random models, confounder rate: {}", rate(report.aggregate_confounder_rate));
    if let Some(reference) = &report.trained_reference {
        println!("trained reference, confounder rate: {}", rate(reference.confounder_rate));
    }
    Ok(())
}

pub fn cmd_synth_data(cfg: &RunConfig) -> Result<(), Failure> {
    prepare_out(cfg)?;
    let ds = build_confounded_dataset(&cfg.synth).map_err(stage("synthesize"))?;
    write_dataset(&ds, &cfg.out).map_err(stage("output"))?;
    println!(
        "wrote {} train, {} valid, {} matched test and {} swapped test examples to {}",
        ds.train.len(),
        ds.valid.len(),
        ds.test_matched.len(),
        ds.test_swapped.len(),
        cfg.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    training: TrainingReport,
    acc_matched: Option<f64>,
    acc_swapped: Option<f64>,
}

fn labeled(examples: &[Example]) -> Vec<LabeledAudio> {
    examples
        .iter()
        .map(|e| LabeledAudio {
            audio: e.mix.clone(),
            label: e.label.clone(),
        })
        .collect()
}

fn accuracy(model: &LinearClassifier, examples: &[Example]) -> audexplain::Result<Option<f64>> {
    if examples.is_empty() {
        return Ok(None);
    }
    let mixes: Vec<_> = examples.iter().map(|e| e.mix.clone()).collect();
    let hits = model
        .predict(&mixes)?
        .iter()
        .zip(examples)
        .filter(|(p, e)| p.top_label() == Some(e.label.as_str()))
        .count();
    Ok(Some(hits as f64 / examples.len() as f64))
}

pub fn cmd_train_builtin(cfg: &RunConfig) -> Result<(), Failure> {
    let dir = cfg
        .dataset
        .clone()
        .or_else(|| cfg.inputs.first().cloned())
        .ok_or_else(|| Failure::Config("a dataset directory is required (--dataset)".into()))?;
    if !dir.is_dir() {
        return Err(Failure::Config(format!("dataset directory not found: {}", dir.display())));
    }
    let ds = read_dataset(&dir).map_err(stage("load"))?;
    prepare_out(cfg)?;
    let train_cfg = audexplain::predict::TrainConfig {
        seed: cfg.seed,
        ..cfg.train
    };
    let (model, training) = train_builtin(
        &labeled(&ds.train),
        &labeled(&ds.valid),
        &train_cfg,
        FeatureConfig::default(),
    )
    .map_err(stage("train"))?;
    model.save(&cfg.out.join(MODEL_FILE)).map_err(stage("output"))?;
    let summary = TrainSummary {
        acc_matched: accuracy(&model, &ds.test_matched).map_err(stage("evaluate"))?,
        acc_swapped: accuracy(&model, &ds.test_swapped).map_err(stage("evaluate"))?,
        training,
    };
    write_json(&summary, &cfg.out.join(TRAINING_REPORT))?;
    let pct = |a: Option<f64>| a.map_or("n/a".to_string(), |v| format!("{:.2}%", 100.0 * v));
    println!(
        "trained {} epochs (best {}); matched test {}, swapped test {}",
        summary.training.epochs_run,
        summary.training.best_epoch,
        pct(summary.acc_matched),
        pct(summary.acc_swapped)
    );
    Ok(())
}
