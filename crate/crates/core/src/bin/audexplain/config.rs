use std::fs;
use std::path::{Path, PathBuf};

use audexplain::explain::{ExplainConfig, KernelChoice};
use audexplain::predict::TrainConfig;
use audexplain::synth::SynthSpec;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const SEED_ENV: &str = "AUDEXPLAIN_SEED";
pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DecomposerKind {
    /// Ground-truth stems stored beside each `mix.wav` input.
    Oracle,
    /// Harmonic/percussive separation of the mix.
    Hpss,
    /// Each input is a directory holding `mix.wav` and one WAV per stem.
    StemsDir,
}

/// Every parameter of every subcommand. Subcommands ignore the fields
/// they do not use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub inputs: Vec<PathBuf>,
    pub jobs: Option<usize>,
    /// `builtin:<model file>` or `external:<command>`.
    pub predictor: Option<String>,
    /// Labels requested from an external predictor.
    pub labels: Vec<String>,
    pub timeout_secs: f64,
    /// Unset means hpss for `explain`/`batch-explain` and oracle for the
    /// synthetic experiments.
    pub decomposer: Option<DecomposerKind>,
    pub hpss_harmonic_kernel: usize,
    pub hpss_percussive_kernel: usize,
    pub tau: usize,
    /// Expected number of sources per decomposition.
    pub sources: Option<usize>,
    /// Explained label; the predicted label when unset.
    pub target: Option<String>,
    pub render_top: usize,
    pub snippet_seconds: f64,
    pub runs: usize,
    pub models: usize,
    /// Dataset directory for `train-builtin`.
    pub dataset: Option<PathBuf>,
    pub explain: ExplainConfig,
    pub train: TrainConfig,
    pub synth: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            inputs: Vec::new(),
            jobs: None,
            predictor: None,
            labels: Vec::new(),
            timeout_secs: 600.0,
            decomposer: None,
            hpss_harmonic_kernel: audexplain::decompose::DEFAULT_KERNEL,
            hpss_percussive_kernel: audexplain::decompose::DEFAULT_KERNEL,
            tau: 1,
            sources: None,
            target: None,
            render_top: 3,
            snippet_seconds: 3.0,
            runs: 10,
            models: 10,
            dataset: None,
            explain: ExplainConfig::default(),
            train: TrainConfig::default(),
            synth: SynthSpec::default(),
        }
    }
}

/// Command-line overrides; `None` leaves the lower layers untouched.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
    pub jobs: Option<usize>,
    pub predictor: Option<String>,
    pub labels: Option<Vec<String>>,
    pub timeout_secs: Option<f64>,
    pub decomposer: Option<DecomposerKind>,
    pub tau: Option<usize>,
    pub sources: Option<usize>,
    pub target: Option<String>,
    pub render_top: Option<usize>,
    pub snippet_seconds: Option<f64>,
    pub n_max: Option<usize>,
    pub kernel: Option<String>,
    pub kernel_width: Option<f64>,
    pub ridge_lambda: Option<f64>,
    pub include_residual: bool,
    pub runs: Option<usize>,
    pub models: Option<usize>,
    pub dataset: Option<PathBuf>,
}

pub fn parse_config_text(text: &str, path: &Path) -> Result<Value, String> {
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    if is_toml {
        let table: toml::Table = toml::from_str(text).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::to_value(table).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

fn merge(base: &mut Value, layer: Value) {
    match (base, layer) {
        (Value::Object(b), Value::Object(l)) => {
            for (k, v) in l {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, l) => *b = l,
    }
}

/// Layers defaults, the seed environment variable, the config file and
/// the flags, in increasing precedence.
pub fn resolve(
    config_file: Option<&Path>,
    env_seed: Option<&str>,
    flags: &Overrides,
) -> Result<RunConfig, String> {
    let mut value = serde_json::to_value(RunConfig::default()).map_err(|e| e.to_string())?;
    if let Some(raw) = env_seed {
        let seed: u64 = raw
            .trim()
            .parse()
            .map_err(|_| format!("{SEED_ENV}={raw:?} is not an unsigned integer"))?;
        merge(&mut value, serde_json::json!({ "seed": seed }));
    }
    if let Some(path) = config_file {
        let text = fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        merge(&mut value, parse_config_text(&text, path)?);
    }
    let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| format!("invalid config: {e}"))?;
    apply_flags(&mut cfg, flags)?;
    cfg.explain.seed = cfg.seed;
    cfg.synth.seed = cfg.seed;
    validate(&cfg)?;
    Ok(cfg)
}

fn apply_flags(cfg: &mut RunConfig, f: &Overrides) -> Result<(), String> {
    macro_rules! set {
        ($($field:ident => $target:expr),* $(,)?) => {
            $(if let Some(v) = f.$field.clone() { $target = v; })*
        };
    }
    set!(
        seed => cfg.seed,
        out => cfg.out,
        labels => cfg.labels,
        timeout_secs => cfg.timeout_secs,
        tau => cfg.tau,
        render_top => cfg.render_top,
        snippet_seconds => cfg.snippet_seconds,
        n_max => cfg.explain.n_max,
        ridge_lambda => cfg.explain.ridge_lambda,
        runs => cfg.runs,
        models => cfg.models,
    );
    if !f.inputs.is_empty() {
        cfg.inputs = f.inputs.clone();
    }
    if f.decomposer.is_some() {
        cfg.decomposer = f.decomposer;
    }
    if f.jobs.is_some() {
        cfg.jobs = f.jobs;
    }
    if f.predictor.is_some() {
        cfg.predictor = f.predictor.clone();
    }
    if f.sources.is_some() {
        cfg.sources = f.sources;
    }
    if f.target.is_some() {
        cfg.target = f.target.clone();
    }
    if f.dataset.is_some() {
        cfg.dataset = f.dataset.clone();
    }
    if f.include_residual {
        cfg.explain.include_residual = true;
    }
    if let Some(kind) = &f.kernel {
        cfg.explain.kernel = match kind.as_str() {
            "auto" => KernelChoice::Auto,
            "uniform" => KernelChoice::Uniform,
            "exponential" => KernelChoice::Exponential {
                width: match cfg.explain.kernel {
                    KernelChoice::Exponential { width } => width,
                    _ => audexplain::explain::DEFAULT_KERNEL_WIDTH,
                },
            },
            other => return Err(format!("unknown kernel {other:?} (auto, uniform, exponential)")),
        };
    }
    if let Some(width) = f.kernel_width {
        match &mut cfg.explain.kernel {
            KernelChoice::Exponential { width: w } => *w = width,
            _ => return Err("--kernel-width requires the exponential kernel".into()),
        }
    }
    Ok(())
}

fn validate(cfg: &RunConfig) -> Result<(), String> {
    if cfg.tau == 0 {
        return Err("tau must be at least 1".into());
    }
    if cfg.sources == Some(0) {
        return Err("sources must be at least 1".into());
    }
    if cfg.jobs == Some(0) {
        return Err("jobs must be at least 1".into());
    }
    if cfg.explain.n_max == 0 {
        return Err("n_max must be at least 1".into());
    }
    if !cfg.explain.ridge_lambda.is_finite() || cfg.explain.ridge_lambda < 0.0 {
        return Err("ridge lambda must be non-negative".into());
    }
    if let KernelChoice::Exponential { width } = cfg.explain.kernel {
        if !width.is_finite() || width <= 0.0 {
            return Err("kernel width must be positive".into());
        }
    }
    if !cfg.timeout_secs.is_finite() || cfg.timeout_secs <= 0.0 {
        return Err("timeout must be positive".into());
    }
    if !cfg.snippet_seconds.is_finite() || cfg.snippet_seconds <= 0.0 {
        return Err("snippet length must be positive".into());
    }
    cfg.synth.validate().map_err(|e| e.to_string())?;
    Ok(())
}

pub fn write_effective(cfg: &RunConfig, dir: &Path) -> Result<(), String> {
    let path = dir.join(EFFECTIVE_CONFIG_FILE);
    let text = serde_json::to_string_pretty(cfg).map_err(|e| e.to_string())?;
    fs::write(&path, text + "\n").map_err(|e| format!("cannot write {}: {e}", path.display()))
}
