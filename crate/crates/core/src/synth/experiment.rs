use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_confounded_dataset, derive_seed, Example, SynthSpec, CONFOUNDER_STEM};
use crate::analyze::{
    aggregate_top_components, confounder_rate, explain_predicted, sanity_check, GlobalSummary,
    Outcome, SanityConfig, SanityReport, Selection,
};
use crate::decompose::{hpss_decompose, Decomposition, DEFAULT_KERNEL};
use crate::error::{Error, Result, ResultExt};
use crate::explain::ExplainConfig;
use crate::predict::{
    randomize, train_builtin, FeatureConfig, LabeledAudio, LinearClassifier, Predictor,
    TrainConfig, TrainingReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DecomposerChoice {
    /// Ground-truth stems.
    Oracle,
    Hpss {
        harmonic_kernel: usize,
        percussive_kernel: usize,
    },
}

impl DecomposerChoice {
    pub fn hpss() -> Self {
        DecomposerChoice::Hpss {
            harmonic_kernel: DEFAULT_KERNEL,
            percussive_kernel: DEFAULT_KERNEL,
        }
    }

    pub fn name(&self) -> String {
        match self {
            DecomposerChoice::Oracle => "oracle".into(),
            DecomposerChoice::Hpss { .. } => "hpss".into(),
        }
    }

    /// Component that carries the confounder under this decomposer.
    pub fn confounder_component(&self) -> &'static str {
        match self {
            DecomposerChoice::Oracle => CONFOUNDER_STEM,
            DecomposerChoice::Hpss { .. } => "percussive",
        }
    }

    fn digest_name(&self) -> String {
        match self {
            DecomposerChoice::Oracle => "oracle".into(),
            DecomposerChoice::Hpss {
                harmonic_kernel,
                percussive_kernel,
            } => format!("hpss(h={harmonic_kernel},p={percussive_kernel})"),
        }
    }
}

pub fn snippet_decompositions(
    examples: &[Example],
    choice: DecomposerChoice,
) -> Result<Vec<Decomposition>> {
    examples
        .par_iter()
        .map(|e| {
            match choice {
                DecomposerChoice::Oracle => e.decompose(),
                DecomposerChoice::Hpss {
                    harmonic_kernel,
                    percussive_kernel,
                } => hpss_decompose(&e.mix, harmonic_kernel, percussive_kernel),
            }
            .with_context(|| format!("decompose {}", e.id))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub spec: SynthSpec,
    pub train: TrainConfig,
    pub explain: ExplainConfig,
    pub n_runs: usize,
    pub decomposers: Vec<DecomposerChoice>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            spec: SynthSpec::default(),
            train: TrainConfig::default(),
            explain: ExplainConfig::default(),
            n_runs: 10,
            decomposers: vec![DecomposerChoice::Oracle],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Some(Self { mean, sd, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposerRun {
    pub decomposer: String,
    pub confounder_component: String,
    /// Share of swapped-test snippets predicted as the confounded class
    /// whose top component is the confounder. `None` when the model never
    /// predicts that class.
    pub confounder_rate: Option<f64>,
    /// Share over all swapped-test snippets.
    pub overall_confounder_rate: f64,
    pub n_predicted_confounded_class: usize,
    pub summary: GlobalSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run: usize,
    pub seed: u64,
    pub acc_matched: f64,
    pub acc_swapped: f64,
    pub training: TrainingReport,
    pub decomposers: Vec<DecomposerRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub runs: Vec<RunReport>,
    pub acc_matched: MeanSd,
    pub acc_swapped: MeanSd,
    /// Per decomposer, over runs that predicted the confounded class.
    pub confounder_rate: BTreeMap<String, Option<MeanSd>>,
    pub overall_confounder_rate: BTreeMap<String, MeanSd>,
}

impl ExperimentReport {
    /// One row per run: run, seed, accuracies, then the confounder rate of
    /// each decomposer in configuration order.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|source| Error::Unwritable {
            path: path.to_path_buf(),
            source,
        })?;
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(file);
        let names: Vec<String> = self.config.decomposers.iter().map(|d| d.name()).collect();
        let mut header = vec!["run".to_string(), "seed".into(), "acc_matched".into(), "acc_swapped".into()];
        header.extend(names.iter().map(|n| format!("confounder_rate_{n}")));
        w.write_record(&header)?;
        for r in &self.runs {
            let mut rec = vec![
                r.run.to_string(),
                r.seed.to_string(),
                r.acc_matched.to_string(),
                r.acc_swapped.to_string(),
            ];
            rec.extend(
                r.decomposers
                    .iter()
                    .map(|d| d.confounder_rate.map_or(String::new(), |v| v.to_string())),
            );
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Accuracy and confounder-rate table, means ± SD over runs.
    pub fn summary_table(&self) -> String {
        let pct = |m: &MeanSd| format!("{:6.2} ± {:5.2}", 100.0 * m.mean, 100.0 * m.sd);
        let mut out = format!("runs: {}\n", self.runs.len());
        out += &format!("accuracy, matched test (%):  {}\n", pct(&self.acc_matched));
        out += &format!("accuracy, swapped test (%):  {}\n", pct(&self.acc_swapped));
        for d in &self.config.decomposers {
            let name = d.name();
            let rate = match self.confounder_rate.get(&name).copied().flatten() {
                Some(m) => pct(&m),
                None => "n/a".into(),
            };
            out += &format!(
                "confounder top rate, {name} (%): {rate}  [{} when predicting {}]\n",
                d.confounder_component(),
                self.config.spec.class_a.label
            );
        }
        out
    }
}

/// Seed of run `run` derived from the spec seed.
pub fn run_seed(base: u64, run: usize) -> u64 {
    derive_seed(base, "run", run as u64)
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

fn accuracy(model: &LinearClassifier, examples: &[Example]) -> Result<f64> {
    let mixes: Vec<_> = examples.iter().map(|e| e.mix.clone()).collect();
    let predictions = model.predict(&mixes)?;
    let hits = predictions
        .iter()
        .zip(examples)
        .filter(|(p, e)| p.top_label() == Some(e.label.as_str()))
        .count();
    Ok(hits as f64 / examples.len() as f64)
}

/// Builds the run's dataset and trains its classifier.
fn train_run(
    spec: &SynthSpec,
    train: &TrainConfig,
    run: usize,
) -> Result<(super::ConfoundedDataset, LinearClassifier, TrainingReport, u64)> {
    let seed = run_seed(spec.seed, run);
    let run_spec = SynthSpec {
        seed,
        ..spec.clone()
    };
    let ds = build_confounded_dataset(&run_spec).context("synthesize")?;
    let train_cfg = TrainConfig {
        seed: derive_seed(seed, "sgd", 0),
        ..*train
    };
    let (model, report) = train_builtin(
        &labeled(&ds.train),
        &labeled(&ds.valid),
        &train_cfg,
        FeatureConfig::default(),
    )
    .context("train")?;
    Ok((ds, model, report, seed))
}

fn run_once(config: &ExperimentConfig, run: usize) -> Result<RunReport> {
    let (ds, model, training, seed) = train_run(&config.spec, &config.train, run)?;
    let acc_matched = accuracy(&model, &ds.test_matched).context("evaluate")?;
    let acc_swapped = accuracy(&model, &ds.test_swapped).context("evaluate")?;
    let class_a = &config.spec.class_a.label;
    let class_b = &config.spec.class_b.label;

    let decomposers = config
        .decomposers
        .iter()
        .map(|choice| {
            let snippets = snippet_decompositions(&ds.test_swapped, *choice)?;
            let sanity_cfg = SanityConfig {
                explain: config.explain,
                decomposer: choice.digest_name(),
                confounder_component: Some(choice.confounder_component().into()),
                confounder_class: Some(class_a.clone()),
            };
            let explained = explain_predicted(&model, &snippets, &sanity_cfg)
                .with_context(|| format!("explain ({})", choice.name()))?;
            let selections: Vec<Selection> = explained
                .iter()
                .enumerate()
                .map(|(i, (label, e))| Selection {
                    snippet: i,
                    predicted: label.clone(),
                    top: e.top_component().label(&e.component_labels).to_string(),
                })
                .collect();
            let component = choice.confounder_component();
            let outcomes: Vec<Outcome> = explained
                .iter()
                .zip(&ds.test_swapped)
                .map(|((label, _), e)| Outcome::binary(label == class_b, &e.label == class_b))
                .collect();
            let explanations: Vec<_> = explained.into_iter().map(|(_, e)| e).collect();
            Ok(DecomposerRun {
                decomposer: choice.name(),
                confounder_component: component.into(),
                confounder_rate: confounder_rate(&selections, class_a, component),
                overall_confounder_rate: selections.iter().filter(|s| s.top == component).count()
                    as f64
                    / selections.len() as f64,
                n_predicted_confounded_class: selections
                    .iter()
                    .filter(|s| &s.predicted == class_a)
                    .count(),
                summary: aggregate_top_components(&explanations, &outcomes)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunReport {
        run,
        seed,
        acc_matched,
        acc_swapped,
        training,
        decomposers,
    })
}

/// Repeats synthesize → train → evaluate → explain for `n_runs` seeded
/// runs and summarizes them as means ± SD.
pub fn run_confounder_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    if config.n_runs == 0 {
        return Err(Error::InvalidArgument("n_runs must be at least 1".into()));
    }
    if config.decomposers.is_empty() {
        return Err(Error::InvalidArgument("no decomposer selected".into()));
    }
    config.spec.validate()?;
    let runs = (0..config.n_runs)
        .into_par_iter()
        .map(|r| run_once(config, r).with_context(|| format!("run {r}")))
        .collect::<Result<Vec<_>>>()?;

    let collect = |f: &dyn Fn(&RunReport) -> f64| MeanSd::of(&runs.iter().map(f).collect::<Vec<_>>());
    let acc_matched = collect(&|r| r.acc_matched).expect("at least one run");
    let acc_swapped = collect(&|r| r.acc_swapped).expect("at least one run");
    let mut confounder = BTreeMap::new();
    let mut overall = BTreeMap::new();
    for (i, d) in config.decomposers.iter().enumerate() {
        let rates: Vec<f64> = runs.iter().filter_map(|r| r.decomposers[i].confounder_rate).collect();
        confounder.insert(d.name(), MeanSd::of(&rates));
        overall.insert(
            d.name(),
            collect(&|r| r.decomposers[i].overall_confounder_rate).expect("at least one run"),
        );
    }
    Ok(ExperimentReport {
        config: config.clone(),
        runs,
        acc_matched,
        acc_swapped,
        confounder_rate: confounder,
        overall_confounder_rate: overall,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanityExperimentConfig {
    pub spec: SynthSpec,
    pub train: TrainConfig,
    pub explain: ExplainConfig,
    pub model_seeds: Vec<u64>,
    pub decomposer: DecomposerChoice,
}

impl Default for SanityExperimentConfig {
    fn default() -> Self {
        Self {
            spec: SynthSpec::default(),
            train: TrainConfig::default(),
            explain: ExplainConfig::default(),
            model_seeds: (0..10).collect(),
            decomposer: DecomposerChoice::Oracle,
        }
    }
}

/// Parameter randomization test on the swapped test split. The trained
/// reference is the first run of the confounder experiment with the same
/// spec; random models share its feature standardization.
pub fn run_sanity_experiment(config: &SanityExperimentConfig) -> Result<SanityReport> {
    let (ds, reference, _, _) = train_run(&config.spec, &config.train, 0)?;
    let snippets = snippet_decompositions(&ds.test_swapped, config.decomposer)?;
    let sanity_cfg = SanityConfig {
        explain: config.explain,
        decomposer: config.decomposer.digest_name(),
        confounder_component: Some(config.decomposer.confounder_component().into()),
        confounder_class: Some(config.spec.class_a.label.clone()),
    };
    let factory = |seed: u64| -> Result<Box<dyn Predictor>> { Ok(Box::new(randomize(&reference, seed))) };
    sanity_check(
        factory,
        &config.model_seeds,
        &snippets,
        Some(&reference as &dyn Predictor),
        &sanity_cfg,
    )
}
