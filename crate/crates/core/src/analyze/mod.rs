//! Aggregates over many explanations: top-component histograms per
//! prediction outcome, the parameter randomization check and CSV exports.

mod export;

pub use export::{export_coefficients, export_faithfulness, CoefficientRow, FaithfulnessRow};

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decompose::Decomposition;
use crate::error::{Error, Result, ResultExt};
use crate::explain::{explain_decomposition, ExplainConfig, Explanation, NONE_POSITIVE};
use crate::predict::Predictor;

pub type Histogram = BTreeMap<String, usize>;

/// Prediction outcome used to bin explanations.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    TruePositive,
    FalsePositive,
    TrueNegative,
    FalseNegative,
    /// Free-form bucket, e.g. the predicted tag of a multi-label tagger.
    Bucket(String),
}

impl Outcome {
    pub fn binary(predicted_positive: bool, actually_positive: bool) -> Self {
        match (predicted_positive, actually_positive) {
            (true, true) => Outcome::TruePositive,
            (true, false) => Outcome::FalsePositive,
            (false, false) => Outcome::TrueNegative,
            (false, true) => Outcome::FalseNegative,
        }
    }

    pub fn key(&self) -> String {
        match self {
            Outcome::TruePositive => "TP".into(),
            Outcome::FalsePositive => "FP".into(),
            Outcome::TrueNegative => "TN".into(),
            Outcome::FalseNegative => "FN".into(),
            Outcome::Bucket(b) => b.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GlobalSummary {
    pub component_labels: Vec<String>,
    /// Outcome key → top-component label (or "none-positive") → count.
    pub bins: BTreeMap<String, Histogram>,
    pub totals: BTreeMap<String, usize>,
}

impl GlobalSummary {
    pub fn count(&self, outcome: &str, component: &str) -> usize {
        self.bins
            .get(outcome)
            .and_then(|h| h.get(component))
            .copied()
            .unwrap_or(0)
    }
}

/// Fails unless every explanation uses the same component labels in the
/// same order, so that counts are comparable across examples.
pub fn shared_component_labels<'a, I>(explanations: I) -> Result<Vec<String>>
where
    I: IntoIterator<Item = &'a Explanation>,
{
    let mut labels: Option<&Vec<String>> = None;
    for (i, e) in explanations.into_iter().enumerate() {
        match labels {
            None => labels = Some(&e.component_labels),
            Some(l) if *l != e.component_labels => {
                return Err(Error::ComponentOrdering(format!(
                    "explanation {i} has components {:?}, expected {:?}",
                    e.component_labels, l
                )))
            }
            _ => {}
        }
    }
    Ok(labels.cloned().unwrap_or_default())
}

/// Histogram with every component and "none-positive" present, zeros
/// included.
pub fn empty_histogram(component_labels: &[String]) -> Histogram {
    component_labels
        .iter()
        .map(String::as_str)
        .chain([NONE_POSITIVE])
        .map(|l| (l.to_string(), 0))
        .collect()
}

pub fn aggregate_top_components(
    explanations: &[Explanation],
    outcomes: &[Outcome],
) -> Result<GlobalSummary> {
    if explanations.len() != outcomes.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} explanations but {} outcomes",
            explanations.len(),
            outcomes.len()
        )));
    }
    let component_labels = shared_component_labels(explanations)?;
    let mut summary = GlobalSummary {
        component_labels: component_labels.clone(),
        ..GlobalSummary::default()
    };
    for (e, o) in explanations.iter().zip(outcomes) {
        let key = o.key();
        let bin = summary
            .bins
            .entry(key.clone())
            .or_insert_with(|| empty_histogram(&component_labels));
        *bin.entry(e.top_component().label(&e.component_labels).to_string())
            .or_insert(0) += 1;
        *summary.totals.entry(key).or_insert(0) += 1;
    }
    Ok(summary)
}

/// Shannon entropy of the real-component counts (excluding
/// "none-positive"), divided by `ln(number of components)`. Zero when
/// nothing was selected; 1 for a single component with any selections.
pub fn normalized_entropy(histogram: &Histogram, component_labels: &[String]) -> f64 {
    let counts: Vec<f64> = component_labels
        .iter()
        .map(|l| histogram.get(l).copied().unwrap_or(0) as f64)
        .collect();
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    if counts.len() < 2 {
        return 1.0;
    }
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / total;
            -p * p.ln()
        })
        .sum();
    h / (counts.len() as f64).ln()
}

/// Share of snippets predicted as `class` whose top component is
/// `component`. `None` when no snippet was predicted as `class`.
pub fn confounder_rate(selections: &[Selection], class: &str, component: &str) -> Option<f64> {
    let predicted: Vec<&Selection> = selections.iter().filter(|s| s.predicted == class).collect();
    if predicted.is_empty() {
        return None;
    }
    let hits = predicted.iter().filter(|s| s.top == component).count();
    Some(hits as f64 / predicted.len() as f64)
}

/// One explained snippet: the label the model predicted (and which the
/// explanation targets) and the winning component.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub snippet: usize,
    pub predicted: String,
    pub top: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub seed: Option<u64>,
    pub histogram: Histogram,
    pub predicted_counts: Histogram,
    pub normalized_entropy: f64,
    pub confounder_rate: Option<f64>,
    pub selections: Vec<Selection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanityConfig {
    pub explain: ExplainConfig,
    pub decomposer: String,
    /// Component whose selection rate is tracked, e.g. the confounder stem.
    pub confounder_component: Option<String>,
    /// Class the confounder was correlated with during training.
    pub confounder_class: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanityReport {
    pub component_labels: Vec<String>,
    pub n_snippets: usize,
    pub per_model: Vec<ModelSummary>,
    pub aggregate: Histogram,
    /// Normalized entropy of the aggregate histogram over real components.
    pub normalized_entropy: f64,
    pub none_positive_share: f64,
    pub aggregate_confounder_rate: Option<f64>,
    pub trained_reference: Option<ModelSummary>,
    pub config: SanityConfig,
}

/// Explains every snippet under one model, each with respect to the label
/// the model predicts for it.
pub fn explain_predicted(
    predictor: &dyn Predictor,
    snippets: &[Decomposition],
    config: &SanityConfig,
) -> Result<Vec<(String, Explanation)>> {
    let mixes: Vec<_> = snippets.iter().map(|d| d.mix().clone()).collect();
    let predictions = predictor.predict(&mixes).context("predict")?;
    snippets
        .par_iter()
        .zip(predictions.par_iter())
        .enumerate()
        .map(|(i, (d, p))| {
            let label = p
                .top_label()
                .ok_or_else(|| Error::InvalidArgument("prediction without labels".into()))?
                .to_string();
            let e = explain_decomposition(d, predictor, &label, &config.explain, &config.decomposer)
                .with_context(|| format!("snippet {i}"))?;
            Ok((label, e))
        })
        .collect()
}

fn summarize(
    seed: Option<u64>,
    explained: &[(String, Explanation)],
    component_labels: &[String],
    config: &SanityConfig,
) -> ModelSummary {
    let mut histogram = empty_histogram(component_labels);
    let mut predicted_counts = Histogram::new();
    let selections: Vec<Selection> = explained
        .iter()
        .enumerate()
        .map(|(i, (label, e))| Selection {
            snippet: i,
            predicted: label.clone(),
            top: e.top_component().label(component_labels).to_string(),
        })
        .collect();
    for s in &selections {
        *histogram.entry(s.top.clone()).or_insert(0) += 1;
        *predicted_counts.entry(s.predicted.clone()).or_insert(0) += 1;
    }
    let rate = match (&config.confounder_class, &config.confounder_component) {
        (Some(class), Some(component)) => confounder_rate(&selections, class, component),
        _ => None,
    };
    ModelSummary {
        seed,
        normalized_entropy: normalized_entropy(&histogram, component_labels),
        histogram,
        predicted_counts,
        confounder_rate: rate,
        selections,
    }
}

/// Parameter randomization test: explains every snippet under each model
/// built by `factory(seed)` and, optionally, under a trained reference.
/// Decompositions are computed once by the caller and shared by all models.
pub fn sanity_check<F>(
    factory: F,
    model_seeds: &[u64],
    snippets: &[Decomposition],
    reference: Option<&dyn Predictor>,
    config: &SanityConfig,
) -> Result<SanityReport>
where
    F: Fn(u64) -> Result<Box<dyn Predictor>> + Sync,
{
    if model_seeds.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "sanity check needs at least 2 models, got {}",
            model_seeds.len()
        )));
    }
    if snippets.is_empty() {
        return Err(Error::InvalidArgument("no snippets to analyze".into()));
    }
    let component_labels = snippets[0].component_labels();
    if let Some((i, d)) = snippets
        .iter()
        .enumerate()
        .find(|(_, d)| d.component_labels() != component_labels)
    {
        return Err(Error::ComponentOrdering(format!(
            "snippet {i} has components {:?}, expected {:?}",
            d.component_labels(),
            component_labels
        )));
    }

    let per_model = model_seeds
        .par_iter()
        .enumerate()
        .map(|(m, &seed)| {
            let run = || -> Result<ModelSummary> {
                let model = factory(seed)?;
                let explained = explain_predicted(model.as_ref(), snippets, config)?;
                Ok(summarize(Some(seed), &explained, &component_labels, config))
            };
            run().with_context(|| format!("model {m} (seed {seed})"))
        })
        .collect::<Result<Vec<_>>>()?;

    let trained_reference = reference
        .map(|p| {
            explain_predicted(p, snippets, config)
                .map(|e| summarize(None, &e, &component_labels, config))
                .context("trained reference")
        })
        .transpose()?;

    let mut aggregate = empty_histogram(&component_labels);
    for m in &per_model {
        for (k, v) in &m.histogram {
            *aggregate.entry(k.clone()).or_insert(0) += v;
        }
    }
    let total: usize = aggregate.values().sum();
    let all_selections: Vec<Selection> = per_model.iter().flat_map(|m| m.selections.clone()).collect();
    let aggregate_confounder_rate = match (&config.confounder_class, &config.confounder_component) {
        (Some(class), Some(component)) => confounder_rate(&all_selections, class, component),
        _ => None,
    };
    Ok(SanityReport {
        n_snippets: snippets.len(),
        normalized_entropy: normalized_entropy(&aggregate, &component_labels),
        none_positive_share: aggregate[NONE_POSITIVE] as f64 / total as f64,
        aggregate,
        aggregate_confounder_rate,
        per_model,
        trained_reference,
        component_labels,
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::Kernel;

    fn expl(labels: &[&str], coefficients: Vec<f64>) -> Explanation {
        Explanation {
            target_label: "x".into(),
            component_labels: labels.iter().map(|s| s.to_string()).collect(),
            coefficients,
            intercept: 0.0,
            faithfulness_r: 1.0,
            faithfulness_defined: true,
            exhaustive: true,
            n: 8,
            kernel: Kernel::Uniform,
            instance_score: 0.5,
            config_digest: String::new(),
        }
    }

    #[test]
    fn all_false_negative_drums() {
        let labels = ["bass", "drums", "guitar"];
        let es: Vec<_> = (0..10).map(|_| expl(&labels, vec![0.1, 0.9, 0.2])).collect();
        let os = vec![Outcome::FalseNegative; 10];
        let s = aggregate_top_components(&es, &os).unwrap();
        assert_eq!(s.count("FN", "drums"), 10);
        assert_eq!(s.totals["FN"], 10);
        assert_eq!(s.bins.len(), 1);
        assert_eq!(s.bins["FN"].values().sum::<usize>(), 10);
    }

    #[test]
    fn empty_input_gives_empty_summary() {
        let s = aggregate_top_components(&[], &[]).unwrap();
        assert!(s.bins.is_empty() && s.totals.is_empty());
    }

    #[test]
    fn mixed_orderings_are_rejected() {
        let es = vec![expl(&["a", "b"], vec![1.0, 0.0]), expl(&["b", "a"], vec![1.0, 0.0])];
        let os = vec![Outcome::TruePositive; 2];
        assert!(matches!(
            aggregate_top_components(&es, &os),
            Err(Error::ComponentOrdering(_))
        ));
    }

    #[test]
    fn aggregation_is_order_independent() {
        let labels = ["a", "b", "c"];
        let es = vec![
            expl(&labels, vec![0.1, 0.9, 0.2]),
            expl(&labels, vec![-0.1, -0.9, -0.2]),
            expl(&labels, vec![0.5, 0.1, 0.2]),
            expl(&labels, vec![0.1, 0.1, 0.2]),
        ];
        let os = vec![
            Outcome::TruePositive,
            Outcome::FalseNegative,
            Outcome::TruePositive,
            Outcome::Bucket("rock".into()),
        ];
        let a = aggregate_top_components(&es, &os).unwrap();
        let order = [3, 1, 0, 2];
        let es2: Vec<_> = order.iter().map(|&i| es[i].clone()).collect();
        let os2: Vec<_> = order.iter().map(|&i| os[i].clone()).collect();
        assert_eq!(a, aggregate_top_components(&es2, &os2).unwrap());
        assert_eq!(a.count("FN", NONE_POSITIVE), 1);
        assert_eq!(a.count("rock", "c"), 1);
    }

    #[test]
    fn entropy_bounds() {
        let labels: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let mut h = empty_histogram(&labels);
        assert_eq!(normalized_entropy(&h, &labels), 0.0);
        h.insert("a".into(), 5);
        h.insert(NONE_POSITIVE.into(), 7);
        assert_eq!(normalized_entropy(&h, &labels), 0.0);
        h.insert("b".into(), 5);
        h.insert("c".into(), 5);
        assert!((normalized_entropy(&h, &labels) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn confounder_rate_counts_only_the_class() {
        let sel = |predicted: &str, top: &str| Selection {
            snippet: 0,
            predicted: predicted.into(),
            top: top.into(),
        };
        let s = vec![sel("A", "drums"), sel("A", "bass"), sel("B", "drums"), sel("A", "drums")];
        assert!((confounder_rate(&s, "A", "drums").unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(confounder_rate(&s, "C", "drums"), None);
    }
}
