//! Local surrogate explanations over source components.
//!
//! Masks switch components on and off, every remix is scored by the black
//! box, and a weighted linear model over the mask bits is fit to those
//! scores. Its coefficients are the explanation.

mod neighborhood;
mod surrogate;

pub use neighborhood::{
    enumerate_neighborhood, proximity_weights, Kernel, KernelChoice, Neighborhood,
    DEFAULT_KERNEL_WIDTH,
};
pub use surrogate::{fit_surrogate, weighted_pearson, SurrogateFit};

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decompose::{remix, Decomposer, Decomposition, InterpretableMask};
use crate::error::{Error, Result, ResultExt};
use crate::predict::Predictor;
use crate::signal::AudioBuffer;

/// Remixes sent to the predictor per call.
pub const PREDICT_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplainConfig {
    pub n_max: usize,
    pub kernel: KernelChoice,
    pub ridge_lambda: f64,
    /// Keep the residual in every remix instead of dropping it.
    pub include_residual: bool,
    pub seed: u64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            n_max: 1024,
            kernel: KernelChoice::Auto,
            ridge_lambda: 1e-3,
            include_residual: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub target_label: String,
    pub component_labels: Vec<String>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub faithfulness_r: f64,
    pub faithfulness_defined: bool,
    pub exhaustive: bool,
    pub n: usize,
    pub kernel: Kernel,
    /// Black-box score of the unperturbed instance (all-ones mask).
    pub instance_score: f64,
    pub config_digest: String,
}

impl Explanation {
    pub fn top_component(&self) -> TopComponent {
        top_component(&self.coefficients)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Winner of an explanation: the component with the largest strictly
/// positive coefficient, or none.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TopComponent {
    Component(usize),
    NonePositive,
}

impl TopComponent {
    pub fn label<'a>(&self, labels: &'a [String]) -> &'a str {
        match self {
            TopComponent::Component(i) => &labels[*i],
            TopComponent::NonePositive => NONE_POSITIVE,
        }
    }
}

pub const NONE_POSITIVE: &str = "none-positive";

impl fmt::Display for TopComponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopComponent::Component(i) => write!(f, "{i}"),
            TopComponent::NonePositive => f.write_str(NONE_POSITIVE),
        }
    }
}

/// Index of the largest coefficient above zero; ties go to the lowest index.
pub fn top_component(coefficients: &[f64]) -> TopComponent {
    let mut best: Option<usize> = None;
    for (i, &c) in coefficients.iter().enumerate() {
        if c > 0.0 && best.is_none_or(|b| c > coefficients[b]) {
            best = Some(i);
        }
    }
    best.map_or(TopComponent::NonePositive, TopComponent::Component)
}

/// Indices of the up to `k` largest positive coefficients, best first.
pub fn top_positive(coefficients: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..coefficients.len()).filter(|&i| coefficients[i] > 0.0).collect();
    idx.sort_by(|&a, &b| coefficients[b].total_cmp(&coefficients[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Listenable explanation: the sum of the `k` components with the largest
/// positive coefficients. The residual is never included.
pub fn render_explanation(d: &Decomposition, e: &Explanation, k: usize) -> Result<AudioBuffer> {
    if e.coefficients.len() != d.d_prime() {
        return Err(Error::DimensionMismatch(format!(
            "explanation has {} coefficients, decomposition has {} components",
            e.coefficients.len(),
            d.d_prime()
        )));
    }
    if k == 0 || k > d.d_prime() {
        return Err(Error::InvalidArgument(format!(
            "k must be between 1 and {}, got {k}",
            d.d_prime()
        )));
    }
    let chosen = top_positive(&e.coefficients, k);
    if chosen.is_empty() {
        return Err(Error::NoPositiveCoefficients);
    }
    let mut bits = vec![false; d.d_prime()];
    for i in chosen {
        bits[i] = true;
    }
    remix(d, &InterpretableMask::new(bits), false)
}

#[derive(Serialize)]
struct DigestInput<'a> {
    config: &'a ExplainConfig,
    kernel: Kernel,
    decomposer: &'a str,
    target_label: &'a str,
    component_labels: &'a [String],
}

/// Hex SHA-256 of the canonical JSON of every setting that shaped the
/// explanation.
pub fn config_digest(
    config: &ExplainConfig,
    kernel: Kernel,
    decomposer: &str,
    target_label: &str,
    component_labels: &[String],
) -> String {
    let input = DigestInput {
        config,
        kernel,
        decomposer,
        target_label,
        component_labels,
    };
    let json = serde_json::to_vec(&input).expect("digest input serializes");
    hex::encode(Sha256::digest(json))
}

/// Scores every mask's remix with the black box for `target_label`.
pub fn query_responses(
    d: &Decomposition,
    masks: &[InterpretableMask],
    predictor: &dyn Predictor,
    target_label: &str,
    include_residual: bool,
) -> Result<Vec<f64>> {
    let mut responses = Vec::with_capacity(masks.len());
    for chunk in masks.chunks(PREDICT_CHUNK) {
        let remixes = chunk
            .par_iter()
            .map(|m| remix(d, m, include_residual))
            .collect::<Result<Vec<_>>>()
            .context("remix")?;
        let predictions = predictor.predict(&remixes).context("predict")?;
        if predictions.len() != remixes.len() {
            return Err(Error::DimensionMismatch(format!(
                "predictor returned {} predictions for {} inputs",
                predictions.len(),
                remixes.len()
            ))
            .context("predict"));
        }
        for p in predictions {
            let score = p
                .score(target_label)
                .ok_or_else(|| Error::UnknownLabel(target_label.to_string()))
                .context("predict")?;
            responses.push(score);
        }
    }
    Ok(responses)
}

/// Explains the prediction for `target_label` on an already decomposed
/// instance. `decomposer_name` only feeds the digest.
pub fn explain_decomposition(
    d: &Decomposition,
    predictor: &dyn Predictor,
    target_label: &str,
    config: &ExplainConfig,
    decomposer_name: &str,
) -> Result<Explanation> {
    let known = predictor.labels();
    if !known.is_empty() && !known.iter().any(|l| l == target_label) {
        return Err(Error::UnknownLabel(target_label.to_string()));
    }
    let (masks, exhaustive) =
        enumerate_neighborhood(d.d_prime(), config.n_max, config.seed).context("neighborhood")?;
    let responses = query_responses(d, &masks, predictor, target_label, config.include_residual)?;
    let kernel = config.kernel.resolve(exhaustive);
    let proximity = proximity_weights(&masks, kernel).context("neighborhood")?;
    let neighborhood = Neighborhood {
        masks,
        responses,
        proximity,
        exhaustive,
    };
    let fit = fit_surrogate(&neighborhood, config.ridge_lambda).context("fit")?;
    let component_labels = d.component_labels();
    Ok(Explanation {
        config_digest: config_digest(config, kernel, decomposer_name, target_label, &component_labels),
        target_label: target_label.to_string(),
        component_labels,
        coefficients: fit.coefficients,
        intercept: fit.intercept,
        faithfulness_r: fit.faithfulness_r,
        faithfulness_defined: fit.faithfulness_defined,
        exhaustive,
        n: neighborhood.masks.len(),
        kernel,
        instance_score: neighborhood.responses[0],
    })
}

/// Decomposes `mix` and explains the prediction for `target_label`.
pub fn explain_instance(
    mix: &AudioBuffer,
    decomposer: &dyn Decomposer,
    predictor: &dyn Predictor,
    target_label: &str,
    config: &ExplainConfig,
) -> Result<(Explanation, Decomposition)> {
    let d = decomposer.decompose(mix).context("decompose")?;
    let e = explain_decomposition(&d, predictor, target_label, config, &decomposer.name())?;
    Ok((e, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decompose::{oracle_decompose, segment_time};
    use crate::predict::Prediction;

    struct Constant;

    impl Predictor for Constant {
        fn labels(&self) -> Vec<String> {
            vec!["x".into()]
        }

        fn predict(&self, batch: &[AudioBuffer]) -> Result<Vec<Prediction>> {
            Ok(batch
                .iter()
                .map(|_| Prediction {
                    labels: vec!["x".into()],
                    probabilities: vec![0.3],
                })
                .collect())
        }
    }

    /// Scores the energy a remix shares with one reference component.
    struct ComponentEnergy(AudioBuffer);

    impl Predictor for ComponentEnergy {
        fn labels(&self) -> Vec<String> {
            vec!["x".into()]
        }

        fn predict(&self, batch: &[AudioBuffer]) -> Result<Vec<Prediction>> {
            Ok(batch
                .iter()
                .map(|b| {
                    let dot: f64 = b
                        .samples()
                        .iter()
                        .zip(self.0.samples())
                        .map(|(x, y)| *x as f64 * *y as f64)
                        .sum();
                    Prediction {
                        labels: vec!["x".into()],
                        probabilities: vec![(dot / self.0.energy()).clamp(0.0, 1.0)],
                    }
                })
                .collect())
        }
    }

    fn tone(freq: f64, amp: f64) -> AudioBuffer {
        AudioBuffer::new(
            (0..8000)
                .map(|n| (amp * (2.0 * std::f64::consts::PI * freq * n as f64 / 16_000.0).sin()) as f32)
                .collect(),
            16_000,
        )
        .unwrap()
    }

    fn three_sources() -> Decomposition {
        let stems = vec![
            ("a".to_string(), tone(220.0, 0.2)),
            ("b".to_string(), tone(330.0, 0.2)),
            ("c".to_string(), tone(495.0, 0.2)),
        ];
        let mix = crate::signal::sum_buffers(8000, 16_000, stems.iter().map(|(_, b)| b));
        oracle_decompose(&mix, &stems).unwrap()
    }

    #[test]
    fn top_component_rules() {
        assert_eq!(top_component(&[0.2, -0.5, 0.7]), TopComponent::Component(2));
        assert_eq!(top_component(&[-0.1, -0.2]), TopComponent::NonePositive);
        assert_eq!(top_component(&[0.4, 0.4]), TopComponent::Component(0));
        assert_eq!(top_component(&[0.0, 0.0]), TopComponent::NonePositive);
    }

    #[test]
    fn constant_black_box_gives_zero_coefficients() {
        let d = three_sources();
        let e = explain_decomposition(&d, &Constant, "x", &ExplainConfig::default(), "oracle").unwrap();
        assert_eq!(e.coefficients, vec![0.0; 3]);
        assert!(!e.faithfulness_defined);
        assert_eq!(e.top_component(), TopComponent::NonePositive);
    }

    #[test]
    fn energy_of_one_component_wins() {
        let d = three_sources();
        let p = ComponentEnergy(d.components()[1].audio.clone());
        let config = ExplainConfig {
            ridge_lambda: 0.0,
            ..ExplainConfig::default()
        };
        let e = explain_decomposition(&d, &p, "x", &config, "oracle").unwrap();
        assert!(e.exhaustive);
        assert_eq!(e.n, 8);
        assert_eq!(e.top_component(), TopComponent::Component(1));
        assert!(e.coefficients[1] > 0.9);
        assert!(e.coefficients[0].abs() < 0.05 && e.coefficients[2].abs() < 0.05);
    }

    #[test]
    fn explanation_is_deterministic() {
        let d = segment_time(&three_sources(), 4).unwrap();
        let p = ComponentEnergy(d.components()[5].audio.clone());
        let config = ExplainConfig {
            n_max: 300,
            seed: 3,
            ..ExplainConfig::default()
        };
        let a = explain_decomposition(&d, &p, "x", &config, "oracle").unwrap();
        let b = explain_decomposition(&d, &p, "x", &config, "oracle").unwrap();
        assert!(!a.exhaustive);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.top_component(), TopComponent::Component(5));
    }

    #[test]
    fn unknown_label_is_rejected() {
        let d = three_sources();
        assert!(matches!(
            explain_decomposition(&d, &Constant, "nope", &ExplainConfig::default(), "oracle"),
            Err(Error::UnknownLabel(_))
        ));
    }

    #[test]
    fn digest_tracks_settings() {
        let labels = vec!["a".to_string()];
        let c = ExplainConfig::default();
        let base = config_digest(&c, Kernel::Uniform, "oracle", "x", &labels);
        assert_eq!(base.len(), 64);
        assert_eq!(base, config_digest(&c, Kernel::Uniform, "oracle", "x", &labels));
        let other = ExplainConfig { seed: 1, ..c };
        assert_ne!(base, config_digest(&other, Kernel::Uniform, "oracle", "x", &labels));
        assert_ne!(base, config_digest(&c, Kernel::Uniform, "hpss", "x", &labels));
    }

    fn explanation(coefficients: Vec<f64>) -> Explanation {
        Explanation {
            target_label: "x".into(),
            component_labels: vec!["a".into(), "b".into(), "c".into()],
            coefficients,
            intercept: 0.0,
            faithfulness_r: 1.0,
            faithfulness_defined: true,
            exhaustive: true,
            n: 8,
            kernel: Kernel::Uniform,
            instance_score: 0.0,
            config_digest: String::new(),
        }
    }

    #[test]
    fn rendering_selects_top_positive_components() {
        let d = three_sources();
        let all = render_explanation(&d, &explanation(vec![0.1, 0.2, 0.3]), 3).unwrap();
        let mix_minus_residual = remix(&d, &InterpretableMask::ones(3), false).unwrap();
        assert_eq!(all, mix_minus_residual);

        let top = render_explanation(&d, &explanation(vec![0.1, 0.5, -0.3]), 1).unwrap();
        assert_eq!(top.samples(), d.components()[1].audio.samples());

        // Asking for more than are positive yields only the positive ones.
        let two = render_explanation(&d, &explanation(vec![0.1, 0.5, -0.3]), 3).unwrap();
        let expected = remix(&d, &InterpretableMask::new(vec![true, true, false]), false).unwrap();
        assert_eq!(two, expected);

        assert!(matches!(
            render_explanation(&d, &explanation(vec![-0.1, 0.0, -0.3]), 1),
            Err(Error::NoPositiveCoefficients)
        ));
        assert!(render_explanation(&d, &explanation(vec![0.1, 0.1, 0.1]), 0).is_err());
        assert!(render_explanation(&d, &explanation(vec![0.1, 0.1, 0.1]), 4).is_err());
    }
}
