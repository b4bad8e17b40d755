//! The black-box boundary. Explanations only ever see a [`Predictor`]:
//! a batch of audio in, per-label probabilities out.

mod external;
mod features;
mod linear;

pub use external::{
    external_predict, ExternalPredictor, Manifest, ManifestItem, PredictorResult, ResultItem,
    PROTOCOL_VERSION,
};
pub use features::{extract_features, FeatureConfig, FeatureExtractor};
pub use linear::{
    randomize, softmax, softmax_cross_entropy, train_builtin, train_on_features, LabeledAudio,
    LinearClassifier, TrainConfig, TrainingReport, RANDOM_INIT_STD,
};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::signal::AudioBuffer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub labels: Vec<String>,
    pub probabilities: Vec<f64>,
}

impl Prediction {
    pub fn score(&self, label: &str) -> Option<f64> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.probabilities[i])
    }

    /// Highest-probability label; ties go to the earlier label.
    pub fn top_label(&self) -> Option<&str> {
        let mut best: Option<usize> = None;
        for (i, p) in self.probabilities.iter().enumerate() {
            if best.is_none_or(|b| *p > self.probabilities[b]) {
                best = Some(i);
            }
        }
        best.map(|i| self.labels[i].as_str())
    }
}

pub trait Predictor: Send + Sync {
    /// Labels this predictor is known to score. May be empty for external
    /// taggers that report their own label set.
    fn labels(&self) -> Vec<String>;

    /// One prediction per buffer, in input order.
    fn predict(&self, batch: &[AudioBuffer]) -> Result<Vec<Prediction>>;
}

impl<P: Predictor + ?Sized> Predictor for Box<P> {
    fn labels(&self) -> Vec<String> {
        (**self).labels()
    }

    fn predict(&self, batch: &[AudioBuffer]) -> Result<Vec<Prediction>> {
        (**self).predict(batch)
    }
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn labels(&self) -> Vec<String> {
        (**self).labels()
    }

    fn predict(&self, batch: &[AudioBuffer]) -> Result<Vec<Prediction>> {
        (**self).predict(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_label_breaks_ties_by_position() {
        let p = Prediction {
            labels: vec!["a".into(), "b".into(), "c".into()],
            probabilities: vec![0.4, 0.4, 0.2],
        };
        assert_eq!(p.top_label(), Some("a"));
        assert_eq!(p.score("c"), Some(0.2));
        assert_eq!(p.score("z"), None);
    }
}
