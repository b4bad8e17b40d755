use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{FeatureConfig, FeatureExtractor};
use super::{Prediction, Predictor};
use crate::error::{Error, Result, ResultExt};
use crate::signal::{AudioBuffer, MelSpectrogram};

/// Standard deviation of the Gaussian used by [`randomize`].
pub const RANDOM_INIT_STD: f64 = 0.01;

/// Standard deviations below this are treated as 1 when standardizing, so
/// constant feature bins pass through centered but unscaled.
const MIN_STD: f64 = 1e-8;

/// Multinomial logistic regression over standardized mean log-mel features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub labels: Vec<String>,
    /// `n_labels × n_features`, row per label.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub feature_config: FeatureConfig,
}

impl LinearClassifier {
    /// All-zero parameters with identity standardization.
    pub fn zeros(labels: Vec<String>, feature_config: FeatureConfig) -> Self {
        let n = feature_config.n_mels;
        Self {
            weights: vec![vec![0.0; n]; labels.len()],
            bias: vec![0.0; labels.len()],
            feature_mean: vec![0.0; n],
            feature_std: vec![1.0; n],
            labels,
            feature_config,
        }
    }

    pub fn n_features(&self) -> usize {
        self.feature_config.n_mels
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_features();
        if self.labels.is_empty() {
            return Err(Error::InvalidArgument("model has no labels".into()));
        }
        if self.weights.len() != self.labels.len()
            || self.bias.len() != self.labels.len()
            || self.weights.iter().any(|w| w.len() != n)
            || self.feature_mean.len() != n
            || self.feature_std.len() != n
        {
            return Err(Error::DimensionMismatch(format!(
                "model parameters do not match {} labels × {n} features",
                self.labels.len()
            )));
        }
        let finite = self
            .weights
            .iter()
            .flatten()
            .chain(&self.bias)
            .chain(&self.feature_mean)
            .chain(&self.feature_std)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("model has non-finite parameters".into()));
        }
        if self.feature_std.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidArgument("feature std must be positive".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
        let model: Self = serde_json::from_str(&text)
            .map_err(Error::from)
            .with_context(|| format!("parsing model {}", path.display()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|source| Error::Unwritable {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn standardize(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.feature_mean.iter().zip(&self.feature_std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    /// Logits for a raw (unstandardized) feature vector.
    pub fn logits(&self, raw: &[f64]) -> Vec<f64> {
        logits(&self.weights, &self.bias, &self.standardize(raw))
    }

    pub fn predict_features(&self, raw: &[f64]) -> Prediction {
        Prediction {
            labels: self.labels.clone(),
            probabilities: softmax(&self.logits(raw)),
        }
    }

    pub fn classify_features(&self, raw: &[f64]) -> usize {
        argmax(&self.logits(raw))
    }
}

impl Predictor for LinearClassifier {
    fn labels(&self) -> Vec<String> {
        self.labels.clone()
    }

    fn predict(&self, batch: &[AudioBuffer]) -> Result<Vec<Prediction>> {
        let extractor = FeatureExtractor::new(self.feature_config)?;
        batch
            .iter()
            .enumerate()
            .map(|(index, buffer)| {
                extractor
                    .features(buffer)
                    .map(|f| self.predict_features(&f))
                    .map_err(|e| Error::BatchItem {
                        index,
                        source: Box::new(e),
                    })
            })
            .collect()
    }
}

fn logits(weights: &[Vec<f64>], bias: &[f64], x: &[f64]) -> Vec<f64> {
    weights
        .iter()
        .zip(bias)
        .map(|(w, b)| b + w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

/// Mean softmax cross-entropy over a batch together with its gradient with
/// respect to the weights and bias.
pub fn softmax_cross_entropy(
    weights: &[Vec<f64>],
    bias: &[f64],
    inputs: &[Vec<f64>],
    targets: &[usize],
) -> (f64, Vec<Vec<f64>>, Vec<f64>) {
    let n_features = weights.first().map_or(0, Vec::len);
    let mut grad_w = vec![vec![0.0; n_features]; weights.len()];
    let mut grad_b = vec![0.0; bias.len()];
    let mut loss = 0.0;
    let scale = 1.0 / inputs.len() as f64;
    for (x, &y) in inputs.iter().zip(targets) {
        let z = logits(weights, bias, x);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_total = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        loss += (log_total - z[y]) * scale;
        for (k, zk) in z.iter().enumerate() {
            let delta = ((zk - log_total).exp() - if k == y { 1.0 } else { 0.0 }) * scale;
            grad_b[k] += delta;
            for (g, xi) in grad_w[k].iter_mut().zip(x) {
                *g += delta * xi;
            }
        }
    }
    (loss, grad_w, grad_b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Length of the random crop drawn from each example every epoch.
    pub snippet_seconds: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 16,
            max_epochs: 200,
            patience: 20,
            seed: 0,
            snippet_seconds: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_validation_accuracy: f64,
    pub final_train_accuracy: f64,
    /// Validation accuracy after each epoch.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LabeledAudio {
    pub audio: AudioBuffer,
    pub label: String,
}

/// Trains on audio with a fresh random crop of every example per epoch.
/// Validation examples are scored on their full length. With an empty
/// validation set, early stopping watches training accuracy instead.
pub fn train_builtin(
    train: &[LabeledAudio],
    valid: &[LabeledAudio],
    config: &TrainConfig,
    feature_config: FeatureConfig,
) -> Result<(LinearClassifier, TrainingReport)> {
    let extractor = FeatureExtractor::new(feature_config)?;
    let mels = |set: &[LabeledAudio]| -> Result<Vec<MelSpectrogram>> {
        set.par_iter()
            .enumerate()
            .map(|(index, item)| {
                extractor.mel(&item.audio).map_err(|e| Error::BatchItem {
                    index,
                    source: Box::new(e),
                })
            })
            .collect()
    };
    let train_mels = mels(train).context("extracting training features")?;
    let valid_mels = mels(valid).context("extracting validation features")?;
    let crop = feature_config.frames_for(config.snippet_seconds).max(1);

    let train_full: Vec<Vec<f64>> = train_mels.iter().map(MelSpectrogram::time_mean).collect();
    let valid_full: Vec<Vec<f64>> = valid_mels.iter().map(MelSpectrogram::time_mean).collect();
    let labels_of = |set: &[LabeledAudio]| set.iter().map(|i| i.label.clone()).collect::<Vec<_>>();

    fit(
        &train_full,
        &labels_of(train),
        &valid_full,
        &labels_of(valid),
        config,
        feature_config,
        |i, rng| {
            let mel = &train_mels[i];
            if mel.n_frames() > crop {
                let start = rng.gen_range(0..=mel.n_frames() - crop);
                mel.mean_over(start, start + crop)
            } else {
                train_full[i].clone()
            }
        },
    )
}

/// Trains on precomputed raw feature vectors.
pub fn train_on_features(
    train: &[Vec<f64>],
    train_labels: &[String],
    valid: &[Vec<f64>],
    valid_labels: &[String],
    config: &TrainConfig,
    feature_config: FeatureConfig,
) -> Result<(LinearClassifier, TrainingReport)> {
    fit(
        train,
        train_labels,
        valid,
        valid_labels,
        config,
        feature_config,
        |i, _| train[i].clone(),
    )
}

fn fit<F>(
    train: &[Vec<f64>],
    train_labels: &[String],
    valid: &[Vec<f64>],
    valid_labels: &[String],
    config: &TrainConfig,
    feature_config: FeatureConfig,
    mut sample: F,
) -> Result<(LinearClassifier, TrainingReport)>
where
    F: FnMut(usize, &mut ChaCha8Rng) -> Vec<f64>,
{
    if train.len() != train_labels.len() || valid.len() != valid_labels.len() {
        return Err(Error::DimensionMismatch("features and labels differ in count".into()));
    }
    if config.batch_size == 0 || config.learning_rate.is_nan() || config.learning_rate <= 0.0 {
        return Err(Error::InvalidArgument(
            "batch size and learning rate must be positive".into(),
        ));
    }
    let labels: Vec<String> = train_labels
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if labels.len() < 2 {
        return Err(Error::DegenerateDataset(format!(
            "need at least 2 classes, found {}",
            labels.len()
        )));
    }
    let n = feature_config.n_mels;
    if let Some(bad) = train.iter().chain(valid).find(|f| f.len() != n) {
        return Err(Error::DimensionMismatch(format!(
            "feature of length {} where {n} was expected",
            bad.len()
        )));
    }
    let index_of = |label: &String| -> Result<usize> {
        labels
            .binary_search(label)
            .map_err(|_| Error::UnknownLabel(label.clone()))
    };
    let train_y = train_labels.iter().map(index_of).collect::<Result<Vec<_>>>()?;
    let valid_y = valid_labels.iter().map(index_of).collect::<Result<Vec<_>>>()?;

    let mut model = LinearClassifier::zeros(labels, feature_config);
    let (mean, std) = moments(train, n);
    model.feature_mean = mean;
    model.feature_std = std;

    let (monitor_x, monitor_y) = if valid.is_empty() {
        (train, &train_y)
    } else {
        (valid, &valid_y)
    };
    let accuracy = |m: &LinearClassifier, xs: &[Vec<f64>], ys: &[usize]| {
        let hits = xs
            .iter()
            .zip(ys)
            .filter(|(x, &y)| m.classify_features(x) == y)
            .count();
        hits as f64 / xs.len() as f64
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (accuracy(&model, monitor_x, monitor_y), 0usize, model.clone());
    let mut history = Vec::new();
    let mut since_best = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let xs: Vec<Vec<f64>> = chunk
                .iter()
                .map(|&i| model.standardize(&sample(i, &mut rng)))
                .collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| train_y[i]).collect();
            let (_, gw, gb) = softmax_cross_entropy(&model.weights, &model.bias, &xs, &ys);
            for (w, g) in model.weights.iter_mut().zip(&gw) {
                for (wi, gi) in w.iter_mut().zip(g) {
                    *wi -= config.learning_rate * gi;
                }
            }
            for (b, g) in model.bias.iter_mut().zip(&gb) {
                *b -= config.learning_rate * g;
            }
        }
        let acc = accuracy(&model, monitor_x, monitor_y);
        history.push(acc);
        if acc > best.0 {
            best = (acc, epoch, model.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }

    let (best_acc, best_epoch, best_model) = best;
    let report = TrainingReport {
        epochs_run: history.len(),
        best_epoch,
        best_validation_accuracy: best_acc,
        final_train_accuracy: accuracy(&best_model, train, &train_y),
        history,
    };
    best_model.validate()?;
    Ok((best_model, report))
}

fn moments(xs: &[Vec<f64>], n: usize) -> (Vec<f64>, Vec<f64>) {
    let count = xs.len() as f64;
    let mut mean = vec![0.0; n];
    for x in xs {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v / count;
        }
    }
    let mut var = vec![0.0; n];
    for x in xs {
        for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
            *s += (v - m) * (v - m) / count;
        }
    }
    let std = var
        .into_iter()
        .map(|v| if v.sqrt() < MIN_STD { 1.0 } else { v.sqrt() })
        .collect();
    (mean, std)
}

/// Replaces weights and bias with i.i.d. draws from a zero-mean Gaussian
/// with standard deviation [`RANDOM_INIT_STD`], keeping the standardization.
pub fn randomize(model: &LinearClassifier, seed: u64) -> LinearClassifier {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, RANDOM_INIT_STD).expect("valid normal");
    let mut out = model.clone();
    for w in out.weights.iter_mut().flatten() {
        *w = normal.sample(&mut rng);
    }
    for b in out.bias.iter_mut() {
        *b = normal.sample(&mut rng);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};

    fn small_config(n_mels: usize) -> FeatureConfig {
        FeatureConfig {
            n_mels,
            ..FeatureConfig::default()
        }
    }

    fn two_clusters(seed: u64, n_per: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<String>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (label, center) in [("a", -2.0), ("b", 2.0)] {
            for _ in 0..n_per {
                xs.push((0..dim).map(|_| center + rng.gen_range(-1.0..1.0)).collect());
                ys.push(label.to_string());
            }
        }
        (xs, ys)
    }

    /// Perceptron oracle: converges iff the data are linearly separable
    /// (with a margin), giving an independent separability certificate.
    fn perceptron_separates(xs: &[Vec<f64>], ys: &[String]) -> bool {
        let dim = xs[0].len();
        let (mut w, mut b) = (vec![0.0; dim], 0.0);
        for _ in 0..1000 {
            let mut mistakes = 0;
            for (x, y) in xs.iter().zip(ys) {
                let t = if y == "b" { 1.0 } else { -1.0 };
                let s: f64 = w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b;
                if t * s <= 0.0 {
                    mistakes += 1;
                    w.iter_mut().zip(x).for_each(|(wi, xi)| *wi += t * xi);
                    b += t;
                }
            }
            if mistakes == 0 {
                return true;
            }
        }
        false
    }

    #[test]
    fn separable_clusters_are_fit_perfectly() {
        let (xs, ys) = two_clusters(3, 40, 8);
        assert!(perceptron_separates(&xs, &ys));
        let (model, report) =
            train_on_features(&xs, &ys, &[], &[], &TrainConfig::default(), small_config(8)).unwrap();
        assert_eq!(report.final_train_accuracy, 1.0);
        model.validate().unwrap();
    }

    #[test]
    fn single_class_is_degenerate() {
        let xs = vec![vec![0.0; 4]; 3];
        let ys = vec!["a".to_string(); 3];
        assert!(matches!(
            train_on_features(&xs, &ys, &[], &[], &TrainConfig::default(), small_config(4)),
            Err(Error::DegenerateDataset(_))
        ));
    }

    #[test]
    fn unknown_validation_label_is_rejected() {
        let (xs, ys) = two_clusters(1, 4, 4);
        let vx = vec![vec![0.0; 4]];
        let vy = vec!["zzz".to_string()];
        assert!(matches!(
            train_on_features(&xs, &ys, &vx, &vy, &TrainConfig::default(), small_config(4)),
            Err(Error::UnknownLabel(_))
        ));
    }

    #[test]
    fn same_seed_gives_identical_weights() {
        let (xs, ys) = two_clusters(5, 30, 6);
        let cfg = TrainConfig {
            seed: 9,
            max_epochs: 15,
            ..TrainConfig::default()
        };
        let (a, _) = train_on_features(&xs, &ys, &[], &[], &cfg, small_config(6)).unwrap();
        let (b, _) = train_on_features(&xs, &ys, &[], &[], &cfg, small_config(6)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = LinearClassifier::zeros(vec!["a".into(), "b".into(), "c".into()], small_config(4));
        let p = m.predict_features(&[1.0, 2.0, 3.0, 4.0]);
        assert!(p.probabilities.iter().all(|&q| (q - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn batch_prediction_matches_single_and_sums_to_one() {
        let m = randomize(
            &LinearClassifier::zeros(vec!["a".into(), "b".into()], FeatureConfig::default()),
            4,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch: Vec<AudioBuffer> = (0..3)
            .map(|_| {
                AudioBuffer::new((0..8000).map(|_| rng.gen_range(-0.3..0.3)).collect(), 16_000).unwrap()
            })
            .collect();
        let all = m.predict(&batch).unwrap();
        for (i, b) in batch.iter().enumerate() {
            let one = m.predict(std::slice::from_ref(b)).unwrap();
            assert_eq!(one[0], all[i]);
            assert!((all[i].probabilities.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn feature_failure_carries_batch_index() {
        let m = LinearClassifier::zeros(vec!["a".into(), "b".into()], FeatureConfig::default());
        let batch = vec![AudioBuffer::silent(4000, 16_000), AudioBuffer::silent(10, 16_000)];
        assert!(matches!(m.predict(&batch), Err(Error::BatchItem { index: 1, .. })));
    }

    #[test]
    fn randomize_is_seeded() {
        let base = LinearClassifier::zeros(vec!["a".into(), "b".into()], small_config(16));
        assert_eq!(randomize(&base, 1), randomize(&base, 1));
        assert_ne!(randomize(&base, 1), randomize(&base, 2));
        let r = randomize(&base, 1);
        assert_eq!(r.feature_mean, base.feature_mean);
        let values: Vec<f64> = r.weights.iter().flatten().copied().collect();
        let sd = (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt();
        assert!(sd > 0.005 && sd < 0.02, "sd {sd}");
    }

    #[test]
    fn randomized_accuracy_is_chance_on_average() {
        let (xs, ys) = two_clusters(8, 50, 8);
        let (trained, _) =
            train_on_features(&xs, &ys, &[], &[], &TrainConfig::default(), small_config(8)).unwrap();
        let accs: Vec<f64> = (0..20)
            .map(|seed| {
                let r = randomize(&trained, seed);
                let hits = xs
                    .iter()
                    .zip(&ys)
                    .filter(|(x, y)| r.labels[r.classify_features(x)] == **y)
                    .count();
                hits as f64 / xs.len() as f64
            })
            .collect();
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!((0.3..=0.7).contains(&mean), "mean accuracy {mean}");
    }

    #[test]
    fn model_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = randomize(
            &LinearClassifier::zeros(vec!["a".into(), "b".into()], FeatureConfig::default()),
            7,
        );
        m.save(&path).unwrap();
        assert_eq!(LinearClassifier::load(&path).unwrap(), m);
    }

    proptest! {
        #[test]
        fn argmax_is_shift_invariant(z in prop::collection::vec(-20.0f64..20.0, 2..6), c in -50.0f64..50.0) {
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            prop_assert_eq!(argmax(&softmax(&z)), argmax(&softmax(&shifted)));
        }

        #[test]
        fn gradient_matches_finite_differences(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (k, d, m) = (3, 4, 5);
            let w: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let b: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let xs: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
            let ys: Vec<usize> = (0..m).map(|_| rng.gen_range(0..k)).collect();
            let (_, gw, gb) = softmax_cross_entropy(&w, &b, &xs, &ys);
            let h = 1e-5;
            let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            for i in 0..k {
                for j in 0..d {
                    let mut wp = w.clone();
                    let mut wm = w.clone();
                    wp[i][j] += h;
                    wm[i][j] -= h;
                    let num = (softmax_cross_entropy(&wp, &b, &xs, &ys).0
                        - softmax_cross_entropy(&wm, &b, &xs, &ys).0) / (2.0 * h);
                    prop_assert!(rel(gw[i][j], num) <= 1e-4 || (gw[i][j] - num).abs() < 1e-9);
                }
                let mut bp = b.clone();
                let mut bm = b.clone();
                bp[i] += h;
                bm[i] -= h;
                let num = (softmax_cross_entropy(&w, &bp, &xs, &ys).0
                    - softmax_cross_entropy(&w, &bm, &xs, &ys).0) / (2.0 * h);
                prop_assert!(rel(gb[i], num) <= 1e-4 || (gb[i] - num).abs() < 1e-9);
            }
        }
    }
}
