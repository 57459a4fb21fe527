//! Prequential (test-then-train) evaluation and its metrics.
//!
//! Each stream example is standardized, predicted with the current model,
//! and only then used for a training step, so every prediction is
//! honestly out-of-sample. The loop owns the loss window, the drift
//! controller hookup, the hard-example buffer, and the replay cadence.
//!
//! Binary metrics treat class 1 as positive. The area under the ROC curve
//! uses the rank formulation with midranks for tied scores.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autoencoder::EncoderParams;
use crate::drift::{
    replay, DriftController, DriftEvent, DriftEventRecord, HardBuffer, SharedSnapshot,
    SlidingLossWindow,
};
use crate::error::{AoilError, Result};
use crate::learner::{
    backward, corrupt, forward, train_step_denoising, LossBreakdown, ModelState, NoiseConfig,
};
use crate::linalg::{softmax, Matrix, Vector};
use crate::streams::{derive_seed, FeatureScaler, ScalingKind, StreamExample};

/// Binary confusion counts with class 1 as the positive class. For more
/// than two classes this degrades to one-vs-rest on class 1; accuracy is
/// tracked separately and stays exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
}

impl ConfusionCounts {
    pub fn record(&mut self, label: usize, predicted: usize) {
        match (label == 1, predicted == 1) {
            (true, true) => self.true_positive += 1,
            (false, true) => self.false_positive += 1,
            (false, false) => self.true_negative += 1,
            (true, false) => self.false_negative += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.true_positive + self.false_positive + self.true_negative + self.false_negative
    }
}

/// Scores and labels retained for ranking metrics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreStore {
    scores: Vec<f64>,
    positives: Vec<bool>,
}

impl ScoreStore {
    pub fn push(&mut self, score: f64, positive: bool) -> Result<()> {
        if !score.is_finite() {
            return Err(AoilError::NonFinite(format!("score {score}")));
        }
        self.scores.push(score);
        self.positives.push(positive);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Area under the ROC curve via positive-class rank sums; tied scores
/// share their midrank. Undefined unless both classes are present.
pub fn auc(store: &ScoreStore) -> Result<f64> {
    let n = store.scores.len();
    let positives = store.positives.iter().filter(|p| **p).count();
    let negatives = n - positives;
    if positives == 0 || negatives == 0 {
        return Err(AoilError::UndefinedMetric(
            "ranking quality needs at least one example of each class".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| store.scores[a].total_cmp(&store.scores[b]));
    let mut positive_rank_sum = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && store.scores[order[j + 1]] == store.scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share one midrank.
        let midrank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if store.positives[idx] {
                positive_rank_sum += midrank;
            }
        }
        i = j + 1;
    }
    let p = positives as f64;
    let u = positive_rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

/// Summary metrics for one run. Undefined values (empty denominators, a
/// single-class stream) are NaN rather than errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub examples: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
}

pub fn metrics(counts: &ConfusionCounts, store: &ScoreStore) -> Metrics {
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            f64::NAN
        } else {
            num as f64 / den as f64
        }
    };
    let total = counts.total();
    let accuracy = ratio(counts.true_positive + counts.true_negative, total);
    let precision = ratio(counts.true_positive, counts.true_positive + counts.false_positive);
    let recall = ratio(counts.true_positive, counts.true_positive + counts.false_negative);
    let f1 = if precision.is_nan() || recall.is_nan() || precision + recall == 0.0 {
        f64::NAN
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Metrics {
        examples: total,
        accuracy,
        precision,
        recall,
        f1,
        auc: auc(store).unwrap_or(f64::NAN),
    }
}

/// Accuracy over five consecutive stages of equal size (the remainder
/// joins the last stage), plus the four stage-to-stage changes. Empty
/// stages yield NaN.
pub fn stage_accuracies(correct: &[bool]) -> ([f64; 5], [f64; 4]) {
    let n = correct.len();
    let base = n / 5;
    let bounds = [0, base, 2 * base, 3 * base, 4 * base, n];
    let mut accuracies = [f64::NAN; 5];
    for s in 0..5 {
        let slice = &correct[bounds[s]..bounds[s + 1]];
        if !slice.is_empty() {
            accuracies[s] = slice.iter().filter(|c| **c).count() as f64 / slice.len() as f64;
        }
    }
    let mut deltas = [f64::NAN; 4];
    for s in 0..4 {
        deltas[s] = accuracies[s + 1] - accuracies[s];
    }
    (accuracies, deltas)
}

/// Per-example record from a prequential run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleOutcome {
    pub index: usize,
    pub label: usize,
    pub predicted: usize,
    /// Predicted probability of class 1.
    pub score: f64,
    pub correct: bool,
    /// Loss components of the training step on this example.
    pub losses: LossBreakdown,
}

/// Everything produced by one run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub outcomes: Vec<ExampleOutcome>,
    pub metrics: Metrics,
    pub stage_accuracies: [f64; 5],
    pub stage_deltas: [f64; 4],
    pub drift_events: Vec<DriftEventRecord>,
    pub duration: Duration,
}

/// Knobs of the prequential loop itself (the model carries its own).
#[derive(Debug, Clone, PartialEq)]
pub struct PrequentialConfig {
    pub window_capacity: usize,
    pub hard_buffer_capacity: usize,
    /// Replay the hard buffer after every this many examples; 0 disables.
    pub replay_every: usize,
    pub denoising: NoiseConfig,
    /// Feature conditioning applied before the network sees an example.
    pub scaling: ScalingKind,
    pub seed: u64,
}

impl Default for PrequentialConfig {
    fn default() -> PrequentialConfig {
        PrequentialConfig {
            window_capacity: 10,
            hard_buffer_capacity: 5,
            replay_every: 50,
            denoising: NoiseConfig::disabled(),
            scaling: ScalingKind::MinMax,
            seed: 0,
        }
    }
}

/// Hook into the moments a run mutates the model outside plain training.
pub trait RunObserver {
    /// Called immediately after a detected drift has been applied:
    /// `snapshot` is the stable point that was restored, `before` the
    /// encoder as it was at detection, and `model` the state after the
    /// reaction.
    fn after_drift(
        &mut self,
        example_index: usize,
        snapshot: &SharedSnapshot,
        before: &EncoderParams,
        model: &ModelState,
    );
}

struct NoopObserver;

impl RunObserver for NoopObserver {
    fn after_drift(&mut self, _: usize, _: &SharedSnapshot, _: &EncoderParams, _: &ModelState) {}
}

/// Run the model prequentially over `stream`. Pass a controller to enable
/// drift detection and reaction; without one the model just learns online.
pub fn prequential_run(
    model: &mut ModelState,
    controller: Option<&mut DriftController>,
    stream: &[StreamExample],
    config: &PrequentialConfig,
) -> Result<RunReport> {
    prequential_run_observed(model, controller, stream, config, &mut NoopObserver)
}

/// [`prequential_run`] with an observer for drift reactions.
pub fn prequential_run_observed(
    model: &mut ModelState,
    mut controller: Option<&mut DriftController>,
    stream: &[StreamExample],
    config: &PrequentialConfig,
    observer: &mut dyn RunObserver,
) -> Result<RunReport> {
    let start = Instant::now();
    let mut scaler = FeatureScaler::new(config.scaling, model.dims.input)?;
    let mut window = SlidingLossWindow::new(config.window_capacity)?;
    let mut buffer = HardBuffer::new(config.hard_buffer_capacity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1));
    let mut outcomes = Vec::with_capacity(stream.len());
    let mut counts = ConfusionCounts::default();
    let mut scores = ScoreStore::default();
    let mut correct_flags = Vec::with_capacity(stream.len());

    for (t, example) in stream.iter().enumerate() {
        if example.label >= model.dims.classes {
            return Err(AoilError::Contract(format!(
                "example {t} has label {} but the model has {} classes",
                example.label, model.dims.classes
            )));
        }
        let x = scaler.transform(&example.features)?;
        let y = Vector::one_hot(model.dims.classes, example.label)?;

        // Predict on the clean input, then train on this example.
        let trace = forward(&x, &y, model)?;
        let predicted = trace.fusion.prediction.argmax();
        let score = trace.fusion.prediction.get(1);
        let losses = if config.denoising.enabled {
            let corrupted = corrupt(&x, &config.denoising, &mut rng);
            train_step_denoising(&corrupted, &x, &y, model)?
        } else {
            let grads = backward(&trace, model)?;
            model.apply_gradients(&grads)?;
            trace.losses
        };

        window.push_loss(losses.total)?;
        buffer.offer(x.clone(), y.clone(), losses.total)?;

        if let Some(ctrl) = controller.as_deref_mut() {
            if ctrl.check(&window, model, t) == DriftEvent::DriftDetected {
                let before = model.encoder.clone();
                ctrl.apply_drift(model, &mut rng)?;
                let snapshot = ctrl.snapshot().expect("drift can only follow a stable point");
                observer.after_drift(t, snapshot, &before, model);
                buffer.clear();
            }
        }

        if config.replay_every > 0 && (t + 1) % config.replay_every == 0 {
            replay(&buffer, model)?;
        }

        let correct = predicted == example.label;
        counts.record(example.label, predicted);
        scores.push(score, example.label == 1)?;
        correct_flags.push(correct);
        outcomes.push(ExampleOutcome {
            index: example.index,
            label: example.label,
            predicted,
            score,
            correct,
            losses,
        });
    }

    let (stages, deltas) = stage_accuracies(&correct_flags);
    Ok(RunReport {
        outcomes,
        metrics: metrics(&counts, &scores),
        stage_accuracies: stages,
        stage_deltas: deltas,
        drift_events: controller.map(|c| c.events().to_vec()).unwrap_or_default(),
        duration: start.elapsed(),
    })
}

/// Prequential multinomial logistic regression trained by plain online
/// gradient descent, as a linear reference point. Weights and biases start
/// at zero (ties at the start resolve to class 0), inputs pass through the
/// same online standardization, and no randomness is involved.
pub fn ogd_baseline(
    stream: &[StreamExample],
    classes: usize,
    input_dim: usize,
    learning_rate: f64,
) -> Result<RunReport> {
    if classes < 2 {
        return Err(AoilError::Config("baseline needs at least two classes".into()));
    }
    if input_dim == 0 {
        return Err(AoilError::Config("baseline needs at least one feature".into()));
    }
    if !(learning_rate >= 0.0) {
        return Err(AoilError::Config(format!(
            "learning rate must be nonnegative, got {learning_rate}"
        )));
    }
    let start = Instant::now();
    let mut weights = Matrix::zeros(classes, input_dim)?;
    let mut bias = Vector::zeros(classes)?;
    let mut outcomes = Vec::with_capacity(stream.len());
    let mut counts = ConfusionCounts::default();
    let mut scores = ScoreStore::default();
    let mut correct_flags = Vec::with_capacity(stream.len());

    for (t, example) in stream.iter().enumerate() {
        if example.label >= classes {
            return Err(AoilError::Contract(format!(
                "example {t} has label {} but the baseline has {classes} classes",
                example.label
            )));
        }
        // Plain OGD consumes the features as they come: no scaler, no
        // preprocessing, so it stays an honest floor rather than
        // inheriting the network pipeline's conditioning.
        let x = example.features.clone();
        let mut logits = weights.matvec(&x)?;
        logits.add_assign(&bias)?;
        let prediction = softmax(&logits);
        let predicted = prediction.argmax();
        let score = prediction.get(1);
        let loss = -prediction.get(example.label).max(1e-12).ln();

        // (p - y) outer x, stepped down the gradient.
        for k in 0..classes {
            let indicator = if k == example.label { 1.0 } else { 0.0 };
            let d = prediction.get(k) - indicator;
            bias.set(k, bias.get(k) - learning_rate * d);
            for (dim, feature) in x.data().iter().enumerate() {
                let w = weights.get(k, dim);
                weights.set(k, dim, w - learning_rate * d * feature);
            }
        }

        let correct = predicted == example.label;
        counts.record(example.label, predicted);
        scores.push(score, example.label == 1)?;
        correct_flags.push(correct);
        outcomes.push(ExampleOutcome {
            index: example.index,
            label: example.label,
            predicted,
            score,
            correct,
            losses: LossBreakdown {
                prediction: loss,
                reconstruction: 0.0,
                entropy: 0.0,
                total: loss,
            },
        });
    }

    let (stages, deltas) = stage_accuracies(&correct_flags);
    Ok(RunReport {
        outcomes,
        metrics: metrics(&counts, &scores),
        stage_accuracies: stages,
        stage_deltas: deltas,
        drift_events: Vec::new(),
        duration: start.elapsed(),
    })
}
