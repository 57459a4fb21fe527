//! Data streams: synthetic generators with controlled concept changes, a
//! delimited-file loader, label-noise injection, and online feature
//! standardization.
//!
//! Everything here is seeded and fully deterministic. Independent random
//! decisions (features vs. noise coins, for example) come from separate
//! generators derived from the base seed, so toggling one knob never
//! perturbs the draws of another.

use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{AoilError, Result};
use crate::linalg::Vector;

/// One labeled example with its position in the stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamExample {
    pub features: Vector,
    pub label: usize,
    pub index: usize,
}

/// Derive an independent sub-seed from a base seed and a purpose index
/// (splitmix-style finalizer, so neighboring indices give unrelated seeds).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Threshold-sum stream: three uniform features on [0, 10); the label is 1
/// when the first two features sum below the active segment's threshold.
/// Each threshold in `thresholds` rules one segment of `segment_length`
/// examples, so every boundary between unequal thresholds is an abrupt
/// concept change.
#[derive(Debug, Clone, PartialEq)]
pub struct SeaConfig {
    pub thresholds: Vec<f64>,
    pub segment_length: usize,
    /// Probability of flipping each label, drawn from a generator separate
    /// from the feature draws.
    pub noise_fraction: f64,
    pub seed: u64,
}

impl Default for SeaConfig {
    fn default() -> SeaConfig {
        SeaConfig {
            thresholds: vec![4.0, 7.0, 4.0, 7.0],
            segment_length: 12_500,
            noise_fraction: 0.0,
            seed: 0,
        }
    }
}

pub fn sea_generate(config: &SeaConfig) -> Result<Vec<StreamExample>> {
    if config.thresholds.is_empty() {
        return Err(AoilError::Config("threshold stream needs at least one segment".into()));
    }
    if config.segment_length == 0 {
        return Err(AoilError::Config("segment length must be positive".into()));
    }
    if !(0.0..=1.0).contains(&config.noise_fraction) {
        return Err(AoilError::Config(format!(
            "noise fraction must lie in [0, 1], got {}",
            config.noise_fraction
        )));
    }
    for threshold in &config.thresholds {
        if !threshold.is_finite() {
            return Err(AoilError::Config(format!("non-finite threshold {threshold}")));
        }
    }
    let mut feature_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1));
    let total = config.thresholds.len() * config.segment_length;
    let mut examples = Vec::with_capacity(total);
    for index in 0..total {
        let threshold = config.thresholds[index / config.segment_length];
        let features = Vector::from_vec(vec![
            feature_rng.gen_range(0.0..10.0),
            feature_rng.gen_range(0.0..10.0),
            feature_rng.gen_range(0.0..10.0),
        ])?;
        let clean = usize::from(features.get(0) + features.get(1) < threshold);
        let flip = noise_rng.gen_bool(config.noise_fraction);
        let label = if flip { 1 - clean } else { clean };
        examples.push(StreamExample { features, label, index });
    }
    Ok(examples)
}

/// Rotating-hyperplane stream: features uniform on [0, 1)^dim, labeled 1
/// when their dot product with a hidden weight vector exceeds half the
/// weight sum. After each example every weight receives zero-mean Gaussian
/// motion with standard deviation `drift_magnitude`, so the boundary
/// wanders gradually; zero magnitude keeps it fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperplaneConfig {
    pub dim: usize,
    pub count: usize,
    pub drift_magnitude: f64,
    pub seed: u64,
}

pub fn hyperplane_generate(config: &HyperplaneConfig) -> Result<Vec<StreamExample>> {
    if config.dim == 0 {
        return Err(AoilError::Config("hyperplane dimension must be positive".into()));
    }
    if !(config.drift_magnitude >= 0.0) {
        return Err(AoilError::Config(format!(
            "drift magnitude must be nonnegative, got {}",
            config.drift_magnitude
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0));
    let mut weights = Vector::from_vec((0..config.dim).map(|_| rng.gen_range(0.0..1.0)).collect())?;
    let motion = if config.drift_magnitude > 0.0 {
        Some(
            Normal::new(0.0, config.drift_magnitude)
                .map_err(|e| AoilError::Config(format!("bad drift magnitude: {e}")))?,
        )
    } else {
        None
    };
    let mut examples = Vec::with_capacity(config.count);
    for index in 0..config.count {
        let features =
            Vector::from_vec((0..config.dim).map(|_| rng.gen_range(0.0..1.0)).collect())?;
        let label = hyperplane_label(&features, &weights)?;
        examples.push(StreamExample { features, label, index });
        if let Some(normal) = &motion {
            for w in weights.data_mut() {
                *w += normal.sample(&mut rng);
            }
        }
    }
    Ok(examples)
}

/// The hidden labeling rule of the hyperplane stream.
pub fn hyperplane_label(features: &Vector, weights: &Vector) -> Result<usize> {
    let threshold = weights.data().iter().sum::<f64>() / 2.0;
    Ok(usize::from(features.dot(weights)? > threshold))
}

/// Add zero-mean Gaussian noise of the given variance to the features of a
/// random fraction of examples, in place. Labels are untouched. Returns how
/// many examples were perturbed.
pub fn inject_noise(
    examples: &mut [StreamExample],
    fraction: f64,
    variance: f64,
    seed: u64,
) -> Result<usize> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(AoilError::Config(format!(
            "noise fraction must lie in [0, 1], got {fraction}"
        )));
    }
    if !variance.is_finite() || variance < 0.0 {
        return Err(AoilError::Config(format!(
            "noise variance must be finite and nonnegative, got {variance}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, variance.sqrt())
        .map_err(|e| AoilError::Config(format!("bad noise distribution: {e}")))?;
    let mut perturbed = 0;
    for example in examples.iter_mut() {
        if rng.gen_bool(fraction) {
            for value in example.features.data_mut() {
                *value += normal.sample(&mut rng);
            }
            perturbed += 1;
        }
    }
    Ok(perturbed)
}

/// A delimited file parsed into a stream, with the original class names in
/// first-appearance order (class k in the stream is `label_names[k]`).
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedStream {
    pub examples: Vec<StreamExample>,
    pub label_names: Vec<String>,
    pub had_header: bool,
}

/// Load a delimited text file as a stream. The label lives in
/// `label_column` (default: the last column); every other column must be a
/// finite number. With `auto_header`, the first line is treated as a
/// header when any of its feature fields fails to parse as a number.
/// Labels may be arbitrary strings and are mapped to class indices in
/// first-appearance order. Errors cite 1-based file line numbers.
pub fn load_delimited(
    path: &Path,
    label_column: Option<usize>,
    delimiter: char,
    auto_header: bool,
) -> Result<LoadedStream> {
    let mut content = String::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut content))
        .map_err(|e| AoilError::io(path.display().to_string(), e))?;
    let mut examples = Vec::new();
    let mut label_names: Vec<String> = Vec::new();
    let mut had_header = false;
    let mut columns: Option<usize> = None;
    let mut label_index = 0;
    let mut first_data_line = true;
    for (line_number, line) in content.lines().enumerate() {
        let row = line_number + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(delimiter).collect();
        if fields.len() < 2 {
            return Err(AoilError::Data {
                row,
                message: format!(
                    "need at least one feature and a label, got {} field(s)",
                    fields.len()
                ),
            });
        }
        match columns {
            None => {
                columns = Some(fields.len());
                let candidate = label_column.unwrap_or(fields.len() - 1);
                if candidate >= fields.len() {
                    return Err(AoilError::Data {
                        row,
                        message: format!(
                            "label column {candidate} out of range for {} fields",
                            fields.len()
                        ),
                    });
                }
                label_index = candidate;
            }
            Some(expected) if fields.len() != expected => {
                return Err(AoilError::Data {
                    row,
                    message: format!("expected {expected} fields, got {}", fields.len()),
                });
            }
            Some(_) => {}
        }
        if first_data_line && auto_header {
            let header_like = fields
                .iter()
                .enumerate()
                .any(|(i, f)| i != label_index && f.trim().parse::<f64>().is_err());
            if header_like {
                had_header = true;
                first_data_line = false;
                continue;
            }
        }
        first_data_line = false;
        let mut features = Vec::with_capacity(fields.len() - 1);
        for (i, field) in fields.iter().enumerate() {
            if i == label_index {
                continue;
            }
            let value: f64 = field.trim().parse().map_err(|_| AoilError::Data {
                row,
                message: format!("field {} ('{}') is not a number", i + 1, field.trim()),
            })?;
            if !value.is_finite() {
                return Err(AoilError::Data {
                    row,
                    message: format!("field {} is not finite", i + 1),
                });
            }
            features.push(value);
        }
        let label_text = fields[label_index].trim().to_string();
        let label = match label_names.iter().position(|n| n == &label_text) {
            Some(k) => k,
            None => {
                label_names.push(label_text);
                label_names.len() - 1
            }
        };
        let index = examples.len();
        examples.push(StreamExample { features: Vector::from_vec(features)?, label, index });
    }
    Ok(LoadedStream { examples, label_names, had_header })
}

/// Streaming per-feature standardization. Each call folds the incoming
/// example into the running mean and variance first, then returns the
/// example centered and scaled by the statistics as of that moment, so the
/// output never depends on later examples. Variances are floored at 1e-8;
/// in particular the first example always maps to the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineStandardizer {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl OnlineStandardizer {
    pub fn new(dim: usize) -> Result<OnlineStandardizer> {
        if dim == 0 {
            return Err(AoilError::Dimension("standardizer needs at least one feature".into()));
        }
        Ok(OnlineStandardizer { count: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Fold in `x` and return its standardized form.
    pub fn normalize(&mut self, x: &Vector) -> Result<Vector> {
        if x.dim() != self.mean.len() {
            return Err(AoilError::Dimension(format!(
                "standardizer has {} features, example has {}",
                self.mean.len(),
                x.dim()
            )));
        }
        self.count += 1;
        let n = self.count as f64;
        let mut out = Vec::with_capacity(x.dim());
        for (d, value) in x.data().iter().enumerate() {
            let delta = value - self.mean[d];
            self.mean[d] += delta / n;
            self.m2[d] += delta * (value - self.mean[d]);
            let variance = (self.m2[d] / n).max(1e-8);
            out.push((value - self.mean[d]) / variance.sqrt());
        }
        Vector::from_vec(out)
    }

    /// Population variance of feature `d` seen so far (before flooring).
    pub fn variance(&self, d: usize) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.m2[d] / self.count as f64
        }
    }

    pub fn mean(&self, d: usize) -> f64 {
        self.mean[d]
    }
}

/// How the run pipeline conditions features before the network sees them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingKind {
    /// Online z-scores from running mean and variance.
    Standardize,
    /// Online squashing into [0, 1] from running extrema.
    MinMax,
    /// Features pass through untouched.
    None,
}

impl ScalingKind {
    pub fn parse(text: &str) -> Result<ScalingKind> {
        match text {
            "standardize" => Ok(ScalingKind::Standardize),
            "minmax" => Ok(ScalingKind::MinMax),
            "none" => Ok(ScalingKind::None),
            other => Err(AoilError::Config(format!(
                "unknown scaling '{other}' (expected standardize, minmax, or none)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScalingKind::Standardize => "standardize",
            ScalingKind::MinMax => "minmax",
            ScalingKind::None => "none",
        }
    }
}

/// Causal feature conditioner for the run pipeline. Every variant folds
/// the current example into its statistics before transforming it, so the
/// first example of a stream maps to the zero vector and no statistic ever
/// depends on unseen data.
#[derive(Debug, Clone)]
pub struct FeatureScaler {
    kind: ScalingKind,
    standardizer: Option<OnlineStandardizer>,
    low: Vec<f64>,
    high: Vec<f64>,
    seen: bool,
}

impl FeatureScaler {
    pub fn new(kind: ScalingKind, dim: usize) -> Result<FeatureScaler> {
        if dim == 0 {
            return Err(AoilError::Dimension("scaler needs at least one feature".into()));
        }
        let standardizer = match kind {
            ScalingKind::Standardize => Some(OnlineStandardizer::new(dim)?),
            _ => None,
        };
        Ok(FeatureScaler {
            kind,
            standardizer,
            low: vec![0.0; dim],
            high: vec![0.0; dim],
            seen: false,
        })
    }

    pub fn kind(&self) -> ScalingKind {
        self.kind
    }

    pub fn transform(&mut self, x: &Vector) -> Result<Vector> {
        match self.kind {
            ScalingKind::Standardize => {
                self.standardizer.as_mut().expect("standardize variant").normalize(x)
            }
            ScalingKind::None => {
                if x.dim() != self.low.len() {
                    return Err(AoilError::Dimension(format!(
                        "scaler has {} features, example has {}",
                        self.low.len(),
                        x.dim()
                    )));
                }
                Ok(x.clone())
            }
            ScalingKind::MinMax => {
                if x.dim() != self.low.len() {
                    return Err(AoilError::Dimension(format!(
                        "scaler has {} features, example has {}",
                        self.low.len(),
                        x.dim()
                    )));
                }
                if !self.seen {
                    self.low.copy_from_slice(x.data());
                    self.high.copy_from_slice(x.data());
                    self.seen = true;
                } else {
                    for (d, value) in x.data().iter().enumerate() {
                        self.low[d] = self.low[d].min(*value);
                        self.high[d] = self.high[d].max(*value);
                    }
                }
                let mut out = Vec::with_capacity(x.dim());
                for (d, value) in x.data().iter().enumerate() {
                    let range = (self.high[d] - self.low[d]).max(1e-8);
                    out.push((value - self.low[d]) / range);
                }
                Vector::from_vec(out)
            }
        }
    }
}
