//! Run configuration: the mode switch, every tunable knob with its
//! default, a flat key-value file format, and a deterministic echo used to
//! stamp output directories with the exact settings of a run.

use std::path::{Path, PathBuf};

use crate::error::{AoilError, Result};
use crate::streams::ScalingKind;

/// Which learner variant a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Full system: memory, attention fusion, drift reaction, replay.
    Aoil,
    /// Full system with Gaussian input corruption during training.
    AoilDae,
    /// Autoencoder and attention fusion only: no memory bank, no drift reaction.
    OilBase,
    /// Full system with the memory bank disabled.
    AoilNoMemory,
    /// Multinomial logistic regression by online gradient descent.
    Ogd,
}

impl Mode {
    pub fn parse(text: &str) -> Result<Mode> {
        match text {
            "aoil" => Ok(Mode::Aoil),
            "aoil-dae" => Ok(Mode::AoilDae),
            "oil-base" => Ok(Mode::OilBase),
            "aoil-no-memory" => Ok(Mode::AoilNoMemory),
            "ogd" => Ok(Mode::Ogd),
            other => Err(AoilError::Config(format!(
                "unknown mode '{other}' (expected aoil, aoil-dae, oil-base, aoil-no-memory, or ogd)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Aoil => "aoil",
            Mode::AoilDae => "aoil-dae",
            Mode::OilBase => "oil-base",
            Mode::AoilNoMemory => "aoil-no-memory",
            Mode::Ogd => "ogd",
        }
    }

    /// Drift detection and reaction are active.
    pub fn uses_controller(self) -> bool {
        matches!(self, Mode::Aoil | Mode::AoilDae | Mode::AoilNoMemory)
    }

    /// Hard-example replay is active.
    pub fn uses_replay(self) -> bool {
        self != Mode::Ogd
    }

    pub fn denoising(self) -> bool {
        self == Mode::AoilDae
    }

    pub fn memory_enabled(self) -> bool {
        !matches!(self, Mode::AoilNoMemory | Mode::OilBase)
    }

    pub fn is_baseline(self) -> bool {
        self == Mode::Ogd
    }
}

/// Every knob of a run. Model shape fields that depend on the data
/// (feature and class counts) are derived from the stream, not configured.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub learning_rate: f64,
    pub hidden_dim: usize,
    pub memory_units: usize,
    pub attention_dim: usize,
    pub lambda: f64,
    pub shrink_epsilon: f64,
    pub window_capacity: usize,
    pub hard_buffer_capacity: usize,
    pub replay_every: usize,
    pub noise_variance: f64,
    /// Share of training examples the denoising variant corrupts; the rest
    /// pass through clean.
    pub noise_fraction: f64,
    /// Fraction of loaded examples to perturb with additive Gaussian
    /// feature noise before the run (0 disables injection).
    pub inject_fraction: f64,
    pub inject_variance: f64,
    pub mean_threshold: f64,
    pub std_threshold: f64,
    /// Feature conditioning in front of the network (the plain gradient
    /// descent baseline always consumes raw features).
    pub scaling: ScalingKind,
    /// Where artifacts go; never part of the echo, so runs differing only
    /// in destination produce identical artifacts.
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            mode: Mode::Aoil,
            seed: 0,
            learning_rate: 0.01,
            hidden_dim: 30,
            memory_units: 50,
            attention_dim: 30,
            lambda: 2e-4,
            shrink_epsilon: 1e-12,
            window_capacity: 10,
            hard_buffer_capacity: 5,
            replay_every: 50,
            noise_variance: 0.1,
            noise_fraction: 0.2,
            inject_fraction: 0.0,
            inject_variance: 0.1,
            mean_threshold: 0.2,
            std_threshold: 0.01,
            scaling: ScalingKind::MinMax,
            output_dir: None,
        }
    }
}

impl RunConfig {
    /// Parse a flat `key = value` file on top of the defaults. Blank lines
    /// and `#` comments are ignored; unknown keys are errors.
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let content = std::fs::read_to_string(path)
            .map_err(|e| AoilError::io(path.display().to_string(), e))?;
        RunConfig::parse_content(&content)
    }

    pub fn parse_content(content: &str) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        for (line_number, line) in content.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                AoilError::Config(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    line_number + 1
                ))
            })?;
            config.set(key.trim(), value.trim())?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Set one knob from its textual form; shared by the file parser and
    /// command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| AoilError::Config(format!("bad value '{value}' for {key}")))
        }
        match key {
            "mode" => self.mode = Mode::parse(value)?,
            "seed" => self.seed = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "memory_units" => self.memory_units = parse(key, value)?,
            "attention_dim" => self.attention_dim = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "shrink_epsilon" => self.shrink_epsilon = parse(key, value)?,
            "window_capacity" => self.window_capacity = parse(key, value)?,
            "hard_buffer_capacity" => self.hard_buffer_capacity = parse(key, value)?,
            "replay_every" => self.replay_every = parse(key, value)?,
            "noise_variance" => self.noise_variance = parse(key, value)?,
            "noise_fraction" => self.noise_fraction = parse(key, value)?,
            "inject_fraction" => self.inject_fraction = parse(key, value)?,
            "inject_variance" => self.inject_variance = parse(key, value)?,
            "mean_threshold" => self.mean_threshold = parse(key, value)?,
            "std_threshold" => self.std_threshold = parse(key, value)?,
            "scaling" => self.scaling = ScalingKind::parse(value)?,
            "output_dir" => self.output_dir = Some(PathBuf::from(value)),
            other => return Err(AoilError::Config(format!("unknown configuration key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(AoilError::Config(format!("{name} must be positive")))
            }
        };
        positive("hidden_dim", self.hidden_dim > 0)?;
        positive("memory_units", self.memory_units > 0)?;
        positive("attention_dim", self.attention_dim > 0)?;
        positive("window_capacity", self.window_capacity > 0)?;
        positive("hard_buffer_capacity", self.hard_buffer_capacity > 0)?;
        positive("shrink_epsilon", self.shrink_epsilon > 0.0)?;
        positive("mean_threshold", self.mean_threshold > 0.0)?;
        positive("std_threshold", self.std_threshold > 0.0)?;
        if !(self.learning_rate >= 0.0) {
            return Err(AoilError::Config("learning_rate must be nonnegative".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(AoilError::Config("lambda must be nonnegative".into()));
        }
        if !(self.noise_variance >= 0.0) {
            return Err(AoilError::Config("noise_variance must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_fraction) {
            return Err(AoilError::Config("noise_fraction must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.inject_fraction) {
            return Err(AoilError::Config("inject_fraction must lie in [0, 1]".into()));
        }
        if !(self.inject_variance >= 0.0) {
            return Err(AoilError::Config("inject_variance must be nonnegative".into()));
        }
        Ok(())
    }

    /// Deterministic settings dump, one `key = value` per line in a fixed
    /// order. Feeding it back through the parser reproduces the
    /// configuration. The output directory is deliberately omitted.
    pub fn to_echo_string(&self) -> String {
        let mut out = String::new();
        let mut push = |key: &str, value: String| {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        };
        push("mode", self.mode.name().to_string());
        push("seed", self.seed.to_string());
        push("learning_rate", self.learning_rate.to_string());
        push("hidden_dim", self.hidden_dim.to_string());
        push("memory_units", self.memory_units.to_string());
        push("attention_dim", self.attention_dim.to_string());
        push("lambda", self.lambda.to_string());
        push("shrink_epsilon", self.shrink_epsilon.to_string());
        push("window_capacity", self.window_capacity.to_string());
        push("hard_buffer_capacity", self.hard_buffer_capacity.to_string());
        push("replay_every", self.replay_every.to_string());
        push("noise_variance", self.noise_variance.to_string());
        push("noise_fraction", self.noise_fraction.to_string());
        push("inject_fraction", self.inject_fraction.to_string());
        push("inject_variance", self.inject_variance.to_string());
        push("mean_threshold", self.mean_threshold.to_string());
        push("std_threshold", self.std_threshold.to_string());
        push("scaling", self.scaling.name().to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let config = RunConfig::default();
        config.validate().unwrap();
        assert_eq!(config.mode, Mode::Aoil);
        assert_eq!(config.hidden_dim, 30);
        assert_eq!(config.memory_units, 50);
        assert_eq!(config.replay_every, 50);
    }

    #[test]
    fn every_mode_name_round_trips() {
        for mode in [Mode::Aoil, Mode::AoilDae, Mode::OilBase, Mode::AoilNoMemory, Mode::Ogd] {
            assert_eq!(Mode::parse(mode.name()).unwrap(), mode);
        }
        assert!(Mode::parse("alchemy").is_err());
    }

    #[test]
    fn mode_switches_agree_with_their_variants() {
        assert!(Mode::Aoil.uses_controller());
        assert!(!Mode::OilBase.uses_controller());
        assert!(!Mode::OilBase.memory_enabled());
        assert!(Mode::OilBase.uses_replay());
        assert!(Mode::AoilDae.denoising());
        assert!(!Mode::Aoil.denoising());
        assert!(!Mode::AoilNoMemory.memory_enabled());
        assert!(Mode::AoilNoMemory.uses_controller());
        assert!(!Mode::Ogd.uses_replay());
        assert!(Mode::Ogd.is_baseline());
    }

    #[test]
    fn parsing_overrides_defaults_and_tolerates_comments() {
        let content = "\
# experiment settings
mode = aoil-dae

seed = 17
learning_rate = 0.005
noise_variance = 0.2
scaling = standardize
";
        let config = RunConfig::parse_content(content).unwrap();
        assert_eq!(config.mode, Mode::AoilDae);
        assert_eq!(config.seed, 17);
        assert_eq!(config.learning_rate, 0.005);
        assert_eq!(config.noise_variance, 0.2);
        assert_eq!(config.scaling, ScalingKind::Standardize);
        // Untouched keys keep their defaults.
        assert_eq!(config.hidden_dim, 30);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(RunConfig::parse_content("learning_rat = 0.01\n").is_err());
        assert!(RunConfig::parse_content("seed = banana\n").is_err());
        assert!(RunConfig::parse_content("just some words\n").is_err());
        assert!(RunConfig::parse_content("window_capacity = 0\n").is_err());
        assert!(RunConfig::parse_content("learning_rate = -1\n").is_err());
        assert!(RunConfig::parse_content("scaling = sideways\n").is_err());
    }

    #[test]
    fn echo_round_trips_and_excludes_the_output_directory() {
        let mut config = RunConfig::default();
        config.set("mode", "aoil-no-memory").unwrap();
        config.set("seed", "99").unwrap();
        config.set("lambda", "0.0003").unwrap();
        config.set("output_dir", "/tmp/somewhere").unwrap();
        let echo = config.to_echo_string();
        assert!(!echo.contains("output_dir"));
        assert!(!echo.contains("somewhere"));
        let reparsed = RunConfig::parse_content(&echo).unwrap();
        let mut expected = config.clone();
        expected.output_dir = None;
        assert_eq!(reparsed, expected);
    }

    #[test]
    fn echo_is_stable_across_identical_configs() {
        assert_eq!(RunConfig::default().to_echo_string(), RunConfig::default().to_echo_string());
    }
}
