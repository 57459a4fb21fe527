//! Command-line surface: generate synthetic streams, run a learner
//! prequentially over a stream file, and verify gradients.
//!
//! Every run writes its artifacts into one output directory: the exact
//! configuration echo, a per-example trace, summary metrics, the drift
//! event log, and a checkpoint of the final model. Wall-clock duration is
//! printed to stdout only, so the files produced by a run are bitwise
//! reproducible.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use crate::config::{Mode, RunConfig};
use crate::drift::{write_event_log, DriftController, DriftEvent};
use crate::error::{AoilError, Result};
use crate::eval::{ogd_baseline, prequential_run, PrequentialConfig, RunReport};
use crate::gradcheck::{
    check_gradients, check_gradients_corrupted, random_instance, random_instance_without_memory,
};
use crate::learner::{save_checkpoint, ModelDims, ModelState, NoiseConfig, TensorId};
use crate::streams::{
    derive_seed, hyperplane_generate, inject_noise, load_delimited, sea_generate, HyperplaneConfig,
    ScalingKind, SeaConfig, StreamExample,
};

#[derive(Parser, Debug)]
#[command(name = "aoil", about = "Memory-augmented online learner for drifting data streams")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Write a synthetic labeled stream to a CSV file
    Generate(GenerateArgs),
    /// Learn prequentially over a stream file and write run artifacts
    Run(RunArgs),
    /// Compare analytic gradients against central differences
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Stream family: "sea" (threshold-sum segments) or "hyperplane"
    #[arg(long)]
    pub stream: String,
    /// Output directory (default: <stream>-<unix time>)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// sea: comma-separated per-segment thresholds
    #[arg(long, default_value = "4,7,4,7")]
    pub thresholds: String,
    /// sea: examples per segment
    #[arg(long, default_value_t = 12_500)]
    pub segment_length: usize,
    /// sea: label flip probability
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// hyperplane: feature count
    #[arg(long, default_value_t = 10)]
    pub dim: usize,
    /// hyperplane: stream length
    #[arg(long, default_value_t = 50_000)]
    pub count: usize,
    /// hyperplane: per-example Gaussian weight motion
    #[arg(long, default_value_t = 0.0)]
    pub drift: f64,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Delimited stream file (features plus one label column)
    #[arg(long)]
    pub data: PathBuf,
    /// Configuration file of key = value lines
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (default: run-<unix time>)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Column holding the label (default: the last column)
    #[arg(long)]
    pub label_column: Option<usize>,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    /// Treat a non-numeric first line as a header
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub auto_header: bool,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub memory_units: Option<usize>,
    #[arg(long)]
    pub attention_dim: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub shrink_epsilon: Option<f64>,
    #[arg(long)]
    pub window_capacity: Option<usize>,
    #[arg(long)]
    pub hard_buffer_capacity: Option<usize>,
    #[arg(long)]
    pub replay_every: Option<usize>,
    #[arg(long)]
    pub noise_variance: Option<f64>,
    /// Share of training examples the denoising variant corrupts
    #[arg(long)]
    pub noise_fraction: Option<f64>,
    /// Perturb this fraction of loaded examples with Gaussian feature noise
    #[arg(long)]
    pub inject_fraction: Option<f64>,
    #[arg(long)]
    pub inject_variance: Option<f64>,
    #[arg(long)]
    pub mean_threshold: Option<f64>,
    #[arg(long)]
    pub std_threshold: Option<f64>,
    /// Feature conditioning: "minmax", "standardize", or "none"
    #[arg(long)]
    pub scaling: Option<String>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Central-difference step
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Maximum accepted relative error
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Damage this tensor's analytic gradient first, to prove detection
    #[arg(long)]
    pub corrupt: Option<String>,
    #[arg(long, default_value_t = 6)]
    pub input_dim: usize,
    #[arg(long, default_value_t = 10)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 5)]
    pub memory_units: usize,
    #[arg(long, default_value_t = 7)]
    pub attention_dim: usize,
    /// Check the memory-disabled variant
    #[arg(long, default_value_t = false)]
    pub no_memory: bool,
}

/// Parse the process arguments, dispatch, and map errors to exit code 1.
pub fn cli_main() -> i32 {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Generate(args) => {
            cmd_generate(&args)?;
            Ok(0)
        }
        Command::Run(args) => {
            cmd_run(&args)?;
            Ok(0)
        }
        Command::Gradcheck(args) => Ok(if cmd_gradcheck(&args)? { 0 } else { 1 }),
    }
}

fn unix_timestamp() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| AoilError::io(path.display().to_string(), e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| AoilError::io(path.display().to_string(), e))
}

fn stream_csv(examples: &[StreamExample]) -> Result<String> {
    let dim = examples
        .first()
        .map(|e| e.features.dim())
        .ok_or_else(|| AoilError::Contract("cannot write an empty stream".into()))?;
    let mut out = String::new();
    for d in 0..dim {
        out.push_str(&format!("f{d},"));
    }
    out.push_str("label\n");
    for example in examples {
        for value in example.features.data() {
            out.push_str(&value.to_string());
            out.push(',');
        }
        out.push_str(&example.label.to_string());
        out.push('\n');
    }
    Ok(out)
}

/// Generate a synthetic stream. Returns the output directory.
pub fn cmd_generate(args: &GenerateArgs) -> Result<PathBuf> {
    let (examples, echo) = match args.stream.as_str() {
        "sea" => {
            let thresholds: Vec<f64> = args
                .thresholds
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|_| AoilError::Config(format!("bad threshold '{}'", t.trim())))
                })
                .collect::<Result<_>>()?;
            let config = SeaConfig {
                thresholds: thresholds.clone(),
                segment_length: args.segment_length,
                noise_fraction: args.noise,
                seed: args.seed,
            };
            let examples = sea_generate(&config)?;
            let echo = format!(
                "stream = sea\nseed = {}\nthresholds = {}\nsegment_length = {}\nnoise = {}\n",
                args.seed,
                thresholds.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
                args.segment_length,
                args.noise
            );
            (examples, echo)
        }
        "hyperplane" => {
            let config = HyperplaneConfig {
                dim: args.dim,
                count: args.count,
                drift_magnitude: args.drift,
                seed: args.seed,
            };
            let examples = hyperplane_generate(&config)?;
            let echo = format!(
                "stream = hyperplane\nseed = {}\ndim = {}\ncount = {}\ndrift = {}\n",
                args.seed, args.dim, args.count, args.drift
            );
            (examples, echo)
        }
        other => {
            return Err(AoilError::Config(format!(
                "unknown stream '{other}' (expected sea or hyperplane)"
            )))
        }
    };
    let out_dir = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}-{}", args.stream, unix_timestamp())));
    ensure_dir(&out_dir)?;
    write_file(&out_dir.join("stream.csv"), &stream_csv(&examples)?)?;
    write_file(&out_dir.join("generate_config.txt"), &echo)?;
    println!("wrote {} examples to {}", examples.len(), out_dir.join("stream.csv").display());
    Ok(out_dir)
}

fn merged_config(args: &RunArgs) -> Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &args.mode {
        config.mode = Mode::parse(v)?;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = args.hidden_dim {
        config.hidden_dim = v;
    }
    if let Some(v) = args.memory_units {
        config.memory_units = v;
    }
    if let Some(v) = args.attention_dim {
        config.attention_dim = v;
    }
    if let Some(v) = args.lambda {
        config.lambda = v;
    }
    if let Some(v) = args.shrink_epsilon {
        config.shrink_epsilon = v;
    }
    if let Some(v) = args.window_capacity {
        config.window_capacity = v;
    }
    if let Some(v) = args.hard_buffer_capacity {
        config.hard_buffer_capacity = v;
    }
    if let Some(v) = args.replay_every {
        config.replay_every = v;
    }
    if let Some(v) = args.noise_variance {
        config.noise_variance = v;
    }
    if let Some(v) = args.noise_fraction {
        config.noise_fraction = v;
    }
    if let Some(v) = args.inject_fraction {
        config.inject_fraction = v;
    }
    if let Some(v) = args.inject_variance {
        config.inject_variance = v;
    }
    if let Some(v) = args.mean_threshold {
        config.mean_threshold = v;
    }
    if let Some(v) = args.std_threshold {
        config.std_threshold = v;
    }
    if let Some(v) = &args.scaling {
        config.scaling = ScalingKind::parse(v)?;
    }
    config.validate()?;
    Ok(config)
}

fn summary_text(report: &RunReport) -> String {
    let m = &report.metrics;
    let stable = report.drift_events.iter().filter(|e| e.event == DriftEvent::StableFound).count();
    let drifts =
        report.drift_events.iter().filter(|e| e.event == DriftEvent::DriftDetected).count();
    let mut out = String::new();
    out.push_str(&format!("examples = {}\n", m.examples));
    out.push_str(&format!("accuracy = {}\n", m.accuracy));
    out.push_str(&format!("precision = {}\n", m.precision));
    out.push_str(&format!("recall = {}\n", m.recall));
    out.push_str(&format!("f1 = {}\n", m.f1));
    out.push_str(&format!("auc = {}\n", m.auc));
    for (i, acc) in report.stage_accuracies.iter().enumerate() {
        out.push_str(&format!("stage_accuracy_{} = {}\n", i + 1, acc));
    }
    for (i, delta) in report.stage_deltas.iter().enumerate() {
        out.push_str(&format!("stage_delta_{} = {}\n", i + 1, delta));
    }
    out.push_str(&format!("stable_events = {stable}\n"));
    out.push_str(&format!("drift_events = {drifts}\n"));
    out
}

fn trace_csv(report: &RunReport) -> String {
    let mut out = String::from(
        "index,label,predicted,score,correct,prediction_loss,reconstruction_loss,entropy,total_loss,cumulative_accuracy,windowed_accuracy\n",
    );
    let mut correct_so_far = 0usize;
    let mut window: VecDeque<bool> = VecDeque::with_capacity(100);
    let mut window_correct = 0usize;
    for (t, o) in report.outcomes.iter().enumerate() {
        if o.correct {
            correct_so_far += 1;
        }
        if window.len() == 100 && window.pop_front() == Some(true) {
            window_correct -= 1;
        }
        window.push_back(o.correct);
        if o.correct {
            window_correct += 1;
        }
        let cumulative = correct_so_far as f64 / (t + 1) as f64;
        let windowed = window_correct as f64 / window.len() as f64;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            o.index,
            o.label,
            o.predicted,
            o.score,
            u8::from(o.correct),
            o.losses.prediction,
            o.losses.reconstruction,
            o.losses.entropy,
            o.losses.total,
            cumulative,
            windowed
        ));
    }
    out
}

/// Run one learner over a stream file and write all artifacts. Returns the
/// output directory.
pub fn cmd_run(args: &RunArgs) -> Result<PathBuf> {
    let config = merged_config(args)?;
    let mut loaded =
        load_delimited(&args.data, args.label_column, args.delimiter, args.auto_header)?;
    if config.inject_fraction > 0.0 {
        inject_noise(
            &mut loaded.examples,
            config.inject_fraction,
            config.inject_variance,
            derive_seed(config.seed, 2),
        )?;
    }
    if loaded.examples.is_empty() {
        return Err(AoilError::Config(format!("{} holds no examples", args.data.display())));
    }
    let classes = loaded.label_names.len();
    if classes < 2 {
        return Err(AoilError::Config(format!(
            "{} holds a single class ('{}'); learning needs at least two",
            args.data.display(),
            loaded.label_names[0]
        )));
    }
    let input_dim = loaded.examples[0].features.dim();

    let out_dir = args
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(format!("run-{}", unix_timestamp())));
    ensure_dir(&out_dir)?;
    write_file(&out_dir.join("config_echo.txt"), &config.to_echo_string())?;

    let report = if config.mode.is_baseline() {
        ogd_baseline(&loaded.examples, classes, input_dim, config.learning_rate)?
    } else {
        let dims = ModelDims {
            input: input_dim,
            hidden: config.hidden_dim,
            classes,
            memory_units: config.memory_units,
            attention: config.attention_dim,
        };
        let mut model = ModelState::new(
            dims,
            config.learning_rate,
            config.lambda,
            config.shrink_epsilon,
            derive_seed(config.seed, 0),
        )?
        .with_memory_enabled(config.mode.memory_enabled());
        let mut controller = if config.mode.uses_controller() {
            Some(DriftController::new(config.mean_threshold, config.std_threshold)?)
        } else {
            None
        };
        let prequential = PrequentialConfig {
            window_capacity: config.window_capacity,
            hard_buffer_capacity: config.hard_buffer_capacity,
            replay_every: if config.mode.uses_replay() { config.replay_every } else { 0 },
            denoising: if config.mode.denoising() {
                NoiseConfig::gaussian(config.noise_variance)?
                    .with_fraction(config.noise_fraction)?
            } else {
                NoiseConfig::disabled()
            },
            scaling: config.scaling,
            seed: config.seed,
        };
        let report =
            prequential_run(&mut model, controller.as_mut(), &loaded.examples, &prequential)?;
        save_checkpoint(&model, &out_dir.join("model.ckpt"))?;
        report
    };

    write_file(&out_dir.join("summary.txt"), &summary_text(&report))?;
    write_file(&out_dir.join("trace.csv"), &trace_csv(&report))?;
    let mut event_log = Vec::new();
    write_event_log(&report.drift_events, &mut event_log)?;
    write_file(
        &out_dir.join("drift_events.csv"),
        std::str::from_utf8(&event_log).expect("event log is plain ASCII"),
    )?;

    println!(
        "mode={} examples={} accuracy={} auc={} drifts={} -> {}",
        config.mode.name(),
        report.metrics.examples,
        report.metrics.accuracy,
        report.metrics.auc,
        report.drift_events.iter().filter(|e| e.event == DriftEvent::DriftDetected).count(),
        out_dir.display()
    );
    println!("duration_ms = {}", report.duration.as_millis());
    Ok(out_dir)
}

/// Verify gradients on a freshly drawn instance; prints one line per
/// tensor and a final verdict. Returns whether the check passed.
pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<bool> {
    let dims = ModelDims {
        input: args.input_dim,
        hidden: args.hidden_dim,
        classes: args.classes,
        memory_units: args.memory_units,
        attention: args.attention_dim,
    };
    let (model, x, y) = if args.no_memory {
        random_instance_without_memory(dims, args.seed)?
    } else {
        random_instance(dims, args.seed)?
    };
    let report = match &args.corrupt {
        Some(name) => {
            let victim = TensorId::from_name(name).ok_or_else(|| {
                AoilError::Config(format!(
                    "unknown tensor '{name}'; valid names: {}",
                    TensorId::all().iter().map(|id| id.name()).collect::<Vec<_>>().join(", ")
                ))
            })?;
            check_gradients_corrupted(&model, &x, &y, args.step, args.tolerance, victim)?
        }
        None => check_gradients(&model, &x, &y, args.step, args.tolerance)?,
    };
    for check in &report.tensors {
        println!(
            "{:<20} max_rel_err = {:.3e} (analytic {:.6e}, numeric {:.6e})",
            check.tensor.name(),
            check.max_rel_err,
            check.analytic,
            check.numeric
        );
    }
    if report.passed() {
        println!(
            "PASS max_rel_err {:.3e} < tolerance {:.1e}",
            report.max_rel_err, report.tolerance
        );
    } else {
        println!(
            "FAIL max_rel_err {:.3e} >= tolerance {:.1e}",
            report.max_rel_err, report.tolerance
        );
    }
    Ok(report.passed())
}
