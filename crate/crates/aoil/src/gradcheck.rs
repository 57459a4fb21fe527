//! Central-difference verification of the hand-written backward pass.
//!
//! Every parameter tensor is checked coordinate by coordinate against
//! `(L(p + step) - L(p - step)) / (2 step)`. Encoder tensors are
//! finite-differenced with the alignment vector pinned to its base value,
//! because that is the convention the backward pass applies to them; all
//! other tensors use the ordinary forward pass.
//!
//! ReLU activations make the loss piecewise-smooth, so instances for
//! checking are drawn by rejection: redraw until every pre-activation in
//! the encoder and decoder sits clear of zero and the latent has
//! meaningful norm. Central differences are then two-sided-consistent at
//! the chosen step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{AoilError, Result};
use crate::learner::{
    backward, forward, forward_frozen_alignment, ModelDims, ModelState, TensorId,
};
use crate::linalg::Vector;

/// Worst coordinate found in one tensor.
#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub tensor: TensorId,
    /// Largest relative error over the tensor's coordinates.
    pub max_rel_err: f64,
    /// Flat index of that coordinate.
    pub worst_index: usize,
    /// Analytic gradient at that coordinate.
    pub analytic: f64,
    /// Central-difference estimate at that coordinate.
    pub numeric: f64,
}

/// Outcome of checking every tensor of one model on one example.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }

    /// The tensor holding the overall worst coordinate.
    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// Compare analytic gradients against central differences for every
/// trainable tensor (the memory bank is skipped when disabled).
pub fn check_gradients(
    model: &ModelState,
    x: &Vector,
    y: &Vector,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    check_gradients_impl(model, x, y, step, tolerance, None)
}

/// Same check, but with one analytic gradient deliberately damaged first.
/// A healthy checker must fail this; it exists so the checker itself can
/// be validated end to end.
pub fn check_gradients_corrupted(
    model: &ModelState,
    x: &Vector,
    y: &Vector,
    step: f64,
    tolerance: f64,
    victim: TensorId,
) -> Result<GradCheckReport> {
    check_gradients_impl(model, x, y, step, tolerance, Some(victim))
}

fn check_gradients_impl(
    model: &ModelState,
    x: &Vector,
    y: &Vector,
    step: f64,
    tolerance: f64,
    victim: Option<TensorId>,
) -> Result<GradCheckReport> {
    if !(step > 0.0) || !(tolerance > 0.0) {
        return Err(AoilError::Config(format!(
            "gradcheck needs positive step and tolerance, got {step} and {tolerance}"
        )));
    }
    let base = forward(x, y, model)?;
    let alignment = base.fusion.alignment.clone();
    let mut analytic = backward(&base, model)?;
    if let Some(id) = victim {
        if id == TensorId::Memory && !model.memory_enabled {
            return Err(AoilError::Config(
                "cannot corrupt the memory gradient of a memory-disabled model".into(),
            ));
        }
        let data = analytic.tensor_mut(id);
        data[0] += 0.5 + data[0].abs();
    }

    let mut work = model.clone();
    let mut tensors = Vec::new();
    let mut overall = 0.0_f64;
    for id in TensorId::all() {
        if id == TensorId::Memory && !model.memory_enabled {
            continue;
        }
        let frozen = matches!(
            id,
            TensorId::EncoderWeight(_) | TensorId::EncoderBias(_) | TensorId::EncoderSkip
        );
        let pinned = frozen.then_some(&alignment);
        let len = model.tensor_data(id).len();
        let mut check = TensorCheck {
            tensor: id,
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: analytic.tensor(id)[0],
            numeric: 0.0,
        };
        for i in 0..len {
            let original = work.tensor_data(id)[i];
            work.tensor_data_mut(id)[i] = original + step;
            let plus = eval_loss(&work, x, y, pinned)?;
            work.tensor_data_mut(id)[i] = original - step;
            let minus = eval_loss(&work, x, y, pinned)?;
            work.tensor_data_mut(id)[i] = original;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.tensor(id)[i];
            let rel = (a - numeric).abs() / numeric.abs().max(1e-8);
            if rel > check.max_rel_err {
                check.max_rel_err = rel;
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        overall = overall.max(check.max_rel_err);
        tensors.push(check);
    }
    Ok(GradCheckReport { tensors, max_rel_err: overall, tolerance })
}

fn eval_loss(
    model: &ModelState,
    x: &Vector,
    y: &Vector,
    pinned_alignment: Option<&Vector>,
) -> Result<f64> {
    let trace = match pinned_alignment {
        Some(a) => forward_frozen_alignment(x, y, model, a)?,
        None => forward(x, y, model)?,
    };
    Ok(trace.losses.total)
}

/// Draw a model-and-example instance suitable for finite differencing:
/// deterministic in `seed`, redrawn until no pre-activation sits within
/// 1e-3 of a ReLU kink and the latent norm exceeds 1e-2.
pub fn random_instance(dims: ModelDims, seed: u64) -> Result<(ModelState, Vector, Vector)> {
    random_instance_impl(dims, seed, true)
}

/// Instance drawn for a memory-disabled model; the kink margins are
/// verified on the configuration that will actually be checked.
pub fn random_instance_without_memory(
    dims: ModelDims,
    seed: u64,
) -> Result<(ModelState, Vector, Vector)> {
    random_instance_impl(dims, seed, false)
}

fn random_instance_impl(
    dims: ModelDims,
    seed: u64,
    memory_enabled: bool,
) -> Result<(ModelState, Vector, Vector)> {
    for attempt in 0..10_000_u64 {
        let attempt_seed =
            seed.wrapping_add(attempt.wrapping_mul(0x9e3779b97f4a7c15)).wrapping_add(1);
        let mut rng = ChaCha8Rng::seed_from_u64(attempt_seed);
        let model_seed: u64 = rng.gen();
        let model = ModelState::new(dims, 0.01, 2e-4, 1e-12, model_seed)?
            .with_memory_enabled(memory_enabled);
        let x = Vector::from_vec((0..dims.input).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let y = Vector::one_hot(dims.classes, rng.gen_range(0..dims.classes))?;
        if instance_is_smooth(&model, &x, &y)? {
            return Ok((model, x, y));
        }
    }
    Err(AoilError::Contract(format!(
        "no kink-free instance found for dims {dims:?} under seed {seed}"
    )))
}

fn instance_is_smooth(model: &ModelState, x: &Vector, y: &Vector) -> Result<bool> {
    let trace = forward(x, y, model)?;
    let mut margin = f64::INFINITY;
    for pre in &trace.encode.pre {
        for z in pre.data() {
            margin = margin.min(z.abs());
        }
    }
    for pre in &trace.decode.pre {
        for z in pre.data() {
            margin = margin.min(z.abs());
        }
    }
    Ok(margin > 1e-3 && trace.encode.h[5].norm() > 1e-2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_dims() -> ModelDims {
        ModelDims { input: 4, hidden: 6, classes: 2, memory_units: 3, attention: 5 }
    }

    #[test]
    fn analytic_gradients_match_central_differences() {
        for seed in [0_u64, 1] {
            let (model, x, y) = random_instance(check_dims(), seed).unwrap();
            let report = check_gradients(&model, &x, &y, 1e-5, 1e-4).unwrap();
            assert_eq!(report.tensors.len(), 31);
            assert!(
                report.passed(),
                "seed {seed}: worst {:?}",
                report.worst().map(|w| (w.tensor.name(), w.max_rel_err, w.analytic, w.numeric))
            );
        }
    }

    #[test]
    fn gradients_also_match_with_the_memory_disabled() {
        let (model, x, y) = random_instance_without_memory(check_dims(), 2).unwrap();
        let report = check_gradients(&model, &x, &y, 1e-5, 1e-4).unwrap();
        assert_eq!(report.tensors.len(), 30);
        assert!(
            report.passed(),
            "worst {:?}",
            report.worst().map(|w| (w.tensor.name(), w.max_rel_err))
        );
    }

    #[test]
    fn a_corrupted_gradient_is_caught() {
        let (model, x, y) = random_instance(check_dims(), 3).unwrap();
        for victim in [
            TensorId::EncoderWeight(3),
            TensorId::Memory,
            TensorId::AttentionProj,
            TensorId::ClassifierBias,
        ] {
            let report = check_gradients_corrupted(&model, &x, &y, 1e-5, 1e-4, victim).unwrap();
            assert!(!report.passed(), "corruption of {} went unnoticed", victim.name());
            assert_eq!(report.worst().unwrap().tensor, victim);
        }
    }

    #[test]
    fn instance_drawing_is_deterministic() {
        let (a_model, a_x, a_y) = random_instance(check_dims(), 7).unwrap();
        let (b_model, b_x, b_y) = random_instance(check_dims(), 7).unwrap();
        assert_eq!(a_model, b_model);
        assert_eq!(a_x, b_x);
        assert_eq!(a_y, b_y);
    }

    #[test]
    fn drawn_instances_respect_the_kink_margin() {
        let (model, x, y) = random_instance(check_dims(), 11).unwrap();
        let trace = forward(&x, &y, &model).unwrap();
        let mut margin = f64::INFINITY;
        for pre in trace.encode.pre.iter().chain(trace.decode.pre.iter()) {
            for z in pre.data() {
                margin = margin.min(z.abs());
            }
        }
        assert!(margin > 1e-3);
        assert!(trace.encode.h[5].norm() > 1e-2);
    }

    #[test]
    fn rejects_nonpositive_step_or_tolerance() {
        let (model, x, y) = random_instance(check_dims(), 4).unwrap();
        assert!(check_gradients(&model, &x, &y, 0.0, 1e-4).is_err());
        assert!(check_gradients(&model, &x, &y, 1e-5, 0.0).is_err());
    }
}
