//! The full model: parameter state, forward pass, hand-written backward
//! pass, the online training step, input corruption for denoising mode,
//! and checkpointing.
//!
//! The loss is composite: prediction cross-entropy plus reconstruction
//! error plus a lambda-weighted entropy penalty on the memory addressing
//! weights. Gradient routing is deliberate and asymmetric:
//!
//! - encoder parameters receive the prediction gradient through the fused
//!   context with the alignment vector treated as a constant (so each
//!   hidden layer's share is scaled by its attention weight), plus the
//!   reconstruction/entropy gradient that flows back through the memory
//!   addressing path;
//! - attention parameters receive the full prediction gradient including
//!   the softmax-of-logits path;
//! - decoder parameters and memory slots receive only reconstruction and
//!   entropy gradients (the classifier reads encoder activations, so no
//!   prediction path exists to them);
//! - classifier parameters receive only the prediction gradient.
//!
//! Every parameter tensor is updated by its own Adam state.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autoencoder::{
    decode, encode, reconstruction_error, DecodeTrace, DecoderParams, EncodeTrace, EncoderParams,
};
use crate::error::{AoilError, Result};
use crate::fusion::{
    cross_entropy, fusion_forward, AttentionParams, ClassifierParams, FusionTrace,
};
use crate::linalg::{adam_step, xavier_init, AdamState, Matrix, Vector};
use crate::memory::{address, entropy_reg, read, shrink, MemoryModule};

/// Shape bundle for building a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
    pub memory_units: usize,
    pub attention: usize,
}

/// Identifies one parameter tensor. The fixed enumeration order defined by
/// [`TensorId::all`] drives optimizer-state layout, checkpoint layout, and
/// gradient-check reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorId {
    EncoderWeight(usize),
    EncoderBias(usize),
    EncoderSkip,
    DecoderWeight(usize),
    DecoderBias(usize),
    DecoderSkip,
    Memory,
    AttentionProj,
    AttentionScore,
    ClassifierWeight,
    ClassifierBias,
}

impl TensorId {
    /// Every tensor in a fixed, stable order.
    pub fn all() -> Vec<TensorId> {
        let mut ids = Vec::with_capacity(31);
        for l in 0..6 {
            ids.push(TensorId::EncoderWeight(l));
        }
        for l in 0..6 {
            ids.push(TensorId::EncoderBias(l));
        }
        ids.push(TensorId::EncoderSkip);
        for l in 0..6 {
            ids.push(TensorId::DecoderWeight(l));
        }
        for l in 0..6 {
            ids.push(TensorId::DecoderBias(l));
        }
        ids.push(TensorId::DecoderSkip);
        ids.push(TensorId::Memory);
        ids.push(TensorId::AttentionProj);
        ids.push(TensorId::AttentionScore);
        ids.push(TensorId::ClassifierWeight);
        ids.push(TensorId::ClassifierBias);
        ids
    }

    pub fn name(self) -> String {
        match self {
            TensorId::EncoderWeight(l) => format!("encoder.w{l}"),
            TensorId::EncoderBias(l) => format!("encoder.b{l}"),
            TensorId::EncoderSkip => "encoder.w_skip".into(),
            TensorId::DecoderWeight(l) => format!("decoder.w{l}"),
            TensorId::DecoderBias(l) => format!("decoder.b{l}"),
            TensorId::DecoderSkip => "decoder.w_skip".into(),
            TensorId::Memory => "memory.slots".into(),
            TensorId::AttentionProj => "attention.proj".into(),
            TensorId::AttentionScore => "attention.score".into(),
            TensorId::ClassifierWeight => "classifier.weight".into(),
            TensorId::ClassifierBias => "classifier.bias".into(),
        }
    }

    pub fn from_name(name: &str) -> Option<TensorId> {
        TensorId::all().into_iter().find(|id| id.name() == name)
    }

    fn index(self) -> usize {
        match self {
            TensorId::EncoderWeight(l) => l,
            TensorId::EncoderBias(l) => 6 + l,
            TensorId::EncoderSkip => 12,
            TensorId::DecoderWeight(l) => 13 + l,
            TensorId::DecoderBias(l) => 19 + l,
            TensorId::DecoderSkip => 25,
            TensorId::Memory => 26,
            TensorId::AttentionProj => 27,
            TensorId::AttentionScore => 28,
            TensorId::ClassifierWeight => 29,
            TensorId::ClassifierBias => 30,
        }
    }
}

/// One Adam state per parameter tensor, indexed by [`TensorId`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    slots: Vec<AdamState>,
}

impl OptimizerState {
    fn slot(&self, id: TensorId) -> &AdamState {
        &self.slots[id.index()]
    }

    fn slot_mut(&mut self, id: TensorId) -> &mut AdamState {
        &mut self.slots[id.index()]
    }
}

/// All trainable state plus the optimizer and the scalar hyperparameters
/// that travel with it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub dims: ModelDims,
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
    pub memory: MemoryModule,
    pub attention: AttentionParams,
    pub classifier: ClassifierParams,
    pub optimizer: OptimizerState,
    pub learning_rate: f64,
    /// When false the decoder consumes the latent directly and the memory
    /// bank is neither read nor trained; used by the no-memory ablations.
    pub memory_enabled: bool,
    /// Seed the parameters were drawn from, recorded for reproducibility.
    pub seed: u64,
}

impl ModelState {
    /// Build a fresh model: every weight matrix (including the memory
    /// slots and attention parameters) is Xavier-initialized from one
    /// seeded RNG in a fixed draw order; biases start at zero.
    pub fn new(
        dims: ModelDims,
        learning_rate: f64,
        lambda: f64,
        shrink_epsilon: f64,
        seed: u64,
    ) -> Result<ModelState> {
        if dims.input == 0 || dims.hidden == 0 || dims.memory_units == 0 || dims.attention == 0 {
            return Err(AoilError::Dimension(format!("model dims must be positive: {dims:?}")));
        }
        if dims.classes < 2 {
            return Err(AoilError::Dimension(format!(
                "model needs at least two classes, got {}",
                dims.classes
            )));
        }
        if !(learning_rate >= 0.0) {
            return Err(AoilError::Config(format!(
                "learning_rate must be nonnegative, got {learning_rate}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = EncoderParams::xavier(dims.input, dims.hidden, &mut rng)?;
        let decoder = DecoderParams::xavier(dims.input, dims.hidden, &mut rng)?;
        let memory =
            MemoryModule::xavier(dims.memory_units, dims.hidden, lambda, shrink_epsilon, &mut rng)?;
        let attention = AttentionParams {
            proj: xavier_init(dims.attention, dims.hidden, &mut rng)?,
            score: Vector::from_vec(xavier_init(dims.attention, 1, &mut rng)?.data().to_vec())?,
        };
        let classifier = ClassifierParams {
            weight: xavier_init(dims.hidden, dims.classes, &mut rng)?,
            bias: Vector::zeros(dims.classes)?,
        };
        let mut model = ModelState {
            dims,
            encoder,
            decoder,
            memory,
            attention,
            classifier,
            optimizer: OptimizerState { slots: Vec::new() },
            learning_rate,
            memory_enabled: true,
            seed,
        };
        model.optimizer.slots = TensorId::all()
            .into_iter()
            .map(|id| AdamState::new(model.tensor_data(id).len()))
            .collect();
        Ok(model)
    }

    pub fn with_memory_enabled(mut self, enabled: bool) -> ModelState {
        self.memory_enabled = enabled;
        self
    }

    pub fn lambda(&self) -> f64 {
        if self.memory_enabled {
            self.memory.lambda
        } else {
            0.0
        }
    }

    pub fn tensor_data(&self, id: TensorId) -> &[f64] {
        match id {
            TensorId::EncoderWeight(l) => self.encoder.layers[l].weight.data(),
            TensorId::EncoderBias(l) => self.encoder.layers[l].bias.data(),
            TensorId::EncoderSkip => self.encoder.skip_input.data(),
            TensorId::DecoderWeight(l) => self.decoder.layers[l].weight.data(),
            TensorId::DecoderBias(l) => self.decoder.layers[l].bias.data(),
            TensorId::DecoderSkip => self.decoder.skip_output.data(),
            TensorId::Memory => self.memory.slots.data(),
            TensorId::AttentionProj => self.attention.proj.data(),
            TensorId::AttentionScore => self.attention.score.data(),
            TensorId::ClassifierWeight => self.classifier.weight.data(),
            TensorId::ClassifierBias => self.classifier.bias.data(),
        }
    }

    pub fn tensor_data_mut(&mut self, id: TensorId) -> &mut [f64] {
        match id {
            TensorId::EncoderWeight(l) => self.encoder.layers[l].weight.data_mut(),
            TensorId::EncoderBias(l) => self.encoder.layers[l].bias.data_mut(),
            TensorId::EncoderSkip => self.encoder.skip_input.data_mut(),
            TensorId::DecoderWeight(l) => self.decoder.layers[l].weight.data_mut(),
            TensorId::DecoderBias(l) => self.decoder.layers[l].bias.data_mut(),
            TensorId::DecoderSkip => self.decoder.skip_output.data_mut(),
            TensorId::Memory => self.memory.slots.data_mut(),
            TensorId::AttentionProj => self.attention.proj.data_mut(),
            TensorId::AttentionScore => self.attention.score.data_mut(),
            TensorId::ClassifierWeight => self.classifier.weight.data_mut(),
            TensorId::ClassifierBias => self.classifier.bias.data_mut(),
        }
    }

    pub fn adam_state(&self, id: TensorId) -> &AdamState {
        self.optimizer.slot(id)
    }

    /// Zero the Adam moments and step counter for one tensor; used after a
    /// drift reset so stale momentum cannot corrupt restored or fresh
    /// weights.
    pub fn reset_optimizer(&mut self, id: TensorId) {
        self.optimizer.slot_mut(id).reset();
    }

    pub(crate) fn set_adam_state(&mut self, id: TensorId, state: AdamState) -> Result<()> {
        if state.len() != self.tensor_data(id).len() {
            return Err(AoilError::Dimension(format!(
                "adam state for {} has {} entries, tensor has {}",
                id.name(),
                state.len(),
                self.tensor_data(id).len()
            )));
        }
        *self.optimizer.slot_mut(id) = state;
        Ok(())
    }

    /// One Adam update per tensor. The memory bank is skipped entirely
    /// when disabled so the ablation leaves it bitwise untouched.
    pub fn apply_gradients(&mut self, grads: &Gradients) -> Result<()> {
        let lr = self.learning_rate;
        let memory_enabled = self.memory_enabled;
        let ModelState { encoder, decoder, memory, attention, classifier, optimizer, .. } = self;
        for l in 0..6 {
            adam_step(
                encoder.layers[l].weight.data_mut(),
                grads.encoder_weight[l].data(),
                optimizer.slot_mut(TensorId::EncoderWeight(l)),
                lr,
            )?;
            adam_step(
                encoder.layers[l].bias.data_mut(),
                grads.encoder_bias[l].data(),
                optimizer.slot_mut(TensorId::EncoderBias(l)),
                lr,
            )?;
            adam_step(
                decoder.layers[l].weight.data_mut(),
                grads.decoder_weight[l].data(),
                optimizer.slot_mut(TensorId::DecoderWeight(l)),
                lr,
            )?;
            adam_step(
                decoder.layers[l].bias.data_mut(),
                grads.decoder_bias[l].data(),
                optimizer.slot_mut(TensorId::DecoderBias(l)),
                lr,
            )?;
        }
        adam_step(
            encoder.skip_input.data_mut(),
            grads.encoder_skip.data(),
            optimizer.slot_mut(TensorId::EncoderSkip),
            lr,
        )?;
        adam_step(
            decoder.skip_output.data_mut(),
            grads.decoder_skip.data(),
            optimizer.slot_mut(TensorId::DecoderSkip),
            lr,
        )?;
        if memory_enabled {
            adam_step(
                memory.slots.data_mut(),
                grads.memory.data(),
                optimizer.slot_mut(TensorId::Memory),
                lr,
            )?;
        }
        adam_step(
            attention.proj.data_mut(),
            grads.attention_proj.data(),
            optimizer.slot_mut(TensorId::AttentionProj),
            lr,
        )?;
        adam_step(
            attention.score.data_mut(),
            grads.attention_score.data(),
            optimizer.slot_mut(TensorId::AttentionScore),
            lr,
        )?;
        adam_step(
            classifier.weight.data_mut(),
            grads.classifier_weight.data(),
            optimizer.slot_mut(TensorId::ClassifierWeight),
            lr,
        )?;
        adam_step(
            classifier.bias.data_mut(),
            grads.classifier_bias.data(),
            optimizer.slot_mut(TensorId::ClassifierBias),
            lr,
        )?;
        Ok(())
    }
}

/// Per-tensor gradients, mirroring the model's parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub encoder_weight: [Matrix; 6],
    pub encoder_bias: [Vector; 6],
    pub encoder_skip: Matrix,
    pub decoder_weight: [Matrix; 6],
    pub decoder_bias: [Vector; 6],
    pub decoder_skip: Matrix,
    pub memory: Matrix,
    pub attention_proj: Matrix,
    pub attention_score: Vector,
    pub classifier_weight: Matrix,
    pub classifier_bias: Vector,
}

impl Gradients {
    pub fn zeros(dims: &ModelDims) -> Result<Gradients> {
        let enc_w =
            |l: usize| Matrix::zeros(dims.hidden, if l == 0 { dims.input } else { dims.hidden });
        let dec_w = |l: usize| {
            if l == 0 {
                Matrix::zeros(dims.input, dims.hidden)
            } else {
                Matrix::zeros(dims.hidden, dims.hidden)
            }
        };
        let dec_b = |l: usize| Vector::zeros(if l == 0 { dims.input } else { dims.hidden });
        Ok(Gradients {
            encoder_weight: [enc_w(0)?, enc_w(1)?, enc_w(2)?, enc_w(3)?, enc_w(4)?, enc_w(5)?],
            encoder_bias: [
                Vector::zeros(dims.hidden)?,
                Vector::zeros(dims.hidden)?,
                Vector::zeros(dims.hidden)?,
                Vector::zeros(dims.hidden)?,
                Vector::zeros(dims.hidden)?,
                Vector::zeros(dims.hidden)?,
            ],
            encoder_skip: Matrix::zeros(dims.hidden, dims.input)?,
            decoder_weight: [dec_w(0)?, dec_w(1)?, dec_w(2)?, dec_w(3)?, dec_w(4)?, dec_w(5)?],
            decoder_bias: [dec_b(0)?, dec_b(1)?, dec_b(2)?, dec_b(3)?, dec_b(4)?, dec_b(5)?],
            decoder_skip: Matrix::zeros(dims.input, dims.hidden)?,
            memory: Matrix::zeros(dims.memory_units, dims.hidden)?,
            attention_proj: Matrix::zeros(dims.attention, dims.hidden)?,
            attention_score: Vector::zeros(dims.attention)?,
            classifier_weight: Matrix::zeros(dims.hidden, dims.classes)?,
            classifier_bias: Vector::zeros(dims.classes)?,
        })
    }

    pub fn tensor(&self, id: TensorId) -> &[f64] {
        match id {
            TensorId::EncoderWeight(l) => self.encoder_weight[l].data(),
            TensorId::EncoderBias(l) => self.encoder_bias[l].data(),
            TensorId::EncoderSkip => self.encoder_skip.data(),
            TensorId::DecoderWeight(l) => self.decoder_weight[l].data(),
            TensorId::DecoderBias(l) => self.decoder_bias[l].data(),
            TensorId::DecoderSkip => self.decoder_skip.data(),
            TensorId::Memory => self.memory.data(),
            TensorId::AttentionProj => self.attention_proj.data(),
            TensorId::AttentionScore => self.attention_score.data(),
            TensorId::ClassifierWeight => self.classifier_weight.data(),
            TensorId::ClassifierBias => self.classifier_bias.data(),
        }
    }

    pub fn tensor_mut(&mut self, id: TensorId) -> &mut [f64] {
        match id {
            TensorId::EncoderWeight(l) => self.encoder_weight[l].data_mut(),
            TensorId::EncoderBias(l) => self.encoder_bias[l].data_mut(),
            TensorId::EncoderSkip => self.encoder_skip.data_mut(),
            TensorId::DecoderWeight(l) => self.decoder_weight[l].data_mut(),
            TensorId::DecoderBias(l) => self.decoder_bias[l].data_mut(),
            TensorId::DecoderSkip => self.decoder_skip.data_mut(),
            TensorId::Memory => self.memory.data_mut(),
            TensorId::AttentionProj => self.attention_proj.data_mut(),
            TensorId::AttentionScore => self.attention_score.data_mut(),
            TensorId::ClassifierWeight => self.classifier_weight.data_mut(),
            TensorId::ClassifierBias => self.classifier_bias.data_mut(),
        }
    }
}

/// Loss components for one example. `total` is always
/// `prediction + reconstruction + lambda * entropy` exactly as summed by
/// the forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub prediction: f64,
    pub reconstruction: f64,
    pub entropy: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn zero() -> LossBreakdown {
        LossBreakdown { prediction: 0.0, reconstruction: 0.0, entropy: 0.0, total: 0.0 }
    }
}

/// Memory addressing intermediates retained for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AddressingTrace {
    /// Cosine similarity between the latent and each prototype.
    pub similarities: Vector,
    /// Softmaxed addressing weights.
    pub weights: Vector,
    /// Shrunken, renormalized addressing weights used for the read-out.
    pub shrunk: Vector,
}

/// Complete record of one forward pass. Self-contained: it carries the
/// encoder input, the reconstruction target (they differ in denoising
/// mode), and the one-hot label, so the backward pass needs nothing else.
#[derive(Debug, Clone, PartialEq)]
pub struct FullTrace {
    pub input: Vector,
    pub reconstruction_target: Vector,
    pub target: Vector,
    pub encode: EncodeTrace,
    pub addressing: Option<AddressingTrace>,
    /// Decoder input: the memory read-out, or the latent itself when the
    /// memory is disabled.
    pub memory_out: Vector,
    pub decode: DecodeTrace,
    pub fusion: FusionTrace,
    pub losses: LossBreakdown,
}

/// Forward pass where the encoder input doubles as the reconstruction
/// target (the ordinary, non-denoising case).
pub fn forward(x: &Vector, y: &Vector, model: &ModelState) -> Result<FullTrace> {
    forward_inner(x, x, y, model, None)
}

/// Forward pass with distinct encoder input and reconstruction target;
/// denoising mode feeds the corrupted input but reconstructs the clean one.
pub fn forward_denoising(
    input: &Vector,
    reconstruction_target: &Vector,
    y: &Vector,
    model: &ModelState,
) -> Result<FullTrace> {
    forward_inner(input, reconstruction_target, y, model, None)
}

/// Forward pass with the alignment vector pinned to a given value instead
/// of being computed from the attention head. The gradient checker uses
/// this to finite-difference encoder parameters under the same
/// constant-alignment convention the backward pass applies to them.
pub(crate) fn forward_frozen_alignment(
    x: &Vector,
    y: &Vector,
    model: &ModelState,
    alignment: &Vector,
) -> Result<FullTrace> {
    forward_inner(x, x, y, model, Some(alignment))
}

fn forward_inner(
    input: &Vector,
    reconstruction_target: &Vector,
    y: &Vector,
    model: &ModelState,
    alignment_override: Option<&Vector>,
) -> Result<FullTrace> {
    let dims = &model.dims;
    if input.dim() != dims.input || reconstruction_target.dim() != dims.input {
        return Err(AoilError::Dimension(format!(
            "forward: input dim {} / target dim {} but model expects {}",
            input.dim(),
            reconstruction_target.dim(),
            dims.input
        )));
    }
    if y.dim() != dims.classes {
        return Err(AoilError::Dimension(format!(
            "forward: label dim {} but model has {} classes",
            y.dim(),
            dims.classes
        )));
    }

    let encode_trace = encode(input, &model.encoder)?;

    let (addressing, memory_out, entropy) = if model.memory_enabled {
        let weights = address(&encode_trace.h[5], &model.memory)?;
        let shrunk = shrink(&weights, &model.memory)?;
        let memory_out = read(&shrunk, &model.memory)?;
        let entropy = entropy_reg(&shrunk);
        let mut similarities = Vec::with_capacity(model.memory.units());
        for i in 0..model.memory.units() {
            let slot = Vector::from_vec(model.memory.slots.row(i).to_vec())?;
            similarities.push(crate::linalg::cosine_similarity(&encode_trace.h[5], &slot)?);
        }
        (
            Some(AddressingTrace {
                similarities: Vector::from_vec(similarities)?,
                weights,
                shrunk,
            }),
            memory_out,
            entropy,
        )
    } else {
        (None, encode_trace.h[5].clone(), 0.0)
    };

    let decode_trace = decode(&memory_out, &model.decoder)?;
    let reconstruction = reconstruction_error(reconstruction_target, &decode_trace.reconstruction)?;

    let mut hidden = Matrix::zeros(6, dims.hidden)?;
    for (j, h) in encode_trace.h.iter().enumerate() {
        for (d, value) in h.data().iter().enumerate() {
            hidden.set(j, d, *value);
        }
    }
    let mut fusion = fusion_forward(hidden, &model.attention, &model.classifier)?;
    if let Some(pinned) = alignment_override {
        if pinned.dim() != 6 {
            return Err(AoilError::Dimension(format!(
                "forward: pinned alignment has dim {}, expected 6",
                pinned.dim()
            )));
        }
        fusion.alignment = pinned.clone();
        fusion.context = crate::fusion::fuse(&fusion.alignment, &fusion.hidden)?;
        fusion.prediction = crate::fusion::classify(&fusion.context, &model.classifier)?;
        let mut logits = model.classifier.weight.matvec_transpose(&fusion.context)?;
        logits.add_assign(&model.classifier.bias)?;
        fusion.class_logits = logits;
    }

    let prediction_loss = cross_entropy(y, &fusion.prediction)?;
    let lambda = model.lambda();
    let total = prediction_loss + reconstruction + lambda * entropy;
    let losses = LossBreakdown { prediction: prediction_loss, reconstruction, entropy, total };

    Ok(FullTrace {
        input: input.clone(),
        reconstruction_target: reconstruction_target.clone(),
        target: y.clone(),
        encode: encode_trace,
        addressing,
        memory_out,
        decode: decode_trace,
        fusion,
        losses,
    })
}

/// `d` gated by the ReLU mask of the pre-activation `pre`.
fn relu_backward(d: &Vector, pre: &Vector) -> Vector {
    let data =
        d.data().iter().zip(pre.data()).map(|(g, z)| if *z > 0.0 { *g } else { 0.0 }).collect();
    Vector::from_vec(data).expect("gated gradient keeps the input's dimension")
}

fn check_trace(trace: &FullTrace, model: &ModelState) -> Result<()> {
    let dims = &model.dims;
    let ok = trace.input.dim() == dims.input
        && trace.reconstruction_target.dim() == dims.input
        && trace.target.dim() == dims.classes
        && trace.encode.h[5].dim() == dims.hidden
        && trace.memory_out.dim() == dims.hidden
        && trace.fusion.hidden.rows() == 6
        && trace.fusion.hidden.cols() == dims.hidden
        && trace.fusion.alignment.dim() == 6
        && trace.fusion.prediction.dim() == dims.classes
        && trace.addressing.is_some() == model.memory_enabled
        && trace.addressing.as_ref().is_none_or(|a| a.weights.dim() == dims.memory_units);
    if !ok {
        return Err(AoilError::Contract(
            "backward: trace does not match the model it is applied to".into(),
        ));
    }
    Ok(())
}

/// Hand-written reverse pass over one trace. See the module docs for the
/// gradient-routing rules it implements.
pub fn backward(trace: &FullTrace, model: &ModelState) -> Result<Gradients> {
    check_trace(trace, model)?;
    let mut grads = Gradients::zeros(&model.dims)?;
    let h = &trace.encode.h;
    let z = &trace.encode.pre;
    let g = &trace.decode.hidden;
    let v = &trace.decode.pre;
    let alignment = &trace.fusion.alignment;

    // Classifier: softmax + cross-entropy collapses to (p - y).
    let mut d_class_logits = trace.fusion.prediction.clone();
    d_class_logits.axpy(-1.0, &trace.target)?;
    grads.classifier_bias = d_class_logits.clone();
    grads.classifier_weight.add_outer(&trace.fusion.context, &d_class_logits)?;
    let d_context = model.classifier.weight.matvec(&d_class_logits)?;

    // Attention parameters: full prediction path through the softmax over
    // logits, with the hidden stack treated as data.
    let mut d_alignment = Vec::with_capacity(6);
    for j in 0..6 {
        let row = Vector::from_vec(trace.fusion.hidden.row(j).to_vec())?;
        d_alignment.push(d_context.dot(&row)?);
    }
    let inner: f64 = alignment.data().iter().zip(&d_alignment).map(|(a, d)| a * d).sum();
    for (j, &d_align) in d_alignment.iter().enumerate() {
        let d_logit = alignment.get(j) * (d_align - inner);
        if d_logit == 0.0 {
            continue;
        }
        let row = Vector::from_vec(trace.fusion.hidden.row(j).to_vec())?;
        let mut d_projected = Vector::zeros(model.dims.attention)?;
        for a in 0..model.dims.attention {
            let t = trace.fusion.squashed.get(a, j);
            grads.attention_score.set(a, grads.attention_score.get(a) + d_logit * t);
            d_projected.set(a, d_logit * model.attention.score.get(a) * (1.0 - t * t));
        }
        grads.attention_proj.add_outer(&d_projected, &row)?;
    }

    // Reconstruction path back through the decoder.
    let mut d_reconstruction = trace.decode.reconstruction.clone();
    d_reconstruction.axpy(-1.0, &trace.reconstruction_target)?;
    let d_reconstruction = {
        let mut d = d_reconstruction;
        d.data_mut().iter_mut().for_each(|x| *x *= 2.0);
        d
    };
    grads.decoder_bias[0] = d_reconstruction.clone();
    grads.decoder_weight[0].add_outer(&d_reconstruction, &g[0])?;
    grads.decoder_skip.add_outer(&d_reconstruction, &g[1])?;

    let d_g0 = model.decoder.layers[0].weight.matvec_transpose(&d_reconstruction)?;
    let d_v0 = relu_backward(&d_g0, &v[0]);
    grads.decoder_bias[1] = d_v0.clone();
    grads.decoder_weight[1].add_outer(&d_v0, &g[1])?;

    let mut d_g1 = model.decoder.layers[1].weight.matvec_transpose(&d_v0)?;
    d_g1.add_assign(&model.decoder.skip_output.matvec_transpose(&d_reconstruction)?)?;
    let d_v1 = relu_backward(&d_g1, &v[1]);
    grads.decoder_bias[2] = d_v1.clone();
    grads.decoder_weight[2].add_outer(&d_v1, &g[2])?;

    let d_g2 = model.decoder.layers[2].weight.matvec_transpose(&d_v1)?;
    let d_v2 = relu_backward(&d_g2, &v[2]);
    grads.decoder_bias[3] = d_v2.clone();
    grads.decoder_weight[3].add_outer(&d_v2, &g[3])?;

    let mut d_g3 = model.decoder.layers[3].weight.matvec_transpose(&d_v2)?;
    d_g3.add_assign(&d_v1)?;
    let d_v3 = relu_backward(&d_g3, &v[3]);
    grads.decoder_bias[4] = d_v3.clone();
    grads.decoder_weight[4].add_outer(&d_v3, &g[4])?;

    let d_g4 = model.decoder.layers[4].weight.matvec_transpose(&d_v3)?;
    let d_v4 = relu_backward(&d_g4, &v[4]);
    grads.decoder_bias[5] = d_v4.clone();
    grads.decoder_weight[5].add_outer(&d_v4, &trace.memory_out)?;

    let mut d_memory_out = model.decoder.layers[5].weight.matvec_transpose(&d_v4)?;
    d_memory_out.add_assign(&d_v3)?;

    // Memory bank and the addressing path back into the latent.
    let mut d_h5_memory = Vector::zeros(model.dims.hidden)?;
    if model.memory_enabled {
        let addressing = trace.addressing.as_ref().expect("checked by check_trace");
        let shrunk = &addressing.shrunk;
        let weights = &addressing.weights;
        let lambda = model.memory.lambda;

        // Read-out: memory_out = slots^T shrunk.
        grads.memory.add_outer(shrunk, &d_memory_out)?;
        let mut d_shrunk = model.memory.slots.matvec(&d_memory_out)?;

        // Entropy penalty d/dw of -w ln w, scaled by lambda.
        for i in 0..d_shrunk.dim() {
            let w = shrunk.get(i);
            if w > 0.0 {
                d_shrunk.set(i, d_shrunk.get(i) + lambda * (-w.ln() - 1.0));
            }
        }

        // Shrinkage + renormalization backward.
        let eps = model.memory.shrink_epsilon;
        let raw_sum: f64 = weights.data().iter().map(|w| w.max(0.0) * w / (w.abs() + eps)).sum();
        let mut d_weights = Vector::zeros(weights.dim())?;
        if raw_sum > 0.0 {
            let mix: f64 = d_shrunk.data().iter().zip(shrunk.data()).map(|(d, s)| d * s).sum();
            for i in 0..weights.dim() {
                let w = weights.get(i);
                if w > 0.0 {
                    let d_raw = (d_shrunk.get(i) - mix) / raw_sum;
                    let slope = w * (w + 2.0 * eps) / ((w + eps) * (w + eps));
                    d_weights.set(i, d_raw * slope);
                }
            }
        }

        // Softmax over similarities.
        let mix2: f64 = weights.data().iter().zip(d_weights.data()).map(|(w, d)| w * d).sum();
        let latent = &h[5];
        let latent_norm = latent.norm();
        for i in 0..weights.dim() {
            let d_sim = weights.get(i) * (d_weights.get(i) - mix2);
            if d_sim == 0.0 {
                continue;
            }
            let slot = Vector::from_vec(model.memory.slots.row(i).to_vec())?;
            let slot_norm = slot.norm();
            if latent_norm == 0.0 || slot_norm == 0.0 {
                // Zero-norm similarity is pinned at 0; no gradient flows.
                continue;
            }
            let sim = addressing.similarities.get(i);
            // d sim / d slot = latent/(|latent||slot|) - sim * slot/|slot|^2
            for d in 0..model.dims.hidden {
                let grad_slot = latent.get(d) / (latent_norm * slot_norm)
                    - sim * slot.get(d) / (slot_norm * slot_norm);
                let cell = grads.memory.get(i, d);
                grads.memory.set(i, d, cell + d_sim * grad_slot);
                let grad_latent = slot.get(d) / (latent_norm * slot_norm)
                    - sim * latent.get(d) / (latent_norm * latent_norm);
                d_h5_memory.set(d, d_h5_memory.get(d) + d_sim * grad_latent);
            }
        }
    }

    // Encoder: attention-weighted prediction path plus the memory/decoder
    // path into the latent.
    let mut d_h5 = Vector::zeros(model.dims.hidden)?;
    d_h5.axpy(alignment.get(5), &d_context)?;
    if model.memory_enabled {
        d_h5.add_assign(&d_h5_memory)?;
    } else {
        d_h5.add_assign(&d_memory_out)?;
    }
    let d_z5 = relu_backward(&d_h5, &z[5]);
    grads.encoder_bias[5] = d_z5.clone();
    grads.encoder_weight[5].add_outer(&d_z5, &h[4])?;

    let mut d_h4 = model.encoder.layers[5].weight.matvec_transpose(&d_z5)?;
    d_h4.axpy(alignment.get(4), &d_context)?;
    let d_z4 = relu_backward(&d_h4, &z[4]);
    grads.encoder_bias[4] = d_z4.clone();
    grads.encoder_weight[4].add_outer(&d_z4, &h[3])?;

    let mut d_h3 = model.encoder.layers[4].weight.matvec_transpose(&d_z4)?;
    d_h3.axpy(alignment.get(3), &d_context)?;
    d_h3.add_assign(&d_z5)?;
    let d_z3 = relu_backward(&d_h3, &z[3]);
    grads.encoder_bias[3] = d_z3.clone();
    grads.encoder_weight[3].add_outer(&d_z3, &h[2])?;

    let mut d_h2 = model.encoder.layers[3].weight.matvec_transpose(&d_z3)?;
    d_h2.axpy(alignment.get(2), &d_context)?;
    let d_z2 = relu_backward(&d_h2, &z[2]);
    grads.encoder_bias[2] = d_z2.clone();
    grads.encoder_weight[2].add_outer(&d_z2, &h[1])?;

    let mut d_h1 = model.encoder.layers[2].weight.matvec_transpose(&d_z2)?;
    d_h1.axpy(alignment.get(1), &d_context)?;
    d_h1.add_assign(&d_z3)?;
    let d_z1 = relu_backward(&d_h1, &z[1]);
    grads.encoder_bias[1] = d_z1.clone();
    grads.encoder_weight[1].add_outer(&d_z1, &h[0])?;
    grads.encoder_skip.add_outer(&d_z1, &trace.input)?;

    let mut d_h0 = model.encoder.layers[1].weight.matvec_transpose(&d_z1)?;
    d_h0.axpy(alignment.get(0), &d_context)?;
    let d_z0 = relu_backward(&d_h0, &z[0]);
    grads.encoder_bias[0] = d_z0.clone();
    grads.encoder_weight[0].add_outer(&d_z0, &trace.input)?;

    Ok(grads)
}

/// One online update: forward, backward, Adam on every tensor. Returns the
/// losses measured before the update.
pub fn train_step(x: &Vector, y: &Vector, model: &mut ModelState) -> Result<LossBreakdown> {
    let trace = forward(x, y, model)?;
    let grads = backward(&trace, model)?;
    model.apply_gradients(&grads)?;
    Ok(trace.losses)
}

/// Denoising variant: the encoder consumes `input` (typically corrupted)
/// while the reconstruction target stays `reconstruction_target`.
pub fn train_step_denoising(
    input: &Vector,
    reconstruction_target: &Vector,
    y: &Vector,
    model: &mut ModelState,
) -> Result<LossBreakdown> {
    let trace = forward_denoising(input, reconstruction_target, y, model)?;
    let grads = backward(&trace, model)?;
    model.apply_gradients(&grads)?;
    Ok(trace.losses)
}

/// Gaussian input-corruption settings for denoising mode. `fraction` is the
/// probability that a given example is corrupted at all; a corrupted example
/// gets noise on every component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub enabled: bool,
    pub variance: f64,
    pub fraction: f64,
}

impl Default for NoiseConfig {
    fn default() -> NoiseConfig {
        NoiseConfig { enabled: false, variance: 0.1, fraction: 0.2 }
    }
}

impl NoiseConfig {
    pub fn disabled() -> NoiseConfig {
        NoiseConfig { enabled: false, variance: 0.0, fraction: 0.0 }
    }

    /// Corrupt every example with the given variance.
    pub fn gaussian(variance: f64) -> Result<NoiseConfig> {
        if !(variance >= 0.0) {
            return Err(AoilError::Config(format!(
                "noise variance must be nonnegative, got {variance}"
            )));
        }
        Ok(NoiseConfig { enabled: true, variance, fraction: 1.0 })
    }

    /// Corrupt only this share of examples, leaving the rest untouched.
    pub fn with_fraction(mut self, fraction: f64) -> Result<NoiseConfig> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(AoilError::Config(format!(
                "noise fraction must lie in [0, 1], got {fraction}"
            )));
        }
        self.fraction = fraction;
        Ok(self)
    }
}

/// Additive zero-mean Gaussian corruption of every component, applied to a
/// random `fraction` of examples. Disabled or zero-variance configs return
/// the input unchanged.
pub fn corrupt<R: Rng>(x: &Vector, noise: &NoiseConfig, rng: &mut R) -> Vector {
    if !noise.enabled || noise.variance == 0.0 {
        return x.clone();
    }
    if noise.fraction < 1.0 && rng.gen::<f64>() >= noise.fraction {
        return x.clone();
    }
    let normal = Normal::new(0.0, noise.variance.sqrt())
        .expect("nonnegative variance yields a valid distribution");
    let data = x.data().iter().map(|v| v + normal.sample(rng)).collect();
    Vector::from_vec(data).expect("finite input plus finite noise stays finite")
}

const CHECKPOINT_MAGIC: &str = "aoil-checkpoint v1";

fn hex_words(values: &[f64]) -> String {
    let mut out = String::with_capacity(values.len() * 17);
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&format!("{:016x}", v.to_bits()));
    }
    out
}

fn parse_hex_words(line: &str, expected: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(expected);
    for word in line.split_whitespace() {
        let bits = u64::from_str_radix(word, 16)
            .map_err(|_| AoilError::Checkpoint(format!("bad hex word '{word}'")))?;
        let value = f64::from_bits(bits);
        if !value.is_finite() {
            return Err(AoilError::Checkpoint(format!("non-finite value {value}")));
        }
        out.push(value);
    }
    if out.len() != expected {
        return Err(AoilError::Checkpoint(format!(
            "expected {expected} values, got {}",
            out.len()
        )));
    }
    Ok(out)
}

/// Write the model to a version-tagged text file. All floats are stored as
/// raw bit patterns, so save/load round-trips bitwise; Adam moments and
/// step counters are included so training can resume exactly.
pub fn save_checkpoint(model: &ModelState, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(CHECKPOINT_MAGIC);
    out.push('\n');
    out.push_str(&format!("seed {}\n", model.seed));
    out.push_str(&format!("memory_enabled {}\n", model.memory_enabled));
    out.push_str(&format!("learning_rate {:016x}\n", model.learning_rate.to_bits()));
    out.push_str(&format!("lambda {:016x}\n", model.memory.lambda.to_bits()));
    out.push_str(&format!("shrink_epsilon {:016x}\n", model.memory.shrink_epsilon.to_bits()));
    let d = &model.dims;
    out.push_str(&format!(
        "dims {} {} {} {} {}\n",
        d.input, d.hidden, d.classes, d.memory_units, d.attention
    ));
    for id in TensorId::all() {
        let data = model.tensor_data(id);
        let adam = model.adam_state(id);
        out.push_str(&format!("tensor {} {}\n", id.name(), data.len()));
        out.push_str(&format!("data {}\n", hex_words(data)));
        out.push_str(&format!("adam_step {}\n", adam.step_count()));
        out.push_str(&format!("adam_m {}\n", hex_words(adam.first_moment())));
        out.push_str(&format!("adam_v {}\n", hex_words(adam.second_moment())));
    }
    out.push_str("end\n");
    fs::write(path, out).map_err(|e| AoilError::io(path.display().to_string(), e))
}

/// Load a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let content =
        fs::read_to_string(path).map_err(|e| AoilError::io(path.display().to_string(), e))?;
    let mut lines = content.lines();
    let mut next =
        |what: &str| lines.next().ok_or_else(|| AoilError::Checkpoint(format!("missing {what}")));

    if next("magic")? != CHECKPOINT_MAGIC {
        return Err(AoilError::Checkpoint("unrecognized header".into()));
    }
    let field = |line: &str, key: &str| -> Result<String> {
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| AoilError::Checkpoint(format!("expected '{key} ...', got '{line}'")))
    };
    let seed: u64 = field(next("seed")?, "seed")?
        .parse()
        .map_err(|_| AoilError::Checkpoint("bad seed".into()))?;
    let memory_enabled: bool = field(next("memory_enabled")?, "memory_enabled")?
        .parse()
        .map_err(|_| AoilError::Checkpoint("bad memory_enabled".into()))?;
    let parse_f64_bits = |text: String| -> Result<f64> {
        let bits = u64::from_str_radix(&text, 16)
            .map_err(|_| AoilError::Checkpoint(format!("bad hex '{text}'")))?;
        Ok(f64::from_bits(bits))
    };
    let learning_rate = parse_f64_bits(field(next("learning_rate")?, "learning_rate")?)?;
    let lambda = parse_f64_bits(field(next("lambda")?, "lambda")?)?;
    let shrink_epsilon = parse_f64_bits(field(next("shrink_epsilon")?, "shrink_epsilon")?)?;
    let dims_line = field(next("dims")?, "dims")?;
    let dims_values: Vec<usize> = dims_line
        .split_whitespace()
        .map(|w| w.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| AoilError::Checkpoint("bad dims".into()))?;
    if dims_values.len() != 5 {
        return Err(AoilError::Checkpoint("dims needs 5 entries".into()));
    }
    let dims = ModelDims {
        input: dims_values[0],
        hidden: dims_values[1],
        classes: dims_values[2],
        memory_units: dims_values[3],
        attention: dims_values[4],
    };

    let mut model = ModelState::new(dims, learning_rate, lambda, shrink_epsilon, seed)?
        .with_memory_enabled(memory_enabled);

    for id in TensorId::all() {
        let header = next("tensor header")?;
        let expected_header_prefix = format!("tensor {} ", id.name());
        let len_text = header.strip_prefix(&expected_header_prefix).ok_or_else(|| {
            AoilError::Checkpoint(format!("expected tensor '{}', got '{header}'", id.name()))
        })?;
        let len: usize = len_text
            .parse()
            .map_err(|_| AoilError::Checkpoint(format!("bad length in '{header}'")))?;
        if len != model.tensor_data(id).len() {
            return Err(AoilError::Checkpoint(format!(
                "tensor {} has {} entries, file says {len}",
                id.name(),
                model.tensor_data(id).len()
            )));
        }
        let data = parse_hex_words(&field(next("data")?, "data")?, len)?;
        model.tensor_data_mut(id).copy_from_slice(&data);
        let step: u64 = field(next("adam_step")?, "adam_step")?
            .parse()
            .map_err(|_| AoilError::Checkpoint("bad adam_step".into()))?;
        let m = parse_hex_words(&field(next("adam_m")?, "adam_m")?, len)?;
        let v = parse_hex_words(&field(next("adam_v")?, "adam_v")?, len)?;
        model.set_adam_state(id, AdamState::from_parts(m, v, step)?)?;
    }
    if next("end")? != "end" {
        return Err(AoilError::Checkpoint("missing end marker".into()));
    }
    Ok(model)
}
