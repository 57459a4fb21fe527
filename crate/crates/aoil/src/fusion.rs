//! Self-attention fusion over the stacked hidden layers, plus the softmax
//! classifier that consumes the fused context.
//!
//! The encoder's hidden activations are stacked row-wise into a matrix
//! `H`. A small additive-attention head scores each row
//! (`score . tanh(proj h_j)`), softmaxes the scores into an alignment
//! vector, and the context is the alignment-weighted sum of rows. The
//! classifier is a single affine layer with softmax on top.

use crate::error::{AoilError, Result};
use crate::linalg::{softmax, Matrix, Vector};

/// Attention parameters: a projection into the attention space
/// (`attention_dim x hidden_dim`) and the scoring vector that reduces each
/// projected, tanh-squashed column to a scalar logit.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub proj: Matrix,
    pub score: Vector,
}

impl AttentionParams {
    pub fn attention_dim(&self) -> usize {
        self.proj.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.proj.cols()
    }
}

/// Classifier parameters: `weight` is `hidden_dim x classes`, applied as
/// `weight^T context + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub weight: Matrix,
    pub bias: Vector,
}

impl ClassifierParams {
    pub fn classes(&self) -> usize {
        self.weight.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Everything the fusion stage computes for one example. Intermediate
/// values are retained for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionTrace {
    /// Stacked hidden states, one row per encoder layer.
    pub hidden: Matrix,
    /// `tanh(proj h_j)` per row, stored column-wise
    /// (`attention_dim x rows`).
    pub squashed: Matrix,
    /// Raw attention logits, one per row of `hidden`.
    pub logits: Vector,
    /// Softmaxed attention weights (the alignment vector).
    pub alignment: Vector,
    /// Alignment-weighted sum of hidden rows.
    pub context: Vector,
    /// Classifier logits.
    pub class_logits: Vector,
    /// Softmax class probabilities.
    pub prediction: Vector,
}

/// Attention weights over the rows of `hidden`: a probability vector with
/// one entry per row.
pub fn attend(hidden: &Matrix, params: &AttentionParams) -> Result<Vector> {
    let (_, logits) = attention_logits(hidden, params)?;
    Ok(softmax(&logits))
}

/// Shared helper: the tanh-squashed projections (column per row of
/// `hidden`) and the raw attention logits.
fn attention_logits(hidden: &Matrix, params: &AttentionParams) -> Result<(Matrix, Vector)> {
    if hidden.cols() != params.hidden_dim() {
        return Err(AoilError::Dimension(format!(
            "attend: hidden rows of dim {} but attention projects dim {}",
            hidden.cols(),
            params.hidden_dim()
        )));
    }
    if params.score.dim() != params.attention_dim() {
        return Err(AoilError::Dimension(format!(
            "attend: score dim {} but projection has {} rows",
            params.score.dim(),
            params.attention_dim()
        )));
    }
    let rows = hidden.rows();
    let mut squashed = Matrix::zeros(params.attention_dim(), rows)?;
    let mut logits = Vec::with_capacity(rows);
    for j in 0..rows {
        let h = Vector::from_vec(hidden.row(j).to_vec())?;
        let projected = params.proj.matvec(&h)?;
        let mut logit = 0.0;
        for (a, p) in projected.data().iter().enumerate() {
            let t = p.tanh();
            squashed.set(a, j, t);
            logit += params.score.get(a) * t;
        }
        logits.push(logit);
    }
    Ok((squashed, Vector::from_vec(logits)?))
}

/// Context vector: the `weights`-weighted sum of the rows of `hidden`.
/// With simplex weights the result is a convex combination of the rows.
pub fn fuse(weights: &Vector, hidden: &Matrix) -> Result<Vector> {
    if weights.dim() != hidden.rows() {
        return Err(AoilError::Dimension(format!(
            "fuse: {} weights for {} hidden rows",
            weights.dim(),
            hidden.rows()
        )));
    }
    hidden.matvec_transpose(weights)
}

/// Class probabilities: `softmax(weight^T context + bias)`.
pub fn classify(context: &Vector, params: &ClassifierParams) -> Result<Vector> {
    Ok(softmax(&class_logits(context, params)?))
}

fn class_logits(context: &Vector, params: &ClassifierParams) -> Result<Vector> {
    if context.dim() != params.hidden_dim() {
        return Err(AoilError::Dimension(format!(
            "classify: context dim {} but classifier expects {}",
            context.dim(),
            params.hidden_dim()
        )));
    }
    let mut logits = params.weight.matvec_transpose(context)?;
    logits.add_assign(&params.bias)?;
    Ok(logits)
}

/// Cross-entropy `-sum_k y_k ln(p_k)` with probabilities clamped at 1e-12
/// as a numerical guard.
pub fn cross_entropy(target: &Vector, predicted: &Vector) -> Result<f64> {
    if target.dim() != predicted.dim() {
        return Err(AoilError::Dimension(format!(
            "cross_entropy: dims {} vs {}",
            target.dim(),
            predicted.dim()
        )));
    }
    Ok(target
        .data()
        .iter()
        .zip(predicted.data())
        .map(|(y, p)| if *y != 0.0 { -y * p.max(1e-12).ln() } else { 0.0 })
        .sum())
}

/// Run the whole fusion stage: attention, context, classification.
pub fn fusion_forward(
    hidden: Matrix,
    attention: &AttentionParams,
    classifier: &ClassifierParams,
) -> Result<FusionTrace> {
    let (squashed, logits) = attention_logits(&hidden, attention)?;
    let alignment = softmax(&logits);
    let context = fuse(&alignment, &hidden)?;
    let class_logits = class_logits(&context, classifier)?;
    let prediction = softmax(&class_logits);
    Ok(FusionTrace { hidden, squashed, logits, alignment, context, class_logits, prediction })
}
