//! Dense matrix/vector arithmetic, initialization, activations, and the
//! Adam optimizer.
//!
//! Everything in the crate that touches numbers goes through this module.
//! The containers are deliberately plain (row-major `Vec<f64>` storage with
//! explicit shape checks) so the hand-written gradients in `learner` can be
//! audited element by element against the finite-difference harness.

use rand::Rng;

use crate::error::{AoilError, Result};

/// Row-major dense matrix, at least 1x1, all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Result<Matrix> {
        if rows == 0 || cols == 0 {
            return Err(AoilError::Dimension(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        Ok(Matrix { rows, cols, data: vec![0.0; rows * cols] })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if rows == 0 || cols == 0 {
            return Err(AoilError::Dimension(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(AoilError::Dimension(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(AoilError::NonFinite(format!("matrix entry {bad}")));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        debug_assert!(row < self.rows && col < self.cols);
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.rows && col < self.cols);
        self.data[row * self.cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        debug_assert!(row < self.rows);
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `W x` for a column vector `x`.
    pub fn matvec(&self, x: &Vector) -> Result<Vector> {
        if x.dim() != self.cols {
            return Err(AoilError::Dimension(format!(
                "matvec: {}x{} matrix with vector of dim {}",
                self.rows,
                self.cols,
                x.dim()
            )));
        }
        let mut out = vec![0.0; self.rows];
        for (r, slot) in out.iter_mut().enumerate() {
            let row = self.row(r);
            let mut acc = 0.0;
            for (w, v) in row.iter().zip(x.data()) {
                acc += w * v;
            }
            *slot = acc;
        }
        Vector::from_vec(out)
    }

    /// `W^T x` for a column vector `x`, without materializing the transpose.
    pub fn matvec_transpose(&self, x: &Vector) -> Result<Vector> {
        if x.dim() != self.rows {
            return Err(AoilError::Dimension(format!(
                "matvec_transpose: {}x{} matrix with vector of dim {}",
                self.rows,
                self.cols,
                x.dim()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let scale = x.data()[r];
            if scale == 0.0 {
                continue;
            }
            for (slot, w) in out.iter_mut().zip(self.row(r)) {
                *slot += scale * w;
            }
        }
        Vector::from_vec(out)
    }

    /// `self += a b^T`; used to accumulate weight gradients.
    pub fn add_outer(&mut self, a: &Vector, b: &Vector) -> Result<()> {
        if a.dim() != self.rows || b.dim() != self.cols {
            return Err(AoilError::Dimension(format!(
                "add_outer: {}x{} matrix with outer product {}x{}",
                self.rows,
                self.cols,
                a.dim(),
                b.dim()
            )));
        }
        for r in 0..self.rows {
            let scale = a.data()[r];
            if scale == 0.0 {
                continue;
            }
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (slot, v) in row.iter_mut().zip(b.data()) {
                *slot += scale * v;
            }
        }
        Ok(())
    }
}

/// Dense column vector, at least one component, all components finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn zeros(dim: usize) -> Result<Vector> {
        if dim == 0 {
            return Err(AoilError::Dimension("vector dimension must be positive".into()));
        }
        Ok(Vector { data: vec![0.0; dim] })
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Vector> {
        if data.is_empty() {
            return Err(AoilError::Dimension("vector dimension must be positive".into()));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(AoilError::NonFinite(format!("vector component {bad}")));
        }
        Ok(Vector { data })
    }

    /// All-zero vector with a single 1 at `index`.
    pub fn one_hot(dim: usize, index: usize) -> Result<Vector> {
        if index >= dim {
            return Err(AoilError::Dimension(format!(
                "one_hot index {index} out of range for dim {dim}"
            )));
        }
        let mut v = Vector::zeros(dim)?;
        v.data[index] = 1.0;
        Ok(v)
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.data[index]
    }

    pub fn set(&mut self, index: usize, value: f64) {
        self.data[index] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(AoilError::Dimension(format!(
                "dot: dims {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self += other`.
    pub fn add_assign(&mut self, other: &Vector) -> Result<()> {
        self.axpy(1.0, other)
    }

    /// `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &Vector) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(AoilError::Dimension(format!(
                "axpy: dims {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        for (slot, v) in self.data.iter_mut().zip(&other.data) {
            *slot += scale * v;
        }
        Ok(())
    }

    /// Index of the largest component; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.data.iter().enumerate() {
            if *v > self.data[best] {
                best = i;
            }
        }
        best
    }
}

/// Uniform Xavier/Glorot initialization: entries drawn from
/// `U(-sqrt(6/(rows+cols)), +sqrt(6/(rows+cols)))`, giving variance
/// `2/(rows+cols)`.
pub fn xavier_init<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(AoilError::Dimension(format!(
            "xavier_init dimensions must be positive, got {rows}x{cols}"
        )));
    }
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Matrix::from_vec(rows, cols, data)
}

/// Elementwise `max(v, 0)`.
pub fn relu(v: &Vector) -> Vector {
    Vector { data: v.data.iter().map(|x| x.max(0.0)).collect() }
}

/// Numerically stable softmax (max-subtracted). The input is nonempty by
/// the `Vector` invariant, so the result always sums to 1.
pub fn softmax(v: &Vector) -> Vector {
    let max = v.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.data.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Vector { data: exps.iter().map(|e| e / sum).collect() }
}

/// Cosine similarity of two equal-dimension vectors. Returns 0 when either
/// vector has zero norm, so untrained all-zero latents address memory
/// uniformly instead of poisoning it with NaNs.
pub fn cosine_similarity(a: &Vector, b: &Vector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(AoilError::Dimension(format!(
            "cosine_similarity: dims {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok(a.dot(b)? / (na * nb))
}

/// First and second moment estimates for one parameter tensor, plus the
/// step counter that drives bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl AdamState {
    /// Fresh state with the conventional decay rates
    /// (beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8).
    pub fn new(len: usize) -> AdamState {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Zero both moments and the step counter, as if freshly constructed.
    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
        self.step = 0;
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// Restore a state from raw parts, used by checkpoint loading.
    pub fn from_parts(m: Vec<f64>, v: Vec<f64>, step: u64) -> Result<AdamState> {
        if m.len() != v.len() {
            return Err(AoilError::Dimension(format!(
                "adam moments disagree: {} vs {}",
                m.len(),
                v.len()
            )));
        }
        let mut state = AdamState::new(m.len());
        state.m = m;
        state.v = v;
        state.step = step;
        Ok(state)
    }
}

/// One bias-corrected Adam update applied in place to `param`.
pub fn adam_step(
    param: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    learning_rate: f64,
) -> Result<()> {
    if param.len() != grad.len() || param.len() != state.len() {
        return Err(AoilError::Dimension(format!(
            "adam_step: param {} / grad {} / state {}",
            param.len(),
            grad.len(),
            state.len()
        )));
    }
    state.step += 1;
    let correction1 = 1.0 - state.beta1.powi(state.step.min(i32::MAX as u64) as i32);
    let correction2 = 1.0 - state.beta2.powi(state.step.min(i32::MAX as u64) as i32);
    for i in 0..param.len() {
        let g = grad[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / correction1;
        let v_hat = state.v[i] / correction2;
        param[i] -= learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}
