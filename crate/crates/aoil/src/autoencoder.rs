//! Six-layer encoder/decoder pair with shortcut connections.
//!
//! The encoder maps an input `x` through six ReLU layers. Shortcuts skip
//! one hidden layer each: the input reaches layer 1 through its own
//! projection matrix, `h_1` is added into layer 3's pre-activation, and
//! `h_3` into layer 5's. The decoder mirrors the pattern, starting from
//! the memory read-out and reconstructing `x` with a linear final layer
//! (inputs are standardized, so the reconstruction must be free to go
//! negative).

use rand::Rng;

use crate::error::{AoilError, Result};
use crate::linalg::{relu, xavier_init, Matrix, Vector};

/// One affine layer: `weight * input + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Matrix,
    pub bias: Vector,
}

impl LayerParams {
    fn xavier<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Result<LayerParams> {
        Ok(LayerParams { weight: xavier_init(rows, cols, rng)?, bias: Vector::zeros(rows)? })
    }
}

/// Encoder parameters: six layers plus the input shortcut projection.
///
/// Layer 0 maps `input_dim -> hidden_dim`; layers 1-5 are
/// `hidden_dim -> hidden_dim`. `skip_input` carries the raw input into
/// layer 1's pre-activation.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub layers: [LayerParams; 6],
    pub skip_input: Matrix,
}

impl EncoderParams {
    pub fn xavier<R: Rng>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Result<Self> {
        let layers = [
            LayerParams::xavier(hidden_dim, input_dim, rng)?,
            LayerParams::xavier(hidden_dim, hidden_dim, rng)?,
            LayerParams::xavier(hidden_dim, hidden_dim, rng)?,
            LayerParams::xavier(hidden_dim, hidden_dim, rng)?,
            LayerParams::xavier(hidden_dim, hidden_dim, rng)?,
            LayerParams::xavier(hidden_dim, hidden_dim, rng)?,
        ];
        Ok(EncoderParams { layers, skip_input: xavier_init(hidden_dim, input_dim, rng)? })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }
}

/// Decoder parameters, indexed to mirror the encoder.
///
/// `layers[5]` consumes the memory read-out, `layers[1]` produces the last
/// hidden state, and `layers[0]` is the linear reconstruction layer
/// (`input_dim x hidden_dim`). `skip_output` carries the first
/// reconstructed hidden state straight into the reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub layers: [LayerParams; 6],
    pub skip_output: Matrix,
}

impl DecoderParams {
    pub fn xavier<R: Rng>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Result<Self> {
        let layers = [
            LayerParams::xavier(input_dim, hidden_dim, rng)?,
            LayerParams::xavier(hidden_dim, hidden_dim, rng)?,
            LayerParams::xavier(hidden_dim, hidden_dim, rng)?,
            LayerParams::xavier(hidden_dim, hidden_dim, rng)?,
            LayerParams::xavier(hidden_dim, hidden_dim, rng)?,
            LayerParams::xavier(hidden_dim, hidden_dim, rng)?,
        ];
        Ok(DecoderParams { layers, skip_output: xavier_init(input_dim, hidden_dim, rng)? })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }
}

/// Every activation produced by [`encode`], with pre-activations retained
/// for the backward pass. `h[5]` is the latent used to address memory.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodeTrace {
    pub pre: [Vector; 6],
    pub h: [Vector; 6],
}

/// Run the encoder:
///
/// ```text
/// h0 = relu(b0 + W0 x)
/// h1 = relu(b1 + W1 h0 + Ws x)
/// h2 = relu(b2 + W2 h1)
/// h3 = relu(b3 + W3 h2 + h1)
/// h4 = relu(b4 + W4 h3)
/// h5 = relu(b5 + W5 h4 + h3)
/// ```
pub fn encode(x: &Vector, enc: &EncoderParams) -> Result<EncodeTrace> {
    if x.dim() != enc.input_dim() {
        return Err(AoilError::Dimension(format!(
            "encode: input dim {} but encoder expects {}",
            x.dim(),
            enc.input_dim()
        )));
    }

    let mut z0 = enc.layers[0].weight.matvec(x)?;
    z0.add_assign(&enc.layers[0].bias)?;
    let h0 = relu(&z0);

    let mut z1 = enc.layers[1].weight.matvec(&h0)?;
    z1.add_assign(&enc.layers[1].bias)?;
    z1.add_assign(&enc.skip_input.matvec(x)?)?;
    let h1 = relu(&z1);

    let mut z2 = enc.layers[2].weight.matvec(&h1)?;
    z2.add_assign(&enc.layers[2].bias)?;
    let h2 = relu(&z2);

    let mut z3 = enc.layers[3].weight.matvec(&h2)?;
    z3.add_assign(&enc.layers[3].bias)?;
    z3.add_assign(&h1)?;
    let h3 = relu(&z3);

    let mut z4 = enc.layers[4].weight.matvec(&h3)?;
    z4.add_assign(&enc.layers[4].bias)?;
    let h4 = relu(&z4);

    let mut z5 = enc.layers[5].weight.matvec(&h4)?;
    z5.add_assign(&enc.layers[5].bias)?;
    z5.add_assign(&h3)?;
    let h5 = relu(&z5);

    Ok(EncodeTrace { pre: [z0, z1, z2, z3, z4, z5], h: [h0, h1, h2, h3, h4, h5] })
}

/// Everything produced by [`decode`]. `hidden[k]` is the reconstructed
/// hidden state with subscript `k` (so `hidden[4]` is computed first and
/// `hidden[0]` feeds the reconstruction); `pre[k]` is its pre-activation.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeTrace {
    pub pre: [Vector; 5],
    pub hidden: [Vector; 5],
    pub reconstruction: Vector,
}

/// Run the decoder from the memory read-out:
///
/// ```text
/// g4 = relu(c5 + V5 m)
/// g3 = relu(c4 + V4 g4 + m)
/// g2 = relu(c3 + V3 g3)
/// g1 = relu(c2 + V2 g2 + g3)
/// g0 = relu(c1 + V1 g1)
/// x^ = c0 + V0 g0 + Vs g1        (linear)
/// ```
pub fn decode(memory_out: &Vector, dec: &DecoderParams) -> Result<DecodeTrace> {
    if memory_out.dim() != dec.hidden_dim() {
        return Err(AoilError::Dimension(format!(
            "decode: memory read-out dim {} but decoder expects {}",
            memory_out.dim(),
            dec.hidden_dim()
        )));
    }

    let mut v4 = dec.layers[5].weight.matvec(memory_out)?;
    v4.add_assign(&dec.layers[5].bias)?;
    let g4 = relu(&v4);

    let mut v3 = dec.layers[4].weight.matvec(&g4)?;
    v3.add_assign(&dec.layers[4].bias)?;
    v3.add_assign(memory_out)?;
    let g3 = relu(&v3);

    let mut v2 = dec.layers[3].weight.matvec(&g3)?;
    v2.add_assign(&dec.layers[3].bias)?;
    let g2 = relu(&v2);

    let mut v1 = dec.layers[2].weight.matvec(&g2)?;
    v1.add_assign(&dec.layers[2].bias)?;
    v1.add_assign(&g3)?;
    let g1 = relu(&v1);

    let mut v0 = dec.layers[1].weight.matvec(&g1)?;
    v0.add_assign(&dec.layers[1].bias)?;
    let g0 = relu(&v0);

    let mut reconstruction = dec.layers[0].weight.matvec(&g0)?;
    reconstruction.add_assign(&dec.layers[0].bias)?;
    reconstruction.add_assign(&dec.skip_output.matvec(&g1)?)?;

    Ok(DecodeTrace { pre: [v0, v1, v2, v3, v4], hidden: [g0, g1, g2, g3, g4], reconstruction })
}

/// Squared Euclidean reconstruction error `||x - x^||^2`.
pub fn reconstruction_error(x: &Vector, reconstruction: &Vector) -> Result<f64> {
    if x.dim() != reconstruction.dim() {
        return Err(AoilError::Dimension(format!(
            "reconstruction_error: dims {} vs {}",
            x.dim(),
            reconstruction.dim()
        )));
    }
    Ok(x.data().iter().zip(reconstruction.data()).map(|(a, b)| (a - b) * (a - b)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_encoder(input_dim: usize, hidden_dim: usize) -> EncoderParams {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut enc = EncoderParams::xavier(input_dim, hidden_dim, &mut rng).unwrap();
        for layer in enc.layers.iter_mut() {
            layer.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
            layer.bias.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        enc.skip_input.data_mut().iter_mut().for_each(|v| *v = 0.0);
        enc
    }

    fn zero_decoder(input_dim: usize, hidden_dim: usize) -> DecoderParams {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut dec = DecoderParams::xavier(input_dim, hidden_dim, &mut rng).unwrap();
        for layer in dec.layers.iter_mut() {
            layer.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
            layer.bias.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        dec.skip_output.data_mut().iter_mut().for_each(|v| *v = 0.0);
        dec
    }

    #[test]
    fn zero_parameters_give_zero_activations() {
        let enc = zero_encoder(3, 8);
        let x = Vector::from_vec(vec![1.0, -2.0, 3.0]).unwrap();
        let trace = encode(&x, &enc).unwrap();
        for h in &trace.h {
            assert!(h.data().iter().all(|v| *v == 0.0));
            assert_eq!(h.dim(), 8);
        }
    }

    #[test]
    fn input_skip_carries_the_input_into_layer_one() {
        // With W1 = 0, b1 = 0 and the skip projection set to a padded
        // identity, h1 must contain the (nonnegative) input verbatim.
        let mut enc = zero_encoder(3, 8);
        for i in 0..3 {
            enc.skip_input.set(i, i, 1.0);
        }
        let x = Vector::from_vec(vec![0.5, 2.0, 1.5]).unwrap();
        let trace = encode(&x, &enc).unwrap();
        assert_eq!(&trace.h[1].data()[..3], x.data());
        assert!(trace.h[1].data()[3..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn hidden_skips_feed_layers_three_and_five() {
        // All weights zero, identity-like skips only: h1 = Ws x propagates
        // to h3 (= h1) and then h5 (= h3).
        let mut enc = zero_encoder(3, 8);
        for i in 0..3 {
            enc.skip_input.set(i, i, 1.0);
        }
        let x = Vector::from_vec(vec![1.0, 2.0, 3.0]).unwrap();
        let trace = encode(&x, &enc).unwrap();
        assert_eq!(trace.h[3], trace.h[1]);
        assert_eq!(trace.h[5], trace.h[3]);
    }

    #[test]
    fn encode_rejects_wrong_input_dim() {
        let enc = zero_encoder(3, 8);
        let x = Vector::zeros(4).unwrap();
        assert!(encode(&x, &enc).is_err());
    }

    #[test]
    fn decode_of_zero_parameters_is_zero() {
        let dec = zero_decoder(3, 8);
        let m = Vector::from_vec(vec![1.0; 8]).unwrap();
        let trace = decode(&m, &dec).unwrap();
        assert_eq!(trace.reconstruction.dim(), 3);
        assert!(trace.reconstruction.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn final_reconstruction_layer_is_linear() {
        // A negative output bias must survive: ReLU there would clamp it.
        let mut dec = zero_decoder(3, 8);
        dec.layers[0].bias = Vector::from_vec(vec![-1.0, 2.0, -3.0]).unwrap();
        let m = Vector::zeros(8).unwrap();
        let trace = decode(&m, &dec).unwrap();
        assert_eq!(trace.reconstruction.data(), &[-1.0, 2.0, -3.0]);
    }

    #[test]
    fn decoder_memory_skip_reaches_g3() {
        // V5 = 0 so g4 = 0; g3 = relu(V4 * 0 + m) = relu(m).
        let mut dec = zero_decoder(3, 4);
        dec.layers[4].weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
        let m = Vector::from_vec(vec![1.0, -1.0, 2.0, -2.0]).unwrap();
        let trace = decode(&m, &dec).unwrap();
        assert_eq!(trace.hidden[3].data(), &[1.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn decode_directional_derivative_matches_finite_differences() {
        // Forward-mode oracle for d(reconstruction)/d(memory_out) in a random
        // direction, reusing the ReLU masks from the base trace.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let dec = DecoderParams::xavier(5, 8, &mut rng).unwrap();
        let m = Vector::from_vec((0..8).map(|i| 0.3 + 0.1 * i as f64).collect()).unwrap();
        let base = decode(&m, &dec).unwrap();
        let direction =
            Vector::from_vec((0..8).map(|i| if i % 2 == 0 { 0.7 } else { -0.4 }).collect())
                .unwrap();

        let mask = |pre: &Vector, v: Vector| -> Vector {
            Vector::from_vec(
                v.data()
                    .iter()
                    .zip(pre.data())
                    .map(|(d, z)| if *z > 0.0 { *d } else { 0.0 })
                    .collect(),
            )
            .unwrap()
        };
        let d4 = mask(&base.pre[4], dec.layers[5].weight.matvec(&direction).unwrap());
        let mut t3 = dec.layers[4].weight.matvec(&d4).unwrap();
        t3.add_assign(&direction).unwrap();
        let d3 = mask(&base.pre[3], t3);
        let d2 = mask(&base.pre[2], dec.layers[3].weight.matvec(&d3).unwrap());
        let mut t1 = dec.layers[2].weight.matvec(&d2).unwrap();
        t1.add_assign(&d3).unwrap();
        let d1 = mask(&base.pre[1], t1);
        let d0 = mask(&base.pre[0], dec.layers[1].weight.matvec(&d1).unwrap());
        let mut analytic = dec.layers[0].weight.matvec(&d0).unwrap();
        analytic.add_assign(&dec.skip_output.matvec(&d1).unwrap()).unwrap();

        let step = 1e-5;
        let mut plus = m.clone();
        let mut minus = m.clone();
        plus.axpy(step, &direction).unwrap();
        minus.axpy(-step, &direction).unwrap();
        let rp = decode(&plus, &dec).unwrap().reconstruction;
        let rm = decode(&minus, &dec).unwrap().reconstruction;
        for i in 0..5 {
            let fd = (rp.get(i) - rm.get(i)) / (2.0 * step);
            let rel = (analytic.get(i) - fd).abs() / fd.abs().max(1e-8);
            assert!(rel < 1e-4, "component {i}: analytic {} vs fd {fd}", analytic.get(i));
        }
    }

    #[test]
    fn xavier_constructors_are_reproducible() {
        let a = EncoderParams::xavier(3, 8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = EncoderParams::xavier(3, 8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        let c = DecoderParams::xavier(3, 8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let d = DecoderParams::xavier(3, 8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn reconstruction_error_is_squared_distance() {
        let x = Vector::from_vec(vec![1.0, 2.0]).unwrap();
        let y = Vector::from_vec(vec![0.0, 4.0]).unwrap();
        assert_eq!(reconstruction_error(&x, &y).unwrap(), 5.0);
        assert_eq!(reconstruction_error(&x, &x).unwrap(), 0.0);
        let z = Vector::zeros(3).unwrap();
        assert!(reconstruction_error(&x, &z).is_err());
    }
}
