//! Prototype memory with cosine addressing and hard shrinkage.
//!
//! The memory is a bank of trainable latent prototypes. A latent vector
//! addresses it by softmax over cosine similarities, the addressing
//! weights are sharpened by a hard-shrinkage rectifier and renormalized,
//! and the read-out is the shrunken-weight combination of the prototypes.
//! The entropy of the shrunken weights doubles as a sparsity regularizer
//! in the training loss.

use rand::Rng;

use crate::error::{AoilError, Result};
use crate::linalg::{cosine_similarity, softmax, xavier_init, Matrix, Vector};

/// Trainable prototype bank plus the two scalar hyperparameters that
/// travel with it: the shrinkage epsilon and the weight of the entropy
/// term in the total loss.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryModule {
    /// One prototype per row: `units x hidden_dim`.
    pub slots: Matrix,
    pub shrink_epsilon: f64,
    pub lambda: f64,
}

impl MemoryModule {
    pub fn xavier<R: Rng>(
        units: usize,
        hidden_dim: usize,
        lambda: f64,
        shrink_epsilon: f64,
        rng: &mut R,
    ) -> Result<MemoryModule> {
        if units == 0 {
            return Err(AoilError::Dimension("memory needs at least one unit".into()));
        }
        if !(shrink_epsilon > 0.0) {
            return Err(AoilError::Config(format!(
                "shrink_epsilon must be positive, got {shrink_epsilon}"
            )));
        }
        if !(lambda >= 0.0) {
            return Err(AoilError::Config(format!("lambda must be nonnegative, got {lambda}")));
        }
        Ok(MemoryModule { slots: xavier_init(units, hidden_dim, rng)?, shrink_epsilon, lambda })
    }

    pub fn units(&self) -> usize {
        self.slots.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.slots.cols()
    }

    /// Row `i` of the prototype bank as a vector view for similarity math.
    fn slot(&self, index: usize) -> Vector {
        Vector::from_vec(self.slots.row(index).to_vec()).expect("slot rows are nonempty")
    }
}

/// Soft addressing weights: softmax over the cosine similarity between the
/// latent and every prototype. Always a probability vector.
pub fn address(latent: &Vector, memory: &MemoryModule) -> Result<Vector> {
    if latent.dim() != memory.hidden_dim() {
        return Err(AoilError::Dimension(format!(
            "address: latent dim {} but memory stores dim {}",
            latent.dim(),
            memory.hidden_dim()
        )));
    }
    let mut sims = Vec::with_capacity(memory.units());
    for i in 0..memory.units() {
        sims.push(cosine_similarity(latent, &memory.slot(i))?);
    }
    Ok(softmax(&Vector::from_vec(sims)?))
}

/// Hard shrinkage: `max(w, 0) * w / (|w| + eps)` per component, then
/// renormalized to sum 1 so the read-out stays a convex combination.
/// Should every component shrink to zero, the weights fall back to
/// uniform.
pub fn shrink(weights: &Vector, memory: &MemoryModule) -> Result<Vector> {
    if weights.dim() != memory.units() {
        return Err(AoilError::Dimension(format!(
            "shrink: {} weights for {} memory units",
            weights.dim(),
            memory.units()
        )));
    }
    let eps = memory.shrink_epsilon;
    let raw: Vec<f64> = weights.data().iter().map(|w| w.max(0.0) * w / (w.abs() + eps)).collect();
    let sum: f64 = raw.iter().sum();
    if sum <= 0.0 {
        let n = raw.len() as f64;
        return Vector::from_vec(vec![1.0 / n; raw.len()]);
    }
    Vector::from_vec(raw.iter().map(|r| r / sum).collect())
}

/// Read-out: the weighted combination of prototypes, `sum_i w_i slot_i`.
pub fn read(weights: &Vector, memory: &MemoryModule) -> Result<Vector> {
    if weights.dim() != memory.units() {
        return Err(AoilError::Dimension(format!(
            "read: {} weights for {} memory units",
            weights.dim(),
            memory.units()
        )));
    }
    memory.slots.matvec_transpose(weights)
}

/// Shannon entropy `sum_i -w_i ln(w_i)` with the `0 ln 0 = 0` convention.
/// Zero for a one-hot addressing, `ln(n)` for uniform.
pub fn entropy_reg(weights: &Vector) -> f64 {
    weights.data().iter().map(|w| if *w > 0.0 { -w * w.ln() } else { 0.0 }).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn memory_from_rows(rows: Vec<Vec<f64>>) -> MemoryModule {
        let units = rows.len();
        let dim = rows[0].len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        MemoryModule {
            slots: Matrix::from_vec(units, dim, flat).unwrap(),
            shrink_epsilon: 1e-12,
            lambda: 2e-4,
        }
    }

    #[test]
    fn constructor_validates_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(MemoryModule::xavier(0, 4, 2e-4, 1e-12, &mut rng).is_err());
        assert!(MemoryModule::xavier(4, 4, 2e-4, 0.0, &mut rng).is_err());
        assert!(MemoryModule::xavier(4, 4, -1.0, 1e-12, &mut rng).is_err());
        assert!(MemoryModule::xavier(4, 4, 2e-4, 1e-12, &mut rng).is_ok());
    }

    #[test]
    fn single_unit_addressing_is_certain() {
        let memory = memory_from_rows(vec![vec![0.3, 0.4]]);
        let latent = Vector::from_vec(vec![1.0, 1.0]).unwrap();
        let w = address(&latent, &memory).unwrap();
        assert_eq!(w.data(), &[1.0]);
    }

    #[test]
    fn identical_prototypes_address_uniformly() {
        let memory = memory_from_rows(vec![vec![1.0, 2.0]; 4]);
        let latent = Vector::from_vec(vec![0.5, -0.2]).unwrap();
        let w = address(&latent, &memory).unwrap();
        for v in w.data() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn addressing_matches_hand_computed_softmax() {
        // latent aligned with slot 0 (cos = 1) and orthogonal to slot 1
        // (cos = 0): softmax([1, 0]) = [e/(e+1), 1/(e+1)].
        let memory = memory_from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let latent = Vector::from_vec(vec![2.0, 0.0]).unwrap();
        let w = address(&latent, &memory).unwrap();
        let e = std::f64::consts::E;
        assert!((w.get(0) - e / (e + 1.0)).abs() < 1e-12);
        assert!((w.get(1) - 1.0 / (e + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_latent_addresses_uniformly() {
        let memory = memory_from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        let latent = Vector::zeros(2).unwrap();
        let w = address(&latent, &memory).unwrap();
        for v in w.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shrink_keeps_positive_weights_nearly_unchanged() {
        let memory = memory_from_rows(vec![vec![0.0, 0.0]; 3]);
        let w = Vector::from_vec(vec![0.2, 0.3, 0.5]).unwrap();
        let s = shrink(&w, &memory).unwrap();
        for (got, want) in s.data().iter().zip(w.data()) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn shrink_zeroes_negative_components_and_renormalizes() {
        // Raw shrinkage of [0.6, -0.2, 0.6] is ~[0.6, 0, 0.6]; renormalized
        // to [0.5, 0, 0.5].
        let memory = memory_from_rows(vec![vec![0.0]; 3]);
        let w = Vector::from_vec(vec![0.6, -0.2, 0.6]).unwrap();
        let s = shrink(&w, &memory).unwrap();
        assert!((s.get(0) - 0.5).abs() < 1e-9);
        assert_eq!(s.get(1), 0.0);
        assert!((s.get(2) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn shrink_falls_back_to_uniform_when_everything_dies() {
        let memory = memory_from_rows(vec![vec![0.0]; 4]);
        let w = Vector::from_vec(vec![-0.1, -0.5, -0.2, -0.2]).unwrap();
        let s = shrink(&w, &memory).unwrap();
        for v in s.data() {
            assert_eq!(*v, 0.25);
        }
    }

    #[test]
    fn shrink_of_a_singleton_is_identity() {
        let memory = memory_from_rows(vec![vec![0.0]]);
        let w = Vector::from_vec(vec![1.0]).unwrap();
        let s = shrink(&w, &memory).unwrap();
        assert_eq!(s.data(), &[1.0]);
    }

    #[test]
    fn read_with_one_hot_weights_returns_that_prototype() {
        let memory = memory_from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let w = Vector::from_vec(vec![0.0, 1.0]).unwrap();
        let out = read(&w, &memory).unwrap();
        assert_eq!(out.data(), &[3.0, 4.0]);
    }

    #[test]
    fn read_blends_prototypes_linearly() {
        // 0.25 * [4, 0] + 0.75 * [0, 4] = [1, 3]
        let memory = memory_from_rows(vec![vec![4.0, 0.0], vec![0.0, 4.0]]);
        let w = Vector::from_vec(vec![0.25, 0.75]).unwrap();
        let out = read(&w, &memory).unwrap();
        assert_eq!(out.data(), &[1.0, 3.0]);
    }

    #[test]
    fn entropy_known_values() {
        let one_hot = Vector::from_vec(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(entropy_reg(&one_hot), 0.0);
        let uniform = Vector::from_vec(vec![0.25; 4]).unwrap();
        assert!((entropy_reg(&uniform) - 4.0_f64.ln()).abs() < 1e-12);
        let half = Vector::from_vec(vec![0.5, 0.5]).unwrap();
        assert!((entropy_reg(&half) - 2.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatches_are_rejected() {
        let memory = memory_from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let bad_latent = Vector::zeros(3).unwrap();
        assert!(address(&bad_latent, &memory).is_err());
        let bad_weights = Vector::zeros(3).unwrap();
        assert!(shrink(&bad_weights, &memory).is_err());
        assert!(read(&bad_weights, &memory).is_err());
    }

    proptest! {
        #[test]
        fn addressing_and_shrinkage_stay_on_the_simplex(
            latent in proptest::collection::vec(-5.0..5.0_f64, 6),
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let memory = MemoryModule::xavier(5, 6, 2e-4, 1e-12, &mut rng).unwrap();
            let latent = Vector::from_vec(latent).unwrap();
            let w = address(&latent, &memory).unwrap();
            let s = shrink(&w, &memory).unwrap();
            for weights in [&w, &s] {
                let sum: f64 = weights.data().iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
                prop_assert!(weights.data().iter().all(|v| *v >= 0.0));
            }
            let entropy = entropy_reg(&s);
            prop_assert!(entropy >= 0.0 && entropy <= (memory.units() as f64).ln() + 1e-12);
        }
    }
}
