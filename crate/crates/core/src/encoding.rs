//! Tensor product encoding of frozen features into a separable register.
//!
//! Features are standardized per column and squashed into (-1, 1); feature
//! `u` then sets qubit `u` to `RY(π/2 · φ_u)|0⟩`. Nothing here is trainable.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::StateVector;

pub const STD_FLOOR: f64 = 1e-8;

/// Largest representable value below 1.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Squash {
    #[default]
    Tanh,
    /// Affine map of the fitted [min, max] range onto [-1, 1], clipped.
    MinMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizerSpec {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub squash: Squash,
}

impl NormalizerSpec {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Fits per-column statistics (population std, floored at 1e-8).
    pub fn fit(features: &[Vec<f64>], squash: Squash) -> Result<Self> {
        let n = features.len();
        if n < 2 {
            return Err(Error::Data(format!("normalizer needs at least 2 rows, got {n}")));
        }
        let dim = features[0].len();
        if let Some((i, row)) = features.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(Error::Shape(format!("row {i} has {} features, expected {dim}", row.len())));
        }
        let mut mean = vec![0.0; dim];
        let mut min = vec![f64::INFINITY; dim];
        let mut max = vec![f64::NEG_INFINITY; dim];
        for row in features {
            for (u, &v) in row.iter().enumerate() {
                mean[u] += v;
                min[u] = min[u].min(v);
                max[u] = max[u].max(v);
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; dim];
        for row in features {
            for (u, &v) in row.iter().enumerate() {
                var[u] += (v - mean[u]).powi(2);
            }
        }
        let std = var.into_iter().map(|v| (v / n as f64).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std, min, max, squash })
    }

    /// The squashing map φ applied to one raw feature vector.
    pub fn phi(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.dim() {
            return Err(Error::Shape(format!("feature vector has length {}, normalizer expects {}", raw.len(), self.dim())));
        }
        let out = raw
            .iter()
            .enumerate()
            .map(|(u, &v)| match self.squash {
                Squash::Tanh => ((v - self.mean[u]) / self.std[u]).tanh().clamp(-BELOW_ONE, BELOW_ONE),
                Squash::MinMax => {
                    let span = (self.max[u] - self.min[u]).max(STD_FLOOR);
                    (2.0 * (v - self.min[u]) / span - 1.0).clamp(-1.0, 1.0)
                }
            })
            .collect();
        Ok(out)
    }
}

pub fn fit_normalizer(features: &[Vec<f64>]) -> Result<NormalizerSpec> {
    NormalizerSpec::fit(features, Squash::Tanh)
}

/// Product state `⊗_u RY(π/2 · φ_u)|0⟩`.
pub fn encode_tpe(phi: &[f64]) -> Result<StateVector> {
    if phi.is_empty() {
        return Err(Error::Shape("cannot encode an empty feature vector".into()));
    }
    if let Some((u, v)) = phi.iter().enumerate().find(|(_, v)| !(-1.0..=1.0).contains(*v)) {
        return Err(Error::Range(format!("encoder input φ[{u}] = {v} outside [-1, 1]")));
    }
    let mut amps = vec![Complex64::new(1.0, 0.0)];
    // Qubit u becomes bit u: each new qubit doubles the vector as its high half.
    for &p in phi {
        let (s, c) = (FRAC_PI_2 * p / 2.0).sin_cos();
        let lo: Vec<Complex64> = amps.iter().map(|a| a * c).collect();
        let hi: Vec<Complex64> = amps.iter().map(|a| a * s).collect();
        amps = lo;
        amps.extend(hi);
    }
    StateVector::from_amplitudes(amps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Gate;

    #[test]
    fn constant_column_is_floored() {
        let rows = vec![vec![3.0, -1.0], vec![3.0, 1.0]];
        let spec = fit_normalizer(&rows).unwrap();
        assert_eq!(spec.std[0], STD_FLOOR);
        assert_eq!(spec.phi(&[3.0, 0.0]).unwrap()[0], 0.0);
        assert_eq!(spec.mean[1], 0.0);
        assert_eq!(spec.std[1], 1.0);
    }

    #[test]
    fn duplicated_rows_mean_equals_row() {
        let rows = vec![vec![0.5, 2.0], vec![0.5, 2.0]];
        let spec = fit_normalizer(&rows).unwrap();
        assert_eq!(spec.mean, vec![0.5, 2.0]);
        assert!(fit_normalizer(&rows[..1]).is_err());
    }

    #[test]
    fn phi_values() {
        let spec = fit_normalizer(&[vec![-1.0, 0.0], vec![1.0, 2.0]]).unwrap();
        assert_eq!(spec.phi(&spec.mean.clone()).unwrap(), vec![0.0, 0.0]);
        let v = spec.phi(&[1.0, 1.0]).unwrap();
        assert!((v[0] - 0.761_594_155_955_764_9).abs() <= 1e-12);
        let big = spec.phi(&[1e300, -1e300]).unwrap();
        assert!(big[0] < 1.0 && big[0] > 0.999);
        assert!(big[1] > -1.0 && big[1] < -0.999);
        assert!(spec.phi(&[1.0]).is_err());
    }

    #[test]
    fn encoding_examples() {
        let z = encode_tpe(&[0.0, 0.0, 0.0]).unwrap().expectation_z_all();
        assert_eq!(z, vec![1.0; 3]);
        let z = encode_tpe(&[1.0, 0.0]).unwrap().expectation_z_all();
        assert!(z[0].abs() <= 1e-12 && (z[1] - 1.0).abs() <= 1e-12);
        let z2 = encode_tpe(&[1.0, 0.7]).unwrap().expectation_z_all();
        assert!((z2[0] - z[0]).abs() <= 1e-15);
        assert!(matches!(encode_tpe(&[1.2]), Err(Error::Range(_))));
    }

    #[test]
    fn encoding_matches_ry_gates() {
        let phi = [0.3, -0.8, 0.55, 1.0];
        let direct = encode_tpe(&phi).unwrap();
        let mut gates = StateVector::zero(4).unwrap();
        for (u, p) in phi.iter().enumerate() {
            gates.apply_gate(&Gate::Ry(u, FRAC_PI_2 * p)).unwrap();
        }
        for (a, b) in direct.amplitudes().iter().zip(gates.amplitudes()) {
            assert!((a - b).norm() <= 1e-14);
        }
    }

    #[test]
    fn min_max_squash_maps_range() {
        let spec = NormalizerSpec::fit(&[vec![2.0], vec![4.0], vec![3.0]], Squash::MinMax).unwrap();
        assert_eq!(spec.phi(&[2.0]).unwrap(), vec![-1.0]);
        assert_eq!(spec.phi(&[4.0]).unwrap(), vec![1.0]);
        assert_eq!(spec.phi(&[9.0]).unwrap(), vec![1.0]);
    }
}
