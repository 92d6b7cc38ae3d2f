//! Trainable classical baseline head `logits = W·z + b`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcHead {
    /// `C × U`, row per class.
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcGrad {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl FcHead {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self { weight: vec![vec![0.0; dim]; classes], bias: vec![0.0; classes] }
    }

    /// Gaussian weights with std `1/√U`, zero bias.
    pub fn random(classes: usize, dim: usize, seed: u64) -> Self {
        let mut rng = stream(seed, &[]);
        let sd = 1.0 / (dim.max(1) as f64).sqrt();
        let weight = (0..classes)
            .map(|_| (0..dim).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        Self { weight, bias: vec![0.0; classes] }
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weight.first().map_or(0, Vec::len)
    }

    /// `C·(U+1)`.
    pub fn num_params(&self) -> usize {
        self.num_classes() * (self.input_dim() + 1)
    }

    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.input_dim() {
            return Err(Error::Shape(format!("FC head expects {} inputs, got {}", self.input_dim(), z.len())));
        }
        Ok(self
            .weight
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| b + w.iter().zip(z).map(|(w, z)| w * z).sum::<f64>())
            .collect())
    }

    /// Exact gradient of `−log softmax(W·z + b)[label]`.
    pub fn grad(&self, z: &[f64], label: usize) -> Result<FcGrad> {
        let c = self.num_classes();
        if label >= c {
            return Err(Error::Argument(format!("label {label} out of range for {c} classes")));
        }
        let p = crate::training::softmax_probs(&self.forward(z)?, c)?;
        let delta: Vec<f64> = p.iter().enumerate().map(|(k, pk)| pk - f64::from(u8::from(k == label))).collect();
        Ok(FcGrad {
            weight: delta.iter().map(|d| z.iter().map(|z| d * z).collect()).collect(),
            bias: delta,
        })
    }

    /// Flat parameter view: weight rows then bias.
    pub fn params(&self) -> Vec<f64> {
        self.weight.iter().flatten().chain(&self.bias).copied().collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!("FC head has {} parameters, got {}", self.num_params(), flat.len())));
        }
        let u = self.input_dim();
        for (k, row) in self.weight.iter_mut().enumerate() {
            row.copy_from_slice(&flat[k * u..(k + 1) * u]);
        }
        let c = self.num_classes();
        self.bias.copy_from_slice(&flat[c * u..]);
        Ok(())
    }
}

impl FcGrad {
    pub fn flatten(&self) -> Vec<f64> {
        self.weight.iter().flatten().chain(&self.bias).copied().collect()
    }
}
