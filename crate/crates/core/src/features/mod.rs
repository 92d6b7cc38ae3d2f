//! Frozen classical feature blocks and the classical FC baseline head.

pub mod embedding;
pub mod fc;
pub mod pca;
pub mod ttn;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{Error, Result};

pub use embedding::EmbeddingBlock;
pub use fc::{FcGrad, FcHead};
pub use pca::{fit_pca, PcaBlock};
pub use ttn::{pretrain_ttn, PretrainConfig, PretrainReport, TtnBlock};

/// A frozen map from raw input to `U` features. Nothing downstream can
/// obtain gradients with respect to a block's contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeatureBlock {
    Pca(PcaBlock),
    Ttn(TtnBlock),
    Embedding(EmbeddingBlock),
    Identity { dim: usize },
}

impl FeatureBlock {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Pca(_) => "pca",
            Self::Ttn(_) => "ttn",
            Self::Embedding(_) => "embedding",
            Self::Identity { .. } => "identity",
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Self::Pca(b) => b.output_dim(),
            Self::Ttn(b) => b.output_dim(),
            Self::Embedding(b) => b.output_dim(),
            Self::Identity { dim } => *dim,
        }
    }

    /// Maps one sample; embedding blocks key on `id` and ignore `x`.
    pub fn forward(&self, id: u64, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Pca(b) => b.forward(x),
            Self::Ttn(b) => b.forward(x),
            Self::Embedding(b) => Ok(b.lookup(id)?.to_vec()),
            Self::Identity { dim } => {
                if x.len() != *dim {
                    return Err(Error::Shape(format!("identity block expects {dim} features, got {}", x.len())));
                }
                Ok(x.to_vec())
            }
        }
    }

    pub fn forward_dataset(&self, data: &Dataset) -> Result<Vec<Vec<f64>>> {
        data.ids
            .iter()
            .zip(&data.features)
            .map(|(&id, x)| self.forward(id, x))
            .collect()
    }

    /// SHA-256 over the variant tag and every stored number, as hex.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.name().as_bytes());
        let mut put = |vals: &mut dyn Iterator<Item = f64>| {
            for v in vals {
                h.update(v.to_le_bytes());
            }
        };
        match self {
            Self::Pca(b) => {
                put(&mut b.mean.iter().copied());
                put(&mut b.components.iter().flatten().copied());
                put(&mut b.eigenvalues.iter().copied());
            }
            Self::Ttn(b) => {
                let shape = b.ranks().iter().chain(b.in_modes()).chain(b.out_modes());
                put(&mut shape.map(|&v| v as f64));
                put(&mut b.cores().iter().flatten().copied());
            }
            Self::Embedding(b) => {
                for (id, v) in b.table() {
                    put(&mut std::iter::once(*id as f64));
                    put(&mut v.iter().copied());
                }
            }
            Self::Identity { dim } => put(&mut std::iter::once(*dim as f64)),
        }
        hex_digest(h)
    }
}

pub(crate) fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
