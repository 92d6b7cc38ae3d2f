//! Precomputed embeddings loaded from disk, standing in for a frozen deep encoder.
//!
//! Binary layout (little-endian): magic `LEGOEMB1`, version `u32`, record
//! count `u64`, width `u32`, then per record an `u64` id followed by the
//! embedding as `f32` values.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::ttn::ByteCursor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"LEGOEMB1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingBlock {
    dim: usize,
    #[serde(with = "id_pairs")]
    table: BTreeMap<u64, Vec<f64>>,
    pub source_tag: String,
}

impl EmbeddingBlock {
    pub fn new(dim: usize, table: BTreeMap<u64, Vec<f64>>, source_tag: impl Into<String>) -> Result<Self> {
        if let Some((id, v)) = table.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::Shape(format!("embedding for id {id} has length {}, expected {dim}", v.len())));
        }
        Ok(Self { dim, table, source_tag: source_tag.into() })
    }

    pub fn output_dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn table(&self) -> &BTreeMap<u64, Vec<f64>> {
        &self.table
    }

    pub fn lookup(&self, id: u64) -> Result<&[f64]> {
        self.table.get(&id).map(Vec::as_slice).ok_or(Error::Lookup(id))
    }

    pub fn read<R: Read>(mut r: R, source_tag: impl Into<String>) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = ByteCursor { bytes: &bytes, pos: 0 };
        if cur.take(8)? != MAGIC {
            return Err(Error::Format { offset: 0, message: "missing LEGOEMB1 magic".into() });
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::Format { offset: 8, message: format!("unsupported embedding version {version}") });
        }
        let n = cur.u64()?;
        let dim = cur.u32()? as usize;
        if dim == 0 {
            return Err(Error::Format { offset: 20, message: "embedding width is zero".into() });
        }
        let expected = 24u64 + n.saturating_mul(8 + 4 * dim as u64);
        if expected != bytes.len() as u64 {
            return Err(Error::Format {
                offset: bytes.len().min(expected as usize) as u64,
                message: format!("{n} records of width {dim} need {expected} bytes, file has {}", bytes.len()),
            });
        }
        let mut table = BTreeMap::new();
        for _ in 0..n {
            let at = cur.pos as u64;
            let id = cur.u64()?;
            let v = (0..dim).map(|_| cur.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Format { offset: at, message: format!("non-finite value in record for id {id}") });
            }
            if table.insert(id, v).is_some() {
                return Err(Error::Format { offset: at, message: format!("duplicate id {id}") });
            }
        }
        Self::new(dim, table, source_tag)
    }

    /// Writes the table; values are narrowed to `f32`.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.table.len() as u64).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for (id, v) in &self.table {
            w.write_all(&id.to_le_bytes())?;
            for x in v {
                w.write_all(&(*x as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }
}

/// JSON object keys are strings, and integer keys do not survive the
/// buffering of an internally tagged enum, so the table travels as pairs.
mod id_pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &BTreeMap<u64, Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(t.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<u64, Vec<f64>>, D::Error> {
        Ok(Vec::<(u64, Vec<f64>)>::deserialize(d)?.into_iter().collect())
    }
}
