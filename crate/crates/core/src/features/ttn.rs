//! Tensor-train matrix (TT-matrix) feature block.
//!
//! Core `k` has shape `(r_{k-1}, m_k, n_k, r_k)` stored row-major, with
//! `r_0 = r_N = 1`, `Π m_k = D_in` and `Π n_k = U`. Inputs and outputs are
//! reshaped row-major, so `i_1` / `j_1` are the slowest-varying indices.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::training::{cross_entropy, softmax_probs, Adam};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LEGOTTN1";
pub const CHECKPOINT_VERSION: u32 = 1;
const DENSE_LIMIT: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtnBlock {
    in_modes: Vec<usize>,
    out_modes: Vec<usize>,
    ranks: Vec<usize>,
    cores: Vec<Vec<f64>>,
    #[serde(default)]
    frozen: bool,
}

impl TtnBlock {
    /// Builds a block from explicit cores, checking every shape constraint.
    pub fn new(in_modes: Vec<usize>, out_modes: Vec<usize>, ranks: Vec<usize>, cores: Vec<Vec<f64>>) -> Result<Self> {
        let block = Self { in_modes, out_modes, ranks, cores, frozen: false };
        block.validate()?;
        Ok(block)
    }

    /// Gaussian cores scaled so that `Var(W_ji) ≈ 1 / D_in`.
    pub fn random(in_modes: Vec<usize>, out_modes: Vec<usize>, ranks: Vec<usize>, seed: u64) -> Result<Self> {
        let mut block = Self {
            cores: Vec::new(),
            in_modes,
            out_modes,
            ranks,
            frozen: false,
        };
        block.validate_shape()?;
        let n = block.in_modes.len();
        let inner: f64 = block.ranks[1..n].iter().map(|&r| r as f64).product();
        let d_in = block.input_dim() as f64;
        let sd = (1.0 / (d_in * inner)).powf(1.0 / (2.0 * n as f64));
        let mut rng = stream(seed, &[]);
        block.cores = (0..n)
            .map(|k| {
                (0..block.core_len(k))
                    .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        Ok(block)
    }

    /// Rank-1 block whose cores are `m_k × m_k` identities.
    pub fn identity(modes: Vec<usize>) -> Result<Self> {
        let n = modes.len();
        let cores = modes
            .iter()
            .map(|&m| {
                let mut c = vec![0.0; m * m];
                for i in 0..m {
                    c[i * m + i] = 1.0;
                }
                c
            })
            .collect();
        Self::new(modes.clone(), modes, vec![1; n + 1], cores)
    }

    pub fn in_modes(&self) -> &[usize] {
        &self.in_modes
    }

    pub fn out_modes(&self) -> &[usize] {
        &self.out_modes
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn cores(&self) -> &[Vec<f64>] {
        &self.cores
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Mutable access to the cores; refused once the block is frozen.
    pub fn cores_mut(&mut self) -> Result<&mut [Vec<f64>]> {
        if self.frozen {
            return Err(Error::FrozenBlock("TTN cores are frozen and cannot be written".into()));
        }
        Ok(&mut self.cores)
    }

    pub fn input_dim(&self) -> usize {
        self.in_modes.iter().product()
    }

    pub fn output_dim(&self) -> usize {
        self.out_modes.iter().product()
    }

    pub fn num_params(&self) -> usize {
        (0..self.in_modes.len()).map(|k| self.core_len(k)).sum()
    }

    fn core_len(&self, k: usize) -> usize {
        self.ranks[k] * self.in_modes[k] * self.out_modes[k] * self.ranks[k + 1]
    }

    fn validate_shape(&self) -> Result<()> {
        let n = self.in_modes.len();
        if n == 0 {
            return Err(Error::Config("TTN needs at least one core".into()));
        }
        if self.out_modes.len() != n {
            return Err(Error::Config(format!(
                "TTN has {n} input factors but {} output factors",
                self.out_modes.len()
            )));
        }
        if self.ranks.len() != n + 1 {
            return Err(Error::Config(format!("TTN with {n} cores needs {} ranks, got {}", n + 1, self.ranks.len())));
        }
        if self.ranks[0] != 1 || self.ranks[n] != 1 {
            return Err(Error::Config("TTN boundary ranks r_0 and r_N must be 1".into()));
        }
        for (k, (&m, &o)) in self.in_modes.iter().zip(&self.out_modes).enumerate() {
            if m == 0 {
                return Err(Error::Config(format!("TTN input factor m_{} is zero", k + 1)));
            }
            if o == 0 {
                return Err(Error::Config(format!("TTN output factor n_{} is zero", k + 1)));
            }
        }
        if let Some(k) = self.ranks.iter().position(|&r| r == 0) {
            return Err(Error::Config(format!("TTN rank r_{k} is zero")));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_shape()?;
        if self.cores.len() != self.in_modes.len() {
            return Err(Error::Config(format!(
                "TTN declares {} cores but holds {}",
                self.in_modes.len(),
                self.cores.len()
            )));
        }
        for (k, core) in self.cores.iter().enumerate() {
            if core.len() != self.core_len(k) {
                return Err(Error::Config(format!(
                    "TTN core {} has {} entries, shape ({}, {}, {}, {}) needs {}",
                    k + 1,
                    core.len(),
                    self.ranks[k],
                    self.in_modes[k],
                    self.out_modes[k],
                    self.ranks[k + 1],
                    self.core_len(k)
                )));
            }
            if core.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("TTN core {} has non-finite entries", k + 1)));
            }
        }
        Ok(())
    }

    /// Left-to-right contraction; returns every intermediate tensor
    /// `A_k[J][r_k][I_rest]` (index 0 is the input itself).
    fn contract_with_trace(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if x.len() != self.input_dim() {
            return Err(Error::Config(format!(
                "TTN input has length {} but Π m_k = {} (factors {:?})",
                x.len(),
                self.input_dim(),
                self.in_modes
            )));
        }
        let mut trace = Vec::with_capacity(self.cores.len() + 1);
        trace.push(x.to_vec());
        let mut j_size = 1;
        let mut rest = self.input_dim();
        for (k, core) in self.cores.iter().enumerate() {
            let (rp, m, n, rn) = (self.ranks[k], self.in_modes[k], self.out_modes[k], self.ranks[k + 1]);
            rest /= m;
            let prev = trace.last().expect("trace starts with input");
            let mut next = vec![0.0; j_size * n * rn * rest];
            for jp in 0..j_size {
                for a in 0..rp {
                    for i in 0..m {
                        let src = &prev[((jp * rp + a) * m + i) * rest..][..rest];
                        for j in 0..n {
                            for b in 0..rn {
                                let g = core[((a * m + i) * n + j) * rn + b];
                                if g == 0.0 {
                                    continue;
                                }
                                let dst = &mut next[((jp * n + j) * rn + b) * rest..][..rest];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d += g * s;
                                }
                            }
                        }
                    }
                }
            }
            j_size *= n;
            trace.push(next);
        }
        Ok(trace)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.contract_with_trace(x)?.pop().expect("non-empty trace"))
    }

    /// Gradient of `Σ_j upstream_j · y_j` with respect to every core.
    fn backward(&self, trace: &[Vec<f64>], upstream: &[f64]) -> Vec<Vec<f64>> {
        let n_cores = self.cores.len();
        let mut grads: Vec<Vec<f64>> = self.cores.iter().map(|c| vec![0.0; c.len()]).collect();
        let mut d_next = upstream.to_vec();
        let mut j_size = self.output_dim();
        let mut rest = 1;
        for k in (0..n_cores).rev() {
            let (rp, m, n, rn) = (self.ranks[k], self.in_modes[k], self.out_modes[k], self.ranks[k + 1]);
            j_size /= n;
            let prev = &trace[k];
            let core = &self.cores[k];
            let mut d_prev = vec![0.0; j_size * rp * m * rest];
            for jp in 0..j_size {
                for a in 0..rp {
                    for i in 0..m {
                        let off = ((jp * rp + a) * m + i) * rest;
                        let src = &prev[off..off + rest];
                        for j in 0..n {
                            for b in 0..rn {
                                let dn = &d_next[((jp * n + j) * rn + b) * rest..][..rest];
                                let idx = ((a * m + i) * n + j) * rn + b;
                                grads[k][idx] += src.iter().zip(dn).map(|(s, d)| s * d).sum::<f64>();
                                let g = core[idx];
                                for (dp, d) in d_prev[off..off + rest].iter_mut().zip(dn) {
                                    *dp += g * d;
                                }
                            }
                        }
                    }
                }
            }
            rest *= m;
            d_next = d_prev;
        }
        grads
    }

    /// Dense `U × D_in` matrix by explicit summation over index tuples.
    pub fn to_dense(&self) -> Result<Vec<Vec<f64>>> {
        let (u, d) = (self.output_dim(), self.input_dim());
        if u.saturating_mul(d) > DENSE_LIMIT {
            return Err(Error::Scale(format!("dense TTN would have {u}×{d} entries (limit {DENSE_LIMIT})")));
        }
        let n_cores = self.cores.len();
        let digits = |mut idx: usize, modes: &[usize]| {
            let mut out = vec![0; modes.len()];
            for k in (0..modes.len()).rev() {
                out[k] = idx % modes[k];
                idx /= modes[k];
            }
            out
        };
        let mut dense = vec![vec![0.0; d]; u];
        for (jj, row) in dense.iter_mut().enumerate() {
            let js = digits(jj, &self.out_modes);
            for (ii, w) in row.iter_mut().enumerate() {
                let is = digits(ii, &self.in_modes);
                // Row vector over r_k, multiplied through each core slice.
                let mut v = vec![1.0];
                for k in 0..n_cores {
                    let (m, n, rn) = (self.in_modes[k], self.out_modes[k], self.ranks[k + 1]);
                    let mut nv = vec![0.0; rn];
                    for (a, va) in v.iter().enumerate() {
                        for (b, nb) in nv.iter_mut().enumerate() {
                            *nb += va * self.cores[k][((a * m + is[k]) * n + js[k]) * rn + b];
                        }
                    }
                    v = nv;
                }
                *w = v[0];
            }
        }
        Ok(dense)
    }

    /// Writes the self-describing little-endian checkpoint.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.cores.len() as u32).to_le_bytes())?;
        for list in [&self.ranks, &self.in_modes, &self.out_modes] {
            for &v in list.iter() {
                w.write_all(&(v as u32).to_le_bytes())?;
            }
        }
        w.write_all(&[u8::from(self.frozen)])?;
        for core in &self.cores {
            for v in core {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = ByteCursor { bytes: &bytes, pos: 0 };
        let magic = cur.take(8)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Format { offset: 0, message: "missing LEGOTTN1 magic".into() });
        }
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format { offset: 8, message: format!("unsupported TTN checkpoint version {version}") });
        }
        let n = cur.u32()? as usize;
        if n == 0 || n > 64 {
            return Err(Error::Format { offset: 12, message: format!("implausible core count {n}") });
        }
        let mut read_list = |len: usize| -> Result<Vec<usize>> { (0..len).map(|_| Ok(cur.u32()? as usize)).collect() };
        let ranks = read_list(n + 1)?;
        let in_modes = read_list(n)?;
        let out_modes = read_list(n)?;
        let frozen = cur.take(1)?[0] != 0;
        let mut block = Self { in_modes, out_modes, ranks, cores: Vec::new(), frozen };
        block.validate_shape().map_err(|e| Error::Format { offset: cur.pos as u64, message: e.to_string() })?;
        for k in 0..n {
            let len = block.core_len(k);
            let core = (0..len).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
            block.cores.push(core);
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format { offset: cur.pos as u64, message: "trailing bytes after last core".into() });
        }
        block.validate().map_err(|e| Error::Format { offset: cur.pos as u64, message: e.to_string() })?;
        Ok(block)
    }
}

pub(crate) struct ByteCursor<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> ByteCursor<'a> {
    pub fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.pos + len > self.bytes.len() {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("unexpected end of file (wanted {len} more bytes)"),
            });
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { epochs: 100, lr: 0.01, batch_size: 32, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub probe_train_accuracy: f64,
    pub final_loss: f64,
}

/// Trains the cores through a throwaway linear probe on a labelled source
/// dataset, then returns the block frozen. The probe is discarded.
pub fn pretrain_ttn(block: &TtnBlock, source: &Dataset, cfg: &PretrainConfig) -> Result<(TtnBlock, PretrainReport)> {
    if block.is_frozen() {
        return Err(Error::FrozenBlock("cannot pretrain a frozen TTN block".into()));
    }
    block.validate()?;
    if source.is_empty() {
        return Err(Error::Data("TTN pretraining needs a non-empty source dataset".into()));
    }
    if source.input_dim() != block.input_dim() {
        return Err(Error::Config(format!(
            "source features have width {} but TTN expects Π m_k = {}",
            source.input_dim(),
            block.input_dim()
        )));
    }
    let classes = source.num_classes().max(2);
    let u = block.output_dim();
    let mut trained = block.clone();
    let mut probe_w = vec![0.0; classes * u];
    let mut probe_b = vec![0.0; classes];

    let n_core: usize = trained.num_params();
    let mut opt = Adam::new(n_core + probe_w.len() + probe_b.len(), cfg.lr);
    let batch = cfg.batch_size.max(1);
    let mut order: Vec<usize> = (0..source.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut rng = stream(cfg.seed, &[epoch as u64]);
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        for chunk in order.chunks(batch) {
            let mut g_cores: Vec<Vec<f64>> = trained.cores.iter().map(|c| vec![0.0; c.len()]).collect();
            let mut g_w = vec![0.0; probe_w.len()];
            let mut g_b = vec![0.0; classes];
            for &s in chunk {
                let trace = trained.contract_with_trace(&source.features[s])?;
                let y = trace.last().expect("trace");
                let logits: Vec<f64> = (0..classes)
                    .map(|c| probe_b[c] + (0..u).map(|j| probe_w[c * u + j] * y[j]).sum::<f64>())
                    .collect();
                let p = softmax_probs(&logits, classes)?;
                let mut dy = vec![0.0; u];
                for c in 0..classes {
                    let delta = p[c] - f64::from(u8::from(c == source.labels[s]));
                    g_b[c] += delta;
                    for j in 0..u {
                        g_w[c * u + j] += delta * y[j];
                        dy[j] += delta * probe_w[c * u + j];
                    }
                }
                for (acc, g) in g_cores.iter_mut().zip(trained.backward(&trace, &dy)) {
                    acc.iter_mut().zip(g).for_each(|(a, g)| *a += g);
                }
            }
            let scale = 1.0 / chunk.len() as f64;
            let grad: Vec<f64> = g_cores.iter().flatten().chain(&g_w).chain(&g_b).map(|g| g * scale).collect();
            let mut params: Vec<f64> = trained.cores.iter().flatten().chain(&probe_w).chain(&probe_b).copied().collect();
            opt.step(&mut params, &grad);
            let mut it = params.into_iter();
            for core in trained.cores_mut()? {
                core.iter_mut().for_each(|v| *v = it.next().expect("param"));
            }
            probe_w.iter_mut().for_each(|v| *v = it.next().expect("param"));
            probe_b.iter_mut().for_each(|v| *v = it.next().expect("param"));
        }
    }

    let mut correct = 0usize;
    let mut loss = 0.0;
    for s in 0..source.len() {
        let y = trained.forward(&source.features[s])?;
        let logits: Vec<f64> = (0..classes)
            .map(|c| probe_b[c] + (0..u).map(|j| probe_w[c * u + j] * y[j]).sum::<f64>())
            .collect();
        let p = softmax_probs(&logits, classes)?;
        loss += cross_entropy(&p, source.labels[s])?;
        if argmax(&p) == source.labels[s] {
            correct += 1;
        }
    }
    trained.freeze();
    let n = source.len() as f64;
    Ok((trained, PretrainReport { probe_train_accuracy: correct as f64 / n, final_loss: loss / n }))
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_cores_reproduce_input() {
        let block = TtnBlock::identity(vec![2, 3, 2]).unwrap();
        let x: Vec<f64> = (0..12).map(|v| v as f64 * 0.5 - 1.0).collect();
        assert_eq!(block.forward(&x).unwrap(), x);
        let dense = block.to_dense().unwrap();
        for (j, row) in dense.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                assert_eq!(*v, if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn zero_core_gives_zero_matrix() {
        let mut block = TtnBlock::random(vec![2, 2], vec![2, 1], vec![1, 2, 1], 3).unwrap();
        block.cores_mut().unwrap()[1].iter_mut().for_each(|v| *v = 0.0);
        assert!(block.to_dense().unwrap().iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn shape_errors_name_the_factor() {
        let err = TtnBlock::random(vec![2, 0], vec![1, 1], vec![1, 1, 1], 0).unwrap_err();
        assert!(err.to_string().contains("m_2"), "{err}");
        let err = TtnBlock::random(vec![2, 2], vec![1, 1], vec![2, 1, 1], 0).unwrap_err();
        assert!(err.to_string().contains("r_0"), "{err}");
        let block = TtnBlock::identity(vec![2, 2]).unwrap();
        let err = block.forward(&[1.0; 5]).unwrap_err();
        assert!(err.to_string().contains("Π m_k"), "{err}");
    }

    #[test]
    fn frozen_block_refuses_writes() {
        let mut block = TtnBlock::identity(vec![2]).unwrap();
        block.freeze();
        assert!(matches!(block.cores_mut(), Err(Error::FrozenBlock(_))));
        let ds = Dataset::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![0, 1]).unwrap();
        assert!(matches!(pretrain_ttn(&block, &ds, &PretrainConfig::default()), Err(Error::FrozenBlock(_))));
    }

    #[test]
    fn zero_epochs_leaves_cores_unchanged() {
        let block = TtnBlock::random(vec![2, 2], vec![2, 1], vec![1, 2, 1], 9).unwrap();
        let ds = Dataset::new(vec![vec![0.0, 1.0, 0.5, 0.2], vec![1.0, 0.0, 0.1, 0.3]], vec![0, 1]).unwrap();
        let cfg = PretrainConfig { epochs: 0, ..Default::default() };
        let (out, _) = pretrain_ttn(&block, &ds, &cfg).unwrap();
        assert_eq!(out.cores(), block.cores());
        assert!(out.is_frozen());
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let block = TtnBlock::random(vec![3, 2], vec![2, 2], vec![1, 3, 1], 4).unwrap();
        let mut buf = Vec::new();
        block.write_checkpoint(&mut buf).unwrap();
        assert_eq!(TtnBlock::read_checkpoint(&buf[..]).unwrap(), block);
        let err = TtnBlock::read_checkpoint(&buf[..buf.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(TtnBlock::read_checkpoint(&bad[..]), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let block = TtnBlock::random(vec![2, 3], vec![2, 2], vec![1, 2, 1], 5).unwrap();
        let x = [0.3, -0.2, 0.9, 0.1, -0.5, 0.7];
        let up = [0.2, -1.0, 0.5, 0.3];
        let trace = block.contract_with_trace(&x).unwrap();
        let grads = block.backward(&trace, &up);
        let objective = |b: &TtnBlock| b.forward(&x).unwrap().iter().zip(&up).map(|(y, u)| y * u).sum::<f64>();
        let h = 1e-6;
        for k in 0..2 {
            for e in 0..block.cores()[k].len() {
                let mut p = block.clone();
                p.cores_mut().unwrap()[k][e] += h;
                let mut m = block.clone();
                m.cores_mut().unwrap()[k][e] -= h;
                let fd = (objective(&p) - objective(&m)) / (2.0 * h);
                assert!((fd - grads[k][e]).abs() <= 1e-7, "core {k} entry {e}: {fd} vs {}", grads[k][e]);
            }
        }
    }
}
