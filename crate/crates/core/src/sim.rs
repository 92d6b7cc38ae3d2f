//! Dense statevector simulation.
//!
//! Basis index `b` stores qubit `u` in bit `u` (qubit 0 is the least
//! significant bit). Rotations use the half-angle convention
//! `R_A(θ) = exp(-i θ σ_A / 2)`.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};

pub const MAX_QUBITS: usize = 24;

type Mat2 = [[Complex64; 2]; 2];

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    /// Identity on one qubit; emitted by noise channels that draw the trivial Pauli.
    Id(usize),
    Rx(usize, f64),
    Ry(usize, f64),
    Rz(usize, f64),
    Px(usize),
    Py(usize),
    Pz(usize),
    Cnot { control: usize, target: usize },
}

impl Gate {
    /// Qubit acted on, for single-qubit gates.
    pub fn single_qubit(&self) -> Option<usize> {
        match *self {
            Gate::Rx(q, _) | Gate::Ry(q, _) | Gate::Rz(q, _) => Some(q),
            Gate::Id(q) | Gate::Px(q) | Gate::Py(q) | Gate::Pz(q) => Some(q),
            Gate::Cnot { .. } => None,
        }
    }

    pub fn angle(&self) -> Option<f64> {
        match *self {
            Gate::Rx(_, a) | Gate::Ry(_, a) | Gate::Rz(_, a) => Some(a),
            _ => None,
        }
    }

    /// Same gate with its rotation angle replaced.
    pub fn with_angle(&self, angle: f64) -> Gate {
        match *self {
            Gate::Rx(q, _) => Gate::Rx(q, angle),
            Gate::Ry(q, _) => Gate::Ry(q, angle),
            Gate::Rz(q, _) => Gate::Rz(q, angle),
            g => g,
        }
    }

    /// 2×2 matrix of a single-qubit gate.
    pub fn matrix(&self) -> Option<Mat2> {
        let m = match *self {
            Gate::Rx(_, t) => {
                let (s, c) = (t / 2.0).sin_cos();
                [[c.into(), -I * s], [-I * s, c.into()]]
            }
            Gate::Ry(_, t) => {
                let (s, c) = (t / 2.0).sin_cos();
                [[c.into(), (-s).into()], [s.into(), c.into()]]
            }
            Gate::Rz(_, t) => {
                let h = t / 2.0;
                [[Complex64::from_polar(1.0, -h), ZERO], [ZERO, Complex64::from_polar(1.0, h)]]
            }
            Gate::Id(_) => [[ONE, ZERO], [ZERO, ONE]],
            Gate::Px(_) => [[ZERO, ONE], [ONE, ZERO]],
            Gate::Py(_) => [[ZERO, -I], [I, ZERO]],
            Gate::Pz(_) => [[ONE, ZERO], [ZERO, -ONE]],
            Gate::Cnot { .. } => return None,
        };
        Some(m)
    }

    fn check(&self, num_qubits: usize) -> Result<()> {
        let bad = |index| Err(Error::QubitIndex { index, num_qubits });
        match *self {
            Gate::Cnot { control, target } => {
                if control >= num_qubits {
                    return bad(control);
                }
                if target >= num_qubits {
                    return bad(target);
                }
                if control == target {
                    return Err(Error::Argument(format!("CNOT control and target are both qubit {control}")));
                }
                Ok(())
            }
            g => {
                let q = g.single_qubit().expect("single-qubit gate");
                if q >= num_qubits { bad(q) } else { Ok(()) }
            }
        }
    }
}

fn matmul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[ZERO; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            out[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c];
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    num_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    /// `|0…0⟩` on `num_qubits` qubits.
    pub fn zero(num_qubits: usize) -> Result<Self> {
        if num_qubits == 0 || num_qubits > MAX_QUBITS {
            return Err(Error::Config(format!(
                "qubit count {num_qubits} outside supported range 1..={MAX_QUBITS}"
            )));
        }
        let mut amplitudes = vec![ZERO; 1 << num_qubits];
        amplitudes[0] = ONE;
        Ok(Self { num_qubits, amplitudes })
    }

    /// Computational basis state `|index⟩`.
    pub fn basis(num_qubits: usize, index: usize) -> Result<Self> {
        let mut s = Self::zero(num_qubits)?;
        if index >= s.amplitudes.len() {
            return Err(Error::Argument(format!("basis index {index} out of range")));
        }
        s.amplitudes[0] = ZERO;
        s.amplitudes[index] = ONE;
        Ok(s)
    }

    /// Wraps raw amplitudes; the length must be a power of two.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let len = amplitudes.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::Shape(format!("amplitude count {len} is not 2^U with U >= 1")));
        }
        let num_qubits = len.trailing_zeros() as usize;
        if num_qubits > MAX_QUBITS {
            return Err(Error::Config(format!("qubit count {num_qubits} exceeds {MAX_QUBITS}")));
        }
        Ok(Self { num_qubits, amplitudes })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn apply_gate(&mut self, gate: &Gate) -> Result<()> {
        gate.check(self.num_qubits)?;
        self.apply_unchecked(gate);
        Ok(())
    }

    /// Applies `gates` left to right. Consecutive single-qubit gates on the
    /// same qubit are fused into one pass.
    pub fn apply_circuit(&mut self, gates: &[Gate]) -> Result<()> {
        for (position, g) in gates.iter().enumerate() {
            g.check(self.num_qubits)
                .map_err(|e| Error::GateAt { position, source: Box::new(e) })?;
        }
        self.apply_circuit_unchecked(gates);
        Ok(())
    }

    pub(crate) fn apply_circuit_unchecked(&mut self, gates: &[Gate]) {
        let mut i = 0;
        while i < gates.len() {
            let g = &gates[i];
            match g.single_qubit() {
                Some(q) => {
                    let mut m = g.matrix().expect("single-qubit matrix");
                    let mut j = i + 1;
                    while j < gates.len() && gates[j].single_qubit() == Some(q) {
                        m = matmul(&gates[j].matrix().expect("single-qubit matrix"), &m);
                        j += 1;
                    }
                    if j == i + 1 {
                        self.apply_unchecked(g);
                    } else {
                        self.apply_matrix(q, &m);
                    }
                    i = j;
                }
                None => {
                    self.apply_unchecked(g);
                    i += 1;
                }
            }
        }
    }

    pub(crate) fn apply_unchecked(&mut self, gate: &Gate) {
        match *gate {
            Gate::Id(_) => {}
            Gate::Rz(q, t) => {
                let h = t / 2.0;
                self.apply_diagonal(q, Complex64::from_polar(1.0, -h), Complex64::from_polar(1.0, h))
            }
            Gate::Pz(q) => self.apply_diagonal(q, ONE, -ONE),
            Gate::Px(q) => {
                let stride = 1 << q;
                for_each_pair(&mut self.amplitudes, stride, std::mem::swap);
            }
            Gate::Cnot { control, target } => self.apply_cnot(control, target),
            g => {
                let q = g.single_qubit().expect("single-qubit gate");
                self.apply_matrix(q, &g.matrix().expect("single-qubit matrix"));
            }
        }
    }

    fn apply_matrix(&mut self, qubit: usize, m: &Mat2) {
        let [[m00, m01], [m10, m11]] = *m;
        for_each_pair(&mut self.amplitudes, 1 << qubit, |a, b| {
            let (x, y) = (*a, *b);
            *a = m00 * x + m01 * y;
            *b = m10 * x + m11 * y;
        });
    }

    fn apply_diagonal(&mut self, qubit: usize, d0: Complex64, d1: Complex64) {
        for_each_pair(&mut self.amplitudes, 1 << qubit, |a, b| {
            *a *= d0;
            *b *= d1;
        });
    }

    fn apply_cnot(&mut self, control: usize, target: usize) {
        let cmask = 1usize << control;
        let tmask = 1usize << target;
        for i in 0..self.amplitudes.len() {
            if i & cmask != 0 && i & tmask == 0 {
                self.amplitudes.swap(i, i | tmask);
            }
        }
    }

    /// `⟨σ_z^(u)⟩` for every qubit `u`, computed exactly from the amplitudes.
    pub fn expectation_z_all(&self) -> Vec<f64> {
        let mut z = vec![0.0; self.num_qubits];
        for (b, a) in self.amplitudes.iter().enumerate() {
            let p = a.norm_sqr();
            for (u, zu) in z.iter_mut().enumerate() {
                if b >> u & 1 == 0 {
                    *zu += p;
                } else {
                    *zu -= p;
                }
            }
        }
        z
    }

    /// Draws `shots` basis-state outcomes from `|amplitude|²`.
    pub fn sample_outcomes<R: Rng + ?Sized>(&self, shots: usize, rng: &mut R) -> Vec<usize> {
        let mut cdf = Vec::with_capacity(self.amplitudes.len());
        let mut acc = 0.0;
        for a in &self.amplitudes {
            acc += a.norm_sqr();
            cdf.push(acc);
        }
        let total = acc;
        (0..shots)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * total;
                cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
            })
            .collect()
    }

    /// Measures every qubit `shots` times.
    pub fn sample_shots<R: Rng + ?Sized>(&self, shots: usize, rng: &mut R) -> Result<ShotResult> {
        if shots == 0 {
            return Err(Error::Argument("shot count must be at least 1".into()));
        }
        let outcomes = self.sample_outcomes(shots, rng);
        Ok(ShotResult::from_outcomes(self.num_qubits, &outcomes))
    }
}

/// Calls `f` on every amplitude pair differing only in the bit of `stride`.
#[inline]
fn for_each_pair<F: FnMut(&mut Complex64, &mut Complex64)>(amps: &mut [Complex64], stride: usize, mut f: F) {
    for block in amps.chunks_exact_mut(stride << 1) {
        let (lo, hi) = block.split_at_mut(stride);
        for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
            f(a, b);
        }
    }
}

/// Outcome of a shot-sampled measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotResult {
    pub shots: usize,
    /// Per-qubit empirical mean of the ±1 eigenvalue.
    pub means: Vec<f64>,
    /// Raw counts keyed by basis index.
    pub counts: BTreeMap<usize, usize>,
}

impl ShotResult {
    pub fn from_outcomes(num_qubits: usize, outcomes: &[usize]) -> Self {
        let mut counts = BTreeMap::new();
        for &o in outcomes {
            *counts.entry(o).or_insert(0) += 1;
        }
        let shots = outcomes.len();
        let mut means = vec![0.0; num_qubits];
        for (&b, &c) in &counts {
            for (u, m) in means.iter_mut().enumerate() {
                let sign = if b >> u & 1 == 0 { 1.0 } else { -1.0 };
                *m += sign * c as f64;
            }
        }
        for m in &mut means {
            *m /= shots as f64;
        }
        Self { shots, means, counts }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use std::f64::consts::PI;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn init_zero_examples() {
        let s = StateVector::zero(1).unwrap();
        assert_eq!(s.amplitudes(), &[ONE, ZERO]);
        let s = StateVector::zero(3).unwrap();
        assert_eq!(s.amplitudes().len(), 8);
        assert_eq!(s.amplitudes()[0], ONE);
        assert!(s.amplitudes()[1..].iter().all(|a| *a == ZERO));
        let err = StateVector::zero(25).unwrap_err();
        assert!(err.to_string().contains("24"), "{err}");
        assert!(StateVector::zero(0).is_err());
    }

    #[test]
    fn ry_pi_flips_and_half_pi_balances() {
        let mut s = StateVector::zero(1).unwrap();
        s.apply_gate(&Gate::Ry(0, PI)).unwrap();
        assert!(close(s.expectation_z_all()[0], -1.0, 1e-12));
        assert!(close(s.amplitudes()[1].norm_sqr(), 1.0, 1e-12));

        let mut s = StateVector::zero(1).unwrap();
        s.apply_gate(&Gate::Ry(0, PI / 2.0)).unwrap();
        assert!(close(s.expectation_z_all()[0], 0.0, 1e-12));
        assert!(close(s.amplitudes()[0].re, 1.0 / 2f64.sqrt(), 1e-12));
        assert!(close(s.amplitudes()[1].re, 1.0 / 2f64.sqrt(), 1e-12));
    }

    #[test]
    fn cnot_truth_table() {
        // |10⟩ means qubit 1 set: basis index 0b10.
        let mut s = StateVector::basis(2, 0b10).unwrap();
        s.apply_gate(&Gate::Cnot { control: 1, target: 0 }).unwrap();
        assert!(close(s.amplitudes()[0b11].norm_sqr(), 1.0, 1e-15));
        for (c_in, expect) in [(0b00, 0b00), (0b01, 0b01), (0b11, 0b10)] {
            let mut s = StateVector::basis(2, c_in).unwrap();
            s.apply_gate(&Gate::Cnot { control: 1, target: 0 }).unwrap();
            assert!(close(s.amplitudes()[expect].norm_sqr(), 1.0, 1e-15));
        }
    }

    #[test]
    fn invalid_indices_rejected() {
        let mut s = StateVector::zero(2).unwrap();
        assert!(matches!(s.apply_gate(&Gate::Rx(2, 0.1)), Err(Error::QubitIndex { index: 2, .. })));
        assert!(s.apply_gate(&Gate::Cnot { control: 1, target: 1 }).is_err());
        let err = s.apply_circuit(&[Gate::Px(0), Gate::Py(5)]).unwrap_err();
        assert!(matches!(err, Error::GateAt { position: 1, .. }));
    }

    #[test]
    fn gate_matrices_are_unitary() {
        for g in [
            Gate::Rx(0, 0.37),
            Gate::Ry(0, -1.3),
            Gate::Rz(0, 2.9),
            Gate::Px(0),
            Gate::Py(0),
            Gate::Pz(0),
        ] {
            let m = g.matrix().unwrap();
            for r in 0..2 {
                for c in 0..2 {
                    let v = m[0][r].conj() * m[0][c] + m[1][r].conj() * m[1][c];
                    let expect = if r == c { 1.0 } else { 0.0 };
                    assert!((v - Complex64::new(expect, 0.0)).norm() <= 1e-12, "{g:?}");
                }
            }
        }
    }

    #[test]
    fn expectation_index_convention() {
        // |1⟩ ⊗ |0⟩ read as qubit 0 = 1, qubit 1 = 0.
        let s = StateVector::basis(2, 0b01).unwrap();
        assert_eq!(s.expectation_z_all(), vec![-1.0, 1.0]);
        assert_eq!(StateVector::zero(4).unwrap().expectation_z_all(), vec![1.0; 4]);
    }

    #[test]
    fn empty_circuit_and_inverse_pair() {
        let mut rng = stream(3, &[]);
        let mut s = StateVector::zero(3).unwrap();
        for q in 0..3 {
            s.apply_gate(&Gate::Rx(q, rng.random::<f64>() * 3.0)).unwrap();
        }
        let before = s.clone();
        s.apply_circuit(&[]).unwrap();
        assert_eq!(s, before);
        s.apply_circuit(&[Gate::Ry(1, 0.7), Gate::Ry(1, -0.7)]).unwrap();
        for (a, b) in s.amplitudes().iter().zip(before.amplitudes()) {
            assert!((a - b).norm() <= 1e-12);
        }
    }

    #[test]
    fn fused_and_unfused_application_agree() {
        let mut rng = stream(11, &[]);
        let gates: Vec<Gate> = (0..200)
            .map(|_| {
                let q = rng.random_range(0..4);
                let t = rng.random::<f64>() * 6.0;
                match rng.random_range(0..5) {
                    0 => Gate::Rx(q, t),
                    1 => Gate::Ry(q, t),
                    2 => Gate::Rz(q, t),
                    3 => Gate::Py(q),
                    _ => Gate::Cnot { control: q, target: (q + 1) % 4 },
                }
            })
            .collect();
        let mut fused = StateVector::zero(4).unwrap();
        fused.apply_circuit(&gates).unwrap();
        let mut step = StateVector::zero(4).unwrap();
        for g in &gates {
            step.apply_gate(g).unwrap();
        }
        for (a, b) in fused.amplitudes().iter().zip(step.amplitudes()) {
            assert!((a - b).norm() <= 1e-12);
        }
    }

    #[test]
    fn thousand_random_rotations_preserve_norm() {
        let mut rng = stream(5, &[]);
        let mut s = StateVector::zero(10).unwrap();
        for k in 0..1000 {
            let q = rng.random_range(0..10);
            let t = rng.random::<f64>() * 2.0 * PI;
            let g = match k % 4 {
                0 => Gate::Rx(q, t),
                1 => Gate::Ry(q, t),
                2 => Gate::Rz(q, t),
                _ => Gate::Cnot { control: q, target: (q + 3) % 10 },
            };
            s.apply_gate(&g).unwrap();
            if k % 100 == 99 {
                assert!((s.norm_sqr() - 1.0).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn cosine_law_for_ry() {
        let mut rng = stream(9, &[]);
        for _ in 0..100 {
            let t = (rng.random::<f64>() - 0.5) * 8.0 * PI;
            let mut s = StateVector::zero(1).unwrap();
            s.apply_gate(&Gate::Ry(0, t)).unwrap();
            assert!(close(s.expectation_z_all()[0], t.cos(), 1e-12));
        }
    }

    #[test]
    fn shots_on_basis_state_are_exact() {
        let s = StateVector::basis(3, 0b101).unwrap();
        let r = s.sample_shots(100, &mut stream(1, &[])).unwrap();
        assert_eq!(r.means, vec![-1.0, 1.0, -1.0]);
        assert_eq!(r.counts.get(&0b101), Some(&100));
        assert!(s.sample_shots(0, &mut stream(1, &[])).is_err());
    }

    #[test]
    fn shots_on_superposition_within_three_sigma() {
        let mut s = StateVector::zero(1).unwrap();
        s.apply_gate(&Gate::Ry(0, PI / 2.0)).unwrap();
        let r = s.sample_shots(10_000, &mut stream(2, &[])).unwrap();
        assert!(r.means[0].abs() <= 0.03, "{}", r.means[0]);
    }
}
