//! NISQ noise emulation by stochastic Pauli trajectories.
//!
//! Gate noise is unravelled into random Pauli insertions and averaged over
//! `n_trajectories` pure-state runs, which keeps memory at `O(2^U)`.
//! Readout error is applied analytically to expectations and by sampled bit
//! flips to shots. The additive measurement perturbation `ξ` is isotropic
//! Gaussian with `E‖ξ‖² = τ²`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, TaskRng};
use crate::sim::{Gate, ShotResult, StateVector};

pub const DEFAULT_TRAJECTORIES: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// Probability that a single-qubit gate is followed by a fully depolarizing
    /// event (a uniformly drawn Pauli from {I, X, Y, Z}).
    pub p_depol_1q: f64,
    /// Probability of an additional Z after a single-qubit gate.
    pub p_dephase_1q: f64,
    /// Probability of a uniformly drawn non-identity two-qubit Pauli after a CNOT.
    pub p_pauli_2q: f64,
    /// Symmetric readout bit-flip probability.
    pub p_readout_flip: f64,
    /// Additive measurement-noise scale τ.
    pub tau_meas: f64,
    pub n_trajectories: usize,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            p_depol_1q: 0.0,
            p_dephase_1q: 0.0,
            p_pauli_2q: 0.0,
            p_readout_flip: 0.0,
            tau_meas: 0.0,
            n_trajectories: DEFAULT_TRAJECTORIES,
        }
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_depol_1q", self.p_depol_1q),
            ("p_dephase_1q", self.p_dephase_1q),
            ("p_pauli_2q", self.p_pauli_2q),
            ("p_readout_flip", self.p_readout_flip),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("noise.{name} = {p} must lie in [0, 1)")));
            }
        }
        if self.p_readout_flip > 0.5 {
            return Err(Error::Config(format!(
                "noise.p_readout_flip = {} must not exceed 0.5",
                self.p_readout_flip
            )));
        }
        if self.tau_meas < 0.0 || !self.tau_meas.is_finite() {
            return Err(Error::Config(format!("noise.tau_meas = {} must be finite and >= 0", self.tau_meas)));
        }
        if self.n_trajectories == 0 {
            return Err(Error::Config("noise.n_trajectories must be at least 1".into()));
        }
        Ok(())
    }

    /// True when gates are never perturbed.
    pub fn gate_noise_free(&self) -> bool {
        self.p_depol_1q == 0.0 && self.p_dephase_1q == 0.0 && self.p_pauli_2q == 0.0
    }

    /// True when the model reduces exactly to the noiseless simulator.
    pub fn is_noiseless(&self) -> bool {
        self.gate_noise_free() && self.p_readout_flip == 0.0 && self.tau_meas == 0.0
    }
}

fn pauli(kind: u8, qubit: usize) -> Gate {
    match kind {
        0 => Gate::Id(qubit),
        1 => Gate::Px(qubit),
        2 => Gate::Py(qubit),
        _ => Gate::Pz(qubit),
    }
}

/// Pauli insertions that follow `gate` in one trajectory.
pub fn sample_gate_noise<R: Rng + ?Sized>(model: &NoiseModel, gate: &Gate, rng: &mut R) -> Vec<Gate> {
    let mut out = Vec::new();
    match *gate {
        Gate::Cnot { control, target } => {
            if model.p_pauli_2q > 0.0 && rng.random::<f64>() < model.p_pauli_2q {
                // 1..=15 indexes the non-identity pairs (control, target).
                let k: u8 = rng.random_range(1..16);
                let (pc, pt) = (k / 4, k % 4);
                if pc != 0 {
                    out.push(pauli(pc, control));
                }
                if pt != 0 {
                    out.push(pauli(pt, target));
                }
            }
        }
        g => {
            let q = g.single_qubit().expect("single-qubit gate");
            if model.p_depol_1q > 0.0 && rng.random::<f64>() < model.p_depol_1q {
                out.push(pauli(rng.random_range(0..4), q));
            }
            if model.p_dephase_1q > 0.0 && rng.random::<f64>() < model.p_dephase_1q {
                out.push(Gate::Pz(q));
            }
        }
    }
    out
}

/// One noisy realisation of `circuit` applied to `init`.
pub fn run_trajectory<R: Rng + ?Sized>(
    circuit: &[Gate],
    init: &StateVector,
    model: &NoiseModel,
    rng: &mut R,
) -> Result<StateVector> {
    let mut state = init.clone();
    let n = state.num_qubits();
    for (position, g) in circuit.iter().enumerate() {
        state
            .apply_gate(g)
            .map_err(|e| Error::GateAt { position, source: Box::new(e) })?;
        for p in sample_gate_noise(model, g, rng) {
            debug_assert!(p.single_qubit().is_some_and(|q| q < n));
            state.apply_unchecked(&p);
        }
    }
    Ok(state)
}

fn trajectory_rng(seed: u64, t: usize) -> TaskRng {
    stream(seed, &[t as u64])
}

/// Trajectory-averaged `⟨σ_z⟩` with readout scaling applied.
///
/// A model without gate noise runs the circuit once, so the result is
/// bit-identical to the noiseless simulator when readout error is also zero.
pub fn noisy_expectation(circuit: &[Gate], init: &StateVector, model: &NoiseModel, seed: u64) -> Result<Vec<f64>> {
    model.validate()?;
    let z = if model.gate_noise_free() {
        let mut s = init.clone();
        s.apply_circuit(circuit)?;
        s.expectation_z_all()
    } else {
        let mut acc = vec![0.0; init.num_qubits()];
        for t in 0..model.n_trajectories {
            let s = run_trajectory(circuit, init, model, &mut trajectory_rng(seed, t))?;
            for (a, v) in acc.iter_mut().zip(s.expectation_z_all()) {
                *a += v;
            }
        }
        let n = model.n_trajectories as f64;
        acc.into_iter().map(|a| a / n).collect()
    };
    if model.p_readout_flip == 0.0 {
        return Ok(z);
    }
    apply_readout_expectation(&z, model.p_readout_flip)
}

/// Per-trajectory expectations (no readout scaling); used for standard errors.
pub fn trajectory_expectations(
    circuit: &[Gate],
    init: &StateVector,
    model: &NoiseModel,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    model.validate()?;
    (0..model.n_trajectories)
        .map(|t| Ok(run_trajectory(circuit, init, model, &mut trajectory_rng(seed, t))?.expectation_z_all()))
        .collect()
}

/// Shot sampling under the noise model: shots are spread round-robin over
/// trajectories and each measured bit is flipped with the readout probability.
pub fn noisy_shots(
    circuit: &[Gate],
    init: &StateVector,
    model: &NoiseModel,
    shots: usize,
    seed: u64,
) -> Result<ShotResult> {
    model.validate()?;
    if shots == 0 {
        return Err(Error::Argument("shot count must be at least 1".into()));
    }
    let n = init.num_qubits();
    let mut outcomes = Vec::with_capacity(shots);
    if model.gate_noise_free() {
        let mut s = init.clone();
        s.apply_circuit(circuit)?;
        outcomes = s.sample_outcomes(shots, &mut stream(seed, &[u64::MAX]));
    } else {
        let trajectories = model.n_trajectories.min(shots);
        for t in 0..trajectories {
            let mut rng = trajectory_rng(seed, t);
            let s = run_trajectory(circuit, init, model, &mut rng)?;
            let share = shots / trajectories + usize::from(t < shots % trajectories);
            outcomes.extend(s.sample_outcomes(share, &mut rng));
        }
    }
    if model.p_readout_flip > 0.0 {
        let mut rng = stream(seed, &[u64::MAX - 1]);
        for o in &mut outcomes {
            for u in 0..n {
                if rng.random::<f64>() < model.p_readout_flip {
                    *o ^= 1 << u;
                }
            }
        }
    }
    Ok(ShotResult::from_outcomes(n, &outcomes))
}

/// Expectation of a ±1 observable after symmetric bit flips with probability `q`.
pub fn apply_readout_expectation(z: &[f64], q: f64) -> Result<Vec<f64>> {
    if !(0.0..=0.5).contains(&q) {
        return Err(Error::Argument(format!("readout flip probability {q} outside [0, 0.5]")));
    }
    let scale = 1.0 - 2.0 * q;
    Ok(z.iter().map(|v| v * scale).collect())
}

/// Adds `ξ` with i.i.d. `N(0, τ²/U)` components, so `E‖ξ‖² = τ²`.
/// Output is deliberately left unclamped.
pub fn inject_measurement_noise<R: Rng + ?Sized>(z: &[f64], tau: f64, rng: &mut R) -> Result<Vec<f64>> {
    if tau < 0.0 || !tau.is_finite() {
        return Err(Error::Argument(format!("measurement noise scale {tau} must be finite and >= 0")));
    }
    if tau == 0.0 || z.is_empty() {
        return Ok(z.to_vec());
    }
    let sd = tau / (z.len() as f64).sqrt();
    Ok(z.iter()
        .map(|v| {
            let e: f64 = rng.sample(StandardNormal);
            v + sd * e
        })
        .collect())
}
