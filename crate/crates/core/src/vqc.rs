//! Layered variational circuit head: ansatz construction, forward evaluation
//! and parameter-shift gradients.

use std::f64::consts::FRAC_PI_2;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{inject_measurement_noise, noisy_expectation, noisy_shots, NoiseModel};
use crate::rng::{derive_seed, stream};
use crate::sim::{Gate, StateVector, MAX_QUBITS};

/// Stream tag for the additive measurement perturbation.
const TAU_TAG: u64 = 0x7a75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Entangler {
    #[default]
    LinearChain,
    Ring,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnsatzSpec {
    pub num_qubits: usize,
    pub depth: usize,
    #[serde(default)]
    pub entangler: Entangler,
    /// Number of leading qubits read out for classification.
    pub measure_qubits: usize,
}

impl AnsatzSpec {
    pub fn new(num_qubits: usize, depth: usize, entangler: Entangler, measure_qubits: usize) -> Result<Self> {
        let spec = Self { num_qubits, depth, entangler, measure_qubits };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_qubits == 0 || self.num_qubits > MAX_QUBITS {
            return Err(Error::Config(format!("num_qubits {} outside 1..={MAX_QUBITS}", self.num_qubits)));
        }
        if self.depth == 0 {
            return Err(Error::Config("depth must be at least 1".into()));
        }
        if self.measure_qubits == 0 || self.measure_qubits > self.num_qubits {
            return Err(Error::Config(format!(
                "measure_qubits {} must lie in 1..={}",
                self.measure_qubits, self.num_qubits
            )));
        }
        Ok(())
    }

    /// `3·U·D`.
    pub fn num_params(&self) -> usize {
        3 * self.num_qubits * self.depth
    }

    pub fn entangler_pairs(&self) -> Vec<(usize, usize)> {
        let u = self.num_qubits;
        let mut pairs: Vec<(usize, usize)> = (0..u.saturating_sub(1)).map(|q| (q, q + 1)).collect();
        if self.entangler == Entangler::Ring && u >= 2 {
            pairs.push((u - 1, 0));
        }
        pairs
    }

    /// Position in the gate list of the rotation driven by parameter `p`.
    pub fn gate_index(&self, p: usize) -> usize {
        let per_layer = 3 * self.num_qubits;
        let (layer, within) = (p / per_layer, p % per_layer);
        layer * (per_layer + self.entangler_pairs().len()) + within
    }
}

/// Angles laid out layer-major, then qubit-major, then (α, β, γ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector {
    pub theta: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(spec: &AnsatzSpec) -> Self {
        Self { theta: vec![0.0; spec.num_params()] }
    }

    /// Uniform angles in `[-π, π)`.
    pub fn random(spec: &AnsatzSpec, seed: u64) -> Self {
        let mut rng = stream(seed, &[]);
        let dist = Uniform::new(-std::f64::consts::PI, std::f64::consts::PI).expect("valid range");
        Self { theta: (0..spec.num_params()).map(|_| dist.sample(&mut rng)).collect() }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn check(&self, spec: &AnsatzSpec) -> Result<()> {
        if self.theta.len() != spec.num_params() {
            return Err(Error::Shape(format!(
                "parameter vector has length {}, ansatz needs 3·{}·{} = {}",
                self.theta.len(),
                spec.num_qubits,
                spec.depth,
                spec.num_params()
            )));
        }
        if let Some(i) = self.theta.iter().position(|v| !v.is_finite()) {
            return Err(Error::Range(format!("theta[{i}] is not finite")));
        }
        Ok(())
    }
}

pub fn build_circuit(spec: &AnsatzSpec, theta: &ParamVector) -> Result<Vec<Gate>> {
    spec.validate()?;
    theta.check(spec)?;
    let pairs = spec.entangler_pairs();
    let mut gates = Vec::with_capacity(spec.depth * (3 * spec.num_qubits + pairs.len()));
    for layer in theta.theta.chunks(3 * spec.num_qubits) {
        for (u, a) in layer.chunks(3).enumerate() {
            gates.extend([Gate::Rx(u, a[0]), Gate::Ry(u, a[1]), Gate::Rz(u, a[2])]);
        }
        gates.extend(pairs.iter().map(|&(control, target)| Gate::Cnot { control, target }));
    }
    Ok(gates)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Measurement {
    #[default]
    Analytic,
    Shots { shots: usize },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalMode {
    #[serde(default)]
    pub measurement: Measurement,
    #[serde(default)]
    pub noise: Option<NoiseModel>,
}

impl EvalMode {
    pub fn analytic() -> Self {
        Self::default()
    }

    pub fn shots(shots: usize) -> Self {
        Self { measurement: Measurement::Shots { shots }, noise: None }
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Self {
        self.noise = Some(noise);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Measurement::Shots { shots: 0 } = self.measurement {
            return Err(Error::Config("shots mode needs at least 1 shot".into()));
        }
        if let Some(n) = &self.noise {
            n.validate()?;
        }
        Ok(())
    }

    /// Analytic expectations with no noise of any kind.
    pub fn is_exact(&self) -> bool {
        self.measurement == Measurement::Analytic && self.noise.as_ref().is_none_or(NoiseModel::is_noiseless)
    }

    fn gate_noise_free(&self) -> bool {
        self.noise.as_ref().is_none_or(NoiseModel::gate_noise_free)
    }

    fn tau(&self) -> f64 {
        self.noise.as_ref().map_or(0.0, |n| n.tau_meas)
    }
}

/// Shift and coefficient of the two-term parameter-shift rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftRule {
    pub shift: f64,
    pub coefficient: f64,
}

impl Default for ShiftRule {
    fn default() -> Self {
        Self { shift: FRAC_PI_2, coefficient: 0.5 }
    }
}

/// `U × P` matrix: row `u` holds `∂⟨σ_z^(u)⟩/∂θ_p`.
pub type Jacobian = Vec<Vec<f64>>;

/// Circuit executor with an execution counter. Each completed circuit run
/// (one forward pass, or one shifted pass of a gradient) counts once.
#[derive(Debug, Default)]
pub struct Evaluator {
    pub mode: EvalMode,
    pub shift_rule: ShiftRule,
    executions: AtomicU64,
}

impl Clone for Evaluator {
    fn clone(&self) -> Self {
        Self { mode: self.mode.clone(), shift_rule: self.shift_rule, executions: AtomicU64::new(0) }
    }
}

impl Evaluator {
    pub fn new(mode: EvalMode) -> Self {
        Self { mode, shift_rule: ShiftRule::default(), executions: AtomicU64::new(0) }
    }

    pub fn executions(&self) -> u64 {
        self.executions.load(Ordering::Relaxed)
    }

    pub fn reset_executions(&self) {
        self.executions.store(0, Ordering::Relaxed);
    }

    fn count(&self, n: u64) {
        self.executions.fetch_add(n, Ordering::Relaxed);
    }

    fn check_input(spec: &AnsatzSpec, input: &StateVector) -> Result<()> {
        if input.num_qubits() != spec.num_qubits {
            return Err(Error::Shape(format!(
                "input state has {} qubits, ansatz has {}",
                input.num_qubits(),
                spec.num_qubits
            )));
        }
        Ok(())
    }

    /// Readout of an already evolved pure state (gate-noise-free modes only).
    fn measure_state(&self, state: &StateVector, seed: u64) -> Result<Vec<f64>> {
        let readout = self.mode.noise.as_ref().map_or(0.0, |n| n.p_readout_flip);
        let z = match self.mode.measurement {
            Measurement::Analytic => {
                let z = state.expectation_z_all();
                if readout == 0.0 {
                    z
                } else {
                    crate::noise::apply_readout_expectation(&z, readout)?
                }
            }
            Measurement::Shots { shots } => {
                let model = self.mode.noise.clone().unwrap_or_default();
                noisy_shots(&[], state, &model, shots, seed)?.means
            }
        };
        self.perturb(z, seed)
    }

    fn perturb(&self, z: Vec<f64>, seed: u64) -> Result<Vec<f64>> {
        let tau = self.mode.tau();
        if tau == 0.0 {
            return Ok(z);
        }
        inject_measurement_noise(&z, tau, &mut stream(seed, &[TAU_TAG]))
    }

    /// Runs one circuit on `input` in the evaluator's mode.
    pub fn run_circuit(&self, circuit: &[Gate], input: &StateVector, seed: u64) -> Result<Vec<f64>> {
        self.mode.validate()?;
        self.count(1);
        if self.mode.gate_noise_free() {
            let mut s = input.clone();
            s.apply_circuit(circuit)?;
            return self.measure_state(&s, seed);
        }
        let model = self.mode.noise.as_ref().expect("gate noise implies a model");
        let z = match self.mode.measurement {
            Measurement::Analytic => noisy_expectation(circuit, input, model, seed)?,
            Measurement::Shots { shots } => noisy_shots(circuit, input, model, shots, seed)?.means,
        };
        self.perturb(z, seed)
    }

    /// `⟨σ_z^(u)⟩` for every qubit after the ansatz acts on `input`.
    pub fn forward(&self, spec: &AnsatzSpec, theta: &ParamVector, input: &StateVector, seed: u64) -> Result<Vec<f64>> {
        Self::check_input(spec, input)?;
        let circuit = build_circuit(spec, theta)?;
        self.run_circuit(&circuit, input, seed)
    }

    /// Parameter-shift Jacobian using exactly `2P` circuit executions.
    ///
    /// The shifted run for `(p, sign)` uses the stream `derive_seed(seed, [p, sign])`.
    pub fn jacobian(&self, spec: &AnsatzSpec, theta: &ParamVector, input: &StateVector, seed: u64) -> Result<Jacobian> {
        Self::check_input(spec, input)?;
        self.mode.validate()?;
        let circuit = build_circuit(spec, theta)?;
        let p_count = spec.num_params();
        let mut jac = vec![vec![0.0; p_count]; spec.num_qubits];
        let ShiftRule { shift, coefficient } = self.shift_rule;
        let mut record = |p: usize, plus: &[f64], minus: &[f64]| {
            for (row, (a, b)) in jac.iter_mut().zip(plus.iter().zip(minus)) {
                row[p] = coefficient * (a - b);
            }
        };

        if self.mode.gate_noise_free() {
            // Shared prefix: the state before gate g is advanced once, and each
            // shifted run only replays the suffix.
            let gate_of: Vec<usize> = (0..p_count).map(|p| spec.gate_index(p)).collect();
            let mut prefix = input.clone();
            let mut applied = 0;
            let mut scratch = circuit.clone();
            for (p, &g) in gate_of.iter().enumerate() {
                prefix.apply_circuit_unchecked(&circuit[applied..g]);
                applied = g;
                let base = circuit[g].angle().expect("parameterised rotation");
                let mut vals: [Vec<f64>; 2] = Default::default();
                for (k, sign) in [(0usize, 1.0), (1, -1.0)] {
                    scratch[g] = circuit[g].with_angle(base + sign * shift);
                    let mut s = prefix.clone();
                    s.apply_circuit_unchecked(&scratch[g..]);
                    self.count(1);
                    vals[k] = self.measure_state(&s, derive_seed(seed, &[p as u64, k as u64]))?;
                }
                scratch[g] = circuit[g];
                record(p, &vals[0], &vals[1]);
            }
        } else {
            let mut scratch = circuit.clone();
            for p in 0..p_count {
                let g = spec.gate_index(p);
                let base = circuit[g].angle().expect("parameterised rotation");
                scratch[g] = circuit[g].with_angle(base + shift);
                let plus = self.run_circuit(&scratch, input, derive_seed(seed, &[p as u64, 0]))?;
                scratch[g] = circuit[g].with_angle(base - shift);
                let minus = self.run_circuit(&scratch, input, derive_seed(seed, &[p as u64, 1]))?;
                scratch[g] = circuit[g];
                record(p, &plus, &minus);
            }
        }
        Ok(jac)
    }

    /// Central-difference Jacobian; exact analytic mode only.
    pub fn jacobian_finite_difference(
        &self,
        spec: &AnsatzSpec,
        theta: &ParamVector,
        input: &StateVector,
        step: f64,
    ) -> Result<Jacobian> {
        if !self.mode.is_exact() {
            return Err(Error::UnsupportedMode(
                "finite differences need noiseless analytic expectations".into(),
            ));
        }
        if !(1e-6..=1e-3).contains(&step) {
            return Err(Error::Argument(format!("finite-difference step {step} outside [1e-6, 1e-3]")));
        }
        Self::check_input(spec, input)?;
        let mut jac = vec![vec![0.0; spec.num_params()]; spec.num_qubits];
        let mut shifted = theta.clone();
        for p in 0..spec.num_params() {
            shifted.theta[p] = theta.theta[p] + step;
            let plus = self.forward(spec, &shifted, input, 0)?;
            shifted.theta[p] = theta.theta[p] - step;
            let minus = self.forward(spec, &shifted, input, 0)?;
            shifted.theta[p] = theta.theta[p];
            for (row, (a, b)) in jac.iter_mut().zip(plus.iter().zip(&minus)) {
                row[p] = (a - b) / (2.0 * step);
            }
        }
        Ok(jac)
    }
}

pub fn forward(spec: &AnsatzSpec, theta: &ParamVector, input: &StateVector, mode: &EvalMode, seed: u64) -> Result<Vec<f64>> {
    Evaluator::new(mode.clone()).forward(spec, theta, input, seed)
}

pub fn grad_parameter_shift(
    spec: &AnsatzSpec,
    theta: &ParamVector,
    input: &StateVector,
    mode: &EvalMode,
    seed: u64,
) -> Result<Jacobian> {
    Evaluator::new(mode.clone()).jacobian(spec, theta, input, seed)
}

pub fn grad_finite_difference(
    spec: &AnsatzSpec,
    theta: &ParamVector,
    input: &StateVector,
    mode: &EvalMode,
    step: f64,
) -> Result<Jacobian> {
    Evaluator::new(mode.clone()).jacobian_finite_difference(spec, theta, input, step)
}

/// A random product input state, handy for gradient checks.
pub fn random_product_state<R: Rng + ?Sized>(num_qubits: usize, rng: &mut R) -> Result<StateVector> {
    let phi: Vec<f64> = (0..num_qubits).map(|_| rng.random_range(-1.0..=1.0)).collect();
    crate::encoding::encode_tpe(&phi)
}
