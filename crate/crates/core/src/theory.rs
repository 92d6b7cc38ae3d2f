//! Empirical estimates of the optimization-bound constants and the scaling
//! experiments behind them.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_6};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::encode_tpe;
use crate::error::{Error, Result};
use crate::noise::inject_measurement_noise;
use crate::rng::{derive_seed, stream};
use crate::sim::StateVector;
use crate::training::{sample_loss_grad, theorem3_lr, Adam, Head, MetricsRow};
use crate::vqc::{AnsatzSpec, Entangler, EvalMode, Evaluator, ParamVector};

pub const HVP_STEP: f64 = 1e-3;
pub const POWER_ITERATIONS: usize = 20;
pub const POWER_ITERATIONS_MAX: usize = 50;
pub const POWER_TOLERANCE: f64 = 1e-2;

/// Scalar function of the head parameters, per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Objective {
    /// Softmax cross-entropy over the first `classes` outputs.
    Loss { classes: usize },
    /// The raw head output at `index` (an expectation for a VQC head).
    Output { index: usize },
}

/// Value and parameter gradient of `objective` on one sample.
pub fn objective_grad(
    head: &Head,
    evaluator: &Evaluator,
    phi: &[f64],
    label: usize,
    objective: Objective,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    match objective {
        Objective::Loss { classes } => sample_loss_grad(head, evaluator, phi, label, classes, seed),
        Objective::Output { index } => match head {
            Head::Vqc { ansatz, theta } => {
                if index >= ansatz.num_qubits {
                    return Err(Error::Argument(format!("output index {index} beyond {} qubits", ansatz.num_qubits)));
                }
                let input = encode_tpe(phi)?;
                let z = evaluator.forward(ansatz, theta, &input, derive_seed(seed, &[0]))?;
                let jac = evaluator.jacobian(ansatz, theta, &input, derive_seed(seed, &[1]))?;
                Ok((z[index], jac[index].clone()))
            }
            Head::Fc { fc } => {
                if index >= fc.num_classes() {
                    return Err(Error::Argument(format!("output index {index} beyond {} logits", fc.num_classes())));
                }
                let logits = fc.forward(phi)?;
                let (c, u) = (fc.num_classes(), fc.input_dim());
                let mut g = vec![0.0; c * (u + 1)];
                g[index * u..(index + 1) * u].copy_from_slice(phi);
                g[c * u + index] = 1.0;
                Ok((logits[index], g))
            }
        },
    }
}

fn require_exact(evaluator: &Evaluator) -> Result<()> {
    if evaluator.mode.is_exact() {
        Ok(())
    } else {
        Err(Error::UnsupportedMode("constant estimation needs noiseless analytic mode".into()))
    }
}

fn check_samples(phi: &[Vec<f64>], labels: &[usize], n: usize) -> Result<usize> {
    let n = n.min(phi.len());
    if n == 0 || phi.len() != labels.len() {
        return Err(Error::Data("need at least one labelled sample".into()));
    }
    Ok(n)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `√(mean_i ‖∇_θ ℓ_i‖²)` over the first `n_samples` samples.
pub fn estimate_l(
    head: &Head,
    evaluator: &Evaluator,
    phi: &[Vec<f64>],
    labels: &[usize],
    objective: Objective,
    n_samples: usize,
) -> Result<f64> {
    require_exact(evaluator)?;
    let n = check_samples(phi, labels, n_samples)?;
    let sq: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| Ok(norm(&objective_grad(head, evaluator, &phi[i], labels[i], objective, 0)?.1).powi(2)))
        .collect::<Result<_>>()?;
    Ok((sq.iter().sum::<f64>() / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaEstimate {
    pub beta: f64,
    /// False when some sample's power iteration had not settled after the
    /// extended iteration budget.
    pub converged: bool,
    pub max_iterations: usize,
}

/// Hessian-vector product by central differences of shift-rule gradients.
fn hvp(head: &Head, evaluator: &Evaluator, phi: &[f64], label: usize, objective: Objective, v: &[f64]) -> Result<Vec<f64>> {
    let base = head.params();
    let grad_at = |sign: f64| -> Result<Vec<f64>> {
        let mut h = head.clone();
        let p: Vec<f64> = base.iter().zip(v).map(|(b, d)| b + sign * HVP_STEP * d).collect();
        h.set_params(&p)?;
        Ok(objective_grad(&h, evaluator, phi, label, objective, 0)?.1)
    };
    let plus = grad_at(1.0)?;
    let minus = grad_at(-1.0)?;
    Ok(plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * HVP_STEP)).collect())
}

/// Largest Hessian singular value by power iteration, per sample, combined
/// as `√(mean λ²)`. Every sample starts from the same unit vector.
pub fn estimate_beta(
    head: &Head,
    evaluator: &Evaluator,
    phi: &[Vec<f64>],
    labels: &[usize],
    objective: Objective,
    n_probes: usize,
) -> Result<BetaEstimate> {
    require_exact(evaluator)?;
    let n = check_samples(phi, labels, n_probes)?;
    let p = head.num_params();
    let start = vec![1.0 / (p as f64).sqrt(); p];
    let per: Vec<(f64, bool, usize)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut v = start.clone();
            let mut lambda = 0.0;
            for it in 1..=POWER_ITERATIONS_MAX {
                let hv = hvp(head, evaluator, &phi[i], labels[i], objective, &v)?;
                let next = norm(&hv);
                if next == 0.0 {
                    return Ok((0.0, true, it));
                }
                let change = (next - lambda).abs() / next;
                lambda = next;
                v = hv.into_iter().map(|x| x / next).collect();
                if it >= POWER_ITERATIONS && change <= POWER_TOLERANCE {
                    return Ok((lambda, true, it));
                }
            }
            Ok((lambda, false, POWER_ITERATIONS_MAX))
        })
        .collect::<Result<_>>()?;
    let beta = (per.iter().map(|r| r.0 * r.0).sum::<f64>() / n as f64).sqrt();
    Ok(BetaEstimate {
        beta,
        converged: per.iter().all(|r| r.1),
        max_iterations: per.iter().map(|r| r.2).max().unwrap_or(0),
    })
}

/// Largest squared mean gradient norm seen over the run.
pub fn track_r(history: &[MetricsRow]) -> f64 {
    history.iter().map(|r| r.grad_norm * r.grad_norm).fold(0.0, f64::max)
}

/// `(βR² + R√(L² + β²R²)/T, same + ηRτ√T)`.
pub fn opt_bounds(l: f64, beta: f64, r: f64, t: usize, eta: f64, tau: f64) -> Result<(f64, f64)> {
    for (name, v) in [("L", l), ("beta", beta), ("R", r), ("eta", eta), ("tau", tau)] {
        if v < 0.0 || !v.is_finite() {
            return Err(Error::Argument(format!("{name} must be finite and nonnegative, got {v}")));
        }
    }
    if t == 0 {
        return Err(Error::Argument("T must be positive".into()));
    }
    let t = t as f64;
    let base = beta * r * r + r * (l * l + beta * beta * r * r).sqrt() / t;
    Ok((base, base + eta * r * tau * t.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub l_hat: f64,
    pub beta_hat: f64,
    pub beta_converged: bool,
    pub r_hat: f64,
    pub tau: f64,
    pub t: usize,
    pub eta: f64,
    pub eps_opt_bound: f64,
    pub eps_opt_noise_bound: f64,
    pub observed_gap: f64,
    pub rademacher_hat: Option<f64>,
    pub rademacher_std_error: Option<f64>,
    pub shot_scaling_exponent: Option<f64>,
    /// Train accuracy minus test accuracy; a proxy for the estimation error.
    pub generalization_gap_proxy: Option<f64>,
    /// Probe accuracy of the pretrained block; a proxy for the approximation error.
    pub source_probe_accuracy_proxy: Option<f64>,
}

impl BoundReport {
    /// Fills the bound columns from the measured constants.
    pub fn from_constants(l_hat: f64, beta_hat: f64, r_hat: f64, tau: f64, t: usize, eta: f64) -> Result<Self> {
        let (eps_opt_bound, eps_opt_noise_bound) = opt_bounds(l_hat, beta_hat, r_hat, t, eta, tau)?;
        Ok(Self {
            l_hat,
            beta_hat,
            beta_converged: true,
            r_hat,
            tau,
            t,
            eta,
            eps_opt_bound,
            eps_opt_noise_bound,
            observed_gap: 0.0,
            rademacher_hat: None,
            rademacher_std_error: None,
            shot_scaling_exponent: None,
            generalization_gap_proxy: None,
            source_probe_accuracy_proxy: None,
        })
    }
}

/// Final loss minus the best loss seen along the trajectory.
pub fn observed_gap(losses: &[f64]) -> f64 {
    match losses.last() {
        Some(last) => last - losses.iter().copied().fold(f64::INFINITY, f64::min),
        None => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotScaling {
    pub rows: Vec<(usize, f64)>,
    /// Least-squares slope of `ln std` against `ln M`; absent when degenerate.
    pub slope: Option<f64>,
    pub degenerate: bool,
}

pub const SHOT_GRID: [usize; 4] = [100, 400, 1600, 6400];

/// Spread of the shot estimator of `⟨σ_z^(qubit)⟩` over `repeats` seeded runs.
pub fn shot_scaling_experiment(
    state: &StateVector,
    qubit: usize,
    grid: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<ShotScaling> {
    if qubit >= state.num_qubits() {
        return Err(Error::QubitIndex { index: qubit, num_qubits: state.num_qubits() });
    }
    if repeats < 2 || grid.len() < 2 {
        return Err(Error::Argument("need at least 2 repeats and 2 shot counts".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for (k, &m) in grid.iter().enumerate() {
        let est: Vec<f64> = (0..repeats)
            .into_par_iter()
            .map(|r| Ok(state.sample_shots(m, &mut stream(seed, &[k as u64, r as u64]))?.means[qubit]))
            .collect::<Result<_>>()?;
        rows.push((m, sample_std(&est)));
    }
    let degenerate = rows.iter().any(|r| r.1 == 0.0);
    let slope = (!degenerate).then(|| {
        let pts: Vec<(f64, f64)> = rows.iter().map(|&(m, s)| ((m as f64).ln(), s.ln())).collect();
        least_squares_slope(&pts)
    });
    Ok(ShotScaling { rows, slope, degenerate })
}

fn sample_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeNoise {
    pub empirical: f64,
    pub predicted: f64,
    pub ratio: Option<f64>,
}

/// Mean over seeds of `‖Σ_t η ξ_t‖²` against `η²Tτ²`.
pub fn cumulative_noise_experiment(tau: f64, t: usize, eta: f64, u: usize, seeds: usize, seed: u64) -> Result<CumulativeNoise> {
    if u == 0 || seeds == 0 {
        return Err(Error::Argument("need U >= 1 and at least one seed".into()));
    }
    let zero = vec![0.0; u];
    let mut total = 0.0;
    for s in 0..seeds {
        let mut rng = stream(seed, &[s as u64]);
        let mut acc = vec![0.0; u];
        for _ in 0..t {
            let xi = inject_measurement_noise(&zero, tau, &mut rng)?;
            acc.iter_mut().zip(&xi).for_each(|(a, x)| *a += eta * x);
        }
        total += acc.iter().map(|a| a * a).sum::<f64>();
    }
    let empirical = total / seeds as f64;
    let predicted = eta * eta * t as f64 * tau * tau;
    let ratio = (predicted > 0.0).then(|| empirical / predicted);
    Ok(CumulativeNoise { empirical, predicted, ratio })
}

/// Function classes for the Rademacher estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum HeadClass {
    /// `x ↦ ⟨σ_z^(0)⟩` of the ansatz on the encoded `x`.
    Vqc { ansatz: AnsatzSpec },
    /// `x ↦ w·x` with `‖w‖ ≤ weight_cap`.
    Fc { weight_cap: f64 },
    /// The single function `x ↦ value`.
    Constant { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RademacherEstimate {
    pub value: f64,
    pub std_error: f64,
}

pub const RADEMACHER_MAX_SAMPLES: usize = 64;
pub const RADEMACHER_MAX_DIM: usize = 6;

/// `(1/n_σ) Σ_σ max_f (1/n) Σ_i σ_i f(x_i)` with the inner maximum found by
/// gradient ascent from a seeded start.
pub fn rademacher_estimate(
    class: &HeadClass,
    features: &[Vec<f64>],
    n_sigma: usize,
    inner_steps: usize,
    seed: u64,
) -> Result<RademacherEstimate> {
    let n = features.len();
    let u = features.first().map_or(0, Vec::len);
    if n == 0 || n_sigma < 2 {
        return Err(Error::Argument("need samples and at least 2 sign draws".into()));
    }
    if n > RADEMACHER_MAX_SAMPLES || u > RADEMACHER_MAX_DIM {
        return Err(Error::Scale(format!(
            "Rademacher estimate limited to n <= {RADEMACHER_MAX_SAMPLES}, U <= {RADEMACHER_MAX_DIM} (got n = {n}, U = {u})"
        )));
    }
    let inputs = match class {
        HeadClass::Vqc { ansatz } => {
            if ansatz.num_qubits != u {
                return Err(Error::Shape(format!("ansatz has {} qubits, features have width {u}", ansatz.num_qubits)));
            }
            features.iter().map(|x| encode_tpe(x)).collect::<Result<Vec<_>>>()?
        }
        _ => Vec::new(),
    };
    let sups: Vec<f64> = (0..n_sigma)
        .into_par_iter()
        .map(|s| {
            let mut rng = stream(seed, &[s as u64]);
            let sigma: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            match class {
                HeadClass::Constant { value } => Ok(sigma.iter().sum::<f64>() * value / n as f64),
                HeadClass::Fc { weight_cap } => {
                    let mut w: Vec<f64> = (0..u).map(|_| rng.random_range(-1.0..1.0)).collect();
                    project_ball(&mut w, *weight_cap);
                    let corr = |w: &[f64]| {
                        features.iter().zip(&sigma).map(|(x, s)| s * dot(w, x)).sum::<f64>() / n as f64
                    };
                    let grad: Vec<f64> = (0..u)
                        .map(|k| features.iter().zip(&sigma).map(|(x, s)| s * x[k]).sum::<f64>() / n as f64)
                        .collect();
                    let mut best = corr(&w);
                    for _ in 0..inner_steps {
                        w.iter_mut().zip(&grad).for_each(|(w, g)| *w += 0.5 * g);
                        project_ball(&mut w, *weight_cap);
                        best = best.max(corr(&w));
                    }
                    Ok(best)
                }
                HeadClass::Vqc { ansatz } => {
                    let ev = Evaluator::new(EvalMode::analytic());
                    let mut theta = ParamVector::random(ansatz, derive_seed(seed, &[s as u64, 1]));
                    let mut opt = Adam::new(theta.len(), 0.1);
                    let mut best = f64::NEG_INFINITY;
                    for step in 0..=inner_steps {
                        let mut val = 0.0;
                        let mut grad = vec![0.0; theta.len()];
                        for (x, sg) in inputs.iter().zip(&sigma) {
                            val += sg * ev.forward(ansatz, &theta, x, 0)?[0];
                            if step < inner_steps {
                                let jac = ev.jacobian(ansatz, &theta, x, 0)?;
                                grad.iter_mut().zip(&jac[0]).for_each(|(g, j)| *g -= sg * j / n as f64);
                            }
                        }
                        best = best.max(val / n as f64);
                        if step < inner_steps {
                            opt.step(&mut theta.theta, &grad);
                        }
                    }
                    Ok(best)
                }
            }
        })
        .collect::<Result<_>>()?;
    let value = sups.iter().sum::<f64>() / n_sigma as f64;
    let std_error = sample_std(&sups) / (n_sigma as f64).sqrt();
    Ok(RademacherEstimate { value, std_error })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn project_ball(w: &mut [f64], cap: f64) {
    let n = norm(w);
    if n > cap {
        w.iter_mut().for_each(|v| *v *= cap / n);
    }
}

/// One SGD run on the single-qubit toy `f(θ) = ⟨σ_z⟩ = cos α cos β`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineToyRun {
    /// Exact objective before each step and after the last one.
    pub losses: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub eta: f64,
    pub observed_gap: f64,
    pub eps_opt_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineToyConfig {
    pub steps: usize,
    pub shots: usize,
    pub tau: f64,
}

impl Default for CosineToyConfig {
    fn default() -> Self {
        Self { steps: 100, shots: 1000, tau: 0.0 }
    }
}

/// SGD with the theorem-3 step size, using the toy's known constants
/// `L = β = R = 1` (`|f'| ≤ 1`, `|f''| ≤ 1`). The starting `β` angle is
/// drawn from `[π/6, π/2]`; gradients are shot-based estimates.
pub fn cosine_toy_run(cfg: &CosineToyConfig, seed: u64) -> Result<CosineToyRun> {
    let spec = AnsatzSpec::new(1, 1, Entangler::LinearChain, 1)?;
    let input = StateVector::zero(1)?;
    let exact = Evaluator::new(EvalMode::analytic());
    let mut mode = EvalMode::shots(cfg.shots);
    if cfg.tau > 0.0 {
        mode.noise = Some(crate::noise::NoiseModel { tau_meas: cfg.tau, ..Default::default() });
    }
    let noisy = Evaluator::new(mode);
    let eta = theorem3_lr(1.0, 1.0, 1.0, cfg.steps)?;
    let (bound, _) = opt_bounds(1.0, 1.0, 1.0, cfg.steps, eta, cfg.tau)?;
    let mut rng = stream(seed, &[]);
    let mut theta = ParamVector { theta: vec![0.0, rng.random_range(FRAC_PI_6..=FRAC_PI_2), 0.0] };
    let mut losses = Vec::with_capacity(cfg.steps + 1);
    let mut grad_norms = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        losses.push(exact.forward(&spec, &theta, &input, 0)?[0]);
        let g = noisy.jacobian(&spec, &theta, &input, derive_seed(seed, &[step as u64]))?.remove(0);
        grad_norms.push(norm(&g));
        theta.theta.iter_mut().zip(&g).for_each(|(t, g)| *t -= eta * g);
    }
    losses.push(exact.forward(&spec, &theta, &input, 0)?[0]);
    Ok(CosineToyRun { observed_gap: observed_gap(&losses), losses, grad_norms, eta, eps_opt_bound: bound })
}

/// Whether the window-`w` moving average of `losses` never increases.
pub fn smoothed_nonincreasing(losses: &[f64], w: usize) -> bool {
    let avg: Vec<f64> = losses.windows(w).map(|s| s.iter().sum::<f64>() / w as f64).collect();
    avg.windows(2).all(|p| p[1] <= p[0] + 1e-12)
}
