//! Trajectory-averaged noise against density-matrix propagation.

use legoqml_core::noise::{apply_readout_expectation, noisy_expectation, trajectory_expectations, NoiseModel};
use legoqml_core::{Gate, StateVector};
use nalgebra::DMatrix;
use num_complex::Complex64;

type C = Complex64;

fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

/// Single-qubit gate as a dense operator on `n` qubits (qubit 0 = bit 0).
fn embed(m: [[C; 2]; 2], q: usize, n: usize) -> DMatrix<C> {
    let d = 1 << n;
    DMatrix::from_fn(d, d, |r, col| {
        if (r ^ col) & !(1 << q) != 0 {
            return c(0.0, 0.0);
        }
        m[(r >> q) & 1][(col >> q) & 1]
    })
}

fn cnot(control: usize, target: usize, n: usize) -> DMatrix<C> {
    let d = 1 << n;
    DMatrix::from_fn(d, d, |r, col| {
        let mapped = if col >> control & 1 == 1 { col ^ (1 << target) } else { col };
        if r == mapped { c(1.0, 0.0) } else { c(0.0, 0.0) }
    })
}

fn paulis() -> [[[C; 2]; 2]; 4] {
    let (o, l, i) = (c(0.0, 0.0), c(1.0, 0.0), c(0.0, 1.0));
    [[[l, o], [o, l]], [[o, l], [l, o]], [[o, -i], [i, o]], [[l, o], [o, -l]]]
}

fn ry(t: f64) -> [[C; 2]; 2] {
    let (s, co) = (t / 2.0).sin_cos();
    [[c(co, 0.0), c(-s, 0.0)], [c(s, 0.0), c(co, 0.0)]]
}

fn conj(u: &DMatrix<C>, rho: &DMatrix<C>) -> DMatrix<C> {
    u * rho * u.adjoint()
}

/// Fully depolarizing with probability `p`: ρ ↦ (1−p)ρ + p·Tr_q(ρ) ⊗ I/2.
fn depolarize(rho: &DMatrix<C>, q: usize, n: usize, p: f64) -> DMatrix<C> {
    let mut mixed = DMatrix::zeros(rho.nrows(), rho.ncols());
    for s in paulis() {
        mixed += conj(&embed(s, q, n), rho) * c(0.25, 0.0);
    }
    rho * c(1.0 - p, 0.0) + mixed * c(p, 0.0)
}

fn dephase(rho: &DMatrix<C>, q: usize, n: usize, p: f64) -> DMatrix<C> {
    rho * c(1.0 - p, 0.0) + conj(&embed(paulis()[3], q, n), rho) * c(p, 0.0)
}

/// Uniform non-identity two-qubit Pauli with probability `p`.
fn pauli2(rho: &DMatrix<C>, a: usize, b: usize, n: usize, p: f64) -> DMatrix<C> {
    let mut acc = DMatrix::zeros(rho.nrows(), rho.ncols());
    for (i, pa) in paulis().into_iter().enumerate() {
        for (j, pb) in paulis().into_iter().enumerate() {
            if i == 0 && j == 0 {
                continue;
            }
            let op = embed(pa, a, n) * embed(pb, b, n);
            acc += conj(&op, rho) * c(1.0 / 15.0, 0.0);
        }
    }
    rho * c(1.0 - p, 0.0) + acc * c(p, 0.0)
}

fn z_expect(rho: &DMatrix<C>, q: usize) -> f64 {
    (0..rho.nrows()).map(|b| if b >> q & 1 == 0 { rho[(b, b)].re } else { -rho[(b, b)].re }).sum()
}

fn pure(n: usize) -> DMatrix<C> {
    let mut rho = DMatrix::zeros(1 << n, 1 << n);
    rho[(0, 0)] = c(1.0, 0.0);
    rho
}

/// Mean and standard error of qubit `q` across trajectories.
fn trajectory_stats(circuit: &[Gate], n: usize, model: &NoiseModel, q: usize, seed: u64) -> (f64, f64) {
    let init = StateVector::zero(n).unwrap();
    let runs = trajectory_expectations(circuit, &init, model, seed).unwrap();
    let v: Vec<f64> = runs.iter().map(|z| z[q]).collect();
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (m, (var / v.len() as f64).sqrt())
}

#[test]
fn depolarizing_contraction_matches_density_matrix() {
    for p in [0.05, 0.2] {
        for k in 1..=3 {
            // Zero-angle rotations act as identity gates that still attract noise.
            let circuit = vec![Gate::Rx(0, 0.0); k];
            let model = NoiseModel { p_depol_1q: p, n_trajectories: 20_000, ..Default::default() };
            let mut rho = pure(1);
            for _ in 0..k {
                rho = depolarize(&rho, 0, 1, p);
            }
            let oracle = z_expect(&rho, 0);
            assert!((oracle - (1.0 - p).powi(k as i32)).abs() <= 1e-12);
            let (mean, se) = trajectory_stats(&circuit, 1, &model, 0, 100 + k as u64);
            assert!((mean - oracle).abs() <= 3.0 * se, "p={p} k={k}: {mean} vs {oracle} (se {se})");
        }
    }
}

#[test]
fn mixed_channels_on_entangling_circuit_match_density_matrix() {
    let n = 2;
    let circuit = vec![
        Gate::Ry(0, 1.1),
        Gate::Ry(1, -0.4),
        Gate::Cnot { control: 0, target: 1 },
        Gate::Ry(1, 0.7),
    ];
    let model = NoiseModel {
        p_depol_1q: 0.1,
        p_dephase_1q: 0.15,
        p_pauli_2q: 0.3,
        n_trajectories: 20_000,
        ..Default::default()
    };
    let mut rho = pure(n);
    for g in &circuit {
        match *g {
            Gate::Ry(q, t) => {
                rho = conj(&embed(ry(t), q, n), &rho);
                rho = depolarize(&rho, q, n, model.p_depol_1q);
                rho = dephase(&rho, q, n, model.p_dephase_1q);
            }
            Gate::Cnot { control, target } => {
                rho = conj(&cnot(control, target, n), &rho);
                rho = pauli2(&rho, control, target, n, model.p_pauli_2q);
            }
            _ => unreachable!(),
        }
    }
    for q in 0..n {
        let (mean, se) = trajectory_stats(&circuit, n, &model, q, 7);
        let oracle = z_expect(&rho, q);
        assert!((mean - oracle).abs() <= 3.0 * se, "qubit {q}: {mean} vs {oracle} (se {se})");
    }
}

#[test]
fn readout_scaling_is_exact_in_expectation_mode() {
    let circuit = vec![Gate::Ry(0, 0.9), Gate::Ry(1, 2.1), Gate::Cnot { control: 0, target: 1 }];
    let init = StateVector::zero(2).unwrap();
    let clean = noisy_expectation(&circuit, &init, &NoiseModel::noiseless(), 0).unwrap();
    for q in [0.0, 0.05, 0.2, 0.5] {
        let model = NoiseModel { p_readout_flip: q, ..Default::default() };
        let noisy = noisy_expectation(&circuit, &init, &model, 0).unwrap();
        for (a, b) in noisy.iter().zip(&clean) {
            assert!((a - (1.0 - 2.0 * q) * b).abs() <= 1e-12);
        }
    }
    assert!(apply_readout_expectation(&[1.0], 0.6).is_err());
    assert_eq!(apply_readout_expectation(&[0.0], 0.3).unwrap(), vec![0.0]);
}
