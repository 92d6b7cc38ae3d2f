//! Property-based invariants across the simulator, encoder and blocks.

use std::f64::consts::FRAC_PI_2;

use legoqml_core::encoding::{encode_tpe, fit_normalizer};
use legoqml_core::features::{fit_pca, TtnBlock};
use legoqml_core::training::softmax_probs;
use legoqml_core::{Gate, StateVector};
use proptest::prelude::*;

fn gate_strategy(n: usize) -> impl Strategy<Value = Gate> {
    let q = 0..n;
    let angle = -10.0..10.0f64;
    prop_oneof![
        (q.clone(), angle.clone()).prop_map(|(q, a)| Gate::Rx(q, a)),
        (q.clone(), angle.clone()).prop_map(|(q, a)| Gate::Ry(q, a)),
        (q.clone(), angle).prop_map(|(q, a)| Gate::Rz(q, a)),
        q.clone().prop_map(Gate::Px),
        q.clone().prop_map(Gate::Py),
        q.clone().prop_map(Gate::Pz),
        (0..n, 1..n).prop_map(move |(c, off)| Gate::Cnot { control: c, target: (c + off) % n }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn norm_is_conserved(gates in prop::collection::vec(gate_strategy(5), 0..300)) {
        let mut s = StateVector::zero(5).unwrap();
        for chunk in gates.chunks(100) {
            s.apply_circuit(chunk).unwrap();
            prop_assert!((s.norm_sqr() - 1.0).abs() <= 1e-10);
        }
        prop_assert!(s.expectation_z_all().iter().all(|z| z.abs() <= 1.0 + 1e-12));
    }

    #[test]
    fn ry_follows_cosine_law(theta in -20.0..20.0f64) {
        let mut s = StateVector::zero(1).unwrap();
        s.apply_gate(&Gate::Ry(0, theta)).unwrap();
        prop_assert!((s.expectation_z_all()[0] - theta.cos()).abs() <= 1e-12);
    }

    #[test]
    fn encoding_is_separable(phi in prop::collection::vec(-1.0..=1.0f64, 1..7), other in -1.0..=1.0f64, pick in 0usize..6) {
        let z = encode_tpe(&phi).unwrap().expectation_z_all();
        for (u, p) in phi.iter().enumerate() {
            prop_assert!((z[u] - (FRAC_PI_2 * p).cos()).abs() <= 1e-12);
        }
        let mut changed = phi.clone();
        let k = pick % phi.len();
        changed[k] = other;
        let z2 = encode_tpe(&changed).unwrap().expectation_z_all();
        for u in (0..phi.len()).filter(|&u| u != k) {
            prop_assert!((z[u] - z2[u]).abs() <= 1e-12);
        }
        prop_assert_eq!(encode_tpe(&phi).unwrap(), encode_tpe(&phi).unwrap());
    }

    #[test]
    fn phi_stays_inside_open_interval(rows in prop::collection::vec(prop::collection::vec(-1e6..1e6f64, 3), 2..20), probe in prop::collection::vec(-1e9..1e9f64, 3)) {
        let spec = fit_normalizer(&rows).unwrap();
        prop_assert!(spec.phi(&probe).unwrap().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn softmax_is_a_shift_invariant_distribution(z in prop::collection::vec(-30.0..30.0f64, 2..8), shift in -100.0..100.0f64) {
        let c = z.len();
        let p = softmax_probs(&z, c).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
        let q = softmax_probs(&shifted, c).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn pca_rows_are_orthonormal(seed in 0u64..1000, n in 3usize..30, d in 2usize..8) {
        let mut rng = legoqml_core::rng::stream(seed, &[]);
        let data: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect()).collect();
        let k = n.min(d);
        let pca = fit_pca(&data, k).unwrap();
        for (i, a) in pca.components.iter().enumerate() {
            for (j, b) in pca.components.iter().enumerate() {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((dot - want).abs() <= 1e-10);
            }
        }
        prop_assert!(pca.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        // Forward equals the dense projection.
        let z = pca.forward(&data[0]).unwrap();
        for (c, zc) in pca.components.iter().zip(&z) {
            let want: f64 = c.iter().zip(&data[0]).zip(&pca.mean).map(|((c, x), m)| c * (x - m)).sum();
            prop_assert!((want - zc).abs() <= 1e-12);
        }
    }
}

/// Dense matrix from first principles: `W[j][i] = Σ_α Π_k G_k[α_{k-1}, i_k, j_k, α_k]`,
/// built by enumerating every rank-index path.
fn dense_by_paths(b: &TtnBlock) -> Vec<Vec<f64>> {
    let n = b.in_modes().len();
    let (d_in, d_out) = (b.input_dim(), b.output_dim());
    let split = |mut idx: usize, modes: &[usize]| {
        let mut v = vec![0; modes.len()];
        for k in (0..modes.len()).rev() {
            v[k] = idx % modes[k];
            idx /= modes[k];
        }
        v
    };
    let inner: Vec<usize> = b.ranks()[1..n].to_vec();
    let paths: usize = inner.iter().product();
    let mut w = vec![vec![0.0; d_in]; d_out];
    for (j, row) in w.iter_mut().enumerate() {
        let js = split(j, b.out_modes());
        for (i, cell) in row.iter_mut().enumerate() {
            let is = split(i, b.in_modes());
            for path in 0..paths {
                let mut alpha = vec![0usize];
                alpha.extend(split(path, &inner));
                alpha.push(0);
                let mut prod = 1.0;
                for k in 0..n {
                    let (m, o, r) = (b.in_modes()[k], b.out_modes()[k], b.ranks()[k + 1]);
                    prod *= b.cores()[k][((alpha[k] * m + is[k]) * o + js[k]) * r + alpha[k + 1]];
                }
                *cell += prod;
            }
        }
    }
    w
}

#[test]
fn ttn_forward_matches_dense_oracle_on_random_configurations() {
    let mut rng = legoqml_core::rng::stream(2024, &[]);
    use rand::Rng;
    for case in 0..50 {
        let n = rng.random_range(1..=4);
        let in_modes: Vec<usize> = (0..n).map(|_| rng.random_range(1..=3)).collect();
        let out_modes: Vec<usize> = (0..n).map(|_| rng.random_range(1..=3)).collect();
        let mut ranks = vec![1];
        ranks.extend((1..n).map(|_| rng.random_range(1..=6)));
        ranks.push(1);
        let block = TtnBlock::random(in_modes, out_modes, ranks, case).unwrap();
        let dense = dense_by_paths(&block);
        let lib_dense = block.to_dense().unwrap();
        let x: Vec<f64> = (0..block.input_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = block.forward(&x).unwrap();
        for (j, row) in dense.iter().enumerate() {
            let want: f64 = row.iter().zip(&x).map(|(w, x)| w * x).sum();
            assert!((y[j] - want).abs() <= 1e-10, "case {case}, output {j}: {} vs {want}", y[j]);
            for (a, b) in row.iter().zip(&lib_dense[j]) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn rank_one_ttn_output_has_fixed_direction() {
    let block = TtnBlock::random(vec![2, 3], vec![2, 2], vec![1, 1, 1], 5).unwrap();
    let dense = block.to_dense().unwrap();
    // All bond ranks 1: the dense matrix is the Kronecker product of the cores.
    let a = |j1: usize, i1: usize| block.cores()[0][i1 * 2 + j1];
    let b = |j2: usize, i2: usize| block.cores()[1][i2 * 2 + j2];
    for j1 in 0..2 {
        for j2 in 0..2 {
            for i1 in 0..2 {
                for i2 in 0..3 {
                    let w = dense[j1 * 2 + j2][i1 * 3 + i2];
                    assert!((w - a(j1, i1) * b(j2, i2)).abs() <= 1e-14);
                }
            }
        }
    }
    // Core slices of shape 1×3 and 3×1 make the whole map rank 1: every input
    // lands on the same output direction.
    let single = TtnBlock::random(vec![1, 3], vec![3, 1], vec![1, 1, 1], 6).unwrap();
    let y1 = single.forward(&[1.0, 0.0, 0.0]).unwrap();
    let y2 = single.forward(&[0.3, -0.2, 0.9]).unwrap();
    let ratio = y2[0] / y1[0];
    for (a, b) in y1.iter().zip(&y2) {
        assert!((b - ratio * a).abs() <= 1e-12);
    }
}
