mod common;

use std::f64::consts::PI;

use common::*;
use proptest::prelude::*;
use qfed::qdi::{build_qdi_circuit, encode_angles, qdi_backward, qdi_backward_with, qdi_forward, GradMethod, QdiConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn default_circuit() -> (qfed::quantum::CircuitSpec, QdiConfig) {
    let cfg = QdiConfig::default();
    (build_qdi_circuit(&cfg).unwrap(), cfg)
}

#[test]
fn forward_matches_dense_oracle() {
    let (circuit, _) = default_circuit();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..3 {
        let f = random_vec(&mut rng, 100, -2.0, 2.0);
        let p = random_vec(&mut rng, 105, -PI, PI);
        let got = qdi_forward(&circuit, &f, &p).unwrap();
        let want = oracle_expectations(5, circuit.gates(), &p, &encode_angles(&f));
        assert!(max_abs_diff(&got, &want) < 1e-10);
    }
}

#[test]
fn one_qubit_closed_form() {
    // RY(p0) · RZ(a) · RY(p1) on |0⟩ gives ⟨Z⟩ = cos p0 cos p1 − sin p0 sin p1 cos a
    let cfg = QdiConfig {
        n_qubits: 1,
        n_reupload: 1,
        n_initial_variational: 1,
    };
    let circuit = build_qdi_circuit(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let p = random_vec(&mut rng, 2, -PI, PI);
        let f = random_vec(&mut rng, 1, -2.0, 2.0);
        let a = PI * f[0].tanh();
        let e = qdi_forward(&circuit, &f, &p).unwrap()[0];
        let want = p[0].cos() * p[1].cos() - p[0].sin() * p[1].sin() * a.cos();
        assert!((e - want).abs() < 1e-12);
        let g = qdi_backward(&circuit, &f, &p, &[1.0]).unwrap();
        let df = p[0].sin() * p[1].sin() * a.sin() * PI * (1.0 - f[0].tanh().powi(2));
        assert!((g.features[0] - df).abs() < 1e-12);
        let dp0 = -p[0].sin() * p[1].cos() - p[0].cos() * p[1].sin() * a.cos();
        let dp1 = -p[0].cos() * p[1].sin() - p[0].sin() * p[1].cos() * a.cos();
        assert!((g.params[0] - dp0).abs() < 1e-12);
        assert!((g.params[1] - dp1).abs() < 1e-12);
    }
}

#[test]
fn zero_params_single_feature_closed_form() {
    // with all variational angles zero every RY is the identity, so the
    // feature only adds a phase and ⟨Z⟩ stays 1 with zero gradient
    let (circuit, _) = default_circuit();
    let p = vec![0.0; 105];
    for slot in [0, 37, 99] {
        let mut f = vec![0.0; 100];
        f[slot] = 0.8;
        let out = qdi_forward(&circuit, &f, &p).unwrap();
        assert!(out.iter().all(|e| (e - 1.0).abs() < 1e-12));
        let g = qdi_backward(&circuit, &f, &p, &[1.0; 5]).unwrap();
        assert!(g.features.iter().all(|d| d.abs() < 1e-12));
    }
}

fn weighted(circuit: &qfed::quantum::CircuitSpec, f: &[f64], p: &[f64], u: &[f64]) -> f64 {
    qdi_forward(circuit, f, p).unwrap().iter().zip(u).map(|(e, w)| e * w).sum()
}

#[test]
fn full_gradient_matches_finite_differences_over_20_seeds() {
    let (circuit, _) = default_circuit();
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let f = random_vec(&mut rng, 100, -1.5, 1.5);
        let p = random_vec(&mut rng, 105, -PI, PI);
        let u = random_vec(&mut rng, 5, -1.0, 1.0);
        let method = if seed % 2 == 0 { GradMethod::ParameterShift } else { GradMethod::Adjoint };
        let g = qdi_backward_with(&circuit, &f, &p, &u, method).unwrap();
        let fd_f = fd_gradient(|x| weighted(&circuit, x, &p, &u), &f, 1e-5);
        let fd_p = fd_gradient(|x| weighted(&circuit, &f, x, &u), &p, 1e-5);
        worst = worst
            .max(max_rel_error(&g.features, &fd_f, 1e-4))
            .max(max_rel_error(&g.params, &fd_p, 1e-4));
    }
    assert!(worst < 1e-5, "worst {worst:e}");
}

#[test]
fn forward_is_pure() {
    let (circuit, _) = default_circuit();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f = random_vec(&mut rng, 100, -1.0, 1.0);
    let p = random_vec(&mut rng, 105, -1.0, 1.0);
    let a = qdi_forward(&circuit, &f, &p).unwrap();
    let b = qdi_forward(&circuit, &f, &p).unwrap();
    assert_eq!(a, b);
}

#[test]
fn bounded_outputs_over_1000_inputs() {
    let (circuit, _) = default_circuit();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = random_vec(&mut rng, 105, -PI, PI);
    for _ in 0..1000 {
        let f = random_vec(&mut rng, 100, -5.0, 5.0);
        for e in qdi_forward(&circuit, &f, &p).unwrap() {
            assert!((-1.0..=1.0).contains(&e));
        }
    }
}

proptest! {
    #[test]
    fn encoded_angles_are_open_interval(f in prop::collection::vec(-1e6f64..1e6, 1..100)) {
        for a in encode_angles(&f) {
            prop_assert!(a.abs() <= PI);
        }
    }

    #[test]
    fn moderate_angles_strictly_inside(f in -15f64..15.0) {
        prop_assert!(encode_angles(&[f])[0].abs() < PI);
    }
}
