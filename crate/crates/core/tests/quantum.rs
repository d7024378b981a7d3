mod common;

use common::*;
use proptest::prelude::*;
use qfed::quantum::{
    adjoint_grad, apply_gate, init_state, parameter_shift_grad, run_circuit, Angle, Bindings, CircuitSpec, Gate,
    GateKind, StateVector,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec_from(rng: &mut ChaCha8Rng, n: usize, n_gates: usize) -> (CircuitSpec, Vec<f64>, Vec<f64>) {
    let (gates, np, nf) = random_circuit(rng, n, n_gates);
    let params = random_vec(rng, np, -3.5, 3.5);
    let features = random_vec(rng, nf, -3.5, 3.5);
    (CircuitSpec::new(n, gates, np, nf).unwrap(), params, features)
}

#[test]
fn matches_dense_oracle_up_to_three_qubits() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for case in 0..300 {
        let n = 1 + case % 3;
        let (spec, p, f) = spec_from(&mut rng, n, 1 + case % 25);
        let got = run_circuit(&spec, &p, &f).unwrap();
        let want = oracle_expectations(n, spec.gates(), &p, &f);
        worst = worst.max(max_abs_diff(&got, &want));
    }
    assert!(worst < 1e-10, "worst deviation {worst:e}");
}

#[test]
fn matches_dense_oracle_on_five_qubits() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..5 {
        let (spec, p, f) = spec_from(&mut rng, 5, 40);
        let got = run_circuit(&spec, &p, &f).unwrap();
        let want = oracle_expectations(5, spec.gates(), &p, &f);
        assert!(max_abs_diff(&got, &want) < 1e-10);
    }
}

#[test]
fn oracle_gates_are_unitary() {
    for kind in [GateKind::Rx, GateKind::Ry, GateKind::Rz] {
        assert!(unitarity_error(&gate_matrix(3, kind, 1, None, 0.7)) < 1e-14);
    }
    assert!(unitarity_error(&gate_matrix(3, GateKind::Cnot, 2, Some(0), 0.0)) < 1e-14);
}

#[test]
fn full_amplitudes_match_oracle_column() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (spec, p, f) = spec_from(&mut rng, 3, 30);
    let mut state = init_state(3).unwrap();
    let b = Bindings {
        params: &p,
        features: &f,
    };
    for g in spec.gates() {
        apply_gate(&mut state, g, &b).unwrap();
    }
    let u = circuit_unitary(3, spec.gates(), &p, &f);
    for (i, a) in state.amplitudes().iter().enumerate() {
        assert!((a - u[i][0]).norm() < 1e-12);
    }
}

#[test]
fn norm_drift_over_ten_thousand_gates() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut s = StateVector::new(5).unwrap();
    for _ in 0..10_000 {
        let q = rng.random_range(0..5);
        let theta = rng.random_range(-4.0..4.0);
        match rng.random_range(0..4) {
            0 => s.rx(q, theta).unwrap(),
            1 => s.ry(q, theta).unwrap(),
            2 => s.rz(q, theta).unwrap(),
            _ => s.cnot(q, (q + 1 + rng.random_range(0..4)) % 5).unwrap(),
        }
    }
    assert!((s.norm_sqr().sqrt() - 1.0).abs() < 1e-9);
}

#[test]
fn gate_then_inverse_restores_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut s = StateVector::new(3).unwrap();
    for q in 0..3 {
        s.ry(q, rng.random_range(-3.0..3.0)).unwrap();
        s.rz(q, rng.random_range(-3.0..3.0)).unwrap();
    }
    s.cnot(0, 2).unwrap();
    for _ in 0..200 {
        let before = s.amplitudes().to_vec();
        let q = rng.random_range(0..3);
        let t = rng.random_range(-4.0..4.0);
        match rng.random_range(0..4) {
            0 => {
                s.rx(q, t).unwrap();
                s.rx(q, -t).unwrap();
            }
            1 => {
                s.ry(q, t).unwrap();
                s.ry(q, -t).unwrap();
            }
            2 => {
                s.rz(q, t).unwrap();
                s.rz(q, -t).unwrap();
            }
            _ => {
                let c = (q + 1) % 3;
                s.cnot(c, q).unwrap();
                s.cnot(c, q).unwrap();
            }
        }
        for (a, b) in s.amplitudes().iter().zip(&before) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}

#[test]
fn ry_expectation_is_cosine() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..100 {
        let theta = rng.random_range(-10.0..10.0);
        let mut s = StateVector::new(1).unwrap();
        s.ry(0, theta).unwrap();
        assert!((s.expectation_z(0).unwrap() - theta.cos()).abs() < 1e-12);
    }
}

#[test]
fn shift_rule_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..4 {
        let (spec, p, f) = spec_from(&mut rng, 5, 40);
        let u = random_vec(&mut rng, 5, -1.0, 1.0);
        let g = parameter_shift_grad(&spec, &p, &f, &u).unwrap();
        let weighted = |params: &[f64], feats: &[f64]| -> f64 {
            run_circuit(&spec, params, feats).unwrap().iter().zip(&u).map(|(e, w)| e * w).sum()
        };
        let fd_p = fd_gradient(|x| weighted(x, &f), &p, 1e-6);
        let fd_f = fd_gradient(|x| weighted(&p, x), &f, 1e-6);
        assert!(max_rel_error(&g.params, &fd_p, 1e-3) < 1e-6);
        assert!(max_rel_error(&g.features, &fd_f, 1e-3) < 1e-6);
    }
}

#[test]
fn adjoint_matches_shift_rule_on_random_circuits() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for case in 0..50 {
        let n = 1 + case % 5;
        let (spec, p, f) = spec_from(&mut rng, n, 30);
        let u = random_vec(&mut rng, n, -1.0, 1.0);
        let a = adjoint_grad(&spec, &p, &f, &u).unwrap();
        let s = parameter_shift_grad(&spec, &p, &f, &u).unwrap();
        assert!(max_abs_diff(&a.params, &s.params) < 1e-12);
        assert!(max_abs_diff(&a.features, &s.features) < 1e-12);
    }
}

#[test]
fn shared_param_slot_rejected() {
    let gates = vec![Gate::rx(0, Angle::Param(0)), Gate::ry(0, Angle::Param(0))];
    assert!(CircuitSpec::new(1, gates, 1, 0).is_err());
    assert!(CircuitSpec::new(2, vec![Gate::cnot(1, 1)], 0, 0).is_err());
    assert!(CircuitSpec::new(2, vec![Gate::rx(2, Angle::Constant(0.0))], 0, 0).is_err());
    assert!(CircuitSpec::new(1, vec![Gate::rx(0, Angle::Feature(1))], 0, 1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn expectations_stay_in_range(seed in any::<u64>(), n in 1usize..=4, len in 0usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (spec, p, f) = spec_from(&mut rng, n, len);
        for e in run_circuit(&spec, &p, &f).unwrap() {
            prop_assert!((-1.0..=1.0).contains(&e));
        }
    }

    #[test]
    fn oracle_agrees_on_small_circuits(seed in any::<u64>(), n in 1usize..=3, len in 0usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (spec, p, f) = spec_from(&mut rng, n, len);
        let got = run_circuit(&spec, &p, &f).unwrap();
        let want = oracle_expectations(n, spec.gates(), &p, &f);
        prop_assert!(max_abs_diff(&got, &want) < 1e-10);
    }
}
