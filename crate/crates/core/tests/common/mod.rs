//! Reference implementations used only by the tests.
#![allow(dead_code)]

use num_complex::Complex64;
use qfed::quantum::{Angle, Gate, GateKind};
use rand::Rng;

pub type Matrix = Vec<Vec<Complex64>>;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn identity(dim: usize) -> Matrix {
    (0..dim)
        .map(|i| (0..dim).map(|j| if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) }).collect())
        .collect()
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.len();
    let mut out = vec![vec![c(0.0, 0.0); n]; n];
    for i in 0..n {
        for k in 0..n {
            if a[i][k] == c(0.0, 0.0) {
                continue;
            }
            for j in 0..n {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (n, m) = (a.len(), b.len());
    let mut out = vec![vec![c(0.0, 0.0); n * m]; n * m];
    for i in 0..n {
        for j in 0..n {
            for k in 0..m {
                for l in 0..m {
                    out[i * m + k][j * m + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

/// Textbook 2×2 rotation matrices.
pub fn single(kind: GateKind, theta: f64) -> Matrix {
    let (s, co) = (theta / 2.0).sin_cos();
    match kind {
        GateKind::Rx => vec![vec![c(co, 0.0), c(0.0, -s)], vec![c(0.0, -s), c(co, 0.0)]],
        GateKind::Ry => vec![vec![c(co, 0.0), c(-s, 0.0)], vec![c(s, 0.0), c(co, 0.0)]],
        GateKind::Rz => vec![vec![c(co, -s), c(0.0, 0.0)], vec![c(0.0, 0.0), c(co, s)]],
        GateKind::Cnot => unreachable!(),
    }
}

/// Full `2^n` operator of one gate; qubit 0 is the leftmost tensor factor.
pub fn gate_matrix(n: usize, kind: GateKind, target: usize, control: Option<usize>, theta: f64) -> Matrix {
    if kind == GateKind::Cnot {
        let control = control.unwrap();
        let dim = 1 << n;
        let bit = |q: usize| 1usize << (n - 1 - q);
        let mut m = vec![vec![c(0.0, 0.0); dim]; dim];
        for col in 0..dim {
            let row = if col & bit(control) != 0 { col ^ bit(target) } else { col };
            m[row][col] = c(1.0, 0.0);
        }
        return m;
    }
    let mut m = identity(1);
    for q in 0..n {
        let f = if q == target { single(kind, theta) } else { identity(2) };
        m = kron(&m, &f);
    }
    m
}

pub fn resolve(angle: Angle, params: &[f64], features: &[f64]) -> f64 {
    match angle {
        Angle::Constant(v) => v,
        Angle::Param(i) => params[i],
        Angle::Feature(i) => features[i],
    }
}

/// Product of all gate matrices, last gate leftmost.
pub fn circuit_unitary(n: usize, gates: &[Gate], params: &[f64], features: &[f64]) -> Matrix {
    let mut u = identity(1 << n);
    for g in gates {
        let theta = g.angle.map_or(0.0, |a| resolve(a, params, features));
        u = matmul(&gate_matrix(n, g.kind, g.target, g.control, theta), &u);
    }
    u
}

/// `⟨Z_q⟩` of `U|0…0⟩` read off the first column of `U`.
pub fn oracle_expectations(n: usize, gates: &[Gate], params: &[f64], features: &[f64]) -> Vec<f64> {
    let u = circuit_unitary(n, gates, params, features);
    (0..n)
        .map(|q| {
            let bit = 1usize << (n - 1 - q);
            (0..1 << n)
                .map(|i| {
                    let p = u[i][0].norm_sqr();
                    if i & bit == 0 {
                        p
                    } else {
                        -p
                    }
                })
                .sum()
        })
        .collect()
}

pub fn unitarity_error(u: &Matrix) -> f64 {
    let n = u.len();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let dot: Complex64 = (0..n).map(|k| u[k][i].conj() * u[k][j]).sum();
            let expect = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot - expect).norm());
        }
    }
    worst
}

/// Random gate list over `n` qubits. Each rotation reads a fresh parameter
/// slot, a feature slot or a constant; returns the gates and slot counts.
pub fn random_circuit<R: Rng>(rng: &mut R, n: usize, n_gates: usize) -> (Vec<Gate>, usize, usize) {
    let mut gates = Vec::with_capacity(n_gates);
    let (mut n_params, n_features) = (0, 3);
    for _ in 0..n_gates {
        let kinds: &[GateKind] = if n > 1 {
            &[GateKind::Rx, GateKind::Ry, GateKind::Rz, GateKind::Cnot]
        } else {
            &[GateKind::Rx, GateKind::Ry, GateKind::Rz]
        };
        let kind = kinds[rng.random_range(0..kinds.len())];
        let target = rng.random_range(0..n);
        if kind == GateKind::Cnot {
            let mut control = rng.random_range(0..n - 1);
            if control >= target {
                control += 1;
            }
            gates.push(Gate::cnot(control, target));
            continue;
        }
        let angle = match rng.random_range(0..3) {
            0 => {
                n_params += 1;
                Angle::Param(n_params - 1)
            }
            1 => Angle::Feature(rng.random_range(0..n_features)),
            _ => Angle::Constant(rng.random_range(-3.5..3.5)),
        };
        gates.push(Gate::rotation(kind, target, angle));
    }
    (gates, n_params, n_features)
}

pub fn random_vec<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Central finite differences of a scalar function.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let plus = f(&probe);
            probe[i] = x[i] - h;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a − b| / max(|a|, |b|, floor)`.
pub fn max_rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
