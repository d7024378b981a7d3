//! Gradients of `L = Σ_q u_q ⟨Z_q⟩` with respect to parameter and feature slots.
//!
//! [`parameter_shift_grad`] evaluates the two-term shift rule, two circuit
//! runs per rotation. [`adjoint_grad`] computes the same exact gradient in a
//! single reverse sweep and is what training uses.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use rayon::prelude::*;

use super::circuit::{apply_shifted, Angle, Bindings, CircuitSpec, Gate, GateKind};
use super::state::StateVector;
use crate::error::{Error, Result};

/// Slot gradients of a weighted sum of expectations.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotGrads {
    pub params: Vec<f64>,
    pub features: Vec<f64>,
}

fn check_upstream(spec: &CircuitSpec, upstream: &[f64]) -> Result<()> {
    if upstream.len() != spec.n_qubits() {
        return Err(Error::length("upstream gradient", spec.n_qubits(), upstream.len()));
    }
    Ok(())
}

fn weighted(spec: &CircuitSpec, params: &[f64], features: &[f64], upstream: &[f64], shift: (usize, f64)) -> Result<f64> {
    let state = spec.evolve(params, features, Some(shift))?;
    Ok(CircuitSpec::expectations(&state)
        .iter()
        .zip(upstream)
        .map(|(e, u)| e * u)
        .sum())
}

/// Two-term parameter-shift rule:
/// `dL/dθ = (L(θ + π/2) − L(θ − π/2)) / 2` per rotation gate, accumulated into
/// the slot that gate reads from.
pub fn parameter_shift_grad(
    spec: &CircuitSpec,
    params: &[f64],
    features: &[f64],
    upstream: &[f64],
) -> Result<SlotGrads> {
    spec.check_inputs(params, features)?;
    check_upstream(spec, upstream)?;
    let mut grads = SlotGrads {
        params: vec![0.0; spec.n_params()],
        features: vec![0.0; spec.n_features()],
    };
    if upstream.iter().all(|u| *u == 0.0) {
        return Ok(grads);
    }
    let slotted: Vec<(usize, Angle)> = spec
        .gates()
        .iter()
        .enumerate()
        .filter_map(|(i, g)| match g.angle {
            Some(a @ (Angle::Param(_) | Angle::Feature(_))) => Some((i, a)),
            _ => None,
        })
        .collect();
    for (i, _) in &slotted {
        if !spec.gates()[*i].kind.is_rotation() {
            return Err(Error::Circuit(format!(
                "slot referenced by non-rotation gate {i}"
            )));
        }
    }
    let partials: Vec<f64> = slotted
        .par_iter()
        .map(|&(i, _)| {
            let plus = weighted(spec, params, features, upstream, (i, FRAC_PI_2))?;
            let minus = weighted(spec, params, features, upstream, (i, -FRAC_PI_2))?;
            Ok((plus - minus) / 2.0)
        })
        .collect::<Result<_>>()?;
    // reduce in gate order
    for ((_, angle), d) in slotted.iter().zip(partials) {
        match angle {
            Angle::Param(p) => grads.params[*p] += d,
            Angle::Feature(f) => grads.features[*f] += d,
            Angle::Constant(_) => unreachable!(),
        }
    }
    Ok(grads)
}

/// `Im⟨λ|P|ψ⟩` where `P` is the Pauli generator of a rotation on `qubit`.
fn generator_overlap(kind: GateKind, mask: usize, lambda: &[Complex64], psi: &[Complex64]) -> f64 {
    let i = Complex64::new(0.0, 1.0);
    let mut acc = Complex64::new(0.0, 0.0);
    for i0 in 0..psi.len() {
        if i0 & mask != 0 {
            continue;
        }
        let i1 = i0 | mask;
        let (p0, p1) = match kind {
            GateKind::Rx => (psi[i1], psi[i0]),
            GateKind::Ry => (-i * psi[i1], i * psi[i0]),
            GateKind::Rz => (psi[i0], -psi[i1]),
            GateKind::Cnot => unreachable!("CNOT has no generator"),
        };
        acc += lambda[i0].conj() * p0 + lambda[i1].conj() * p1;
    }
    acc.im
}

fn apply_inverse(state: &mut StateVector, gate: &Gate, bindings: &Bindings<'_>) -> Result<()> {
    match gate.kind {
        GateKind::Cnot => apply_shifted(state, gate, bindings, 0.0),
        _ => {
            // R(θ)† = R(−θ): shift by −2θ
            let theta = bindings.resolve(gate.angle.expect("validated rotation"))?;
            apply_shifted(state, gate, bindings, -2.0 * theta)
        }
    }
}

/// Adjoint-state gradient: one forward sweep, then one reverse sweep that
/// un-applies each gate to both the state and the co-state `λ = O|ψ⟩` with
/// `O = Σ_q u_q Z_q`. For `R(θ) = exp(−iθP/2)`, `dL/dθ = Im⟨λ_k|P|ψ_k⟩`.
pub fn adjoint_grad(
    spec: &CircuitSpec,
    params: &[f64],
    features: &[f64],
    upstream: &[f64],
) -> Result<SlotGrads> {
    spec.check_inputs(params, features)?;
    check_upstream(spec, upstream)?;
    let mut grads = SlotGrads {
        params: vec![0.0; spec.n_params()],
        features: vec![0.0; spec.n_features()],
    };
    if upstream.iter().all(|u| *u == 0.0) {
        return Ok(grads);
    }
    let bindings = Bindings { params, features };
    let mut psi = spec.evolve(params, features, None)?;

    let mut lambda = psi.clone();
    let masks: Vec<usize> = (0..spec.n_qubits()).map(|q| psi.mask(q)).collect();
    for (idx, a) in lambda.amplitudes_mut().iter_mut().enumerate() {
        let w: f64 = masks
            .iter()
            .zip(upstream)
            .map(|(m, u)| if idx & m == 0 { *u } else { -*u })
            .sum();
        *a *= w;
    }

    for gate in spec.gates().iter().rev() {
        if let Some(angle @ (Angle::Param(_) | Angle::Feature(_))) = gate.angle {
            let mask = psi.mask(gate.target);
            let d = generator_overlap(gate.kind, mask, lambda.amplitudes(), psi.amplitudes());
            match angle {
                Angle::Param(p) => grads.params[p] += d,
                Angle::Feature(f) => grads.features[f] += d,
                Angle::Constant(_) => unreachable!(),
            }
        }
        apply_inverse(&mut psi, gate, &bindings)?;
        apply_inverse(&mut lambda, gate, &bindings)?;
    }
    Ok(grads)
}
