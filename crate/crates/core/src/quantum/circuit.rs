use serde::{Deserialize, Serialize};

use super::state::StateVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateKind {
    Rx,
    Ry,
    Rz,
    Cnot,
}

impl GateKind {
    pub fn is_rotation(self) -> bool {
        !matches!(self, GateKind::Cnot)
    }
}

/// Where a rotation gate takes its angle from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Angle {
    Constant(f64),
    /// Index into the trainable parameter vector.
    Param(usize),
    /// Index into the per-sample feature vector.
    Feature(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub kind: GateKind,
    pub target: usize,
    pub control: Option<usize>,
    pub angle: Option<Angle>,
}

impl Gate {
    pub fn rx(target: usize, angle: Angle) -> Self {
        Self::rotation(GateKind::Rx, target, angle)
    }

    pub fn ry(target: usize, angle: Angle) -> Self {
        Self::rotation(GateKind::Ry, target, angle)
    }

    pub fn rz(target: usize, angle: Angle) -> Self {
        Self::rotation(GateKind::Rz, target, angle)
    }

    pub fn rotation(kind: GateKind, target: usize, angle: Angle) -> Self {
        Self {
            kind,
            target,
            control: None,
            angle: Some(angle),
        }
    }

    pub fn cnot(control: usize, target: usize) -> Self {
        Self {
            kind: GateKind::Cnot,
            target,
            control: Some(control),
            angle: None,
        }
    }
}

/// Values bound to the parameter and feature slots of a circuit.
#[derive(Debug, Clone, Copy)]
pub struct Bindings<'a> {
    pub params: &'a [f64],
    pub features: &'a [f64],
}

impl Bindings<'_> {
    pub fn resolve(&self, angle: Angle) -> Result<f64> {
        match angle {
            Angle::Constant(v) => Ok(v),
            Angle::Param(i) => self.params.get(i).copied().ok_or_else(|| {
                Error::Circuit(format!(
                    "no binding for parameter slot {i} ({} supplied)",
                    self.params.len()
                ))
            }),
            Angle::Feature(i) => self.features.get(i).copied().ok_or_else(|| {
                Error::Circuit(format!(
                    "no binding for feature slot {i} ({} supplied)",
                    self.features.len()
                ))
            }),
        }
    }
}

/// Applies `gate` with angle offset `shift` added to its bound angle.
pub(crate) fn apply_shifted(
    state: &mut StateVector,
    gate: &Gate,
    bindings: &Bindings<'_>,
    shift: f64,
) -> Result<()> {
    match gate.kind {
        GateKind::Cnot => {
            let control = gate
                .control
                .ok_or_else(|| Error::Circuit("CNOT without control qubit".into()))?;
            state.cnot(control, gate.target)
        }
        kind => {
            let angle = gate
                .angle
                .ok_or_else(|| Error::Circuit(format!("{kind:?} gate without an angle")))?;
            let theta = bindings.resolve(angle)? + shift;
            match kind {
                GateKind::Rx => state.rx(gate.target, theta),
                GateKind::Ry => state.ry(gate.target, theta),
                _ => state.rz(gate.target, theta),
            }
        }
    }
}

/// Applies one gate to `state` in place.
pub fn apply_gate(state: &mut StateVector, gate: &Gate, bindings: &Bindings<'_>) -> Result<()> {
    apply_shifted(state, gate, bindings, 0.0)
}

/// A validated gate sequence over a fixed register.
///
/// Each parameter slot feeds exactly one gate at most; feature slots may be
/// shared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitSpec {
    n_qubits: usize,
    gates: Vec<Gate>,
    n_params: usize,
    n_features: usize,
}

impl CircuitSpec {
    pub fn new(
        n_qubits: usize,
        gates: Vec<Gate>,
        n_params: usize,
        n_features: usize,
    ) -> Result<Self> {
        if n_qubits == 0 || n_qubits > super::state::MAX_QUBITS {
            return Err(Error::Circuit(format!("invalid qubit count {n_qubits}")));
        }
        let mut param_used = vec![false; n_params];
        for (i, g) in gates.iter().enumerate() {
            if g.target >= n_qubits {
                return Err(Error::Circuit(format!(
                    "gate {i}: target {} out of range",
                    g.target
                )));
            }
            match (g.kind, g.control, g.angle) {
                (GateKind::Cnot, Some(c), None) => {
                    if c >= n_qubits || c == g.target {
                        return Err(Error::Circuit(format!(
                            "gate {i}: bad CNOT control {c} (target {})",
                            g.target
                        )));
                    }
                }
                (GateKind::Cnot, _, Some(_)) => {
                    return Err(Error::Circuit(format!(
                        "gate {i}: slot referenced by non-rotation gate CNOT"
                    )));
                }
                (GateKind::Cnot, None, None) => {
                    return Err(Error::Circuit(format!("gate {i}: CNOT without control")));
                }
                (_, Some(_), _) => {
                    return Err(Error::Circuit(format!(
                        "gate {i}: controlled rotations are not supported"
                    )));
                }
                (_, None, None) => {
                    return Err(Error::Circuit(format!("gate {i}: rotation without angle")));
                }
                (_, None, Some(Angle::Param(p))) => {
                    if p >= n_params {
                        return Err(Error::Circuit(format!(
                            "gate {i}: parameter slot {p} >= {n_params}"
                        )));
                    }
                    if std::mem::replace(&mut param_used[p], true) {
                        return Err(Error::Circuit(format!(
                            "gate {i}: parameter slot {p} used by more than one gate"
                        )));
                    }
                }
                (_, None, Some(Angle::Feature(f))) => {
                    if f >= n_features {
                        return Err(Error::Circuit(format!(
                            "gate {i}: feature slot {f} >= {n_features}"
                        )));
                    }
                }
                (_, None, Some(Angle::Constant(_))) => {}
            }
        }
        Ok(Self {
            n_qubits,
            gates,
            n_params,
            n_features,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub(crate) fn check_inputs(&self, params: &[f64], features: &[f64]) -> Result<()> {
        if params.len() != self.n_params {
            return Err(Error::length("circuit parameters", self.n_params, params.len()));
        }
        if features.len() != self.n_features {
            return Err(Error::length("circuit features", self.n_features, features.len()));
        }
        Ok(())
    }

    /// Final state after all gates, with gate `shifted.0` offset by `shifted.1`.
    pub(crate) fn evolve(
        &self,
        params: &[f64],
        features: &[f64],
        shifted: Option<(usize, f64)>,
    ) -> Result<StateVector> {
        let bindings = Bindings { params, features };
        let mut state = StateVector::new(self.n_qubits)?;
        for (i, g) in self.gates.iter().enumerate() {
            let shift = match shifted {
                Some((j, s)) if j == i => s,
                _ => 0.0,
            };
            apply_shifted(&mut state, g, &bindings, shift)?;
        }
        Ok(state)
    }

    pub(crate) fn expectations(state: &StateVector) -> Vec<f64> {
        (0..state.n_qubits())
            .map(|q| state.expectation_z(q).expect("qubit index in range"))
            .collect()
    }
}

/// Runs the circuit from `|0…0⟩` and returns `⟨Z_q⟩` for every qubit.
pub fn run_circuit(spec: &CircuitSpec, params: &[f64], features: &[f64]) -> Result<Vec<f64>> {
    spec.check_inputs(params, features)?;
    let state = spec.evolve(params, features, None)?;
    Ok(CircuitSpec::expectations(&state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn zero_angles_leave_ground_state() {
        let n = 4;
        let mut gates = Vec::new();
        for q in 0..n {
            gates.push(Gate::ry(q, Angle::Param(q)));
            gates.push(Gate::rx(q, Angle::Feature(q)));
        }
        for q in 0..n {
            gates.push(Gate::cnot(q, (q + 1) % n));
        }
        let spec = CircuitSpec::new(n, gates, n, n).unwrap();
        let out = run_circuit(&spec, &[0.0; 4], &[0.0; 4]).unwrap();
        assert_eq!(out, vec![1.0; 4]);
    }

    #[test]
    fn single_ry_param() {
        let spec = CircuitSpec::new(1, vec![Gate::ry(0, Angle::Param(0))], 1, 0).unwrap();
        let out = run_circuit(&spec, &[PI], &[]).unwrap();
        assert!((out[0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let spec = CircuitSpec::new(1, vec![Gate::ry(0, Angle::Param(0))], 1, 0).unwrap();
        assert!(run_circuit(&spec, &[], &[]).is_err());
        assert!(run_circuit(&spec, &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn missing_binding_is_an_error() {
        let mut s = StateVector::new(1).unwrap();
        let b = Bindings {
            params: &[],
            features: &[],
        };
        assert!(apply_gate(&mut s, &Gate::ry(0, Angle::Param(0)), &b).is_err());
        assert!(apply_gate(&mut s, &Gate::rz(0, Angle::Feature(2)), &b).is_err());
        assert!(apply_gate(&mut s, &Gate::rz(0, Angle::Constant(0.3)), &b).is_ok());
    }

    #[test]
    fn validation_rejects_bad_specs() {
        // reused parameter slot
        let g = vec![Gate::ry(0, Angle::Param(0)), Gate::rx(0, Angle::Param(0))];
        assert!(CircuitSpec::new(1, g, 1, 0).is_err());
        // slot on a CNOT
        let mut cx = Gate::cnot(0, 1);
        cx.angle = Some(Angle::Param(0));
        let err = CircuitSpec::new(2, vec![cx], 1, 0).unwrap_err().to_string();
        assert!(err.contains("non-rotation"), "{err}");
        // out of range
        assert!(CircuitSpec::new(2, vec![Gate::cnot(0, 2)], 0, 0).is_err());
        assert!(CircuitSpec::new(2, vec![Gate::cnot(1, 1)], 0, 0).is_err());
        assert!(CircuitSpec::new(1, vec![Gate::ry(0, Angle::Param(1))], 1, 0).is_err());
        assert!(CircuitSpec::new(1, vec![Gate::ry(0, Angle::Feature(0))], 0, 0).is_err());
    }
}
