//! Statevector simulation of small registers with Pauli rotations and CNOTs.

mod circuit;
mod gradient;
mod state;

pub use circuit::{apply_gate, run_circuit, Angle, Bindings, CircuitSpec, Gate, GateKind};
pub use gradient::{adjoint_grad, parameter_shift_grad, SlotGrads};
pub use state::{init_state, StateVector, MAX_QUBITS};
