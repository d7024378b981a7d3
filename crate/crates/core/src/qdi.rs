//! Quantum depth-infused (QDI) layer.
//!
//! Many classical features are fed into a few qubits by re-uploading them
//! block by block:
//!
//! ```text
//! V(θ₀) · [E(a₀) V(θ₁)] · [E(a₁) V(θ₂)] · … · [E(a_{D-1}) V(θ_D)]
//! ```
//!
//! `V` is one RY per qubit followed by a CNOT ring `q → q+1 mod n`; `E` is one
//! RZ per qubit. Features are squashed with `a = π·tanh(f)` before binding, and
//! feature `d·n_qubits + q` drives qubit `q` in re-upload block `d`. The layer
//! outputs `⟨Z_q⟩` for every qubit.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::quantum::{adjoint_grad, parameter_shift_grad, run_circuit, Angle, CircuitSpec, Gate, SlotGrads};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct QdiConfig {
    pub n_qubits: usize,
    pub n_reupload: usize,
    pub n_initial_variational: usize,
}

impl Default for QdiConfig {
    fn default() -> Self {
        Self {
            n_qubits: 5,
            n_reupload: 20,
            n_initial_variational: 1,
        }
    }
}

impl QdiConfig {
    pub fn n_features(&self) -> usize {
        self.n_qubits * self.n_reupload
    }

    pub fn n_params(&self) -> usize {
        self.n_qubits * (self.n_initial_variational + self.n_reupload)
    }

    fn validate(&self) -> Result<()> {
        if self.n_qubits == 0 || self.n_qubits > crate::quantum::MAX_QUBITS {
            return Err(Error::Invalid(format!("QDI qubit count {}", self.n_qubits)));
        }
        if self.n_initial_variational == 0 {
            return Err(Error::Invalid(
                "QDI needs at least one leading variational block".into(),
            ));
        }
        Ok(())
    }
}

/// How [`QdiLayer::backward`] differentiates the circuit. Both are exact.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradMethod {
    #[default]
    Adjoint,
    ParameterShift,
}

fn variational_block(n: usize, first_param: usize, gates: &mut Vec<Gate>) {
    for q in 0..n {
        gates.push(Gate::ry(q, Angle::Param(first_param + q)));
    }
    if n > 1 {
        for q in 0..n {
            gates.push(Gate::cnot(q, (q + 1) % n));
        }
    }
}

/// Lays out the QDI gate sequence for `config`.
pub fn build_qdi_circuit(config: &QdiConfig) -> Result<CircuitSpec> {
    config.validate()?;
    let n = config.n_qubits;
    let mut gates = Vec::new();
    let mut next_param = 0;
    for _ in 0..config.n_initial_variational {
        variational_block(n, next_param, &mut gates);
        next_param += n;
    }
    for d in 0..config.n_reupload {
        for q in 0..n {
            gates.push(Gate::rz(q, Angle::Feature(d * n + q)));
        }
        variational_block(n, next_param, &mut gates);
        next_param += n;
    }
    CircuitSpec::new(n, gates, config.n_params(), config.n_features())
}

pub fn encode_angles(features: &[f64]) -> Vec<f64> {
    features.iter().map(|f| PI * f.tanh()).collect()
}

/// The QDI layer: circuit layout plus trainable rotation angles.
#[derive(Debug, Clone, PartialEq)]
pub struct QdiLayer {
    config: QdiConfig,
    circuit: CircuitSpec,
    pub params: Tensor,
    pub grad_method: GradMethod,
}

/// Gradients returned by [`QdiLayer::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct QdiGrads {
    pub params: Vec<f64>,
    pub features: Vec<f64>,
}

impl QdiLayer {
    pub fn new(config: QdiConfig, params: Vec<f64>) -> Result<Self> {
        let circuit = build_qdi_circuit(&config)?;
        if params.len() != config.n_params() {
            return Err(Error::length("QDI parameters", config.n_params(), params.len()));
        }
        Ok(Self {
            config,
            circuit,
            params: Tensor::from_vec(params)?,
            grad_method: GradMethod::default(),
        })
    }

    /// Angles drawn uniformly from `[-π/4, π/4]`.
    pub fn random<R: Rng + ?Sized>(config: QdiConfig, rng: &mut R) -> Result<Self> {
        let params = (0..config.n_params())
            .map(|_| rng.random_range(-PI / 4.0..PI / 4.0))
            .collect();
        Self::new(config, params)
    }

    pub fn config(&self) -> &QdiConfig {
        &self.config
    }

    pub fn circuit(&self) -> &CircuitSpec {
        &self.circuit
    }

    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        qdi_forward(&self.circuit, features, self.params.data())
    }

    pub fn backward(&self, features: &[f64], upstream: &[f64]) -> Result<QdiGrads> {
        qdi_backward_with(&self.circuit, features, self.params.data(), upstream, self.grad_method)
    }
}

/// Squashes `features`, binds them with `params` and returns `⟨Z_q⟩` per qubit.
pub fn qdi_forward(circuit: &CircuitSpec, features: &[f64], params: &[f64]) -> Result<Vec<f64>> {
    if features.len() != circuit.n_features() {
        return Err(Error::length("QDI features", circuit.n_features(), features.len()));
    }
    run_circuit(circuit, params, &encode_angles(features))
}

/// Gradients of `Σ_q upstream[q]·out[q]` using the parameter-shift rule.
pub fn qdi_backward(
    circuit: &CircuitSpec,
    features: &[f64],
    params: &[f64],
    upstream: &[f64],
) -> Result<QdiGrads> {
    qdi_backward_with(circuit, features, params, upstream, GradMethod::ParameterShift)
}

pub fn qdi_backward_with(
    circuit: &CircuitSpec,
    features: &[f64],
    params: &[f64],
    upstream: &[f64],
    method: GradMethod,
) -> Result<QdiGrads> {
    if features.len() != circuit.n_features() {
        return Err(Error::length("QDI features", circuit.n_features(), features.len()));
    }
    let angles = encode_angles(features);
    let SlotGrads {
        params: d_params,
        features: d_angles,
    } = match method {
        GradMethod::Adjoint => adjoint_grad(circuit, params, &angles, upstream)?,
        GradMethod::ParameterShift => parameter_shift_grad(circuit, params, &angles, upstream)?,
    };
    let d_features = d_angles
        .iter()
        .zip(features)
        .map(|(g, f)| {
            let t = f.tanh();
            g * PI * (1.0 - t * t)
        })
        .collect();
    Ok(QdiGrads {
        params: d_params,
        features: d_features,
    })
}
