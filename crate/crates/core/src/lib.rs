//! Hybrid quantum-classical image classification with federated averaging.
//!
//! The crate is a chain of small layers: dense tensors and Adam
//! ([`tensor`], [`layers`], [`adam`]), an exact statevector simulator
//! ([`quantum`]), the data re-uploading QDI layer ([`qdi`]), the full
//! classifier with its class-weighted loss ([`model`]), FedAvg training
//! ([`fed`]), a synthetic steatosis dataset ([`synth`]) and the experiment
//! harness ([`experiment`]).

pub mod adam;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiment;
pub mod fed;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod qdi;
pub mod quantum;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
