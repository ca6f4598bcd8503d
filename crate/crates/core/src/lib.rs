//! Quantum Fisher information flows for an NV electron coupled to a
//! nitrogen and a carbon nuclear spin, with a fitted spin-bath envelope.
//!
//! The crate is layered bottom-up:
//!
//! - [`linalg`]: small dense complex matrices, states, partial traces.
//! - [`nv_model`]: the diagonal three-spin Hamiltonian, state preparation and
//!   reduced dynamics.
//! - [`qfi`]: QFI of mixed states and the two-qubit entanglement witness.
//! - [`nonmarkov`]: subflow decomposition, the non-Markovianity measure,
//!   decay rates and the Lindblad propagator.
//! - [`tomography`]: photon-count emulation and state reconstruction.
//! - [`experiments`]: config files, sweeps, figure datasets and output.

pub mod error;
pub mod experiments;
pub mod linalg;
pub mod nonmarkov;
pub mod nv_model;
pub mod qfi;
pub mod tomography;

pub use error::{Error, Result};
pub use linalg::{ComplexMatrix, DensityMatrix, PureState, C64};
pub use nv_model::{BathConfig, Experiment, SystemConfig, TimeGrid};
