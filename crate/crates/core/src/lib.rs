//! Quantized resonances of 2D-periodic nanoparticle metasurfaces coupled to
//! periodic arrays of two-level emitters.
//!
//! The pipeline runs bottom-up:
//!
//! * [`material`]: Drude / constant-index permittivities and dipole-order Mie
//!   polarizabilities of the spheres.
//! * [`lattice`]: Bravais lattice geometry and Brillouin-zone paths.
//! * [`greens`]: free-space and Ewald-summed Bloch-periodic Green tensors,
//!   coupled electric + magnetic dipole scattering, anti-Hermitian parts.
//! * [`spectral`]: reciprocal-space spectral density `J(k∥, ω)` of an emitter
//!   array and plane-wave transmission.
//! * [`fewmode`]: coupled lossy-mode models fitted to `J`.
//! * [`dynamics`]: driven linear steady states, local fields and polariton
//!   dispersions.
//! * [`pairgen`]: Holstein–Primakoff squeezing vertices, truncated-Fock
//!   Lindblad steady states and two-photon emission rates.
//!
//! Units: `ħ = 1`, energies in eV, lengths in nm, dipole moments in Debye,
//! fields in V/nm.

// `!(x > 0.0)` is used on purpose to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod fewmode;
pub mod greens;
pub mod lattice;
pub mod linalg;
pub mod material;
pub mod pairgen;
pub mod spectral;
pub mod units;

pub use error::{Error, Result};
pub use num_complex::Complex64;
