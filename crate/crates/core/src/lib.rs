//! Monotonically convergent optimal control for quantum systems whose
//! coupling to the control field is a polynomial in the field amplitude.
//!
//! The crate is organised bottom-up:
//!
//! - [`rotor`]: truncated rigid-rotor basis, angular operator matrices and
//!   orientation target states.
//! - [`propagate`]: time grid, control fields, unitary propagation of pure
//!   states and density matrices, and the per-cell bracket integrals the
//!   optimisers consume.
//! - [`polyopt`]: per-time-point polynomial kernels (maximisation of the
//!   update integrands and the implicit cubic update equations).
//! - [`monotonic`]: the outer forward/backward iteration and its diagnostics.
//! - [`twocolor`]: the averaged two-color model, with dual and single
//!   envelope optimisation.
//! - [`thermal`]: Boltzmann initial states, ordered-spectrum targets and the
//!   density-matrix loop.
//! - [`spectrum`]: Fourier post-processing of optimal fields (pixelation,
//!   band-pass filtering, spectral reports).

pub mod error;
pub mod monotonic;
pub mod polyopt;
pub mod propagate;
pub mod rotor;
pub mod spectrum;
pub mod thermal;
pub mod twocolor;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;

/// 1 cm⁻¹ expressed in Hartree.
pub const CM1_TO_HARTREE: f64 = 4.556335e-6;

/// Boltzmann constant in Hartree per Kelvin.
pub const KB_HARTREE_PER_K: f64 = 3.166812e-6;
