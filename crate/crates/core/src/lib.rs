//! Near-field non-stationary random-field channel toolkit.
//!
//! Models the NLoS channel seen by a planar receiver array as a zero-mean
//! Gaussian random field whose second-order statistics come from disk-shaped
//! scatterer clusters. The crate provides:
//!
//! - the closed-form spatial correlation function of the field and an exact
//!   quadrature oracle for it ([`correlation`]),
//! - random-field synthesis via Cholesky / Karhunen-Loeve factors and the
//!   mutual-information functional ([`field`]),
//! - wavenumber-domain analysis: DFT matrices, expected and per-realization
//!   power spectra, peak detection, and the extended Rayleigh-distance
//!   classifier ([`wavenumber`]),
//! - degrees-of-freedom diagnostics: eigenvalue-mass counts, spatial-bandwidth
//!   bounds, and spherical-cap DoF bounds ([`dof`]),
//! - channel estimators: LS, near-field OMP, subspace (plain and
//!   eigenvalue-weighted), and the spectrum-driven MMSE reconstruction
//!   pipeline, plus the closed-form estimation error ([`estimators`]),
//! - a quasi-Newton fitter matching the analytical model to an arbitrary
//!   target correlation matrix ([`fitting`]).
//!
//! All physical quantities are SI (meters, radians); SNRs are linear unless a
//! name says otherwise.

pub mod correlation;
pub mod dof;
pub mod error;
pub mod estimators;
pub mod field;
pub mod fitting;
pub mod geometry;
mod linalg;
mod quad;
pub mod scene;
pub mod special;
pub mod wavenumber;

pub use error::{Error, Result};

/// Complex scalar used throughout (`num_complex::Complex<f64>`, identical to
/// `faer::c64`).
pub type C64 = num_complex::Complex<f64>;

/// Dense complex matrix type backing all linear algebra.
pub type CMat = faer::Mat<faer::c64>;
