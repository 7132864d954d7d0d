//! Degrees-of-freedom diagnostics: eigenvalue-mass DoF counts, spatial
//! bandwidth bounds from the scatterer radius, the tilted-disk lower bound,
//! and spherical-cap DoF bounds for a finite receiving surface.

use crate::error::{Error, Result};
use crate::field::EigenSystem;
use crate::geometry::Wave;
use serde::Serialize;

/// Hidden constant of the `O(rs^2 / lambda^2)` sphere DoF: sphere area over
/// half-wavelength sampling cells, `4 pi rs^2 / (lambda/2)^2 = 16 pi rs^2 /
/// lambda^2`. The cap bounds are ratios of this, so acceptance-level
/// quantities (`n1/n0`, `n2/n1`) are independent of it.
pub const CAP_DOF_CONSTANT: f64 = 16.0 * std::f64::consts::PI;

/// Smallest number of leading eigenvalues whose mass reaches `threshold` of
/// the total (negative eigenvalues clamped to zero). An all-zero spectrum has
/// zero DoF.
pub fn effective_dof(eigs: &EigenSystem, threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!("threshold must lie in (0,1), got {threshold}")));
    }
    let clamped: Vec<f64> = eigs.eigenvalues().iter().map(|&l| l.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    if total <= 0.0 {
        return Ok(0);
    }
    let mut acc = 0.0;
    for (k, l) in clamped.iter().enumerate() {
        acc += l;
        if acc / total >= threshold {
            return Ok(k + 1);
        }
    }
    Ok(clamped.len())
}

/// Spatial-bandwidth bracket `(2 pi rs / lambda, sqrt(2) 2 pi rs / lambda)`
/// for a disk scatterer of radius `rs`.
pub fn bandwidth_bounds(rs: f64, wave: Wave) -> Result<(f64, f64)> {
    if !(rs > 0.0) {
        return Err(Error::invalid(format!("scatterer radius must be > 0, got {rs}")));
    }
    let lower = 2.0 * std::f64::consts::PI * rs / wave.wavelength();
    Ok((lower, std::f64::consts::SQRT_2 * lower))
}

/// Lower bound on the spatial bandwidth when the disk normal is tilted by
/// `theta` from the boresight orientation:
/// `(2 pi d / lambda) rs cos(a0 + theta) / sqrt(d^2 + rs^2 - 2 d rs sin(a0 + theta))`
/// with `sin(a0) = rs / d`. Clamped at zero once the tilt turns the disk
/// edge-on (`a0 + theta >= pi/2`).
pub fn tilted_bandwidth_lower(rs: f64, d: f64, theta: f64, wave: Wave) -> Result<f64> {
    if !(rs > 0.0) || !(d > 0.0) {
        return Err(Error::invalid("tilted_bandwidth_lower requires positive rs and d"));
    }
    if rs >= d {
        return Err(Error::invalid(format!(
            "tilted bound undefined for rs = {rs} >= d = {d} (sin(a0) > 1)"
        )));
    }
    if !(0.0..std::f64::consts::FRAC_PI_2).contains(&theta) {
        return Err(Error::invalid(format!("theta must lie in [0, pi/2), got {theta}")));
    }
    let a0 = (rs / d).asin();
    let ang = a0 + theta;
    let num = rs * ang.cos();
    let den = (d * d + rs * rs - 2.0 * d * rs * ang.sin()).sqrt();
    let bound = 2.0 * std::f64::consts::PI * d / wave.wavelength() * num / den;
    Ok(bound.max(0.0))
}

/// Spherical-cap DoF bounds `(n0, n1, n2)` with the default sphere constant;
/// `n2 <= N_receiver <= n1 <= n0`.
pub fn cap_dof_bounds(rs: f64, rm: f64, d: f64, wave: Wave) -> Result<(f64, f64, f64)> {
    cap_dof_bounds_with_constant(rs, rm, d, wave, CAP_DOF_CONSTANT)
}

/// Same with an explicit sphere-DoF constant `c0` (`n0 = c0 rs^2 / lambda^2`).
///
/// `n1` scales `n0` by the cap-area fraction of the sphere through the
/// circumscribed circle of the receiving square, radius `sqrt(d^2 + rm^2)`;
/// `n2` uses the inscribed circle, sphere radius `sqrt(2 d^2 + rm^2)/sqrt(2)`.
pub fn cap_dof_bounds_with_constant(
    rs: f64,
    rm: f64,
    d: f64,
    wave: Wave,
    c0: f64,
) -> Result<(f64, f64, f64)> {
    if !(rs > 0.0) || !(rm > 0.0) || !(d > 0.0) || !(c0 > 0.0) {
        return Err(Error::invalid("cap_dof_bounds requires positive rs, rm, d, c0"));
    }
    let lambda = wave.wavelength();
    let n0 = c0 * rs * rs / (lambda * lambda);
    // cap heights written as rm^2 / (s + d) so d >> rm does not cancel
    let s1 = (d * d + rm * rm).sqrt();
    let n1 = n0 * rm * rm / ((s1 + d) * 2.0 * s1);
    let s2 = (2.0 * d * d + rm * rm).sqrt();
    let n2 = n0 * rm * rm / ((s2 + std::f64::consts::SQRT_2 * d) * 2.0 * s2);
    Ok((n0, n1, n2))
}

/// Scalar DoF summary for one cluster/array configuration.
#[derive(Debug, Clone, Serialize)]
pub struct DofReport {
    pub effective_dof: usize,
    pub threshold: f64,
    /// Cumulative normalized eigenvalue mass, nondecreasing to 1.
    pub eigen_fractions: Vec<f64>,
    pub bandwidth_lower: f64,
    pub bandwidth_upper: f64,
    pub n0: f64,
    pub n1: f64,
    pub n2: f64,
}

impl DofReport {
    pub fn build(
        eigs: &EigenSystem,
        threshold: f64,
        rs: f64,
        rm: f64,
        d: f64,
        wave: Wave,
    ) -> Result<Self> {
        let (bandwidth_lower, bandwidth_upper) = bandwidth_bounds(rs, wave)?;
        let (n0, n1, n2) = cap_dof_bounds(rs, rm, d, wave)?;
        Ok(Self {
            effective_dof: effective_dof(eigs, threshold)?,
            threshold,
            eigen_fractions: eigs.cumulative_fractions(),
            bandwidth_lower,
            bandwidth_upper,
            n0,
            n1,
            n2,
        })
    }
}
