//! Scene description: scatterer clusters, the planar receiver array, the
//! carrier wave, and the rotated-frame scalar factors `A` and `C` entering the
//! closed-form correlation function.
//!
//! The receiver is a centered `n_y x n_z` grid in the `x = 0` plane. A
//! scatterer cluster is a disk of radius `r_s` centered at `d`, perpendicular
//! to its unit normal, with a reflection-gain profile `(r_s^2 - rho^2)^a` on
//! the disk (`a -> -1` ring, `a = 0` uniform, `a -> inf` point) and total
//! power `beta`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg, Sub};

/// Tolerance under which a vector is accepted as unit length.
pub const UNIT_TOL: f64 = 1e-12;

/// Squared-norm floor below which the rotated-frame factor `A` is treated as
/// degenerate (evaluation point on the scatterer center).
const FACTOR_A_FLOOR: f64 = 1e-14;

// ---------------------------------------------------------------------------
// Vec3
// ---------------------------------------------------------------------------

/// Cartesian point or direction in meters (dimensionless when unit length).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn dot(self, rhs: Self) -> f64 {
        self.x * rhs.x + self.y * rhs.y + self.z * rhs.z
    }

    pub fn cross(self, rhs: Self) -> Self {
        Self::new(
            self.y * rhs.z - self.z * rhs.y,
            self.z * rhs.x - self.x * rhs.z,
            self.x * rhs.y - self.y * rhs.x,
        )
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Unit vector in the same direction; errors on (near-)zero input.
    pub fn normalized(self) -> Result<Self> {
        let n = self.norm();
        if n < 1e-300 || !n.is_finite() {
            return Err(Error::invalid("cannot normalize zero or non-finite vector"));
        }
        Ok(self * (1.0 / n))
    }

    pub fn is_unit(self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_TOL
    }

    pub fn as_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, rhs: Self) -> Vec3 {
        Vec3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, rhs: Self) -> Vec3 {
        Vec3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        self * -1.0
    }
}

// ---------------------------------------------------------------------------
// Wave
// ---------------------------------------------------------------------------

/// Monochromatic carrier; stores the wavelength and derives `k0 = 2 pi / lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    wavelength: f64,
}

impl Wave {
    pub fn new(wavelength: f64) -> Result<Self> {
        if !(wavelength > 0.0) || !wavelength.is_finite() {
            return Err(Error::invalid(format!(
                "wavelength must be positive and finite, got {wavelength}"
            )));
        }
        Ok(Self { wavelength })
    }

    pub fn wavelength(self) -> f64 {
        self.wavelength
    }

    /// Free-space wavenumber `k0 = 2 pi / lambda`.
    pub fn wavenumber(self) -> f64 {
        2.0 * std::f64::consts::PI / self.wavelength
    }
}

// ---------------------------------------------------------------------------
// ScattererCluster
// ---------------------------------------------------------------------------

/// One scattering disk: center `d`, unit normal, radius `r_s`, concentration
/// exponent `a > -1`, and power `beta >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScattererCluster {
    center: Vec3,
    normal: Vec3,
    radius: f64,
    concentration: f64,
    power: f64,
}

impl ScattererCluster {
    /// Validates the cluster invariants; the normal is renormalized so callers
    /// may pass any non-zero direction.
    pub fn new(
        center: Vec3,
        normal: Vec3,
        radius: f64,
        concentration: f64,
        power: f64,
    ) -> Result<Self> {
        if !(center.norm() > 0.0) {
            return Err(Error::invalid("cluster center must not sit on the array origin"));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::invalid(format!("cluster radius must be > 0, got {radius}")));
        }
        if !(concentration > -1.0) || !concentration.is_finite() {
            // (r_s^2 - rho^2)^a must stay integrable over the disk.
            return Err(Error::invalid(format!(
                "concentration must be > -1, got {concentration}"
            )));
        }
        if !(power >= 0.0) || !power.is_finite() {
            return Err(Error::invalid(format!("cluster power must be >= 0, got {power}")));
        }
        Ok(Self {
            center,
            normal: normal.normalized()?,
            radius,
            concentration,
            power,
        })
    }

    pub fn center(&self) -> Vec3 {
        self.center
    }

    pub fn normal(&self) -> Vec3 {
        self.normal
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn concentration(&self) -> f64 {
        self.concentration
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    /// Distance from the array origin to the cluster center.
    pub fn distance(&self) -> f64 {
        self.center.norm()
    }

    /// Returns a copy with a different power (used by fitters and calibrated
    /// reconstructions).
    pub fn with_power(&self, power: f64) -> Result<Self> {
        Self::new(self.center, self.normal, self.radius, self.concentration, power)
    }
}

// ---------------------------------------------------------------------------
// ArrayGeometry
// ---------------------------------------------------------------------------

/// Planar receiver grid in the `x = 0` plane, centered on the origin.
///
/// Flat index `i` in `[0, n_y * n_z)` maps to grid coordinates
/// `(i / n_z, i % n_z)`; the grid is centered so opposite corners are at
/// `+-((n_y-1)/2 * d_y, (n_z-1)/2 * d_z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    n_y: usize,
    n_z: usize,
    spacing_y: f64,
    spacing_z: f64,
}

impl ArrayGeometry {
    pub fn new(n_y: usize, n_z: usize, spacing_y: f64, spacing_z: f64) -> Result<Self> {
        if n_y == 0 || n_z == 0 {
            return Err(Error::invalid("array must have at least one element per axis"));
        }
        if !(spacing_y > 0.0) || !(spacing_z > 0.0) {
            return Err(Error::invalid("element spacings must be positive"));
        }
        Ok(Self { n_y, n_z, spacing_y, spacing_z })
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    pub fn spacing_y(&self) -> f64 {
        self.spacing_y
    }

    pub fn spacing_z(&self) -> f64 {
        self.spacing_z
    }

    /// Total number of elements `n_y * n_z`.
    pub fn len(&self) -> usize {
        self.n_y * self.n_z
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Position of flat element `i` (0-based; row-major over (y, z)).
    pub fn element_position(&self, i: usize) -> Vec3 {
        debug_assert!(i < self.len(), "element index out of range");
        let iy = (i / self.n_z) as f64 - (self.n_y as f64 - 1.0) / 2.0;
        let iz = (i % self.n_z) as f64 - (self.n_z as f64 - 1.0) / 2.0;
        Vec3::new(0.0, iy * self.spacing_y, iz * self.spacing_z)
    }

    pub fn positions(&self) -> Vec<Vec3> {
        (0..self.len()).map(|i| self.element_position(i)).collect()
    }

    /// Array radius `r_m = max_i ||r_i||` (half diagonal of the grid).
    pub fn max_radius(&self) -> f64 {
        self.element_position(0).norm()
    }
}

// ---------------------------------------------------------------------------
// Rotated frame and the A / C factors
// ---------------------------------------------------------------------------

/// Deterministic orthonormal right-handed triad `(normal, mu1, mu2)`.
///
/// `mu1` is Gram-Schmidt of the canonical axis least aligned with `normal`,
/// `mu2 = normal x mu1`. The correlation function is invariant under rotation
/// of `(mu1, mu2)` in their plane, so any deterministic completion is valid.
pub fn orthonormal_frame(normal: Vec3) -> Result<(Vec3, Vec3)> {
    let n = normal.normalized()?;
    if !normal.is_unit() {
        return Err(Error::invalid("orthonormal_frame expects a unit normal"));
    }
    let ax = [n.x.abs(), n.y.abs(), n.z.abs()];
    let k = (0..3).min_by(|&a, &b| ax[a].total_cmp(&ax[b])).unwrap();
    let e = match k {
        0 => Vec3::new(1.0, 0.0, 0.0),
        1 => Vec3::new(0.0, 1.0, 0.0),
        _ => Vec3::new(0.0, 0.0, 1.0),
    };
    let mu1 = (e - n * e.dot(n)).normalized()?;
    let mu2 = n.cross(mu1);
    Ok((mu1, mu2))
}

/// Scalar factor `A(r)` of the rotated-frame distance expansion:
/// `||d - r||^2 / d^2`, written through projections on the cluster frame.
///
/// Errors when the point sits on the cluster center (`A -> 0`) where the
/// expansion degenerates.
pub fn factor_a(r: Vec3, cluster: &ScattererCluster) -> Result<f64> {
    let d = cluster.distance();
    let (mu1, mu2) = orthonormal_frame(cluster.normal())?;
    let a = factor_a_in_frame(r, cluster, mu1, mu2)?;
    debug_assert!(d > 0.0);
    Ok(a)
}

/// `A(r)` with the frame supplied by the caller (shared across evaluations).
pub(crate) fn factor_a_in_frame(
    r: Vec3,
    cluster: &ScattererCluster,
    mu1: Vec3,
    mu2: Vec3,
) -> Result<f64> {
    let d = cluster.distance();
    let dh = cluster.center() * (1.0 / d);
    let mu = cluster.normal();
    // 1 + (r/d)^2 - 2/d * sum over the orthonormal basis of (dh.e)(r.e);
    // the (r/d)(rhat.e) products are folded together so r = 0 needs no care.
    let proj = dh.dot(mu) * r.dot(mu) + dh.dot(mu1) * r.dot(mu1) + dh.dot(mu2) * r.dot(mu2);
    let a = 1.0 + r.norm_sq() / (d * d) - 2.0 * proj / d;
    if a <= FACTOR_A_FLOOR {
        return Err(Error::DegenerateGeometry(format!(
            "A(r) = {a:.3e} at r = {:?}: point coincides with the scatterer center",
            r.as_array()
        )));
    }
    Ok(a)
}

/// Scalar factor `C >= 0` of the closed-form correlation: squared sum of the
/// in-plane projection differences between the two observation points, scaled
/// by `(2 pi / lambda)^2`. `C = 0` iff the two points see the disk center
/// under the same in-plane geometry (in particular when `r1 = r2`).
pub fn factor_c(r1: Vec3, r2: Vec3, cluster: &ScattererCluster, wave: Wave) -> Result<f64> {
    let (mu1, mu2) = orthonormal_frame(cluster.normal())?;
    factor_c_in_frame(r1, r2, cluster, wave, mu1, mu2)
}

pub(crate) fn factor_c_in_frame(
    r1: Vec3,
    r2: Vec3,
    cluster: &ScattererCluster,
    wave: Wave,
    mu1: Vec3,
    mu2: Vec3,
) -> Result<f64> {
    let d = cluster.distance();
    let dh = cluster.center() * (1.0 / d);
    let a1 = factor_a_in_frame(r1, cluster, mu1, mu2)?.sqrt();
    let a2 = factor_a_in_frame(r2, cluster, mu1, mu2)?.sqrt();
    let k = wave.wavenumber();
    let term = |e: Vec3| -> f64 {
        (dh.dot(e) - r1.dot(e) / d) / a1 - (dh.dot(e) - r2.dot(e) / d) / a2
    };
    let (t1, t2) = (term(mu1), term(mu2));
    Ok(k * k * (t1 * t1 + t2 * t2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit(v: [f64; 3]) -> Vec3 {
        Vec3::from(v).normalized().unwrap()
    }

    fn cluster(center: [f64; 3], normal: [f64; 3]) -> ScattererCluster {
        ScattererCluster::new(Vec3::from(center), Vec3::from(normal), 1.0, 0.0, 1.0).unwrap()
    }

    #[test]
    fn frame_is_orthonormal_for_axes() {
        for n in [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]] {
            let n = Vec3::from(n);
            let (m1, m2) = orthonormal_frame(n).unwrap();
            assert_abs_diff_eq!(m1.dot(n), 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(m2.dot(n), 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(m1.dot(m2), 0.0, epsilon = 1e-15);
            // right-handed: det [n m1 m2] = n . (m1 x m2) = +1
            assert_abs_diff_eq!(n.dot(m1.cross(m2)), 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn frame_gram_matrix_is_identity_for_paper_normal() {
        let n = unit([-1.0, 1.0, -1.0]);
        let (m1, m2) = orthonormal_frame(n).unwrap();
        let basis = [n, m1, m2];
        for (i, a) in basis.iter().enumerate() {
            for (j, b) in basis.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(a.dot(*b), expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn frame_rejects_zero_normal() {
        assert!(orthonormal_frame(Vec3::zero()).is_err());
    }

    #[test]
    fn factor_a_origin_is_one() {
        let c = cluster([3.0, -4.0, 12.0], [0.0, 0.0, 1.0]);
        assert_abs_diff_eq!(factor_a(Vec3::zero(), &c).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn factor_a_at_center_is_degenerate() {
        let c = cluster([10.0, 0.0, 0.0], [1.0, 0.0, 0.0]);
        let err = factor_a(c.center(), &c);
        assert!(matches!(err, Err(Error::DegenerateGeometry(_))), "{err:?}");
    }

    #[test]
    fn factor_a_equals_distance_identity() {
        // basis-expansion identity against the direct distance computation
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        for _ in 0..200 {
            let c = cluster(
                [30.0 + 20.0 * next(), 25.0 * next(), 25.0 * next()],
                [next(), next(), next() + 2.0],
            );
            let r = Vec3::new(next(), 2.0 * next(), 2.0 * next());
            let direct = (c.center() - r).norm_sq() / c.center().norm_sq();
            let a = factor_a(r, &c).unwrap();
            assert!((a - direct).abs() <= 1e-10 * direct.max(1.0), "A={a} direct={direct}");
        }
    }

    #[test]
    fn factor_c_zero_for_identical_points() {
        let c = cluster([20.0, 5.0, -3.0], [-1.0, 0.3, 0.2]);
        let w = Wave::new(0.05).unwrap();
        let r = Vec3::new(0.0, 0.3, -0.2);
        assert_abs_diff_eq!(factor_c(r, r, &c, w).unwrap(), 0.0, epsilon = 1e-18);
    }

    #[test]
    fn factor_c_symmetric_and_nonnegative() {
        let c = cluster([20.0, 5.0, -3.0], [-1.0, 0.3, 0.2]);
        let w = Wave::new(0.05).unwrap();
        let r1 = Vec3::new(0.0, 0.4, 0.1);
        let r2 = Vec3::new(0.0, -0.2, 0.3);
        let c12 = factor_c(r1, r2, &c, w).unwrap();
        let c21 = factor_c(r2, r1, &c, w).unwrap();
        assert!(c12 >= 0.0);
        assert_abs_diff_eq!(c12, c21, epsilon = 1e-12 * c12.abs().max(1.0));
    }

    #[test]
    fn factor_c_matches_independent_rederivation() {
        // mpmath re-derivation of the closed-form C at the verification
        // scenario: d = 100 [1,1,1]/sqrt(3), mu = [-1,1,-1]/sqrt(3),
        // lambda = 0.05, r1 = 0, r2 = [0, 0.025, 0].
        let s3 = 3f64.sqrt();
        let c = ScattererCluster::new(
            Vec3::new(100.0 / s3, 100.0 / s3, 100.0 / s3),
            Vec3::new(-1.0 / s3, 1.0 / s3, -1.0 / s3),
            3.5,
            0.0,
            1.0,
        )
        .unwrap();
        let w = Wave::new(0.05).unwrap();
        let got = factor_c(Vec3::zero(), Vec3::new(0.0, 0.025, 0.0), &c, w).unwrap();
        let expect = 7.31715201887597073e-5;
        assert!((got - expect).abs() <= 1e-12 * expect, "C = {got}, expected {expect}");
    }

    #[test]
    fn factor_c_invariant_under_in_plane_frame_rotation() {
        let c = cluster([40.0, 10.0, -20.0], [-0.8, 0.2, 0.4]);
        let w = Wave::new(0.1).unwrap();
        let (m1, m2) = orthonormal_frame(c.normal()).unwrap();
        let r1 = Vec3::new(0.0, 0.5, -0.1);
        let r2 = Vec3::new(0.0, -0.3, 0.4);
        let base = factor_c_in_frame(r1, r2, &c, w, m1, m2).unwrap();
        for phi in [0.3f64, 1.2, 2.9] {
            let (s, co) = phi.sin_cos();
            let q1 = m1 * co + m2 * s;
            let q2 = m1 * (-s) + m2 * co;
            let rot = factor_c_in_frame(r1, r2, &c, w, q1, q2).unwrap();
            assert!((rot - base).abs() <= 1e-10 * base.max(1.0), "phi={phi}: {rot} vs {base}");
        }
    }

    #[test]
    fn element_positions_form_centered_bijective_grid() {
        let g = ArrayGeometry::new(3, 4, 0.5, 0.25).unwrap();
        assert_eq!(g.len(), 12);
        // explicit corner checks
        assert_eq!(g.element_position(0), Vec3::new(0.0, -0.5, -0.375));
        assert_eq!(g.element_position(11), Vec3::new(0.0, 0.5, 0.375));
        // bijection between flat indices and grid points
        let mut seen = std::collections::BTreeSet::new();
        for i in 0..g.len() {
            let p = g.element_position(i);
            assert_eq!(p.x, 0.0);
            seen.insert((p.y.to_bits(), p.z.to_bits()));
        }
        assert_eq!(seen.len(), g.len());
        // the grid sums to zero (centered)
        let sum = g.positions().into_iter().fold(Vec3::zero(), |a, b| a + b);
        assert_abs_diff_eq!(sum.norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn wave_derives_wavenumber() {
        let w = Wave::new(0.05).unwrap();
        assert_abs_diff_eq!(w.wavenumber() * w.wavelength(), 2.0 * std::f64::consts::PI);
        assert!(Wave::new(0.0).is_err());
        assert!(Wave::new(-1.0).is_err());
    }

    #[test]
    fn cluster_validation() {
        let c = Vec3::new(10.0, 0.0, 0.0);
        let n = Vec3::new(1.0, 0.0, 0.0);
        assert!(ScattererCluster::new(c, n, 0.0, 0.0, 1.0).is_err());
        assert!(ScattererCluster::new(c, n, 1.0, -1.0, 1.0).is_err());
        assert!(ScattererCluster::new(c, n, 1.0, 0.0, -0.5).is_err());
        assert!(ScattererCluster::new(Vec3::zero(), n, 1.0, 0.0, 1.0).is_err());
        // normal gets renormalized
        let cl = ScattererCluster::new(c, Vec3::new(0.0, 2.0, 0.0), 1.0, 0.0, 1.0).unwrap();
        assert!(cl.normal().is_unit());
    }
}
