//! Quadrature rules for the scattering-disk integral.
//!
//! The radial direction carries the algebraic endpoint weight
//! `(r_s^2 - rho^2)^a` (singular in slope for non-integer `a`, integrable for
//! `a > -1`). After the substitution `u = rho^2` the weight becomes the
//! Gauss-Jacobi weight `(1 - x)^a` on `[-1, 1]`, so Gauss-Jacobi nodes absorb
//! it exactly for every admissible `a`; at `a = 0` the rule is plain
//! Gauss-Legendre. The angular direction is periodic and smooth, where the
//! uniform trapezoid rule is spectrally accurate.

use crate::error::Result;
use crate::linalg::tridiag_eigen;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

type RuleCache = Mutex<HashMap<(usize, u64), Arc<Vec<(f64, f64)>>>>;

fn cache() -> &'static RuleCache {
    static CACHE: OnceLock<RuleCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Gauss-Jacobi rule with weight `(1-x)^alpha (1+x)^0` on `[-1, 1]`:
/// nodes ascending with positive weights, via Golub-Welsch on the symmetric
/// recurrence matrix.
pub(crate) fn gauss_jacobi(n: usize, alpha: f64) -> Result<Arc<Vec<(f64, f64)>>> {
    if !(alpha > -1.0) || !alpha.is_finite() {
        return Err(crate::error::Error::invalid(format!(
            "Gauss-Jacobi weight exponent must be > -1, got {alpha}"
        )));
    }
    let key = (n, alpha.to_bits());
    if let Some(hit) = cache().lock().unwrap().get(&key) {
        return Ok(hit.clone());
    }

    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n.saturating_sub(1)];
    // monic Jacobi recurrence coefficients for (alpha, beta = 0)
    diag[0] = -alpha / (alpha + 2.0);
    for k in 1..n {
        let k_f = k as f64;
        let den = 2.0 * k_f + alpha;
        diag[k] = -alpha * alpha / (den * (den + 2.0));
        off[k - 1] = 2.0 / den * (k_f * (k_f + alpha)) / ((den + 1.0) * (den - 1.0)).sqrt();
    }
    let (nodes, first_row) = tridiag_eigen(&diag, &off)?;
    // total mass of the weight: 2^(alpha+1) B(alpha+1, 1)
    let mass = 2f64.powf(alpha + 1.0) / (alpha + 1.0);
    let rule: Vec<(f64, f64)> = nodes
        .into_iter()
        .zip(first_row)
        .map(|(x, v)| (x, mass * v * v))
        .collect();

    let arc = Arc::new(rule);
    cache().lock().unwrap().insert(key, arc.clone());
    Ok(arc)
}

/// Radial rule: pairs `(rho_i, w_i)` such that
/// `sum_i w_i g(rho_i) ~= int_0^rs (rs^2 - rho^2)^a g(rho) rho drho`.
pub(crate) fn radial_rule(n: usize, a: f64, rs: f64) -> Result<Vec<(f64, f64)>> {
    let gj = gauss_jacobi(n, a)?;
    let half = rs * rs / 2.0;
    let scale = 0.5 * half.powf(a + 1.0);
    Ok(gj
        .iter()
        .map(|&(x, w)| {
            let u = half * (x + 1.0);
            (u.sqrt(), scale * w)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_exactness_on_polynomials() {
        // alpha = 0 reduces to Gauss-Legendre on [-1, 1]
        let rule = gauss_jacobi(8, 0.0).unwrap();
        let total: f64 = rule.iter().map(|&(_, w)| w).sum();
        assert!((total - 2.0).abs() < 1e-13, "mass {total}");
        // degree-9 polynomial integrated exactly by an 8-point rule
        let integral: f64 = rule.iter().map(|&(x, w)| w * (x.powi(9) + 3.0 * x.powi(4))).sum();
        assert!((integral - 6.0 / 5.0).abs() < 1e-13, "got {integral}");
    }

    #[test]
    fn jacobi_mass_matches_beta_function() {
        // int (1-x)^a dx over [-1,1] = 2^(a+1)/(a+1)
        for a in [-0.9, -0.5, 0.7, 2.0, 5.5] {
            let rule = gauss_jacobi(12, a).unwrap();
            let total: f64 = rule.iter().map(|&(_, w)| w).sum();
            let expect = 2f64.powf(a + 1.0) / (a + 1.0);
            assert!(
                ((total - expect) / expect).abs() < 1e-12,
                "a={a}: mass {total} vs {expect}"
            );
        }
    }

    #[test]
    fn jacobi_first_moment() {
        // int_{-1}^{1} (1-x)^a x dx = -a 2^(a+1) / ((a+1)(a+2))  [t = 1-x]
        for a in [-0.5, 0.0, 1.5, 4.0] {
            let rule = gauss_jacobi(16, a).unwrap();
            let got: f64 = rule.iter().map(|&(x, w)| w * x).sum();
            let expect = -a * 2f64.powf(a + 1.0) / ((a + 1.0) * (a + 2.0));
            assert!(
                (got - expect).abs() < 1e-12 * expect.abs().max(1.0),
                "a={a}: {got} vs {expect}"
            );
        }
    }

    #[test]
    fn radial_rule_total_mass_is_density_normalizer() {
        // int_0^rs (rs^2-rho^2)^a rho drho = rs^(2a+2) / (2(a+1)); the disk
        // density (a+1)/(pi rs^(2a+2)) * 2 pi times this equals one.
        for (a, rs) in [(-0.7, 0.8), (0.0, 3.5), (2.3, 1.2), (10.0, 2.0)] {
            let rule = radial_rule(24, a, rs).unwrap();
            let mass: f64 = rule.iter().map(|&(_, w)| w).sum();
            let expect = rs.powf(2.0 * a + 2.0) / (2.0 * (a + 1.0));
            assert!(
                ((mass - expect) / expect).abs() < 1e-12,
                "a={a}, rs={rs}: {mass} vs {expect}"
            );
            let density_integral = mass * (a + 1.0) / (std::f64::consts::PI * rs.powf(2.0 * a + 2.0))
                * 2.0
                * std::f64::consts::PI;
            assert!((density_integral - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn radial_rule_integrates_smooth_functions() {
        // a = 0: int_0^2 cos(rho) rho drho = cos(2) + 2 sin(2) - 1
        let rule = radial_rule(32, 0.0, 2.0).unwrap();
        let got: f64 = rule.iter().map(|&(r, w)| w * r.cos()).sum();
        let expect = 2f64.cos() + 2.0 * 2f64.sin() - 1.0;
        assert!((got - expect).abs() < 1e-13, "{got} vs {expect}");
    }
}
