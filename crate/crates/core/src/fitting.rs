//! Quasi-Newton fitting of the analytical cluster model to a target
//! correlation matrix (imported, ray-cluster-synthesized, or self-generated).
//!
//! The loss is the squared relative Frobenius gap between the model matrix
//! and the target. The optimizer is the rank-update inverse-Hessian recursion
//!
//! ```text
//! x_{k+1} = x_k - alpha_k H_k grad f
//! q_k     = grad f_{k+1} - grad f_k
//! V_k     = I - q_k s_k^T / (q_k^T s_k)        s_k = x_{k+1} - x_k
//! H_{k+1} = V_k H_k V_k^T + s_k s_k^T / (q_k^T s_k)
//! ```
//!
//! with Armijo backtracking for `alpha_k`, central-difference gradients, and
//! componentwise bound projection after each trial step. Updates with
//! non-positive curvature `q^T s` are skipped (counted on the trace).

use crate::correlation::{
    assemble_matrix, relative_error, AssemblyMode, CorrelationKernel, CorrelationMatrix,
    Provenance,
};
use crate::error::{Error, Result};
use crate::estimators::NfsConfig;
use crate::geometry::{ArrayGeometry, ScattererCluster, Vec3, Wave};
use crate::wavenumber::{detect_peaks, expected_spectrum};
use crate::CMat;
use faer::{c64, Mat};
use rayon::prelude::*;
use std::io::{BufRead, BufReader, Read, Write};

/// Parameters per cluster in the flattened vector:
/// `[distance, center_az, center_el, normal_az, normal_el, radius,
/// concentration, power]`.
pub const PARAMS_PER_CLUSTER: usize = 8;

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

// ---------------------------------------------------------------------------
// Parameter vector <-> clusters
// ---------------------------------------------------------------------------

fn unit_from_angles(az: f64, el: f64) -> Vec3 {
    Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
}

/// Flattens clusters into the optimizer's parameter layout.
pub fn encode(clusters: &[ScattererCluster]) -> Vec<f64> {
    let mut x = Vec::with_capacity(clusters.len() * PARAMS_PER_CLUSTER);
    for c in clusters {
        let d = c.distance();
        let ctr = c.center();
        let n = c.normal();
        x.push(d);
        x.push(ctr.y.atan2(ctr.x));
        x.push((ctr.z / d).clamp(-1.0, 1.0).asin());
        x.push(n.y.atan2(n.x));
        x.push(n.z.clamp(-1.0, 1.0).asin());
        x.push(c.radius());
        x.push(c.concentration());
        x.push(c.power());
    }
    x
}

/// Rebuilds clusters from the flattened layout; fails on an invalid length or
/// parameters outside the model's domain.
pub fn decode(x: &[f64], n_clusters: usize) -> Result<Vec<ScattererCluster>> {
    if x.len() != n_clusters * PARAMS_PER_CLUSTER {
        return Err(Error::DimMismatch {
            left: x.len(),
            right: n_clusters * PARAMS_PER_CLUSTER,
        });
    }
    x.chunks_exact(PARAMS_PER_CLUSTER)
        .map(|p| {
            let [d, az, el, naz, nel, radius, conc, power] = *p else { unreachable!() };
            ScattererCluster::new(unit_from_angles(az, el) * d, unit_from_angles(naz, nel), radius, conc, power)
        })
        .collect()
}

/// Componentwise box bounds on the parameter vector.
#[derive(Debug, Clone)]
pub struct FitBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl FitBounds {
    /// Wide physically-sensible defaults repeated per cluster.
    pub fn defaults(n_clusters: usize) -> Self {
        let pi = std::f64::consts::PI;
        let lo = [0.5, -pi, -0.499 * pi, -2.0 * pi, -0.5 * pi, 0.01, -0.95, 0.0];
        let hi = [1e5, pi, 0.499 * pi, 2.0 * pi, 0.5 * pi, 100.0, 50.0, 1e9];
        Self {
            lower: lo.iter().copied().cycle().take(n_clusters * PARAMS_PER_CLUSTER).collect(),
            upper: hi.iter().copied().cycle().take(n_clusters * PARAMS_PER_CLUSTER).collect(),
        }
    }

    pub fn project(&self, x: &mut [f64]) {
        for ((v, &lo), &hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(lo, hi);
        }
    }
}

/// Fitting task: target matrix, the array it is sampled on, and the model
/// order (number of clusters).
#[derive(Debug, Clone)]
pub struct FitProblem {
    pub target: CorrelationMatrix,
    pub array: ArrayGeometry,
    pub wave: Wave,
    pub n_clusters: usize,
    pub bounds: FitBounds,
}

impl FitProblem {
    pub fn new(
        target: CorrelationMatrix,
        array: ArrayGeometry,
        wave: Wave,
        n_clusters: usize,
    ) -> Result<Self> {
        if n_clusters == 0 {
            return Err(Error::invalid("fit needs at least one model cluster"));
        }
        if target.dim() != array.len() {
            return Err(Error::DimMismatch { left: target.dim(), right: array.len() });
        }
        let bounds = FitBounds::defaults(n_clusters);
        Ok(Self { target, array, wave, n_clusters, bounds })
    }

    pub fn dim(&self) -> usize {
        self.n_clusters * PARAMS_PER_CLUSTER
    }
}

/// Squared relative Frobenius loss of the decoded model against the target.
pub fn fit_loss(x: &[f64], problem: &FitProblem) -> Result<f64> {
    let clusters = decode(x, problem.n_clusters)?;
    if clusters.iter().all(|c| c.power() == 0.0) {
        // the model matrix is identically zero
        return Ok(1.0);
    }
    let kernel = CorrelationKernel::new(clusters, problem.wave)?;
    let model = assemble_matrix(&kernel, &problem.array, AssemblyMode::Analytic)?;
    relative_error(&model, &problem.target)
}

// ---------------------------------------------------------------------------
// Quasi-Newton driver
// ---------------------------------------------------------------------------

/// One accepted iterate of the fit.
#[derive(Debug, Clone)]
pub struct FitIterate {
    pub x: Vec<f64>,
    pub loss: f64,
    pub grad_norm: f64,
    pub step: f64,
}

/// Optimization trajectory; `iterates[0]` is the initial point and the
/// accepted-step losses decrease strictly.
#[derive(Debug, Clone)]
pub struct FitTrace {
    pub iterates: Vec<FitIterate>,
    pub converged: bool,
    /// Rank updates skipped for non-positive curvature `q^T s`.
    pub curvature_skips: usize,
}

impl FitTrace {
    pub fn final_loss(&self) -> f64 {
        self.iterates.last().map(|it| it.loss).unwrap_or(f64::NAN)
    }

    /// CSV export: `iter,loss,grad_norm,step`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iter,loss,grad_norm,step")?;
        for (k, it) in self.iterates.iter().enumerate() {
            writeln!(w, "{k},{},{},{}", it.loss, it.grad_norm, it.step)?;
        }
        Ok(())
    }
}

/// Central finite-difference gradient with per-component relative step
/// `1e-5 (1 + |x_i|)`; the `2 dim` objective evaluations run in parallel.
/// Probes are clamped to the bounds and the actual probe gap divides the
/// difference.
fn fd_gradient<F>(objective: &F, x: &[f64], bounds: &FitBounds) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let n = x.len();
    let evals: Vec<Result<f64>> = (0..2 * n)
        .into_par_iter()
        .map(|idx| {
            let i = idx / 2;
            let sign = if idx % 2 == 0 { 1.0 } else { -1.0 };
            let h = 1e-5 * (1.0 + x[i].abs());
            let mut xs = x.to_vec();
            xs[i] = (xs[i] + sign * h).clamp(bounds.lower[i], bounds.upper[i]);
            objective(&xs)
        })
        .collect();
    let mut g = vec![0.0; n];
    for i in 0..n {
        let fp = evals[2 * i].as_ref().map_err(clone_err)?;
        let fm = evals[2 * i + 1].as_ref().map_err(clone_err)?;
        let h = 1e-5 * (1.0 + x[i].abs());
        let hp = (x[i] + h).clamp(bounds.lower[i], bounds.upper[i]) - x[i];
        let hm = x[i] - (x[i] - h).clamp(bounds.lower[i], bounds.upper[i]);
        let width = hp + hm;
        g[i] = if width > 0.0 { (fp - fm) / width } else { 0.0 };
    }
    Ok(g)
}

fn clone_err(e: &Error) -> Error {
    Error::Numerical(format!("gradient evaluation failed: {e}"))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Generic driver of the rank-update quasi-Newton iteration with Armijo
/// backtracking and bound projection; stops when the objective or gradient
/// norm drops below `tol`, the line search stalls, or after `max_iter`
/// accepted steps.
pub fn minimize<F>(
    objective: F,
    x0: &[f64],
    bounds: &FitBounds,
    max_iter: usize,
    tol: f64,
) -> Result<(Vec<f64>, FitTrace)>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let n = x0.len();
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("initial parameter vector must be finite"));
    }
    if bounds.lower.len() != n || bounds.upper.len() != n {
        return Err(Error::DimMismatch { left: bounds.lower.len(), right: n });
    }
    let mut x = x0.to_vec();
    bounds.project(&mut x);

    let mut fx = objective(&x)?;
    let mut g = fd_gradient(&objective, &x, bounds)?;
    let mut h = Mat::<f64>::identity(n, n);
    let mut trace = FitTrace {
        iterates: vec![FitIterate { x: x.clone(), loss: fx, grad_norm: norm(&g), step: 0.0 }],
        converged: fx <= tol,
        curvature_skips: 0,
    };
    if trace.converged {
        return Ok((x, trace));
    }

    for _ in 0..max_iter {
        // search direction; fall back to steepest descent if H lost definiteness
        let mut p: Vec<f64> =
            (0..n).map(|i| -(0..n).map(|j| h[(i, j)] * g[j]).sum::<f64>()).collect();
        if dot(&g, &p) >= 0.0 {
            h = Mat::identity(n, n);
            p = g.iter().map(|v| -v).collect();
        }

        let mut alpha = 1.0;
        let mut accepted: Option<(Vec<f64>, f64)> = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut xn: Vec<f64> = x.iter().zip(&p).map(|(xi, pi)| xi + alpha * pi).collect();
            bounds.project(&mut xn);
            let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            if norm(&s) == 0.0 {
                alpha *= 0.5;
                continue;
            }
            let fn_ = objective(&xn)?;
            let slope = dot(&g, &s);
            let armijo = if slope < 0.0 { fx + ARMIJO_C1 * slope } else { fx };
            if fn_ < armijo {
                accepted = Some((xn, fn_));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fn_)) = accepted else {
            break; // line search stalled: local flatness at this scale
        };

        let gn = fd_gradient(&objective, &xn, bounds)?;
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let q: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let den = dot(&q, &s);
        if den > 1e-12 * norm(&q) * norm(&s) {
            // V = I - q s^T / den;  H <- V H V^T + s s^T / den
            let vmat = Mat::<f64>::from_fn(n, n, |i, j| {
                (if i == j { 1.0 } else { 0.0 }) - q[i] * s[j] / den
            });
            let mut hn = &vmat * &h * vmat.transpose();
            for i in 0..n {
                for j in 0..n {
                    hn[(i, j)] += s[i] * s[j] / den;
                }
            }
            h = hn;
        } else {
            trace.curvature_skips += 1;
        }

        x = xn;
        fx = fn_;
        g = gn;
        trace.iterates.push(FitIterate {
            x: x.clone(),
            loss: fx,
            grad_norm: norm(&g),
            step: alpha,
        });
        if fx <= tol || norm(&g) <= tol {
            trace.converged = true;
            break;
        }
    }
    Ok((x, trace))
}

/// Minimizes the fit loss from `x0` over the problem's bounds.
pub fn quasi_newton_fit(
    problem: &FitProblem,
    x0: &[f64],
    max_iter: usize,
    tol: f64,
) -> Result<(Vec<f64>, FitTrace)> {
    if x0.len() != problem.dim() {
        return Err(Error::DimMismatch { left: x0.len(), right: problem.dim() });
    }
    minimize(|x| fit_loss(x, problem), x0, &problem.bounds, max_iter, tol)
}

// ---------------------------------------------------------------------------
// Ray-cluster targets
// ---------------------------------------------------------------------------

/// One far-field ray: power plus arrival angles (radians).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayCluster {
    pub power: f64,
    pub azimuth: f64,
    pub elevation: f64,
}

/// Stationary ray-cluster correlation target:
/// `R(r1, r2) = sum_rays power * exp(-j k u_ray . (r1 - r2))` -- the
/// far-field limit each ray induces. Always Hermitian PSD (a nonnegative sum
/// of rank-one steering kernels).
pub fn ray_cluster_target(
    rays: &[RayCluster],
    array: &ArrayGeometry,
    wave: Wave,
) -> Result<CorrelationMatrix> {
    if rays.is_empty() {
        return Err(Error::invalid("ray table must be nonempty"));
    }
    if rays.iter().any(|r| !(r.power >= 0.0)) {
        return Err(Error::invalid("ray powers must be nonnegative"));
    }
    let positions = array.positions();
    let n = positions.len();
    let k0 = wave.wavenumber();
    let dirs: Vec<Vec3> = rays.iter().map(|r| unit_from_angles(r.azimuth, r.elevation)).collect();
    let mut mat = CMat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let delta = positions[i] - positions[j];
            let mut acc = c64::new(0.0, 0.0);
            for (ray, u) in rays.iter().zip(&dirs) {
                acc += c64::from_polar(ray.power, -k0 * u.dot(delta));
            }
            if i == j {
                mat[(i, i)] = c64::new(acc.re, 0.0);
            } else {
                mat[(i, j)] = acc;
                mat[(j, i)] = acc.conj();
            }
        }
    }
    CorrelationMatrix::from_matrix(mat, Provenance::Imported)
}

/// Reads a ray table CSV with header `power,azimuth_deg,elevation_deg`.
pub fn read_ray_table<R: Read>(r: R) -> Result<Vec<RayCluster>> {
    let mut lines = BufReader::new(r).lines();
    let head = lines.next().ok_or_else(|| Error::Parse("empty ray table".into()))??;
    if head.trim() != "power,azimuth_deg,elevation_deg" {
        return Err(Error::Parse(format!(
            "expected header power,azimuth_deg,elevation_deg, got {head}"
        )));
    }
    let mut rays = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::Parse(format!("malformed ray row: {line}")));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse().map_err(|e| Error::Parse(format!("bad number in ray table: {e}")))
        };
        rays.push(RayCluster {
            power: parse(parts[0])?,
            azimuth: parse(parts[1])?.to_radians(),
            elevation: parse(parts[2])?.to_radians(),
        });
    }
    if rays.is_empty() {
        return Err(Error::Parse("ray table has no rows".into()));
    }
    Ok(rays)
}

/// Writes the ray table CSV (angles in degrees).
pub fn write_ray_table<W: Write>(mut w: W, rays: &[RayCluster]) -> Result<()> {
    writeln!(w, "power,azimuth_deg,elevation_deg")?;
    for r in rays {
        writeln!(w, "{},{},{}", r.power, r.azimuth.to_degrees(), r.elevation.to_degrees())?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Initial guesses
// ---------------------------------------------------------------------------

/// Initial parameter vector from the target's wavenumber peaks: each of the
/// `n_clusters` strongest peaks seeds one cluster at the configured distance
/// and radius, facing the array, with powers split by peak strength and
/// scaled so the model trace matches the target's.
pub fn initial_guess_from_spectrum(
    problem: &FitProblem,
    defaults: &NfsConfig,
) -> Result<Vec<f64>> {
    let grid = expected_spectrum(&problem.target, &problem.array, problem.wave)?;
    let mut peaks = detect_peaks(&grid, 0.0);
    if peaks.is_empty() {
        // flat spectrum: seed boresight
        peaks.push(crate::wavenumber::Peak { ky: 0.0, kz: 0.0, value: 1.0, row: 0, col: 0 });
    }
    let mut clusters = Vec::with_capacity(problem.n_clusters);
    for k in 0..problem.n_clusters {
        let pk = peaks[k % peaks.len()];
        // repeated peaks get a slight angular offset so the optimizer can
        // separate them
        let wobble = 0.05 * (k / peaks.len()) as f64;
        let ky = (pk.ky + wobble).clamp(-0.99, 0.99);
        let kz = (pk.kz - wobble).clamp(-0.99, 0.99);
        let ux = (1.0 - ky * ky - kz * kz).max(1e-6).sqrt();
        let u = Vec3::new(ux, ky, kz).normalized()?;
        clusters.push(ScattererCluster::new(
            u * defaults.distance,
            -u,
            defaults.radius,
            defaults.concentration,
            pk.value.max(1e-12),
        )?);
    }
    // scale powers so the model trace matches the target trace
    let kernel = CorrelationKernel::new(clusters.clone(), problem.wave)?;
    let model = assemble_matrix(&kernel, &problem.array, AssemblyMode::Analytic)?;
    let scale = problem.target.trace() / model.trace().max(1e-300);
    let clusters: Result<Vec<_>> =
        clusters.iter().map(|c| c.with_power(c.power() * scale)).collect();
    Ok(encode(&clusters?))
}
