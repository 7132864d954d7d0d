//! Spatial correlation of the scattered field: the closed-form approximation,
//! the exact quadrature oracle, multi-cluster superposition, matrix assembly,
//! and the CSV / binary matrix formats.
//!
//! The closed form for a single disk cluster is
//!
//! ```text
//! R(r1, r2) = beta / (16 pi^2 d^2 sqrt(A1 A2))
//!             * exp(j k d (sqrt(A1) - sqrt(A2)))
//!             * 2 (a+1) 2^a Gamma(a+1) * (sqrt(C) rs)^-(a+1) J_{a+1}(sqrt(C) rs)
//! ```
//!
//! valid for `rs << d`; the exact reference is the disk integral of the two
//! scalar Green's kernels (amplitude `1/(4 pi s)` each, hence the global
//! `1/(16 pi^2)`) against the reflection-gain density
//! `f(rho) = (a+1)/(pi rs^(2a+2)) (rs^2 - rho^2)^a`.

use crate::error::{Error, Result};
use crate::geometry::{
    factor_a_in_frame, factor_c_in_frame, orthonormal_frame, ArrayGeometry, ScattererCluster,
    Vec3, Wave,
};
use crate::linalg;
use crate::quad::radial_rule;
use crate::special::{gamma, scaled_bessel};
use crate::{C64, CMat};
use faer::c64;
use rayon::prelude::*;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

/// Lemma-level validity guard: the closed form assumes `rs << d`; above this
/// ratio a warning is logged (the value is still computed).
pub const ANALYTIC_VALIDITY_RATIO: f64 = 0.1;

const FORMAT_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Kernel and matrix types
// ---------------------------------------------------------------------------

/// Multi-cluster scattering scene paired with the carrier wave.
#[derive(Debug, Clone)]
pub struct CorrelationKernel {
    clusters: Vec<ScattererCluster>,
    wave: Wave,
}

impl CorrelationKernel {
    /// At least one cluster is required. Logs a warning for clusters outside
    /// the closed form's `rs << d` regime rather than rejecting them.
    pub fn new(clusters: Vec<ScattererCluster>, wave: Wave) -> Result<Self> {
        if clusters.is_empty() {
            return Err(Error::invalid("correlation kernel needs at least one cluster"));
        }
        for (i, c) in clusters.iter().enumerate() {
            if c.radius() / c.distance() > ANALYTIC_VALIDITY_RATIO {
                log::warn!(
                    "cluster {i}: rs/d = {:.3} exceeds {ANALYTIC_VALIDITY_RATIO}; the \
                     closed-form correlation degrades outside rs << d",
                    c.radius() / c.distance()
                );
            }
        }
        Ok(Self { clusters, wave })
    }

    pub fn clusters(&self) -> &[ScattererCluster] {
        &self.clusters
    }

    pub fn wave(&self) -> Wave {
        self.wave
    }
}

/// Where a correlation matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Analytic,
    Oracle,
    Imported,
    Reconstructed,
}

/// Hermitian PSD correlation matrix over the array elements.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    mat: CMat,
    provenance: Provenance,
}

impl CorrelationMatrix {
    /// Wraps a square matrix; Hermitian symmetry is the caller's contract and
    /// is checked (cheaply) here. PSD-ness is checked by [`Self::validate_psd`].
    pub fn from_matrix(mat: CMat, provenance: Provenance) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::DimMismatch { left: mat.nrows(), right: mat.ncols() });
        }
        let m = Self { mat, provenance };
        m.validate_hermitian()?;
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn entry(&self, i: usize, j: usize) -> C64 {
        self.mat[(i, j)]
    }

    pub fn as_mat(&self) -> &CMat {
        &self.mat
    }

    pub fn trace(&self) -> f64 {
        linalg::trace_re(&self.mat)
    }

    pub fn frobenius_norm(&self) -> f64 {
        linalg::frobenius_norm(&self.mat)
    }

    /// Stable content fingerprint (dims + entry bits).
    pub fn content_hash(&self) -> u64 {
        linalg::content_hash(&self.mat)
    }

    /// Returns a copy rescaled so that `tr(R) = target_trace`.
    pub fn scaled_to_trace(&self, target_trace: f64) -> Result<Self> {
        let tr = self.trace();
        if !(tr > 0.0) {
            return Err(Error::invalid(format!("cannot rescale: trace = {tr}")));
        }
        let s = c64::new(target_trace / tr, 0.0);
        let mat = CMat::from_fn(self.dim(), self.dim(), |i, j| self.mat[(i, j)] * s);
        Ok(Self { mat, provenance: self.provenance })
    }

    /// Hermitian symmetry and real nonnegative diagonal, relative 1e-10.
    pub fn validate_hermitian(&self) -> Result<()> {
        let n = self.dim();
        let scale = linalg::frobenius_norm(&self.mat).max(1e-300);
        let mut asym = 0.0f64;
        for i in 0..n {
            let d = self.mat[(i, i)];
            if d.im.abs() > 1e-10 * scale || d.re < -1e-10 * scale {
                return Err(Error::invalid(format!(
                    "diagonal entry {i} not real nonnegative: {d}"
                )));
            }
            for j in 0..i {
                let gap = (self.mat[(i, j)] - self.mat[(j, i)].conj()).norm_sqr();
                asym += 2.0 * gap;
            }
        }
        if asym.sqrt() > 1e-10 * scale {
            return Err(Error::invalid(format!(
                "matrix not Hermitian: relative asymmetry {:.3e}",
                asym.sqrt() / scale
            )));
        }
        Ok(())
    }

    /// PSD up to the numerical floor `lambda_min >= -1e-8 lambda_max`.
    pub fn validate_psd(&self) -> Result<()> {
        let (vals, _) = linalg::hermitian_eigen(&self.mat)?;
        let max = vals.first().copied().unwrap_or(0.0);
        let min = vals.last().copied().unwrap_or(0.0);
        if min < -1e-8 * max.max(0.0) {
            return Err(Error::Indefinite(format!(
                "lambda_min = {min:.3e} below -1e-8 * lambda_max = {:.3e}",
                -1e-8 * max
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Pointwise correlation
// ---------------------------------------------------------------------------

/// Closed-form single-cluster correlation (the weak near-field approximation).
pub fn corr_analytic(r1: Vec3, r2: Vec3, cluster: &ScattererCluster, wave: Wave) -> Result<C64> {
    let (mu1, mu2) = orthonormal_frame(cluster.normal())?;
    corr_analytic_in_frame(r1, r2, cluster, wave, mu1, mu2)
}

fn corr_analytic_in_frame(
    r1: Vec3,
    r2: Vec3,
    cluster: &ScattererCluster,
    wave: Wave,
    mu1: Vec3,
    mu2: Vec3,
) -> Result<C64> {
    let d = cluster.distance();
    let a1 = factor_a_in_frame(r1, cluster, mu1, mu2)?;
    let a2 = factor_a_in_frame(r2, cluster, mu1, mu2)?;
    let c = factor_c_in_frame(r1, r2, cluster, wave, mu1, mu2)?;
    let conc = cluster.concentration();
    let z = c.sqrt() * cluster.radius();
    let bracket =
        2.0 * (conc + 1.0) * 2f64.powf(conc) * gamma(conc + 1.0)? * scaled_bessel(conc + 1.0, z)?;
    let amp = cluster.power()
        / (16.0 * std::f64::consts::PI.powi(2) * d * d * (a1 * a2).sqrt());
    let phase = wave.wavenumber() * d * (a1.sqrt() - a2.sqrt());
    Ok(C64::from_polar(amp, phase) * bracket)
}

/// Exact correlation by adaptive quadrature of the disk integral.
///
/// The integrand's two Green phases nearly cancel, so the rule starts small
/// and doubles both directions until the Richardson gap between levels drops
/// below `tol` relative to `max(|I|, amplitude envelope)`; the envelope keeps
/// the criterion meaningful near zeros of the correlation.
pub fn corr_oracle(
    r1: Vec3,
    r2: Vec3,
    cluster: &ScattererCluster,
    wave: Wave,
    tol: f64,
) -> Result<C64> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("quadrature tolerance must be > 0, got {tol}")));
    }
    let (mu1, mu2) = orthonormal_frame(cluster.normal())?;
    // envelope = |R| upper scale: beta / (16 pi^2 d^2 sqrt(A1 A2))
    let a1 = factor_a_in_frame(r1, cluster, mu1, mu2)?;
    let a2 = factor_a_in_frame(r2, cluster, mu1, mu2)?;
    let d = cluster.distance();
    let envelope = cluster.power()
        / (16.0 * std::f64::consts::PI.powi(2) * d * d * (a1 * a2).sqrt());

    let k = wave.wavenumber();
    let rs = cluster.radius();
    let conc = cluster.concentration();
    let center = cluster.center();
    let density_norm = cluster.power() * (conc + 1.0)
        / (std::f64::consts::PI * rs.powf(2.0 * conc + 2.0))
        / (16.0 * std::f64::consts::PI.powi(2));

    let evaluate = |n_r: usize, n_t: usize| -> Result<C64> {
        let radial = radial_rule(n_r, conc, rs)?;
        let dtheta = 2.0 * std::f64::consts::PI / n_t as f64;
        let mut total = C64::new(0.0, 0.0);
        for jt in 0..n_t {
            let theta = dtheta * jt as f64;
            let (s, co) = theta.sin_cos();
            let dir = mu1 * co + mu2 * s;
            let mut ring = C64::new(0.0, 0.0);
            for &(rho, w) in radial.iter() {
                let p = center + dir * rho;
                let s1 = (r1 - p).norm();
                let s2 = (r2 - p).norm();
                ring += C64::from_polar(w / (s1 * s2), k * (s1 - s2));
            }
            total += ring;
        }
        Ok(total * (dtheta * density_norm))
    };

    let mut prev: Option<C64> = None;
    let mut achieved = f64::INFINITY;
    let (mut n_r, mut n_t) = (16usize, 32usize);
    for _ in 0..7 {
        let cur = evaluate(n_r, n_t)?;
        if let Some(p) = prev {
            achieved = (cur - p).norm() / cur.norm().max(envelope);
            if achieved <= tol {
                return Ok(cur);
            }
        }
        prev = Some(cur);
        n_r *= 2;
        n_t *= 2;
    }
    Err(Error::QuadratureNotConverged { achieved, requested: tol })
}

/// Multi-cluster correlation: superposition of the closed form over clusters.
pub fn corr_multi(r1: Vec3, r2: Vec3, kernel: &CorrelationKernel) -> Result<C64> {
    let mut acc = C64::new(0.0, 0.0);
    for cluster in kernel.clusters() {
        acc += corr_analytic(r1, r2, cluster, kernel.wave())?;
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// Matrix assembly
// ---------------------------------------------------------------------------

/// Which correlation path fills the matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AssemblyMode {
    Analytic,
    Oracle { tol: f64 },
}

/// Assembles `R[i, j] = R(r_i, r_j)` over the array elements. Only the upper
/// triangle is computed; the mirror conjugate fills the rest, so the result is
/// Hermitian by construction with an exactly real diagonal.
pub fn assemble_matrix(
    kernel: &CorrelationKernel,
    array: &ArrayGeometry,
    mode: AssemblyMode,
) -> Result<CorrelationMatrix> {
    let n = array.len();
    let positions = array.positions();
    let wave = kernel.wave();

    let entry = |i: usize, j: usize| -> Result<C64> {
        match mode {
            AssemblyMode::Analytic => corr_multi(positions[i], positions[j], kernel),
            AssemblyMode::Oracle { tol } => {
                let mut acc = C64::new(0.0, 0.0);
                for cluster in kernel.clusters() {
                    acc += corr_oracle(positions[i], positions[j], cluster, wave, tol)?;
                }
                Ok(acc)
            }
        }
    };

    // rows of the upper triangle are independent
    let rows: Vec<Result<Vec<C64>>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| entry(i, j)).collect())
        .collect();

    let mut mat = CMat::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        let row = row?;
        for (off, v) in row.into_iter().enumerate() {
            let j = i + off;
            if i == j {
                mat[(i, i)] = c64::new(v.re, 0.0);
            } else {
                mat[(i, j)] = v;
                mat[(j, i)] = v.conj();
            }
        }
    }
    let provenance = match mode {
        AssemblyMode::Analytic => Provenance::Analytic,
        AssemblyMode::Oracle { .. } => Provenance::Oracle,
    };
    CorrelationMatrix::from_matrix(mat, provenance)
}

/// Squared relative Frobenius error `||Ra - Rb||_F^2 / ||Rb||_F^2`
/// (`Rb` is the reference).
pub fn relative_error(ra: &CorrelationMatrix, rb: &CorrelationMatrix) -> Result<f64> {
    if ra.dim() != rb.dim() {
        return Err(Error::DimMismatch { left: ra.dim(), right: rb.dim() });
    }
    let diff = ra.as_mat() - rb.as_mat();
    let den = rb.frobenius_norm();
    if den == 0.0 {
        return Err(Error::invalid("reference matrix is zero"));
    }
    Ok((linalg::frobenius_norm(&diff) / den).powi(2))
}

// ---------------------------------------------------------------------------
// Matrix file formats
// ---------------------------------------------------------------------------

impl CorrelationMatrix {
    /// CSV: `format_version` line, `dim` line, `provenance` line, then
    /// `re,im` per entry, row-major. Floats use the shortest round-trip
    /// representation, so write/parse cycles are bit exact.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "format_version,{FORMAT_VERSION}")?;
        writeln!(w, "dim,{}", self.dim())?;
        writeln!(w, "provenance,{}", provenance_tag(self.provenance))?;
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                let v = self.mat[(i, j)];
                writeln!(w, "{},{}", v.re, v.im)?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let mut header = |name: &str| -> Result<String> {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("missing {name} header")))??;
            let (key, value) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("malformed {name} header: {line}")))?;
            if key != name {
                return Err(Error::Parse(format!("expected {name} header, got {key}")));
            }
            Ok(value.to_string())
        };
        let version: u32 = header("format_version")?
            .parse()
            .map_err(|e| Error::Parse(format!("bad format_version: {e}")))?;
        if version != FORMAT_VERSION {
            return Err(Error::Parse(format!("unsupported format_version {version}")));
        }
        let dim: usize = header("dim")?
            .parse()
            .map_err(|e| Error::Parse(format!("bad dim: {e}")))?;
        let provenance = parse_provenance(&header("provenance")?)?;

        let mut mat = CMat::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..dim {
                let line = lines
                    .next()
                    .ok_or_else(|| Error::Parse(format!("truncated at entry ({i},{j})")))??;
                let (re, im) = line
                    .split_once(',')
                    .ok_or_else(|| Error::Parse(format!("malformed entry: {line}")))?;
                mat[(i, j)] = c64::new(
                    re.trim().parse().map_err(|e| Error::Parse(format!("bad float: {e}")))?,
                    im.trim().parse().map_err(|e| Error::Parse(format!("bad float: {e}")))?,
                );
            }
        }
        Self::from_matrix(mat, provenance)
    }

    /// Raw binary layout: little-endian u64 dim, then `2 dim^2` f64 values
    /// row-major with real/imag interleaved.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.dim() as u64).to_le_bytes())?;
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                let v = self.mat[(i, j)];
                w.write_all(&v.re.to_le_bytes())?;
                w.write_all(&v.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut buf8 = [0u8; 8];
        r.read_exact(&mut buf8)?;
        let dim = u64::from_le_bytes(buf8) as usize;
        if dim == 0 || dim > 1 << 20 {
            return Err(Error::Parse(format!("implausible matrix dim {dim}")));
        }
        let mut mat = CMat::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..dim {
                r.read_exact(&mut buf8)?;
                let re = f64::from_le_bytes(buf8);
                r.read_exact(&mut buf8)?;
                let im = f64::from_le_bytes(buf8);
                mat[(i, j)] = c64::new(re, im);
            }
        }
        Self::from_matrix(mat, Provenance::Imported)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_binary(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load_binary(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_binary(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn provenance_tag(p: Provenance) -> &'static str {
    match p {
        Provenance::Analytic => "analytic",
        Provenance::Oracle => "oracle",
        Provenance::Imported => "imported",
        Provenance::Reconstructed => "reconstructed",
    }
}

fn parse_provenance(s: &str) -> Result<Provenance> {
    match s {
        "analytic" => Ok(Provenance::Analytic),
        "oracle" => Ok(Provenance::Oracle),
        "imported" => Ok(Provenance::Imported),
        "reconstructed" => Ok(Provenance::Reconstructed),
        other => Err(Error::Parse(format!("unknown provenance {other}"))),
    }
}
