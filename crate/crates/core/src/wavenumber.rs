//! Wavenumber-domain analysis: the DFT matrices over the aperture, expected
//! and per-realization power spectra, peak detection, the far-field
//! (stationary) correlation limit, and the extended Rayleigh-distance
//! classifier.
//!
//! Axis convention: grid cell `(i, j)` maps to normalized direction cosines
//! `ky = (2i - (Ny-1))/(Ny-1)` and `kz = ((Nz-1) - 2j)/(Nz-1)`. The signs are
//! calibrated so that a single scatterer in direction `d_hat` produces its
//! spectral peak at `(d_hat_y, d_hat_z)`; the single-cluster peak test pins
//! this convention.

use crate::correlation::CorrelationMatrix;
use crate::error::{Error, Result};
use crate::geometry::{ArrayGeometry, ScattererCluster, Vec3, Wave};
use crate::{C64, CMat};
use faer::c64;
use std::io::Write;

// ---------------------------------------------------------------------------
// Spectrum grid
// ---------------------------------------------------------------------------

/// Nonnegative power values over the wavenumber grid with the axis maps that
/// convert cell indices to direction cosines.
#[derive(Debug, Clone)]
pub struct SpectrumGrid {
    values: Vec<f64>,
    n_y: usize,
    n_z: usize,
    ky_axis: Vec<f64>,
    kz_axis: Vec<f64>,
}

impl SpectrumGrid {
    fn new(values: Vec<f64>, n_y: usize, n_z: usize) -> Self {
        let ky_axis = (0..n_y)
            .map(|i| (2.0 * i as f64 - (n_y as f64 - 1.0)) / (n_y as f64 - 1.0))
            .collect();
        let kz_axis = (0..n_z)
            .map(|j| ((n_z as f64 - 1.0) - 2.0 * j as f64) / (n_z as f64 - 1.0))
            .collect();
        Self { values, n_y, n_z, ky_axis, kz_axis }
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_z + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Direction cosine of row `i` along the y axis.
    pub fn ky(&self, i: usize) -> f64 {
        self.ky_axis[i]
    }

    /// Direction cosine of column `j` along the z axis.
    pub fn kz(&self, j: usize) -> f64 {
        self.kz_axis[j]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn argmax(&self) -> (usize, usize) {
        let mut best = (0, 0);
        let mut best_v = f64::NEG_INFINITY;
        for i in 0..self.n_y {
            for j in 0..self.n_z {
                let v = self.value(i, j);
                if v > best_v {
                    best_v = v;
                    best = (i, j);
                }
            }
        }
        best
    }

    /// CSV export: the value matrix followed by the two axis-map vectors.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "format_version,1")?;
        writeln!(w, "ny,{}", self.n_y)?;
        writeln!(w, "nz,{}", self.n_z)?;
        for i in 0..self.n_y {
            let row: Vec<String> = (0..self.n_z).map(|j| self.value(i, j).to_string()).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        let ky: Vec<String> = self.ky_axis.iter().map(|v| v.to_string()).collect();
        writeln!(w, "ky_axis,{}", ky.join(","))?;
        let kz: Vec<String> = self.kz_axis.iter().map(|v| v.to_string()).collect();
        writeln!(w, "kz_axis,{}", kz.join(","))?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// DFT matrices and spectra
// ---------------------------------------------------------------------------

/// Aperture Fourier matrices `F1 (Ny x Ny)` and `F2 (Nz x Nz)` with entries
/// `exp(j (2 k0 / (N-1)) c_i c_j spacing)` over centered indices
/// `c_i = i - (N-1)/2`.
pub fn dft_matrices(array: &ArrayGeometry, wave: Wave) -> Result<(CMat, CMat)> {
    if array.n_y() < 2 || array.n_z() < 2 {
        return Err(Error::invalid("dft_matrices needs at least 2 elements per axis"));
    }
    let k = wave.wavenumber();
    let build = |n: usize, spacing: f64| -> CMat {
        let half = (n as f64 - 1.0) / 2.0;
        CMat::from_fn(n, n, |i, j| {
            let phase = 2.0 * k / (n as f64 - 1.0) * (i as f64 - half) * (j as f64 - half) * spacing;
            c64::from_polar(1.0, phase)
        })
    };
    Ok((build(array.n_y(), array.spacing_y()), build(array.n_z(), array.spacing_z())))
}

/// Kron factor mapping the row-major channel vector to the transformed grid:
/// row `(i, j)` holds `F1[i, p] * conj(F2[j, q])` at column `(p, q)`.
fn kron_transform(f1: &CMat, f2: &CMat) -> CMat {
    let ny = f1.nrows();
    let nz = f2.nrows();
    let dim = ny * nz;
    CMat::from_fn(dim, dim, |r, c| {
        let (i, j) = (r / nz, r % nz);
        let (p, q) = (c / nz, c % nz);
        f1[(i, p)] * f2[(j, q)].conj()
    })
}

/// Deterministic expected power spectrum `E |(F1 H F2^H)_{i,j}|^2` computed
/// from the correlation matrix (diagonal of the transformed covariance).
pub fn expected_spectrum(
    r: &CorrelationMatrix,
    array: &ArrayGeometry,
    wave: Wave,
) -> Result<SpectrumGrid> {
    let dim = array.len();
    if r.dim() != dim {
        return Err(Error::DimMismatch { left: r.dim(), right: dim });
    }
    let (f1, f2) = dft_matrices(array, wave)?;
    let k = kron_transform(&f1, &f2);
    let s = &k * r.as_mat();
    let mut values = vec![0.0f64; dim];
    for (row, v) in values.iter_mut().enumerate() {
        let mut acc = c64::new(0.0, 0.0);
        for q in 0..dim {
            acc += s[(row, q)] * k[(row, q)].conj();
        }
        *v = acc.re.max(0.0);
    }
    Ok(SpectrumGrid::new(values, array.n_y(), array.n_z()))
}

/// Per-realization power spectrum `|F1 H F2^H|^2` of a channel (or pilot)
/// vector reshaped row-major onto the grid.
pub fn sample_spectrum(h: &[C64], array: &ArrayGeometry, wave: Wave) -> Result<SpectrumGrid> {
    let (ny, nz) = (array.n_y(), array.n_z());
    if h.len() != ny * nz {
        return Err(Error::DimMismatch { left: h.len(), right: ny * nz });
    }
    let (f1, f2) = dft_matrices(array, wave)?;
    let hm = CMat::from_fn(ny, nz, |i, j| h[i * nz + j]);
    let transformed = &f1 * &hm * f2.adjoint();
    let mut values = vec![0.0f64; ny * nz];
    for i in 0..ny {
        for j in 0..nz {
            values[i * nz + j] = transformed[(i, j)].norm_sqr();
        }
    }
    Ok(SpectrumGrid::new(values, ny, nz))
}

// ---------------------------------------------------------------------------
// Peaks
// ---------------------------------------------------------------------------

/// One detected spectral peak with its grid cell and direction cosines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub ky: f64,
    pub kz: f64,
    pub value: f64,
    pub row: usize,
    pub col: usize,
}

/// Cells strictly greater than all existing 8 neighbors and greater than
/// `eta` times the grid mean, sorted by descending power (ties broken
/// row-major). Edge cells compare only against neighbors that exist.
pub fn detect_peaks(grid: &SpectrumGrid, eta: f64) -> Vec<Peak> {
    let (ny, nz) = (grid.n_y(), grid.n_z());
    let threshold = eta * grid.mean();
    let mut peaks = Vec::new();
    for i in 0..ny {
        for j in 0..nz {
            let v = grid.value(i, j);
            if !(v > threshold) {
                continue;
            }
            let mut is_peak = true;
            'outer: for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let (ni, nj) = (i as i64 + di, j as i64 + dj);
                    if ni < 0 || nj < 0 || ni >= ny as i64 || nj >= nz as i64 {
                        continue;
                    }
                    if grid.value(ni as usize, nj as usize) >= v {
                        is_peak = false;
                        break 'outer;
                    }
                }
            }
            if is_peak {
                peaks.push(Peak { ky: grid.ky(i), kz: grid.kz(j), value: v, row: i, col: j });
            }
        }
    }
    peaks.sort_by(|a, b| {
        b.value.total_cmp(&a.value).then(a.row.cmp(&b.row)).then(a.col.cmp(&b.col))
    });
    peaks
}

// ---------------------------------------------------------------------------
// Far-field limit
// ---------------------------------------------------------------------------

/// Stationary far-field correlation limit: depends on positions only through
/// their difference, `beta/(16 pi^2 d^2) exp(-j k d_hat . (r1 - r2))`.
pub fn far_field_corr(r1: Vec3, r2: Vec3, cluster: &ScattererCluster, wave: Wave) -> C64 {
    let d = cluster.distance();
    let dh = cluster.center() * (1.0 / d);
    let amp = cluster.power() / (16.0 * std::f64::consts::PI.powi(2) * d * d);
    C64::from_polar(amp, -wave.wavenumber() * dh.dot(r1 - r2))
}

// ---------------------------------------------------------------------------
// Regime classification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeClass {
    /// Scatterer size negligible and far enough: a point model suffices.
    PointScattererFar,
    /// Extended scatterer, beyond the size-extended Rayleigh distance.
    ExtendedScattererFar,
    /// Extended scatterer inside the size-extended Rayleigh distance.
    ExtendedScattererNear,
}

/// Classification plus the thresholds (meters) it was decided against.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct FieldRegime {
    pub class: RegimeClass,
    /// `lambda / 16`: scatterer radius below which a point model can apply.
    pub size_threshold: f64,
    /// `8 (rs + rm)^2 / lambda`: near/far boundary with scatterer extent.
    pub near_far_boundary: f64,
    /// `8 (rs + rm)^2 / (lambda - 16 rs)`: distance beyond which the scatterer
    /// size is negligible; `None` when `rs >= lambda/16` (never negligible).
    pub negligible_boundary: Option<f64>,
}

/// Three-way regime decision for scatterer radius `rs`, array radius `rm`,
/// and separation `d`.
///
/// The scatterer is negligible (point-scatterer-far) iff `rs <= lambda/16`
/// and `d >= 8 (rs+rm)^2 / (lambda - 16 rs)`: the phase-error budget
/// `2 pi/lambda (rs + (rs+rm)^2 / (2d)) <= pi/8` requires the distance to be
/// *at least* the boundary, and is unsatisfiable for `rs > lambda/16`.
/// Otherwise near vs far splits at `8 (rs+rm)^2 / lambda`.
pub fn classify_regime(rs: f64, rm: f64, d: f64, wave: Wave) -> Result<FieldRegime> {
    if !(rs > 0.0) || !(rm > 0.0) || !(d > 0.0) {
        return Err(Error::invalid("classify_regime requires positive rs, rm, d"));
    }
    let lambda = wave.wavelength();
    let size_threshold = lambda / 16.0;
    let near_far_boundary = 8.0 * (rs + rm).powi(2) / lambda;
    let negligible_boundary = if rs < size_threshold {
        Some(8.0 * (rs + rm).powi(2) / (lambda - 16.0 * rs))
    } else {
        None
    };
    let class = match negligible_boundary {
        Some(bound) if d >= bound => RegimeClass::PointScattererFar,
        _ if d <= near_far_boundary => RegimeClass::ExtendedScattererNear,
        _ => RegimeClass::ExtendedScattererFar,
    };
    Ok(FieldRegime { class, size_threshold, near_far_boundary, negligible_boundary })
}
