//! Random-field synthesis: drawing channel realizations from a correlation
//! matrix (Cholesky or Karhunen-Loeve factor), the eigen-expansion itself,
//! and the mutual-information functional of the noisy observation.
//!
//! Complex normal convention: the driving vector has independent real and
//! imaginary parts, each `N(0, 1/2)`, so `E[n n^H] = I` and `E[h h^H] = R`
//! exactly. The generator is ChaCha12 seeded per draw; draws with distinct
//! seeds are independent streams (bit-stable across platforms).

use crate::correlation::CorrelationMatrix;
use crate::error::{Error, Result};
use crate::linalg;
use crate::{C64, CMat};
use faer::{c64, Side};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use std::io::{BufRead, BufReader, Read, Write};

/// Eigenvalues below `-PSD_FLOOR * lambda_max` mean the matrix is rejected;
/// anything in `[-floor, 0)` is clamped to zero before factoring.
pub const PSD_FLOOR: f64 = 1e-8;

// ---------------------------------------------------------------------------
// Eigen expansion
// ---------------------------------------------------------------------------

/// Hermitian eigendecomposition with descending eigenvalues (the discrete
/// Mercer expansion of the correlation).
#[derive(Debug, Clone)]
pub struct EigenSystem {
    eigenvalues: Vec<f64>,
    eigenvectors: CMat,
}

impl EigenSystem {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &CMat {
        &self.eigenvectors
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Cumulative normalized eigenvalue mass (nondecreasing to 1); negative
    /// values are clamped to zero first.
    pub fn cumulative_fractions(&self) -> Vec<f64> {
        let clamped: Vec<f64> = self.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
        let total: f64 = clamped.iter().sum();
        if total <= 0.0 {
            return vec![0.0; clamped.len()];
        }
        let mut acc = 0.0;
        clamped
            .iter()
            .map(|l| {
                acc += l / total;
                acc.min(1.0)
            })
            .collect()
    }
}

/// Eigendecomposition of a correlation matrix, eigenvalues descending.
pub fn eigen_system(r: &CorrelationMatrix) -> Result<EigenSystem> {
    let (eigenvalues, eigenvectors) = linalg::hermitian_eigen(r.as_mat())?;
    Ok(EigenSystem { eigenvalues, eigenvectors })
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// One realization of the random field over the array.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub h: Vec<C64>,
    pub seed: u64,
    /// Content hash of the correlation matrix the draw came from.
    pub source_hash: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMethod {
    /// `h = L n` with `L L^H = R`.
    Cholesky,
    /// `h = U diag(sqrt(lambda)) n` from the eigen expansion.
    KarhunenLoeve,
}

/// Reusable sampler holding the factor of a fixed correlation matrix.
#[derive(Debug, Clone)]
pub struct ChannelSampler {
    factor: CMat,
    method: SampleMethod,
    source_hash: u64,
}

impl ChannelSampler {
    /// Builds the factor, clamping eigenvalues in `[-PSD_FLOOR lambda_max, 0)`
    /// to zero; rejects matrices indefinite beyond the floor.
    pub fn new(r: &CorrelationMatrix, method: SampleMethod) -> Result<Self> {
        let n = r.dim();
        let (vals, vecs) = linalg::hermitian_eigen(r.as_mat())?;
        let lmax = vals.first().copied().unwrap_or(0.0).max(0.0);
        if let Some(&lmin) = vals.last() {
            if lmin < -PSD_FLOOR * lmax {
                return Err(Error::Indefinite(format!(
                    "lambda_min = {lmin:.3e} vs lambda_max = {lmax:.3e}"
                )));
            }
        }
        let clamped: Vec<f64> = vals.iter().map(|&l| l.max(0.0)).collect();

        let factor = match method {
            SampleMethod::KarhunenLoeve => {
                CMat::from_fn(n, n, |i, j| vecs[(i, j)] * c64::new(clamped[j].sqrt(), 0.0))
            }
            SampleMethod::Cholesky => {
                // re-form the clamped matrix, then LL^H; the analytic model is
                // routinely rank-deficient, so a relative jitter steps the
                // factorization over exact singularity
                let lam = CMat::from_fn(n, n, |i, j| {
                    if i == j { c64::new(clamped[i], 0.0) } else { c64::new(0.0, 0.0) }
                });
                let clean = &vecs * &lam * vecs.adjoint();
                let mut jitter = if lmax > 0.0 { lmax * 1e-14 } else { 1e-14 };
                let mut attempt = clean.clone();
                loop {
                    match attempt.llt(Side::Lower) {
                        Ok(llt) => break llt.L().to_owned(),
                        Err(_) => {
                            if jitter > lmax.max(1.0) * 1e-8 {
                                return Err(Error::Numerical(
                                    "Cholesky failed even with PSD jitter".into(),
                                ));
                            }
                            attempt = clean.clone();
                            for i in 0..n {
                                attempt[(i, i)] += c64::new(jitter, 0.0);
                            }
                            jitter *= 100.0;
                        }
                    }
                }
            }
        };
        Ok(Self { factor, method, source_hash: r.content_hash() })
    }

    pub fn method(&self) -> SampleMethod {
        self.method
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    /// Draws `h = factor * n` with a ChaCha12 stream seeded by `seed`.
    pub fn draw(&self, seed: u64) -> ChannelRealization {
        let n = self.dim();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let noise = complex_standard_normal(&mut rng, n);
        let mut h = vec![C64::new(0.0, 0.0); n];
        for (i, hi) in h.iter_mut().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for (j, nj) in noise.iter().enumerate() {
                acc += self.factor[(i, j)] * nj;
            }
            *hi = acc;
        }
        ChannelRealization { h, seed, source_hash: self.source_hash }
    }
}

/// Circularly-symmetric standard complex normal vector (`E[n n^H] = I`),
/// drawn as interleaved re/im pairs per element.
pub(crate) fn complex_standard_normal(rng: &mut ChaCha12Rng, n: usize) -> Vec<C64> {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    (0..n)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            C64::new(re * scale, im * scale)
        })
        .collect()
}

/// Single Cholesky-sampled realization (`h = L n`); see [`ChannelSampler`]
/// for repeated draws without refactoring.
pub fn sample_channel(r: &CorrelationMatrix, seed: u64) -> Result<ChannelRealization> {
    Ok(ChannelSampler::new(r, SampleMethod::Cholesky)?.draw(seed))
}

// ---------------------------------------------------------------------------
// Mutual information
// ---------------------------------------------------------------------------

/// `I(E; Y) = sum_i ln(1 + lambda_i / sigma^2)` in nats; negative eigenvalues
/// count as zero.
pub fn mutual_information(eigs: &EigenSystem, noise_var: f64) -> Result<f64> {
    if !(noise_var > 0.0) {
        return Err(Error::invalid(format!("noise variance must be > 0, got {noise_var}")));
    }
    Ok(eigs
        .eigenvalues()
        .iter()
        .map(|&l| (1.0 + l.max(0.0) / noise_var).ln())
        .sum())
}

/// Same functional in bits.
pub fn mutual_information_bits(eigs: &EigenSystem, noise_var: f64) -> Result<f64> {
    Ok(mutual_information(eigs, noise_var)? / std::f64::consts::LN_2)
}

// ---------------------------------------------------------------------------
// Realization export
// ---------------------------------------------------------------------------

impl ChannelRealization {
    /// CSV of `re,im` rows with the seed and source hash in a leading comment.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# seed={} source={:016x} format_version=1", self.seed, self.source_hash)?;
        writeln!(w, "re,im")?;
        for v in &self.h {
            writeln!(w, "{},{}", v.re, v.im)?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let head = lines.next().ok_or_else(|| Error::Parse("empty realization file".into()))??;
        let mut seed = 0u64;
        let mut source_hash = 0u64;
        for token in head.trim_start_matches('#').split_whitespace() {
            if let Some(v) = token.strip_prefix("seed=") {
                seed = v.parse().map_err(|e| Error::Parse(format!("bad seed: {e}")))?;
            } else if let Some(v) = token.strip_prefix("source=") {
                source_hash = u64::from_str_radix(v, 16)
                    .map_err(|e| Error::Parse(format!("bad source hash: {e}")))?;
            }
        }
        let cols = lines.next().ok_or_else(|| Error::Parse("missing column header".into()))??;
        if cols.trim() != "re,im" {
            return Err(Error::Parse(format!("expected re,im header, got {cols}")));
        }
        let mut h = Vec::new();
        for line in lines {
            let line = line?;
            let (re, im) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("malformed row: {line}")))?;
            h.push(C64::new(
                re.trim().parse().map_err(|e| Error::Parse(format!("bad float: {e}")))?,
                im.trim().parse().map_err(|e| Error::Parse(format!("bad float: {e}")))?,
            ));
        }
        Ok(Self { h, seed, source_hash })
    }
}
