//! Rayleigh MIMO channel synthesis, correlation algebra and AWGN.
//!
//! Noise convention: `sigma2` is the noise variance per real dimension, so a
//! complex noise sample has total variance `2 * sigma2`. With unit-energy
//! constellations the SNR is `1 / (2 * sigma2)`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

pub type CMatrix = DMatrix<Complex64>;

const HERMITIAN_TOL: f64 = 1e-12;
const EIGEN_CLIP_TOL: f64 = 1e-10;
const EIGEN_REJECT_TOL: f64 = 1e-6;
const UNIT_DIAG_TOL: f64 = 1e-9;

/// Per-real-dimension noise variance for an SNR given in dB.
pub fn sigma2_from_snr_db(snr_db: f64) -> f64 {
    0.5 / 10f64.powf(snr_db / 10.0)
}

/// Total complex noise variance `2 * sigma2` (i.e. `N0`) for an SNR in dB.
pub fn noise_variance_from_snr_db(snr_db: f64) -> f64 {
    1.0 / 10f64.powf(snr_db / 10.0)
}

/// An `Nr x Nt` narrowband channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    entries: CMatrix,
}

impl ChannelMatrix {
    pub fn new(entries: CMatrix) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::Dimension("channel dimensions must be positive".into()));
        }
        if entries.iter().any(|h| !h.re.is_finite() || !h.im.is_finite()) {
            return Err(Error::InvalidParameter("channel entries must be finite".into()));
        }
        Ok(Self { entries })
    }

    /// Builds a channel from a row-major slice.
    pub fn from_row_slice(nr: usize, nt: usize, data: &[Complex64]) -> Result<Self> {
        if data.len() != nr * nt {
            return Err(Error::Dimension(format!(
                "{} entries cannot form a {nr}x{nt} channel",
                data.len()
            )));
        }
        Self::new(CMatrix::from_row_slice(nr, nt, data))
    }

    pub fn nr(&self) -> usize {
        self.entries.nrows()
    }

    pub fn nt(&self) -> usize {
        self.entries.ncols()
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn into_entries(self) -> CMatrix {
        self.entries
    }

    /// Column `l` (0-based), i.e. the channel seen from transmit antenna `l+1`.
    pub fn column(&self, l: usize) -> &[Complex64] {
        let nr = self.nr();
        &self.entries.as_slice()[l * nr..(l + 1) * nr]
    }

    /// Keeps the leading `nr` rows and `nt` columns.
    pub fn truncated(&self, nr: usize, nt: usize) -> Result<Self> {
        if nr > self.nr() || nt > self.nt() || nr == 0 || nt == 0 {
            return Err(Error::Dimension(format!(
                "cannot take {nr}x{nt} out of a {}x{} channel",
                self.nr(),
                self.nt()
            )));
        }
        Ok(Self {
            entries: self.entries.view((0, 0), (nr, nt)).into_owned(),
        })
    }

    pub fn frobenius_norm_sqr(&self) -> f64 {
        self.entries.iter().map(|h| h.norm_sqr()).sum()
    }

    /// `y = H x`, written into `y`.
    pub fn mul_vec_into(&self, x: &[Complex64], y: &mut [Complex64]) {
        debug_assert_eq!(x.len(), self.nt());
        debug_assert_eq!(y.len(), self.nr());
        y.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for (l, &xl) in x.iter().enumerate() {
            if xl == Complex64::new(0.0, 0.0) {
                continue;
            }
            for (yr, &h) in y.iter_mut().zip(self.column(l)) {
                *yr += h * xl;
            }
        }
    }
}

/// Where a pair of correlation matrices came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Identity,
    Exponential { beta_tx: f64, beta_rx: f64 },
    Estimated,
}

/// Transmit and receive correlation matrices of the Kronecker model, with
/// their Hermitian square roots cached.
#[derive(Debug, Clone)]
pub struct CorrelationSpec {
    r_tx: CMatrix,
    r_rx: CMatrix,
    sqrt_tx: CMatrix,
    sqrt_rx: CMatrix,
    provenance: Provenance,
}

impl CorrelationSpec {
    pub fn new(r_tx: CMatrix, r_rx: CMatrix, provenance: Provenance) -> Result<Self> {
        for (name, r) in [("R_tx", &r_tx), ("R_rx", &r_rx)] {
            check_square(r)?;
            let asym = hermitian_defect(r);
            if asym > HERMITIAN_TOL {
                return Err(Error::NotHermitian(asym));
            }
            if let Some(d) = r.diagonal().iter().find(|d| (*d - Complex64::new(1.0, 0.0)).norm() > UNIT_DIAG_TOL) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must have unit diagonal, found {d}"
                )));
            }
        }
        let sqrt_tx = hermitian_sqrt_with_tol(&r_tx, EIGEN_CLIP_TOL)?;
        let sqrt_rx = hermitian_sqrt_with_tol(&r_rx, EIGEN_CLIP_TOL)?;
        Ok(Self {
            r_tx,
            r_rx,
            sqrt_tx,
            sqrt_rx,
            provenance,
        })
    }

    pub fn identity(nt: usize, nr: usize) -> Result<Self> {
        if nt == 0 || nr == 0 {
            return Err(Error::Dimension("correlation sizes must be positive".into()));
        }
        Self::new(CMatrix::identity(nt, nt), CMatrix::identity(nr, nr), Provenance::Identity)
    }

    pub fn exponential(nt: usize, nr: usize, beta_tx: f64, beta_rx: f64) -> Result<Self> {
        Self::new(
            exponential_correlation(nt, beta_tx)?,
            exponential_correlation(nr, beta_rx)?,
            Provenance::Exponential { beta_tx, beta_rx },
        )
    }

    pub fn nt(&self) -> usize {
        self.r_tx.nrows()
    }

    pub fn nr(&self) -> usize {
        self.r_rx.nrows()
    }

    pub fn r_tx(&self) -> &CMatrix {
        &self.r_tx
    }

    pub fn r_rx(&self) -> &CMatrix {
        &self.r_rx
    }

    pub fn sqrt_tx(&self) -> &CMatrix {
        &self.sqrt_tx
    }

    pub fn sqrt_rx(&self) -> &CMatrix {
        &self.sqrt_rx
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Keeps the leading `nt x nt` / `nr x nr` blocks. Principal submatrices
    /// of a valid correlation are valid correlations.
    pub fn truncated(&self, nt: usize, nr: usize) -> Result<Self> {
        if nt == 0 || nr == 0 || nt > self.nt() || nr > self.nr() {
            return Err(Error::Dimension(format!(
                "cannot take {nt}/{nr} antennas out of {}/{}",
                self.nt(),
                self.nr()
            )));
        }
        Self::new(
            self.r_tx.view((0, 0), (nt, nt)).into_owned(),
            self.r_rx.view((0, 0), (nr, nr)).into_owned(),
            self.provenance,
        )
    }
}

fn check_square(r: &CMatrix) -> Result<()> {
    if r.nrows() != r.ncols() || r.nrows() == 0 {
        return Err(Error::Dimension(format!(
            "expected a nonempty square matrix, got {}x{}",
            r.nrows(),
            r.ncols()
        )));
    }
    Ok(())
}

/// Largest entrywise deviation from Hermitian symmetry.
pub fn hermitian_defect(r: &CMatrix) -> f64 {
    let n = r.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((r[(i, j)] - r[(j, i)].conj()).norm());
        }
    }
    worst
}

/// The exponential (Toeplitz) correlation profile: entry `(i, j)` is
/// `exp(-beta)^|i-j|`. `beta = inf` yields the identity.
pub fn exponential_correlation(n: usize, beta: f64) -> Result<CMatrix> {
    if n == 0 {
        return Err(Error::Dimension("correlation size must be positive".into()));
    }
    if beta.is_nan() || beta < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "decay coefficient must be >= 0, got {beta}"
        )));
    }
    let rc = (-beta).exp();
    Ok(CMatrix::from_fn(n, n, |i, j| {
        Complex64::new(rc.powi(i.abs_diff(j) as i32), 0.0)
    }))
}

/// Eigenvalues (ascending) of a Hermitian matrix.
pub fn hermitian_eigenvalues(r: &CMatrix) -> Result<Vec<f64>> {
    check_square(r)?;
    let scale = r.iter().map(|v| v.norm()).fold(1.0, f64::max);
    let asym = hermitian_defect(r);
    if asym > 1e-9 * scale {
        return Err(Error::NotHermitian(asym));
    }
    let sym = (r + r.adjoint()).scale(0.5);
    let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Principal (Hermitian PSD) square root via eigendecomposition.
///
/// Eigenvalues down to `-1e-6` (relative to the matrix scale) are clipped to
/// zero; anything more negative is rejected.
pub fn hermitian_sqrt(r: &CMatrix) -> Result<CMatrix> {
    hermitian_sqrt_with_tol(r, EIGEN_REJECT_TOL)
}

fn hermitian_sqrt_with_tol(r: &CMatrix, reject_below: f64) -> Result<CMatrix> {
    check_square(r)?;
    let scale = r.iter().map(|v| v.norm()).fold(1.0, f64::max);
    let asym = hermitian_defect(r);
    if asym > 1e-9 * scale {
        return Err(Error::NotHermitian(asym));
    }
    let sym = (r + r.adjoint()).scale(0.5);
    let eig = SymmetricEigen::new(sym);
    if let Some(&lo) = eig.eigenvalues.iter().find(|&&l| l < -reject_below * scale) {
        return Err(Error::NegativeEigenvalue(lo));
    }
    let v = &eig.eigenvectors;
    let roots = CMatrix::from_diagonal(
        &eig.eigenvalues
            .map(|l| Complex64::new(l.max(0.0).sqrt(), 0.0)),
    );
    let s = v * roots * v.adjoint();
    // Exactly Hermitian output.
    Ok((&s + s.adjoint()).scale(0.5))
}

fn complex_gaussian(rng: &mut SimRng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// `Nr x Nt` matrix of independent `CN(0, 1)` entries.
pub fn draw_iid_rayleigh(nr: usize, nt: usize, rng: &mut SimRng) -> Result<ChannelMatrix> {
    if nr == 0 || nt == 0 {
        return Err(Error::Dimension("channel dimensions must be positive".into()));
    }
    // Column-major fill, matching the storage order.
    let entries = CMatrix::from_fn(nr, nt, |_, _| complex_gaussian(rng));
    Ok(ChannelMatrix { entries })
}

/// Kronecker-correlated Rayleigh channel `R_rx^{1/2} Hbar R_tx^{1/2}`.
pub fn draw_kronecker_channel(
    spec: &CorrelationSpec,
    nr: usize,
    nt: usize,
    rng: &mut SimRng,
) -> Result<ChannelMatrix> {
    if spec.nr() != nr || spec.nt() != nt {
        return Err(Error::Dimension(format!(
            "correlation spec is {}x{} but a {nr}x{nt} channel was requested",
            spec.nr(),
            spec.nt()
        )));
    }
    let white = draw_iid_rayleigh(nr, nt, rng)?;
    if spec.provenance() == Provenance::Identity {
        return Ok(white);
    }
    Ok(ChannelMatrix {
        entries: spec.sqrt_rx() * white.entries * spec.sqrt_tx(),
    })
}

/// A received vector and the noise level it was produced with.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisySnapshot {
    pub y: Vec<Complex64>,
    pub sigma2: f64,
}

/// Adds circular Gaussian noise with variance `sigma2` per real dimension.
pub fn add_noise(y: &mut [Complex64], sigma2: f64, rng: &mut SimRng) {
    if sigma2 == 0.0 {
        return;
    }
    let sd = sigma2.sqrt();
    for v in y.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *v += Complex64::new(re * sd, im * sd);
    }
}

/// `y = H x + n`.
pub fn apply_awgn(
    x: &[Complex64],
    h: &ChannelMatrix,
    sigma2: f64,
    rng: &mut SimRng,
) -> Result<NoisySnapshot> {
    if x.len() != h.nt() {
        return Err(Error::Dimension(format!(
            "transmit vector has {} entries, channel has {} columns",
            x.len(),
            h.nt()
        )));
    }
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "noise variance must be finite and >= 0, got {sigma2}"
        )));
    }
    let mut y = vec![Complex64::new(0.0, 0.0); h.nr()];
    h.mul_vec_into(x, &mut y);
    add_noise(&mut y, sigma2, rng);
    Ok(NoisySnapshot { y, sigma2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn exponential_limits() {
        let id = exponential_correlation(4, f64::INFINITY).unwrap();
        assert_eq!(id, CMatrix::identity(4, 4));
        let ones = exponential_correlation(3, 0.0).unwrap();
        assert!(ones.iter().all(|v| *v == c(1.0)));
        let r = exponential_correlation(4, 0.5).unwrap();
        assert!((r[(0, 3)].re - (-1.5f64).exp()).abs() < 1e-15);
        assert!((r[(0, 1)].re - (-0.5f64).exp()).abs() < 1e-15);
        assert!(exponential_correlation(4, -0.1).is_err());
        assert!(exponential_correlation(0, 1.0).is_err());
    }

    #[test]
    fn sqrt_of_diagonal() {
        let r = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(4.0), c(1.0)]));
        let s = hermitian_sqrt(&r).unwrap();
        assert!((s[(0, 0)] - c(2.0)).norm() < 1e-12);
        assert!((s[(1, 1)] - c(1.0)).norm() < 1e-12);
        assert!(s[(0, 1)].norm() < 1e-12);
        let id = hermitian_sqrt(&CMatrix::identity(5, 5)).unwrap();
        assert!((id - CMatrix::identity(5, 5)).norm() < 1e-12);
    }

    #[test]
    fn sqrt_rejects_bad_input() {
        let mut r = CMatrix::identity(2, 2);
        r[(0, 1)] = c(0.5);
        assert!(matches!(hermitian_sqrt(&r), Err(Error::NotHermitian(_))));
        let neg = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(1.0), c(-0.5)]));
        assert!(matches!(hermitian_sqrt(&neg), Err(Error::NegativeEigenvalue(_))));
        let tiny = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(1.0), c(-1e-12)]));
        assert!(hermitian_sqrt(&tiny).is_ok());
    }

    #[test]
    fn awgn_zero_noise_is_exact() {
        let mut rng = rng_from_seed(3);
        let h = draw_iid_rayleigh(4, 4, &mut rng).unwrap();
        let x = vec![c(0.0), Complex64::new(0.7, -0.7), c(0.0), c(0.0)];
        let snap = apply_awgn(&x, &h, 0.0, &mut rng).unwrap();
        for r in 0..4 {
            assert_eq!(snap.y[r], h.entries()[(r, 1)] * x[1]);
        }
        assert!(apply_awgn(&x[..3], &h, 0.1, &mut rng).is_err());
        assert!(apply_awgn(&x, &h, -1.0, &mut rng).is_err());
    }

    #[test]
    fn draws_are_reproducible() {
        let a = draw_iid_rayleigh(3, 5, &mut rng_from_seed(11)).unwrap();
        let b = draw_iid_rayleigh(3, 5, &mut rng_from_seed(11)).unwrap();
        assert_eq!(a, b);
        let spec = CorrelationSpec::identity(5, 3).unwrap();
        let k = draw_kronecker_channel(&spec, 3, 5, &mut rng_from_seed(11)).unwrap();
        assert_eq!(a, k);
        assert!(draw_kronecker_channel(&spec, 4, 5, &mut rng_from_seed(1)).is_err());
    }

    #[test]
    fn spec_requires_unit_diagonal() {
        let r = CMatrix::identity(2, 2).scale(2.0);
        assert!(CorrelationSpec::new(r, CMatrix::identity(2, 2), Provenance::Estimated).is_err());
    }

    #[test]
    fn snr_conversion() {
        assert!((sigma2_from_snr_db(0.0) - 0.5).abs() < 1e-15);
        assert!((noise_variance_from_snr_db(10.0) - 0.1).abs() < 1e-15);
        assert!((2.0 * sigma2_from_snr_db(7.3) - noise_variance_from_snr_db(7.3)).abs() < 1e-15);
    }

    #[test]
    fn column_matches_entries() {
        let h = ChannelMatrix::from_row_slice(2, 3, &[c(1.), c(2.), c(3.), c(4.), c(5.), c(6.)])
            .unwrap();
        assert_eq!(h.column(1), &[c(2.), c(5.)]);
        assert_eq!(h.truncated(2, 2).unwrap().column(1), &[c(2.), c(5.)]);
    }
}
