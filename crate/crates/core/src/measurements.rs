//! Measured-channel ingestion and statistics.
//!
//! # File format
//!
//! All integers and floats are little-endian.
//!
//! | offset | size | content                                             |
//! |--------|------|-----------------------------------------------------|
//! | 0      | 8    | magic `SMLKMEAS`                                    |
//! | 8      | 4    | format version (`1`)                                |
//! | 12     | 20   | reserved, zero                                      |
//! | 32     | 16   | `nr`, `nt`, `num_snapshots`, `num_bins` as `u32`    |
//! | 48     | ...  | payload, `complex64` = (`f32` re, `f32` im)         |
//! | ...    | ...  | metadata: `u32` length + UTF-8 device tag, then     |
//! |        |      | `u32` length + UTF-8 location tag                   |
//!
//! The payload is ordered snapshot, bin, row, column (row-major matrices).
//! Rows are receive antennas, columns transmit antennas. Raw sounder
//! captures are expected to have been averaged in groups of four snapshots
//! before being written; [`average_groups_of_four`] does that for files
//! that have not.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use num_complex::{Complex32, Complex64};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::channel::{
    draw_kronecker_channel, hermitian_defect, CMatrix, ChannelMatrix, CorrelationSpec, Provenance,
};
use crate::error::{Error, Result};
use crate::rng::SimRng;

pub const MAGIC: [u8; 8] = *b"SMLKMEAS";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 48;

/// Device tag of the body-worn reference antenna array.
pub const REFERENCE_DEVICE: &str = "reference";

/// Minimum snapshot count for correlation estimation.
pub const MIN_ESTIMATION_SNAPSHOTS: usize = 32;

/// Minimum sample count for the goodness-of-fit test.
pub const MIN_GOF_SAMPLES: usize = 200;

/// Spacing of the virtual-array subsampling.
pub const VIRTUAL_ARRAY_STRIDE: usize = 4;

/// Contents of a measurement file, all bins, at file precision.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMeasurementFile {
    pub nr: usize,
    pub nt: usize,
    pub num_snapshots: usize,
    pub num_bins: usize,
    pub data: Vec<Complex32>,
    pub device_tag: String,
    pub location_tag: String,
}

impl RawMeasurementFile {
    pub fn new(
        nr: usize,
        nt: usize,
        num_snapshots: usize,
        num_bins: usize,
        data: Vec<Complex32>,
        device_tag: impl Into<String>,
        location_tag: impl Into<String>,
    ) -> Result<Self> {
        if nr == 0 || nt == 0 || num_bins == 0 {
            return Err(Error::Format("dimensions must be positive".into()));
        }
        if data.len() != nr * nt * num_snapshots * num_bins {
            return Err(Error::Format(format!(
                "payload holds {} values, header implies {}",
                data.len(),
                nr * nt * num_snapshots * num_bins
            )));
        }
        Ok(Self {
            nr,
            nt,
            num_snapshots,
            num_bins,
            data,
            device_tag: device_tag.into(),
            location_tag: location_tag.into(),
        })
    }

    fn index(&self, snapshot: usize, bin: usize, row: usize, col: usize) -> usize {
        ((snapshot * self.num_bins + bin) * self.nr + row) * self.nt + col
    }

    /// Entry of `snapshot` in `bin` (both 0-based).
    pub fn entry(&self, snapshot: usize, bin: usize, row: usize, col: usize) -> Complex32 {
        self.data[self.index(snapshot, bin, row, col)]
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let dim = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} exceeds u32")))
        };
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 8 + 64);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&[0u8; 20]);
        for (v, what) in [
            (self.nr, "nr"),
            (self.nt, "nt"),
            (self.num_snapshots, "snapshot count"),
            (self.num_bins, "bin count"),
        ] {
            out.extend_from_slice(&dim(v, what)?.to_le_bytes());
        }
        for z in &self.data {
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }
        for tag in [&self.device_tag, &self.location_tag] {
            out.extend_from_slice(&dim(tag.len(), "tag length")?.to_le_bytes());
            out.extend_from_slice(tag.as_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        if cur.take(20)?.iter().any(|&b| b != 0) {
            return Err(Error::Format("reserved header bytes are not zero".into()));
        }
        let nr = cur.u32()? as usize;
        let nt = cur.u32()? as usize;
        let num_snapshots = cur.u32()? as usize;
        let num_bins = cur.u32()? as usize;
        if nr == 0 || nt == 0 || num_bins == 0 {
            return Err(Error::Format(format!(
                "invalid dimensions nr={nr} nt={nt} bins={num_bins}"
            )));
        }
        let count = nr
            .checked_mul(nt)
            .and_then(|v| v.checked_mul(num_snapshots))
            .and_then(|v| v.checked_mul(num_bins))
            .ok_or_else(|| Error::Format("payload size overflows".into()))?;
        let payload = cur
            .take(count.checked_mul(8).ok_or_else(|| Error::Format("payload size overflows".into()))?)
            .map_err(|_| Error::Format("truncated payload".into()))?;
        let data = payload
            .chunks_exact(8)
            .map(|c| {
                Complex32::new(
                    f32::from_le_bytes(c[0..4].try_into().unwrap()),
                    f32::from_le_bytes(c[4..8].try_into().unwrap()),
                )
            })
            .collect();
        let device_tag = cur.string()?;
        let location_tag = cur.string()?;
        if cur.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after metadata",
                bytes.len() - cur.pos
            )));
        }
        Self::new(nr, nt, num_snapshots, num_bins, data, device_tag, location_tag)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    /// Narrowband snapshot sequence of one bin (1-based).
    pub fn select_bin(&self, selected_bin: usize, normalize: bool) -> Result<MeasurementSet> {
        if selected_bin == 0 || selected_bin > self.num_bins {
            return Err(Error::Dimension(format!(
                "bin {selected_bin} requested, file has bins 1..={}",
                self.num_bins
            )));
        }
        let bin = selected_bin - 1;
        let snapshots = (0..self.num_snapshots)
            .map(|s| {
                let entries = CMatrix::from_fn(self.nr, self.nt, |r, c| {
                    let z = self.entry(s, bin, r, c);
                    Complex64::new(f64::from(z.re), f64::from(z.im))
                });
                ChannelMatrix::new(entries)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut set = MeasurementSet::new(
            snapshots,
            self.num_bins,
            selected_bin,
            self.device_tag.clone(),
            self.location_tag.clone(),
        )?;
        if normalize {
            set.normalize_power();
        }
        Ok(set)
    }

    /// CSV export, one row per entry: `snapshot,bin,rx,tx,re,im` (1-based
    /// indices).
    pub fn export_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "snapshot,bin,rx,tx,re,im")?;
        for s in 0..self.num_snapshots {
            for b in 0..self.num_bins {
                for r in 0..self.nr {
                    for c in 0..self.nt {
                        let z = self.entry(s, b, r, c);
                        writeln!(w, "{},{},{},{},{},{}", s + 1, b + 1, r + 1, c + 1, z.re, z.im)?;
                    }
                }
            }
        }
        Ok(())
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("unexpected end of file at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format("metadata is not UTF-8".into()))
    }
}

/// Complex average of consecutive groups of four snapshots; a trailing
/// incomplete group is dropped.
pub fn average_groups_of_four(raw: &RawMeasurementFile) -> RawMeasurementFile {
    let groups = raw.num_snapshots / 4;
    let per_snapshot = raw.nr * raw.nt * raw.num_bins;
    let mut data = Vec::with_capacity(groups * per_snapshot);
    for g in 0..groups {
        for i in 0..per_snapshot {
            let sum: Complex32 = (0..4).map(|k| raw.data[(4 * g + k) * per_snapshot + i]).sum();
            data.push(sum / 4.0);
        }
    }
    RawMeasurementFile {
        num_snapshots: groups,
        data,
        ..raw.clone()
    }
}

/// A narrowband sequence of channel snapshots from one measurement.
#[derive(Debug, Clone)]
pub struct MeasurementSet {
    snapshots: Vec<ChannelMatrix>,
    nr: usize,
    nt: usize,
    pub num_bins: usize,
    pub selected_bin: usize,
    pub device_tag: String,
    pub location_tag: String,
}

impl MeasurementSet {
    pub fn new(
        snapshots: Vec<ChannelMatrix>,
        num_bins: usize,
        selected_bin: usize,
        device_tag: impl Into<String>,
        location_tag: impl Into<String>,
    ) -> Result<Self> {
        let first = snapshots
            .first()
            .ok_or_else(|| Error::InsufficientData("measurement has no snapshots".into()))?;
        let (nr, nt) = (first.nr(), first.nt());
        if snapshots.iter().any(|h| h.nr() != nr || h.nt() != nt) {
            return Err(Error::Dimension("snapshots differ in dimensions".into()));
        }
        if selected_bin == 0 || selected_bin > num_bins {
            return Err(Error::Dimension(format!(
                "selected bin {selected_bin} outside 1..={num_bins}"
            )));
        }
        Ok(Self {
            snapshots,
            nr,
            nt,
            num_bins,
            selected_bin,
            device_tag: device_tag.into(),
            location_tag: location_tag.into(),
        })
    }

    pub fn snapshots(&self) -> &[ChannelMatrix] {
        &self.snapshots
    }

    pub fn into_snapshots(self) -> Vec<ChannelMatrix> {
        self.snapshots
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn nr(&self) -> usize {
        self.nr
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    /// Mean of `|h|^2` over all entries of all snapshots.
    pub fn average_power(&self) -> f64 {
        let total: f64 = self.snapshots.iter().map(|h| h.frobenius_norm_sqr()).sum();
        total / (self.snapshots.len() * self.nr * self.nt) as f64
    }

    /// Rescales so that the average entry power is one.
    pub fn normalize_power(&mut self) {
        let p = self.average_power();
        if p > 0.0 {
            let g = Complex64::new(p.sqrt().recip(), 0.0);
            for h in &mut self.snapshots {
                *h = ChannelMatrix::new(h.entries() * g).expect("scaling keeps entries finite");
            }
        }
    }

    /// Magnitudes of every entry of every snapshot.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.snapshots
            .iter()
            .flat_map(|h| h.entries().iter().map(|z| z.norm()))
            .collect()
    }

    /// Single-bin file representation at `f32` precision.
    pub fn to_raw(&self) -> RawMeasurementFile {
        let mut data = Vec::with_capacity(self.snapshots.len() * self.nr * self.nt);
        for h in &self.snapshots {
            for r in 0..self.nr {
                for c in 0..self.nt {
                    let z = h.entries()[(r, c)];
                    data.push(Complex32::new(z.re as f32, z.im as f32));
                }
            }
        }
        RawMeasurementFile {
            nr: self.nr,
            nt: self.nt,
            num_snapshots: self.snapshots.len(),
            num_bins: 1,
            data,
            device_tag: self.device_tag.clone(),
            location_tag: self.location_tag.clone(),
        }
    }

    /// Sequence of virtual channels, one snapshot per array.
    pub fn from_virtual_arrays(arrays: &[VirtualArray], location_tag: &str) -> Result<Self> {
        Self::new(
            arrays.iter().map(|a| a.channel.clone()).collect(),
            1,
            1,
            REFERENCE_DEVICE,
            location_tag,
        )
    }
}

/// Options for [`load_measurement_file`].
#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    /// Scale to unit average channel power.
    pub normalize: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { normalize: true }
    }
}

pub fn load_measurement_file(
    path: impl AsRef<Path>,
    selected_bin: usize,
    options: LoadOptions,
) -> Result<MeasurementSet> {
    RawMeasurementFile::read(path)?.select_bin(selected_bin, options.normalize)
}

pub fn write_measurement_set(set: &MeasurementSet, path: impl AsRef<Path>) -> Result<()> {
    set.to_raw().write(path)
}

/// Synthetic measurement drawn from the Kronecker model; every bin of every
/// snapshot is an independent draw.
pub fn generate_fixture(
    spec: &CorrelationSpec,
    num_snapshots: usize,
    num_bins: usize,
    device_tag: &str,
    location_tag: &str,
    rng: &mut SimRng,
) -> Result<RawMeasurementFile> {
    let (nr, nt) = (spec.nr(), spec.nt());
    let mut data = Vec::with_capacity(num_snapshots * num_bins * nr * nt);
    for _ in 0..num_snapshots * num_bins {
        let h = draw_kronecker_channel(spec, nr, nt, rng)?;
        for r in 0..nr {
            for c in 0..nt {
                let z = h.entries()[(r, c)];
                data.push(Complex32::new(z.re as f32, z.im as f32));
            }
        }
    }
    RawMeasurementFile::new(nr, nt, num_snapshots, num_bins, data, device_tag, location_tag)
}

/// Outcome of a chi-squared goodness-of-fit test against a Rayleigh law.
#[derive(Debug, Clone, PartialEq)]
pub struct RayleighFitReport {
    pub chi2_statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub passed: bool,
    /// ML estimate of the Rayleigh scale `sigma`.
    pub scale_estimate: f64,
}

/// Pearson chi-squared test of `samples` against a Rayleigh distribution with
/// ML-fitted scale.
///
/// Samples are binned into `k = clamp(n / 50, 8, 64)` cells that are
/// equiprobable under the fitted law; one degree of freedom is spent on the
/// scale, so `dof = k - 2`.
pub fn chi_squared_rayleigh_gof(samples: &[f64], significance: f64) -> Result<RayleighFitReport> {
    let n = samples.len();
    if n < MIN_GOF_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "goodness of fit needs at least {MIN_GOF_SAMPLES} samples, got {n}"
        )));
    }
    if !(significance > 0.0 && significance < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "significance must lie in (0, 1), got {significance}"
        )));
    }
    if let Some(bad) = samples.iter().find(|&&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "Rayleigh samples must be positive, found {bad}"
        )));
    }
    let sigma2 = samples.iter().map(|x| x * x).sum::<f64>() / (2.0 * n as f64);
    let k = (n / 50).clamp(8, 64);
    let mut observed = vec![0usize; k];
    for &x in samples {
        let cdf = -(-x * x / (2.0 * sigma2)).exp_m1();
        let cell = ((cdf * k as f64) as usize).min(k - 1);
        observed[cell] += 1;
    }
    let expected = n as f64 / k as f64;
    let chi2_statistic: f64 = observed
        .iter()
        .map(|&o| (o as f64 - expected).powi(2) / expected)
        .sum();
    let dof = k - 2;
    let p_value = ChiSquared::new(dof as f64)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?
        .sf(chi2_statistic);
    Ok(RayleighFitReport {
        chi2_statistic,
        dof,
        p_value,
        passed: p_value >= significance,
        scale_estimate: sigma2.sqrt(),
    })
}

/// Sample correlation of the transmit side, `E[H^H H]`, and receive side,
/// `E[H H^H]`, each scaled to unit diagonal.
pub fn estimate_correlation_matrices(set: &MeasurementSet) -> Result<CorrelationSpec> {
    if set.len() < MIN_ESTIMATION_SNAPSHOTS {
        return Err(Error::InsufficientData(format!(
            "correlation estimation needs at least {MIN_ESTIMATION_SNAPSHOTS} snapshots, got {}",
            set.len()
        )));
    }
    let mut tx = CMatrix::zeros(set.nt(), set.nt());
    let mut rx = CMatrix::zeros(set.nr(), set.nr());
    for h in set.snapshots() {
        let e = h.entries();
        tx += e.adjoint() * e;
        rx += e * e.adjoint();
    }
    CorrelationSpec::new(unit_diagonal(tx)?, unit_diagonal(rx)?, Provenance::Estimated)
}

fn unit_diagonal(mut r: CMatrix) -> Result<CMatrix> {
    let n = r.nrows();
    let d: Vec<f64> = (0..n).map(|i| r[(i, i)].re).collect();
    if let Some(i) = d.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::InsufficientData(format!(
            "antenna {} carries no power",
            i + 1
        )));
    }
    for i in 0..n {
        for j in 0..n {
            r[(i, j)] /= (d[i] * d[j]).sqrt();
        }
    }
    for i in 0..n {
        r[(i, i)] = Complex64::new(1.0, 0.0);
        for j in i + 1..n {
            let avg = 0.5 * (r[(i, j)] + r[(j, i)].conj());
            r[(i, j)] = avg;
            r[(j, i)] = avg.conj();
        }
    }
    Ok(r)
}

/// Best exponential-decay fit of a correlation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub r_c: f64,
    /// `-ln(r_c)`; infinite when the fit lands on `r_c = 0`.
    pub beta: f64,
    pub mse: f64,
}

/// Mean squared error between `|R|` and `r_c^|i-j|` over all entries.
pub fn decay_mse(magnitudes: &CMatrix, r_c: f64) -> f64 {
    let n = magnitudes.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let model = r_c.powi(i.abs_diff(j) as i32);
            acc += (magnitudes[(i, j)].re - model).powi(2);
        }
    }
    acc / (n * n) as f64
}

/// Fits `r_c` in `[0, 1)` by golden-section search on the MSE.
pub fn fit_exponential_decay(r_hat: &CMatrix) -> Result<DecayFit> {
    let n = r_hat.nrows();
    if n < 2 || r_hat.ncols() != n {
        return Err(Error::Dimension(format!(
            "decay fit needs a square matrix of size >= 2, got {}x{}",
            n,
            r_hat.ncols()
        )));
    }
    if (0..n).any(|i| (r_hat[(i, i)] - Complex64::new(1.0, 0.0)).norm() > 1e-9) {
        return Err(Error::InvalidParameter(
            "decay fit needs a unit-diagonal matrix".into(),
        ));
    }
    if hermitian_defect(r_hat) > 1e-9 {
        return Err(Error::NotHermitian(hermitian_defect(r_hat)));
    }
    let mags = r_hat.map(|z| Complex64::new(z.norm(), 0.0));
    let f = |r: f64| decay_mse(&mags, r);

    const TOL: f64 = 1e-6;
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0f64, 1.0f64);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let mut r_c = 0.5 * (a + b);
    // The bracket is half-open; also compare against its endpoints.
    for edge in [0.0, 1.0 - TOL] {
        if f(edge) < f(r_c) {
            r_c = edge;
        }
    }
    let beta = if r_c == 0.0 { f64::INFINITY } else { -r_c.ln() };
    Ok(DecayFit {
        r_c,
        beta,
        mse: f(r_c),
    })
}

/// Ranking criterion for [`select_channels`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    /// Ascending mean off-diagonal correlation magnitude.
    Uncorrelated,
    /// Ascending exponential-fit MSE.
    Correlated,
}

impl std::str::FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uncorrelated" => Ok(Self::Uncorrelated),
            "correlated" => Ok(Self::Correlated),
            _ => Err(Error::Config(format!("unknown selection mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedChannel {
    /// Position in the input list.
    pub index: usize,
    pub location_tag: String,
    pub score: f64,
    pub tx_fit: DecayFit,
    pub rx_fit: DecayFit,
}

fn mean_off_diagonal_magnitude(r: &CMatrix) -> f64 {
    let n = r.nrows();
    if n < 2 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += r[(i, j)].norm();
            }
        }
    }
    acc / (n * (n - 1)) as f64
}

/// Ranks measurement sets, best first.
///
/// The uncorrelated score averages the off-diagonal correlation magnitude of
/// the transmit and receive matrices; the correlated score averages the two
/// decay-fit MSEs.
pub fn select_channels(sets: &[MeasurementSet], mode: SelectionMode) -> Result<Vec<RankedChannel>> {
    if sets.is_empty() {
        return Err(Error::InsufficientData("no measurement sets to rank".into()));
    }
    let mut ranked = sets
        .iter()
        .enumerate()
        .map(|(index, set)| {
            let spec = estimate_correlation_matrices(set)?;
            let tx_fit = fit_exponential_decay(spec.r_tx())?;
            let rx_fit = fit_exponential_decay(spec.r_rx())?;
            let score = match mode {
                SelectionMode::Uncorrelated => {
                    0.5 * (mean_off_diagonal_magnitude(spec.r_tx())
                        + mean_off_diagonal_magnitude(spec.r_rx()))
                }
                SelectionMode::Correlated => 0.5 * (tx_fit.mse + rx_fit.mse),
            };
            Ok(RankedChannel {
                index,
                location_tag: set.location_tag.clone(),
                score,
                tx_fit,
                rx_fit,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| {
        a.score
            .total_cmp(&b.score)
            .then_with(|| a.location_tag.cmp(&b.location_tag))
            .then_with(|| a.index.cmp(&b.index))
    });
    Ok(ranked)
}

/// Large virtual transmit array synthesized from a walked measurement.
#[derive(Debug, Clone)]
pub struct VirtualArray {
    /// `Nr x nt_virtual` channel, normalized to unit average entry power.
    pub channel: ChannelMatrix,
    pub nt_virtual: usize,
    /// 1-based snapshot index feeding each virtual element.
    pub source_snapshots: Vec<usize>,
    /// ML Rayleigh scale of each virtual element.
    pub element_scales: Vec<f64>,
    /// Mean of the entry magnitudes.
    pub rayleigh_mean: f64,
    /// Variance of the entry magnitudes.
    pub rayleigh_variance: f64,
    /// Variance of the per-element mean magnitude; large values flag
    /// shadowing along the walk.
    pub variation: f64,
    pub location_tag: String,
}

/// Builds a virtual array from a walk: each snapshot is reversed so the
/// mobile transmits, its first transmit column becomes one virtual element,
/// and every fourth element is kept.
pub fn build_virtual_array(
    walk: &MeasurementSet,
    max_size: usize,
    allow_non_reference: bool,
) -> Result<VirtualArray> {
    if !walk.device_tag.eq_ignore_ascii_case(REFERENCE_DEVICE) {
        if allow_non_reference {
            log::warn!(
                "building a virtual array from device '{}' rather than the reference device",
                walk.device_tag
            );
        } else {
            return Err(Error::InvalidParameter(format!(
                "virtual arrays are built from the '{REFERENCE_DEVICE}' device, got '{}'",
                walk.device_tag
            )));
        }
    }
    if max_size == 0 {
        return Err(Error::InvalidParameter("virtual array size must be positive".into()));
    }
    let needed = VIRTUAL_ARRAY_STRIDE * max_size;
    if walk.len() < needed {
        return Err(Error::InsufficientData(format!(
            "{max_size} virtual elements need {needed} snapshots, walk has {}",
            walk.len()
        )));
    }
    // After reversal the old transmit side (walk.nt antennas) receives.
    let rows = walk.nt();
    let source_snapshots: Vec<usize> = (0..max_size).map(|k| VIRTUAL_ARRAY_STRIDE * k + 1).collect();
    let mut entries = CMatrix::zeros(rows, max_size);
    for (k, &s) in source_snapshots.iter().enumerate() {
        let reversed = walk.snapshots()[s - 1].entries().adjoint();
        entries.set_column(k, &reversed.column(0));
    }
    let power = entries.iter().map(|z| z.norm_sqr()).sum::<f64>() / (rows * max_size) as f64;
    if !(power > 0.0) {
        return Err(Error::InsufficientData("walk carries no power".into()));
    }
    entries /= Complex64::new(power.sqrt(), 0.0);

    let mags: Vec<f64> = entries.iter().map(|z| z.norm()).collect();
    let rayleigh_mean = mags.iter().sum::<f64>() / mags.len() as f64;
    let rayleigh_variance =
        mags.iter().map(|m| (m - rayleigh_mean).powi(2)).sum::<f64>() / mags.len() as f64;
    let element_scales: Vec<f64> = entries
        .column_iter()
        .map(|c| (c.iter().map(|z| z.norm_sqr()).sum::<f64>() / (2.0 * rows as f64)).sqrt())
        .collect();
    let element_means: Vec<f64> = entries
        .column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>() / rows as f64)
        .collect();
    let grand = element_means.iter().sum::<f64>() / max_size as f64;
    let variation =
        element_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / max_size as f64;

    Ok(VirtualArray {
        channel: ChannelMatrix::new(entries)?,
        nt_virtual: max_size,
        source_snapshots,
        element_scales,
        rayleigh_mean,
        rayleigh_variance,
        variation,
        location_tag: walk.location_tag.clone(),
    })
}

/// Ranks virtual arrays: those whose entries pass the Rayleigh test come
/// first, each group ordered by ascending `variation`. Returns input indices.
pub fn rank_virtual_arrays(arrays: &[VirtualArray], significance: f64) -> Result<Vec<usize>> {
    let mut keyed = arrays
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mags: Vec<f64> = a.channel.entries().iter().map(|z| z.norm()).collect();
            let passed = chi_squared_rayleigh_gof(&mags, significance)?.passed;
            Ok((!passed, a.variation, i))
        })
        .collect::<Result<Vec<_>>>()?;
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    Ok(keyed.into_iter().map(|(_, _, i)| i).collect())
}

/// Mean of a unit-power Rayleigh magnitude, `sqrt(pi)/2`.
pub fn unit_power_rayleigh_mean() -> f64 {
    PI.sqrt() / 2.0
}
