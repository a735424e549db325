//! Configuration-driven Monte Carlo engine, bound curves and SM/SMX
//! comparisons.
//!
//! Each SNR point is simulated in fixed-size blocks of channel uses. Block
//! `b` of point `p` draws everything from the stream `(seed, p, b)`, and
//! blocks are folded in index order until the stop rule is met, so the
//! output is identical for any worker count. Synthetic channels are redrawn
//! for every channel use; measured channels are consumed in file order,
//! restarting at the first snapshot for every SNR point.

use std::borrow::Cow;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{union_bound_aber, PepMode};
use crate::channel::{
    add_noise, draw_iid_rayleigh, draw_kronecker_channel, noise_variance_from_snr_db,
    sigma2_from_snr_db, ChannelMatrix, CorrelationSpec,
};
use crate::detect::{detect_sm_ml, SmxDetector, DEFAULT_SMX_CANDIDATE_CAP};
use crate::error::{Error, Result};
use crate::measurements::{estimate_correlation_matrices, load_measurement_file, LoadOptions, MeasurementSet};
use crate::modem::{
    map_bits_sm, map_bits_smx, sm_bits_per_use, smx_bits_per_use, BitWord, QamConstellation,
};
use crate::rng::derive_rng;

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "SMSIM_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Sm,
    Smx,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sm" => Ok(Scheme::Sm),
            "smx" => Ok(Scheme::Smx),
            _ => Err(Error::Config(format!("unknown scheme '{s}'"))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Sm => "SM",
            Scheme::Smx => "SMX",
        })
    }
}

fn default_bin() -> usize {
    1
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ChannelSource {
    /// Uncorrelated Rayleigh fading.
    Iid,
    /// Kronecker model with exponential correlation on both ends.
    Expcorr { beta_tx: f64, beta_rx: f64 },
    /// Measured snapshots from a file in the measurement format. The leading
    /// `nr` rows and `nt` columns of each snapshot are used.
    File {
        path: PathBuf,
        #[serde(default = "default_bin")]
        bin: usize,
        #[serde(default = "default_true")]
        normalize: bool,
    },
}

impl std::str::FromStr for ChannelSource {
    type Err = Error;

    /// `iid`, `expcorr:<beta_tx>,<beta_rx>` or `file:<path>`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "iid" {
            return Ok(ChannelSource::Iid);
        }
        if let Some(rest) = s.strip_prefix("expcorr:") {
            let parts: Vec<&str> = rest.split(',').collect();
            let parse = |v: &str| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad decay coefficient '{v}'")))
            };
            if parts.len() != 2 {
                return Err(Error::Config(format!(
                    "expected expcorr:<beta_tx>,<beta_rx>, got '{s}'"
                )));
            }
            return Ok(ChannelSource::Expcorr {
                beta_tx: parse(parts[0])?,
                beta_rx: parse(parts[1])?,
            });
        }
        if let Some(path) = s.strip_prefix("file:") {
            return Ok(ChannelSource::File {
                path: PathBuf::from(path),
                bin: 1,
                normalize: true,
            });
        }
        Err(Error::Config(format!("unknown channel source '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopRule {
    pub min_bit_errors: u64,
    pub max_bits: u64,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            min_bit_errors: 500,
            max_bits: 100_000_000,
        }
    }
}

fn default_block_symbols() -> usize {
    2048
}

fn default_cap() -> u64 {
    DEFAULT_SMX_CANDIDATE_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub scheme: Scheme,
    pub nt: usize,
    pub nr: usize,
    pub mod_order: usize,
    pub snr_grid_db: Vec<f64>,
    pub channel: ChannelSource,
    #[serde(default)]
    pub stop_rule: StopRule,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub pep_mode: PepMode,
    /// Channel uses per independently seeded block.
    #[serde(default = "default_block_symbols")]
    pub block_symbols: usize,
    #[serde(default = "default_cap")]
    pub smx_candidate_cap: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
}

impl SimulationConfig {
    pub fn new(scheme: Scheme, nt: usize, nr: usize, mod_order: usize) -> Self {
        Self {
            scheme,
            nt,
            nr,
            mod_order,
            snr_grid_db: Vec::new(),
            channel: ChannelSource::Iid,
            stop_rule: StopRule::default(),
            seed: 0,
            pep_mode: PepMode::Exact,
            block_symbols: default_block_symbols(),
            smx_candidate_cap: default_cap(),
            output_path: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn constellation(&self) -> Result<QamConstellation> {
        QamConstellation::new(self.mod_order)
    }

    /// Bits per channel use.
    pub fn bits_per_use(&self) -> Result<u32> {
        let c = self.constellation()?;
        match self.scheme {
            Scheme::Sm => sm_bits_per_use(self.nt, &c),
            Scheme::Smx => smx_bits_per_use(self.nt, &c),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nt == 0 || self.nr == 0 {
            return Err(Error::Config("nt and nr must be positive".into()));
        }
        self.bits_per_use()
            .map_err(|e| Error::Config(format!("{} with Nt={}: {e}", self.scheme, self.nt)))?;
        if self.snr_grid_db.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("SNR grid values must be finite".into()));
        }
        if self.snr_grid_db.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("SNR grid must be strictly increasing".into()));
        }
        if self.stop_rule.min_bit_errors == 0 || self.stop_rule.max_bits == 0 {
            return Err(Error::Config("stop rule limits must be positive".into()));
        }
        if self.block_symbols == 0 {
            return Err(Error::Config("block size must be positive".into()));
        }
        if let ChannelSource::Expcorr { beta_tx, beta_rx } = self.channel {
            if !(beta_tx >= 0.0 && beta_rx >= 0.0) {
                return Err(Error::Config("decay coefficients must be >= 0".into()));
            }
        }
        Ok(())
    }

    /// Short hash of everything that influences the results.
    pub fn digest(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.output_path = None;
        let text = canonical.to_toml()?;
        let hash = Sha256::digest(text.as_bytes());
        Ok(hex::encode(&hash[..8]))
    }
}

/// Parses `start:step:stop` (inclusive stop) into an SNR grid.
pub fn parse_snr_range(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad SNR range component '{v}'")))
        })
        .collect::<Result<_>>()?;
    let [start, step, stop] = parts[..] else {
        return Err(Error::Config(format!("expected start:step:stop, got '{s}'")));
    };
    if !(step > 0.0) || stop < start {
        return Err(Error::Config(format!("empty or invalid SNR range '{s}'")));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + step * i as f64).collect())
}

/// Per-run options that do not affect results.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub workers: usize,
}

impl RunOptions {
    pub fn single_threaded() -> Self {
        Self { workers: 1 }
    }

    /// Worker count from [`WORKERS_ENV`], else the available parallelism.
    pub fn from_env() -> Self {
        let workers = std::env::var(WORKERS_ENV)
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&w| w > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        Self { workers }
    }
}

impl Default for RunOptions {
    fn default() -> Self {
        Self::from_env()
    }
}

/// Runtime source of channel matrices.
#[derive(Debug, Clone)]
pub enum ChannelProvider {
    Iid { nr: usize, nt: usize },
    Kronecker(CorrelationSpec),
    Snapshots(Arc<[ChannelMatrix]>),
}

impl ChannelProvider {
    pub fn from_config(config: &SimulationConfig) -> Result<Self> {
        match &config.channel {
            ChannelSource::Iid => Ok(Self::Iid {
                nr: config.nr,
                nt: config.nt,
            }),
            ChannelSource::Expcorr { beta_tx, beta_rx } => Ok(Self::Kronecker(
                CorrelationSpec::exponential(config.nt, config.nr, *beta_tx, *beta_rx)?,
            )),
            ChannelSource::File {
                path,
                bin,
                normalize,
            } => {
                let set = load_measurement_file(path, *bin, LoadOptions { normalize: *normalize })?;
                Self::from_measurement(&set, config.nr, config.nt)
            }
        }
    }

    /// Uses the leading `nr x nt` block of every snapshot.
    pub fn from_measurement(set: &MeasurementSet, nr: usize, nt: usize) -> Result<Self> {
        let snaps = set
            .snapshots()
            .iter()
            .map(|h| {
                if h.nr() == nr && h.nt() == nt {
                    Ok(h.clone())
                } else {
                    h.truncated(nr, nt)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if snaps.is_empty() {
            return Err(Error::InsufficientData("measurement has no snapshots".into()));
        }
        Ok(Self::Snapshots(snaps.into()))
    }

    fn dims(&self) -> (usize, usize) {
        match self {
            Self::Iid { nr, nt } => (*nr, *nt),
            Self::Kronecker(spec) => (spec.nr(), spec.nt()),
            Self::Snapshots(s) => (s[0].nr(), s[0].nt()),
        }
    }

    fn channel(&self, use_index: u64, rng: &mut crate::rng::SimRng) -> Result<Cow<'_, ChannelMatrix>> {
        match self {
            Self::Iid { nr, nt } => Ok(Cow::Owned(draw_iid_rayleigh(*nr, *nt, rng)?)),
            Self::Kronecker(spec) => Ok(Cow::Owned(draw_kronecker_channel(
                spec,
                spec.nr(),
                spec.nt(),
                rng,
            )?)),
            Self::Snapshots(s) => Ok(Cow::Borrowed(&s[(use_index % s.len() as u64) as usize])),
        }
    }

    /// Correlation matrices matching this source, for the analytical bound.
    pub fn correlation(&self) -> Result<CorrelationSpec> {
        match self {
            Self::Iid { nr, nt } => CorrelationSpec::identity(*nt, *nr),
            Self::Kronecker(spec) => Ok(spec.clone()),
            Self::Snapshots(s) => {
                let set = MeasurementSet::new(s.to_vec(), 1, 1, "", "")?;
                estimate_correlation_matrices(&set)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AberPoint {
    pub snr_db: f64,
    pub aber: f64,
    pub bits: u64,
    pub errors: u64,
    /// Stopped on the bit budget before collecting the requested errors.
    pub max_bits_hit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundPoint {
    pub snr_db: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AberCurve {
    pub points: Vec<AberPoint>,
    pub bound: Option<Vec<BoundPoint>>,
    pub config_digest: String,
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    bits: u64,
    errors: u64,
}

struct Engine<'a> {
    config: &'a SimulationConfig,
    provider: &'a ChannelProvider,
    constellation: QamConstellation,
    m: u32,
    use_cap: u64,
}

impl Engine<'_> {
    fn block_range(&self, block: u64) -> (u64, u64) {
        let start = block * self.config.block_symbols as u64;
        let end = (start + self.config.block_symbols as u64).min(self.use_cap);
        (start, end)
    }

    fn run_block(&self, point: usize, sigma2: f64, block: u64) -> Result<Tally> {
        let (start, end) = self.block_range(block);
        let mut rng = derive_rng(self.config.seed, &[point as u64, block]);
        let nt = self.config.nt;
        let nr = self.config.nr;
        let mask = if self.m == 64 { u64::MAX } else { (1u64 << self.m) - 1 };
        let mut y = vec![Complex64::new(0.0, 0.0); nr];
        let mut smx = match self.config.scheme {
            Scheme::Smx => Some(SmxDetector::new(
                nt,
                &self.constellation,
                self.config.smx_candidate_cap,
            )?),
            Scheme::Sm => None,
        };
        let mut tally = Tally::default();
        for t in start..end {
            let h = self.provider.channel(t, &mut rng)?;
            let word = BitWord::new(rng.random::<u64>() & mask, self.m)?;
            let detected = match &mut smx {
                None => {
                    let frame = map_bits_sm(word, nt, &self.constellation)?;
                    for (yr, &hr) in y.iter_mut().zip(h.column(frame.antenna - 1)) {
                        *yr = hr * frame.symbol;
                    }
                    add_noise(&mut y, sigma2, &mut rng);
                    detect_sm_ml(&y, &h, &self.constellation, nt)?.estimate.bits
                }
                Some(det) => {
                    let frame = map_bits_smx(word, nt, &self.constellation)?;
                    h.mul_vec_into(&frame.transmit_vector(), &mut y);
                    add_noise(&mut y, sigma2, &mut rng);
                    det.detect(&y, &h, &self.constellation)?.estimate.bits
                }
            };
            tally.bits += u64::from(self.m);
            tally.errors += u64::from((word.value() ^ detected.value()).count_ones());
        }
        Ok(tally)
    }

    fn run_point(&self, point: usize, snr_db: f64, pool: &rayon::ThreadPool, workers: usize) -> Result<AberPoint> {
        let sigma2 = sigma2_from_snr_db(snr_db);
        let rule = self.config.stop_rule;
        let total_blocks = self.use_cap.div_ceil(self.config.block_symbols as u64);
        let wave = (workers * 2).max(1) as u64;
        let mut acc = Tally::default();
        let mut next = 0u64;
        while next < total_blocks {
            let upto = (next + wave).min(total_blocks);
            let tallies: Vec<Result<Tally>> = if workers <= 1 {
                (next..upto).map(|b| self.run_block(point, sigma2, b)).collect()
            } else {
                pool.install(|| {
                    (next..upto)
                        .into_par_iter()
                        .map(|b| self.run_block(point, sigma2, b))
                        .collect()
                })
            };
            for t in tallies {
                let t = t?;
                acc.bits += t.bits;
                acc.errors += t.errors;
                if acc.errors >= rule.min_bit_errors {
                    return Ok(self.finish(snr_db, acc, false));
                }
            }
            next = upto;
        }
        Ok(self.finish(snr_db, acc, true))
    }

    fn finish(&self, snr_db: f64, acc: Tally, max_bits_hit: bool) -> AberPoint {
        AberPoint {
            snr_db,
            aber: if acc.bits == 0 { 0.0 } else { acc.errors as f64 / acc.bits as f64 },
            bits: acc.bits,
            errors: acc.errors,
            max_bits_hit,
        }
    }
}

/// Monte Carlo ABER curve for `config`.
pub fn run_monte_carlo(config: &SimulationConfig, options: RunOptions) -> Result<AberCurve> {
    config.validate()?;
    let provider = ChannelProvider::from_config(config)?;
    run_monte_carlo_with(config, &provider, options)
}

/// As [`run_monte_carlo`] with an explicit channel source; the config's
/// `channel` field is then only used for the digest.
pub fn run_monte_carlo_with(
    config: &SimulationConfig,
    provider: &ChannelProvider,
    options: RunOptions,
) -> Result<AberCurve> {
    config.validate()?;
    if provider.dims() != (config.nr, config.nt) {
        return Err(Error::Dimension(format!(
            "channel source is {}x{}, configuration asks for {}x{}",
            provider.dims().0,
            provider.dims().1,
            config.nr,
            config.nt
        )));
    }
    let m = config.bits_per_use()?;
    let constellation = config.constellation()?;
    if config.scheme == Scheme::Smx {
        // Fail early rather than inside a worker.
        SmxDetector::new(config.nt, &constellation, config.smx_candidate_cap)?;
    }
    let engine = Engine {
        config,
        provider,
        constellation,
        m,
        use_cap: config.stop_rule.max_bits.div_ceil(u64::from(m)),
    };
    let workers = options.workers.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let points = config
        .snr_grid_db
        .iter()
        .enumerate()
        .map(|(p, &snr)| engine.run_point(p, snr, &pool, workers))
        .collect::<Result<Vec<_>>>()?;
    Ok(AberCurve {
        points,
        bound: None,
        config_digest: config.digest()?,
    })
}

/// Union-bound curve for an SM configuration.
pub fn run_bound(config: &SimulationConfig) -> Result<Vec<BoundPoint>> {
    config.validate()?;
    let provider = ChannelProvider::from_config(config)?;
    run_bound_with(config, &provider)
}

pub fn run_bound_with(config: &SimulationConfig, provider: &ChannelProvider) -> Result<Vec<BoundPoint>> {
    if config.scheme != Scheme::Sm {
        return Err(Error::Config("the analytical bound is only available for SM".into()));
    }
    let spec = provider.correlation()?;
    let constellation = config.constellation()?;
    config
        .snr_grid_db
        .iter()
        .map(|&snr_db| {
            Ok(BoundPoint {
                snr_db,
                value: union_bound_aber(
                    config.nt,
                    &constellation,
                    &spec,
                    noise_variance_from_snr_db(snr_db),
                    config.pep_mode,
                )?,
            })
        })
        .collect()
}

/// SNR (dB) at which the curve crosses `target`, by linear interpolation of
/// `log10(aber)` between the bracketing points.
pub fn snr_at_aber(points: &[AberPoint], target: f64) -> Option<f64> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.aber > 0.0)
        .map(|p| (p.snr_db, p.aber))
        .collect();
    let lt = target.log10();
    for w in usable.windows(2) {
        let ((s0, a0), (s1, a1)) = (w[0], w[1]);
        if a0 == target {
            return Some(s0);
        }
        if a0 > target && a1 <= target {
            let (l0, l1) = (a0.log10(), a1.log10());
            return Some(s0 + (lt - l0) * (s1 - s0) / (l1 - l0));
        }
    }
    usable.last().filter(|p| p.1 == target).map(|p| p.0)
}

#[derive(Debug, Clone)]
pub struct PairComparison {
    pub first: AberCurve,
    pub second: AberCurve,
    pub first_label: String,
    pub second_label: String,
    /// `(target ABER, SNR of second minus SNR of first)`; positive means the
    /// first configuration needs less SNR.
    pub gaps_db: Vec<(f64, Option<f64>)>,
}

pub fn config_label(config: &SimulationConfig) -> String {
    format!("{} Nt={} M={}", config.scheme, config.nt, config.mod_order)
}

/// Runs each `(sm, smx)` pair over the same channel source and seed and
/// reports the SNR gap at each target ABER.
pub fn compare_sm_smx(
    pairs: &[(SimulationConfig, SimulationConfig)],
    targets: &[f64],
    options: RunOptions,
) -> Result<Vec<PairComparison>> {
    pairs
        .iter()
        .map(|(a, b)| {
            let pa = ChannelProvider::from_config(a)?;
            let pb = ChannelProvider::from_config(b)?;
            compare_pair_with(a, &pa, b, &pb, targets, options)
        })
        .collect()
}

pub fn compare_pair_with(
    first: &SimulationConfig,
    first_provider: &ChannelProvider,
    second: &SimulationConfig,
    second_provider: &ChannelProvider,
    targets: &[f64],
    options: RunOptions,
) -> Result<PairComparison> {
    let (ma, mb) = (first.bits_per_use()?, second.bits_per_use()?);
    if ma != mb {
        return Err(Error::Config(format!(
            "compared configurations must carry the same bits per use ({ma} vs {mb})"
        )));
    }
    if first.nr != second.nr {
        return Err(Error::Config(format!(
            "compared configurations must share Nr ({} vs {})",
            first.nr, second.nr
        )));
    }
    let ca = run_monte_carlo_with(first, first_provider, options)?;
    let cb = run_monte_carlo_with(second, second_provider, options)?;
    let gaps_db = targets
        .iter()
        .map(|&t| {
            let gap = match (snr_at_aber(&ca.points, t), snr_at_aber(&cb.points, t)) {
                (Some(sa), Some(sb)) => Some(sb - sa),
                _ => None,
            };
            (t, gap)
        })
        .collect();
    Ok(PairComparison {
        first: ca,
        second: cb,
        first_label: config_label(first),
        second_label: config_label(second),
        gaps_db,
    })
}

pub const CSV_HEADER: &str = "snr_db,aber,bits,errors,bound";

/// Writes a curve as CSV. Rows are the union of simulated and bound SNR
/// values, ascending; missing fields are left empty.
pub fn write_csv(curve: &AberCurve, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "# config_digest={}", curve.config_digest)?;
    let truncated: Vec<String> = curve
        .points
        .iter()
        .filter(|p| p.max_bits_hit)
        .map(|p| p.snr_db.to_string())
        .collect();
    if !truncated.is_empty() {
        writeln!(w, "# max_bits_hit={}", truncated.join(";"))?;
    }
    writeln!(w, "{CSV_HEADER}")?;
    let bound = curve.bound.as_deref().unwrap_or(&[]);
    let mut snrs: Vec<f64> = curve
        .points
        .iter()
        .map(|p| p.snr_db)
        .chain(bound.iter().map(|b| b.snr_db))
        .collect();
    snrs.sort_by(f64::total_cmp);
    snrs.dedup();
    for snr in snrs {
        let p = curve.points.iter().find(|p| p.snr_db == snr);
        let b = bound.iter().find(|b| b.snr_db == snr);
        let (aber, bits, errors) = match p {
            Some(p) => (p.aber.to_string(), p.bits.to_string(), p.errors.to_string()),
            None => Default::default(),
        };
        let bound = b.map(|b| b.value.to_string()).unwrap_or_default();
        writeln!(w, "{snr},{aber},{bits},{errors},{bound}")?;
    }
    Ok(())
}

pub fn emit_csv(curve: &AberCurve, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_csv(curve, &mut buf).expect("writing to memory");
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Parses the output of [`write_csv`].
pub fn read_csv(r: impl BufRead) -> Result<AberCurve> {
    let mut curve = AberCurve::default();
    let mut truncated: Vec<f64> = Vec::new();
    let mut bound = Vec::new();
    let mut saw_header = false;
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))?;
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(d) = comment.strip_prefix("config_digest=") {
                curve.config_digest = d.to_string();
            } else if let Some(list) = comment.strip_prefix("max_bits_hit=") {
                truncated = list
                    .split(';')
                    .map(|v| v.parse::<f64>().map_err(|_| Error::Format(format!("bad SNR '{v}'"))))
                    .collect::<Result<_>>()?;
            }
            continue;
        }
        if !saw_header {
            if line.trim() != CSV_HEADER {
                return Err(Error::Format(format!("unexpected CSV header '{line}'")));
            }
            saw_header = true;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Format(format!("line {}: expected 5 fields", n + 1)));
        }
        let num = |v: &str| -> Result<Option<f64>> {
            if v.is_empty() {
                Ok(None)
            } else {
                v.parse::<f64>()
                    .map(Some)
                    .map_err(|_| Error::Format(format!("line {}: bad number '{v}'", n + 1)))
            }
        };
        let int = |v: &str| -> Result<u64> {
            v.parse::<u64>()
                .map_err(|_| Error::Format(format!("line {}: bad count '{v}'", n + 1)))
        };
        let snr_db = num(fields[0])?.ok_or_else(|| Error::Format(format!("line {}: missing SNR", n + 1)))?;
        if let Some(aber) = num(fields[1])? {
            curve.points.push(AberPoint {
                snr_db,
                aber,
                bits: int(fields[2])?,
                errors: int(fields[3])?,
                max_bits_hit: truncated.contains(&snr_db),
            });
        }
        if let Some(value) = num(fields[4])? {
            bound.push(BoundPoint { snr_db, value });
        }
    }
    if !saw_header {
        return Err(Error::Format("missing CSV header".into()));
    }
    if !bound.is_empty() {
        curve.bound = Some(bound);
    }
    Ok(curve)
}

pub fn read_csv_file(path: impl AsRef<Path>) -> Result<AberCurve> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snr_range_parsing() {
        assert_eq!(parse_snr_range("0:2:6").unwrap(), vec![0.0, 2.0, 4.0, 6.0]);
        assert_eq!(parse_snr_range("1:0.5:2").unwrap(), vec![1.0, 1.5, 2.0]);
        assert!(parse_snr_range("0:0:6").is_err());
        assert!(parse_snr_range("6:1:0").is_err());
        assert!(parse_snr_range("0:1").is_err());
    }

    #[test]
    fn channel_source_parsing() {
        assert_eq!("iid".parse::<ChannelSource>().unwrap(), ChannelSource::Iid);
        assert_eq!(
            "expcorr:0.5,0.8".parse::<ChannelSource>().unwrap(),
            ChannelSource::Expcorr {
                beta_tx: 0.5,
                beta_rx: 0.8
            }
        );
        assert!(matches!(
            "file:/tmp/x.bin".parse::<ChannelSource>().unwrap(),
            ChannelSource::File { bin: 1, normalize: true, .. }
        ));
        assert!("expcorr:0.5".parse::<ChannelSource>().is_err());
        assert!("rician".parse::<ChannelSource>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = SimulationConfig::new(Scheme::Sm, 4, 4, 4);
        c.snr_grid_db = vec![0.0, 2.0];
        assert!(c.validate().is_ok());
        c.snr_grid_db = vec![2.0, 2.0];
        assert!(c.validate().is_err());
        c.snr_grid_db = vec![0.0];
        c.nt = 3;
        assert!(c.validate().is_err());
        c.scheme = Scheme::Smx;
        assert!(c.validate().is_ok());
        c.stop_rule.min_bit_errors = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn toml_round_trip_and_digest() {
        let mut c = SimulationConfig::new(Scheme::Sm, 4, 4, 4);
        c.snr_grid_db = vec![0.0, 5.0];
        c.channel = ChannelSource::Expcorr {
            beta_tx: 0.5,
            beta_rx: 0.8,
        };
        let text = c.to_toml().unwrap();
        let back = SimulationConfig::from_toml(&text).unwrap();
        assert_eq!(back, c);
        let mut d = c.clone();
        d.output_path = Some("x.csv".into());
        assert_eq!(c.digest().unwrap(), d.digest().unwrap());
        d.seed = 1;
        assert_ne!(c.digest().unwrap(), d.digest().unwrap());
    }

    #[test]
    fn minimal_toml_uses_defaults() {
        let c = SimulationConfig::from_toml(
            r#"
            scheme = "smx"
            nt = 2
            nr = 4
            mod_order = 16
            snr_grid_db = [0.0, 10.0]
            [channel]
            kind = "iid"
            "#,
        )
        .unwrap();
        assert_eq!(c.stop_rule, StopRule::default());
        assert_eq!(c.pep_mode, PepMode::Exact);
        assert_eq!(c.bits_per_use().unwrap(), 8);
    }

    #[test]
    fn interpolation() {
        let pts = |v: &[(f64, f64)]| -> Vec<AberPoint> {
            v.iter()
                .map(|&(snr_db, aber)| AberPoint {
                    snr_db,
                    aber,
                    bits: 1,
                    errors: 0,
                    max_bits_hit: false,
                })
                .collect()
        };
        let p = pts(&[(0.0, 1e-1), (10.0, 1e-3), (20.0, 1e-5)]);
        assert!((snr_at_aber(&p, 1e-2).unwrap() - 5.0).abs() < 1e-12);
        assert!((snr_at_aber(&p, 1e-3).unwrap() - 10.0).abs() < 1e-12);
        assert!(snr_at_aber(&p, 1e-6).is_none());
    }

    #[test]
    fn empty_curve_csv() {
        let curve = AberCurve {
            config_digest: "abc".into(),
            ..Default::default()
        };
        let mut out = Vec::new();
        write_csv(&curve, &mut out).unwrap();
        assert_eq!(String::from_utf8(out.clone()).unwrap(), format!("# config_digest=abc\n{CSV_HEADER}\n"));
        assert_eq!(read_csv(&out[..]).unwrap(), curve);
    }

    #[test]
    fn csv_rejects_wrong_header() {
        assert!(read_csv("snr,aber\n1,2\n".as_bytes()).is_err());
        assert!(read_csv("".as_bytes()).is_err());
    }
}
