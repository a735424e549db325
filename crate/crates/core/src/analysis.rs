//! Union bound on the SM bit error rate over Kronecker-correlated Rayleigh
//! fading, and ML receiver complexity counts.
//!
//! `noise_var` in this module is the total complex noise variance per receive
//! antenna (`N0 = 2 * sigma2`, see [`crate::channel`]). With it the
//! conditional pairwise error probability is `Q(sqrt(||H psi||^2 / (2 N0)))`
//! and averaging over the fading gives
//!
//! ```text
//! PEP = 1/pi * int_0^{pi/2} prod_j (1 + lambda_j mu / (4 N0 sin^2 t))^{-1} dt
//! ```
//!
//! where `lambda_j` are the eigenvalues of `R_rx` and
//! `mu = psi^H R_tx psi = |s_t|^2 + |s|^2 - 2 Re{s_t s^* R_tx(l, l_t)}`.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{hermitian_eigenvalues, CMatrix, CorrelationSpec};
use crate::error::{Error, Result};
use crate::modem::{sm_bits_per_use, QamConstellation};

/// Default Gauss-Legendre order for [`pep_exact`].
pub const DEFAULT_QUADRATURE_NODES: usize = 64;

/// Power of the endpoint-clustering substitution `t = (pi/2) u^p`.
const CLUSTER_POWER: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PepMode {
    /// Quadrature of the MGF-averaged Q-function integral.
    #[default]
    Exact,
    /// Integrand evaluated at `t = pi/2`; always at least the exact value.
    Chernoff,
}

impl std::str::FromStr for PepMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(PepMode::Exact),
            "chernoff" => Ok(PepMode::Chernoff),
            _ => Err(Error::Config(format!("unknown PEP mode '{s}'"))),
        }
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "quadrature needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integral of `f` over `[a, b]`.
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    (p1, n as f64 * (x * p1 - p0) / (x * x - 1.0))
}

/// One ordered pair (transmitted, hypothesised) of SM transmit vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PepTerm {
    /// Transmitted (antenna, symbol); antennas are 1-based.
    pub tx: (usize, Complex64),
    pub hyp: (usize, Complex64),
    pub mu: f64,
    pub rx_eigenvalues: Vec<f64>,
}

impl PepTerm {
    pub fn new(
        tx: (usize, Complex64),
        hyp: (usize, Complex64),
        r_tx: &CMatrix,
        rx_eigenvalues: Vec<f64>,
    ) -> Result<Self> {
        let nt = r_tx.nrows();
        for (l, _) in [tx, hyp] {
            if l == 0 || l > nt {
                return Err(Error::AntennaOutOfRange { index: l, nt });
            }
        }
        Ok(Self {
            tx,
            hyp,
            mu: pair_mu(tx, hyp, r_tx),
            rx_eigenvalues,
        })
    }

    /// A term with a prescribed `mu`, for evaluating the PEP directly.
    pub fn from_mu(mu: f64, rx_eigenvalues: Vec<f64>) -> Self {
        Self {
            tx: (1, Complex64::new(0.0, 0.0)),
            hyp: (1, Complex64::new(0.0, 0.0)),
            mu,
            rx_eigenvalues,
        }
    }
}

/// `psi^H R_tx psi` for `psi = s_t e_{l_t} - s e_l`.
fn pair_mu(tx: (usize, Complex64), hyp: (usize, Complex64), r_tx: &CMatrix) -> f64 {
    let (lt, st) = tx;
    let (l, s) = hyp;
    let cross = st * s.conj() * r_tx[(l - 1, lt - 1)];
    (st.norm_sqr() + s.norm_sqr() - 2.0 * cross.re).max(0.0)
}

fn check_noise(noise_var: f64) -> Result<()> {
    if !(noise_var > 0.0) || !noise_var.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "noise variance must be positive and finite, got {noise_var}"
        )));
    }
    Ok(())
}

/// Fading-averaged pairwise error probability by quadrature.
pub fn pep_exact(term: &PepTerm, noise_var: f64) -> Result<f64> {
    pep_exact_with(term, noise_var, &GaussLegendre::new(DEFAULT_QUADRATURE_NODES))
}

/// [`pep_exact`] with a caller-supplied rule.
///
/// The substitution `t = (pi/2) u^4` clusters nodes near `t = 0`, where the
/// integrand `sin^2 t / (sin^2 t + c)` varies on a scale of `sqrt(c)`.
pub fn pep_exact_with(term: &PepTerm, noise_var: f64, rule: &GaussLegendre) -> Result<f64> {
    check_noise(noise_var)?;
    let coeffs: Vec<f64> = term
        .rx_eigenvalues
        .iter()
        .map(|&l| l.max(0.0) * term.mu / (4.0 * noise_var))
        .filter(|&c| c > 0.0)
        .collect();
    if coeffs.is_empty() {
        return Ok(0.5);
    }
    let p = CLUSTER_POWER;
    let integral = rule.integrate(0.0, 1.0, |u| {
        let t = FRAC_PI_2 * u.powi(p);
        let dt = FRAC_PI_2 * f64::from(p) * u.powi(p - 1);
        let s2 = t.sin().powi(2);
        let mut prod = 1.0;
        for &c in &coeffs {
            prod *= s2 / (s2 + c);
        }
        prod * dt
    });
    Ok((integral / PI).clamp(0.0, 0.5))
}

/// Chernoff-type bound `1/2 prod_j (1 + lambda_j mu / (4 N0))^{-1}`.
pub fn pep_chernoff(term: &PepTerm, noise_var: f64) -> Result<f64> {
    check_noise(noise_var)?;
    Ok(0.5
        * term
            .rx_eigenvalues
            .iter()
            .map(|&l| 1.0 / (1.0 + l.max(0.0) * term.mu / (4.0 * noise_var)))
            .product::<f64>())
}

pub fn pep(term: &PepTerm, noise_var: f64, mode: PepMode) -> Result<f64> {
    match mode {
        PepMode::Exact => pep_exact(term, noise_var),
        PepMode::Chernoff => pep_chernoff(term, noise_var),
    }
}

/// Union bound on the SM ABER, clipped to `[0, 0.5]`.
pub fn union_bound_aber(
    nt: usize,
    constellation: &QamConstellation,
    spec: &CorrelationSpec,
    noise_var: f64,
    mode: PepMode,
) -> Result<f64> {
    Ok(union_bound_raw(nt, constellation, spec, noise_var, mode)?.clamp(0.0, 0.5))
}

/// The unclipped union-bound sum
/// `sum_{a != b} N(a, b) / m * PEP(a -> b) / 2^m`.
pub fn union_bound_raw(
    nt: usize,
    constellation: &QamConstellation,
    spec: &CorrelationSpec,
    noise_var: f64,
    mode: PepMode,
) -> Result<f64> {
    if spec.nt() != nt {
        return Err(Error::Dimension(format!(
            "R_tx is {0}x{0} but Nt={nt}",
            spec.nt()
        )));
    }
    check_noise(noise_var)?;
    let m = sm_bits_per_use(nt, constellation)?;
    if m > 20 {
        return Err(Error::InvalidParameter(format!(
            "union bound over 2^{m} x 2^{m} pairs is not tractable"
        )));
    }
    let eig: Vec<f64> = hermitian_eigenvalues(spec.r_rx())?
        .into_iter()
        .map(|l| l.max(0.0))
        .collect();
    let rule = GaussLegendre::new(DEFAULT_QUADRATURE_NODES);
    let k = constellation.bits_per_symbol();
    let words = 1u64 << m;
    let sym_mask = (1u64 << k) - 1;

    let mut cache: HashMap<u64, f64> = HashMap::new();
    let mut total = 0.0;
    for a in 0..words {
        let tx = ((a >> k) as usize + 1, constellation.point((a & sym_mask) as usize));
        let mut row = 0.0;
        for b in 0..words {
            let n = (a ^ b).count_ones();
            if n == 0 {
                continue;
            }
            let hyp = ((b >> k) as usize + 1, constellation.point((b & sym_mask) as usize));
            let mu = pair_mu(tx, hyp, spec.r_tx());
            let p = match cache.get(&mu.to_bits()) {
                Some(&p) => p,
                None => {
                    let term = PepTerm::from_mu(mu, eig.clone());
                    let p = match mode {
                        PepMode::Exact => pep_exact_with(&term, noise_var, &rule)?,
                        PepMode::Chernoff => pep_chernoff(&term, noise_var)?,
                    };
                    cache.insert(mu.to_bits(), p);
                    p
                }
            };
            row += f64::from(n) * p;
        }
        total += row;
    }
    Ok(total / (f64::from(m) * words as f64))
}

/// Real multiplications needed by the SM and SMX ML receivers at equal
/// spectral efficiency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComplexityReport {
    pub c_sm: u128,
    pub c_smx: u128,
    /// Percentage reduction of SM relative to SMX.
    pub c_rel: f64,
}

pub fn complexity_report(nt: usize, nr: usize, m: u32) -> Result<ComplexityReport> {
    if nt == 0 || nr == 0 || m == 0 || m > 100 {
        return Err(Error::InvalidParameter(format!(
            "complexity needs positive Nt, Nr, m (got {nt}, {nr}, {m})"
        )));
    }
    let search = 1u128 << m;
    Ok(ComplexityReport {
        c_sm: 8 * nr as u128 * search,
        c_smx: 4 * (nt as u128 + 1) * nr as u128 * search,
        c_rel: 100.0 * (1.0 - 2.0 / (nt as f64 + 1.0)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let rule = GaussLegendre::new(8);
        // Exact up to degree 15.
        let v = rule.integrate(0.0, 2.0, |x| x.powi(15));
        assert!((v - 2f64.powi(16) / 16.0).abs() < 1e-9);
        let w: f64 = GaussLegendre::new(64).weights.iter().sum();
        assert!((w - 2.0).abs() < 1e-13);
    }

    #[test]
    fn zero_distance_gives_half() {
        let t = PepTerm::from_mu(0.0, vec![1.0; 4]);
        assert_eq!(pep_exact(&t, 0.1).unwrap(), 0.5);
        assert_eq!(pep_chernoff(&t, 0.1).unwrap(), 0.5);
    }

    #[test]
    fn chernoff_hand_value() {
        let t = PepTerm::from_mu(4.0, vec![1.0; 4]);
        let v = pep_chernoff(&t, 0.25).unwrap();
        assert!((v - 0.5 * 5f64.powi(-4)).abs() < 1e-15);
    }

    #[test]
    fn vanishing_snr_approaches_half() {
        let t = PepTerm::from_mu(2.0, vec![1.0, 1.0]);
        let mut prev = 0.0;
        for nv in [1.0, 10.0, 100.0, 1e4, 1e8] {
            let p = pep_exact(&t, nv).unwrap();
            assert!(p > prev);
            prev = p;
        }
        assert!((0.5 - prev).abs() < 1e-3);
    }

    #[test]
    fn rejects_nonpositive_noise() {
        let t = PepTerm::from_mu(1.0, vec![1.0]);
        assert!(pep_exact(&t, 0.0).is_err());
        assert!(pep_chernoff(&t, -1.0).is_err());
    }

    #[test]
    fn mu_collapses_on_same_antenna() {
        let r = crate::channel::exponential_correlation(4, 0.3).unwrap();
        let st = Complex64::new(0.7, 0.7);
        let s = Complex64::new(-0.7, 0.7);
        let term = PepTerm::new((2, st), (2, s), &r, vec![1.0]).unwrap();
        assert!((term.mu - (st - s).norm_sqr()).abs() < 1e-14);
        let other = PepTerm::new((1, st), (3, s), &r, vec![1.0]).unwrap();
        let expected = st.norm_sqr() + s.norm_sqr() - 2.0 * (st * s.conj()).re * (-0.6f64).exp();
        assert!((other.mu - expected).abs() < 1e-14);
        assert!(PepTerm::new((0, st), (1, s), &r, vec![1.0]).is_err());
    }

    #[test]
    fn complexity_examples() {
        let r = complexity_report(4, 4, 4).unwrap();
        assert_eq!(r.c_sm, 8 * 4 * 16);
        assert_eq!(r.c_smx, 4 * 5 * 4 * 16);
        assert!((r.c_rel - 60.0).abs() < 1e-12);
        assert!((complexity_report(1, 4, 2).unwrap().c_rel).abs() < 1e-12);
        assert!(complexity_report(0, 4, 2).is_err());
    }

    #[test]
    fn pep_mode_parse() {
        assert_eq!("exact".parse::<PepMode>().unwrap(), PepMode::Exact);
        assert_eq!("chernoff".parse::<PepMode>().unwrap(), PepMode::Chernoff);
        assert!("loose".parse::<PepMode>().is_err());
    }
}
