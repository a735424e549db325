//! Exhaustive maximum-likelihood detection for SM and SMX.
//!
//! Both detectors scan candidates in bit-word order and keep the first
//! strict minimum, so ties resolve to the smallest word. For SM the word
//! order is (antenna, symbol word) lexicographic.

use num_complex::Complex64;

use crate::channel::ChannelMatrix;
use crate::error::{Error, Result};
use crate::modem::{
    sm_bits_per_use, smx_amplitude, smx_bits_per_use, BitWord, Frame, QamConstellation, SmFrame,
    SmxFrame,
};

/// Default limit on the SMX search space.
pub const DEFAULT_SMX_CANDIDATE_CAP: u64 = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult<F> {
    pub estimate: F,
    /// Minimum squared Euclidean distance `||y - H x||^2`.
    pub metric: f64,
}

impl<F: Frame> DetectionResult<F> {
    pub fn bit_errors_vs(&self, reference: BitWord) -> Result<u32> {
        count_bit_errors(reference, self.estimate.bits())
    }
}

fn check_rx(y: &[Complex64], h: &ChannelMatrix) -> Result<()> {
    if y.len() != h.nr() {
        return Err(Error::Dimension(format!(
            "received vector has {} entries, channel has {} rows",
            y.len(),
            h.nr()
        )));
    }
    Ok(())
}

/// SM-ML: minimizes `sum_r |y_r - h_{l,r} s|^2` over all antennas and symbols.
pub fn detect_sm_ml(
    y: &[Complex64],
    h: &ChannelMatrix,
    constellation: &QamConstellation,
    nt: usize,
) -> Result<DetectionResult<SmFrame>> {
    check_rx(y, h)?;
    if h.nt() != nt {
        return Err(Error::Dimension(format!(
            "channel has {} columns, expected Nt={nt}",
            h.nt()
        )));
    }
    let m = sm_bits_per_use(nt, constellation)?;
    let k = constellation.bits_per_symbol();

    let mut best = (f64::INFINITY, 0usize, 0usize);
    for l in 0..nt {
        let col = h.column(l);
        for (w, &s) in constellation.points().iter().enumerate() {
            let mut metric = 0.0;
            for (&yr, &hr) in y.iter().zip(col) {
                metric += (yr - hr * s).norm_sqr();
            }
            if metric < best.0 {
                best = (metric, l, w);
            }
        }
    }
    let (metric, l, w) = best;
    let bits = BitWord::new(((l as u64) << k) | w as u64, m)?;
    Ok(DetectionResult {
        estimate: SmFrame {
            antenna: l + 1,
            symbol: constellation.point(w),
            symbol_word: w,
            bits,
        },
        metric,
    })
}

/// Number of SMX candidate vectors `M^Nt`, as a float to survive overflow.
pub fn smx_candidate_count(nt: usize, order: usize) -> f64 {
    (order as f64).powi(nt as i32)
}

/// SMX-ML over all `M^Nt` candidate vectors with the default search cap.
/// Candidates carry the `1/sqrt(Nt)` power normalization of
/// [`SmxFrame::transmit_vector`].
pub fn detect_smx_ml(
    y: &[Complex64],
    h: &ChannelMatrix,
    constellation: &QamConstellation,
) -> Result<DetectionResult<SmxFrame>> {
    detect_smx_ml_capped(y, h, constellation, DEFAULT_SMX_CANDIDATE_CAP)
}

pub fn detect_smx_ml_capped(
    y: &[Complex64],
    h: &ChannelMatrix,
    constellation: &QamConstellation,
    cap: u64,
) -> Result<DetectionResult<SmxFrame>> {
    SmxDetector::new(h.nt(), constellation, cap)?.detect(y, h, constellation)
}

/// Reusable SMX-ML detector; holds scratch space so the Monte Carlo loop does
/// not allocate per symbol.
#[derive(Debug, Clone)]
pub struct SmxDetector {
    nt: usize,
    m: u32,
    candidates: u64,
    products: Vec<Complex64>,
    residual: Vec<Complex64>,
}

impl SmxDetector {
    pub fn new(nt: usize, constellation: &QamConstellation, cap: u64) -> Result<Self> {
        let count = smx_candidate_count(nt, constellation.order());
        if count > cap as f64 {
            return Err(Error::SearchSpaceTooLarge {
                candidates: count,
                cap,
            });
        }
        let m = smx_bits_per_use(nt, constellation)?;
        Ok(Self {
            nt,
            m,
            candidates: count as u64,
            products: Vec::new(),
            residual: Vec::new(),
        })
    }

    pub fn detect(
        &mut self,
        y: &[Complex64],
        h: &ChannelMatrix,
        constellation: &QamConstellation,
    ) -> Result<DetectionResult<SmxFrame>> {
        check_rx(y, h)?;
        if h.nt() != self.nt {
            return Err(Error::Dimension(format!(
                "channel has {} columns, detector built for Nt={}",
                h.nt(),
                self.nt
            )));
        }
        let nr = h.nr();
        let order = constellation.order();
        let k = constellation.bits_per_symbol();
        let mask = (order - 1) as u64;

        // products[(i * M + w) * nr + r] = h_{r,i} * a * s_w
        let amp = smx_amplitude(self.nt);
        self.products.clear();
        for i in 0..self.nt {
            let col = h.column(i);
            for &s in constellation.points() {
                let s = s * amp;
                self.products.extend(col.iter().map(|&hr| hr * s));
            }
        }
        self.residual.resize(nr, Complex64::new(0.0, 0.0));

        let mut best = (f64::INFINITY, 0u64);
        for word in 0..self.candidates {
            self.residual.copy_from_slice(y);
            for i in 0..self.nt {
                let w = ((word >> (k * (self.nt - 1 - i) as u32)) & mask) as usize;
                let base = (i * order + w) * nr;
                for (res, p) in self.residual.iter_mut().zip(&self.products[base..base + nr]) {
                    *res -= p;
                }
            }
            let metric: f64 = self.residual.iter().map(|v| v.norm_sqr()).sum();
            if metric < best.0 {
                best = (metric, word);
            }
        }
        let (metric, word) = best;
        let symbol_words: Vec<usize> = (0..self.nt)
            .map(|i| ((word >> (k * (self.nt - 1 - i) as u32)) & mask) as usize)
            .collect();
        Ok(DetectionResult {
            estimate: SmxFrame {
                symbols: symbol_words.iter().map(|&w| constellation.point(w)).collect(),
                symbol_words,
                bits: BitWord::new(word, self.m)?,
            },
            metric,
        })
    }
}

/// Hamming distance between two words of equal length.
pub fn count_bit_errors(tx: BitWord, rx: BitWord) -> Result<u32> {
    if tx.len() != rx.len() {
        return Err(Error::Dimension(format!(
            "cannot compare {}-bit and {}-bit words",
            tx.len(),
            rx.len()
        )));
    }
    Ok((tx.value() ^ rx.value()).count_ones())
}
