//! Constellations and bit mapping for the SM and SMX transmitters.
//!
//! Bit words are read most-significant bit first. For spatial modulation the
//! leading `log2(Nt)` bits select the active antenna and the trailing
//! `log2(M)` bits select the constellation point. Antenna indices are
//! 1-based everywhere in the public interface.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Tolerance used when matching a received symbol value against the
/// constellation points.
const POINT_MATCH_TOL: f64 = 1e-9;

/// A fixed-length word of at most 64 bits, most-significant bit first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BitWord {
    value: u64,
    len: u32,
}

impl BitWord {
    pub fn new(value: u64, len: u32) -> Result<Self> {
        if len > 64 {
            return Err(Error::InvalidParameter(format!(
                "bit words are limited to 64 bits, got {len}"
            )));
        }
        if len < 64 && value >> len != 0 {
            return Err(Error::InvalidParameter(format!(
                "value {value:#x} does not fit in {len} bits"
            )));
        }
        Ok(Self { value, len })
    }

    /// Builds a word from individual bits, first element is the MSB.
    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        let mut value = 0u64;
        for &b in bits {
            if b > 1 {
                return Err(Error::InvalidParameter(format!("{b} is not a bit")));
            }
            value = (value << 1) | u64::from(b);
        }
        Self::new(value, bits.len() as u32)
    }

    /// Parses a string of `0`/`1` characters.
    pub fn parse(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0u8),
                '1' => Ok(1u8),
                _ => Err(Error::InvalidParameter(format!("'{c}' is not a bit"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_bits(&bits)
    }

    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bits(&self) -> Vec<u8> {
        (0..self.len)
            .rev()
            .map(|shift| ((self.value >> shift) & 1) as u8)
            .collect()
    }
}

impl std::fmt::Display for BitWord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for b in self.bits() {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

/// Returns `log2(n)` if `n` is a power of two.
pub fn log2_exact(n: usize) -> Option<u32> {
    (n > 0 && n.is_power_of_two()).then(|| n.trailing_zeros())
}

fn gray_encode(x: usize) -> usize {
    x ^ (x >> 1)
}

/// Gray-labelled square (or rectangular, for odd `log2(M)`) QAM with unit
/// average energy.
///
/// `points[w]` is the point carrying the `log2(M)`-bit word `w`. The first
/// `ceil(k/2)` bits of a word select the in-phase level and the remaining
/// bits the quadrature level, each through a binary-reflected Gray code, so
/// neighbours along either axis differ in exactly one bit. `M = 2` is BPSK on
/// the real axis.
#[derive(Debug, Clone, PartialEq)]
pub struct QamConstellation {
    order: usize,
    bits_per_symbol: u32,
    points: Vec<Complex64>,
}

impl QamConstellation {
    pub fn new(order: usize) -> Result<Self> {
        let k = log2_exact(order)
            .filter(|&k| k >= 1)
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "modulation order must be a power of two >= 2, got {order}"
                ))
            })?;
        if k > 16 {
            return Err(Error::InvalidParameter(format!(
                "modulation order {order} is unreasonably large"
            )));
        }
        let bits_i = k.div_ceil(2);
        let bits_q = k / 2;
        let levels_i = 1usize << bits_i;
        let levels_q = 1usize << bits_q;

        // Level position p on an axis with L levels sits at 2p - (L - 1).
        let mut points = vec![Complex64::new(0.0, 0.0); order];
        for pi in 0..levels_i {
            for pq in 0..levels_q {
                let word = (gray_encode(pi) << bits_q) | gray_encode(pq);
                let re = 2.0 * pi as f64 - (levels_i as f64 - 1.0);
                let im = if levels_q == 1 {
                    0.0
                } else {
                    2.0 * pq as f64 - (levels_q as f64 - 1.0)
                };
                points[word] = Complex64::new(re, im);
            }
        }
        let energy = points.iter().map(|p| p.norm_sqr()).sum::<f64>() / order as f64;
        let scale = energy.sqrt().recip();
        for p in &mut points {
            *p *= scale;
        }
        Ok(Self {
            order,
            bits_per_symbol: k,
            points,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bits_per_symbol(&self) -> u32 {
        self.bits_per_symbol
    }

    /// Points indexed by their bit word.
    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn point(&self, word: usize) -> Complex64 {
        self.points[word]
    }

    /// Inverse of the labelling: the word carried by `symbol`.
    pub fn word_of(&self, symbol: Complex64) -> Result<usize> {
        self.points
            .iter()
            .position(|p| (p - symbol).norm() < POINT_MATCH_TOL)
            .ok_or(Error::SymbolNotInConstellation(symbol))
    }
}

/// One spatial-modulation channel use: the active antenna (1-based), the
/// symbol it radiates and the bits that selected both.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmFrame {
    pub antenna: usize,
    pub symbol: Complex64,
    pub symbol_word: usize,
    pub bits: BitWord,
}

impl SmFrame {
    /// The `Nt`-long transmit vector with a single nonzero entry.
    pub fn transmit_vector(&self, nt: usize) -> Vec<Complex64> {
        let mut x = vec![Complex64::new(0.0, 0.0); nt];
        x[self.antenna - 1] = self.symbol;
        x
    }
}

/// One spatial-multiplexing channel use: a symbol on every antenna.
///
/// `symbols` holds constellation points; the radiated vector is scaled by
/// `1/sqrt(Nt)` so that SMX spends the same total energy per channel use as
/// SM.
#[derive(Debug, Clone, PartialEq)]
pub struct SmxFrame {
    pub symbols: Vec<Complex64>,
    pub symbol_words: Vec<usize>,
    pub bits: BitWord,
}

/// Per-antenna amplitude of an `Nt`-antenna SMX transmitter.
pub fn smx_amplitude(nt: usize) -> f64 {
    (nt as f64).sqrt().recip()
}

impl SmxFrame {
    /// Radiated vector with unit average total energy.
    pub fn transmit_vector(&self) -> Vec<Complex64> {
        let a = smx_amplitude(self.symbols.len());
        self.symbols.iter().map(|s| s * a).collect()
    }
}

/// Anything that carries a source bit word.
pub trait Frame {
    fn bits(&self) -> BitWord;
}

impl Frame for SmFrame {
    fn bits(&self) -> BitWord {
        self.bits
    }
}

impl Frame for SmxFrame {
    fn bits(&self) -> BitWord {
        self.bits
    }
}

/// Bits per channel use for spatial modulation, `log2(Nt) + log2(M)`.
pub fn sm_bits_per_use(nt: usize, constellation: &QamConstellation) -> Result<u32> {
    let antenna_bits = log2_exact(nt).ok_or_else(|| {
        Error::InvalidParameter(format!("Nt must be a power of two, got {nt}"))
    })?;
    Ok(antenna_bits + constellation.bits_per_symbol())
}

/// Bits per channel use for spatial multiplexing, `Nt * log2(M)`.
pub fn smx_bits_per_use(nt: usize, constellation: &QamConstellation) -> Result<u32> {
    if nt == 0 {
        return Err(Error::InvalidParameter("Nt must be positive".into()));
    }
    let m = nt as u64 * u64::from(constellation.bits_per_symbol());
    u32::try_from(m)
        .ok()
        .filter(|&m| m <= 64)
        .ok_or_else(|| Error::InvalidParameter(format!("{m} bits per use exceeds 64")))
}

pub fn map_bits_sm(bits: BitWord, nt: usize, constellation: &QamConstellation) -> Result<SmFrame> {
    let m = sm_bits_per_use(nt, constellation)?;
    if bits.len() != m {
        return Err(Error::Dimension(format!(
            "SM with Nt={nt}, M={} consumes {m} bits, got {}",
            constellation.order(),
            bits.len()
        )));
    }
    let k = constellation.bits_per_symbol();
    let symbol_word = (bits.value() & ((1u64 << k) - 1)) as usize;
    let antenna = (bits.value() >> k) as usize + 1;
    Ok(SmFrame {
        antenna,
        symbol: constellation.point(symbol_word),
        symbol_word,
        bits,
    })
}

pub fn map_bits_smx(
    bits: BitWord,
    nt: usize,
    constellation: &QamConstellation,
) -> Result<SmxFrame> {
    let m = smx_bits_per_use(nt, constellation)?;
    if bits.len() != m {
        return Err(Error::Dimension(format!(
            "SMX with Nt={nt}, M={} consumes {m} bits, got {}",
            constellation.order(),
            bits.len()
        )));
    }
    let k = constellation.bits_per_symbol();
    let mask = (1u64 << k) - 1;
    let symbol_words: Vec<usize> = (0..nt)
        .map(|i| ((bits.value() >> (k * (nt - 1 - i) as u32)) & mask) as usize)
        .collect();
    let symbols = symbol_words.iter().map(|&w| constellation.point(w)).collect();
    Ok(SmxFrame {
        symbols,
        symbol_words,
        bits,
    })
}

/// Recovers the bit word carried by an SM frame from its antenna and symbol.
pub fn demap_sm_frame(
    frame: &SmFrame,
    nt: usize,
    constellation: &QamConstellation,
) -> Result<BitWord> {
    let m = sm_bits_per_use(nt, constellation)?;
    if frame.antenna == 0 || frame.antenna > nt {
        return Err(Error::AntennaOutOfRange {
            index: frame.antenna,
            nt,
        });
    }
    let word = constellation.word_of(frame.symbol)?;
    let k = constellation.bits_per_symbol();
    BitWord::new((((frame.antenna - 1) as u64) << k) | word as u64, m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_energy_for_common_orders() {
        for order in [2, 4, 8, 16, 32, 64, 256] {
            let c = QamConstellation::new(order).unwrap();
            let e = c.points().iter().map(|p| p.norm_sqr()).sum::<f64>() / order as f64;
            assert!((e - 1.0).abs() < 1e-12, "M={order}: {e}");
        }
    }

    #[test]
    fn bpsk_is_antipodal() {
        let c = QamConstellation::new(2).unwrap();
        assert_eq!(c.points(), &[Complex64::new(-1.0, 0.0), Complex64::new(1.0, 0.0)]);
    }

    #[test]
    fn rejects_bad_orders() {
        for order in [0, 1, 3, 12] {
            assert!(QamConstellation::new(order).is_err());
        }
    }

    #[test]
    fn gray_neighbours_differ_in_one_bit() {
        for order in [4usize, 8, 16, 32, 64] {
            let c = QamConstellation::new(order).unwrap();
            let pts = c.points();
            let mut step = f64::INFINITY;
            for a in pts {
                for b in pts {
                    let d = (a - b).norm();
                    if d > 1e-12 {
                        step = step.min(d);
                    }
                }
            }
            for (wa, a) in pts.iter().enumerate() {
                for (wb, b) in pts.iter().enumerate() {
                    let d = a - b;
                    let axis_neighbour = (d.norm() - step).abs() < 1e-9
                        && (d.re.abs() < 1e-9 || d.im.abs() < 1e-9);
                    if axis_neighbour {
                        assert_eq!((wa ^ wb).count_ones(), 1, "M={order} {wa} {wb}");
                    }
                }
            }
        }
    }

    #[test]
    fn all_zero_word_selects_first_antenna_and_symbol() {
        let c = QamConstellation::new(4).unwrap();
        let f = map_bits_sm(BitWord::parse("0000").unwrap(), 4, &c).unwrap();
        assert_eq!(f.antenna, 1);
        assert_eq!(f.symbol, c.point(0));
        assert_eq!(demap_sm_frame(&f, 4, &c).unwrap(), BitWord::parse("0000").unwrap());
    }

    #[test]
    fn antenna_bits_lead() {
        let c = QamConstellation::new(4).unwrap();
        let f = map_bits_sm(BitWord::parse("1011").unwrap(), 4, &c).unwrap();
        assert_eq!(f.antenna, 3);
        assert_eq!(f.symbol, c.point(0b11));
    }

    #[test]
    fn spectral_efficiency() {
        let bpsk = QamConstellation::new(2).unwrap();
        let qpsk = QamConstellation::new(4).unwrap();
        assert_eq!(sm_bits_per_use(128, &bpsk).unwrap(), 8);
        assert_eq!(sm_bits_per_use(64, &qpsk).unwrap(), 8);
        assert_eq!(smx_bits_per_use(8, &bpsk).unwrap(), 8);
        assert!(sm_bits_per_use(6, &bpsk).is_err());
    }

    #[test]
    fn word_length_mismatch_is_an_error() {
        let c = QamConstellation::new(4).unwrap();
        assert!(map_bits_sm(BitWord::parse("000").unwrap(), 4, &c).is_err());
        assert!(map_bits_smx(BitWord::parse("000").unwrap(), 2, &c).is_err());
    }

    #[test]
    fn smx_all_zero() {
        let c = QamConstellation::new(2).unwrap();
        let f = map_bits_smx(BitWord::parse("00").unwrap(), 2, &c).unwrap();
        assert_eq!(f.symbols, vec![c.point(0), c.point(0)]);
    }

    #[test]
    fn out_of_range_antenna() {
        let c = QamConstellation::new(4).unwrap();
        let frame = SmFrame {
            antenna: 5,
            symbol: c.point(1),
            symbol_word: 1,
            bits: BitWord::new(0, 4).unwrap(),
        };
        assert!(matches!(
            demap_sm_frame(&frame, 4, &c),
            Err(Error::AntennaOutOfRange { index: 5, nt: 4 })
        ));
        let foreign = SmFrame {
            antenna: 1,
            symbol: Complex64::new(0.3, 0.0),
            ..frame
        };
        assert!(matches!(
            demap_sm_frame(&foreign, 4, &c),
            Err(Error::SymbolNotInConstellation(_))
        ));
    }

    #[test]
    fn transmit_vector_has_one_active_entry() {
        let c = QamConstellation::new(16).unwrap();
        let f = map_bits_sm(BitWord::new(0b10_1101, 6).unwrap(), 4, &c).unwrap();
        let x = f.transmit_vector(4);
        let active: Vec<_> = x.iter().enumerate().filter(|(_, v)| v.norm() > 0.0).collect();
        assert_eq!(active.len(), 1);
        assert_eq!(active[0].0 + 1, f.antenna);
        let norm = x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!((norm - f.symbol.norm()).abs() < 1e-15);
    }

    #[test]
    fn bitword_validation() {
        assert!(BitWord::new(4, 2).is_err());
        assert!(BitWord::new(u64::MAX, 64).is_ok());
        assert_eq!(BitWord::parse("0101").unwrap().to_string(), "0101");
        assert!(BitWord::parse("012").is_err());
    }
}
