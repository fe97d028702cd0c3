//! Classical baseline: 8-bit quantized payload with CRC-24, QAM, and a
//! rate-½ repetition code at the symbol level.
//!
//! The codeword is two copies of the info symbols. Copy 1 is cyclically
//! shifted by `shift` slots so the two copies of a symbol sit on different
//! subcarriers. HARQ-I resends both copies every round; HARQ-II alternates
//! between them. The receiver maximum-ratio combines every copy it holds.

use num_complex::Complex;

use super::crc;
use super::quant::{Quantizer8, SIDE_BYTES};
use crate::error::{Error, Result};
use crate::link::Reception;
use crate::ofdm::{bits_per_symbol, qam_demap_hard, qam_map};

pub const CRC_BYTES: usize = 3;

/// Sizes of the baseline payload for one frame of `n_cu` channel uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BaselineLayout {
    pub order: usize,
    /// Info symbols, half the frame.
    pub info_symbols: usize,
    /// Payload bytes including side information and CRC.
    pub info_bytes: usize,
    /// Feature cells carried, `channels` bytes each.
    pub cells: usize,
    pub channels: usize,
}

impl BaselineLayout {
    pub fn new(n_cu: usize, order: usize, channels: usize) -> Result<Self> {
        let k = bits_per_symbol(order)?;
        if channels == 0 {
            return Err(Error::InvalidArgument("channels must be positive".into()));
        }
        let info_symbols = n_cu / 2;
        let info_bytes = info_symbols * k / 8;
        let room = info_bytes.saturating_sub(SIDE_BYTES + CRC_BYTES);
        let cells = room / channels;
        if cells == 0 {
            return Err(Error::Degenerate(format!("{n_cu} channel uses carry no feature cell")));
        }
        Ok(BaselineLayout {
            order,
            info_symbols,
            info_bytes,
            cells,
            channels,
        })
    }

    /// Compression ratio over `spatial_cells` that fills the payload.
    pub fn cr(&self, spatial_cells: usize) -> f64 {
        self.cells as f64 / spatial_cells as f64
    }

    pub fn values(&self) -> usize {
        self.cells * self.channels
    }

    /// Side information, quantized values, zero padding, CRC.
    pub fn pack(&self, values: &[f64]) -> Result<Vec<u8>> {
        if values.len() != self.values() {
            return Err(Error::shape(self.values(), values.len()));
        }
        let q = Quantizer8::fit(values)?;
        let mut body = q.to_bytes().to_vec();
        body.extend(q.quantize(values));
        body.resize(self.info_bytes - CRC_BYTES, 0);
        Ok(crc::attach_bytes(&body))
    }

    /// Dequantized values and whether the CRC holds. Side information that
    /// does not parse yields zeros.
    pub fn unpack(&self, bytes: &[u8]) -> Result<(Vec<f64>, bool)> {
        if bytes.len() != self.info_bytes {
            return Err(Error::shape(self.info_bytes, bytes.len()));
        }
        let ok = crc::verify_bytes(bytes);
        let values = match Quantizer8::from_bytes(&bytes[..SIDE_BYTES]) {
            Ok(q) => q.dequantize(&bytes[SIDE_BYTES..SIDE_BYTES + self.values()]),
            Err(_) => vec![0.0; self.values()],
        };
        Ok((values, ok))
    }

    pub fn modulate(&self, bytes: &[u8]) -> Result<Vec<Complex<f64>>> {
        qam_map(&crc::bytes_to_bits(bytes), self.order)
    }

    pub fn demodulate(&self, symbols: &[Complex<f64>]) -> Result<Vec<u8>> {
        Ok(crc::bits_to_bytes(&qam_demap_hard(symbols, self.order)?))
    }
}

/// Rate-½ repetition over symbols; copy 1 slot `j` carries info symbol
/// `(j + shift) mod n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RepetitionCode {
    info: usize,
    shift: usize,
}

impl RepetitionCode {
    pub fn new(info: usize, shift: usize) -> Result<Self> {
        if info == 0 {
            return Err(Error::InvalidArgument("empty repetition block".into()));
        }
        Ok(RepetitionCode {
            info,
            shift: shift % info,
        })
    }

    pub fn info(&self) -> usize {
        self.info
    }

    /// Info symbol carried by slot `j` of `copy`.
    pub fn source(&self, copy: usize, j: usize) -> usize {
        if copy == 0 {
            j
        } else {
            (j + self.shift) % self.info
        }
    }

    pub fn copy(&self, symbols: &[Complex<f64>], copy: usize) -> Result<Vec<Complex<f64>>> {
        if symbols.len() != self.info {
            return Err(Error::shape(self.info, symbols.len()));
        }
        Ok((0..self.info).map(|j| symbols[self.source(copy, j)]).collect())
    }

    /// Both copies back to back.
    pub fn codeword(&self, symbols: &[Complex<f64>]) -> Result<Vec<Complex<f64>>> {
        let mut out = self.copy(symbols, 0)?;
        out.extend(self.copy(symbols, 1)?);
        Ok(out)
    }
}

/// Per-info-symbol accumulators `Σ conj(Ĥ)Y/σ²` and `Σ |Ĥ|²/σ²`; their ratio
/// is the weighted average of the zero-forced copies `Y/Ĥ` with weights
/// `|Ĥ|²/σ²`.
#[derive(Debug, Clone)]
pub struct MrcCombiner {
    code: RepetitionCode,
    num: Vec<Complex<f64>>,
    den: Vec<f64>,
    copies: usize,
}

impl MrcCombiner {
    pub fn new(code: RepetitionCode) -> Self {
        MrcCombiner {
            code,
            num: vec![Complex::new(0.0, 0.0); code.info],
            den: vec![0.0; code.info],
            copies: 0,
        }
    }

    pub fn copies(&self) -> usize {
        self.copies
    }

    /// Adds one received copy.
    pub fn add(&mut self, copy: usize, received: &[Complex<f64>], h_hat: &[Complex<f64>], noise_var: f64) -> Result<()> {
        if received.len() != self.code.info || h_hat.len() != self.code.info {
            return Err(Error::shape(self.code.info, received.len()));
        }
        let inv = if noise_var > 0.0 { 1.0 / noise_var } else { 1.0 };
        for (j, (y, h)) in received.iter().zip(h_hat).enumerate() {
            let i = self.code.source(copy, j);
            self.num[i] += h.conj() * y * inv;
            self.den[i] += h.norm_sqr() * inv;
        }
        self.copies += 1;
        Ok(())
    }

    /// Adds the copies found in `rx`, which holds `copies` back to back.
    pub fn add_reception(&mut self, rx: &Reception<f64>, copies: &[usize]) -> Result<()> {
        let n = self.code.info;
        if rx.received.len() != n * copies.len() {
            return Err(Error::shape(n * copies.len(), rx.received.len()));
        }
        for (k, &c) in copies.iter().enumerate() {
            let span = k * n..(k + 1) * n;
            self.add(c, &rx.received[span.clone()], &rx.h_hat[span], rx.noise_var)?;
        }
        Ok(())
    }

    pub fn combined(&self) -> Vec<Complex<f64>> {
        self.num
            .iter()
            .zip(&self.den)
            .map(|(n, &d)| if d > 0.0 { n / d } else { Complex::new(0.0, 0.0) })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_frame_layout() {
        let l = BaselineLayout::new(24576, 16, 64).unwrap();
        assert_eq!(l.info_bytes, 6144);
        assert_eq!(l.cells, 95);
        let l = BaselineLayout::new(24576, 256, 64).unwrap();
        assert_eq!(l.info_bytes, 12288);
    }

    #[test]
    fn payload_round_trip() {
        let l = BaselineLayout::new(256, 16, 4).unwrap();
        let v: Vec<f64> = (0..l.values()).map(|i| (i as f64 * 0.37).sin()).collect();
        let bytes = l.pack(&v).unwrap();
        let sym = l.modulate(&bytes).unwrap();
        assert_eq!(sym.len(), l.info_symbols);
        let (back, ok) = l.unpack(&l.demodulate(&sym).unwrap()).unwrap();
        assert!(ok);
        let q = Quantizer8::fit(&v).unwrap();
        assert!(v.iter().zip(&back).all(|(a, b)| (a - b).abs() <= q.step() / 2.0 + 1e-12));
    }

    #[test]
    fn corrupted_check_bits_fail() {
        let l = BaselineLayout::new(256, 16, 4).unwrap();
        let mut bytes = l.pack(&vec![0.5; l.values()]).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x10;
        assert!(!l.unpack(&bytes).unwrap().1);
    }

    #[test]
    fn repetition_copies_cover_every_symbol() {
        let code = RepetitionCode::new(10, 3).unwrap();
        let mut seen: Vec<usize> = (0..10).map(|j| code.source(1, j)).collect();
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn noiseless_combining_is_exact() {
        let code = RepetitionCode::new(6, 2).unwrap();
        let x: Vec<Complex<f64>> = (0..6).map(|i| Complex::new(i as f64, 1.0)).collect();
        let mut c = MrcCombiner::new(code);
        for copy in 0..2 {
            let h: Vec<Complex<f64>> = (0..6).map(|j| Complex::from_polar(0.5 + j as f64, copy as f64)).collect();
            let y: Vec<Complex<f64>> = code.copy(&x, copy).unwrap().iter().zip(&h).map(|(a, b)| a * b).collect();
            c.add(copy, &y, &h, 0.1).unwrap();
        }
        assert!(c.combined().iter().zip(&x).all(|(a, b)| (a - b).norm() < 1e-12));
    }
}
