//! OFDM framing: Gray QAM, resource grids with pilot rows, and the
//! IFFT/CP transmit and CP/FFT receive transforms.
//!
//! Both transforms use orthonormal scaling (`1/√N` each way), so a symbol has
//! the same energy in time and frequency.

use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex;
use rand::Rng;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seed;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfdmConfig {
    pub l_fft: usize,
    pub n_sym: usize,
    /// Pilot symbol positions, 1-indexed.
    pub pilot_symbols: Vec<usize>,
    pub l_cp: usize,
    /// Subcarrier spacing in Hz.
    pub subcarrier_spacing: f64,
    /// Carrier frequency in Hz.
    pub carrier_freq: f64,
}

impl Default for OfdmConfig {
    fn default() -> Self {
        OfdmConfig {
            l_fft: 2048,
            n_sym: 14,
            pilot_symbols: vec![3, 12],
            l_cp: 144,
            subcarrier_spacing: 15e3,
            carrier_freq: 2.8e9,
        }
    }
}

impl OfdmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l_fft == 0 || self.n_sym == 0 {
            return Err(Error::config("ofdm.l_fft", "grid dims must be positive"));
        }
        if self.l_cp >= self.l_fft {
            return Err(Error::config("ofdm.l_cp", "cyclic prefix must be shorter than the FFT"));
        }
        if self.pilot_symbols.len() < 2 {
            return Err(Error::config(
                "ofdm.pilot_symbols",
                "need two pilot symbols for interpolation",
            ));
        }
        let mut sorted = self.pilot_symbols.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.pilot_symbols.len() || sorted != self.pilot_symbols {
            return Err(Error::config("ofdm.pilot_symbols", "must be strictly increasing"));
        }
        if sorted[0] == 0 || *sorted.last().unwrap() > self.n_sym {
            return Err(Error::config("ofdm.pilot_symbols", format!("must lie in 1..={}", self.n_sym)));
        }
        if !(self.subcarrier_spacing > 0.0 && self.carrier_freq > 0.0) {
            return Err(Error::config("ofdm.subcarrier_spacing", "frequencies must be positive"));
        }
        Ok(())
    }

    /// 0-indexed pilot rows.
    pub fn pilot_rows(&self) -> Vec<usize> {
        self.pilot_symbols.iter().map(|p| p - 1).collect()
    }

    pub fn is_pilot(&self, row: usize) -> bool {
        self.pilot_symbols.contains(&(row + 1))
    }

    pub fn data_rows(&self) -> Vec<usize> {
        (0..self.n_sym).filter(|&r| !self.is_pilot(r)).collect()
    }

    /// Complex data symbols per frame.
    pub fn capacity(&self) -> usize {
        self.data_rows().len() * self.l_fft
    }

    pub fn sample_rate(&self) -> f64 {
        self.l_fft as f64 * self.subcarrier_spacing
    }

    /// Duration of one OFDM symbol including its cyclic prefix, in seconds.
    pub fn symbol_duration(&self) -> f64 {
        (self.l_fft + self.l_cp) as f64 / self.sample_rate()
    }

    pub fn frame_duration(&self) -> f64 {
        self.n_sym as f64 * self.symbol_duration()
    }

    pub fn cp_duration(&self) -> f64 {
        self.l_cp as f64 / self.sample_rate()
    }
}

/// Bits per symbol of a supported square QAM order.
pub fn bits_per_symbol(order: usize) -> Result<usize> {
    match order {
        4 => Ok(2),
        16 => Ok(4),
        64 => Ok(6),
        256 => Ok(8),
        _ => Err(Error::InvalidArgument(format!("unsupported QAM order {order}"))),
    }
}

fn qam_norm(order: usize) -> f64 {
    (2.0 * (order as f64 - 1.0) / 3.0).sqrt()
}

/// Gray-mapped square QAM with unit average energy.
///
/// Each symbol takes `log2 M` bits, most significant first; the first half
/// drives the in-phase axis and the second half the quadrature axis. On an
/// axis, the bit group `g` is a Gray code for the level index
/// `i = gray⁻¹(g)`, and the level is `(√M − 1) − 2i`. QPSK maps `00` to
/// `(1 + i)/√2`.
pub fn qam_map<T: Real>(bits: &[u8], order: usize) -> Result<Vec<Complex<T>>> {
    let k = bits_per_symbol(order)?;
    if bits.len() % k != 0 {
        return Err(Error::InvalidArgument(format!(
            "{} bits do not fill {k}-bit symbols",
            bits.len()
        )));
    }
    if bits.iter().any(|&b| b > 1) {
        return Err(Error::InvalidArgument("bits must be 0 or 1".into()));
    }
    let half = k / 2;
    let side = 1usize << half;
    let norm = qam_norm(order);
    let level = |group: &[u8]| {
        let g = group.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize);
        let mut i = g;
        let mut shift = g >> 1;
        while shift != 0 {
            i ^= shift;
            shift >>= 1;
        }
        ((side - 1) as f64 - 2.0 * i as f64) / norm
    };
    Ok(bits
        .chunks_exact(k)
        .map(|s| Complex::new(T::of(level(&s[..half])), T::of(level(&s[half..]))))
        .collect())
}

/// Nearest-point hard decision, inverse of [`qam_map`].
pub fn qam_demap_hard<T: Real>(symbols: &[Complex<T>], order: usize) -> Result<Vec<u8>> {
    let k = bits_per_symbol(order)?;
    let half = k / 2;
    let side = 1usize << half;
    let norm = qam_norm(order);
    let mut out = Vec::with_capacity(symbols.len() * k);
    let push_axis = |x: f64, out: &mut Vec<u8>| {
        let i = (((side - 1) as f64 - x * norm) / 2.0).round();
        let i = if i.is_nan() {
            0
        } else {
            i.clamp(0.0, (side - 1) as f64) as usize
        };
        let g = i ^ (i >> 1);
        for b in (0..half).rev() {
            out.push(((g >> b) & 1) as u8);
        }
    };
    for s in symbols {
        push_axis(s.re.f64(), &mut out);
        push_axis(s.im.f64(), &mut out);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymbolRole {
    Pilot,
    Data,
}

/// Frequency-domain frame, `n_sym × l_fft`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceGrid<T> {
    n_sym: usize,
    l_fft: usize,
    roles: Vec<SymbolRole>,
    data: Vec<Complex<T>>,
}

impl<T: Real> ResourceGrid<T> {
    pub fn zeros(cfg: &OfdmConfig) -> Self {
        ResourceGrid {
            n_sym: cfg.n_sym,
            l_fft: cfg.l_fft,
            roles: (0..cfg.n_sym)
                .map(|r| {
                    if cfg.is_pilot(r) {
                        SymbolRole::Pilot
                    } else {
                        SymbolRole::Data
                    }
                })
                .collect(),
            data: vec![Complex::new(T::zero(), T::zero()); cfg.n_sym * cfg.l_fft],
        }
    }

    pub fn from_data(cfg: &OfdmConfig, data: Vec<Complex<T>>) -> Result<Self> {
        let mut g = Self::zeros(cfg);
        if data.len() != g.data.len() {
            return Err(Error::shape(g.data.len(), data.len()));
        }
        g.data = data;
        Ok(g)
    }

    pub fn n_sym(&self) -> usize {
        self.n_sym
    }

    pub fn l_fft(&self) -> usize {
        self.l_fft
    }

    pub fn role(&self, row: usize) -> SymbolRole {
        self.roles[row]
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    pub fn row(&self, j: usize) -> &[Complex<T>] {
        &self.data[j * self.l_fft..(j + 1) * self.l_fft]
    }

    pub fn row_mut(&mut self, j: usize) -> &mut [Complex<T>] {
        &mut self.data[j * self.l_fft..(j + 1) * self.l_fft]
    }

    pub fn get(&self, j: usize, k: usize) -> Complex<T> {
        self.data[j * self.l_fft + k]
    }

    pub fn same_layout(&self, other: &ResourceGrid<T>) -> bool {
        self.n_sym == other.n_sym && self.l_fft == other.l_fft
    }

    /// Grid dump: `u32 rows, u32 cols` then `(re, im)` f32 LE pairs row-major.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.n_sym as u32).to_le_bytes())?;
        w.write_all(&(self.l_fft as u32).to_le_bytes())?;
        for z in &self.data {
            w.write_all(&(z.re.f64() as f32).to_le_bytes())?;
            w.write_all(&(z.im.f64() as f32).to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a grid dump; pilot roles are taken from `cfg`.
    pub fn read_from<R: Read>(mut r: R, cfg: &OfdmConfig) -> Result<Self> {
        let rows = crate::nnkit::read_u32(&mut r)? as usize;
        let cols = crate::nnkit::read_u32(&mut r)? as usize;
        if rows != cfg.n_sym || cols != cfg.l_fft {
            return Err(Error::shape(format!("{}x{}", cfg.n_sym, cfg.l_fft), format!("{rows}x{cols}")));
        }
        let data = (0..rows * cols)
            .map(|_| {
                let re = crate::nnkit::read_f32(&mut r)?;
                let im = crate::nnkit::read_f32(&mut r)?;
                Ok(Complex::new(T::of(re as f64), T::of(im as f64)))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_data(cfg, data)
    }
}

/// QPSK pilot rows from seeded random bits, one row per pilot symbol.
pub fn pilot_sequence<T: Real>(cfg: &OfdmConfig, pilot_seed: u64) -> Vec<Vec<Complex<T>>> {
    let mut rng = seed::rng(pilot_seed);
    cfg.pilot_rows()
        .iter()
        .map(|_| {
            let bits: Vec<u8> = (0..2 * cfg.l_fft).map(|_| rng.gen_range(0..2u8)).collect();
            qam_map(&bits, 4).expect("QPSK bit count")
        })
        .collect()
}

/// Places `payload` row-major into the data symbols and zero-pads the rest.
pub fn frame_build<T: Real>(payload: &[Complex<T>], cfg: &OfdmConfig, pilot_seed: u64) -> Result<ResourceGrid<T>> {
    cfg.validate()?;
    if payload.len() > cfg.capacity() {
        return Err(Error::InvalidArgument(format!(
            "payload of {} symbols exceeds frame capacity {}",
            payload.len(),
            cfg.capacity()
        )));
    }
    let mut grid = ResourceGrid::zeros(cfg);
    for (row, pilots) in cfg.pilot_rows().into_iter().zip(pilot_sequence(cfg, pilot_seed)) {
        grid.row_mut(row).copy_from_slice(&pilots);
    }
    let rows = cfg.data_rows();
    for (chunk, &row) in payload.chunks(cfg.l_fft).zip(&rows) {
        grid.row_mut(row)[..chunk.len()].copy_from_slice(chunk);
    }
    Ok(grid)
}

/// First `len` data symbols of a grid, row-major over data rows.
pub fn frame_extract<T: Real>(grid: &ResourceGrid<T>, cfg: &OfdmConfig, len: usize) -> Result<Vec<Complex<T>>> {
    if grid.n_sym() != cfg.n_sym || grid.l_fft() != cfg.l_fft {
        return Err(Error::shape(
            format!("{}x{}", cfg.n_sym, cfg.l_fft),
            format!("{}x{}", grid.n_sym(), grid.l_fft()),
        ));
    }
    if len > cfg.capacity() {
        return Err(Error::InvalidArgument(format!(
            "{len} exceeds frame capacity {}",
            cfg.capacity()
        )));
    }
    Ok(cfg
        .data_rows()
        .iter()
        .flat_map(|&r| grid.row(r).iter().copied())
        .take(len)
        .collect())
}

/// Per-symbol orthonormal IFFT/FFT with cyclic prefix handling.
pub struct Modem<T: Real> {
    cfg: OfdmConfig,
    ifft: Arc<dyn Fft<T>>,
    fft: Arc<dyn Fft<T>>,
    scale: T,
}

impl<T: Real> Modem<T> {
    pub fn new(cfg: &OfdmConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Modem {
            cfg: cfg.clone(),
            ifft: planner.plan_fft_inverse(cfg.l_fft),
            fft: planner.plan_fft_forward(cfg.l_fft),
            scale: T::one() / T::of(cfg.l_fft as f64).sqrt(),
        })
    }

    pub fn config(&self) -> &OfdmConfig {
        &self.cfg
    }

    /// Samples per frame including cyclic prefixes.
    pub fn frame_samples(&self) -> usize {
        self.cfg.n_sym * (self.cfg.l_fft + self.cfg.l_cp)
    }

    pub fn to_time(&self, grid: &ResourceGrid<T>) -> Result<Vec<Complex<T>>> {
        let (n, cp) = (self.cfg.l_fft, self.cfg.l_cp);
        if grid.n_sym() != self.cfg.n_sym || grid.l_fft() != n {
            return Err(Error::shape(
                format!("{}x{n}", self.cfg.n_sym),
                format!("{}x{}", grid.n_sym(), grid.l_fft()),
            ));
        }
        let mut out = Vec::with_capacity(self.frame_samples());
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        for j in 0..self.cfg.n_sym {
            buf.copy_from_slice(grid.row(j));
            self.ifft.process(&mut buf);
            buf.iter_mut().for_each(|z| *z = *z * self.scale);
            out.extend_from_slice(&buf[n - cp..]);
            out.extend_from_slice(&buf);
        }
        Ok(out)
    }

    pub fn from_time(&self, samples: &[Complex<T>]) -> Result<ResourceGrid<T>> {
        let (n, cp) = (self.cfg.l_fft, self.cfg.l_cp);
        if samples.len() != self.frame_samples() {
            return Err(Error::shape(self.frame_samples(), samples.len()));
        }
        let mut grid = ResourceGrid::zeros(&self.cfg);
        for (j, sym) in samples.chunks_exact(n + cp).enumerate() {
            let row = grid.row_mut(j);
            row.copy_from_slice(&sym[cp..]);
            self.fft.process(row);
            row.iter_mut().for_each(|z| *z = *z * self.scale);
        }
        Ok(grid)
    }
}

pub fn to_time<T: Real>(grid: &ResourceGrid<T>, cfg: &OfdmConfig) -> Result<Vec<Complex<T>>> {
    Modem::new(cfg)?.to_time(grid)
}

pub fn from_time<T: Real>(samples: &[Complex<T>], cfg: &OfdmConfig) -> Result<ResourceGrid<T>> {
    Modem::new(cfg)?.from_time(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> OfdmConfig {
        OfdmConfig {
            l_fft: 64,
            l_cp: 8,
            ..OfdmConfig::default()
        }
    }

    #[test]
    fn qpsk_zero_bits() {
        let s = qam_map::<f64>(&[0, 0], 4).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((s[0].re - h).abs() < 1e-15 && (s[0].im - h).abs() < 1e-15);
        let s = qam_map::<f64>(&[1, 1], 4).unwrap();
        assert!(s[0].re < 0.0 && s[0].im < 0.0);
    }

    #[test]
    fn qam_rejects_bad_input() {
        assert!(qam_map::<f64>(&[0, 1, 0], 4).is_err());
        assert!(qam_map::<f64>(&[0, 1], 8).is_err());
        assert!(qam_demap_hard::<f64>(&[], 32).is_err());
    }

    #[test]
    fn default_layout() {
        let cfg = OfdmConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.pilot_rows(), vec![2, 11]);
        assert_eq!(cfg.capacity(), 12 * 2048);
        let ts = cfg.symbol_duration();
        assert!((ts - 2192.0 / (2048.0 * 15e3)).abs() < 1e-18);
    }

    #[test]
    fn config_validation_names_fields() {
        let bad = OfdmConfig {
            pilot_symbols: vec![3, 15],
            ..OfdmConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { field, .. }) if field == "ofdm.pilot_symbols"));
        let bad = OfdmConfig {
            l_cp: 2048,
            ..OfdmConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn frame_extract_round_trip_and_padding() {
        let cfg = small();
        let payload: Vec<Complex<f64>> = (0..100).map(|i| Complex::new(i as f64, -(i as f64))).collect();
        let g = frame_build(&payload, &cfg, 3).unwrap();
        assert_eq!(frame_extract(&g, &cfg, 100).unwrap(), payload);
        let rows = cfg.data_rows();
        assert!(g.row(rows[1])[100 - 64..].iter().all(|z| z.norm() == 0.0));
        assert!(frame_build(&vec![Complex::new(0.0, 0.0); cfg.capacity() + 1], &cfg, 0).is_err());
    }

    #[test]
    fn time_round_trip_and_cp() {
        let cfg = small();
        let mut rng = seed::rng(2);
        let payload: Vec<Complex<f64>> = (0..cfg.capacity()).map(|_| seed::complex_normal(&mut rng)).collect();
        let g = frame_build(&payload, &cfg, 1).unwrap();
        let t = to_time(&g, &cfg).unwrap();
        let sym = &t[..cfg.l_fft + cfg.l_cp];
        assert_eq!(&sym[..cfg.l_cp], &sym[cfg.l_fft..]);
        let back = from_time(&t, &cfg).unwrap();
        for (a, b) in back.data().iter().zip(g.data()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn grid_dump_round_trip() {
        let cfg = small();
        let g: ResourceGrid<f32> = frame_build(&[Complex::new(0.5, -0.25)], &cfg, 7).unwrap();
        let mut buf = Vec::new();
        g.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 8 * cfg.n_sym * cfg.l_fft);
        assert_eq!(ResourceGrid::<f32>::read_from(buf.as_slice(), &cfg).unwrap(), g);
    }
}
