//! Dense feature tensors, importance masks and confidence maps.
//!
//! All tensors use row-major `C × H × W` order; the spatial cell index of
//! `(h, w)` is `h * W + w`.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Real-valued `C × H × W` semantic feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Real> FeatureTensor<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "tensor dims must be positive, got {channels}x{height}x{width}"
            )));
        }
        let n = channels * height * width;
        if data.len() != n {
            return Err(Error::shape(n, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature tensor"));
        }
        Ok(FeatureTensor {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        assert!(channels > 0 && height > 0 && width > 0);
        FeatureTensor {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, h: usize, w: usize) -> T {
        self.data[(c * self.height + h) * self.width + w]
    }

    /// Channel plane `c` as a contiguous `H·W` slice.
    pub fn plane(&self, c: usize) -> &[T] {
        let hw = self.cells();
        &self.data[c * hw..(c + 1) * hw]
    }

    /// Squared channel-wise L2 magnitude of every spatial cell.
    pub fn cell_energy(&self) -> Vec<T> {
        let mut energy = vec![T::zero(); self.cells()];
        for c in 0..self.channels {
            for (e, &v) in energy.iter_mut().zip(self.plane(c)) {
                *e += v * v;
            }
        }
        energy
    }

    /// Serializes as three little-endian `u32` dims followed by `f32` data.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for d in [self.channels, self.height, self.width] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|x| x.checked_mul(dims[2]))
            .ok_or_else(|| Error::Format("tensor header overflows".into()))?;
        let mut buf = vec![0u8; n * 4];
        r.read_exact(&mut buf)?;
        let data = buf
            .chunks_exact(4)
            .map(|b| T::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
            .collect();
        FeatureTensor::new(dims[0], dims[1], dims[2], data)
    }
}

/// Binary spatial selection mask over `H × W`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMask {
    height: usize,
    width: usize,
    cr: f64,
    bits: Vec<bool>,
    // ascending linear indices of the selected cells
    ones: Vec<usize>,
}

impl ImportanceMask {
    pub fn from_cells(height: usize, width: usize, cells: &[usize]) -> Result<Self> {
        let n = height * width;
        if n == 0 {
            return Err(Error::InvalidArgument("empty mask".into()));
        }
        let mut bits = vec![false; n];
        for &c in cells {
            if c >= n {
                return Err(Error::InvalidArgument(format!("cell {c} outside {height}x{width}")));
            }
            bits[c] = true;
        }
        let ones: Vec<usize> = (0..n).filter(|&i| bits[i]).collect();
        Ok(ImportanceMask {
            height,
            width,
            cr: ones.len() as f64 / n as f64,
            bits,
            ones,
        })
    }

    pub fn full(height: usize, width: usize) -> Self {
        let all: Vec<usize> = (0..height * width).collect();
        Self::from_cells(height, width, &all).expect("full mask")
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self::from_cells(height, width, &[]).expect("empty mask")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Fraction of selected cells.
    pub fn cr(&self) -> f64 {
        self.cr
    }

    pub fn count(&self) -> usize {
        self.ones.len()
    }

    pub fn selected(&self) -> &[usize] {
        &self.ones
    }

    #[inline]
    pub fn is_set(&self, cell: usize) -> bool {
        self.bits[cell]
    }
}

/// Number of cells selected for compression ratio `cr` over `cells` cells.
///
/// The small slack keeps decimal ratios such as `0.005 · 25200` from rounding
/// up past the integer they represent.
pub fn cells_for_ratio(cr: f64, cells: usize) -> usize {
    let k = (cr * cells as f64 - 1e-9).ceil();
    (k.max(0.0) as usize).min(cells)
}

/// Selects the `⌈cr·H·W⌉` cells with the largest channel-wise L2 magnitude.
/// Ties go to the lowest linear index.
pub fn importance_map<T: Real>(f: &FeatureTensor<T>, cr: f64) -> Result<ImportanceMask> {
    if !(cr > 0.0 && cr <= 1.0) {
        return Err(Error::InvalidArgument(format!("cr must be in (0, 1], got {cr}")));
    }
    let energy = f.cell_energy();
    if energy.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFinite("importance map input"));
    }
    let k = cells_for_ratio(cr, f.cells());
    let mut order: Vec<usize> = (0..f.cells()).collect();
    let by_rank = |a: &usize, b: &usize| energy[*b].partial_cmp(&energy[*a]).expect("finite energies").then(a.cmp(b));
    if k < order.len() {
        order.select_nth_unstable_by(k, by_rank);
        order.truncate(k);
    }
    ImportanceMask::from_cells(f.height(), f.width(), &order)
}

fn check_spatial<T: Real>(f: &FeatureTensor<T>, m: &ImportanceMask) -> Result<()> {
    if f.height() != m.height() || f.width() != m.width() {
        return Err(Error::shape(
            format!("{}x{}", f.height(), f.width()),
            format!("{}x{}", m.height(), m.width()),
        ));
    }
    Ok(())
}

pub fn apply_mask<T: Real>(f: &FeatureTensor<T>, m: &ImportanceMask) -> Result<FeatureTensor<T>> {
    check_spatial(f, m)?;
    let hw = f.cells();
    let data = f
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| if m.is_set(i % hw) { v } else { T::zero() })
        .collect();
    Ok(FeatureTensor {
        channels: f.channels(),
        height: f.height(),
        width: f.width(),
        data,
    })
}

/// Gathers the selected cells channel by channel: entry `c·K + j` holds
/// channel `c` of the `j`-th selected cell.
pub fn pack_nonzero<T: Real>(f: &FeatureTensor<T>, m: &ImportanceMask) -> Result<Vec<T>> {
    check_spatial(f, m)?;
    let mut out = Vec::with_capacity(f.channels() * m.count());
    for c in 0..f.channels() {
        let plane = f.plane(c);
        out.extend(m.selected().iter().map(|&i| plane[i]));
    }
    Ok(out)
}

pub fn unpack_nonzero<T: Real>(v: &[T], m: &ImportanceMask, shape: (usize, usize, usize)) -> Result<FeatureTensor<T>> {
    let (c, h, w) = shape;
    if h != m.height() || w != m.width() {
        return Err(Error::shape(format!("{}x{}", m.height(), m.width()), format!("{h}x{w}")));
    }
    let k = m.count();
    if v.len() != c * k {
        return Err(Error::shape(c * k, v.len()));
    }
    let mut f = FeatureTensor::<T>::zeros(c, h, w);
    let hw = h * w;
    for ch in 0..c {
        for (j, &cell) in m.selected().iter().enumerate() {
            f.data[ch * hw + cell] = v[ch * k + j];
        }
    }
    if f.data.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("unpacked tensor"));
    }
    Ok(f)
}

/// Per-cell detection confidence in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap<T> {
    height: usize,
    width: usize,
    values: Vec<T>,
}

impl<T: Real> ConfidenceMap<T> {
    pub fn new(height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(height * width, values.len()));
        }
        if values.iter().any(|v| !(*v >= T::zero() && *v <= T::one())) {
            return Err(Error::InvalidArgument("confidence outside [0, 1]".into()));
        }
        Ok(ConfidenceMap { height, width, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Adaptive average pooling to `ph × pw` bins.
    pub fn pooled(&self, ph: usize, pw: usize) -> Vec<T> {
        let bins = PoolBins::new(self.height, self.width, ph, pw);
        let mut out = vec![T::zero(); ph * pw];
        for (b, o) in out.iter_mut().enumerate() {
            let (r0, r1, c0, c1) = bins.bounds(b);
            let mut acc = 0.0;
            for r in r0..r1 {
                for c in c0..c1 {
                    acc += self.values[r * self.width + c].f64();
                }
            }
            *o = T::of(acc / bins.size(b) as f64);
        }
        out
    }
}

/// Bin geometry of adaptive average pooling: bin `i` along an axis of length
/// `n` split into `p` bins spans `[⌊i·n/p⌋, ⌈(i+1)·n/p⌉)`.
#[derive(Debug, Clone)]
pub struct PoolBins {
    height: usize,
    width: usize,
    ph: usize,
    pw: usize,
}

impl PoolBins {
    pub fn new(height: usize, width: usize, ph: usize, pw: usize) -> Self {
        assert!(ph > 0 && pw > 0 && ph <= height && pw <= width);
        PoolBins { height, width, ph, pw }
    }

    pub fn len(&self) -> usize {
        self.ph * self.pw
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn span(i: usize, n: usize, p: usize) -> (usize, usize) {
        (i * n / p, ((i + 1) * n).div_ceil(p))
    }

    pub fn bounds(&self, bin: usize) -> (usize, usize, usize, usize) {
        let (r0, r1) = Self::span(bin / self.pw, self.height, self.ph);
        let (c0, c1) = Self::span(bin % self.pw, self.width, self.pw);
        (r0, r1, c0, c1)
    }

    pub fn size(&self, bin: usize) -> usize {
        let (r0, r1, c0, c1) = self.bounds(bin);
        (r1 - r0) * (c1 - c0)
    }

    /// Bins containing cell `(h, w)`; overlapping bins share boundary cells.
    pub fn bins_of(&self, cell: usize) -> Vec<usize> {
        let (h, w) = (cell / self.width, cell % self.width);
        let rows: Vec<usize> = (0..self.ph)
            .filter(|&i| {
                let (a, b) = Self::span(i, self.height, self.ph);
                a <= h && h < b
            })
            .collect();
        let cols: Vec<usize> = (0..self.pw)
            .filter(|&j| {
                let (a, b) = Self::span(j, self.width, self.pw);
                a <= w && w < b
            })
            .collect();
        let mut out = Vec::with_capacity(rows.len() * cols.len());
        for &r in &rows {
            for &c in &cols {
                out.push(r * self.pw + c);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_tensor(c: usize, h: usize, w: usize, seed: u64) -> FeatureTensor<f64> {
        let mut rng = crate::seed::rng(seed);
        let data = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        FeatureTensor::new(c, h, w, data).unwrap()
    }

    #[test]
    fn top_k_by_magnitude() {
        // per-cell magnitudes 1, 2, 3, 4
        let f = FeatureTensor::new(1, 2, 2, vec![1.0, -2.0, 3.0, 4.0]).unwrap();
        let m = importance_map(&f, 0.5).unwrap();
        assert_eq!(m.selected(), &[2, 3]);
        let full = importance_map(&f, 1.0).unwrap();
        assert_eq!(full.count(), 4);
    }

    #[test]
    fn ties_prefer_lowest_index() {
        let f = FeatureTensor::new(1, 1, 4, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let m = importance_map(&f, 0.5).unwrap();
        assert_eq!(m.selected(), &[0, 1]);
    }

    #[test]
    fn rejects_bad_ratio_and_nonfinite() {
        let f = random_tensor(2, 3, 3, 1);
        assert!(importance_map(&f, 0.0).is_err());
        assert!(importance_map(&f, 1.5).is_err());
        assert!(FeatureTensor::new(1, 1, 2, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn decimal_ratio_does_not_round_up() {
        assert_eq!(cells_for_ratio(0.005, 25200), 126);
        assert_eq!(cells_for_ratio(1.25e-3, 1_612_800), 2016);
        assert_eq!(cells_for_ratio(1.0, 7), 7);
    }

    #[test]
    fn mask_extremes() {
        let f = random_tensor(3, 4, 5, 2);
        assert_eq!(apply_mask(&f, &ImportanceMask::full(4, 5)).unwrap(), f);
        let z = apply_mask(&f, &ImportanceMask::empty(4, 5)).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(pack_nonzero(&f, &ImportanceMask::empty(4, 5)).unwrap().is_empty());
        assert_eq!(pack_nonzero(&f, &ImportanceMask::full(4, 5)).unwrap(), f.data());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let f = random_tensor(2, 3, 3, 3);
        let m = ImportanceMask::full(3, 4);
        assert!(apply_mask(&f, &m).is_err());
        assert!(pack_nonzero(&f, &m).is_err());
        assert!(unpack_nonzero(&[0.0; 5], &ImportanceMask::full(3, 3), (2, 3, 3)).is_err());
    }

    #[test]
    fn serialization_round_trip() {
        let f = FeatureTensor::new(2, 1, 2, vec![0.5f64, -1.25, 3.0, 0.0]).unwrap();
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 12 + 16);
        assert_eq!(&buf[..4], &2u32.to_le_bytes());
        let g = FeatureTensor::<f64>::read_from(buf.as_slice()).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn pooling_bins_cover_grid() {
        let bins = PoolBins::new(100, 252, 16, 16);
        let mut hits = vec![0usize; 100 * 252];
        for b in 0..bins.len() {
            let (r0, r1, c0, c1) = bins.bounds(b);
            for r in r0..r1 {
                for c in c0..c1 {
                    hits[r * 252 + c] += 1;
                }
            }
        }
        assert!(hits.iter().all(|&h| h >= 1));
        for cell in [0, 77, 252 * 99 + 251, 252 * 6 + 15] {
            assert_eq!(bins.bins_of(cell).len(), hits[cell]);
        }
    }

    #[test]
    fn pooled_constant_map() {
        let map = ConfidenceMap::new(10, 12, vec![0.25f64; 120]).unwrap();
        let p = map.pooled(4, 5);
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert!(ConfidenceMap::new(1, 2, vec![0.5, 1.5]).is_err());
    }
}
