//! Per-tensor 8-bit affine quantization.

use crate::error::{Error, Result};

/// `q = round((x − min)/scale)` clamped to `0..=255`, with
/// `scale = (max − min)/255`. Both parameters are held in `f32`, as sent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantizer8 {
    min: f32,
    scale: f32,
}

/// Bytes of side information carried with the quantized payload.
pub const SIDE_BYTES: usize = 8;

impl Quantizer8 {
    pub fn new(min: f32, scale: f32) -> Result<Self> {
        if !(min.is_finite() && scale.is_finite() && scale >= 0.0) {
            return Err(Error::InvalidArgument(format!("quantizer min {min}, scale {scale}")));
        }
        Ok(Quantizer8 { min, scale })
    }

    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Degenerate("nothing to quantize".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("quantizer input"));
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // widen the f32 parameters until they cover [lo, hi]
        let mut min = lo as f32;
        while min as f64 > lo {
            min = min.next_down();
        }
        let mut scale = ((hi - min as f64) / 255.0) as f32;
        while (min as f64) + 255.0 * (scale as f64) < hi {
            scale = scale.next_up();
        }
        Self::new(min, scale)
    }

    pub fn min(&self) -> f32 {
        self.min
    }

    /// Quantization step; zero for constant input.
    pub fn step(&self) -> f64 {
        self.scale as f64
    }

    pub fn quantize(&self, values: &[f64]) -> Vec<u8> {
        let (m, s) = (self.min as f64, self.scale as f64);
        values
            .iter()
            .map(|&x| {
                if s == 0.0 {
                    0
                } else {
                    ((x - m) / s).round().clamp(0.0, 255.0) as u8
                }
            })
            .collect()
    }

    pub fn dequantize(&self, q: &[u8]) -> Vec<f64> {
        q.iter().map(|&v| self.min as f64 + v as f64 * self.scale as f64).collect()
    }

    pub fn to_bytes(&self) -> [u8; SIDE_BYTES] {
        let mut out = [0u8; SIDE_BYTES];
        out[..4].copy_from_slice(&self.min.to_le_bytes());
        out[4..].copy_from_slice(&self.scale.to_le_bytes());
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() < SIDE_BYTES {
            return Err(Error::shape(SIDE_BYTES, b.len()));
        }
        Self::new(
            f32::from_le_bytes(b[..4].try_into().expect("4 bytes")),
            f32::from_le_bytes(b[4..8].try_into().expect("4 bytes")),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_are_exact_codes() {
        let q = Quantizer8::fit(&[-1.0, 0.0, 3.0]).unwrap();
        assert_eq!(q.quantize(&[-1.0, 3.0]), vec![0, 255]);
    }

    #[test]
    fn constant_input() {
        let q = Quantizer8::fit(&[2.5; 4]).unwrap();
        assert_eq!(q.step(), 0.0);
        assert_eq!(q.dequantize(&q.quantize(&[2.5])), vec![2.5]);
    }

    #[test]
    fn out_of_range_clamps() {
        let q = Quantizer8::fit(&[0.0, 1.0]).unwrap();
        assert_eq!(q.quantize(&[-5.0, 9.0]), vec![0, 255]);
    }

    #[test]
    fn side_info_round_trip() {
        let q = Quantizer8::fit(&[-0.7, 0.2]).unwrap();
        assert_eq!(Quantizer8::from_bytes(&q.to_bytes()).unwrap(), q);
        assert!(Quantizer8::from_bytes(&[0xFF; 8]).is_err());
    }
}
