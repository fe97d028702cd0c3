//! Pilot-based channel estimation and per-subcarrier equalization.
//!
//! Estimation runs in three steps: least squares on each pilot row,
//! delay-domain truncation to the cyclic-prefix window, and linear
//! interpolation (or extrapolation) in time between pilot rows.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::ofdm::{OfdmConfig, ResourceGrid};
use crate::scalar::Real;

const MIN_PILOT: f64 = 1e-9;

/// Estimated frequency response (`n_sym × l_fft`) and the noise variance it
/// was computed under.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate<T> {
    n_sym: usize,
    l_fft: usize,
    h: Vec<Complex<T>>,
    noise_var: f64,
}

impl<T: Real> ChannelEstimate<T> {
    pub fn new(n_sym: usize, l_fft: usize, h: Vec<Complex<T>>, noise_var: f64) -> Result<Self> {
        if h.len() != n_sym * l_fft {
            return Err(Error::shape(n_sym * l_fft, h.len()));
        }
        if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("channel estimate"));
        }
        Ok(ChannelEstimate {
            n_sym,
            l_fft,
            h,
            noise_var,
        })
    }

    /// Estimate equal to a known response, for genie-aided runs.
    pub fn genie(ofdm: &OfdmConfig, h: Vec<Complex<T>>, noise_var: f64) -> Result<Self> {
        Self::new(ofdm.n_sym, ofdm.l_fft, h, noise_var)
    }

    pub fn h(&self) -> &[Complex<T>] {
        &self.h
    }

    pub fn row(&self, j: usize) -> &[Complex<T>] {
        &self.h[j * self.l_fft..(j + 1) * self.l_fft]
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }
}

pub struct Estimator<T: Real> {
    cfg: OfdmConfig,
    ifft: Arc<dyn Fft<T>>,
    fft: Arc<dyn Fft<T>>,
}

impl<T: Real> Estimator<T> {
    pub fn new(cfg: &OfdmConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Estimator {
            cfg: cfg.clone(),
            ifft: planner.plan_fft_inverse(cfg.l_fft),
            fft: planner.plan_fft_forward(cfg.l_fft),
        })
    }

    fn check(&self, rx: &ResourceGrid<T>, pilots: &[Vec<Complex<T>>]) -> Result<Vec<usize>> {
        let rows = self.cfg.pilot_rows();
        if rx.n_sym() != self.cfg.n_sym || rx.l_fft() != self.cfg.l_fft {
            return Err(Error::shape(
                format!("{}x{}", self.cfg.n_sym, self.cfg.l_fft),
                format!("{}x{}", rx.n_sym(), rx.l_fft()),
            ));
        }
        if pilots.len() != rows.len() || pilots.iter().any(|p| p.len() != self.cfg.l_fft) {
            return Err(Error::shape(
                format!("{} pilot rows of {}", rows.len(), self.cfg.l_fft),
                format!("{} rows", pilots.len()),
            ));
        }
        if pilots.iter().flatten().any(|x| x.norm().f64() < MIN_PILOT) {
            return Err(Error::config("ofdm.pilot_symbols", "pilot symbol magnitude below 1e-9"));
        }
        Ok(rows)
    }

    fn ls_rows(&self, rx: &ResourceGrid<T>, pilots: &[Vec<Complex<T>>], rows: &[usize]) -> Vec<Vec<Complex<T>>> {
        rows.iter()
            .zip(pilots)
            .map(|(&r, x)| rx.row(r).iter().zip(x).map(|(y, x)| y / x).collect())
            .collect()
    }

    /// Keeps the first `l_cp` delay-domain coefficients of a pilot row.
    fn truncate(&self, row: &mut [Complex<T>]) {
        let n = self.cfg.l_fft;
        self.ifft.process(row);
        row[self.cfg.l_cp..]
            .iter_mut()
            .for_each(|z| *z = Complex::new(T::zero(), T::zero()));
        self.fft.process(row);
        let s = T::one() / T::of(n as f64);
        row.iter_mut().for_each(|z| *z = *z * s);
    }

    fn interpolate(&self, rows: &[usize], anchors: Vec<Vec<Complex<T>>>, noise_var: f64) -> Result<ChannelEstimate<T>> {
        let n = self.cfg.l_fft;
        let mut h = vec![Complex::new(T::zero(), T::zero()); self.cfg.n_sym * n];
        for j in 0..self.cfg.n_sym {
            // segment [rows[s], rows[s+1]] containing j, or the nearest end segment
            let s = match rows.iter().rposition(|&r| r <= j) {
                None => 0,
                Some(i) => i.min(rows.len() - 2),
            };
            let (p0, p1) = (rows[s] as f64, rows[s + 1] as f64);
            let w = T::of((j as f64 - p0) / (p1 - p0));
            let (a, b) = (&anchors[s], &anchors[s + 1]);
            for (k, out) in h[j * n..(j + 1) * n].iter_mut().enumerate() {
                *out = a[k] + (b[k] - a[k]) * w;
            }
        }
        ChannelEstimate::new(self.cfg.n_sym, n, h, noise_var)
    }

    /// Least squares at the pilots, delay-domain truncation, time interpolation.
    pub fn estimate(&self, rx: &ResourceGrid<T>, pilots: &[Vec<Complex<T>>], noise_var: f64) -> Result<ChannelEstimate<T>> {
        let rows = self.check(rx, pilots)?;
        let mut anchors = self.ls_rows(rx, pilots, &rows);
        for a in anchors.iter_mut() {
            self.truncate(a);
        }
        self.interpolate(&rows, anchors, noise_var)
    }

    /// Raw least squares plus time interpolation, without delay truncation.
    pub fn estimate_ls(&self, rx: &ResourceGrid<T>, pilots: &[Vec<Complex<T>>], noise_var: f64) -> Result<ChannelEstimate<T>> {
        let rows = self.check(rx, pilots)?;
        let anchors = self.ls_rows(rx, pilots, &rows);
        self.interpolate(&rows, anchors, noise_var)
    }
}

pub fn estimate<T: Real>(
    rx: &ResourceGrid<T>,
    pilots: &[Vec<Complex<T>>],
    cfg: &OfdmConfig,
    noise_var: f64,
) -> Result<ChannelEstimate<T>> {
    Estimator::new(cfg)?.estimate(rx, pilots, noise_var)
}

/// `X̂ = conj(Ĥ)·Y / (|Ĥ|² + σ²/P)` on every resource element.
pub fn equalize_mmse<T: Real>(rx: &ResourceGrid<T>, est: &ChannelEstimate<T>, power: f64) -> Result<ResourceGrid<T>> {
    if rx.data().len() != est.h.len() {
        return Err(Error::shape(est.h.len(), rx.data().len()));
    }
    if !(power > 0.0) {
        return Err(Error::InvalidArgument("signal power must be positive".into()));
    }
    let reg = T::of(est.noise_var / power);
    let mut out = rx.clone();
    for (y, h) in out.data_mut().iter_mut().zip(&est.h) {
        let den = h.norm_sqr() + reg;
        *y = if den > T::zero() {
            h.conj() * *y / den
        } else {
            Complex::new(T::zero(), T::zero())
        };
    }
    Ok(out)
}

/// Zero-forcing `X̂ = Y / Ĥ`, for comparison against MMSE.
pub fn equalize_zf<T: Real>(rx: &ResourceGrid<T>, est: &ChannelEstimate<T>) -> Result<ResourceGrid<T>> {
    if rx.data().len() != est.h.len() {
        return Err(Error::shape(est.h.len(), rx.data().len()));
    }
    let mut out = rx.clone();
    for (y, h) in out.data_mut().iter_mut().zip(&est.h) {
        *y = *y / h;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ofdm::{frame_build, pilot_sequence};

    fn small() -> OfdmConfig {
        OfdmConfig {
            l_fft: 64,
            l_cp: 8,
            ..OfdmConfig::default()
        }
    }

    #[test]
    fn flat_noiseless_estimate_is_exact() {
        let cfg = small();
        let c = Complex::new(0.8, -0.3);
        let g: ResourceGrid<f64> = frame_build(&[], &cfg, 4).unwrap();
        let mut rx = g.clone();
        rx.data_mut().iter_mut().for_each(|y| *y = *y * c);
        let est = estimate(&rx, &pilot_sequence(&cfg, 4), &cfg, 0.0).unwrap();
        assert!(est.h().iter().all(|h| (h - c).norm() < 1e-12));
    }

    #[test]
    fn zero_estimate_equalizes_to_zero() {
        let cfg = small();
        let rx: ResourceGrid<f64> = frame_build(&[Complex::new(1.0, 1.0)], &cfg, 0).unwrap();
        let est = ChannelEstimate::genie(&cfg, vec![Complex::new(0.0, 0.0); 14 * 64], 0.1).unwrap();
        let x = equalize_mmse(&rx, &est, 1.0).unwrap();
        assert!(x.data().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn noiseless_genie_mmse_is_exact() {
        let cfg = small();
        let h: Vec<Complex<f64>> = (0..14 * 64)
            .map(|i| Complex::from_polar(1.0 + (i % 5) as f64, i as f64))
            .collect();
        let x: ResourceGrid<f64> = frame_build(&[Complex::new(0.3, 0.4); 700], &cfg, 2).unwrap();
        let mut rx = x.clone();
        rx.data_mut().iter_mut().zip(&h).for_each(|(y, h)| *y = *y * h);
        let est = ChannelEstimate::genie(&cfg, h, 0.0).unwrap();
        let xh = equalize_mmse(&rx, &est, 1.0).unwrap();
        assert!(xh.data().iter().zip(x.data()).all(|(a, b)| (a - b).norm() < 1e-12));
    }

    #[test]
    fn tiny_pilots_are_config_error() {
        let cfg = small();
        let rx: ResourceGrid<f64> = ResourceGrid::zeros(&cfg);
        let pilots = vec![vec![Complex::new(0.0, 0.0); 64]; 2];
        assert!(matches!(estimate(&rx, &pilots, &cfg, 0.0), Err(Error::Config { .. })));
    }
}
