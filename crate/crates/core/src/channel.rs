//! Tapped-delay-line fading with Gauss–Markov tap evolution.
//!
//! Taps sit on the sample grid with an exponential power-delay profile. Each
//! tap is complex Gaussian at its mean power and evolves once per OFDM symbol
//! with correlation `ρ = J₀(2π f_D T_sym)`, `f_D = v f_c / c`. The frequency
//! response on symbol `j`, subcarrier `k` is
//! `H[j,k] = Σ_m a_m(j) · exp(−i 2π k Δf τ_m)`.

use num_complex::Complex;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ofdm::{OfdmConfig, ResourceGrid};
use crate::scalar::Real;
use crate::seed;

pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;

/// Channel settings as read from the experiment config.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub taps: usize,
    /// Target rms delay spread in seconds.
    pub rms_delay_spread: f64,
    /// Spacing between consecutive taps in samples.
    pub tap_spacing: usize,
    pub speed_min_kmh: f64,
    pub speed_max_kmh: f64,
    /// Large-scale gain applied to every tap, in dB.
    pub gain_db: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            taps: 6,
            rms_delay_spread: 0.5e-6,
            tap_spacing: 16,
            speed_min_kmh: 40.0,
            speed_max_kmh: 100.0,
            gain_db: 0.0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self, ofdm: &OfdmConfig) -> Result<()> {
        if self.taps == 0 {
            return Err(Error::config("channel.taps", "need at least one tap"));
        }
        if self.taps > 1 && self.tap_spacing == 0 {
            return Err(Error::config("channel.tap_spacing", "taps must have distinct delays"));
        }
        if (self.taps - 1) * self.tap_spacing >= ofdm.l_cp {
            return Err(Error::config(
                "channel.tap_spacing",
                format!(
                    "last tap at {} samples does not fit the {}-sample cyclic prefix",
                    (self.taps - 1) * self.tap_spacing,
                    ofdm.l_cp
                ),
            ));
        }
        if !(self.rms_delay_spread >= 0.0 && self.rms_delay_spread.is_finite()) {
            return Err(Error::config("channel.rms_delay_spread", "must be finite and >= 0"));
        }
        if !(0.0 <= self.speed_min_kmh && self.speed_min_kmh <= self.speed_max_kmh) {
            return Err(Error::config("channel.speed_min_kmh", "need 0 <= min <= max"));
        }
        if !self.gain_db.is_finite() {
            return Err(Error::config("channel.gain_db", "must be finite"));
        }
        Ok(())
    }

    /// Uniform draw from the configured speed range, in m/s.
    pub fn draw_speed<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let kmh = if self.speed_max_kmh > self.speed_min_kmh {
            rng.gen_range(self.speed_min_kmh..self.speed_max_kmh)
        } else {
            self.speed_min_kmh
        };
        kmh / 3.6
    }

    pub fn profile(&self, ofdm: &OfdmConfig, speed: f64) -> Result<ChannelProfile> {
        self.validate(ofdm)?;
        let fs = ofdm.sample_rate();
        let delay_samples: Vec<usize> = (0..self.taps).map(|m| m * self.tap_spacing).collect();
        let delays: Vec<f64> = delay_samples.iter().map(|&d| d as f64 / fs).collect();
        let powers = exponential_pdp(&delays, self.rms_delay_spread)?;
        let gain = 10f64.powf(self.gain_db / 10.0);
        ChannelProfile::new(
            delays,
            powers.into_iter().map(|p| p * gain).collect(),
            speed,
            ofdm.carrier_freq,
        )
    }
}

fn rms_spread(delays: &[f64], powers: &[f64]) -> f64 {
    let total: f64 = powers.iter().sum();
    let mean: f64 = delays.iter().zip(powers).map(|(t, p)| t * p).sum::<f64>() / total;
    let second: f64 = delays.iter().zip(powers).map(|(t, p)| t * t * p).sum::<f64>() / total;
    (second - mean * mean).max(0.0).sqrt()
}

/// Unit-sum powers `∝ exp(−τ/d)`, with `d` chosen by bisection so the rms
/// delay spread equals `target`.
pub fn exponential_pdp(delays: &[f64], target: f64) -> Result<Vec<f64>> {
    let shape = |decay: f64| -> Vec<f64> {
        let p: Vec<f64> = delays.iter().map(|t| (-(t - delays[0]) / decay).exp()).collect();
        let s: f64 = p.iter().sum();
        p.into_iter().map(|v| v / s).collect()
    };
    if delays.len() == 1 || target == 0.0 {
        let mut p = vec![0.0; delays.len()];
        p[0] = 1.0;
        return Ok(p);
    }
    let ceiling = rms_spread(delays, &vec![1.0; delays.len()]);
    if target >= ceiling {
        return Err(Error::config(
            "channel.rms_delay_spread",
            format!("{target:e} s not reachable; flat profile gives {ceiling:e} s"),
        ));
    }
    let span = delays[delays.len() - 1] - delays[0];
    let (mut lo, mut hi) = (span * 1e-6, span * 1e6);
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if rms_spread(delays, &shape(mid)) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(shape((lo * hi).sqrt()))
}

/// Concrete channel for one session: tap delays, mean powers, and speed.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelProfile {
    delays: Vec<f64>,
    powers: Vec<f64>,
    speed: f64,
    carrier_freq: f64,
}

impl ChannelProfile {
    pub fn new(delays: Vec<f64>, powers: Vec<f64>, speed: f64, carrier_freq: f64) -> Result<Self> {
        if delays.is_empty() || delays.len() != powers.len() {
            return Err(Error::shape(delays.len(), powers.len()));
        }
        if delays.iter().chain(&powers).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("delays and powers must be finite and >= 0".into()));
        }
        if !(speed >= 0.0 && speed.is_finite() && carrier_freq > 0.0) {
            return Err(Error::InvalidArgument("speed must be >= 0 and carrier > 0".into()));
        }
        Ok(ChannelProfile {
            delays,
            powers,
            speed,
            carrier_freq,
        })
    }

    pub fn delays(&self) -> &[f64] {
        &self.delays
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    pub fn taps(&self) -> usize {
        self.delays.len()
    }

    pub fn doppler(&self) -> f64 {
        self.speed * self.carrier_freq / SPEED_OF_LIGHT
    }

    /// Tap correlation across a time lag `dt`.
    pub fn correlation(&self, dt: f64) -> f64 {
        libm::j0(2.0 * std::f64::consts::PI * self.doppler() * dt)
    }

    /// Rejects taps that reach past the cyclic prefix.
    pub fn check_cp(&self, ofdm: &OfdmConfig) -> Result<()> {
        let cp = ofdm.cp_duration();
        match self.delays.iter().find(|&&t| t >= cp) {
            Some(t) => Err(Error::InvalidArgument(format!(
                "tap delay {t:e} s exceeds the {cp:e} s cyclic prefix"
            ))),
            None => Ok(()),
        }
    }
}

/// Tap amplitudes per OFDM symbol (`taps × n_sym`) and tap delays.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization<T> {
    delays: Vec<f64>,
    // taps x n_sym
    amplitudes: Vec<Vec<Complex<T>>>,
}

impl<T: Real> ChannelRealization<T> {
    pub fn new(delays: Vec<f64>, amplitudes: Vec<Vec<Complex<T>>>) -> Result<Self> {
        if delays.len() != amplitudes.len() || delays.is_empty() {
            return Err(Error::shape(delays.len(), amplitudes.len()));
        }
        let n = amplitudes[0].len();
        if amplitudes.iter().any(|a| a.len() != n) {
            return Err(Error::InvalidArgument("ragged tap trajectories".into()));
        }
        Ok(ChannelRealization { delays, amplitudes })
    }

    /// Time-invariant single-tap channel.
    pub fn flat(gain: Complex<T>, n_sym: usize) -> Self {
        ChannelRealization {
            delays: vec![0.0],
            amplitudes: vec![vec![gain; n_sym]],
        }
    }

    pub fn delays(&self) -> &[f64] {
        &self.delays
    }

    pub fn n_sym(&self) -> usize {
        self.amplitudes[0].len()
    }

    /// Amplitude of tap `m` on symbol `j`.
    pub fn amplitude(&self, m: usize, j: usize) -> Complex<T> {
        self.amplitudes[m][j]
    }

    pub fn trajectory(&self, m: usize) -> &[Complex<T>] {
        &self.amplitudes[m]
    }
}

/// Draws one frame's realization from a fresh stationary start.
pub fn realize<T: Real>(profile: &ChannelProfile, ofdm: &OfdmConfig, seed: u64, n_sym: usize) -> Result<ChannelRealization<T>> {
    FadingProcess::new(profile.clone(), ofdm, 0.0, seed)?.next_frame(n_sym)
}

/// Tap process that continues across frames, for retransmissions of one
/// session. Between frames the taps decorrelate over one symbol period plus
/// the retransmission interval.
#[derive(Debug, Clone)]
pub struct FadingProcess {
    profile: ChannelProfile,
    rho_sym: f64,
    rho_gap: f64,
    rng: ChaCha8Rng,
    state: Option<Vec<Complex<f64>>>,
}

impl FadingProcess {
    pub fn new(profile: ChannelProfile, ofdm: &OfdmConfig, interval: f64, seed: u64) -> Result<Self> {
        profile.check_cp(ofdm)?;
        if !(interval >= 0.0 && interval.is_finite()) {
            return Err(Error::InvalidArgument("retransmission interval must be >= 0".into()));
        }
        let ts = ofdm.symbol_duration();
        Ok(FadingProcess {
            rho_sym: profile.correlation(ts),
            rho_gap: profile.correlation(ts + interval),
            profile,
            rng: seed::rng(seed),
            state: None,
        })
    }

    pub fn rho_symbol(&self) -> f64 {
        self.rho_sym
    }

    pub fn rho_gap(&self) -> f64 {
        self.rho_gap
    }

    fn evolve(&mut self, a: Complex<f64>, power: f64, rho: f64) -> Complex<f64> {
        let w: Complex<f64> = seed::complex_normal(&mut self.rng);
        a * rho + w * ((1.0 - rho * rho).max(0.0) * power).sqrt()
    }

    pub fn next_frame<T: Real>(&mut self, n_sym: usize) -> Result<ChannelRealization<T>> {
        if n_sym == 0 {
            return Err(Error::InvalidArgument("frame needs at least one symbol".into()));
        }
        let powers = self.profile.powers.clone();
        let mut cur: Vec<Complex<f64>> = match self.state.take() {
            None => powers
                .iter()
                .map(|&p| seed::complex_normal::<f64, _>(&mut self.rng) * p.sqrt())
                .collect(),
            Some(prev) => {
                let rho = self.rho_gap;
                prev.iter().zip(&powers).map(|(&a, &p)| self.evolve(a, p, rho)).collect()
            }
        };
        let mut amps = vec![Vec::with_capacity(n_sym); powers.len()];
        for j in 0..n_sym {
            if j > 0 {
                let rho = self.rho_sym;
                cur = cur.iter().zip(&powers).map(|(&a, &p)| self.evolve(a, p, rho)).collect();
            }
            for (m, a) in cur.iter().enumerate() {
                amps[m].push(Complex::new(T::of(a.re), T::of(a.im)));
            }
        }
        self.state = Some(cur);
        ChannelRealization::new(self.profile.delays.clone(), amps)
    }
}

/// Frequency response `n_sym × l_fft`, row-major.
pub fn freq_response<T: Real>(real: &ChannelRealization<T>, ofdm: &OfdmConfig) -> Vec<Complex<T>> {
    let (n, df) = (ofdm.l_fft, ofdm.subcarrier_spacing);
    let phasors: Vec<Vec<Complex<T>>> = real
        .delays
        .iter()
        .map(|&tau| {
            (0..n)
                .map(|k| {
                    let c = Complex::from_polar(1.0, -2.0 * std::f64::consts::PI * k as f64 * df * tau);
                    Complex::new(T::of(c.re), T::of(c.im))
                })
                .collect()
        })
        .collect();
    let mut h = vec![Complex::new(T::zero(), T::zero()); real.n_sym() * n];
    for (j, row) in h.chunks_exact_mut(n).enumerate() {
        for (m, ph) in phasors.iter().enumerate() {
            let a = real.amplitude(m, j);
            for (hk, p) in row.iter_mut().zip(ph) {
                *hk += a * p;
            }
        }
    }
    h
}

/// Noise variance per complex symbol for mean signal power `power`.
pub fn noise_variance(power: f64, snr_db: f64) -> f64 {
    power / 10f64.powf(snr_db / 10.0)
}

/// `Y = H·X + Z` on every resource element, `Z ~ CN(0, σ²)`.
pub fn apply<T: Real, R: Rng + ?Sized>(
    grid: &ResourceGrid<T>,
    h: &[Complex<T>],
    noise_var: f64,
    rng: &mut R,
) -> Result<ResourceGrid<T>> {
    if h.len() != grid.data().len() {
        return Err(Error::shape(grid.data().len(), h.len()));
    }
    let sigma = T::of(noise_var.sqrt());
    let mut out = grid.clone();
    for (y, hk) in out.data_mut().iter_mut().zip(h) {
        *y = *y * hk;
        if noise_var > 0.0 {
            *y += seed::complex_normal::<T, _>(rng) * sigma;
        }
    }
    Ok(out)
}

/// Time-domain convolution with per-symbol taps, for delays on the sample
/// grid. Samples before the frame start are zero.
pub fn apply_time<T: Real>(samples: &[Complex<T>], real: &ChannelRealization<T>, ofdm: &OfdmConfig) -> Result<Vec<Complex<T>>> {
    let sym_len = ofdm.l_fft + ofdm.l_cp;
    if samples.len() != real.n_sym() * sym_len {
        return Err(Error::shape(real.n_sym() * sym_len, samples.len()));
    }
    let fs = ofdm.sample_rate();
    let shifts = real
        .delays
        .iter()
        .map(|&tau| {
            let d = tau * fs;
            if (d - d.round()).abs() > 1e-6 {
                Err(Error::InvalidArgument(format!("delay {tau:e} s is off the sample grid")))
            } else {
                Ok(d.round() as usize)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = vec![Complex::new(T::zero(), T::zero()); samples.len()];
    for (n, y) in out.iter_mut().enumerate() {
        let j = n / sym_len;
        for (m, &d) in shifts.iter().enumerate() {
            if n >= d {
                *y += real.amplitude(m, j) * samples[n - d];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_profile_matches_target_spread() {
        let ofdm = OfdmConfig::default();
        let p = ChannelConfig::default().profile(&ofdm, 20.0).unwrap();
        assert!((p.powers().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((rms_spread(p.delays(), p.powers()) - 0.5e-6).abs() < 1e-12);
        p.check_cp(&ofdm).unwrap();
    }

    #[test]
    fn unreachable_spread_is_rejected() {
        let cfg = ChannelConfig {
            rms_delay_spread: 5e-6,
            ..ChannelConfig::default()
        };
        assert!(cfg.profile(&OfdmConfig::default(), 10.0).is_err());
    }

    #[test]
    fn long_delays_rejected() {
        let ofdm = OfdmConfig::default();
        let p = ChannelProfile::new(vec![0.0, 1e-5], vec![0.5, 0.5], 1.0, 2.8e9).unwrap();
        assert!(realize::<f64>(&p, &ofdm, 0, 14).is_err());
        let cfg = ChannelConfig {
            tap_spacing: 40,
            ..ChannelConfig::default()
        };
        assert!(cfg.validate(&ofdm).is_err());
    }

    #[test]
    fn static_channel_is_constant() {
        let ofdm = OfdmConfig::default();
        let p = ChannelConfig::default().profile(&ofdm, 0.0).unwrap();
        let r: ChannelRealization<f64> = realize(&p, &ofdm, 5, 14).unwrap();
        for m in 0..p.taps() {
            assert!(r.trajectory(m).iter().all(|a| *a == r.amplitude(m, 0)));
        }
    }

    #[test]
    fn single_tap_is_flat() {
        let ofdm = OfdmConfig::default();
        let r = ChannelRealization::flat(Complex::new(0.3, -0.7), 14);
        let h = freq_response(&r, &ofdm);
        assert!(h.iter().all(|z| *z == Complex::new(0.3, -0.7)));
    }

    #[test]
    fn two_taps_cancel() {
        let ofdm = OfdmConfig::default();
        let k = 100usize;
        let tau = 0.5 / (k as f64 * ofdm.subcarrier_spacing);
        let half = Complex::new(0.5, 0.0);
        let r = ChannelRealization::new(vec![0.0, tau], vec![vec![half; 2], vec![half; 2]]).unwrap();
        let h = freq_response(&r, &ofdm);
        assert!(h[k].norm() < 1e-12);
        assert!((h[0] - Complex::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn doppler_and_correlation() {
        let p = ChannelProfile::new(vec![0.0], vec![1.0], 100.0 / 3.6, 2.8e9).unwrap();
        assert!((p.doppler() - 100.0 / 3.6 * 2.8e9 / SPEED_OF_LIGHT).abs() < 1e-9);
        assert_eq!(p.correlation(0.0), 1.0);
        assert!(p.correlation(1e-4) < 1.0);
    }

    #[test]
    fn noise_variance_formula() {
        assert!((noise_variance(1.0, 10.0) - 0.1).abs() < 1e-15);
        assert!((noise_variance(2.0, 0.0) - 2.0).abs() < 1e-15);
    }
}
