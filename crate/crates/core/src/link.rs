//! One frame through the evaluation chain: framing, fading channel with
//! noise, pilot estimation, and MMSE equalization.

use num_complex::Complex;
use rand::Rng;

use crate::channel::{self, ChannelRealization};
use crate::error::{Error, Result};
use crate::ofdm::{frame_build, frame_extract, pilot_sequence, OfdmConfig};
use crate::rxdsp::{equalize_mmse, Estimator};
use crate::scalar::Real;

/// Received payload of one frame.
#[derive(Debug, Clone)]
pub struct Reception<T> {
    /// MMSE-equalized payload symbols.
    pub equalized: Vec<Complex<T>>,
    /// Unequalized received payload symbols.
    pub received: Vec<Complex<T>>,
    /// Channel estimate at each payload position.
    pub h_hat: Vec<Complex<T>>,
    pub noise_var: f64,
}

/// Channel state used by the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Csi {
    /// Pilot-based estimation.
    Estimated,
    /// True frequency response.
    Genie,
}

pub struct Link<T: Real> {
    cfg: OfdmConfig,
    estimator: Estimator<T>,
    power: f64,
    csi: Csi,
}

impl<T: Real> Link<T> {
    pub fn new(cfg: &OfdmConfig, power: f64) -> Result<Self> {
        if !(power > 0.0) {
            return Err(Error::InvalidArgument("signal power must be positive".into()));
        }
        Ok(Link {
            cfg: cfg.clone(),
            estimator: Estimator::new(cfg)?,
            power,
            csi: Csi::Estimated,
        })
    }

    pub fn with_csi(mut self, csi: Csi) -> Self {
        self.csi = csi;
        self
    }

    pub fn config(&self) -> &OfdmConfig {
        &self.cfg
    }

    /// Sends `payload` (at most one frame) over `real` at `snr_db`.
    pub fn transmit<R: Rng + ?Sized>(
        &self,
        payload: &[Complex<T>],
        real: &ChannelRealization<T>,
        snr_db: f64,
        pilot_seed: u64,
        noise: &mut R,
    ) -> Result<Reception<T>> {
        if real.n_sym() != self.cfg.n_sym {
            return Err(Error::shape(self.cfg.n_sym, real.n_sym()));
        }
        let grid = frame_build(payload, &self.cfg, pilot_seed)?;
        let h = channel::freq_response(real, &self.cfg);
        let noise_var = channel::noise_variance(self.power, snr_db);
        let rx = channel::apply(&grid, &h, noise_var, noise)?;
        let est = match self.csi {
            Csi::Estimated => self
                .estimator
                .estimate(&rx, &pilot_sequence(&self.cfg, pilot_seed), noise_var)?,
            Csi::Genie => crate::rxdsp::ChannelEstimate::genie(&self.cfg, h, noise_var)?,
        };
        let eq = equalize_mmse(&rx, &est, self.power)?;
        let n = payload.len();
        let h_grid = crate::ofdm::ResourceGrid::from_data(&self.cfg, est.h().to_vec())?;
        Ok(Reception {
            equalized: frame_extract(&eq, &self.cfg, n)?,
            received: frame_extract(&rx, &self.cfg, n)?,
            h_hat: frame_extract(&h_grid, &self.cfg, n)?,
            noise_var,
        })
    }
}
