//! Counter-based seed derivation.
//!
//! Every random stream in a run is keyed by `(master, stream, a, b)` and
//! hashed with the SplitMix64 finalizer, so the value drawn for session 17,
//! round 2 never depends on how many other sessions ran first or on which
//! worker thread ran them:
//!
//! ```text
//! seed = mix(mix(mix(master ^ stream·φ) ^ a·φ) ^ b·φ),  φ = 0x9E3779B97F4A7C15
//! ```

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::Real;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Named random streams. The discriminant is part of the hash input and must
/// never be reordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Scene = 1,
    Fading = 2,
    Noise = 3,
    Pilot = 4,
    CodecInit = 5,
    CodecTrain = 6,
    ScorerInit = 7,
    ScorerTrain = 8,
    Corpus = 9,
    Speed = 10,
    Golden = 11,
}

/// SplitMix64 output function.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(master: u64, stream: Stream, a: u64, b: u64) -> u64 {
    let s = mix(master ^ (stream as u64).wrapping_mul(GOLDEN));
    let s = mix(s ^ a.wrapping_mul(GOLDEN));
    mix(s ^ b.wrapping_mul(GOLDEN))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream_rng(master: u64, stream: Stream, a: u64, b: u64) -> ChaCha8Rng {
    rng(derive(master, stream, a, b))
}

/// Circularly-symmetric complex Gaussian with `E|z|² = 1`.
#[inline]
pub fn complex_normal<T: Real, R: Rng + ?Sized>(rng: &mut R) -> Complex<T> {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    Complex::new(T::of(re * s), T::of(im * s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_distinct() {
        let a = derive(1, Stream::Scene, 0, 0);
        let b = derive(1, Stream::Noise, 0, 0);
        let c = derive(1, Stream::Scene, 1, 0);
        let d = derive(1, Stream::Scene, 0, 1);
        assert!(a != b && a != c && a != d && c != d);
        assert_eq!(a, derive(1, Stream::Scene, 0, 0));
    }
}
