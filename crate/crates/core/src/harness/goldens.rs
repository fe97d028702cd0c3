//! Self-check oracle suites: FFT round trip, frequency response by direct
//! summation, λ-gradients by finite differences, CRC error detection.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use num_complex::Complex;
use rand::Rng;

use crate::channel::{freq_response, realize};
use crate::error::Result;
use crate::harq::crc::{attach_bytes, bytes_to_bits, crc24, crc24_bytes, crc24_verify, verify_bytes};
use crate::ofdm::{Modem, ResourceGrid};
use crate::seed::{self, Stream};
use crate::simcrc::{lambda_gradients, query_loss};

use super::ExperimentConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct GoldenCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed error; for counting checks, the number of misses.
    pub max_err: f64,
    pub tolerance: f64,
}

impl GoldenCheck {
    fn error(name: &'static str, max_err: f64, tolerance: f64) -> Self {
        GoldenCheck {
            name,
            passed: max_err <= tolerance,
            max_err,
            tolerance,
        }
    }
}

fn random_grid(cfg: &ExperimentConfig, rng: &mut impl Rng) -> ResourceGrid<f64> {
    let n = cfg.ofdm.n_sym * cfg.ofdm.l_fft;
    let data = (0..n).map(|_| seed::complex_normal(rng)).collect();
    ResourceGrid::from_data(&cfg.ofdm, data).expect("grid size")
}

/// Grid → time → grid relative error, and per-symbol energy mismatch.
pub fn fft_round_trip(cfg: &ExperimentConfig) -> Result<Vec<GoldenCheck>> {
    let mut rng = seed::stream_rng(cfg.seed, Stream::Golden, 1, 0);
    let modem = Modem::<f64>::new(&cfg.ofdm)?;
    let grid = random_grid(cfg, &mut rng);
    let time = modem.to_time(&grid)?;
    let back = modem.from_time(&time)?;
    let peak = grid.data().iter().map(|z| z.norm()).fold(0.0, f64::max);
    let err = back
        .data()
        .iter()
        .zip(grid.data())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max)
        / peak;
    let (n, cp) = (cfg.ofdm.l_fft, cfg.ofdm.l_cp);
    let mut parseval = 0.0f64;
    for (j, sym) in time.chunks_exact(n + cp).enumerate() {
        let e_t: f64 = sym[cp..].iter().map(|z| z.norm_sqr()).sum();
        let e_f: f64 = grid.row(j).iter().map(|z| z.norm_sqr()).sum();
        parseval = parseval.max((e_t - e_f).abs() / e_f);
    }
    Ok(vec![
        GoldenCheck::error("fft_round_trip", err, 1e-9),
        GoldenCheck::error("fft_parseval", parseval, 1e-9),
    ])
}

/// `H[j,k]` at random positions against `Σ_m a_m(j)·e^{−i2πkΔfτ_m}`.
pub fn freq_response_brute(cfg: &ExperimentConfig) -> Result<GoldenCheck> {
    let mut rng = seed::stream_rng(cfg.seed, Stream::Golden, 2, 0);
    let speed = cfg.channel.draw_speed(&mut rng);
    let profile = cfg.channel.profile(&cfg.ofdm, speed)?;
    let real = realize::<f64>(
        &profile,
        &cfg.ofdm,
        seed::derive(cfg.seed, Stream::Golden, 2, 1),
        cfg.ofdm.n_sym,
    )?;
    let h = freq_response(&real, &cfg.ofdm);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let j = rng.gen_range(0..cfg.ofdm.n_sym);
        let k = rng.gen_range(0..cfg.ofdm.l_fft);
        let mut sum = Complex::new(0.0, 0.0);
        for (m, &tau) in real.delays().iter().enumerate() {
            let phase = -2.0 * std::f64::consts::PI * k as f64 * cfg.ofdm.subcarrier_spacing * tau;
            sum += real.amplitude(m, j) * Complex::new(phase.cos(), phase.sin());
        }
        worst = worst.max((h[j * cfg.ofdm.l_fft + k] - sum).norm());
    }
    Ok(GoldenCheck::error("freq_response_brute", worst, 1e-12))
}

/// λ against central differences of the summed pair cost on random
/// 5-sample queries, and `Σλ = 0` exactly.
pub fn lambda_check(cfg: &ExperimentConfig) -> Result<Vec<GoldenCheck>> {
    let mut rng = seed::stream_rng(cfg.seed, Stream::Golden, 3, 0);
    let sigma = cfg.detector.sigma_r;
    let h = 1e-5;
    let (mut worst, mut sum_nonzero) = (0.0f64, 0.0);
    for _ in 0..100 {
        let pred: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
        // integer truths so that ties occur
        let truth: Vec<f64> = (0..5).map(|_| rng.gen_range(0..4) as f64).collect();
        let lambda = lambda_gradients(&pred, &truth, sigma)?;
        if lambda.iter().sum::<f64>() != 0.0 {
            sum_nonzero += 1.0;
        }
        for m in 0..5 {
            let (mut up, mut down) = (pred.clone(), pred.clone());
            up[m] += h;
            down[m] -= h;
            let fd = (query_loss(&up, &truth, sigma) - query_loss(&down, &truth, sigma)) / (2.0 * h);
            worst = worst.max((lambda[m] - fd).abs() / fd.abs().max(1e-2));
        }
    }
    Ok(vec![
        GoldenCheck::error("lambda_finite_difference", worst, 1e-6),
        GoldenCheck::error("lambda_sum_zero", sum_nonzero, 0.0),
    ])
}

/// Every single-bit flip of a 512-bit message with its CRC, and random
/// bursts of length at most 24, must fail the check.
pub fn crc_check(cfg: &ExperimentConfig, burst_trials: usize) -> Result<Vec<GoldenCheck>> {
    let mut rng = seed::stream_rng(cfg.seed, Stream::Golden, 4, 0);
    let msg: Vec<u8> = (0..64).map(|_| rng.gen()).collect();
    let word = attach_bytes(&msg);
    let bits = bytes_to_bits(&word);
    let mut misses = 0.0;
    if !crc24_verify(&bits) || crc24(&bytes_to_bits(&msg)) != crc24_bytes(&msg) {
        misses += 1.0;
    }
    for i in 0..bits.len() {
        let mut b = bits.clone();
        b[i] ^= 1;
        if crc24_verify(&b) {
            misses += 1.0;
        }
    }
    let flips = GoldenCheck::error("crc_single_flips", misses, 0.0);
    let mut misses = 0.0;
    let n_bits = word.len() * 8;
    for _ in 0..burst_trials {
        let len = rng.gen_range(1..=24usize);
        let start = rng.gen_range(0..=n_bits - len);
        let mut w = word.clone();
        for i in 0..len {
            // first and last bit of the burst always flip
            if i == 0 || i == len - 1 || rng.gen::<bool>() {
                let p = start + i;
                w[p / 8] ^= 0x80 >> (p % 8);
            }
        }
        if verify_bytes(&w) {
            misses += 1.0;
        }
    }
    Ok(vec![flips, GoldenCheck::error("crc_bursts", misses, 0.0)])
}

pub fn run(cfg: &ExperimentConfig) -> Result<Vec<GoldenCheck>> {
    cfg.validate()?;
    let mut out = fft_round_trip(cfg)?;
    out.push(freq_response_brute(cfg)?);
    out.extend(lambda_check(cfg)?);
    out.extend(crc_check(cfg, 100_000)?);
    Ok(out)
}

/// Writes `goldens.csv`.
pub fn write(checks: &[GoldenCheck], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("goldens.csv"))?));
    w.write_record(["check", "passed", "max_err", "tolerance"])?;
    for c in checks {
        w.write_record([
            c.name.to_string(),
            c.passed.to_string(),
            c.max_err.to_string(),
            c.tolerance.to_string(),
        ])?;
    }
    Ok(w.flush()?)
}
