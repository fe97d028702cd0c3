use num_complex::Complex;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semharq::channel::{self, ChannelConfig, ChannelRealization};
use semharq::ofdm::{frame_build, pilot_sequence, qam_map, OfdmConfig, ResourceGrid};
use semharq::rxdsp::*;
use semharq::seed::complex_normal;

type C = Complex<f64>;

fn cfg() -> OfdmConfig {
    OfdmConfig {
        l_fft: 256,
        l_cp: 18,
        ..OfdmConfig::default()
    }
}

fn qam_frame(cfg: &OfdmConfig, seed: u64) -> ResourceGrid<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bits: Vec<u8> = (0..cfg.capacity() * 4).map(|_| rng.gen_range(0..2)).collect();
    frame_build(&qam_map::<f64>(&bits, 16).unwrap(), cfg, seed).unwrap()
}

fn random_h(cfg: &OfdmConfig, seed: u64) -> Vec<C> {
    let ch = ChannelConfig {
        tap_spacing: 2,
        ..ChannelConfig::default()
    };
    let profile = ch.profile(cfg, 60.0).unwrap();
    channel::freq_response(&channel::realize(&profile, cfg, seed, cfg.n_sym).unwrap(), cfg)
}

fn mse(a: &[C], b: &[C]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>() / a.len() as f64
}

fn data_of(g: &ResourceGrid<f64>, cfg: &OfdmConfig) -> Vec<C> {
    cfg.data_rows().into_iter().flat_map(|j| g.row(j).to_vec()).collect()
}

#[test]
fn linear_in_time_channel_is_recovered() {
    let cfg = cfg();
    let n = cfg.l_fft;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // two responses with taps inside the CP
    let taps = |rng: &mut ChaCha8Rng| -> Vec<C> { (0..cfg.l_cp).map(|_| complex_normal(rng)).collect() };
    let resp = |t: &[C]| -> Vec<C> {
        (0..n)
            .map(|k| {
                t.iter()
                    .enumerate()
                    .map(|(d, a)| a * C::from_polar(1.0, -2.0 * std::f64::consts::PI * (k * d) as f64 / n as f64))
                    .sum()
            })
            .collect()
    };
    let (a, b) = (resp(&taps(&mut rng)), resp(&taps(&mut rng)));
    let h: Vec<C> = (0..cfg.n_sym)
        .flat_map(|j| (0..n).map(|k| a[k] + b[k] * j as f64).collect::<Vec<_>>())
        .collect();
    let x = qam_frame(&cfg, 1);
    let mut y = x.clone();
    y.data_mut().iter_mut().zip(&h).for_each(|(v, h)| *v *= h);
    let est = estimate(&y, &pilot_sequence(&cfg, 1), &cfg, 0.0).unwrap();
    let err = est.h().iter().zip(&h).map(|(u, v)| (u - v).norm()).fold(0.0, f64::max);
    assert!(err < 1e-9, "{err}");
}

#[test]
fn estimation_error_falls_with_snr() {
    let cfg = cfg();
    let estimator = Estimator::new(&cfg).unwrap();
    let mut last = f64::INFINITY;
    for snr in [0.0, 6.0, 12.0, 18.0] {
        let nv = channel::noise_variance(1.0, snr);
        let mut total = 0.0;
        for t in 0..200u64 {
            let h = random_h(&cfg, t);
            let x = qam_frame(&cfg, t);
            let y = channel::apply(&x, &h, nv, &mut ChaCha8Rng::seed_from_u64(1000 + t)).unwrap();
            total += mse(estimator.estimate(&y, &pilot_sequence(&cfg, t), nv).unwrap().h(), &h);
        }
        let m = total / 200.0;
        assert!(m < last, "{snr} dB: {m} >= {last}");
        last = m;
    }
}

#[test]
fn mmse_beats_zero_forcing_at_6db() {
    let cfg = cfg();
    let estimator = Estimator::new(&cfg).unwrap();
    let nv = channel::noise_variance(1.0, 6.0);
    let (mut e_mmse, mut e_zf, mut count) = (0.0, 0.0, 0usize);
    let mut t = 0u64;
    while count < 10_000 {
        let h = random_h(&cfg, t);
        let x = qam_frame(&cfg, t);
        let y = channel::apply(&x, &h, nv, &mut ChaCha8Rng::seed_from_u64(77 + t)).unwrap();
        let est = estimator.estimate(&y, &pilot_sequence(&cfg, t), nv).unwrap();
        let xm = data_of(&equalize_mmse(&y, &est, 1.0).unwrap(), &cfg);
        let zf: Vec<C> = y.data().iter().zip(est.h()).map(|(v, h)| v / h).collect();
        let zf = ResourceGrid::from_data(&cfg, zf).unwrap();
        assert_eq!(zf, equalize_zf(&y, &est).unwrap());
        let xd = data_of(&x, &cfg);
        e_mmse += mse(&xm, &xd) * xd.len() as f64;
        e_zf += mse(&data_of(&zf, &cfg), &xd) * xd.len() as f64;
        count += xd.len();
        t += 1;
    }
    assert!(e_mmse <= e_zf, "{e_mmse} > {e_zf}");
}

#[test]
fn truncation_beats_raw_ls_on_flat_fading() {
    let cfg = cfg();
    let estimator = Estimator::new(&cfg).unwrap();
    let nv = channel::noise_variance(1.0, 5.0);
    let mut wins = 0;
    for t in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(t);
        let real = ChannelRealization::flat(complex_normal::<f64, _>(&mut rng), cfg.n_sym);
        let h = channel::freq_response(&real, &cfg);
        let x = qam_frame(&cfg, t);
        let y = channel::apply(&x, &h, nv, &mut rng).unwrap();
        let p = pilot_sequence(&cfg, t);
        let d = mse(estimator.estimate(&y, &p, nv).unwrap().h(), &h);
        let r = mse(estimator.estimate_ls(&y, &p, nv).unwrap().h(), &h);
        wins += (d <= r) as usize;
    }
    assert!(wins >= 190, "{wins}/200");
}

#[test]
fn static_channel_estimate_converges_at_high_snr() {
    let cfg = cfg();
    let ch = ChannelConfig {
        tap_spacing: 2,
        ..ChannelConfig::default()
    };
    let profile = ch.profile(&cfg, 0.0).unwrap();
    let h = channel::freq_response(&channel::realize(&profile, &cfg, 3, cfg.n_sym).unwrap(), &cfg);
    let x = qam_frame(&cfg, 3);
    let nv = channel::noise_variance(1.0, 200.0);
    let y = channel::apply(&x, &h, nv, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let est = estimate(&y, &pilot_sequence(&cfg, 3), &cfg, nv).unwrap();
    let err = est.h().iter().zip(&h).map(|(u, v)| (u - v).norm()).fold(0.0, f64::max);
    assert!(err < 1e-6, "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn flat_noiseless_estimate_is_constant(re in -2.0f64..2.0, im in -2.0f64..2.0, seed in any::<u64>()) {
        let cfg = cfg();
        let c = C::new(re, im);
        let x = qam_frame(&cfg, seed);
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| *v *= c);
        let est = estimate(&y, &pilot_sequence(&cfg, seed), &cfg, 0.0).unwrap();
        prop_assert!(est.h().iter().all(|h| (h - c).norm() < 1e-12));
    }

    #[test]
    fn mmse_is_scale_consistent(seed in any::<u64>(), mag in 0.1f64..10.0, phase in 0.0f64..std::f64::consts::TAU, nv in 0.01f64..1.0) {
        let cfg = cfg();
        let g = C::from_polar(mag, phase);
        let h = random_h(&cfg, seed);
        let y = channel::apply(&qam_frame(&cfg, seed), &h, nv, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let base = equalize_mmse(&y, &ChannelEstimate::genie(&cfg, h.clone(), nv).unwrap(), 1.0).unwrap();
        let mut ys = y.clone();
        ys.data_mut().iter_mut().for_each(|v| *v *= g);
        let hs: Vec<C> = h.iter().map(|v| v * g).collect();
        let scaled = equalize_mmse(&ys, &ChannelEstimate::genie(&cfg, hs, nv * mag * mag).unwrap(), 1.0).unwrap();
        for (a, b) in base.data().iter().zip(scaled.data()) {
            prop_assert!((a - b).norm() <= 1e-9 * (1.0 + a.norm()));
        }
    }

    #[test]
    fn noiseless_genie_mmse_inverts(seed in any::<u64>()) {
        let cfg = cfg();
        let h = random_h(&cfg, seed);
        let x = qam_frame(&cfg, seed);
        let y = channel::apply(&x, &h, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let xh = equalize_mmse(&y, &ChannelEstimate::genie(&cfg, h, 0.0).unwrap(), 1.0).unwrap();
        for (a, b) in xh.data().iter().zip(x.data()) {
            prop_assert!((a - b).norm() < 1e-9);
        }
    }
}
