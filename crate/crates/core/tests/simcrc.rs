mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semharq::codec::{build_frames, SceneSet, TrainFrame};
use semharq::harness::train;
use semharq::simcrc::*;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn small_scorer_cfg() -> ScorerConfig {
    ScorerConfig {
        pool: [4, 4],
        hidden: 6,
        ..ScorerConfig::default()
    }
}

fn random_query(rng: &mut ChaCha8Rng, n: usize, k: usize) -> RankQuery {
    let mut map = || (0..n).map(|_| rng.gen_range(0.0f32..1.0)).collect::<Vec<f32>>();
    let reference = map();
    let samples = (0..k)
        .map(|_| RankSample {
            map: map(),
            s: 0.0,
            snr_db: 0.0,
        })
        .collect::<Vec<_>>();
    let mut q = RankQuery { reference, samples };
    for s in q.samples.iter_mut() {
        s.s = rng.gen_range(0..4) as f64;
    }
    q
}

/// Frames for the separable corpus, on the quick scene geometry.
fn frames(count: usize) -> Vec<TrainFrame> {
    let cfg = common::quick_config();
    let pool = (cfg.scorer.pool[0], cfg.scorer.pool[1]);
    build_frames(
        &cfg.scene,
        &cfg.scene.head(),
        cfg.codec.cr,
        11,
        SceneSet::Separable,
        count,
        Some(pool),
    )
    .unwrap()
}

fn separable(count: usize) -> RankCorpus {
    let cfg = common::quick_config();
    separable_corpus(&frames(count), cfg.scorer.pool, 12, 0.02, 1.6, 0.5, cfg.scorer.s_cap, 3).unwrap()
}

fn quick_scorer_cfg(epochs: usize) -> ScorerConfig {
    ScorerConfig {
        epochs,
        ..common::quick_config().scorer
    }
}

#[test]
fn pair_loss_equals_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let (a, b) = (rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0));
        let sigma = rng.gen_range(0.2..3.0);
        let s_mn = [-1.0, 0.0, 1.0][rng.gen_range(0..3)];
        let target = 0.5 * (1.0 + s_mn);
        let p = sigmoid(sigma * (a - b));
        let ce = -target * p.ln() - (1.0 - target) * (1.0 - p).ln();
        assert!((pair_loss(a, b, s_mn, sigma) - ce).abs() < 1e-12);
    }
}

#[test]
fn two_sample_lambda_example() {
    for sigma in [1.0, 2.5] {
        let l = lambda_gradients(&[0.3, 0.3], &[5.0, 1.0], sigma).unwrap();
        assert_eq!(l, vec![-sigma / 2.0, sigma / 2.0]);
    }
}

fn set_params(s: &mut SimilarityScorer, branch: &[f64], head: &[f64]) {
    s.branch_mut().set_flat_params(branch).unwrap();
    s.head_mut().set_flat_params(head).unwrap();
}

fn query_cost(s: &SimilarityScorer, q: &RankQuery) -> f64 {
    s.query_gradients(&[q], 1.0).unwrap().0
}

fn has_pairs(q: &RankQuery) -> bool {
    !ranked_pairs(&q.samples.iter().map(|s| s.s).collect::<Vec<_>>()).is_empty()
}

#[test]
fn lambda_chain_matches_parameter_finite_differences() {
    let cfg = ScorerConfig {
        tied_head: false,
        ..small_scorer_cfg()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-6;
    for trial in 0..5u64 {
        let scorer = SimilarityScorer::new(&cfg, trial).unwrap();
        let q = random_query(&mut rng, 16, 5);
        if !has_pairs(&q) {
            continue;
        }
        let (_, gb, gh) = scorer.query_gradients(&[&q], 1.0).unwrap();
        let analytic: Vec<f64> = gb.flat().into_iter().chain(gh.flat()).collect();
        let (pb, ph) = (scorer.branch().flat_params(), scorer.head().flat_params());
        let nb = pb.len();
        let fd: Vec<f64> = (0..analytic.len())
            .map(|i| {
                let eval = |delta: f64| {
                    let (mut b, mut hd) = (pb.clone(), ph.clone());
                    if i < nb {
                        b[i] += delta;
                    } else {
                        hd[i - nb] += delta;
                    }
                    let mut s = scorer.clone();
                    set_params(&mut s, &b, &hd);
                    query_cost(&s, &q)
                };
                (eval(h) - eval(-h)) / (2.0 * h)
            })
            .collect();
        let diff: f64 = analytic.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(diff <= 1e-6 * norm, "trial {trial}: {diff} vs {norm}");
    }
}

#[test]
fn tied_gradient_matches_directional_differences() {
    let cfg = small_scorer_cfg();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = 1e-6;
    for trial in 0..5u64 {
        let scorer = SimilarityScorer::new(&cfg, trial).unwrap();
        let q = random_query(&mut rng, 16, 5);
        if !has_pairs(&q) {
            continue;
        }
        let (_, gb, gh) = scorer.query_gradients(&[&q], 1.0).unwrap();
        for _ in 0..5 {
            // random direction that keeps the head's first layer at [D, -D]
            let mut dir = scorer.clone();
            let db: Vec<f64> = (0..gb.flat().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dh: Vec<f64> = (0..gh.flat().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            set_params(&mut dir, &db, &dh);
            let w = &mut dir.head_mut().layers_mut()[0].weight;
            let half = w.ncols() / 2;
            for r in 0..w.nrows() {
                for c in 0..half {
                    w[[r, c + half]] = -w[[r, c]];
                }
            }
            let (db, dh) = (dir.branch().flat_params(), dir.head().flat_params());
            let analytic: f64 = gb
                .flat()
                .iter()
                .zip(&db)
                .chain(gh.flat().iter().zip(&dh))
                .map(|(g, d)| g * d)
                .sum();
            let eval = |t: f64| {
                let b: Vec<f64> = scorer
                    .branch()
                    .flat_params()
                    .iter()
                    .zip(&db)
                    .map(|(p, d)| p + t * d)
                    .collect();
                let hd: Vec<f64> = scorer.head().flat_params().iter().zip(&dh).map(|(p, d)| p + t * d).collect();
                let mut s = scorer.clone();
                set_params(&mut s, &b, &hd);
                query_cost(&s, &q)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!((analytic - fd).abs() <= 1e-6 * fd.abs().max(1e-3), "{analytic} vs {fd}");
        }
    }
}

#[test]
fn single_sampling_queries_give_no_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let queries: Vec<RankQuery> = (0..10).map(|_| random_query(&mut rng, 16, 1)).collect();
    let corpus = RankCorpus::new([4, 4], queries).unwrap();
    assert_eq!(corpus.pairs(), 0);
    let scorer = SimilarityScorer::new(&small_scorer_cfg(), 0).unwrap();
    let refs: Vec<&RankQuery> = corpus.queries.iter().collect();
    let (loss, gb, gh) = scorer.query_gradients(&refs, 1.0).unwrap();
    assert_eq!(loss, 0.0);
    assert!(gb.flat().iter().chain(gh.flat().iter()).all(|&g| g == 0.0));
}

#[test]
fn doubling_scores_leaves_training_unchanged() {
    let corpus = separable(24);
    let cfg = quick_scorer_cfg(3);
    let det = DetectorConfig::default();
    let (a, ca) = train_ranker(&corpus, &cfg, &det, 5).unwrap();
    let (b, cb) = train_ranker(&corpus.map_scores(|s| 2.0 * s), &cfg, &det, 5).unwrap();
    assert_eq!(ca, cb);
    assert_eq!(a, b);
}

#[test]
fn loss_falls_over_first_epochs_and_separates() {
    let corpus = separable(600);
    let (train_set, held) = corpus.split(0.2);
    let (scorer, curve) = train_ranker(&train_set, &quick_scorer_cfg(30), &DetectorConfig::default(), 7).unwrap();
    for w in curve[..5].windows(2) {
        assert!(w[1].loss < w[0].loss, "{:?}", curve);
    }
    let report = evaluate(&scorer, &held, 0.5, 0.25, 0.72).unwrap();
    assert!(report.auc > 0.9, "{report:?}");

    // clean reconstruction against heavy corruption
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut clean, mut bad) = (0.0, 0.0);
    let test_frames = frames(40);
    for f in &test_frames {
        let r = f.scene.pooled_confidence(&f.packed).unwrap();
        let noisy: Vec<f64> = f.packed.iter().map(|v| v + 3.0 * rng.gen_range(-1.0..1.0)).collect();
        clean += scorer.score_pooled(&r, &r).unwrap();
        bad += scorer.score_pooled(&r, &f.scene.pooled_confidence(&noisy).unwrap()).unwrap();
    }
    assert!(clean > bad, "{clean} vs {bad}");
}

#[test]
fn channel_corpus_is_deterministic_and_tracks_snr() {
    let t = common::trained();
    let mut cfg = t.cfg.clone();
    cfg.scorer.corpus_queries = 20;
    let a = train::rank_corpus(&cfg, &t.pair1).unwrap();
    let b = train::rank_corpus(&cfg, &t.pair1).unwrap();
    assert_eq!(a, b);
    let mean_at = |snr: f64| {
        let v: Vec<f64> = a
            .queries
            .iter()
            .flat_map(|q| q.samples.iter().filter(|s| s.snr_db == snr).map(|s| s.s))
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean_at(18.0) > mean_at(0.0), "{} vs {}", mean_at(18.0), mean_at(0.0));
    assert!(a.scores().iter().all(|&s| s <= cfg.scorer.s_cap));
}

#[test]
fn corpus_file_round_trip() {
    let corpus = separable(6);
    let mut buf = Vec::new();
    corpus.write_to(&mut buf).unwrap();
    let back = RankCorpus::read_from(buf.as_slice()).unwrap();
    assert_eq!(back.queries.len(), corpus.queries.len());
    for (x, y) in back.queries.iter().zip(&corpus.queries) {
        assert_eq!(x.reference, y.reference);
        for (u, v) in x.samples.iter().zip(&y.samples) {
            assert_eq!(u.map, v.map);
            assert_eq!(u.s, v.s as f32 as f64);
        }
    }
}

proptest! {
    #[test]
    fn lambdas_sum_to_exactly_zero(
        pred in prop::collection::vec(-5.0f64..5.0, 2..12),
        seed in any::<u64>(),
        sigma in 0.1f64..4.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth: Vec<f64> = pred.iter().map(|_| rng.gen_range(0..5) as f64).collect();
        let l = lambda_gradients(&pred, &truth, sigma).unwrap();
        prop_assert_eq!(l.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn pair_probability_antisymmetric_and_monotone(a in -10.0f64..10.0, b in -10.0f64..10.0, d in 0.01f64..5.0, sigma in 0.1f64..3.0) {
        prop_assert!((pair_probability(a, b, sigma) + pair_probability(b, a, sigma) - 1.0).abs() < 1e-12);
        prop_assert!(pair_probability(a + d, b, sigma) >= pair_probability(a, b, sigma));
    }

    #[test]
    fn ack_is_monotone(s in 0.0f64..1.0, t in 0.0f64..1.0, beta in 0.01f64..0.99) {
        let (lo, hi) = if s < t { (s, t) } else { (t, s) };
        prop_assert!(ack_decide(hi, beta) as u8 >= ack_decide(lo, beta) as u8);
    }

    #[test]
    fn scores_lie_strictly_inside_unit_interval(seed in any::<u64>(), scale in 0.0f64..50.0) {
        let scorer = SimilarityScorer::new(&small_scorer_cfg(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..16).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..16).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
        let s = scorer.score_pooled(&a, &b).unwrap();
        prop_assert!(s > 0.0 && s < 1.0);
        prop_assert_eq!(scorer.zeroed().score_pooled(&a, &b).unwrap(), 0.5);
    }
}
