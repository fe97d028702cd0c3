mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semharq::error::Error;
use semharq::harness::train::{self, Artifacts};
use semharq::harness::{sweep, with_threads, ExperimentConfig};
use semharq::harq::Mode;

struct Quick {
    cfg: ExperimentConfig,
    dir: tempfile::TempDir,
    models: Artifacts,
}

fn quick() -> &'static Quick {
    static CELL: OnceLock<Quick> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = common::quick_config();
        let dir = tempfile::tempdir().unwrap();
        let models = train::train(&cfg, dir.path()).unwrap();
        Quick { cfg, dir, models }
    })
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn retraining_is_byte_identical() {
    let q = quick();
    let again = tempfile::tempdir().unwrap();
    with_threads(2, || train::train(&q.cfg, again.path())).unwrap().unwrap();
    let (a, b) = (files(q.dir.path()), files(again.path()));
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (name, bytes) in &a {
        assert!(bytes == &b[name], "{name} differs");
    }
    assert!(a.contains_key(train::PAIR1_FILE) && a.contains_key(train::SCORER_FILE));
}

#[test]
fn trained_artifacts_reload() {
    let q = quick();
    let loaded = train::load(&q.cfg, q.dir.path()).unwrap().expect("manifest matches");
    assert_eq!(loaded.pair1, q.models.pair1);
    assert_eq!(loaded.pair2, q.models.pair2);
    assert_eq!(loaded.scorer, q.models.scorer);
    let mut other = q.cfg.clone();
    other.seed += 1;
    assert!(train::load(&other, q.dir.path()).unwrap().is_none());
}

#[test]
fn curves_are_ordered_by_epoch() {
    let q = quick();
    for name in ["curve_pair1.csv", "curve_pair2.csv", "curve_scorer.csv"] {
        let mut r = csv::Reader::from_path(q.dir.path().join(name)).unwrap();
        assert_eq!(&r.headers().unwrap()[0], "epoch");
        let epochs: Vec<u64> = r.records().map(|rec| rec.unwrap()[0].parse().unwrap()).collect();
        assert!(!epochs.is_empty(), "{name}");
        assert!(epochs.windows(2).all(|w| w[0] < w[1]), "{name}: {epochs:?}");
    }
}

#[test]
fn missing_nested_field_is_named() {
    let text = include_str!("../../../configs/quick.toml").replace("l_cp = 18\n", "");
    match ExperimentConfig::from_toml(&text) {
        Err(Error::Config { field, .. }) => assert_eq!(field, "l_cp"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn invalid_values_are_rejected_by_field() {
    let mut cfg = common::quick_config();
    cfg.betas = vec![0.5, 1.5];
    assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "betas"));
    let mut cfg = common::quick_config();
    cfg.snr_db.clear();
    assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "snr_db"));
}

fn first_line(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn sweep_is_identical_across_thread_counts_and_headers_match() {
    let q = quick();
    let mut cfg = q.cfg.clone();
    cfg.sessions = 12;
    let outs: Vec<tempfile::TempDir> = [1usize, 3, 1]
        .iter()
        .map(|&t| {
            let dir = tempfile::tempdir().unwrap();
            let result = with_threads(t, || sweep::run(&cfg, &q.models)).unwrap().unwrap();
            sweep::write(&result, dir.path()).unwrap();
            dir
        })
        .collect();
    let base = files(outs[0].path());
    for o in &outs[1..] {
        assert_eq!(base, files(o.path()));
    }
    let dir = outs[0].path();
    assert_eq!(
        first_line(&dir.join("metrics.csv")),
        "mode,snr_db,beta,sessions,mean_s,se_s,mean_loss,throughput,mean_rounds,ack_rate"
    );
    assert_eq!(
        first_line(&dir.join("sessions.csv")),
        "mode,snr_db,beta,session,rounds,ack_round,selected,final_s,final_loss,s_hat,s_true"
    );
    assert_eq!(first_line(&dir.join("rounds.csv")), "mode,snr_db,beta,rounds,count");
    // one metrics row per (mode, snr, beta) point
    let rows = fs::read_to_string(dir.join("metrics.csv")).unwrap().lines().count() - 1;
    let semantic_modes = cfg.modes.iter().filter(|m| matches!(m, Mode::Sim1 | Mode::Sim2)).count();
    let other_modes = cfg.modes.len() - semantic_modes;
    assert_eq!(rows, cfg.snr_db.len() * (semantic_modes * cfg.betas.len() + other_modes));
    assert!(dir.join("plot.gp").exists());
}

#[test]
fn standard_error_shrinks_by_root_two() {
    let q = quick();
    let run = |sessions: usize| {
        let mut cfg = q.cfg.clone();
        cfg.sessions = sessions;
        cfg.modes = vec![Mode::NoHarq];
        cfg.snr_db = vec![6.0];
        sweep::run(&cfg, &q.models).unwrap()
    };
    let (small, large) = (run(1000), run(2000));
    let (se1, se2) = (small.points[0].se_s, large.points[0].se_s);
    let ratio = se1 / se2;
    assert!((ratio / 2f64.sqrt() - 1.0).abs() <= 0.2, "ratio {ratio}");

    // bootstrap standard error of the mean from the session values
    let s: Vec<f64> = small.sessions.iter().map(|l| l.final_s).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let means: Vec<f64> = (0..2000)
        .map(|_| (0..s.len()).map(|_| s[rng.gen_range(0..s.len())]).sum::<f64>() / s.len() as f64)
        .collect();
    let m = means.iter().sum::<f64>() / means.len() as f64;
    let boot = (means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (means.len() - 1) as f64).sqrt();
    assert!((se1 / boot - 1.0).abs() <= 0.2, "reported {se1}, bootstrap {boot}");
}

#[test]
fn corpus_command_writes_listing() {
    let q = quick();
    let mut cfg = q.cfg.clone();
    cfg.scorer.corpus_queries = 5;
    let dir = tempfile::tempdir().unwrap();
    let corpus = train::corpus(&cfg, dir.path()).unwrap();
    let mut r = csv::Reader::from_path(dir.path().join("corpus.csv")).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["query", "sample", "snr_db", "s"]);
    assert_eq!(r.records().count(), corpus.samples());
    assert!(dir.path().join(train::CORPUS_FILE).exists());
}
