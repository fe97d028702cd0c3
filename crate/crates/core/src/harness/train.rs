//! Training pipeline: codec pair 1, codec pair 2, rank corpus, scorer.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::codec::{build_frames, train_harq2_pair, train_no_harq, CurvePoint, SceneSet, SemanticCodec, TrainFrame};
use crate::error::{Error, Result};
use crate::simcrc::{build_corpus, evaluate, train_ranker, RankCorpus, RankEpoch, RankReport, SimilarityScorer};

use super::ExperimentConfig;

pub const PAIR1_FILE: &str = "pair1.shcd";
pub const PAIR2_FILE: &str = "pair2.shcd";
pub const SCORER_FILE: &str = "scorer.shsc";
pub const CORPUS_FILE: &str = "corpus.shrc";
pub const MANIFEST_FILE: &str = "manifest.toml";

/// Minimum true-similarity gap of a pair counted by the held-out accuracy.
pub const REPORT_MIN_GAP: f64 = 0.5;
/// Half-width of the band around the median excluded from the AUC.
pub const REPORT_MARGIN: f64 = 0.25;

/// Trained models of one configuration.
pub struct Artifacts {
    pub pair1: SemanticCodec<f64>,
    pub pair2: SemanticCodec<f64>,
    pub scorer: SimilarityScorer,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
struct Manifest {
    fingerprint: String,
    pair1: String,
    pair2: String,
    scorer: String,
}

impl Manifest {
    fn of(cfg: &ExperimentConfig, a: &Artifacts) -> Self {
        Manifest {
            fingerprint: format!("{:016x}", cfg.training_fingerprint()),
            pair1: format!("{:016x}", a.pair1.fingerprint()),
            pair2: format!("{:016x}", a.pair2.fingerprint()),
            scorer: format!("{:016x}", a.scorer.fingerprint()),
        }
    }
}

/// Frames for codec training and validation.
pub fn codec_frames(cfg: &ExperimentConfig) -> Result<(Vec<TrainFrame>, Vec<TrainFrame>)> {
    let head = cfg.scene.head::<f64>();
    let c = &cfg.codec;
    Ok((
        build_frames(&cfg.scene, &head, c.cr, cfg.seed, SceneSet::CodecTrain, c.train_frames, None)?,
        build_frames(&cfg.scene, &head, c.cr, cfg.seed, SceneSet::CodecEval, c.eval_frames, None)?,
    ))
}

pub fn train_pair1(
    cfg: &ExperimentConfig,
    frames: &(Vec<TrainFrame>, Vec<TrainFrame>),
) -> Result<(SemanticCodec<f64>, Vec<CurvePoint>)> {
    train_no_harq(&cfg.codec, cfg.geometry()?, &frames.0, &frames.1, cfg.seed)
}

pub fn rank_corpus(cfg: &ExperimentConfig, pair1: &SemanticCodec<f64>) -> Result<RankCorpus> {
    build_corpus(
        pair1,
        &cfg.scene,
        &cfg.scene.head(),
        &cfg.ofdm,
        &cfg.channel,
        &cfg.scorer,
        cfg.codec.cr,
        cfg.seed,
    )
}

/// Trains the scorer on the training split and reports on the held-out one.
pub fn train_scorer(cfg: &ExperimentConfig, corpus: &RankCorpus) -> Result<(SimilarityScorer, Vec<RankEpoch>, RankReport)> {
    let (train, held) = corpus.split(cfg.scorer.holdout);
    let (scorer, curve) = train_ranker(&train, &cfg.scorer, &cfg.detector, cfg.seed)?;
    let report = evaluate(&scorer, &held, REPORT_MIN_GAP, REPORT_MARGIN, cfg.detector.beta)?;
    Ok((scorer, curve, report))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn open(dir: &Path, name: &str) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(dir.join(name))?))
}

pub fn write_codec(dir: &Path, name: &str, codec: &SemanticCodec<f64>) -> Result<()> {
    let mut w = create(dir, name)?;
    codec.write_to(&mut w)?;
    Ok(w.flush()?)
}

pub fn write_corpus(dir: &Path, corpus: &RankCorpus) -> Result<()> {
    let mut w = create(dir, CORPUS_FILE)?;
    corpus.write_to(&mut w)?;
    Ok(w.flush()?)
}

fn write_codec_curve(dir: &Path, name: &str, curve: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(dir, name)?);
    w.write_record(["epoch", "l_r", "l_p", "l_total"])?;
    for p in curve {
        w.write_record([
            p.epoch.to_string(),
            p.l_r.to_string(),
            p.l_p.to_string(),
            p.l_total.to_string(),
        ])?;
    }
    Ok(w.flush()?)
}

fn write_rank_curve(dir: &Path, curve: &[RankEpoch]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(dir, "curve_scorer.csv")?);
    w.write_record(["epoch", "loss"])?;
    for p in curve {
        w.write_record([p.epoch.to_string(), p.loss.to_string()])?;
    }
    Ok(w.flush()?)
}

fn write_report(dir: &Path, r: &RankReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(dir, "scorer_report.csv")?);
    w.write_record(["pairwise_accuracy", "auc", "false_ack", "false_nack"])?;
    w.write_record([r.pairwise_accuracy, r.auc, r.false_ack, r.false_nack].map(|v| v.to_string()))?;
    Ok(w.flush()?)
}

/// Runs the whole pipeline and writes checkpoints, curves and the manifest
/// into `out`.
pub fn train(cfg: &ExperimentConfig, out: &Path) -> Result<Artifacts> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let frames = codec_frames(cfg)?;
    let (pair1, curve1) = train_pair1(cfg, &frames)?;
    write_codec(out, PAIR1_FILE, &pair1)?;
    write_codec_curve(out, "curve_pair1.csv", &curve1)?;
    let (pair2, curve2) = train_harq2_pair(&pair1, &cfg.codec, &frames.0, &frames.1, cfg.seed)?;
    write_codec(out, PAIR2_FILE, &pair2)?;
    write_codec_curve(out, "curve_pair2.csv", &curve2)?;
    let corpus = rank_corpus(cfg, &pair1)?;
    write_corpus(out, &corpus)?;
    let (scorer, curve, report) = train_scorer(cfg, &corpus)?;
    let mut w = create(out, SCORER_FILE)?;
    scorer.write_to(&mut w)?;
    w.flush()?;
    write_rank_curve(out, &curve)?;
    write_report(out, &report)?;
    let artifacts = Artifacts { pair1, pair2, scorer };
    let manifest = toml::to_string(&Manifest::of(cfg, &artifacts)).expect("manifest serializes");
    fs::write(out.join(MANIFEST_FILE), manifest)?;
    Ok(artifacts)
}

/// Loads the checkpoints in `dir` if its manifest matches `cfg`.
pub fn load(cfg: &ExperimentConfig, dir: &Path) -> Result<Option<Artifacts>> {
    let Ok(text) = fs::read_to_string(dir.join(MANIFEST_FILE)) else {
        return Ok(None);
    };
    let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Format(format!("{MANIFEST_FILE}: {e}")))?;
    if manifest.fingerprint != format!("{:016x}", cfg.training_fingerprint()) {
        return Ok(None);
    }
    let artifacts = Artifacts {
        pair1: SemanticCodec::read_from(open(dir, PAIR1_FILE)?)?,
        pair2: SemanticCodec::read_from(open(dir, PAIR2_FILE)?)?,
        scorer: SimilarityScorer::read_from(open(dir, SCORER_FILE)?)?,
    };
    if Manifest::of(cfg, &artifacts) != manifest {
        return Err(Error::Format(format!(
            "checkpoints in {} do not match the manifest",
            dir.display()
        )));
    }
    Ok(Some(artifacts))
}

pub fn load_or_train(cfg: &ExperimentConfig, dir: &Path) -> Result<Artifacts> {
    match load(cfg, dir)? {
        Some(a) => Ok(a),
        None => train(cfg, dir),
    }
}

/// Builds the rank corpus from pair 1 (trained if `dir` has none for
/// `cfg`) and writes it with a per-sample CSV listing.
pub fn corpus(cfg: &ExperimentConfig, dir: &Path) -> Result<RankCorpus> {
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    let pair1 = match load(cfg, dir)? {
        Some(a) => a.pair1,
        None => {
            let (p, curve) = train_pair1(cfg, &codec_frames(cfg)?)?;
            write_codec(dir, PAIR1_FILE, &p)?;
            write_codec_curve(dir, "curve_pair1.csv", &curve)?;
            p
        }
    };
    let corpus = rank_corpus(cfg, &pair1)?;
    write_corpus(dir, &corpus)?;
    let mut w = csv::Writer::from_writer(create(dir, "corpus.csv")?);
    w.write_record(["query", "sample", "snr_db", "s"])?;
    for (qi, q) in corpus.queries.iter().enumerate() {
        for (k, s) in q.samples.iter().enumerate() {
            w.write_record([qi.to_string(), k.to_string(), s.snr_db.to_string(), s.s.to_string()])?;
        }
    }
    w.flush()?;
    Ok(corpus)
}
