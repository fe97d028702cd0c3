#![allow(dead_code)]

use std::sync::OnceLock;

use semharq::codec::{train_harq2_pair, CurvePoint, SemanticCodec, TrainFrame};
use semharq::harness::{train, ExperimentConfig};

pub fn quick_config() -> ExperimentConfig {
    ExperimentConfig::from_toml(include_str!("../../../../configs/quick.toml")).unwrap()
}

/// Codec pairs trained once on the quick configuration.
pub struct Trained {
    pub cfg: ExperimentConfig,
    pub train: Vec<TrainFrame>,
    pub eval: Vec<TrainFrame>,
    pub pair1: SemanticCodec<f64>,
    pub curve1: Vec<CurvePoint>,
    pub pair2: SemanticCodec<f64>,
    pub curve2: Vec<CurvePoint>,
}

pub fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = quick_config();
        let frames = train::codec_frames(&cfg).unwrap();
        let (pair1, curve1) = train::train_pair1(&cfg, &frames).unwrap();
        let (pair2, curve2) = train_harq2_pair(&pair1, &cfg.codec, &frames.0, &frames.1, cfg.seed).unwrap();
        Trained {
            cfg,
            train: frames.0,
            eval: frames.1,
            pair1,
            curve1,
            pair2,
            curve2,
        }
    })
}
