//! Experiment configuration, read from TOML.
//!
//! Every field is required; a missing or unknown key is a config error
//! naming it. See `docs/config.md` for the schema.

use std::path::Path;

use crate::channel::ChannelConfig;
use crate::codec::{CodecConfig, CodecGeometry};
use crate::error::{Error, Result};
use crate::harq::{HarqConfig, Mode};
use crate::ofdm::OfdmConfig;
use crate::scenegen::SceneConfig;
use crate::simcrc::{DetectorConfig, ScorerConfig};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed of every random stream.
    pub seed: u64,
    /// SNR grid of the sweep, dB.
    pub snr_db: Vec<f64>,
    /// Sessions per (mode, SNR, β) point.
    pub sessions: usize,
    pub modes: Vec<Mode>,
    /// Thresholds swept for the semantic HARQ modes.
    pub betas: Vec<f64>,
    /// Worker threads; 0 picks one per core.
    pub threads: usize,
    pub out: String,
    pub scene: SceneConfig,
    pub ofdm: OfdmConfig,
    pub channel: ChannelConfig,
    pub codec: CodecConfig,
    pub scorer: ScorerConfig,
    pub detector: DetectorConfig,
    pub harq: HarqConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            snr_db: (0..=6).map(|i| 3.0 * i as f64).collect(),
            sessions: 200,
            modes: Mode::ALL.to_vec(),
            betas: vec![0.65, 0.72, 0.74],
            threads: 0,
            out: "out".into(),
            scene: SceneConfig::default(),
            ofdm: OfdmConfig::default(),
            channel: ChannelConfig::default(),
            codec: CodecConfig::default(),
            scorer: ScorerConfig::default(),
            detector: DetectorConfig::default(),
            harq: HarqConfig::default(),
        }
    }
}

/// Field named in a deserializer message such as "missing field `seed`".
fn field_of(msg: &str) -> Option<String> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(msg[start..start + len].to_string())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            Error::Config {
                field: field_of(&msg).unwrap_or_else(|| "<document>".into()),
                message: msg,
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn geometry(&self) -> Result<CodecGeometry> {
        CodecGeometry::new(self.scene.channels, self.scene.cells(), self.codec.cr, self.ofdm.capacity())
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.ofdm.validate()?;
        self.channel.validate(&self.ofdm)?;
        self.codec.validate()?;
        self.scorer.validate()?;
        self.detector.validate()?;
        self.harq.validate()?;
        if self.snr_db.is_empty() {
            return Err(Error::config("snr_db", "SNR grid is empty"));
        }
        if self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::config("snr_db", "SNR values must be finite"));
        }
        if self.sessions == 0 {
            return Err(Error::config("sessions", "must be at least 1"));
        }
        if self.modes.is_empty() {
            return Err(Error::config("modes", "no mode enabled"));
        }
        if self.betas.is_empty() || self.betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::config("betas", "need at least one threshold, each in (0, 1)"));
        }
        let [ph, pw] = self.scorer.pool;
        if ph > self.scene.height || pw > self.scene.width {
            return Err(Error::config("scorer.pool", "pooled map larger than the feature"));
        }
        self.geometry()
            .map_err(|e| Error::config("codec.cr", format!("does not fit one frame: {e}")))?;
        Ok(())
    }

    /// Hash of everything that determines the trained artifacts.
    pub fn training_fingerprint(&self) -> u64 {
        #[derive(serde::Serialize)]
        struct Key<'a> {
            seed: u64,
            scene: &'a SceneConfig,
            ofdm: &'a OfdmConfig,
            channel: &'a ChannelConfig,
            codec: &'a CodecConfig,
            scorer: &'a ScorerConfig,
            detector: &'a DetectorConfig,
        }
        let key = toml::to_string(&Key {
            seed: self.seed,
            scene: &self.scene,
            ofdm: &self.ofdm,
            channel: &self.channel,
            codec: &self.codec,
            scorer: &self.scorer,
            detector: &self.detector,
        })
        .expect("config serializes");
        fnv1a(key.as_bytes())
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Parses `"0,3,6"` into SNR values.
pub fn parse_snr_list(s: &str) -> Result<Vec<f64>> {
    let out = s
        .split(',')
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::InvalidArgument(format!("bad SNR value {t:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if out.is_empty() {
        return Err(Error::InvalidArgument("empty SNR list".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn missing_field_is_named() {
        let text = ExperimentConfig::default().to_toml().replace("sessions = 200\n", "");
        match ExperimentConfig::from_toml(&text) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "sessions"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_field_is_named() {
        let text = format!("bogus = 1\n{}", ExperimentConfig::default().to_toml());
        match ExperimentConfig::from_toml(&text) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "bogus"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn snr_lists() {
        assert_eq!(parse_snr_list("0, 3,6.5").unwrap(), vec![0.0, 3.0, 6.5]);
        assert!(parse_snr_list("0,x").is_err());
        assert!(parse_snr_list("").is_err());
    }
}
