//! Retransmission protocols and their session bookkeeping.
//!
//! * `Sim1` resends the pair-1 codeword; each round's candidate is the
//!   latest reconstruction.
//! * `Sim2` sends pair 1 first and pair 2 afterwards; the candidate is the
//!   running sum of all reconstructions.
//! * `Base1` and `Base2` are the digital baselines: chase combining of the
//!   whole codeword, and alternating repetition halves.
//! * `NoHarq` is `Sim1` capped at one round.
//!
//! Every random draw of a session is keyed by `(session, point, round)`, so
//! modes and thresholds evaluated on the same keys see identical channels.

pub mod baseline;
pub mod crc;
pub mod quant;

use std::fmt;
use std::str::FromStr;

use crate::channel::{ChannelConfig, FadingProcess};
use crate::codec::{SemanticCodec, TrainFrame};
use crate::error::{Error, Result};
use crate::link::Link;
use crate::ofdm::OfdmConfig;
use crate::scenegen::similarity_from_losses;
use crate::seed::{self, Stream};
use crate::simcrc::{ack_decide, Ack, SimilarityScorer};

use baseline::{BaselineLayout, MrcCombiner, RepetitionCode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    NoHarq,
    Sim1,
    Sim2,
    Base1,
    Base2,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::NoHarq, Mode::Sim1, Mode::Sim2, Mode::Base1, Mode::Base2];

    pub fn name(self) -> &'static str {
        match self {
            Mode::NoHarq => "noharq",
            Mode::Sim1 => "sim1",
            Mode::Sim2 => "sim2",
            Mode::Base1 => "base1",
            Mode::Base2 => "base2",
        }
    }

    pub fn is_semantic(self) -> bool {
        matches!(self, Mode::NoHarq | Mode::Sim1 | Mode::Sim2)
    }

    /// Round cap of this mode under a configured limit.
    pub fn limit(self, max_rounds: usize) -> usize {
        if self == Mode::NoHarq {
            1
        } else {
            max_rounds
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown mode {s:?}, expected sim1, sim2, base1, base2 or noharq")))
    }
}

impl serde::Serialize for Mode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> serde::Deserialize<'de> for Mode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarqConfig {
    pub max_rounds: usize,
    /// Time between the end of one round and the start of the next, seconds.
    pub interval: f64,
    /// QAM order of the baselines.
    pub base_order: usize,
}

impl Default for HarqConfig {
    fn default() -> Self {
        HarqConfig {
            max_rounds: 3,
            interval: 2e-3,
            base_order: 16,
        }
    }
}

impl HarqConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_rounds == 0 {
            return Err(Error::config("harq.max_rounds", "must be at least 1"));
        }
        if !(self.interval >= 0.0 && self.interval.is_finite()) {
            return Err(Error::config("harq.interval", "must be finite and >= 0"));
        }
        if !matches!(self.base_order, 16 | 256) {
            return Err(Error::config("harq.base_order", "must be 16 or 256"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    InProgress,
    /// ACKed at this round (1-based).
    Success(usize),
    Exhausted,
}

/// Round-by-round record of one transmission attempt sequence.
#[derive(Debug, Clone)]
pub struct HarqSession<C> {
    mode: Mode,
    limit: usize,
    candidates: Vec<C>,
    scores: Vec<f64>,
    acks: Vec<Ack>,
}

impl<C> HarqSession<C> {
    pub fn new(mode: Mode, limit: usize) -> Result<Self> {
        if limit == 0 {
            return Err(Error::InvalidArgument("round limit must be at least 1".into()));
        }
        Ok(HarqSession {
            mode,
            limit,
            candidates: Vec::with_capacity(limit),
            scores: Vec::with_capacity(limit),
            acks: Vec::with_capacity(limit),
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    /// Completed rounds.
    pub fn rounds(&self) -> usize {
        self.candidates.len()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn acks(&self) -> &[Ack] {
        &self.acks
    }

    pub fn candidates(&self) -> &[C] {
        &self.candidates
    }

    pub fn outcome(&self) -> Outcome {
        if let Some(t) = self.acks.iter().position(|&a| a == Ack::Ack) {
            Outcome::Success(t + 1)
        } else if self.rounds() >= self.limit {
            Outcome::Exhausted
        } else {
            Outcome::InProgress
        }
    }

    pub fn is_done(&self) -> bool {
        self.outcome() != Outcome::InProgress
    }

    /// Appends one round. Fails once the session has ended.
    pub fn record(&mut self, candidate: C, score: f64, ack: Ack) -> Result<()> {
        if self.is_done() {
            return Err(Error::InvalidArgument(format!(
                "session already ended after {} rounds",
                self.rounds()
            )));
        }
        self.candidates.push(candidate);
        self.scores.push(score);
        self.acks.push(ack);
        Ok(())
    }

    /// Round (1-based) whose candidate is delivered: the ACKed round, or the
    /// highest score with ties to the earliest round.
    pub fn selected_round(&self) -> Result<usize> {
        if self.candidates.is_empty() {
            return Err(Error::InvalidArgument("session has no rounds".into()));
        }
        if let Outcome::Success(t) = self.outcome() {
            return Ok(t);
        }
        let mut best = 0;
        for (t, &s) in self.scores.iter().enumerate() {
            if s > self.scores[best] {
                best = t;
            }
        }
        Ok(best + 1)
    }

    pub fn finalize(&self) -> Result<&C> {
        Ok(&self.candidates[self.selected_round()? - 1])
    }
}

/// One finished session as logged.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub session: u64,
    pub mode: Mode,
    pub snr_db: f64,
    pub beta: f64,
    pub rounds: usize,
    pub ack_round: Option<usize>,
    /// Detector score per round; CRC pass as 1 or 0 for the baselines.
    pub s_hat: Vec<f64>,
    /// True similarity per round.
    pub s_true: Vec<f64>,
    pub selected: usize,
    pub final_s: f64,
    /// Task-loss proxy of the delivered feature.
    pub final_loss: f64,
}

/// Sessions ending in ACK over all rounds spent.
pub fn throughput(logs: &[SessionLog]) -> f64 {
    let rounds: usize = logs.iter().map(|l| l.rounds).sum();
    if rounds == 0 {
        return f64::NAN;
    }
    logs.iter().filter(|l| l.ack_round.is_some()).count() as f64 / rounds as f64
}

/// `⌈d_r·cr·8/(log₂ m_c · r_c)⌉`; a value within `1e-12` relative of an
/// integer is taken as that integer.
pub fn channel_uses(d_r: u64, cr: f64, m_c: usize, r_c: f64) -> Result<u64> {
    let k = bits_per(m_c)?;
    if !(cr > 0.0 && cr.is_finite()) || !(r_c > 0.0 && r_c <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "cr {cr} and r_c {r_c} must be positive, r_c <= 1"
        )));
    }
    let x = d_r as f64 * cr * 8.0 / (k as f64 * r_c);
    let near = x.round();
    Ok(if (x - near).abs() <= 1e-12 * near.max(1.0) {
        near
    } else {
        x.ceil()
    } as u64)
}

fn bits_per(m_c: usize) -> Result<usize> {
    if m_c < 2 || !m_c.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "modulation order {m_c} is not a power of two"
        )));
    }
    Ok(m_c.trailing_zeros() as usize)
}

/// Source of the per-round score of the semantic modes.
#[derive(Clone, Copy)]
pub enum Judge<'a> {
    Scorer(&'a SimilarityScorer),
    /// Same score every round, for forced paths.
    Constant(f64),
}

impl Judge<'_> {
    fn score(&self, reference: &[f64], hat: &[f64]) -> Result<f64> {
        match self {
            Judge::Scorer(s) => s.score_pooled(reference, hat),
            Judge::Constant(v) => Ok(*v),
        }
    }
}

/// Channel, link and seeding shared by all sessions of a run.
pub struct Environment<'a> {
    pub ofdm: &'a OfdmConfig,
    pub channel: &'a ChannelConfig,
    pub link: &'a Link<f64>,
    pub interval: f64,
    pub master: u64,
    pub s_cap: f64,
}

/// Keys of one session's draws: session index and operating point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Draw {
    pub session: u64,
    pub point: u64,
}

impl Environment<'_> {
    fn fading(&self, d: Draw) -> Result<FadingProcess> {
        let mut rng = seed::stream_rng(self.master, Stream::Speed, d.session, d.point);
        let profile = self.channel.profile(self.ofdm, self.channel.draw_speed(&mut rng))?;
        FadingProcess::new(
            profile,
            self.ofdm,
            self.interval,
            seed::derive(self.master, Stream::Fading, d.session, d.point),
        )
    }

    fn round_keys(&self, d: Draw, round: usize) -> (u64, rand_chacha::ChaCha8Rng) {
        let b = (d.point << 8) | round as u64;
        (
            seed::derive(self.master, Stream::Pilot, d.session, b),
            seed::stream_rng(self.master, Stream::Noise, d.session, b),
        )
    }
}

/// Semantic transmitter and receiver.
pub struct SimSystem<'a> {
    pub pair1: &'a SemanticCodec<f64>,
    pub pair2: Option<&'a SemanticCodec<f64>>,
    pub judge: Judge<'a>,
}

impl SimSystem<'_> {
    /// Runs one semantic session on `frame`, whose scene must carry pooling.
    pub fn run(
        &self,
        env: &Environment,
        mode: Mode,
        frame: &TrainFrame,
        snr_db: f64,
        beta: f64,
        max_rounds: usize,
        draw: Draw,
    ) -> Result<SessionLog> {
        if !mode.is_semantic() {
            return Err(Error::InvalidArgument(format!("{mode} is not a semantic mode")));
        }
        let pair2 = match (mode, self.pair2) {
            (Mode::Sim2, None) => return Err(Error::InvalidArgument("sim2 needs a second codec pair".into())),
            (_, p) => p,
        };
        let mut session = HarqSession::new(mode, mode.limit(max_rounds))?;
        let l_ref = frame.scene.loss(&frame.packed)?;
        let reference = frame.scene.pooled_confidence(&frame.packed)?;
        let tx1 = self.pair1.encode(&frame.packed)?;
        let tx2 = match (mode, pair2) {
            (Mode::Sim2, Some(p)) => Some(p.encode(&frame.packed)?),
            _ => None,
        };
        let mut fading = env.fading(draw)?;
        let mut sum = vec![0.0; frame.packed.len()];
        let mut s_true = Vec::new();
        let mut losses = Vec::new();
        while !session.is_done() {
            let t = session.rounds() + 1;
            let real = fading.next_frame::<f64>(env.ofdm.n_sym)?;
            let (pilot, mut noise) = env.round_keys(draw, t);
            let (tx, codec) = match (&tx2, pair2) {
                (Some(tx2), Some(p)) if t > 1 => (tx2, p),
                _ => (&tx1, self.pair1),
            };
            let rx = env.link.transmit(tx, &real, snr_db, pilot, &mut noise)?;
            let hat = codec.decode(&rx.equalized)?;
            let candidate = if mode == Mode::Sim2 {
                sum.iter_mut().zip(&hat).for_each(|(s, h)| *s += h);
                sum.clone()
            } else {
                hat
            };
            let loss = frame.scene.loss(&candidate)?;
            let s_hat = self.judge.score(&reference, &frame.scene.pooled_confidence(&candidate)?)?;
            s_true.push(similarity_from_losses(l_ref, loss, env.s_cap));
            losses.push(loss);
            session.record(candidate, s_hat, ack_decide(s_hat, beta))?;
        }
        let selected = session.selected_round()?;
        Ok(SessionLog {
            session: draw.session,
            mode,
            snr_db,
            beta,
            rounds: session.rounds(),
            ack_round: match session.outcome() {
                Outcome::Success(t) => Some(t),
                _ => None,
            },
            s_hat: session.scores().to_vec(),
            final_s: s_true[selected - 1],
            final_loss: losses[selected - 1],
            s_true,
            selected,
        })
    }
}

/// Digital baseline transmitter and receiver.
pub struct BaseSystem {
    pub layout: BaselineLayout,
    pub code: RepetitionCode,
}

impl BaseSystem {
    pub fn new(n_cu: usize, order: usize, channels: usize, shift: usize) -> Result<Self> {
        let layout = BaselineLayout::new(n_cu, order, channels)?;
        Ok(BaseSystem {
            layout,
            code: RepetitionCode::new(layout.info_symbols, shift)?,
        })
    }

    /// Runs one baseline session; `frame` must use a mask of
    /// `layout.cells` cells.
    pub fn run(
        &self,
        env: &Environment,
        mode: Mode,
        frame: &TrainFrame,
        snr_db: f64,
        max_rounds: usize,
        draw: Draw,
    ) -> Result<SessionLog> {
        if !matches!(mode, Mode::Base1 | Mode::Base2) {
            return Err(Error::InvalidArgument(format!("{mode} is not a baseline mode")));
        }
        let l_ref = frame.scene.loss(&frame.packed)?;
        let symbols = self.layout.modulate(&self.layout.pack(&frame.packed)?)?;
        let halves = [self.code.copy(&symbols, 0)?, self.code.copy(&symbols, 1)?];
        let full = self.code.codeword(&symbols)?;
        let mut combiner = MrcCombiner::new(self.code);
        let mut session = HarqSession::new(mode, max_rounds)?;
        let mut fading = env.fading(draw)?;
        let mut s_true = Vec::new();
        let mut losses = Vec::new();
        while !session.is_done() {
            let t = session.rounds() + 1;
            let real = fading.next_frame::<f64>(env.ofdm.n_sym)?;
            let (pilot, mut noise) = env.round_keys(draw, t);
            let copy = (t - 1) % 2;
            let (tx, copies): (&[_], Vec<usize>) = match mode {
                Mode::Base1 => (&full, vec![0, 1]),
                _ => (&halves[copy], vec![copy]),
            };
            let rx = env.link.transmit(tx, &real, snr_db, pilot, &mut noise)?;
            combiner.add_reception(&rx, &copies)?;
            let bytes = self.layout.demodulate(&combiner.combined())?;
            let (values, ok) = self.layout.unpack(&bytes)?;
            // a packet failing its CRC is erased
            let values = if ok { values } else { vec![0.0; values.len()] };
            let loss = frame.scene.loss(&values)?;
            s_true.push(similarity_from_losses(l_ref, loss, env.s_cap));
            losses.push(loss);
            let ack = if ok { Ack::Ack } else { Ack::Nack };
            session.record(values, if ok { 1.0 } else { 0.0 }, ack)?;
        }
        // the ACKed round, or the last (erased) one
        let selected = session.rounds();
        Ok(SessionLog {
            session: draw.session,
            mode,
            snr_db,
            beta: f64::NAN,
            rounds: session.rounds(),
            ack_round: match session.outcome() {
                Outcome::Success(t) => Some(t),
                _ => None,
            },
            s_hat: session.scores().to_vec(),
            final_s: s_true[selected - 1],
            final_loss: losses[selected - 1],
            s_true,
            selected,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session(scores: &[f64], acks: &[Ack]) -> HarqSession<usize> {
        let mut s = HarqSession::new(Mode::Sim1, 3).unwrap();
        for (t, (&sc, &a)) in scores.iter().zip(acks).enumerate() {
            s.record(t + 1, sc, a).unwrap();
        }
        s
    }

    #[test]
    fn ack_at_round_two_selects_it() {
        let s = session(&[0.1, 0.8], &[Ack::Nack, Ack::Ack]);
        assert_eq!(s.outcome(), Outcome::Success(2));
        assert_eq!(*s.finalize().unwrap(), 2);
    }

    #[test]
    fn exhausted_selects_argmax() {
        let s = session(&[0.3, 0.6, 0.5], &[Ack::Nack; 3]);
        assert_eq!(s.outcome(), Outcome::Exhausted);
        assert_eq!(*s.finalize().unwrap(), 2);
        let s = session(&[0.4; 3], &[Ack::Nack; 3]);
        assert_eq!(*s.finalize().unwrap(), 1);
    }

    #[test]
    fn no_rounds_after_end() {
        let mut s = session(&[0.9], &[Ack::Ack]);
        assert!(s.record(2, 0.1, Ack::Nack).is_err());
        let mut s = session(&[0.1; 3], &[Ack::Nack; 3]);
        assert!(s.record(4, 0.1, Ack::Nack).is_err());
    }

    #[test]
    fn throughput_examples() {
        let log = |rounds, ack| SessionLog {
            session: 0,
            mode: Mode::Sim1,
            snr_db: 0.0,
            beta: 0.72,
            rounds,
            ack_round: ack,
            s_hat: vec![],
            s_true: vec![],
            selected: 1,
            final_s: 0.0,
            final_loss: 0.0,
        };
        assert_eq!(throughput(&[log(1, Some(1)), log(1, Some(1))]), 1.0);
        assert_eq!(throughput(&[log(3, None), log(3, None)]), 0.0);
        assert!((throughput(&[log(1, Some(1)), log(2, Some(2))]) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn channel_use_examples() {
        let d = 80_000;
        let a = channel_uses(d, 1.25e-3, 16, 0.5).unwrap();
        assert_eq!(a, 400);
        assert_eq!(a, channel_uses(d, 2.5e-3, 256, 0.5).unwrap());
        assert_eq!(channel_uses(7, 1.0, 4, 1.0).unwrap(), 28);
        assert!(channel_uses(7, 1.0, 6, 1.0).is_err());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        assert!("sim3".parse::<Mode>().is_err());
    }
}
