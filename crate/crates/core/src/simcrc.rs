//! Semantic error detection.
//!
//! A twin-branch scorer compares the pooled confidence map of the original
//! feature with that of a reconstruction: both maps pass through the same
//! branch net, the head maps the concatenated embeddings to a logit, and the
//! score is its sigmoid. It is trained as a pairwise ranker: within a query,
//! the probability that sample `m` outranks `n` is
//! `P_mn = 1/(1 + e^{−σ(s_m − s_n)})`, and the per-pair cost gradient factors
//! into per-sample λ terms.

use std::io::{Read, Write};

use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::channel::{ChannelConfig, FadingProcess};
use crate::codec::{scene_seed, SceneSet, SemanticCodec, TrainFrame};
use crate::error::{Error, Result};
use crate::link::Link;
use crate::nnkit::{read_f32, read_u32, Activation, Adam, DenseNet, Gradients};
use crate::ofdm::OfdmConfig;
use crate::scalar::Real;
use crate::scenegen::{generate_scene, similarity_from_losses, softplus, ProxyHead, SceneConfig};
use crate::seed::{self, Stream};
use crate::tensors::{importance_map, pack_nonzero, ConfidenceMap};

const SCORER_MAGIC: &[u8; 4] = b"SHSC";
const CORPUS_MAGIC: &[u8; 4] = b"SHRC";
/// λ values are accumulated on this fixed-point grid so each query sums to
/// exactly zero.
const LAMBDA_QUANTUM: f64 = (1u64 << 40) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ack {
    Nack = 0,
    Ack = 1,
}

/// ACK iff `s_hat > beta`; a tie is a NACK.
pub fn ack_decide(s_hat: f64, beta: f64) -> Ack {
    if s_hat > beta {
        Ack::Ack
    } else {
        Ack::Nack
    }
}

pub fn pair_probability(s_m: f64, s_n: f64, sigma: f64) -> f64 {
    crate::scenegen::sigmoid(sigma * (s_m - s_n))
}

/// Sign of `S_m − S_n` as −1, 0 or 1.
pub fn pair_label(big_s_m: f64, big_s_n: f64) -> f64 {
    if big_s_m > big_s_n {
        1.0
    } else if big_s_m < big_s_n {
        -1.0
    } else {
        0.0
    }
}

/// `C = ½(1 − S_mn)σ(s_m − s_n) + ln(1 + e^{−σ(s_m − s_n)})`.
pub fn pair_loss(s_m: f64, s_n: f64, s_mn: f64, sigma: f64) -> f64 {
    let d = sigma * (s_m - s_n);
    0.5 * (1.0 - s_mn) * d + softplus(-d)
}

/// Index pairs `(m, n)` with `S_m > S_n`, each unordered pair once.
pub fn ranked_pairs(truth: &[f64]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for m in 0..truth.len() {
        for n in 0..truth.len() {
            if truth[m] > truth[n] {
                out.push((m, n));
            }
        }
    }
    out
}

/// Summed pair cost of one query.
pub fn query_loss(pred: &[f64], truth: &[f64], sigma: f64) -> f64 {
    ranked_pairs(truth)
        .into_iter()
        .map(|(m, n)| pair_loss(pred[m], pred[n], 1.0, sigma))
        .sum()
}

/// Per-sample `λ_m = Σ_{(m,n)} λ_mn − Σ_{(n,m)} λ_nm` with
/// `λ_mn = σ(½(1 − S_mn) − 1/(1 + e^{σ(s_m − s_n)}))`, where every pair is
/// oriented so that `S_mn = 1`.
pub fn lambda_gradients(pred: &[f64], truth: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if pred.len() != truth.len() {
        return Err(Error::shape(truth.len(), pred.len()));
    }
    if pred.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ranking inputs"));
    }
    let mut acc = vec![0i64; pred.len()];
    for (m, n) in ranked_pairs(truth) {
        let l = -sigma * (1.0 / (1.0 + (sigma * (pred[m] - pred[n])).exp()));
        let q = (l * LAMBDA_QUANTUM).round() as i64;
        acc[m] += q;
        acc[n] -= q;
    }
    Ok(acc.into_iter().map(|q| q as f64 / LAMBDA_QUANTUM).collect())
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub beta: f64,
    pub sigma_r: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            beta: 0.72,
            sigma_r: 1.0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::config("detector.beta", "must lie in (0, 1)"));
        }
        if !(self.sigma_r > 0.0 && self.sigma_r.is_finite()) {
            return Err(Error::config("detector.sigma_r", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerConfig {
    /// Pooled map size `[rows, cols]`.
    pub pool: [usize; 2],
    pub hidden: usize,
    /// Keeps the head's first layer at `[A, −A]` during training, so it sees
    /// only the embedding difference. Untied heads start from that form.
    pub tied_head: bool,
    pub lr: f64,
    pub epochs: usize,
    /// Queries per optimizer step.
    pub batch: usize,
    /// Fraction of queries held out for reporting.
    pub holdout: f64,
    /// Corpus quantile of `S` that the calibrated score separates.
    pub calib_quantile: f64,
    /// Queries in the channel corpus.
    pub corpus_queries: usize,
    /// SNR of each sampling in a query; one sampling per entry.
    pub corpus_snr_db: Vec<f64>,
    /// Similarity cap `U`.
    pub s_cap: f64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            pool: [16, 16],
            hidden: 64,
            tied_head: true,
            lr: 1e-3,
            epochs: 50,
            batch: 8,
            holdout: 0.2,
            calib_quantile: 0.5,
            corpus_queries: 800,
            corpus_snr_db: (0..8).map(|i| 3.0 * i as f64).collect(),
            s_cap: 6.0,
        }
    }
}

impl ScorerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pool[0] == 0 || self.pool[1] == 0 {
            return Err(Error::config("scorer.pool", "must be positive"));
        }
        if self.hidden == 0 {
            return Err(Error::config("scorer.hidden", "must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("scorer.lr", "must be finite and >= 0"));
        }
        if self.batch == 0 {
            return Err(Error::config("scorer.batch", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return Err(Error::config("scorer.holdout", "must lie in [0, 1)"));
        }
        if !(self.calib_quantile > 0.0 && self.calib_quantile < 1.0) {
            return Err(Error::config("scorer.calib_quantile", "must lie in (0, 1)"));
        }
        if self.corpus_snr_db.is_empty() || self.corpus_snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::config("scorer.corpus_snr_db", "need at least one finite SNR"));
        }
        if !(self.s_cap > 0.0) {
            return Err(Error::config("scorer.s_cap", "must be positive"));
        }
        Ok(())
    }
}

/// One sampling of a query: pooled reconstruction map and its true score.
#[derive(Debug, Clone, PartialEq)]
pub struct RankSample {
    pub map: Vec<f32>,
    pub s: f64,
    pub snr_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankQuery {
    pub reference: Vec<f32>,
    pub samples: Vec<RankSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankCorpus {
    pub pool: [usize; 2],
    pub queries: Vec<RankQuery>,
}

impl RankCorpus {
    pub fn new(pool: [usize; 2], queries: Vec<RankQuery>) -> Result<Self> {
        let n = pool[0] * pool[1];
        for q in &queries {
            if q.reference.len() != n || q.samples.iter().any(|s| s.map.len() != n) {
                return Err(Error::shape(n, q.reference.len()));
            }
            if q.samples.iter().any(|s| !s.s.is_finite()) {
                return Err(Error::NonFinite("corpus scores"));
            }
        }
        Ok(RankCorpus { pool, queries })
    }

    pub fn samples(&self) -> usize {
        self.queries.iter().map(|q| q.samples.len()).sum()
    }

    /// Number of ranked pairs over all queries.
    pub fn pairs(&self) -> usize {
        self.queries
            .iter()
            .map(|q| ranked_pairs(&q.samples.iter().map(|s| s.s).collect::<Vec<_>>()).len())
            .sum()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.queries.iter().flat_map(|q| q.samples.iter().map(|s| s.s)).collect()
    }

    /// Same corpus with every `S` mapped through `f`.
    pub fn map_scores(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        out.queries
            .iter_mut()
            .flat_map(|q| q.samples.iter_mut())
            .for_each(|s| s.s = f(s.s));
        out
    }

    pub fn split(&self, holdout: f64) -> (RankCorpus, RankCorpus) {
        let n = self.queries.len();
        let test = ((n as f64) * holdout).round() as usize;
        let test = test.min(n.saturating_sub(1));
        let (a, b) = self.queries.split_at(n - test);
        (
            RankCorpus {
                pool: self.pool,
                queries: a.to_vec(),
            },
            RankCorpus {
                pool: self.pool,
                queries: b.to_vec(),
            },
        )
    }

    /// `SHRC`, `u32` pool rows, cols, queries; per query `u32` K and the
    /// reference map; per sample `f32` snr, `f32` S and the map. All maps
    /// are `f32` LE.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CORPUS_MAGIC)?;
        for v in [self.pool[0], self.pool[1], self.queries.len()] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for q in &self.queries {
            w.write_all(&(q.samples.len() as u32).to_le_bytes())?;
            q.reference.iter().try_for_each(|v| w.write_all(&v.to_le_bytes()))?;
            for s in &q.samples {
                w.write_all(&(s.snr_db as f32).to_le_bytes())?;
                w.write_all(&(s.s as f32).to_le_bytes())?;
                s.map.iter().try_for_each(|v| w.write_all(&v.to_le_bytes()))?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CORPUS_MAGIC {
            return Err(Error::Format("not a rank corpus".into()));
        }
        let pool = [read_u32(&mut r)? as usize, read_u32(&mut r)? as usize];
        let nq = read_u32(&mut r)? as usize;
        let n = pool[0] * pool[1];
        let read_map = |r: &mut R| (0..n).map(|_| read_f32(r)).collect::<Result<Vec<f32>>>();
        let mut queries = Vec::with_capacity(nq.min(1 << 16));
        for _ in 0..nq {
            let k = read_u32(&mut r)? as usize;
            let reference = read_map(&mut r)?;
            let mut samples = Vec::with_capacity(k.min(1 << 16));
            for _ in 0..k {
                let snr_db = read_f32(&mut r)? as f64;
                let s = read_f32(&mut r)? as f64;
                samples.push(RankSample {
                    map: read_map(&mut r)?,
                    s,
                    snr_db,
                });
            }
            queries.push(RankQuery { reference, samples });
        }
        RankCorpus::new(pool, queries)
    }
}

/// Twin-branch scorer over pooled confidence maps.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityScorer {
    pool: [usize; 2],
    center: Vec<f64>,
    gain: f64,
    tied: bool,
    branch: DenseNet<f64>,
    head: DenseNet<f64>,
}

/// Taped forward pass over a batch of (reference, reconstruction) pairs.
struct ScoreTape {
    branch: crate::nnkit::GradTape<f64>,
    head: crate::nnkit::GradTape<f64>,
    rows: usize,
}

impl SimilarityScorer {
    pub fn new(cfg: &ScorerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.pool[0] * cfg.pool[1];
        let h = cfg.hidden;
        let act = Activation::Prelu(0.1);
        let branch = DenseNet::glorot(&[n, h, h], &[act, act], seed::mix(seed ^ 1))?;
        let head = DenseNet::glorot(&[2 * h, h, 1], &[act, Activation::Linear], seed::mix(seed ^ 2))?;
        let mut s = SimilarityScorer {
            pool: cfg.pool,
            center: vec![0.0; n],
            gain: 1.0,
            tied: cfg.tied_head,
            branch,
            head,
        };
        s.antisymmetrize();
        Ok(s)
    }

    /// Scorer whose parameters are all zero: every score is 0.5.
    pub fn zeroed(&self) -> Self {
        SimilarityScorer {
            branch: self.branch.zeros_like(),
            head: self.head.zeros_like(),
            ..self.clone()
        }
    }

    pub fn pool(&self) -> [usize; 2] {
        self.pool
    }

    pub fn tied(&self) -> bool {
        self.tied
    }

    pub fn branch(&self) -> &DenseNet<f64> {
        &self.branch
    }

    pub fn head(&self) -> &DenseNet<f64> {
        &self.head
    }

    pub fn branch_mut(&mut self) -> &mut DenseNet<f64> {
        &mut self.branch
    }

    pub fn head_mut(&mut self) -> &mut DenseNet<f64> {
        &mut self.head
    }

    /// Fixes the input normalization `(x − center)·gain`.
    pub fn set_normalization(&mut self, center: Vec<f64>, gain: f64) -> Result<()> {
        if center.len() != self.center.len() {
            return Err(Error::shape(self.center.len(), center.len()));
        }
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(Error::InvalidArgument("normalization gain must be positive".into()));
        }
        self.center = center;
        self.gain = gain;
        Ok(())
    }

    /// Normalization from a corpus: mean reference map and the inverse of
    /// the reference maps' standard deviation around it, pooled over bins.
    pub fn fit_normalization(&mut self, corpus: &RankCorpus) -> Result<()> {
        let n = self.center.len();
        let nq = corpus.queries.len();
        if nq == 0 {
            return Err(Error::Degenerate("empty corpus".into()));
        }
        let mut center = vec![0.0; n];
        for q in &corpus.queries {
            center.iter_mut().zip(&q.reference).for_each(|(c, &r)| *c += r as f64);
        }
        center.iter_mut().for_each(|c| *c /= nq as f64);
        let ss: f64 = corpus
            .queries
            .iter()
            .flat_map(|q| q.reference.iter().zip(&center).map(|(&r, c)| (r as f64 - c).powi(2)))
            .sum();
        let std = (ss / (n * nq) as f64).sqrt();
        let gain = if std > 0.0 { 1.0 / std } else { 1.0 };
        self.set_normalization(center, gain)
    }

    /// Sets the head's first layer to `[A, −A]`.
    fn antisymmetrize(&mut self) {
        let w = &mut self.head.layers_mut()[0].weight;
        let h = w.ncols() / 2;
        let a = (&w.slice(s![.., ..h]) - &w.slice(s![.., h..])) * 0.5;
        w.slice_mut(s![.., ..h]).assign(&a);
        w.slice_mut(s![.., h..]).assign(&(-&a));
    }

    fn inputs<'a>(&self, maps: impl Iterator<Item = &'a [f64]>) -> Array2<f64> {
        let n = self.center.len();
        let rows: Vec<f64> = maps
            .flat_map(|m| m.iter().zip(&self.center).map(|(&v, &c)| (v - c) * self.gain))
            .collect();
        Array2::from_shape_vec((rows.len() / n, n), rows).expect("map length checked")
    }

    fn check_map(&self, m: &[f64]) -> Result<()> {
        if m.len() != self.center.len() {
            return Err(Error::shape(self.center.len(), m.len()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pooled map"));
        }
        Ok(())
    }

    /// Logits for pairs of pooled maps.
    pub fn logits(&self, pairs: &[(&[f64], &[f64])]) -> Result<Vec<f64>> {
        for (a, b) in pairs {
            self.check_map(a)?;
            self.check_map(b)?;
        }
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.inputs(pairs.iter().map(|p| p.0).chain(pairs.iter().map(|p| p.1)));
        let e = self.branch.forward(x.view())?;
        let k = pairs.len();
        let joint = concatenate![Axis(1), e.slice(s![..k, ..]), e.slice(s![k.., ..])];
        Ok(self.head.forward(joint.view())?.column(0).to_vec())
    }

    fn forward_tape(&self, x_ref: &Array2<f64>, x_hat: &Array2<f64>) -> Result<(Vec<f64>, ScoreTape)> {
        let k = x_ref.nrows();
        let x = concatenate![Axis(0), x_ref.view(), x_hat.view()];
        let (e, branch) = self.branch.forward_tape(x.view())?;
        let joint = concatenate![Axis(1), e.slice(s![..k, ..]), e.slice(s![k.., ..])];
        let (out, head) = self.head.forward_tape(joint.view())?;
        Ok((out.column(0).to_vec(), ScoreTape { branch, head, rows: k }))
    }

    fn backward(&self, tape: ScoreTape, upstream: &[f64]) -> Result<(Gradients<f64>, Gradients<f64>)> {
        let up = Array2::from_shape_vec((upstream.len(), 1), upstream.to_vec()).expect("column");
        let (mut g_head, d_joint) = self.head.backward(tape.head, up.view())?;
        let h = d_joint.ncols() / 2;
        let d_e = concatenate![Axis(0), d_joint.slice(s![.., ..h]), d_joint.slice(s![.., h..])];
        debug_assert_eq!(d_e.nrows(), 2 * tape.rows);
        let (g_branch, _) = self.branch.backward(tape.branch, d_e.view())?;
        if self.tied {
            // gradient with respect to the free block A of [A, −A]
            let w = &mut g_head.weight[0];
            let a = &w.slice(s![.., ..h]) - &w.slice(s![.., h..]);
            w.slice_mut(s![.., ..h]).assign(&(&a * 0.5));
            w.slice_mut(s![.., h..]).assign(&(&a * -0.5));
        }
        Ok((g_branch, g_head))
    }

    pub fn score_pooled(&self, reference: &[f64], hat: &[f64]) -> Result<f64> {
        Ok(crate::scenegen::sigmoid(self.logits(&[(reference, hat)])?[0]))
    }

    /// `Ŝ = sigmoid(head([branch(pool R), branch(pool R̂)]))`.
    pub fn score<T: Real>(&self, r: &ConfidenceMap<T>, r_hat: &ConfidenceMap<T>) -> Result<f64> {
        let a: Vec<f64> = r.pooled(self.pool[0], self.pool[1]).iter().map(|v| v.f64()).collect();
        let b: Vec<f64> = r_hat.pooled(self.pool[0], self.pool[1]).iter().map(|v| v.f64()).collect();
        self.score_pooled(&a, &b)
    }

    /// Gradient of `Σ_m λ_m s_m` over a set of queries, and the summed pair
    /// cost before the step.
    pub fn query_gradients(&self, queries: &[&RankQuery], sigma: f64) -> Result<(f64, Gradients<f64>, Gradients<f64>)> {
        let mut x_ref = Vec::new();
        let mut x_hat = Vec::new();
        let mut spans = Vec::with_capacity(queries.len());
        for q in queries {
            let r: Vec<f64> = q.reference.iter().map(|&v| v as f64).collect();
            let start = x_hat.len();
            for s in &q.samples {
                x_ref.push(r.clone());
                x_hat.push(s.map.iter().map(|&v| v as f64).collect::<Vec<f64>>());
            }
            spans.push(start..x_hat.len());
        }
        if x_hat.is_empty() {
            return Ok((0.0, self.branch.gradients_zero(), self.head.gradients_zero()));
        }
        let a = self.inputs(x_ref.iter().map(|v| v.as_slice()));
        let b = self.inputs(x_hat.iter().map(|v| v.as_slice()));
        let (logits, tape) = self.forward_tape(&a, &b)?;
        let mut upstream = vec![0.0; logits.len()];
        let mut cost = 0.0;
        for (q, span) in queries.iter().zip(spans) {
            let truth: Vec<f64> = q.samples.iter().map(|s| s.s).collect();
            let pred = &logits[span.clone()];
            cost += query_loss(pred, &truth, sigma);
            let lam = lambda_gradients(pred, &truth, sigma)?;
            upstream[span].copy_from_slice(&lam);
        }
        let (gb, gh) = self.backward(tape, &upstream)?;
        Ok((cost, gb, gh))
    }

    pub fn corpus_logits(&self, corpus: &RankCorpus) -> Result<Vec<Vec<f64>>> {
        corpus
            .queries
            .iter()
            .map(|q| {
                let r: Vec<f64> = q.reference.iter().map(|&v| v as f64).collect();
                let maps: Vec<Vec<f64>> = q.samples.iter().map(|s| s.map.iter().map(|&v| v as f64).collect()).collect();
                let pairs: Vec<(&[f64], &[f64])> = maps.iter().map(|m| (r.as_slice(), m.as_slice())).collect();
                self.logits(&pairs)
            })
            .collect()
    }

    /// Rescales the output layer so the score is `sigmoid(a·logit + b)`.
    pub fn fold_calibration(&mut self, a: f64, b: f64) -> Result<()> {
        if !(a > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::InvalidArgument(format!("calibration ({a}, {b}) must have a > 0")));
        }
        let last = self.head.layers().len() - 1;
        let l = &mut self.head.layers_mut()[last];
        l.weight.mapv_inplace(|w| w * a);
        l.bias.mapv_inplace(|v| v * a + b);
        Ok(())
    }

    pub fn round_to_f32(&mut self) {
        self.branch.round_to_f32();
        self.head.round_to_f32();
        self.center.iter_mut().for_each(|c| *c = *c as f32 as f64);
        self.gain = self.gain as f32 as f64;
    }

    pub fn fingerprint(&self) -> u64 {
        seed::mix(self.branch.fingerprint() ^ self.head.fingerprint().rotate_left(23))
    }

    /// `SHSC`, `u32` pool rows, cols, tied flag, `f32` gain, `f32` centers,
    /// then the branch and head network checkpoints.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(SCORER_MAGIC)?;
        for v in [self.pool[0] as u32, self.pool[1] as u32, self.tied as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.gain as f32).to_le_bytes())?;
        for c in &self.center {
            w.write_all(&(*c as f32).to_le_bytes())?;
        }
        self.branch.write_to(&mut w)?;
        self.head.write_to(&mut w)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != SCORER_MAGIC {
            return Err(Error::Format("not a scorer checkpoint".into()));
        }
        let pool = [read_u32(&mut r)? as usize, read_u32(&mut r)? as usize];
        let tied = read_u32(&mut r)? != 0;
        let gain = read_f32(&mut r)? as f64;
        let center = (0..pool[0] * pool[1])
            .map(|_| read_f32(&mut r).map(|v| v as f64))
            .collect::<Result<Vec<_>>>()?;
        let branch = DenseNet::read_from(&mut r)?;
        let head = DenseNet::read_from(&mut r)?;
        if branch.input_width() != center.len() || head.input_width() != 2 * branch.output_width() || head.output_width() != 1 {
            return Err(Error::Format("scorer layer widths do not chain".into()));
        }
        Ok(SimilarityScorer {
            pool,
            center,
            gain,
            tied,
            branch,
            head,
        })
    }
}

/// Held-out quality of a scorer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankReport {
    /// Fraction of pairs with `S` gap at least `min_gap` ordered correctly.
    pub pairwise_accuracy: f64,
    pub auc: f64,
    /// Share of corrupted samples that would be ACKed at `beta`.
    pub false_ack: f64,
    /// Share of clean samples that would be NACKed at `beta`.
    pub false_nack: f64,
}

/// Mann–Whitney AUC of `pos` over `neg`, ties counted half.
pub fn auc(pos: &[f64], neg: &[f64]) -> f64 {
    if pos.is_empty() || neg.is_empty() {
        return f64::NAN;
    }
    let mut wins = 0.0;
    for p in pos {
        for n in neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Pairwise accuracy over pairs at least `min_gap` apart in `S`, and clean
/// versus corrupted separation, where clean means `S ≥ median + margin` and
/// corrupted `S ≤ median − margin`.
pub fn evaluate(scorer: &SimilarityScorer, corpus: &RankCorpus, min_gap: f64, margin: f64, beta: f64) -> Result<RankReport> {
    let logits = scorer.corpus_logits(corpus)?;
    let mut correct = 0usize;
    let mut total = 0usize;
    for (q, l) in corpus.queries.iter().zip(&logits) {
        for (m, n) in ranked_pairs(&q.samples.iter().map(|s| s.s).collect::<Vec<_>>()) {
            if q.samples[m].s - q.samples[n].s >= min_gap {
                total += 1;
                if l[m] > l[n] {
                    correct += 1;
                }
            }
        }
    }
    let med = quantile(&corpus.scores(), 0.5);
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (q, l) in corpus.queries.iter().zip(&logits) {
        for (s, &z) in q.samples.iter().zip(l) {
            if s.s >= med + margin {
                pos.push(z);
            } else if s.s <= med - margin {
                neg.push(z);
            }
        }
    }
    let rate = |v: &[f64], f: &dyn Fn(f64) -> bool| v.iter().filter(|&&x| f(x)).count() as f64 / v.len().max(1) as f64;
    Ok(RankReport {
        pairwise_accuracy: if total > 0 { correct as f64 / total as f64 } else { f64::NAN },
        auc: auc(&pos, &neg),
        false_ack: rate(&neg, &|z| ack_decide(crate::scenegen::sigmoid(z), beta) == Ack::Ack),
        false_nack: rate(&pos, &|z| ack_decide(crate::scenegen::sigmoid(z), beta) == Ack::Nack),
    })
}

/// Logistic fit `P(label) = sigmoid(a·x + b)`, Newton's method with
/// backtracking on Platt's smoothed targets.
pub fn platt_fit(x: &[f64], label: &[bool]) -> Result<(f64, f64)> {
    if x.len() != label.len() {
        return Err(Error::shape(label.len(), x.len()));
    }
    let npos = label.iter().filter(|&&l| l).count();
    let nneg = label.len() - npos;
    if npos == 0 || nneg == 0 {
        return Err(Error::Degenerate("calibration needs both classes".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("calibration input"));
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
    let std = if std > 0.0 { std } else { 1.0 };
    let z: Vec<f64> = x.iter().map(|v| (v - mean) / std).collect();
    let tp = (npos as f64 + 1.0) / (npos as f64 + 2.0);
    let tn = 1.0 / (nneg as f64 + 2.0);
    let t: Vec<f64> = label.iter().map(|&l| if l { tp } else { tn }).collect();
    let cost = |a: f64, b: f64| -> f64 {
        z.iter()
            .zip(&t)
            .map(|(&zi, &ti)| {
                let u = a * zi + b;
                ti * softplus(-u) + (1.0 - ti) * softplus(u)
            })
            .sum()
    };
    let (mut a, mut b) = (0.0, ((npos as f64 + 1.0) / (nneg as f64 + 1.0)).ln());
    let mut f = cost(a, b);
    for _ in 0..100 {
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 1e-12, 0.0, 1e-12);
        for (&zi, &ti) in z.iter().zip(&t) {
            let p = crate::scenegen::sigmoid(a * zi + b);
            let w = p * (1.0 - p);
            g0 += (p - ti) * zi;
            g1 += p - ti;
            h00 += w * zi * zi;
            h01 += w * zi;
            h11 += w;
        }
        if g0.abs() < 1e-9 && g1.abs() < 1e-9 {
            break;
        }
        let det = h00 * h11 - h01 * h01;
        let da = -(h11 * g0 - h01 * g1) / det;
        let db = -(h00 * g1 - h01 * g0) / det;
        let slope = g0 * da + g1 * db;
        let mut step = 1.0;
        while step >= 1e-10 {
            let fa = cost(a + step * da, b + step * db);
            if fa <= f + 1e-4 * step * slope {
                a += step * da;
                b += step * db;
                f = fa;
                break;
            }
            step /= 2.0;
        }
        if step < 1e-10 {
            break;
        }
    }
    let (a, b) = (a / std, b - a * mean / std);
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Degenerate("calibration did not converge".into()));
    }
    Ok((a, b))
}

/// Per-epoch mean pair cost on the training queries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankEpoch {
    pub epoch: usize,
    pub loss: f64,
}

/// Trains a scorer on `corpus` with λ-gradient Adam steps, then calibrates
/// it so that `Ŝ` estimates `P(S ≥ q-quantile of S)`.
pub fn train_ranker(
    corpus: &RankCorpus,
    cfg: &ScorerConfig,
    detector: &DetectorConfig,
    seed: u64,
) -> Result<(SimilarityScorer, Vec<RankEpoch>)> {
    cfg.validate()?;
    detector.validate()?;
    if corpus.pool != cfg.pool {
        return Err(Error::config("scorer.pool", "does not match the corpus"));
    }
    let mut scorer = SimilarityScorer::new(cfg, seed::derive(seed, Stream::ScorerInit, 0, 0))?;
    scorer.fit_normalization(corpus)?;
    let mut adam_b = Adam::new(cfg.lr);
    let mut adam_h = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..corpus.queries.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let pair_count = corpus.pairs().max(1) as f64;
    for epoch in 1..=cfg.epochs {
        let mut rng = seed::stream_rng(seed, Stream::ScorerTrain, epoch as u64, 0);
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        for chunk in order.chunks(cfg.batch) {
            let qs: Vec<&RankQuery> = chunk.iter().map(|&i| &corpus.queries[i]).collect();
            let (_, gb, gh) = scorer.query_gradients(&qs, detector.sigma_r)?;
            if !(gb.is_finite() && gh.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    detail: "non-finite scorer gradient".into(),
                });
            }
            adam_b.step(&mut scorer.branch, &gb);
            adam_h.step(&mut scorer.head, &gh);
            if scorer.tied {
                scorer.antisymmetrize();
            }
        }
        let all: Vec<&RankQuery> = corpus.queries.iter().collect();
        let loss = all
            .chunks(64)
            .map(|c| scorer.query_gradients(c, detector.sigma_r).map(|r| r.0))
            .sum::<Result<f64>>()?
            / pair_count;
        curve.push(RankEpoch { epoch, loss });
    }
    let logits: Vec<f64> = scorer.corpus_logits(corpus)?.into_iter().flatten().collect();
    let scores = corpus.scores();
    let cut = quantile(&scores, cfg.calib_quantile);
    let labels: Vec<bool> = scores.iter().map(|&s| s >= cut).collect();
    let (a, b) = platt_fit(&logits, &labels)?;
    if a > 0.0 {
        scorer.fold_calibration(a, b)?;
    }
    scorer.round_to_f32();
    Ok((scorer, curve))
}

/// Channel corpus: per query, one scene sent once per configured SNR through
/// the full link with the first codec pair.
#[allow(clippy::too_many_arguments)]
pub fn build_corpus(
    codec: &SemanticCodec<f64>,
    scene_cfg: &SceneConfig,
    head: &ProxyHead<f64>,
    ofdm: &OfdmConfig,
    channel: &ChannelConfig,
    cfg: &ScorerConfig,
    cr: f64,
    master: u64,
) -> Result<RankCorpus> {
    cfg.validate()?;
    let link: Link<f64> = Link::new(ofdm, codec.power())?;
    let queries = (0..cfg.corpus_queries as u64)
        .into_par_iter()
        .map(|qi| {
            let (scene, f) = generate_scene(scene_cfg, head, scene_seed(master, SceneSet::Corpus, qi))?;
            let mask = importance_map(&f, cr)?;
            let packed = pack_nonzero(&f, &mask)?;
            let ms = crate::scenegen::MaskedScene::new(&scene, head, &mask, Some((cfg.pool[0], cfg.pool[1])))?;
            let l_ref = ms.loss(&packed)?;
            let reference = ms.pooled_confidence(&packed)?;
            let tx = codec.encode(&packed)?;
            let mut speed_rng = seed::stream_rng(master, Stream::Speed, qi, 3);
            let profile = channel.profile(ofdm, channel.draw_speed(&mut speed_rng))?;
            let samples = cfg
                .corpus_snr_db
                .iter()
                .enumerate()
                .map(|(k, &snr)| {
                    let mut fading = FadingProcess::new(
                        profile.clone(),
                        ofdm,
                        0.0,
                        seed::derive(master, Stream::Corpus, qi, 2 * k as u64),
                    )?;
                    let real = fading.next_frame::<f64>(ofdm.n_sym)?;
                    let mut noise = seed::stream_rng(master, Stream::Corpus, qi, 2 * k as u64 + 1);
                    let pilot_seed = seed::derive(master, Stream::Pilot, qi, k as u64);
                    let rx = link.transmit(&tx, &real, snr, pilot_seed, &mut noise)?;
                    let hat = codec.decode(&rx.equalized)?;
                    Ok(RankSample {
                        map: ms.pooled_confidence(&hat)?.into_iter().map(|v| v as f32).collect(),
                        s: similarity_from_losses(l_ref, ms.loss(&hat)?, cfg.s_cap),
                        snr_db: snr,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(RankQuery {
                reference: reference.into_iter().map(|v| v as f32).collect(),
                samples,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    RankCorpus::new(cfg.pool, queries)
}

/// Corpus whose samples are the original feature plus Gaussian noise at
/// geometrically spaced levels, keeping per query only samples whose `S`
/// differ by at least `min_gap` from every sample already kept.
pub fn separable_corpus(
    frames: &[TrainFrame],
    pool: [usize; 2],
    levels: usize,
    base_sigma: f64,
    ratio: f64,
    min_gap: f64,
    s_cap: f64,
    seed: u64,
) -> Result<RankCorpus> {
    let queries = frames
        .par_iter()
        .enumerate()
        .map(|(qi, f)| {
            let mut rng = seed::stream_rng(seed, Stream::Corpus, qi as u64, 0xA5);
            let l_ref = f.scene.loss(&f.packed)?;
            let mut kept: Vec<RankSample> = Vec::new();
            for l in 0..levels {
                let sigma = base_sigma * ratio.powi(l as i32);
                let noisy: Vec<f64> = f
                    .packed
                    .iter()
                    .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let s = similarity_from_losses(l_ref, f.scene.loss(&noisy)?, s_cap);
                if kept.iter().all(|k| (k.s - s).abs() >= min_gap) {
                    kept.push(RankSample {
                        map: f.scene.pooled_confidence(&noisy)?.into_iter().map(|v| v as f32).collect(),
                        s,
                        snr_db: f64::NAN,
                    });
                }
            }
            Ok(RankQuery {
                reference: f.scene.pooled_confidence(&f.packed)?.into_iter().map(|v| v as f32).collect(),
                samples: kept,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    RankCorpus::new(pool, queries)
}
