//! Semantic encoder/decoder pairs and their training.
//!
//! The encoder is one dense net shared by every selected cell: it maps the
//! `C` channel values of a cell to `2k` reals, read as `k` complex symbols.
//! A frame of `K` cells thus fills `K·k ≤ n_cu` channel uses; the rest of the
//! frame is zero. The decoder inverts this per cell. Power normalization runs
//! over the whole `n_cu`-symbol frame.
//!
//! Training uses an AWGN surrogate channel. The reconstruction loss `L_r` is
//! the per-element MSE between `M̂` and `M`; the perception term `L_p` is the
//! proxy-head loss of the unpacked reconstruction. Step 1 minimizes `L_r`,
//! step 2 minimizes `λ·L_r + L_p`.

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView2};
use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nnkit::{read_f32, read_u32, Activation, Adam, DenseNet, Gradients};
use crate::scalar::Real;
use crate::scenegen::{generate_scene, MaskedScene, ProxyHead, SceneConfig};
use crate::seed::{self, Stream};
use crate::tensors::{cells_for_ratio, importance_map, pack_nonzero};

const MAGIC: &[u8; 4] = b"SHCD";

/// Scales `t` so its mean power over all `t.len()` entries is `power`.
pub fn normalize_power<T: Real>(t: &[Complex<T>], power: f64) -> Result<Vec<Complex<T>>> {
    let energy: f64 = t.iter().map(|z| z.norm_sqr().f64()).sum();
    if !(energy > 0.0) {
        return Err(Error::Degenerate("cannot normalize a zero-energy symbol vector".into()));
    }
    if !energy.is_finite() {
        return Err(Error::NonFinite("symbol vector"));
    }
    let s = T::of((t.len() as f64 * power / energy).sqrt());
    Ok(t.iter().map(|z| z * s).collect())
}

/// Packed c-major vector (`c·K + j`) to a `K × C` row matrix.
pub fn packed_to_rows<T: Real>(packed: &[T], channels: usize) -> Array2<T> {
    let k = packed.len() / channels;
    Array2::from_shape_fn((k, channels), |(j, c)| packed[c * k + j])
}

pub fn rows_to_packed<T: Real>(rows: ArrayView2<T>) -> Vec<T> {
    let (k, c) = rows.dim();
    let mut out = vec![T::zero(); k * c];
    for ((j, ch), &v) in rows.indexed_iter() {
        out[ch * k + j] = v;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticCodec<T> {
    encoder: DenseNet<T>,
    decoder: DenseNet<T>,
    channels: usize,
    cells: usize,
    symbols_per_cell: usize,
    n_cu: usize,
    power: f64,
}

/// Sizes of a codec for a feature shape, ratio and frame budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodecGeometry {
    pub channels: usize,
    pub cells: usize,
    pub symbols_per_cell: usize,
    pub n_cu: usize,
}

impl CodecGeometry {
    pub fn new(channels: usize, spatial_cells: usize, cr: f64, n_cu: usize) -> Result<Self> {
        if !(cr > 0.0 && cr <= 1.0) {
            return Err(Error::config("codec.cr", "must lie in (0, 1]"));
        }
        let cells = cells_for_ratio(cr, spatial_cells);
        let symbols_per_cell = n_cu / cells;
        if symbols_per_cell == 0 {
            return Err(Error::config(
                "codec.cr",
                format!("{cells} cells do not fit {n_cu} channel uses"),
            ));
        }
        Ok(CodecGeometry {
            channels,
            cells,
            symbols_per_cell,
            n_cu,
        })
    }

    pub fn used_symbols(&self) -> usize {
        self.cells * self.symbols_per_cell
    }
}

impl<T: Real> SemanticCodec<T> {
    pub fn new(geometry: CodecGeometry, hidden: usize, prelu: f64, power: f64, seed: u64) -> Result<Self> {
        if !(power > 0.0) {
            return Err(Error::config("codec.power", "must be positive"));
        }
        let (c, s) = (geometry.channels, 2 * geometry.symbols_per_cell);
        let act = Activation::Prelu(prelu);
        let encoder = DenseNet::glorot(&[c, hidden, s], &[act, Activation::Linear], seed::mix(seed ^ 1))?;
        let decoder = DenseNet::glorot(&[s, hidden, hidden, c], &[act, act, Activation::Linear], seed::mix(seed ^ 2))?;
        Self::from_parts(geometry, encoder, decoder, power)
    }

    pub fn from_parts(geometry: CodecGeometry, encoder: DenseNet<T>, decoder: DenseNet<T>, power: f64) -> Result<Self> {
        let s = 2 * geometry.symbols_per_cell;
        if encoder.input_width() != geometry.channels || decoder.output_width() != geometry.channels {
            return Err(Error::shape(geometry.channels, encoder.input_width()));
        }
        if encoder.output_width() != s || decoder.input_width() != s {
            return Err(Error::shape(s, encoder.output_width()));
        }
        if geometry.used_symbols() > geometry.n_cu {
            return Err(Error::shape(geometry.n_cu, geometry.used_symbols()));
        }
        Ok(SemanticCodec {
            encoder,
            decoder,
            channels: geometry.channels,
            cells: geometry.cells,
            symbols_per_cell: geometry.symbols_per_cell,
            n_cu: geometry.n_cu,
            power,
        })
    }

    pub fn geometry(&self) -> CodecGeometry {
        CodecGeometry {
            channels: self.channels,
            cells: self.cells,
            symbols_per_cell: self.symbols_per_cell,
            n_cu: self.n_cu,
        }
    }

    pub fn encoder(&self) -> &DenseNet<T> {
        &self.encoder
    }

    pub fn decoder(&self) -> &DenseNet<T> {
        &self.decoder
    }

    pub fn encoder_mut(&mut self) -> &mut DenseNet<T> {
        &mut self.encoder
    }

    pub fn decoder_mut(&mut self) -> &mut DenseNet<T> {
        &mut self.decoder
    }

    pub fn n_cu(&self) -> usize {
        self.n_cu
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn packed_len(&self) -> usize {
        self.channels * self.cells
    }

    /// Symbols carrying data; the remaining `n_cu − used` are zero.
    pub fn used_symbols(&self) -> usize {
        self.cells * self.symbols_per_cell
    }

    fn check_packed(&self, len: usize) -> Result<()> {
        if len != self.packed_len() {
            return Err(Error::shape(self.packed_len(), len));
        }
        Ok(())
    }

    /// Encoder output before power normalization, zero-padded to `n_cu`.
    pub fn encode_raw(&self, packed: &[T]) -> Result<Vec<Complex<T>>> {
        self.check_packed(packed.len())?;
        let out = self.encoder.forward(packed_to_rows(packed, self.channels).view())?;
        let mut t: Vec<Complex<T>> = out
            .as_slice()
            .expect("standard layout")
            .chunks_exact(2)
            .map(|p| Complex::new(p[0], p[1]))
            .collect();
        t.resize(self.n_cu, Complex::new(T::zero(), T::zero()));
        Ok(t)
    }

    pub fn encode(&self, packed: &[T]) -> Result<Vec<Complex<T>>> {
        normalize_power(&self.encode_raw(packed)?, self.power)
    }

    /// Decodes the first `K·k` received symbols to a packed vector.
    pub fn decode(&self, t_hat: &[Complex<T>]) -> Result<Vec<T>> {
        let used = self.used_symbols();
        if t_hat.len() < used {
            return Err(Error::shape(used, t_hat.len()));
        }
        let s = 2 * self.symbols_per_cell;
        let rows = Array2::from_shape_fn((self.cells, s), |(j, i)| {
            let z = t_hat[j * self.symbols_per_cell + i / 2];
            if i % 2 == 0 {
                z.re
            } else {
                z.im
            }
        });
        let out = self.decoder.forward(rows.view())?;
        Ok(rows_to_packed(out.view()))
    }

    pub fn cast<U: Real>(&self) -> SemanticCodec<U> {
        SemanticCodec {
            encoder: self.encoder.cast(),
            decoder: self.decoder.cast(),
            channels: self.channels,
            cells: self.cells,
            symbols_per_cell: self.symbols_per_cell,
            n_cu: self.n_cu,
            power: self.power,
        }
    }

    pub fn round_to_f32(&mut self) {
        self.encoder.round_to_f32();
        self.decoder.round_to_f32();
    }

    pub fn fingerprint(&self) -> u64 {
        seed::mix(self.encoder.fingerprint() ^ self.decoder.fingerprint().rotate_left(17))
    }

    /// `SHCD`, then `u32` channels, cells, symbols per cell, n_cu, `f32`
    /// power, then the encoder and decoder network checkpoints.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        for v in [self.channels, self.cells, self.symbols_per_cell, self.n_cu] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&(self.power as f32).to_le_bytes())?;
        self.encoder.write_to(&mut w)?;
        self.decoder.write_to(&mut w)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a codec checkpoint".into()));
        }
        let geometry = CodecGeometry {
            channels: read_u32(&mut r)? as usize,
            cells: read_u32(&mut r)? as usize,
            symbols_per_cell: read_u32(&mut r)? as usize,
            n_cu: read_u32(&mut r)? as usize,
        };
        let power = read_f32(&mut r)? as f64;
        let encoder = DenseNet::read_from(&mut r)?;
        let decoder = DenseNet::read_from(&mut r)?;
        Self::from_parts(geometry, encoder, decoder, power)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecConfig {
    /// Compression ratio of the first transmission.
    pub cr: f64,
    pub hidden: usize,
    pub prelu: f64,
    pub power: f64,
    pub lambda: f64,
    pub lr: f64,
    /// Frames per mini-batch.
    pub batch: usize,
    pub train_frames: usize,
    pub eval_frames: usize,
    pub step1_epochs: usize,
    pub step2_epochs: usize,
    pub pair2_epochs: usize,
    pub pair1_snr_db: [f64; 2],
    pub pair2_snr_db: [f64; 2],
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            cr: 5e-3,
            hidden: 64,
            prelu: 0.25,
            power: 1.0,
            lambda: 0.5,
            lr: 1e-3,
            batch: 8,
            train_frames: 64,
            eval_frames: 16,
            step1_epochs: 40,
            step2_epochs: 20,
            pair2_epochs: 40,
            pair1_snr_db: [0.0, 18.0],
            pair2_snr_db: [0.0, 6.0],
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cr > 0.0 && self.cr <= 1.0) {
            return Err(Error::config("codec.cr", "must lie in (0, 1]"));
        }
        if self.hidden == 0 {
            return Err(Error::config("codec.hidden", "must be positive"));
        }
        if !(self.power > 0.0) {
            return Err(Error::config("codec.power", "must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("codec.lambda", "must be finite and >= 0"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("codec.lr", "must be finite and >= 0"));
        }
        if self.batch == 0 || self.train_frames < self.batch {
            return Err(Error::config("codec.batch", "need 0 < batch <= train_frames"));
        }
        if self.eval_frames == 0 {
            return Err(Error::config("codec.eval_frames", "must be positive"));
        }
        for (name, r) in [
            ("codec.pair1_snr_db", self.pair1_snr_db),
            ("codec.pair2_snr_db", self.pair2_snr_db),
        ] {
            if !(r[0] <= r[1] && r[0].is_finite() && r[1].is_finite()) {
                return Err(Error::config(name, "need finite [lo, hi] with lo <= hi"));
            }
        }
        Ok(())
    }
}

/// One training frame: packed masked feature and its loss context.
#[derive(Debug, Clone)]
pub struct TrainFrame {
    pub packed: Vec<f64>,
    pub scene: MaskedScene,
}

/// Index space of scene seeds per use, so train, eval and sweep scenes never
/// collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum SceneSet {
    Sweep = 0,
    CodecTrain = 1,
    CodecEval = 2,
    Corpus = 3,
    Separable = 4,
}

pub fn scene_seed(master: u64, set: SceneSet, index: u64) -> u64 {
    seed::derive(master, Stream::Scene, index, set as u64)
}

/// Generates `count` frames of a scene set, in parallel with ordered output.
pub fn build_frames(
    scene_cfg: &SceneConfig,
    head: &ProxyHead<f64>,
    cr: f64,
    master: u64,
    set: SceneSet,
    count: usize,
    pool: Option<(usize, usize)>,
) -> Result<Vec<TrainFrame>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let (scene, f) = generate_scene(scene_cfg, head, scene_seed(master, set, i))?;
            let mask = importance_map(&f, cr)?;
            Ok(TrainFrame {
                packed: pack_nonzero(&f, &mask)?,
                scene: MaskedScene::new(&scene, head, &mask, pool)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub epoch: usize,
    pub l_r: f64,
    pub l_p: f64,
    pub l_total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    Reconstruction,
    Total { lambda: f64 },
}

/// Forward state of one codec over a batch, kept for the backward pass.
struct Pass {
    enc_tape: crate::nnkit::GradTape<f64>,
    dec_tape: crate::nnkit::GradTape<f64>,
    pre: Array2<f64>,
    scales: Vec<f64>,
}

fn awgn_pass(
    codec: &SemanticCodec<f64>,
    x: &Array2<f64>,
    frames: usize,
    noise_var: f64,
    rng: &mut impl Rng,
    tape: bool,
) -> Result<(Array2<f64>, Option<Pass>)> {
    let rows_per = codec.cells;
    let n_cu = codec.n_cu as f64;
    let (pre, enc_tape) = if tape {
        let (p, t) = codec.encoder.forward_tape(x.view())?;
        (p, Some(t))
    } else {
        (codec.encoder.forward(x.view())?, None)
    };
    let mut y = pre.clone();
    let mut scales = Vec::with_capacity(frames);
    let sd = (noise_var / 2.0).sqrt();
    for b in 0..frames {
        let mut blk = y.slice_mut(ndarray::s![b * rows_per..(b + 1) * rows_per, ..]);
        let e: f64 = blk.iter().map(|v| v * v).sum();
        if !(e > 0.0) {
            return Err(Error::Degenerate("encoder produced a zero-energy frame".into()));
        }
        let s = (n_cu * codec.power / e).sqrt();
        scales.push(s);
        blk.mapv_inplace(|v| v * s + sd * rng.sample::<f64, _>(StandardNormal));
    }
    if tape {
        let (out, dec_tape) = codec.decoder.forward_tape(y.view())?;
        let pass = Pass {
            enc_tape: enc_tape.unwrap(),
            dec_tape,
            pre,
            scales,
        };
        Ok((out, Some(pass)))
    } else {
        Ok((codec.decoder.forward(y.view())?, None))
    }
}

fn backward_pass(codec: &SemanticCodec<f64>, pass: Pass, d_out: Array2<f64>) -> Result<(Gradients<f64>, Gradients<f64>)> {
    let rows_per = codec.cells;
    let (g_dec, mut d_y) = codec.decoder.backward(pass.dec_tape, d_out.view())?;
    for (b, &s) in pass.scales.iter().enumerate() {
        let range = ndarray::s![b * rows_per..(b + 1) * rows_per, ..];
        let t = pass.pre.slice(range);
        let mut g = d_y.slice_mut(range);
        let tt: f64 = t.iter().map(|v| v * v).sum();
        let tg: f64 = t.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        let c = tg / tt;
        ndarray::Zip::from(&mut g).and(&t).for_each(|g, &t| *g = s * (*g - c * t));
    }
    let (g_enc, _) = codec.encoder.backward(pass.enc_tape, d_y.view())?;
    Ok((g_enc, g_dec))
}

fn stack(frames: &[&TrainFrame], channels: usize) -> Array2<f64> {
    let k = frames[0].packed.len() / channels;
    let mut x = Array2::zeros((frames.len() * k, channels));
    for (b, f) in frames.iter().enumerate() {
        x.slice_mut(ndarray::s![b * k..(b + 1) * k, ..])
            .assign(&packed_to_rows(&f.packed, channels));
    }
    x
}

/// Losses of a combined reconstruction and their gradient with respect to it.
fn losses(
    frames: &[&TrainFrame],
    x: &Array2<f64>,
    recon: &Array2<f64>,
    channels: usize,
    objective: Option<Objective>,
) -> Result<(f64, f64, Option<Array2<f64>>)> {
    let n = x.len() as f64;
    let diff = recon - x;
    let l_r = diff.iter().map(|v| v * v).sum::<f64>() / n;
    let k = x.nrows() / frames.len();
    let mut l_p = 0.0;
    let mut grad = objective.map(|_| Array2::<f64>::zeros(x.raw_dim()));
    let inv_b = 1.0 / frames.len() as f64;
    for (b, f) in frames.iter().enumerate() {
        let blk = recon.slice(ndarray::s![b * k..(b + 1) * k, ..]);
        let packed = rows_to_packed(blk);
        match (objective, grad.as_mut()) {
            (Some(Objective::Total { .. }), Some(g)) => {
                let (l, gp) = f.scene.loss_and_grad(&packed)?;
                l_p += l * inv_b;
                let gp_rows = packed_to_rows(&gp, channels);
                g.slice_mut(ndarray::s![b * k..(b + 1) * k, ..]).scaled_add(inv_b, &gp_rows);
            }
            _ => l_p += f.scene.loss(&packed)? * inv_b,
        }
    }
    if let (Some(obj), Some(g)) = (objective, grad.as_mut()) {
        let w = match obj {
            Objective::Reconstruction => 1.0,
            Objective::Total { lambda } => lambda,
        };
        g.scaled_add(2.0 * w / n, &diff);
    }
    Ok((l_r, l_p, grad))
}

/// Per-element reconstruction error and perception loss of a frame set under
/// AWGN, with per-frame SNR drawn from `snr_range` and noise keyed by `seed`.
pub fn evaluate_awgn(
    pair1: &SemanticCodec<f64>,
    pair2: Option<&SemanticCodec<f64>>,
    frames: &[TrainFrame],
    snr_range: [f64; 2],
    seed: u64,
) -> Result<(f64, f64)> {
    let mut l_r = 0.0;
    let mut l_p = 0.0;
    for (i, f) in frames.iter().enumerate() {
        let mut rng = seed::rng(seed::mix(seed ^ i as u64));
        let snr = if snr_range[1] > snr_range[0] {
            rng.gen_range(snr_range[0]..snr_range[1])
        } else {
            snr_range[0]
        };
        let x = stack(&[f], pair1.channels);
        let nv = crate::channel::noise_variance(pair1.power, snr);
        let (mut recon, _) = awgn_pass(pair1, &x, 1, nv, &mut rng, false)?;
        if let Some(p2) = pair2 {
            let (r2, _) = awgn_pass(p2, &x, 1, nv, &mut rng, false)?;
            recon += &r2;
        }
        let (a, b, _) = losses(&[f], &x, &recon, pair1.channels, None)?;
        l_r += a;
        l_p += b;
    }
    let n = frames.len() as f64;
    Ok((l_r / n, l_p / n))
}

/// Gradients of one batch under `objective`. With `frozen`, the loss is
/// taken on the sum of the frozen codec's reconstruction and this codec's.
pub fn batch_gradients(
    codec: &SemanticCodec<f64>,
    frozen: Option<&SemanticCodec<f64>>,
    frames: &[&TrainFrame],
    snr_db: f64,
    objective: Objective,
    seed: u64,
) -> Result<(f64, f64, Gradients<f64>, Gradients<f64>)> {
    let mut rng = seed::rng(seed);
    let x = stack(frames, codec.channels);
    let nv = crate::channel::noise_variance(codec.power, snr_db);
    let base = match frozen {
        Some(p1) => Some(awgn_pass(p1, &x, frames.len(), nv, &mut rng, false)?.0),
        None => None,
    };
    let (out, pass) = awgn_pass(codec, &x, frames.len(), nv, &mut rng, true)?;
    let recon = match &base {
        Some(b) => b + &out,
        None => out,
    };
    let (l_r, l_p, grad) = losses(frames, &x, &recon, codec.channels, Some(objective))?;
    let (ge, gd) = backward_pass(codec, pass.expect("taped pass"), grad.expect("objective gradient"))?;
    Ok((l_r, l_p, ge, gd))
}

struct Phase<'a> {
    objective: Objective,
    epochs: usize,
    snr: [f64; 2],
    frozen: Option<&'a SemanticCodec<f64>>,
}

fn run_phases(
    codec: &mut SemanticCodec<f64>,
    cfg: &CodecConfig,
    train: &[TrainFrame],
    eval: &[TrainFrame],
    phases: &[Phase],
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    let mut curve = Vec::new();
    let mut epoch = 0usize;
    let eval_seed = seed::mix(seed ^ 0xE7A1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for phase in phases {
        let mut adam_e = Adam::new(cfg.lr);
        let mut adam_d = Adam::new(cfg.lr);
        for _ in 0..phase.epochs {
            epoch += 1;
            let mut rng = seed::stream_rng(seed, Stream::CodecTrain, epoch as u64, 0);
            // Fisher-Yates with the epoch stream
            for i in (1..order.len()).rev() {
                order.swap(i, rng.gen_range(0..=i));
            }
            for (bi, chunk) in order.chunks(cfg.batch).enumerate() {
                if chunk.len() < cfg.batch {
                    continue;
                }
                let frames: Vec<&TrainFrame> = chunk.iter().map(|&i| &train[i]).collect();
                let snr = if phase.snr[1] > phase.snr[0] {
                    rng.gen_range(phase.snr[0]..phase.snr[1])
                } else {
                    phase.snr[0]
                };
                let batch_seed = seed::derive(seed, Stream::CodecTrain, epoch as u64, bi as u64 + 1);
                let (l_r, l_p, ge, gd) = batch_gradients(codec, phase.frozen, &frames, snr, phase.objective, batch_seed)?;
                if !(l_r.is_finite() && l_p.is_finite() && ge.is_finite() && gd.is_finite()) {
                    return Err(Error::Diverged {
                        epoch,
                        detail: format!("batch {bi}: l_r={l_r} l_p={l_p}"),
                    });
                }
                adam_e.step(&mut codec.encoder, &ge);
                adam_d.step(&mut codec.decoder, &gd);
            }
            let current: &SemanticCodec<f64> = codec;
            let (l_r, l_p) = evaluate_awgn(
                phase.frozen.unwrap_or(current),
                phase.frozen.map(|_| current),
                eval,
                phase.snr,
                eval_seed,
            )?;
            if !(l_r.is_finite() && l_p.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("evaluation l_r={l_r} l_p={l_p}"),
                });
            }
            curve.push(CurvePoint {
                epoch,
                l_r,
                l_p,
                l_total: cfg.lambda * l_r + l_p,
            });
        }
    }
    Ok(curve)
}

/// Two-step training of the first codec pair: reconstruction only, then the
/// weighted total. The returned codec has `f32`-exact parameters.
pub fn train_no_harq(
    cfg: &CodecConfig,
    geometry: CodecGeometry,
    train: &[TrainFrame],
    eval: &[TrainFrame],
    seed: u64,
) -> Result<(SemanticCodec<f64>, Vec<CurvePoint>)> {
    cfg.validate()?;
    let mut codec = SemanticCodec::new(
        geometry,
        cfg.hidden,
        cfg.prelu,
        cfg.power,
        seed::derive(seed, Stream::CodecInit, 1, 0),
    )?;
    let phases = [
        Phase {
            objective: Objective::Reconstruction,
            epochs: cfg.step1_epochs,
            snr: cfg.pair1_snr_db,
            frozen: None,
        },
        Phase {
            objective: Objective::Total { lambda: cfg.lambda },
            epochs: cfg.step2_epochs,
            snr: cfg.pair1_snr_db,
            frozen: None,
        },
    ];
    let curve = run_phases(
        &mut codec,
        cfg,
        train,
        eval,
        &phases,
        seed::derive(seed, Stream::CodecTrain, 0, 1),
    )?;
    codec.round_to_f32();
    Ok((codec, curve))
}

/// Trains the retransmission pair on the combined reconstruction
/// `M̂¹ + M̂²` at low SNR, with `pair1` frozen.
pub fn train_harq2_pair(
    pair1: &SemanticCodec<f64>,
    cfg: &CodecConfig,
    train: &[TrainFrame],
    eval: &[TrainFrame],
    seed: u64,
) -> Result<(SemanticCodec<f64>, Vec<CurvePoint>)> {
    cfg.validate()?;
    let mut codec = SemanticCodec::new(
        pair1.geometry(),
        cfg.hidden,
        cfg.prelu,
        cfg.power,
        seed::derive(seed, Stream::CodecInit, 2, 0),
    )?;
    // zero output layer: the combined reconstruction starts at M̂¹
    let last = codec.decoder.layers().len() - 1;
    let out = &mut codec.decoder.layers_mut()[last];
    out.weight.fill(0.0);
    out.bias.fill(0.0);
    let phases = [Phase {
        objective: Objective::Total { lambda: cfg.lambda },
        epochs: cfg.pair2_epochs,
        snr: cfg.pair2_snr_db,
        frozen: Some(pair1),
    }];
    let curve = run_phases(
        &mut codec,
        cfg,
        train,
        eval,
        &phases,
        seed::derive(seed, Stream::CodecTrain, 0, 2),
    )?;
    codec.round_to_f32();
    Ok((codec, curve))
}
