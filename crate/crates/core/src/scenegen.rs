//! Synthetic scenes and the proxy detection head.
//!
//! A scene is a sparse field of active cells, each carrying four regression
//! targets and a class label. The feature tensor is the transpose readout of
//! that field through a frozen [`ProxyHead`] plus Gaussian nuisance noise, so
//! reading the clean feature back through the head recovers the targets up to
//! the nuisance term.
//!
//! The perception loss is `L_per = L_local + L_conf`:
//! smooth-L1 (β = 1) over the regression outputs of active cells, plus
//! focal loss (γ = 2, α = 0.25) over the class output of every cell, both
//! normalized by the number of active cells (at least one).

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seed;
use crate::tensors::{ConfidenceMap, FeatureTensor, ImportanceMask, PoolBins};

/// Regression outputs per cell.
pub const REG_DIMS: usize = 4;
/// Rows of the head readout: regression dims plus one class logit.
pub const HEAD_ROWS: usize = REG_DIMS + 1;

pub const FOCAL_GAMMA: f64 = 2.0;
pub const FOCAL_ALPHA: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Expected fraction of active cells.
    pub object_rate: f64,
    /// Standard deviation of the nuisance noise added to every feature entry.
    pub feature_noise: f64,
    /// Class-logit code written into active cells; the head bias is `-code/2`.
    pub class_code: f64,
    pub head_seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            channels: 64,
            height: 100,
            width: 252,
            object_rate: 2e-3,
            feature_noise: 0.1,
            class_code: 8.0,
            head_seed: 0x5eed_0001,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels < HEAD_ROWS {
            return Err(Error::config("scene.channels", format!("need at least {HEAD_ROWS} channels")));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::config("scene.height", "spatial dims must be positive"));
        }
        if !(0.0..=1.0).contains(&self.object_rate) {
            return Err(Error::config("scene.object_rate", "must lie in [0, 1]"));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(Error::config("scene.feature_noise", "must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn head<T: Real>(&self) -> ProxyHead<T> {
        ProxyHead::new(self.channels, self.class_code, self.head_seed)
    }
}

/// Ground truth of one scene: `H × W × 4` targets and `H × W` labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene<T> {
    height: usize,
    width: usize,
    targets: Vec<T>,
    labels: Vec<u8>,
}

impl<T: Real> Scene<T> {
    pub fn new(height: usize, width: usize, targets: Vec<T>, labels: Vec<u8>) -> Result<Self> {
        let n = height * width;
        if labels.len() != n || targets.len() != n * REG_DIMS {
            return Err(Error::shape(
                format!("{n} labels / {} targets", n * REG_DIMS),
                format!("{} / {}", labels.len(), targets.len()),
            ));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("scene targets"));
        }
        Ok(Scene {
            height,
            width,
            targets,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn target(&self, cell: usize) -> &[T] {
        &self.targets[cell * REG_DIMS..(cell + 1) * REG_DIMS]
    }

    pub fn active_cells(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn active_fraction(&self) -> f64 {
        self.active_cells() as f64 / self.labels.len() as f64
    }

    fn positives(&self) -> f64 {
        self.active_cells().max(1) as f64
    }
}

/// Frozen linear readout `C → 4 regression values + 1 class logit` per cell.
///
/// The five weight rows are orthonormal, so the readout of a transpose-readout
/// feature returns the encoded field exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyHead<T> {
    channels: usize,
    // HEAD_ROWS x channels, row-major
    weights: Vec<T>,
    class_bias: T,
    seed: u64,
}

impl<T: Real> ProxyHead<T> {
    pub fn new(channels: usize, class_code: f64, seed: u64) -> Self {
        assert!(channels >= HEAD_ROWS, "proxy head needs at least {HEAD_ROWS} channels");
        let mut rng = seed::rng(seed);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(HEAD_ROWS);
        while rows.len() < HEAD_ROWS {
            let mut v: Vec<f64> = (0..channels).map(|_| rng.sample(StandardNormal)).collect();
            for r in &rows {
                let d: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(a, b)| *a -= d * b);
            }
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n > 1e-8 {
                v.iter_mut().for_each(|a| *a /= n);
                rows.push(v);
            }
        }
        ProxyHead {
            channels,
            weights: rows.concat().into_iter().map(T::of).collect(),
            class_bias: T::of(-0.5 * class_code),
            seed,
        }
    }

    /// Head with explicit weights (`HEAD_ROWS × channels`) and class bias.
    pub fn from_parts(channels: usize, weights: Vec<T>, class_bias: T) -> Result<Self> {
        if weights.len() != HEAD_ROWS * channels {
            return Err(Error::shape(HEAD_ROWS * channels, weights.len()));
        }
        Ok(ProxyHead {
            channels,
            weights,
            class_bias,
            seed: 0,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn class_bias(&self) -> T {
        self.class_bias
    }

    pub fn row(&self, o: usize) -> &[T] {
        &self.weights[o * self.channels..(o + 1) * self.channels]
    }

    /// Per-cell readout planes of `f`.
    pub fn readout(&self, f: &FeatureTensor<T>) -> Result<Readout<T>> {
        if f.channels() != self.channels {
            return Err(Error::shape(self.channels, f.channels()));
        }
        let hw = f.cells();
        let mut planes = vec![T::zero(); HEAD_ROWS * hw];
        for (o, plane) in planes.chunks_exact_mut(hw).enumerate() {
            for (c, &w) in self.row(o).iter().enumerate() {
                for (p, &x) in plane.iter_mut().zip(f.plane(c)) {
                    *p += w * x;
                }
            }
        }
        let bias = self.class_bias;
        planes[REG_DIMS * hw..].iter_mut().for_each(|z| *z += bias);
        Ok(Readout {
            height: f.height(),
            width: f.width(),
            planes,
        })
    }
}

/// Head outputs: four regression planes followed by the class-logit plane.
#[derive(Debug, Clone)]
pub struct Readout<T> {
    height: usize,
    width: usize,
    planes: Vec<T>,
}

impl<T: Real> Readout<T> {
    pub fn regression(&self, d: usize, cell: usize) -> T {
        self.planes[d * self.height * self.width + cell]
    }

    pub fn logit(&self, cell: usize) -> T {
        self.planes[REG_DIMS * self.height * self.width + cell]
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

#[inline]
fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// Focal loss of logit `z` against a binary label.
#[inline]
pub fn focal(z: f64, label: u8) -> f64 {
    let p = sigmoid(z);
    if label == 1 {
        FOCAL_ALPHA * (1.0 - p).powf(FOCAL_GAMMA) * softplus(-z)
    } else {
        (1.0 - FOCAL_ALPHA) * p.powf(FOCAL_GAMMA) * softplus(z)
    }
}

#[inline]
fn focal_grad(z: f64, label: u8) -> f64 {
    let p = sigmoid(z);
    if label == 1 {
        // ln p = -softplus(-z)
        FOCAL_ALPHA * (1.0 - p).powf(FOCAL_GAMMA) * (-FOCAL_GAMMA * p * softplus(-z) - (1.0 - p))
    } else {
        (1.0 - FOCAL_ALPHA) * p.powf(FOCAL_GAMMA) * (p + FOCAL_GAMMA * (1.0 - p) * softplus(z))
    }
}

/// Draws a scene and its feature tensor. Deterministic in `seed`.
pub fn generate_scene<T: Real>(cfg: &SceneConfig, head: &ProxyHead<T>, seed: u64) -> Result<(Scene<T>, FeatureTensor<T>)> {
    cfg.validate()?;
    if head.channels() != cfg.channels {
        return Err(Error::shape(cfg.channels, head.channels()));
    }
    let (c, hw) = (cfg.channels, cfg.cells());
    let mut rng = seed::rng(seed);

    let count = if cfg.object_rate > 0.0 {
        let mean = cfg.object_rate * hw as f64;
        let draw: f64 = Poisson::new(mean)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .sample(&mut rng);
        (draw as usize).min(hw)
    } else {
        0
    };
    let mut active = index::sample(&mut rng, hw, count).into_vec();
    active.sort_unstable();

    let mut labels = vec![0u8; hw];
    let mut targets = vec![T::zero(); hw * REG_DIMS];
    for &cell in &active {
        labels[cell] = 1;
        for d in 0..REG_DIMS {
            targets[cell * REG_DIMS + d] = T::of(rng.gen_range(-1.0..1.0));
        }
    }

    let sigma = cfg.feature_noise;
    let mut data: Vec<T> = (0..c * hw)
        .map(|_| {
            let n: f64 = rng.sample(StandardNormal);
            T::of(sigma * n)
        })
        .collect();
    let code = T::of(cfg.class_code);
    for &cell in &active {
        for ch in 0..c {
            let mut acc = head.row(REG_DIMS)[ch] * code;
            for d in 0..REG_DIMS {
                acc += head.row(d)[ch] * targets[cell * REG_DIMS + d];
            }
            data[ch * hw + cell] += acc;
        }
    }
    let scene = Scene::new(cfg.height, cfg.width, targets, labels)?;
    let f = FeatureTensor::new(c, cfg.height, cfg.width, data)?;
    Ok((scene, f))
}

fn check_scene<T: Real>(f: &FeatureTensor<T>, scene: &Scene<T>) -> Result<()> {
    if f.height() != scene.height() || f.width() != scene.width() {
        return Err(Error::shape(
            format!("{}x{}", scene.height(), scene.width()),
            format!("{}x{}", f.height(), f.width()),
        ));
    }
    Ok(())
}

pub fn perception_loss<T: Real>(f: &FeatureTensor<T>, scene: &Scene<T>, head: &ProxyHead<T>) -> Result<f64> {
    check_scene(f, scene)?;
    let r = head.readout(f)?;
    let mut local = 0.0;
    let mut conf = 0.0;
    for cell in 0..f.cells() {
        let label = scene.labels()[cell];
        if label == 1 {
            for d in 0..REG_DIMS {
                local += smooth_l1(r.regression(d, cell).f64() - scene.target(cell)[d].f64());
            }
        }
        conf += focal(r.logit(cell).f64(), label);
    }
    Ok((local + conf) / scene.positives())
}

pub fn confidence_map<T: Real>(f: &FeatureTensor<T>, head: &ProxyHead<T>) -> Result<ConfidenceMap<T>> {
    let r = head.readout(f)?;
    let values = (0..f.cells()).map(|i| T::of(sigmoid(r.logit(i).f64()))).collect();
    ConfidenceMap::new(f.height(), f.width(), values)
}

/// `S = min(U, -log10 |a - b|)`, equal to `U` when the losses coincide.
pub fn similarity_from_losses(loss_ref: f64, loss_hat: f64, upper: f64) -> f64 {
    let d = (loss_ref - loss_hat).abs();
    if d == 0.0 {
        upper
    } else {
        upper.min(-d.log10())
    }
}

pub fn true_similarity<T: Real>(
    f: &FeatureTensor<T>,
    f_hat: &FeatureTensor<T>,
    scene: &Scene<T>,
    head: &ProxyHead<T>,
    upper: f64,
) -> Result<f64> {
    if !(upper > 0.0) {
        return Err(Error::InvalidArgument("similarity cap must be positive".into()));
    }
    let a = perception_loss(f, scene, head)?;
    let b = perception_loss(f_hat, scene, head)?;
    Ok(similarity_from_losses(a, b, upper))
}

/// Perception loss and confidence maps of tensors that are zero outside a
/// fixed mask, evaluated from their packed form.
///
/// Cells outside the mask always read out as the head bias, so their share
/// of the loss is computed once at construction.
#[derive(Debug, Clone)]
pub struct MaskedScene {
    channels: usize,
    cells: Vec<usize>,
    labels: Vec<u8>,
    targets: Vec<[f64; REG_DIMS]>,
    weights: Vec<f64>,
    class_bias: f64,
    outside_loss: f64,
    positives: f64,
    pool: Option<MaskedPool>,
}

#[derive(Debug, Clone)]
struct MaskedPool {
    base: Vec<f64>,
    // per selected cell: (bin, 1 / bin size)
    shares: Vec<Vec<(usize, f64)>>,
}

impl MaskedScene {
    pub fn new<T: Real>(
        scene: &Scene<T>,
        head: &ProxyHead<T>,
        mask: &ImportanceMask,
        pool: Option<(usize, usize)>,
    ) -> Result<Self> {
        if mask.height() != scene.height() || mask.width() != scene.width() {
            return Err(Error::shape(
                format!("{}x{}", scene.height(), scene.width()),
                format!("{}x{}", mask.height(), mask.width()),
            ));
        }
        let bias = head.class_bias().f64();
        let mut outside = 0.0;
        for cell in 0..scene.labels().len() {
            if mask.is_set(cell) {
                continue;
            }
            let label = scene.labels()[cell];
            if label == 1 {
                outside += scene.target(cell).iter().map(|t| smooth_l1(-t.f64())).sum::<f64>();
            }
            outside += focal(bias, label);
        }
        let cells = mask.selected().to_vec();
        let labels = cells.iter().map(|&c| scene.labels()[c]).collect();
        let targets = cells
            .iter()
            .map(|&c| {
                let t = scene.target(c);
                [t[0].f64(), t[1].f64(), t[2].f64(), t[3].f64()]
            })
            .collect();
        let pool = pool.map(|(ph, pw)| {
            let bins = PoolBins::new(scene.height(), scene.width(), ph, pw);
            let p0 = sigmoid(bias);
            MaskedPool {
                base: vec![p0; bins.len()],
                shares: cells
                    .iter()
                    .map(|&c| bins.bins_of(c).into_iter().map(|b| (b, 1.0 / bins.size(b) as f64)).collect())
                    .collect(),
            }
        });
        Ok(MaskedScene {
            channels: head.channels(),
            cells,
            labels,
            targets,
            weights: head.weights.iter().map(|w| w.f64()).collect(),
            class_bias: bias,
            outside_loss: outside,
            positives: scene.positives(),
            pool,
        })
    }

    pub fn selected(&self) -> usize {
        self.cells.len()
    }

    pub fn packed_len(&self) -> usize {
        self.cells.len() * self.channels
    }

    fn readout<T: Real>(&self, packed: &[T]) -> Result<Vec<[f64; HEAD_ROWS]>> {
        if packed.len() != self.packed_len() {
            return Err(Error::shape(self.packed_len(), packed.len()));
        }
        let k = self.cells.len();
        let mut out = vec![[0.0; HEAD_ROWS]; k];
        for c in 0..self.channels {
            let w: [f64; HEAD_ROWS] = std::array::from_fn(|o| self.weights[o * self.channels + c]);
            for (r, x) in out.iter_mut().zip(&packed[c * k..(c + 1) * k]) {
                let x = x.f64();
                for o in 0..HEAD_ROWS {
                    r[o] += w[o] * x;
                }
            }
        }
        for r in out.iter_mut() {
            r[REG_DIMS] += self.class_bias;
        }
        Ok(out)
    }

    pub fn loss<T: Real>(&self, packed: &[T]) -> Result<f64> {
        let r = self.readout(packed)?;
        let mut total = self.outside_loss;
        for (j, r) in r.iter().enumerate() {
            if self.labels[j] == 1 {
                for d in 0..REG_DIMS {
                    total += smooth_l1(r[d] - self.targets[j][d]);
                }
            }
            total += focal(r[REG_DIMS], self.labels[j]);
        }
        Ok(total / self.positives)
    }

    /// Loss and its gradient with respect to every packed entry.
    pub fn loss_and_grad<T: Real>(&self, packed: &[T]) -> Result<(f64, Vec<f64>)> {
        let r = self.readout(packed)?;
        let k = self.cells.len();
        let mut total = self.outside_loss;
        let mut dr = vec![[0.0; HEAD_ROWS]; k];
        for (j, r) in r.iter().enumerate() {
            if self.labels[j] == 1 {
                for d in 0..REG_DIMS {
                    let e = r[d] - self.targets[j][d];
                    total += smooth_l1(e);
                    dr[j][d] = smooth_l1_grad(e) / self.positives;
                }
            }
            total += focal(r[REG_DIMS], self.labels[j]);
            dr[j][REG_DIMS] = focal_grad(r[REG_DIMS], self.labels[j]) / self.positives;
        }
        let mut grad = vec![0.0; k * self.channels];
        for c in 0..self.channels {
            let w: [f64; HEAD_ROWS] = std::array::from_fn(|o| self.weights[o * self.channels + c]);
            for (g, d) in grad[c * k..(c + 1) * k].iter_mut().zip(&dr) {
                *g = (0..HEAD_ROWS).map(|o| w[o] * d[o]).sum();
            }
        }
        Ok((total / self.positives, grad))
    }

    /// Confidence of each selected cell.
    pub fn selected_confidence<T: Real>(&self, packed: &[T]) -> Result<Vec<f64>> {
        Ok(self.readout(packed)?.iter().map(|r| sigmoid(r[REG_DIMS])).collect())
    }

    /// Pooled confidence map of the unpacked tensor.
    pub fn pooled_confidence<T: Real>(&self, packed: &[T]) -> Result<Vec<f64>> {
        let pool = self
            .pool
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("masked scene built without pooling".into()))?;
        let p0 = sigmoid(self.class_bias);
        let conf = self.selected_confidence(packed)?;
        let mut out = pool.base.clone();
        for (p, shares) in conf.iter().zip(&pool.shares) {
            for &(b, inv) in shares {
                out[b] += (p - p0) * inv;
            }
        }
        Ok(out)
    }
}
