//! Dense networks with reverse-mode gradients and first-order optimizers.
//!
//! Batches are row-major matrices: one sample per row. A layer computes
//! `act(x·Wᵀ + b)` with `W` stored `out × in`.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seed;

const MAGIC: &[u8; 4] = b"SHNN";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Linear,
    Relu,
    /// Leaky rectifier with a fixed negative slope.
    Prelu(f64),
    Sigmoid,
    Tanh,
}

impl Activation {
    fn tag(self) -> (u32, f64) {
        match self {
            Activation::Linear => (0, 0.0),
            Activation::Relu => (1, 0.0),
            Activation::Prelu(a) => (2, a),
            Activation::Sigmoid => (3, 0.0),
            Activation::Tanh => (4, 0.0),
        }
    }

    fn from_tag(tag: u32, param: f64) -> Result<Self> {
        Ok(match tag {
            0 => Activation::Linear,
            1 => Activation::Relu,
            2 => Activation::Prelu(param),
            3 => Activation::Sigmoid,
            4 => Activation::Tanh,
            t => return Err(Error::Format(format!("unknown activation tag {t}"))),
        })
    }

    #[inline]
    fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(T::zero()),
            Activation::Prelu(a) => {
                if z > T::zero() {
                    z
                } else {
                    T::of(a) * z
                }
            }
            Activation::Sigmoid => T::of(crate::scenegen::sigmoid(z.f64())),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative from the pre-activation `z` and output `y`.
    #[inline]
    fn derivative<T: Real>(self, z: T, y: T) -> T {
        match self {
            Activation::Linear => T::one(),
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Prelu(a) => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::of(a)
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Tanh => T::one() - y * y,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub activation: Activation,
}

impl<T: Real> Layer<T> {
    pub fn new(weight: Array2<T>, bias: Array1<T>, activation: Activation) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(Error::shape(weight.nrows(), bias.len()));
        }
        if weight.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer parameters"));
        }
        Ok(Layer {
            weight,
            bias,
            activation,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet<T> {
    layers: Vec<Layer<T>>,
}

/// Forward activations of one batch, consumed by [`DenseNet::backward`].
#[derive(Debug)]
pub struct GradTape<T> {
    inputs: Vec<Array2<T>>,
    pre: Vec<Array2<T>>,
    outputs: Vec<Array2<T>>,
}

/// Per-layer parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub weight: Vec<Array2<T>>,
    pub bias: Vec<Array1<T>>,
}

impl<T: Real> DenseNet<T> {
    pub fn from_layers(layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::shape(pair[0].outputs(), pair[1].inputs()));
            }
        }
        Ok(DenseNet { layers })
    }

    /// Glorot-uniform weights and zero biases. `dims` lists every width from
    /// input to output; `acts` has one entry per layer.
    pub fn glorot(dims: &[usize], acts: &[Activation], seed: u64) -> Result<Self> {
        if dims.len() != acts.len() + 1 || acts.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{} widths for {} activations",
                dims.len(),
                acts.len()
            )));
        }
        let mut rng = seed::rng(seed);
        let layers = dims
            .windows(2)
            .zip(acts)
            .map(|(d, &act)| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight = Array2::from_shape_simple_fn((fan_out, fan_in), || T::of(rng.gen_range(-limit..limit)));
                Layer {
                    weight,
                    bias: Array1::zeros(fan_out),
                    activation: act,
                }
            })
            .collect();
        DenseNet::from_layers(layers)
    }

    pub fn zeros_like(&self) -> Self {
        DenseNet {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                    activation: l.activation,
                })
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn check_input(&self, x: &ArrayView2<T>) -> Result<()> {
        if x.ncols() != self.input_width() {
            return Err(Error::shape(self.input_width(), x.ncols()));
        }
        Ok(())
    }

    fn affine(layer: &Layer<T>, x: &ArrayView2<T>) -> Array2<T> {
        let mut z = x.dot(&layer.weight.t());
        z += &layer.bias;
        z
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_input(&x)?;
        let act0 = self.layers[0].activation;
        let mut h = Self::affine(&self.layers[0], &x);
        h.mapv_inplace(|v| act0.apply(v));
        for layer in &self.layers[1..] {
            let mut z = Self::affine(layer, &h.view());
            let act = layer.activation;
            z.mapv_inplace(|v| act.apply(v));
            h = z;
        }
        Ok(h)
    }

    pub fn forward_tape(&self, x: ArrayView2<T>) -> Result<(Array2<T>, GradTape<T>)> {
        self.check_input(&x)?;
        let n = self.layers.len();
        let mut tape = GradTape {
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            outputs: Vec::with_capacity(n),
        };
        let mut input = x.to_owned();
        for layer in &self.layers {
            let z = Self::affine(layer, &input.view());
            let act = layer.activation;
            let y = z.mapv(|v| act.apply(v));
            tape.inputs.push(input);
            tape.pre.push(z);
            input = y.clone();
            tape.outputs.push(y);
        }
        Ok((input, tape))
    }

    /// Parameter gradients and the gradient with respect to the batch input.
    pub fn backward(&self, tape: GradTape<T>, upstream: ArrayView2<T>) -> Result<(Gradients<T>, Array2<T>)> {
        let last = tape
            .outputs
            .last()
            .ok_or_else(|| Error::InvalidArgument("empty tape".into()))?;
        if upstream.raw_dim() != last.raw_dim() {
            return Err(Error::shape(format!("{:?}", last.dim()), format!("{:?}", upstream.dim())));
        }
        let n = self.layers.len();
        let mut gw = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        let mut delta = upstream.to_owned();
        let GradTape { inputs, pre, outputs } = tape;
        for (((layer, x), z), y) in self.layers.iter().zip(inputs).zip(pre).zip(outputs).rev() {
            let act = layer.activation;
            Zip::from(&mut delta)
                .and(&z)
                .and(&y)
                .for_each(|d, &z, &y| *d *= act.derivative(z, y));
            gw.push(delta.t().dot(&x));
            gb.push(delta.sum_axis(Axis(0)));
            delta = delta.dot(&layer.weight);
        }
        gw.reverse();
        gb.reverse();
        Ok((Gradients { weight: gw, bias: gb }, delta))
    }

    pub fn gradients_zero(&self) -> Gradients<T> {
        Gradients {
            weight: self.layers.iter().map(|l| Array2::zeros(l.weight.raw_dim())).collect(),
            bias: self.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
        }
    }

    /// All parameters in checkpoint order: per layer, weights row-major then bias.
    pub fn flat_params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weight.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    pub fn set_flat_params(&mut self, p: &[T]) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(Error::shape(self.param_count(), p.len()));
        }
        let mut it = p.iter().copied();
        for l in &mut self.layers {
            l.weight
                .iter_mut()
                .chain(l.bias.iter_mut())
                .for_each(|v| *v = it.next().unwrap());
        }
        Ok(())
    }

    /// Rounds every parameter to the nearest `f32`, so a checkpoint reload
    /// reproduces this network exactly.
    pub fn round_to_f32(&mut self) {
        for l in &mut self.layers {
            l.weight
                .iter_mut()
                .chain(l.bias.iter_mut())
                .for_each(|v| *v = T::of(v.f64() as f32 as f64));
        }
    }

    pub fn cast<U: Real>(&self) -> DenseNet<U> {
        DenseNet {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: l.weight.mapv(|v| U::of(v.f64())),
                    bias: l.bias.mapv(|v| U::of(v.f64())),
                    activation: l.activation,
                })
                .collect(),
        }
    }

    /// Hash of the parameter bit patterns at `f32` precision.
    pub fn fingerprint(&self) -> u64 {
        self.flat_params()
            .iter()
            .fold(0x243F_6A88_85A3_08D3, |h, v| seed::mix(h ^ (v.f64() as f32).to_bits() as u64))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for l in &self.layers {
            let (tag, param) = l.activation.tag();
            for v in [l.inputs() as u32, l.outputs() as u32, tag] {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&param.to_le_bytes())?;
        }
        for v in self.flat_params() {
            w.write_all(&(v.f64() as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a network checkpoint".into()));
        }
        let n = read_u32(&mut r)? as usize;
        if n == 0 || n > 1024 {
            return Err(Error::Format(format!("implausible layer count {n}")));
        }
        let mut shapes = Vec::with_capacity(n);
        for _ in 0..n {
            let (i, o, tag) = (read_u32(&mut r)?, read_u32(&mut r)?, read_u32(&mut r)?);
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            let param = f64::from_le_bytes(b);
            shapes.push((i as usize, o as usize, Activation::from_tag(tag, param)?));
        }
        let mut layers = Vec::with_capacity(n);
        for (i, o, act) in shapes {
            let mut read =
                |len: usize| -> Result<Vec<T>> { (0..len).map(|_| read_f32(&mut r).map(|v| T::of(v as f64))).collect() };
            let weight = Array2::from_shape_vec((o, i), read(o * i)?).map_err(|e| Error::Format(e.to_string()))?;
            let bias = Array1::from_vec(read(o)?);
            layers.push(Layer::new(weight, bias, act)?);
        }
        DenseNet::from_layers(layers)
    }
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f32<R: Read>(r: &mut R) -> Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

impl<T: Real> Gradients<T> {
    pub fn scale(&mut self, s: T) {
        self.weight.iter_mut().for_each(|w| w.mapv_inplace(|v| v * s));
        self.bias.iter_mut().for_each(|b| b.mapv_inplace(|v| v * s));
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }

    pub fn flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        for (w, b) in self.weight.iter().zip(&self.bias) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.flat().iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.flat().iter().all(|v| v.is_finite())
    }
}

/// Plain gradient step `w − lr·g`, returned as a new network.
pub fn sgd_step<T: Real>(net: &DenseNet<T>, grads: &Gradients<T>, lr: T) -> DenseNet<T> {
    let mut out = net.clone();
    for ((l, gw), gb) in out.layers.iter_mut().zip(&grads.weight).zip(&grads.bias) {
        l.weight.scaled_add(-lr, gw);
        l.bias.scaled_add(-lr, gb);
    }
    out
}

/// Heavy-ball momentum: `v ← μv + g`, `w ← w − lr·v`.
#[derive(Debug, Clone)]
pub struct Momentum<T> {
    pub lr: T,
    pub mu: T,
    velocity: Option<Vec<T>>,
}

impl<T: Real> Momentum<T> {
    pub fn new(lr: T, mu: T) -> Self {
        Momentum { lr, mu, velocity: None }
    }

    pub fn step(&mut self, net: &mut DenseNet<T>, grads: &Gradients<T>) {
        let g = grads.flat();
        let v = self.velocity.get_or_insert_with(|| vec![T::zero(); g.len()]);
        let mut p = net.flat_params();
        for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(&g) {
            *v = self.mu * *v + *g;
            *p -= self.lr * *v;
        }
        net.set_flat_params(&p).expect("gradient shape matches network");
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: i32,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: T) -> Self {
        Adam {
            lr,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// One bias-corrected update of the flat parameter vector `p`.
    pub fn update(&mut self, p: &mut [T], g: &[T]) {
        if self.m.len() != p.len() {
            self.m = vec![T::zero(); p.len()];
            self.v = vec![T::zero(); p.len()];
            self.step = 0;
        }
        self.step += 1;
        let c1 = T::one() - self.beta1.powi(self.step);
        let c2 = T::one() - self.beta2.powi(self.step);
        for i in 0..p.len() {
            self.m[i] = self.beta1 * self.m[i] + (T::one() - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (T::one() - self.beta2) * g[i] * g[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            p[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }

    pub fn step(&mut self, net: &mut DenseNet<T>, grads: &Gradients<T>) {
        let mut p = net.flat_params();
        self.update(&mut p, &grads.flat());
        net.set_flat_params(&p).expect("gradient shape matches network");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn naive_forward(net: &DenseNet<f64>, x: &Array2<f64>) -> Array2<f64> {
        let mut h = x.clone();
        for l in net.layers() {
            let mut out = Array2::zeros((h.nrows(), l.outputs()));
            for r in 0..h.nrows() {
                for o in 0..l.outputs() {
                    let mut acc = l.bias[o];
                    for i in 0..l.inputs() {
                        acc += h[[r, i]] * l.weight[[o, i]];
                    }
                    out[[r, o]] = l.activation.apply(acc);
                }
            }
            h = out;
        }
        h
    }

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = seed::rng(seed);
        Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn identity_layer_is_identity() {
        let net = DenseNet::from_layers(vec![Layer::new(Array2::eye(3), Array1::zeros(3), Activation::Linear).unwrap()]).unwrap();
        let x = random_batch(4, 3, 1);
        assert_eq!(net.forward(x.view()).unwrap(), x);
    }

    #[test]
    fn zero_relu_is_zero() {
        let net = DenseNet::<f64>::glorot(&[3, 2], &[Activation::Relu], 0).unwrap().zeros_like();
        let y = net.forward(random_batch(5, 3, 2).view()).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_matches_naive_loops() {
        let net = DenseNet::<f64>::glorot(&[5, 7, 3], &[Activation::Tanh, Activation::Sigmoid], 4).unwrap();
        let x = random_batch(6, 5, 5);
        let a = net.forward(x.view()).unwrap();
        let b = naive_forward(&net, &x);
        assert!(a.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-13));
        assert!(net.forward(random_batch(2, 4, 0).view()).is_err());
    }

    #[test]
    fn linear_squared_loss_closed_form() {
        let net = DenseNet::<f64>::glorot(&[3, 2], &[Activation::Linear], 9).unwrap();
        let x = random_batch(8, 3, 1);
        let y = random_batch(8, 2, 2);
        let (out, tape) = net.forward_tape(x.view()).unwrap();
        let up = (&out - &y) * (2.0 / 8.0);
        let (g, _) = net.backward(tape, up.view()).unwrap();
        // dL/dW = 2/n (XW^T + b - Y)^T X
        let resid = &out - &y;
        let want = resid.t().dot(&x) * (2.0 / 8.0);
        assert!(g.weight[0].iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-13));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = DenseNet::<f64>::glorot(&[3, 4, 2], &[Activation::Relu, Activation::Linear], 3).unwrap();
        let (out, tape) = net.forward_tape(random_batch(3, 3, 0).view()).unwrap();
        let (g, dx) = net.backward(tape, Array2::zeros(out.raw_dim()).view()).unwrap();
        assert!(g.flat().iter().chain(dx.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut net = DenseNet::<f64>::glorot(&[4, 6, 3], &[Activation::Prelu(0.25), Activation::Sigmoid], 11).unwrap();
        net.round_to_f32();
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        let back = DenseNet::<f64>::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.fingerprint(), net.fingerprint());
        buf[0] = b'X';
        assert!(DenseNet::<f64>::read_from(buf.as_slice()).is_err());
    }

    #[test]
    fn sgd_scalar_and_zero_lr() {
        let net = DenseNet::from_layers(vec![Layer::new(array![[2.0]], array![0.0], Activation::Linear).unwrap()]).unwrap();
        let g = Gradients {
            weight: vec![array![[0.5]]],
            bias: vec![array![1.0]],
        };
        assert_eq!(sgd_step(&net, &g, 0.0), net);
        let n2 = sgd_step(&net, &g, 0.1);
        assert_eq!(n2.layers()[0].weight[[0, 0]], 2.0 - 0.1 * 0.5);
        assert_eq!(n2.layers()[0].bias[0], -0.1);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut adam = Adam::new(1e-3);
        let mut p = vec![1.0, 1.0, 1.0];
        let g: [f64; 3] = [4.0, -0.25, 1e-3];
        adam.update(&mut p, &g);
        for (p, g) in p.iter().zip(g) {
            let want = 1.0 - 1e-3 * g / (g.abs() + 1e-8);
            assert!((p - want).abs() < 1e-15);
        }
    }
}
