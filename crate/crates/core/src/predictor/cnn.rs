//! A small 3D CNN over polar patches with hand-written backpropagation.
//!
//! Activations are laid out `[channel][slice][angle][radius]`. The input
//! patch is standardized to zero mean and unit variance unless configured
//! otherwise. Every layer
//! convolves with circular padding along the angle axis, zero "same" padding
//! along the radius axis, and "valid" padding along the slice axis while the
//! remaining depth allows the full slice kernel (7 → 5 → 3 → 1, then 1×).
//! After the last layer the activations are summed over radius and averaged
//! over slices, and a per-angle linear head maps the channels to two outputs
//! passed through softplus. Because every operation treats all angles the
//! same way, the deterministic network commutes with cyclic angle shifts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{cast, Real};
use crate::polar::{ContourPair, PolarPatch, N_RADII, N_SLICES};

/// Scale of the He-uniform perturbation added to the identity kernels of layers after the first.
const IDENTITY_NOISE: f64 = 0.1;
/// Smallest value a softplus output is allowed to take.
const MIN_OUTPUT: f64 = 1e-6;
/// Standard deviation below which a patch counts as constant and is only centered.
const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// ReLU between layers and softplus on the outputs.
    #[default]
    Relu,
    /// No nonlinearity anywhere; only useful for gradient checks.
    Identity,
}

/// Normalization applied to each patch before the first layer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputNorm {
    /// Intensities as sampled.
    None,
    /// Zero mean and unit variance per patch, which makes the network blind
    /// to global contrast changes.
    #[default]
    Standardize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CnnConfig {
    pub n_layers: usize,
    pub channels: usize,
    /// Kernel extent along `(slice, angle, radius)`.
    pub kernel: [usize; 3],
    pub dropout: f64,
    pub activation: Activation,
    pub input_norm: InputNorm,
    /// Network output `(lumen radius, wall width)` at initialization.
    pub output_prior: [f64; 2],
    pub init_seed: u64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            n_layers: 8,
            channels: 4,
            kernel: [3, 3, 5],
            dropout: 0.2,
            activation: Activation::Relu,
            input_norm: InputNorm::Standardize,
            output_prior: [6.0, 3.5],
            init_seed: 7,
        }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_layers == 0 || self.channels == 0 {
            return bad("network needs at least one layer and one channel".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout rate {} outside [0, 1)", self.dropout));
        }
        if self.kernel.iter().any(|&k| k % 2 == 0) {
            return bad(format!("kernel sizes must be odd, got {:?}", self.kernel));
        }
        if self.output_prior.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return bad("output_prior must be positive".into());
        }
        Ok(())
    }
}

/// How dropout masks are drawn during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictMode {
    Deterministic,
    /// Monte Carlo dropout with masks drawn from `seed`.
    Dropout { seed: u64 },
}

/// Activation tensor `[c][d][a][r]`.
#[derive(Debug, Clone)]
pub(crate) struct Tensor<T> {
    c: usize,
    d: usize,
    a: usize,
    r: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    fn zeros(c: usize, d: usize, a: usize, r: usize) -> Self {
        Self { c, d, a, r, data: vec![T::zero(); c * d * a * r] }
    }

    #[inline]
    fn offset(&self, c: usize, z: usize, a: usize) -> usize {
        ((c * self.d + z) * self.a + a) * self.r
    }

    #[inline]
    fn row(&self, c: usize, z: usize, a: usize) -> &[T] {
        let o = self.offset(c, z, a);
        &self.data[o..o + self.r]
    }

    #[inline]
    fn row_mut(&mut self, c: usize, z: usize, a: usize) -> &mut [T] {
        let o = self.offset(c, z, a);
        &mut self.data[o..o + self.r]
    }

    fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.d * self.a * self.r;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Reorders a patch from `(angle, radius, slice)` into a one-channel tensor.
    fn from_patch(p: &PolarPatch<T>) -> Self {
        let [na, nr, ns] = p.shape();
        let mut t = Self::zeros(1, ns, na, nr);
        for a in 0..na {
            for k in 0..nr {
                for s in 0..ns {
                    let o = t.offset(0, s, a) + k;
                    t.data[o] = p.get(a, k, s);
                }
            }
        }
        t
    }

    /// Standardizes a single-channel tensor in place. Sums run per angle row
    /// and the row sums are added in sorted order, so the result does not
    /// depend on a cyclic shift of the angles.
    fn standardize(&mut self) {
        debug_assert_eq!(self.c, 1);
        let n = self.data.len() as f64;
        let row_sums = |f: &dyn Fn(f64) -> f64| -> f64 {
            let mut rows: Vec<f64> = (0..self.a)
                .map(|a| (0..self.d).map(|z| self.row(0, z, a).iter().map(|v| f(v.to_f64().unwrap())).sum::<f64>()).sum())
                .collect();
            rows.sort_by(f64::total_cmp);
            rows.iter().sum()
        };
        let mean = row_sums(&|v| v) / n;
        let var = row_sums(&|v| (v - mean) * (v - mean)) / n;
        let inv_std = 1.0 / var.sqrt().max(STD_FLOOR);
        for v in &mut self.data {
            *v = T::of((v.to_f64().unwrap() - mean) * inv_std);
        }
    }
}

#[inline]
fn axpy<T: Real>(w: T, x: &[T], y: &mut [T]) {
    for (d, &s) in y.iter_mut().zip(x) {
        *d += w * s;
    }
}

#[inline]
fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (xc, yc) = (x.chunks_exact(8), y.chunks_exact(8));
    let tail: T = xc.remainder().iter().zip(yc.remainder()).map(|(&a, &b)| a * b).sum();
    for (a, b) in xc.zip(yc) {
        for l in 0..8 {
            acc[l] += a[l] * b[l];
        }
    }
    acc.iter().copied().sum::<T>() + tail
}

/// One convolution with weight shape `[co, ci, ks, ka, kr]` and `co` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T> {
    shape: [usize; 5],
    weights: Vec<T>,
    bias: Vec<T>,
}

impl<T: Real> Conv<T> {
    pub fn new(shape: [usize; 5], weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.contains(&0) || shape[2..].iter().any(|k| k % 2 == 0) {
            return Err(Error::Format(format!("invalid convolution shape {shape:?}")));
        }
        if weights.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: weights.len() });
        }
        if bias.len() != shape[0] {
            return Err(Error::DimensionMismatch { expected: shape[0], found: bias.len() });
        }
        Ok(Self { shape, weights, bias })
    }

    fn zeros(shape: [usize; 5]) -> Self {
        Self { shape, weights: vec![T::zero(); shape.iter().product()], bias: vec![T::zero(); shape[0]] }
    }

    pub fn shape(&self) -> [usize; 5] {
        self.shape
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    fn cast<U: Real>(&self) -> Conv<U> {
        Conv {
            shape: self.shape,
            weights: self.weights.iter().map(|&w| cast(w)).collect(),
            bias: self.bias.iter().map(|&b| cast(b)).collect(),
        }
    }

    /// Calls `f(tap, output_range, input_range)` for every radial tap, with ranges clipped to the zero padding.
    #[inline]
    fn taps(&self, nr: usize, mut f: impl FnMut(usize, std::ops::Range<usize>, std::ops::Range<usize>)) {
        let kr = self.shape[4];
        for dr in 0..kr {
            let off = dr as isize - (kr / 2) as isize;
            let lo = (-off).max(0) as usize;
            let hi = (nr as isize - off).clamp(0, nr as isize) as usize;
            if lo < hi {
                let src = (lo as isize + off) as usize..(hi as isize + off) as usize;
                f(dr, lo..hi, src);
            }
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let [co, ci, ks, ka, _] = self.shape;
        debug_assert_eq!(x.c, ci);
        let (na, nr) = (x.a, x.r);
        let depth = x.d + 1 - ks;
        let mut y = Tensor::zeros(co, depth, na, nr);
        for o in 0..co {
            y.channel_mut(o).fill(self.bias[o]);
            for i in 0..ci {
                for dz in 0..ks {
                    for da in 0..ka {
                        let base = (((o * ci + i) * ks + dz) * ka + da) * self.shape[4];
                        self.taps(nr, |dr, dst, src| {
                            let w = self.weights[base + dr];
                            for z in 0..depth {
                                for a in 0..na {
                                    let sa = (a + da + na * ka - ka / 2) % na;
                                    let xs = &x.row(i, z + dz, sa)[src.clone()];
                                    axpy(w, xs, &mut y.row_mut(o, z, a)[dst.clone()]);
                                }
                            }
                        });
                    }
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and, if given, the input gradient into `gx`.
    fn backward(&self, x: &Tensor<T>, gy: &Tensor<T>, grad: &mut Conv<T>, mut gx: Option<&mut Tensor<T>>) {
        let [co, ci, ks, ka, _] = self.shape;
        let (na, nr, depth) = (x.a, x.r, gy.d);
        for o in 0..co {
            let n = depth * na * nr;
            grad.bias[o] += gy.data[o * n..(o + 1) * n].iter().copied().sum::<T>();
            for i in 0..ci {
                for dz in 0..ks {
                    for da in 0..ka {
                        let base = (((o * ci + i) * ks + dz) * ka + da) * self.shape[4];
                        self.taps(nr, |dr, dst, src| {
                            let w = self.weights[base + dr];
                            let mut gw = T::zero();
                            for z in 0..depth {
                                for a in 0..na {
                                    let sa = (a + da + na * ka - ka / 2) % na;
                                    let g = &gy.row(o, z, a)[dst.clone()];
                                    gw += dot(g, &x.row(i, z + dz, sa)[src.clone()]);
                                    if let Some(gx) = gx.as_deref_mut() {
                                        axpy(w, g, &mut gx.row_mut(i, z + dz, sa)[src.clone()]);
                                    }
                                }
                            }
                            grad.weights[base + dr] += gw;
                        });
                    }
                }
            }
        }
    }
}

/// Intermediate values kept by a training forward pass.
struct Trace<T> {
    /// Input of every convolution (after the previous activation and dropout).
    inputs: Vec<Tensor<T>>,
    /// Pre-activation output of every convolution.
    pre: Vec<Tensor<T>>,
    masks: Vec<Option<Vec<T>>>,
    pooled: Tensor<T>,
    /// Head output before softplus, `[output][angle]`.
    logits: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    layers: Vec<Conv<T>>,
    head: Conv<T>,
    dropout: f64,
    activation: Activation,
    input_norm: InputNorm,
    input_slices: usize,
}

/// Slice kernel extent of each layer for an input of `depth` slices.
fn slice_kernels(n_layers: usize, kernel: usize, mut depth: usize) -> Vec<usize> {
    (0..n_layers)
        .map(|_| {
            let k = if depth >= kernel { kernel } else { 1 };
            depth = depth + 1 - k;
            k
        })
        .collect()
}

fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

#[inline]
fn softplus<T: Real>(y: T) -> T {
    let out = y.max(T::zero()) + (-y.abs()).exp().ln_1p();
    out.max(T::of(MIN_OUTPUT))
}

#[inline]
fn sigmoid<T: Real>(y: T) -> T {
    T::one() / (T::one() + (-y).exp())
}

impl<T: Real> Network<T> {
    /// Randomly initialized network for patches with `radii × slices` samples per ray.
    ///
    /// Convolutions use He-uniform weights; the head is scaled down by the
    /// number of radial samples it sums over and its bias is set so that the
    /// untrained outputs equal `cfg.output_prior`.
    pub fn new(cfg: &CnnConfig, radii: usize, slices: usize) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let c = cfg.channels;
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for (l, ks) in slice_kernels(cfg.n_layers, cfg.kernel[0], slices).into_iter().enumerate() {
            let ci = if l == 0 { 1 } else { c };
            let shape = [c, ci, ks, cfg.kernel[1], cfg.kernel[2]];
            let fan_in = (ci * ks * cfg.kernel[1] * cfg.kernel[2]) as f64;
            let bound = (6.0 / fan_in).sqrt() * if l == 0 { 1.0 } else { IDENTITY_NOISE };
            let mut weights: Vec<T> = (0..shape.iter().product::<usize>())
                .map(|_| T::of(rng.random_range(-bound..bound)))
                .collect();
            if l > 0 {
                let [_, _, ks, ka, kr] = shape;
                for o in 0..c {
                    weights[(((o * c + o) * ks + ks / 2) * ka + ka / 2) * kr + kr / 2] += T::one();
                }
            }
            layers.push(Conv::new(shape, weights, vec![T::zero(); c])?);
        }
        let bound = 1.0 / ((c as f64).sqrt() * radii as f64);
        let head_w = (0..2 * c).map(|_| T::of(rng.random_range(-bound..bound))).collect();
        let head_b = cfg
            .output_prior
            .iter()
            .map(|&p| T::of(if cfg.activation == Activation::Relu { inverse_softplus(p) } else { p }))
            .collect();
        let head = Conv::new([2, c, 1, 1, 1], head_w, head_b)?;
        Ok(Self {
            layers,
            head,
            dropout: cfg.dropout,
            activation: cfg.activation,
            input_norm: cfg.input_norm,
            input_slices: slices,
        })
    }

    /// Assembles a network from stored layers, checking that they chain.
    pub fn from_parts(layers: Vec<Conv<T>>, head: Conv<T>, cfg: &CnnConfig, input_slices: usize) -> Result<Self> {
        cfg.validate()?;
        let bad = |m: String| Err(Error::Format(m));
        if layers.is_empty() {
            return bad("network has no convolution layers".into());
        }
        let mut depth = input_slices;
        let mut channels = 1;
        for (l, conv) in layers.iter().enumerate() {
            let [co, ci, ks, _, _] = conv.shape;
            if ci != channels {
                return bad(format!("layer {l} expects {ci} input channels, previous layer gives {channels}"));
            }
            let expected = if depth >= cfg.kernel[0] { cfg.kernel[0] } else { 1 };
            if ks != expected {
                return bad(format!("layer {l} has slice kernel {ks}, expected {expected}"));
            }
            depth = depth + 1 - ks;
            channels = co;
        }
        if head.shape != [2, channels, 1, 1, 1] {
            return bad(format!("head shape {:?} does not match {channels} channels", head.shape));
        }
        Ok(Self {
            layers,
            head,
            dropout: cfg.dropout,
            activation: cfg.activation,
            input_norm: cfg.input_norm,
            input_slices,
        })
    }

    pub fn layers(&self) -> &[Conv<T>] {
        &self.layers
    }

    pub fn head(&self) -> &Conv<T> {
        &self.head
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn set_dropout(&mut self, p: f64) -> Result<()> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidConfig(format!("dropout rate {p} outside [0, 1)")));
        }
        self.dropout = p;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            layers: self.layers.iter().map(Conv::cast).collect(),
            head: self.head.cast(),
            dropout: self.dropout,
            activation: self.activation,
            input_norm: self.input_norm,
            input_slices: self.input_slices,
        }
    }

    /// Network of the same shape with every parameter zero; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|c| Conv::zeros(c.shape)).collect(),
            head: Conv::zeros(self.head.shape),
            ..self.clone()
        }
    }

    pub fn n_params(&self) -> usize {
        self.params().map(<[T]>::len).sum()
    }

    /// Parameter blocks in a fixed order: per layer weights then bias, head last.
    pub fn params(&self) -> impl Iterator<Item = &[T]> {
        self.layers
            .iter()
            .chain(std::iter::once(&self.head))
            .flat_map(|c| [c.weights.as_slice(), c.bias.as_slice()])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut [T]> {
        self.layers
            .iter_mut()
            .chain(std::iter::once(&mut self.head))
            .flat_map(|c| [c.weights.as_mut_slice(), c.bias.as_mut_slice()])
    }

    /// Human-readable name of flat parameter `index` in [`Network::params`] order.
    pub fn param_name(&self, mut index: usize) -> String {
        for (l, conv) in self.layers.iter().chain(std::iter::once(&self.head)).enumerate() {
            let layer = if l == self.layers.len() { "head".to_string() } else { format!("layer{l}") };
            for (kind, len) in [("weight", conv.weights.len()), ("bias", conv.bias.len())] {
                if index < len {
                    return format!("{layer}.{kind}[{index}]");
                }
                index -= len;
            }
        }
        format!("param[{index}]")
    }

    fn check_input(&self, p: &PolarPatch<T>) -> Result<()> {
        let shape = p.shape();
        if shape[2] != self.input_slices || shape[0] == 0 || shape[1] == 0 {
            return Err(Error::ShapeMismatch { expected: [shape[0], shape[1], self.input_slices], found: shape });
        }
        Ok(())
    }

    fn forward_trace(&self, p: &PolarPatch<T>, mut rng: Option<&mut ChaCha8Rng>) -> Trace<T> {
        let keep = 1.0 - self.dropout;
        let scale = T::of(1.0 / keep);
        let n = self.layers.len();
        let mut h = Tensor::from_patch(p);
        if self.input_norm == InputNorm::Standardize {
            h.standardize();
        }
        let mut trace = Trace {
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            masks: Vec::with_capacity(n),
            pooled: Tensor::zeros(0, 0, 0, 0),
            logits: Vec::new(),
        };
        for (l, conv) in self.layers.iter().enumerate() {
            let z = conv.forward(&h);
            let mut out = z.clone();
            if self.activation == Activation::Relu {
                for v in &mut out.data {
                    *v = v.max(T::zero());
                }
            }
            let mask = match rng.as_deref_mut() {
                Some(rng) if l + 1 < n && self.dropout > 0.0 => {
                    let m: Vec<T> = (0..out.data.len())
                        .map(|_| if rng.random::<f64>() < keep { scale } else { T::zero() })
                        .collect();
                    for (v, &k) in out.data.iter_mut().zip(&m) {
                        *v *= k;
                    }
                    Some(m)
                }
                _ => None,
            };
            trace.inputs.push(std::mem::replace(&mut h, out));
            trace.pre.push(z);
            trace.masks.push(mask);
        }
        let inv_depth = T::one() / T::of(h.d as f64);
        let mut pooled = Tensor::zeros(h.c, 1, h.a, 1);
        for c in 0..h.c {
            for a in 0..h.a {
                let s: T = (0..h.d).map(|z| h.row(c, z, a).iter().copied().sum::<T>()).sum();
                pooled.data[c * h.a + a] = s * inv_depth;
            }
        }
        trace.inputs.push(h);
        trace.logits = self.head.forward(&pooled).data;
        trace.pooled = pooled;
        trace
    }

    fn outputs(&self, logits: &[T]) -> Vec<T> {
        match self.activation {
            Activation::Relu => logits.iter().map(|&y| softplus(y)).collect(),
            Activation::Identity => logits.to_vec(),
        }
    }

    /// Raw outputs `[radii..., widths...]` for any patch with the configured depth.
    pub fn forward(&self, p: &PolarPatch<T>, mode: PredictMode) -> Result<Vec<T>> {
        self.check_input(p)?;
        let trace = match mode {
            PredictMode::Deterministic => self.forward_trace(p, None),
            PredictMode::Dropout { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                self.forward_trace(p, Some(&mut rng))
            }
        };
        Ok(self.outputs(&trace.logits))
    }

    /// Predicts a contour pair; the patch must have the canonical 31×127×7 shape.
    pub fn predict(&self, p: &PolarPatch<T>, mode: PredictMode) -> Result<ContourPair<T>> {
        p.ensure_canonical()?;
        let out = self.forward(p, mode)?;
        let (radii, widths) = out.split_at(out.len() / 2);
        ContourPair::new(p.center(), radii.to_vec(), widths.to_vec())
    }

    /// Mean squared error against `target = [radii..., widths...]`, adding its
    /// gradient to `grad`. Dropout is active when `rng` is given.
    pub fn loss_and_grad(
        &self,
        p: &PolarPatch<T>,
        target: &[T],
        rng: Option<&mut ChaCha8Rng>,
        grad: &mut Network<T>,
    ) -> Result<T> {
        self.check_input(p)?;
        let trace = self.forward_trace(p, rng);
        if target.len() != trace.logits.len() {
            return Err(Error::DimensionMismatch { expected: trace.logits.len(), found: target.len() });
        }
        let out = self.outputs(&trace.logits);
        let n = T::of(out.len() as f64);
        let loss = out.iter().zip(target).map(|(&o, &t)| (o - t) * (o - t)).sum::<T>() / n;
        self.backward(&trace, &out, target, grad);
        Ok(loss)
    }

    fn backward(&self, trace: &Trace<T>, out: &[T], target: &[T], grad: &mut Network<T>) {
        let two_over_n = T::of(2.0 / out.len() as f64);
        let mut g_logits = Tensor::zeros(2, 1, out.len() / 2, 1);
        for (j, ((&o, &t), &y)) in out.iter().zip(target).zip(&trace.logits).enumerate() {
            let d = two_over_n * (o - t);
            g_logits.data[j] = match self.activation {
                Activation::Relu => d * sigmoid(y),
                Activation::Identity => d,
            };
        }
        let last = trace.inputs.last().expect("trace has the final activation");
        let mut g_pooled = Tensor::zeros(self.head.shape[1], 1, last.a, 1);
        self.head.backward(&trace.pooled, &g_logits, &mut grad.head, Some(&mut g_pooled));

        let inv_depth = T::one() / T::of(last.d as f64);
        let mut g = Tensor::zeros(last.c, last.d, last.a, last.r);
        for c in 0..last.c {
            for a in 0..last.a {
                let v = g_pooled.data[c * last.a + a] * inv_depth;
                for z in 0..last.d {
                    g.row_mut(c, z, a).fill(v);
                }
            }
        }
        for l in (0..self.layers.len()).rev() {
            if let Some(mask) = &trace.masks[l] {
                for (v, &m) in g.data.iter_mut().zip(mask) {
                    *v *= m;
                }
            }
            if self.activation == Activation::Relu {
                for (v, &z) in g.data.iter_mut().zip(&trace.pre[l].data) {
                    if z <= T::zero() {
                        *v = T::zero();
                    }
                }
            }
            let x = &trace.inputs[l];
            let mut gx = (l > 0).then(|| Tensor::zeros(x.c, x.d, x.a, x.r));
            self.layers[l].backward(x, &g, &mut grad.layers[l], gx.as_mut());
            if let Some(gx) = gx {
                g = gx;
            }
        }
    }

    /// Sign pattern of every ReLU pre-activation in a deterministic pass.
    pub(crate) fn relu_pattern(&self, p: &PolarPatch<T>) -> Vec<bool> {
        if self.activation == Activation::Identity {
            return Vec::new();
        }
        let trace = self.forward_trace(p, None);
        trace.pre.iter().flat_map(|t| t.data.iter().map(|&v| v > T::zero())).collect()
    }
}

impl Network<f32> {
    /// Default-sized network for canonical patches.
    pub fn canonical(cfg: &CnnConfig) -> Result<Self> {
        Network::new(cfg, N_RADII, N_SLICES)
    }
}
