//! A small stack of 3×3 same-padded convolutions with explicit backprop.
//!
//! Activations are stored channel-major as `[C, B, H, W]` so that every
//! convolution is a single GEMM between the `[C_out, C_in·9]` weight matrix
//! and the `[C_in·9, B·H·W]` unfolded input.

use std::fmt::Debug;

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2, LinalgScalar};
use num_traits::{Float, FromPrimitive};
use rand::Rng;

pub trait Real: Float + LinalgScalar + FromPrimitive + Debug + Send + Sync + 'static {}
impl Real for f32 {}
impl Real for f64 {}

const K: usize = 3;
const KK: usize = K * K;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

/// Spatial resampling applied after a layer's activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resample {
    None,
    MaxPool2,
    Upsample2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub activation: Activation,
    pub resample: Resample,
    /// `[out, in, 3, 3]` row-major.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvLayer<T> {
    fn fan_in(&self) -> usize {
        self.in_channels * KK
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Gradients laid out like the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Vec<T>>,
    pub bias: Vec<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    /// Logical image size.
    pub rows: usize,
    pub cols: usize,
    /// Zero-padded size, divisible by four.
    pub padded_rows: usize,
    pub padded_cols: usize,
    pub layers: Vec<ConvLayer<T>>,
}

struct LayerCache<T> {
    /// Unfolded input, or empty when the layer convolves directly.
    cols: Vec<T>,
    /// Layer input, kept only for direct convolutions.
    input: Vec<T>,
    activated: Vec<T>,
    argmax: Vec<u32>,
    height: usize,
    width: usize,
}

pub struct ForwardTrace<T> {
    caches: Vec<LayerCache<T>>,
    /// Final output in padded layout `[B, H, W]`.
    pub output: Vec<T>,
    pub batch: usize,
}

pub fn pad_to_four(n: usize) -> usize {
    n.div_ceil(4) * 4
}

impl<T: Real> Network<T> {
    /// Builds the encoder/decoder stack with the given channel widths and
    /// seeded He-uniform weights. `resamples` pairs with `channels`.
    pub fn new<R: Rng>(
        rows: usize,
        cols: usize,
        channels: &[usize],
        resamples: &[Resample],
        rng: &mut R,
    ) -> Self {
        assert_eq!(channels.len(), resamples.len());
        let mut layers = Vec::with_capacity(channels.len());
        let mut cin = 1;
        for (i, (&cout, &resample)) in channels.iter().zip(resamples).enumerate() {
            let activation = if i + 1 == channels.len() { Activation::Sigmoid } else { Activation::Relu };
            let fan_in = (cin * KK) as f64;
            let bound = match activation {
                Activation::Relu => (6.0 / fan_in).sqrt(),
                Activation::Sigmoid => (6.0 / (fan_in + (cout * KK) as f64)).sqrt(),
            };
            let weights = (0..cout * cin * KK)
                .map(|_| T::from_f64(rng.gen_range(-bound..bound)).unwrap())
                .collect();
            layers.push(ConvLayer {
                in_channels: cin,
                out_channels: cout,
                activation,
                resample,
                weights,
                bias: vec![T::zero(); cout],
            });
            cin = cout;
        }
        Self { rows, cols, padded_rows: pad_to_four(rows), padded_cols: pad_to_four(cols), layers }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(ConvLayer::parameter_count).sum()
    }

    /// Converts every parameter into another float type.
    pub fn cast<U: Real>(&self) -> Network<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64(x.to_f64().unwrap()).unwrap()).collect();
        Network {
            rows: self.rows,
            cols: self.cols,
            padded_rows: self.padded_rows,
            padded_cols: self.padded_cols,
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer {
                    in_channels: l.in_channels,
                    out_channels: l.out_channels,
                    activation: l.activation,
                    resample: l.resample,
                    weights: conv(&l.weights),
                    bias: conv(&l.bias),
                })
                .collect(),
        }
    }

    /// Copies logical `rows × cols` images (row-major each) into the padded input.
    pub fn pack_input(&self, images: &[&[f32]]) -> Vec<T> {
        let (h, w) = (self.padded_rows, self.padded_cols);
        let mut input = vec![T::zero(); images.len() * h * w];
        for (b, img) in images.iter().enumerate() {
            assert_eq!(img.len(), self.rows * self.cols, "image shape mismatch");
            for r in 0..self.rows {
                let dst = &mut input[(b * h + r) * w..(b * h + r) * w + self.cols];
                for (d, &s) in dst.iter_mut().zip(&img[r * self.cols..(r + 1) * self.cols]) {
                    *d = T::from_f32(s).unwrap();
                }
            }
        }
        input
    }

    /// Extracts image `b` of a padded output as a logical row-major grid.
    pub fn unpack_output(&self, output: &[T], b: usize) -> Vec<f32> {
        let (h, w) = (self.padded_rows, self.padded_cols);
        let mut img = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            let start = (b * h + r) * w;
            img.extend(output[start..start + self.cols].iter().map(|v| v.to_f32().unwrap()));
        }
        img
    }

    /// Runs the stack on a padded `[B, H, W]` input, keeping what backprop needs.
    pub fn forward(&self, input: &[T], batch: usize) -> ForwardTrace<T> {
        let (mut h, mut w) = (self.padded_rows, self.padded_cols);
        assert_eq!(input.len(), batch * h * w);
        let mut x = input.to_vec();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let n = batch * h * w;
            let mut z = vec![T::zero(); layer.out_channels * n];
            for (o, row) in z.chunks_mut(n).enumerate() {
                row.fill(layer.bias[o]);
            }
            let cols = if layer.out_channels == 1 {
                direct_conv_single(&x, &layer.weights, layer.in_channels, batch, h, w, &mut z);
                Vec::new()
            } else {
                let cols = im2col(&x, layer.in_channels, batch, h, w);
                gemm(
                    &layer.weights,
                    (layer.out_channels, layer.fan_in()),
                    false,
                    &cols,
                    (layer.fan_in(), n),
                    false,
                    &mut z,
                    T::one(),
                );
                cols
            };
            match layer.activation {
                Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(T::zero())),
                Activation::Sigmoid => z.iter_mut().for_each(|v| *v = sigmoid(*v)),
            }
            let (next, argmax, nh, nw) = match layer.resample {
                Resample::None => (z.clone(), Vec::new(), h, w),
                Resample::MaxPool2 => {
                    let (p, arg) = max_pool(&z, layer.out_channels * batch, h, w);
                    (p, arg, h / 2, w / 2)
                }
                Resample::Upsample2 => (upsample(&z, layer.out_channels * batch, h, w), Vec::new(), h * 2, w * 2),
            };
            let input = if layer.out_channels == 1 { std::mem::take(&mut x) } else { Vec::new() };
            caches.push(LayerCache { cols, input, activated: z, argmax, height: h, width: w });
            x = next;
            h = nh;
            w = nw;
        }
        assert_eq!((h, w), (self.padded_rows, self.padded_cols), "stack must restore the input size");
        ForwardTrace { caches, output: x, batch }
    }

    /// Mean squared reconstruction error over the logical region.
    pub fn mse(&self, input: &[T], output: &[T], batch: usize) -> T {
        let mut sum = T::zero();
        self.for_each_logical(batch, |i| {
            let d = output[i] - input[i];
            sum = sum + d * d;
        });
        sum / T::from_usize(batch * self.rows * self.cols).unwrap()
    }

    fn for_each_logical(&self, batch: usize, mut f: impl FnMut(usize)) {
        let (h, w) = (self.padded_rows, self.padded_cols);
        for b in 0..batch {
            for r in 0..self.rows {
                let start = (b * h + r) * w;
                (start..start + self.cols).for_each(&mut f);
            }
        }
    }

    /// Gradient of [`Network::mse`] with respect to every parameter.
    pub fn backward(&self, trace: &ForwardTrace<T>, input: &[T]) -> Gradients<T> {
        let batch = trace.batch;
        let scale = T::from_f64(2.0).unwrap() / T::from_usize(batch * self.rows * self.cols).unwrap();
        let mut grad = vec![T::zero(); trace.output.len()];
        self.for_each_logical(batch, |i| grad[i] = scale * (trace.output[i] - input[i]));

        let mut gw = vec![Vec::new(); self.layers.len()];
        let mut gb = vec![Vec::new(); self.layers.len()];
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let cache = &trace.caches[l];
            let (h, w) = (cache.height, cache.width);
            let planes = layer.out_channels * batch;
            let mut dz = match layer.resample {
                Resample::None => grad,
                Resample::MaxPool2 => max_pool_backward(&grad, &cache.argmax, planes * h * w),
                Resample::Upsample2 => upsample_backward(&grad, planes, h, w),
            };
            match layer.activation {
                Activation::Relu => {
                    for (d, &a) in dz.iter_mut().zip(&cache.activated) {
                        if a <= T::zero() {
                            *d = T::zero();
                        }
                    }
                }
                Activation::Sigmoid => {
                    for (d, &a) in dz.iter_mut().zip(&cache.activated) {
                        *d = *d * a * (T::one() - a);
                    }
                }
            }
            let n = batch * h * w;
            gb[l] = dz.chunks(n).map(|row| row.iter().fold(T::zero(), |s, &v| s + v)).collect();
            if layer.out_channels == 1 {
                let (dw, dx) = direct_conv_single_backward(&cache.input, &layer.weights, &dz, layer.in_channels, batch, h, w, l > 0);
                gw[l] = dw;
                grad = dx;
                continue;
            }
            let mut dw = vec![T::zero(); layer.weights.len()];
            gemm(&dz, (layer.out_channels, n), false, &cache.cols, (layer.fan_in(), n), true, &mut dw, T::zero());
            gw[l] = dw;
            if l > 0 {
                let mut dcols = vec![T::zero(); layer.fan_in() * n];
                gemm(
                    &layer.weights,
                    (layer.out_channels, layer.fan_in()),
                    true,
                    &dz,
                    (layer.out_channels, n),
                    false,
                    &mut dcols,
                    T::zero(),
                );
                grad = col2im(&dcols, layer.in_channels, batch, h, w);
            } else {
                grad = Vec::new();
            }
        }
        Gradients { weights: gw, bias: gb }
    }
}

fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// `c = op(a) · op(b) + beta · c` where `op` optionally transposes.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Real>(
    a: &[T],
    a_shape: (usize, usize),
    a_t: bool,
    b: &[T],
    b_shape: (usize, usize),
    b_t: bool,
    c: &mut [T],
    beta: T,
) {
    // single-row products are memory bound and matrixmultiply handles them poorly
    if !a_t && a_shape.0 == 1 {
        let beta_c = |c: &mut [T]| {
            if beta != T::one() {
                c.iter_mut().for_each(|v| *v = *v * beta);
            }
        };
        if !b_t {
            let n = b_shape.1;
            beta_c(c);
            for (k, &ak) in a.iter().enumerate() {
                for (cv, &bv) in c.iter_mut().zip(&b[k * n..(k + 1) * n]) {
                    *cv = *cv + ak * bv;
                }
            }
        } else {
            let n = b_shape.1;
            for (k, cv) in c.iter_mut().enumerate() {
                *cv = *cv * beta + dot(a, &b[k * n..(k + 1) * n]);
            }
        }
        return;
    }
    let a = ArrayView2::from_shape(a_shape, a).unwrap();
    let b = ArrayView2::from_shape(b_shape, b).unwrap();
    let a = if a_t { a.reversed_axes() } else { a };
    let b = if b_t { b.reversed_axes() } else { b };
    let mut c = ArrayViewMut2::from_shape((a.nrows(), b.ncols()), c).unwrap();
    general_mat_mul(T::one(), &a, &b, beta, &mut c);
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for (ca, cb) in a.chunks_exact(8).zip(b.chunks_exact(8)) {
        for i in 0..8 {
            acc[i] = acc[i] + ca[i] * cb[i];
        }
    }
    let mut total = acc.iter().fold(T::zero(), |s, &v| s + v);
    for (&x, &y) in a[chunks * 8..].iter().zip(&b[chunks * 8..]) {
        total = total + x * y;
    }
    total
}

/// Unfolds 3×3 same-padded neighbourhoods: row `c·9 + ky·3 + kx`, column `(b·H + y)·W + x`.
fn im2col<T: Real>(x: &[T], channels: usize, batch: usize, h: usize, w: usize) -> Vec<T> {
    let n = batch * h * w;
    let mut cols = vec![T::zero(); channels * KK * n];
    for c in 0..channels {
        for ky in 0..K {
            for kx in 0..K {
                let row = &mut cols[(c * KK + ky * K + kx) * n..][..n];
                for b in 0..batch {
                    for y in 0..h {
                        let sy = y + ky;
                        if sy < 1 || sy > h {
                            continue;
                        }
                        let src = &x[((c * batch + b) * h + sy - 1) * w..][..w];
                        let dst = &mut row[(b * h + y) * w..][..w];
                        match kx {
                            0 => dst[1..].copy_from_slice(&src[..w - 1]),
                            1 => dst.copy_from_slice(src),
                            _ => dst[..w - 1].copy_from_slice(&src[1..]),
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Rows of a shifted 3×3 tap: `(dst range, src range)` within one image row.
fn tap_ranges(kx: usize, w: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    match kx {
        0 => (1..w, 0..w - 1),
        1 => (0..w, 0..w),
        _ => (0..w - 1, 1..w),
    }
}

/// Same-padded convolution onto a single output channel without unfolding.
fn direct_conv_single<T: Real>(x: &[T], weights: &[T], channels: usize, batch: usize, h: usize, w: usize, z: &mut [T]) {
    for c in 0..channels {
        for ky in 0..K {
            for kx in 0..K {
                let wv = weights[c * KK + ky * K + kx];
                let (dr, sr) = tap_ranges(kx, w);
                for b in 0..batch {
                    for y in 0..h {
                        let sy = y + ky;
                        if sy < 1 || sy > h {
                            continue;
                        }
                        let src = &x[((c * batch + b) * h + sy - 1) * w..][..w];
                        let dst = &mut z[(b * h + y) * w..][..w];
                        for (d, &s) in dst[dr.clone()].iter_mut().zip(&src[sr.clone()]) {
                            *d = *d + wv * s;
                        }
                    }
                }
            }
        }
    }
}

/// Weight and input gradients of [`direct_conv_single`].
#[allow(clippy::too_many_arguments)]
fn direct_conv_single_backward<T: Real>(
    x: &[T],
    weights: &[T],
    dz: &[T],
    channels: usize,
    batch: usize,
    h: usize,
    w: usize,
    want_input: bool,
) -> (Vec<T>, Vec<T>) {
    let mut dw = vec![T::zero(); channels * KK];
    let mut dx = if want_input { vec![T::zero(); x.len()] } else { Vec::new() };
    for c in 0..channels {
        for ky in 0..K {
            for kx in 0..K {
                let tap = c * KK + ky * K + kx;
                let wv = weights[tap];
                let (dr, sr) = tap_ranges(kx, w);
                let mut acc = T::zero();
                for b in 0..batch {
                    for y in 0..h {
                        let sy = y + ky;
                        if sy < 1 || sy > h {
                            continue;
                        }
                        let at = ((c * batch + b) * h + sy - 1) * w;
                        let g = &dz[(b * h + y) * w..][..w];
                        acc = acc + dot(&g[dr.clone()], &x[at..at + w][sr.clone()]);
                        if want_input {
                            for (d, &gv) in dx[at..at + w][sr.clone()].iter_mut().zip(&g[dr.clone()]) {
                                *d = *d + wv * gv;
                            }
                        }
                    }
                }
                dw[tap] = acc;
            }
        }
    }
    (dw, dx)
}

/// Adjoint of [`im2col`].
fn col2im<T: Real>(cols: &[T], channels: usize, batch: usize, h: usize, w: usize) -> Vec<T> {
    let n = batch * h * w;
    let mut x = vec![T::zero(); channels * n];
    for c in 0..channels {
        for ky in 0..K {
            for kx in 0..K {
                let row = &cols[(c * KK + ky * K + kx) * n..][..n];
                for b in 0..batch {
                    for y in 0..h {
                        let sy = y + ky;
                        if sy < 1 || sy > h {
                            continue;
                        }
                        let src = &row[(b * h + y) * w..][..w];
                        let dst = &mut x[((c * batch + b) * h + sy - 1) * w..][..w];
                        let (d, s) = match kx {
                            0 => (&mut dst[..w - 1], &src[1..]),
                            1 => (&mut dst[..], src),
                            _ => (&mut dst[1..], &src[..w - 1]),
                        };
                        for (d, &s) in d.iter_mut().zip(s) {
                            *d = *d + s;
                        }
                    }
                }
            }
        }
    }
    x
}

fn max_pool<T: Real>(x: &[T], planes: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = base + 2 * y * w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * w + 2 * xx + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

fn max_pool_backward<T: Real>(grad: &[T], argmax: &[u32], len: usize) -> Vec<T> {
    let mut out = vec![T::zero(); len];
    for (&g, &i) in grad.iter().zip(argmax) {
        out[i as usize] = out[i as usize] + g;
    }
    out
}

fn upsample<T: Real>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h * 2, w * 2);
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        for y in 0..oh {
            let src = &x[(p * h + y / 2) * w..][..w];
            let dst = &mut out[(p * oh + y) * ow..][..ow];
            for (xx, d) in dst.iter_mut().enumerate() {
                *d = src[xx / 2];
            }
        }
    }
    out
}

fn upsample_backward<T: Real>(grad: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (gh, gw) = (h * 2, w * 2);
    let mut out = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        for y in 0..gh {
            let src = &grad[(p * gh + y) * gw..][..gw];
            let dst = &mut out[(p * h + y / 2) * w..][..w];
            for (xx, &g) in src.iter().enumerate() {
                dst[xx / 2] = dst[xx / 2] + g;
            }
        }
    }
    out
}
