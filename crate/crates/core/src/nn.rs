//! Small convolutional backbone and linear heads with manual backprop.
//!
//! The backbone is a stack of `3×3` convolution blocks (zero padding, ReLU);
//! every block but the last is followed by `2×2` average pooling and the last
//! by global average pooling. Parameters live in flat `Vec<f32>` buffers so
//! gradients, optimizer state and checkpoints share one layout.

use std::sync::atomic::{AtomicU64, Ordering};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackbonePreset {
    Small,
    Medium,
    /// Widest preset; a plain conv stack sized for GPU-class budgets.
    #[serde(rename = "resnet50-class")]
    Resnet50Class,
}

impl BackbonePreset {
    pub fn channels(self) -> Vec<usize> {
        match self {
            BackbonePreset::Small => vec![12, 24, 32, 48],
            BackbonePreset::Medium => vec![16, 32, 64, 96],
            BackbonePreset::Resnet50Class => vec![64, 128, 256, 512, 1024],
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvShape {
    in_c: usize,
    out_c: usize,
    w_off: usize,
    b_off: usize,
}

impl ConvShape {
    fn k(&self) -> usize {
        self.in_c * 9
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backbone {
    pub input_size: usize,
    pub channels: Vec<usize>,
    pub params: Vec<f32>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BackboneTrace {
    layers: Vec<LayerTrace>,
    pub feature: Vec<f32>,
}

#[derive(Debug, Clone)]
struct LayerTrace {
    h: usize,
    w: usize,
    cols: Vec<f32>,
    act: Vec<f32>,
}

fn layer_shapes(channels: &[usize]) -> Vec<ConvShape> {
    let mut shapes = Vec::with_capacity(channels.len());
    let mut off = 0;
    let mut in_c = 3;
    for &out_c in channels {
        let w_off = off;
        off += out_c * in_c * 9;
        let b_off = off;
        off += out_c;
        shapes.push(ConvShape {
            in_c,
            out_c,
            w_off,
            b_off,
        });
        in_c = out_c;
    }
    shapes
}

fn n_params(channels: &[usize]) -> usize {
    layer_shapes(channels)
        .last()
        .map(|s| s.b_off + s.out_c)
        .unwrap_or(0)
}

/// `C × H × W` image → `(C·9) × (H·W)` patch matrix for a padded 3×3 kernel.
fn im2col(x: &[f32], c: usize, h: usize, w: usize, cols: &mut [f32]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let out = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x_, o) in out.iter_mut().enumerate() {
                        let sx = x_ as isize + kx as isize - 1;
                        *o = if sx < 0 || sx >= w as isize {
                            0.0
                        } else {
                            src[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f32], c: usize, h: usize, w: usize, dx: &mut [f32]) {
    let hw = h * w;
    dx.fill(0.0);
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    for x_ in 0..w {
                        let sx = x_ as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] += row[y * w + x_];
                        }
                    }
                }
            }
        }
    }
}

/// `c = a · b` for row-major `a: m×k`, `b: k×n`, accumulating when `accumulate`.
fn matmul(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32], accumulate: bool) {
    let beta = if accumulate { 1.0 } else { 0.0 };
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c (+)= a · bᵀ` for `a: m×k`, `b: n×k`.
fn matmul_bt(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32], accumulate: bool) {
    let beta = if accumulate { 1.0 } else { 0.0 };
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c = aᵀ · b` for `a: k×m`, `b: k×n`.
fn matmul_at(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn avg_pool(x: &[f32], c: usize, h: usize, w: usize) -> (Vec<f32>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; c * oh * ow];
    for ci in 0..c {
        for y in 0..oh {
            for x_ in 0..ow {
                let base = ci * h * w;
                let s = x[base + 2 * y * w + 2 * x_]
                    + x[base + 2 * y * w + 2 * x_ + 1]
                    + x[base + (2 * y + 1) * w + 2 * x_]
                    + x[base + (2 * y + 1) * w + 2 * x_ + 1];
                out[ci * oh * ow + y * ow + x_] = 0.25 * s;
            }
        }
    }
    (out, oh, ow)
}

fn avg_unpool(dy: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = vec![0.0; c * h * w];
    for ci in 0..c {
        for y in 0..oh {
            for x_ in 0..ow {
                let g = 0.25 * dy[ci * oh * ow + y * ow + x_];
                let base = ci * h * w;
                dx[base + 2 * y * w + 2 * x_] = g;
                dx[base + 2 * y * w + 2 * x_ + 1] = g;
                dx[base + (2 * y + 1) * w + 2 * x_] = g;
                dx[base + (2 * y + 1) * w + 2 * x_ + 1] = g;
            }
        }
    }
    dx
}

/// HWC pixels in `[0, 1]` → centred CHW planes.
fn to_planes(image: &Image) -> Vec<f32> {
    let hw = image.height * image.width;
    let mut out = vec![0.0; 3 * hw];
    for (p, px) in image.data.chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * hw + p] = px[c] - 0.5;
        }
    }
    out
}

impl Backbone {
    pub fn new(input_size: usize, channels: Vec<usize>, rng: &mut Rng) -> Result<Self> {
        if channels.is_empty() || channels.contains(&0) {
            return Err(Error::InvalidArgument("backbone needs non-empty channel widths".into()));
        }
        if input_size >> (channels.len() - 1) == 0 {
            return Err(Error::InvalidArgument(format!(
                "input size {input_size} too small for {} pooling stages",
                channels.len() - 1
            )));
        }
        let mut params = vec![0.0f32; n_params(&channels)];
        for s in layer_shapes(&channels) {
            let std = (2.0 / s.k() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("valid normal");
            for p in &mut params[s.w_off..s.b_off] {
                *p = normal.sample(rng) as f32;
            }
        }
        Ok(Self {
            input_size,
            channels,
            params,
        })
    }

    pub fn feature_dim(&self) -> usize {
        *self.channels.last().expect("non-empty channels")
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, image: &Image) -> Result<()> {
        if image.height != self.input_size || image.width != self.input_size {
            return Err(Error::DimensionMismatch {
                expected: self.input_size,
                actual: if image.height != self.input_size {
                    image.height
                } else {
                    image.width
                },
            });
        }
        Ok(())
    }

    /// Pooled feature of `image`.
    pub fn forward(&self, image: &Image) -> Result<Vec<f32>> {
        Ok(self.forward_impl(image, false)?.feature)
    }

    /// Forward pass keeping what [`Backbone::backward`] needs.
    pub fn forward_trace(&self, image: &Image) -> Result<BackboneTrace> {
        self.forward_impl(image, true)
    }

    fn forward_impl(&self, image: &Image, keep: bool) -> Result<BackboneTrace> {
        self.check_input(image)?;
        let shapes = layer_shapes(&self.channels);
        let (mut h, mut w) = (image.height, image.width);
        let mut x = to_planes(image);
        let mut layers = Vec::with_capacity(shapes.len());
        let last = shapes.len() - 1;
        for (i, s) in shapes.iter().enumerate() {
            let hw = h * w;
            let mut cols = vec![0.0f32; s.k() * hw];
            im2col(&x, s.in_c, h, w, &mut cols);
            let mut act = vec![0.0f32; s.out_c * hw];
            matmul(
                s.out_c,
                s.k(),
                hw,
                &self.params[s.w_off..s.b_off],
                &cols,
                &mut act,
                false,
            );
            for (oc, plane) in act.chunks_exact_mut(hw).enumerate() {
                let b = self.params[s.b_off + oc];
                for v in plane {
                    *v = (*v + b).max(0.0);
                }
            }
            let next = if i == last {
                let inv = 1.0 / hw as f32;
                act.chunks_exact(hw).map(|p| p.iter().sum::<f32>() * inv).collect()
            } else {
                let (pooled, oh, ow) = avg_pool(&act, s.out_c, h, w);
                if keep {
                    layers.push(LayerTrace { h, w, cols, act });
                }
                h = oh;
                w = ow;
                x = pooled;
                continue;
            };
            if keep {
                layers.push(LayerTrace { h, w, cols, act });
            }
            x = next;
        }
        Ok(BackboneTrace { layers, feature: x })
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d feature`.
    pub fn backward(&self, trace: &BackboneTrace, d_feature: &[f32], grad: &mut [f32]) {
        let shapes = layer_shapes(&self.channels);
        let last = shapes.len() - 1;
        let mut d_act: Vec<f32> = {
            let lt = &trace.layers[last];
            let hw = lt.h * lt.w;
            let inv = 1.0 / hw as f32;
            let mut d = vec![0.0f32; shapes[last].out_c * hw];
            for (oc, plane) in d.chunks_exact_mut(hw).enumerate() {
                plane.fill(d_feature[oc] * inv);
            }
            d
        };
        for i in (0..shapes.len()).rev() {
            let s = shapes[i];
            let lt = &trace.layers[i];
            let hw = lt.h * lt.w;
            for (g, &a) in d_act.iter_mut().zip(&lt.act) {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }
            matmul_bt(
                s.out_c,
                hw,
                s.k(),
                &d_act,
                &lt.cols,
                &mut grad[s.w_off..s.b_off],
                true,
            );
            for (oc, plane) in d_act.chunks_exact(hw).enumerate() {
                grad[s.b_off + oc] += plane.iter().sum::<f32>();
            }
            if i == 0 {
                break;
            }
            let mut d_cols = vec![0.0f32; s.k() * hw];
            matmul_at(s.k(), s.out_c, hw, &self.params[s.w_off..s.b_off], &d_act, &mut d_cols);
            let mut d_x = vec![0.0f32; s.in_c * hw];
            col2im(&d_cols, s.in_c, lt.h, lt.w, &mut d_x);
            let prev = &trace.layers[i - 1];
            d_act = avg_unpool(&d_x, s.in_c, prev.h, prev.w);
        }
    }
}

/// Fully connected layer `y = W x + b`, weights row-major `out × in` then bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub params: Vec<f32>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let normal = Normal::new(0.0, 1.0 / (in_dim as f64).sqrt()).expect("valid normal");
        let mut params = vec![0.0f32; out_dim * in_dim + out_dim];
        for p in &mut params[..out_dim * in_dim] {
            *p = normal.sample(rng) as f32;
        }
        Self {
            in_dim,
            out_dim,
            params,
        }
    }

    pub fn forward(&self, x: &[f32]) -> Vec<f32> {
        let (w, b) = self.params.split_at(self.out_dim * self.in_dim);
        w.chunks_exact(self.in_dim)
            .zip(b)
            .map(|(row, bias)| row.iter().zip(x).map(|(a, b)| a * b).sum::<f32>() + bias)
            .collect()
    }

    /// Accumulates parameter gradients and returns `d loss / d x`.
    pub fn backward(&self, x: &[f32], dy: &[f32], grad: &mut [f32]) -> Vec<f32> {
        let split = self.out_dim * self.in_dim;
        let mut dx = vec![0.0f32; self.in_dim];
        for (o, &g) in dy.iter().enumerate() {
            let row = &self.params[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grad[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
            grad[split + o] += g;
        }
        dx
    }
}

/// Counts backbone forward passes; ignored by clone-equality and serialization.
#[derive(Debug, Default)]
pub struct CallCounter(AtomicU64);

impl CallCounter {
    pub fn bump(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.0.store(0, Ordering::Relaxed);
    }
}

impl Clone for CallCounter {
    fn clone(&self) -> Self {
        Self::default()
    }
}

impl PartialEq for CallCounter {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

/// Plain SGD with optional momentum over a flat parameter buffer.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f32,
    velocity: Vec<f32>,
}

impl Sgd {
    pub fn new(n: usize, momentum: f32) -> Self {
        Self {
            momentum,
            velocity: if momentum > 0.0 { vec![0.0; n] } else { Vec::new() },
        }
    }

    pub fn step(&mut self, params: &mut [f32], grad: &[f32], lr: f32) {
        if self.momentum > 0.0 {
            for ((p, g), v) in params.iter_mut().zip(grad).zip(&mut self.velocity) {
                *v = self.momentum * *v + g;
                *p -= lr * *v;
            }
        } else {
            for (p, g) in params.iter_mut().zip(grad) {
                *p -= lr * g;
            }
        }
    }
}
