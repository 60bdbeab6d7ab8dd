//! Reverse-mode autodiff tape over `ndarray` tensors.
//!
//! The tape records a DAG of operations built define-by-run. Activations are
//! `(N, C, H, W)` arrays, losses are 0-d scalars. `backward` walks the tape in
//! reverse creation order and accumulates gradients into every node that
//! requires them. All reductions run in a fixed order, so results are
//! bit-identical across runs for a given scalar type.
//!
//! Convolutions lower to im2col + GEMM. Stride-1 convolutions use reflection
//! padding (edge-inclusive), strided ones use zero padding; the backward pass
//! scatters through the exact same index map, so the adjoint is exact.

use ndarray::{Array1, Array2, Array4, ArrayD, Axis, Ix0, Ix4, IxDyn};
use std::fmt::{Debug, Display};

/// Scalar types the tape can run on. f32 for training speed, f64 for
/// gradient checking and value-level oracles.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssign
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Padding behaviour of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    /// Edge-inclusive mirror: index -1 maps to 0, index H maps to H-1.
    Reflect,
    Zero,
}

enum Op<T: Scalar> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        pad_mode: PadMode,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Softplus {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    ConcatChannels {
        parts: Vec<Var>,
    },
    PixelShuffle2 {
        x: Var,
    },
    AvgPool2 {
        x: Var,
    },
    Clamp01 {
        x: Var,
    },
    /// multiplies sample n (leading axis) by weights[n]
    ScaleSamples {
        x: Var,
        weights: Vec<T>,
    },
    /// mean |a - b| over all elements -> scalar
    L1Mean {
        a: Var,
        b: Var,
    },
    /// sqrt(mean (a - b)^2) over all elements -> scalar
    RmsDiff {
        a: Var,
        b: Var,
    },
    /// mean over H and W, keeping (N, C, 1, 1)
    MeanHw {
        x: Var,
    },
    /// mean over every element -> scalar
    GlobalMean {
        x: Var,
    },
    /// sum of c_i * scalar_i -> scalar
    WeightedSum {
        terms: Vec<(Var, T)>,
    },
}

struct Node<T: Scalar> {
    value: ArrayD<T>,
    grad: Option<ArrayD<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Reverse-mode autodiff tape.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: ArrayD<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &ArrayD<T> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 0-d node.
    pub fn scalar(&self, v: Var) -> T {
        scalar_of(&self.nodes[v.0].value)
    }

    pub fn grad(&self, v: Var) -> Option<&ArrayD<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Registers an input or parameter tensor.
    pub fn leaf(&mut self, value: ArrayD<T>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Constant leaf (never receives gradient).
    pub fn constant(&mut self, value: ArrayD<T>) -> Var {
        self.leaf(value, false)
    }

    /// Copies a node's value into a fresh gradient-stopping leaf.
    pub fn detach(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.clone();
        self.leaf(v, false)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize, pad_mode: PadMode) -> Var {
        let value = conv2d_forward(
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            &self.nodes[b.0].value,
            stride,
            pad,
            pad_mode,
        );
        let req = self.requires(x) || self.requires(w) || self.requires(b);
        self.push(
            value,
            req,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
                pad_mode,
            },
        )
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let value = self.nodes[x.0].value.mapv(|v| if v > T::zero() { v } else { v * slope });
        let req = self.requires(x);
        self.push(value, req, Op::LeakyRelu { x, slope })
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.mapv(softplus_stable);
        let req = self.requires(x);
        self.push(value, req, Op::Softplus { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.nodes[a.0].value.shape(),
            self.nodes[b.0].value.shape(),
            "add: shape mismatch"
        );
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        let req = self.requires(a) || self.requires(b);
        self.push(value, req, Op::Add { a, b })
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|p| self.nodes[p.0].value.view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat shapes");
        let req = parts.iter().any(|p| self.requires(*p));
        self.push(value, req, Op::ConcatChannels { parts: parts.to_vec() })
    }

    /// `(N, 4C, H, W)` -> `(N, C, 2H, 2W)`; out[c, 2y+dy, 2x+dx] = in[4c + 2dy + dx, y, x].
    pub fn pixel_shuffle2(&mut self, x: Var) -> Var {
        let v = as4(&self.nodes[x.0].value);
        let (n, c4, h, w) = dims4(&v);
        assert!(c4 % 4 == 0, "pixel_shuffle2 needs channels divisible by 4");
        let c = c4 / 4;
        let mut out = Array4::<T>::zeros((n, c, 2 * h, 2 * w));
        for ni in 0..n {
            for ci in 0..c {
                for dy in 0..2 {
                    for dx in 0..2 {
                        let src = v.index_axis(Axis(0), ni);
                        let src = src.index_axis(Axis(0), 4 * ci + 2 * dy + dx);
                        for y in 0..h {
                            for x_ in 0..w {
                                out[(ni, ci, 2 * y + dy, 2 * x_ + dx)] = src[(y, x_)];
                            }
                        }
                    }
                }
            }
        }
        let req = self.requires(x);
        self.push(out.into_dyn(), req, Op::PixelShuffle2 { x })
    }

    /// 2x2 mean pooling; dims must be even.
    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let v = as4(&self.nodes[x.0].value);
        let (n, c, h, w) = dims4(&v);
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even dims");
        let quarter = T::from_f64(0.25);
        let mut out = Array4::<T>::zeros((n, c, h / 2, w / 2));
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h / 2 {
                    for x_ in 0..w / 2 {
                        let s = v[(ni, ci, 2 * y, 2 * x_)]
                            + v[(ni, ci, 2 * y, 2 * x_ + 1)]
                            + v[(ni, ci, 2 * y + 1, 2 * x_)]
                            + v[(ni, ci, 2 * y + 1, 2 * x_ + 1)];
                        out[(ni, ci, y, x_)] = s * quarter;
                    }
                }
            }
        }
        let req = self.requires(x);
        self.push(out.into_dyn(), req, Op::AvgPool2 { x })
    }

    pub fn clamp01(&mut self, x: Var) -> Var {
        let one = T::one();
        let zero = T::zero();
        let value = self.nodes[x.0].value.mapv(|v| v.max(zero).min(one));
        let req = self.requires(x);
        self.push(value, req, Op::Clamp01 { x })
    }

    /// Per-sample scaling along the leading axis (e.g. per-triplet loss
    /// weights applied before a mean reduction).
    pub fn scale_samples(&mut self, x: Var, weights: &[T]) -> Var {
        let xv = &self.nodes[x.0].value;
        assert_eq!(
            xv.shape()[0],
            weights.len(),
            "scale_samples: one weight per sample"
        );
        let mut value = xv.clone();
        for (n, w) in weights.iter().enumerate() {
            value.index_axis_mut(Axis(0), n).mapv_inplace(|v| v * *w);
        }
        let req = self.requires(x);
        self.push(value, req, Op::ScaleSamples { x, weights: weights.to_vec() })
    }

    pub fn l1_mean(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.nodes[a.0].value.shape(),
            self.nodes[b.0].value.shape(),
            "l1_mean: shape mismatch"
        );
        let mut acc = T::zero();
        for (x, y) in self.nodes[a.0].value.iter().zip(self.nodes[b.0].value.iter()) {
            acc += (*x - *y).abs();
        }
        let n = T::from_f64(self.nodes[a.0].value.len() as f64);
        let value = ndarray::arr0(acc / n).into_dyn();
        let req = self.requires(a) || self.requires(b);
        self.push(value, req, Op::L1Mean { a, b })
    }

    pub fn rms_diff(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.nodes[a.0].value.shape(),
            self.nodes[b.0].value.shape(),
            "rms_diff: shape mismatch"
        );
        let mut acc = T::zero();
        for (x, y) in self.nodes[a.0].value.iter().zip(self.nodes[b.0].value.iter()) {
            let d = *x - *y;
            acc += d * d;
        }
        let n = T::from_f64(self.nodes[a.0].value.len() as f64);
        let value = ndarray::arr0((acc / n).sqrt()).into_dyn();
        let req = self.requires(a) || self.requires(b);
        self.push(value, req, Op::RmsDiff { a, b })
    }

    pub fn mean_hw(&mut self, x: Var) -> Var {
        let v = as4(&self.nodes[x.0].value);
        let (n, c, h, w) = dims4(&v);
        let inv = T::from_f64(1.0 / (h * w) as f64);
        let mut out = Array4::<T>::zeros((n, c, 1, 1));
        for ni in 0..n {
            for ci in 0..c {
                let mut acc = T::zero();
                for y in 0..h {
                    for x_ in 0..w {
                        acc += v[(ni, ci, y, x_)];
                    }
                }
                out[(ni, ci, 0, 0)] = acc * inv;
            }
        }
        let req = self.requires(x);
        self.push(out.into_dyn(), req, Op::MeanHw { x })
    }

    pub fn global_mean(&mut self, x: Var) -> Var {
        let mut acc = T::zero();
        for v in self.nodes[x.0].value.iter() {
            acc += *v;
        }
        let n = T::from_f64(self.nodes[x.0].value.len() as f64);
        let value = ndarray::arr0(acc / n).into_dyn();
        let req = self.requires(x);
        self.push(value, req, Op::GlobalMean { x })
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Var {
        let mut acc = T::zero();
        for (v, c) in terms {
            acc += self.scalar(*v) * *c;
        }
        let value = ndarray::arr0(acc).into_dyn();
        let req = terms.iter().any(|(v, _)| self.requires(*v));
        self.push(value, req, Op::WeightedSum { terms: terms.to_vec() })
    }

    /// Backpropagates from a scalar loss node. Gradients accumulate into every
    /// node on the path with `requires_grad`.
    pub fn backward(&mut self, loss: Var) {
        assert!(
            self.nodes[loss.0].value.ndim() == 0,
            "backward expects a scalar loss"
        );
        self.nodes[loss.0].grad = Some(ndarray::arr0(T::one()).into_dyn());
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad || self.nodes[idx].grad.is_none() {
                continue;
            }
            self.backprop_node(idx);
        }
    }

    fn take_grad(&mut self, idx: usize) -> ArrayD<T> {
        self.nodes[idx].grad.take().expect("gradient present")
    }

    fn put_back_grad(&mut self, idx: usize, g: ArrayD<T>) {
        self.nodes[idx].grad = Some(g);
    }

    fn accumulate(&mut self, v: Var, delta: ArrayD<T>) {
        if !self.requires(v) {
            return;
        }
        match &mut self.nodes[v.0].grad {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    fn accumulate_scalar(&mut self, v: Var, delta: T) {
        if !self.requires(v) {
            return;
        }
        let d = ndarray::arr0(delta).into_dyn();
        self.accumulate(v, d);
    }

    fn backprop_node(&mut self, idx: usize) {
        // Take the node's grad to appease the borrow checker, put it back after.
        let gout = self.take_grad(idx);
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
                pad_mode,
            } => {
                let (x, w, b) = (*x, *w, *b);
                let (stride, pad, pad_mode) = (*stride, *pad, *pad_mode);
                let need_dx = self.requires(x);
                let (dx, dw, db) = conv2d_backward(
                    &self.nodes[x.0].value,
                    &self.nodes[w.0].value,
                    &gout,
                    stride,
                    pad,
                    pad_mode,
                    need_dx,
                );
                if let Some(dx) = dx {
                    self.accumulate(x, dx);
                }
                self.accumulate(w, dw);
                self.accumulate(b, db);
            }
            Op::LeakyRelu { x, slope } => {
                let (x, slope) = (*x, *slope);
                let mut dx = gout.clone();
                ndarray::Zip::from(&mut dx)
                    .and(&self.nodes[x.0].value)
                    .for_each(|d, &v| {
                        if v <= T::zero() {
                            *d = *d * slope;
                        }
                    });
                self.accumulate(x, dx);
            }
            Op::Softplus { x } => {
                let x = *x;
                let mut dx = gout.clone();
                ndarray::Zip::from(&mut dx)
                    .and(&self.nodes[x.0].value)
                    .for_each(|d, &v| *d = *d * sigmoid_stable(v));
                self.accumulate(x, dx);
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                self.accumulate(a, gout.clone());
                self.accumulate(b, gout.clone());
            }
            Op::ConcatChannels { parts } => {
                let parts = parts.clone();
                let g4 = as4(&gout);
                let mut offset = 0;
                for p in parts {
                    let c = self.nodes[p.0].value.shape()[1];
                    let slice = g4
                        .slice(ndarray::s![.., offset..offset + c, .., ..])
                        .to_owned()
                        .into_dyn();
                    self.accumulate(p, slice);
                    offset += c;
                }
            }
            Op::PixelShuffle2 { x } => {
                let x = *x;
                let g4 = as4(&gout);
                let (n, c, h2, w2) = dims4(&g4);
                let (h, w) = (h2 / 2, w2 / 2);
                let mut dx = Array4::<T>::zeros((n, 4 * c, h, w));
                for ni in 0..n {
                    for ci in 0..c {
                        for dy in 0..2 {
                            for dx_ in 0..2 {
                                for y in 0..h {
                                    for x_ in 0..w {
                                        dx[(ni, 4 * ci + 2 * dy + dx_, y, x_)] =
                                            g4[(ni, ci, 2 * y + dy, 2 * x_ + dx_)];
                                    }
                                }
                            }
                        }
                    }
                }
                self.accumulate(x, dx.into_dyn());
            }
            Op::AvgPool2 { x } => {
                let x = *x;
                let g4 = as4(&gout);
                let (n, c, hh, wh) = dims4(&g4);
                let quarter = T::from_f64(0.25);
                let mut dx = Array4::<T>::zeros((n, c, hh * 2, wh * 2));
                for ni in 0..n {
                    for ci in 0..c {
                        for y in 0..hh {
                            for x_ in 0..wh {
                                let g = g4[(ni, ci, y, x_)] * quarter;
                                dx[(ni, ci, 2 * y, 2 * x_)] = g;
                                dx[(ni, ci, 2 * y, 2 * x_ + 1)] = g;
                                dx[(ni, ci, 2 * y + 1, 2 * x_)] = g;
                                dx[(ni, ci, 2 * y + 1, 2 * x_ + 1)] = g;
                            }
                        }
                    }
                }
                self.accumulate(x, dx.into_dyn());
            }
            Op::Clamp01 { x } => {
                let x = *x;
                let mut dx = gout.clone();
                ndarray::Zip::from(&mut dx)
                    .and(&self.nodes[x.0].value)
                    .for_each(|d, &v| {
                        if v < T::zero() || v > T::one() {
                            *d = T::zero();
                        }
                    });
                self.accumulate(x, dx);
            }
            Op::ScaleSamples { x, weights } => {
                let x = *x;
                let weights = weights.clone();
                let mut dx = gout.clone();
                for (n, w) in weights.iter().enumerate() {
                    dx.index_axis_mut(Axis(0), n).mapv_inplace(|v| v * *w);
                }
                self.accumulate(x, dx);
            }
            Op::L1Mean { a, b } => {
                let (a, b) = (*a, *b);
                let g = scalar_of(&gout);
                let n = T::from_f64(self.nodes[a.0].value.len() as f64);
                let scale = g / n;
                let mut da = ArrayD::<T>::zeros(IxDyn(self.nodes[a.0].value.shape()));
                ndarray::Zip::from(&mut da)
                    .and(&self.nodes[a.0].value)
                    .and(&self.nodes[b.0].value)
                    .for_each(|d, &x, &y| {
                        *d = if x > y {
                            scale
                        } else if x < y {
                            -scale
                        } else {
                            T::zero()
                        };
                    });
                let db = da.mapv(|v| -v);
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::RmsDiff { a, b } => {
                let (a, b) = (*a, *b);
                let g = scalar_of(&gout);
                let value = scalar_of(&self.nodes[idx].value);
                let n = T::from_f64(self.nodes[a.0].value.len() as f64);
                // d/da sqrt(mean d^2) = d / (n * rms); zero at the (non-differentiable) origin.
                if value > T::zero() {
                    let scale = g / (n * value);
                    let mut da = ArrayD::<T>::zeros(IxDyn(self.nodes[a.0].value.shape()));
                    ndarray::Zip::from(&mut da)
                        .and(&self.nodes[a.0].value)
                        .and(&self.nodes[b.0].value)
                        .for_each(|d, &x, &y| *d = (x - y) * scale);
                    let db = da.mapv(|v| -v);
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
            }
            Op::MeanHw { x } => {
                let x = *x;
                let g4 = as4(&gout);
                let (n, c, _, _) = dims4(&g4);
                let shape = self.nodes[x.0].value.shape().to_vec();
                let (h, w) = (shape[2], shape[3]);
                let inv = T::from_f64(1.0 / (h * w) as f64);
                let mut dx = Array4::<T>::zeros((n, c, h, w));
                for ni in 0..n {
                    for ci in 0..c {
                        let g = g4[(ni, ci, 0, 0)] * inv;
                        for y in 0..h {
                            for x_ in 0..w {
                                dx[(ni, ci, y, x_)] = g;
                            }
                        }
                    }
                }
                self.accumulate(x, dx.into_dyn());
            }
            Op::GlobalMean { x } => {
                let x = *x;
                let g = scalar_of(&gout);
                let n = T::from_f64(self.nodes[x.0].value.len() as f64);
                let dx = ArrayD::from_elem(IxDyn(self.nodes[x.0].value.shape()), g / n);
                self.accumulate(x, dx);
            }
            Op::WeightedSum { terms } => {
                let terms = terms.clone();
                let g = scalar_of(&gout);
                for (v, c) in terms {
                    self.accumulate_scalar(v, g * c);
                }
            }
        }
        self.put_back_grad(idx, gout);
    }
}

fn softplus_stable<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (T::one() + (-x).exp()).ln()
    } else {
        (T::one() + x.exp()).ln()
    }
}

fn sigmoid_stable<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn as4<T: Scalar>(a: &ArrayD<T>) -> ndarray::ArrayView4<'_, T> {
    a.view().into_dimensionality::<Ix4>().expect("4-d tensor")
}

fn scalar_of<T: Scalar>(a: &ArrayD<T>) -> T {
    *a.view().into_dimensionality::<Ix0>().expect("0-d tensor").into_scalar()
}

fn dims4<T: Scalar>(v: &ndarray::ArrayView4<'_, T>) -> (usize, usize, usize, usize) {
    let s = v.shape();
    (s[0], s[1], s[2], s[3])
}

/// Edge-inclusive mirror of an index into `[0, len)`.
fn reflect_index(i: isize, len: usize) -> usize {
    let len = len as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -1 - i;
        } else if i >= len {
            i = 2 * len - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Materializes the padded input plane stack for one sample: `(C, H+2p, W+2p)`.
fn pad_sample<T: Scalar>(
    x: &ndarray::ArrayView3<'_, T>,
    pad: usize,
    mode: PadMode,
) -> ndarray::Array3<T> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = ndarray::Array3::<T>::zeros((c, h + 2 * pad, w + 2 * pad));
    match mode {
        PadMode::Zero => {
            out.slice_mut(ndarray::s![.., pad..pad + h, pad..pad + w])
                .assign(x);
        }
        PadMode::Reflect => {
            for ci in 0..c {
                for y in 0..h + 2 * pad {
                    let sy = reflect_index(y as isize - pad as isize, h);
                    for xx in 0..w + 2 * pad {
                        let sx = reflect_index(xx as isize - pad as isize, w);
                        out[(ci, y, xx)] = x[(ci, sy, sx)];
                    }
                }
            }
        }
    }
    out
}

/// Folds a padded-plane gradient back onto the source plane, the adjoint of
/// `pad_sample`. Reflection is separable, so rows fold first, then columns.
fn unpad_sample_grad<T: Scalar>(
    dpadded: &ndarray::Array3<T>,
    pad: usize,
    mode: PadMode,
    h: usize,
    w: usize,
) -> ndarray::Array3<T> {
    let c = dpadded.shape()[0];
    match mode {
        PadMode::Zero => dpadded
            .slice(ndarray::s![.., pad..pad + h, pad..pad + w])
            .to_owned(),
        PadMode::Reflect => {
            let mut rows = ndarray::Array3::<T>::zeros((c, h, w + 2 * pad));
            for ci in 0..c {
                for y in 0..h + 2 * pad {
                    let sy = reflect_index(y as isize - pad as isize, h);
                    for xx in 0..w + 2 * pad {
                        rows[(ci, sy, xx)] += dpadded[(ci, y, xx)];
                    }
                }
            }
            let mut out = ndarray::Array3::<T>::zeros((c, h, w));
            for ci in 0..c {
                for y in 0..h {
                    for xx in 0..w + 2 * pad {
                        let sx = reflect_index(xx as isize - pad as isize, w);
                        out[(ci, y, sx)] += rows[(ci, y, xx)];
                    }
                }
            }
            out
        }
    }
}

fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - k) / stride + 1
}

/// im2col over an already padded sample: returns `(C*K*K, OH*OW)`.
fn im2col<T: Scalar>(
    padded: &ndarray::Array3<T>,
    k: usize,
    stride: usize,
    oh: usize,
    ow: usize,
) -> Array2<T> {
    let c = padded.shape()[0];
    let mut col = Array2::<T>::zeros((c * k * k, oh * ow));
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let mut col_row = col.row_mut(row);
                if stride == 1 {
                    for y in 0..oh {
                        let src = padded.slice(ndarray::s![ci, y + ky, kx..kx + ow]);
                        let mut dst = col_row.slice_mut(ndarray::s![y * ow..(y + 1) * ow]);
                        dst.assign(&src);
                    }
                } else {
                    for y in 0..oh {
                        for x in 0..ow {
                            col_row[y * ow + x] = padded[(ci, y * stride + ky, x * stride + kx)];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Scatter-add of a column gradient back onto the padded sample grid.
fn col2im_add<T: Scalar>(
    dcol: &Array2<T>,
    c: usize,
    k: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    dpadded: &mut ndarray::Array3<T>,
) {
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let col_row = dcol.row(row);
                if stride == 1 {
                    for y in 0..oh {
                        let src = col_row.slice(ndarray::s![y * ow..(y + 1) * ow]);
                        let mut dst = dpadded.slice_mut(ndarray::s![ci, y + ky, kx..kx + ow]);
                        dst += &src;
                    }
                } else {
                    for y in 0..oh {
                        for x in 0..ow {
                            dpadded[(ci, y * stride + ky, x * stride + kx)] += col_row[y * ow + x];
                        }
                    }
                }
            }
        }
    }
}

fn conv2d_forward<T: Scalar>(
    x: &ArrayD<T>,
    w: &ArrayD<T>,
    b: &ArrayD<T>,
    stride: usize,
    pad: usize,
    pad_mode: PadMode,
) -> ArrayD<T> {
    let x4 = as4(x);
    let (n, ci, h, wd) = dims4(&x4);
    let wshape = w.shape();
    let (co, wci, kh, kw) = (wshape[0], wshape[1], wshape[2], wshape[3]);
    assert_eq!(ci, wci, "conv2d: input channels {ci} != weight channels {wci}");
    assert_eq!(kh, kw, "conv2d: square kernels only");
    let k = kh;
    let oh = conv_out_len(h, k, stride, pad);
    let ow = conv_out_len(wd, k, stride, pad);
    let w2 = w
        .view()
        .into_shape_with_order((co, ci * k * k))
        .expect("weight reshape");
    let bias = b.view().into_dimensionality::<ndarray::Ix1>().expect("bias 1-d");
    let mut out = Array4::<T>::zeros((n, co, oh, ow));
    for ni in 0..n {
        let sample = x4.index_axis(Axis(0), ni);
        let padded = pad_sample(&sample, pad, pad_mode);
        let col = im2col(&padded, k, stride, oh, ow);
        let y = w2.dot(&col); // (CO, OH*OW)
        let mut out_n = out.index_axis_mut(Axis(0), ni);
        for coi in 0..co {
            let row = y.row(coi);
            let mut plane = out_n.index_axis_mut(Axis(0), coi);
            let bv = bias[coi];
            for yy in 0..oh {
                for xx in 0..ow {
                    plane[(yy, xx)] = row[yy * ow + xx] + bv;
                }
            }
        }
    }
    out.into_dyn()
}

#[allow(clippy::type_complexity)]
fn conv2d_backward<T: Scalar>(
    x: &ArrayD<T>,
    w: &ArrayD<T>,
    gout: &ArrayD<T>,
    stride: usize,
    pad: usize,
    pad_mode: PadMode,
    need_dx: bool,
) -> (Option<ArrayD<T>>, ArrayD<T>, ArrayD<T>) {
    let x4 = as4(x);
    let g4 = as4(gout);
    let (n, ci, h, wd) = dims4(&x4);
    let wshape = w.shape();
    let (co, _, k, _) = (wshape[0], wshape[1], wshape[2], wshape[3]);
    let (oh, ow) = (g4.shape()[2], g4.shape()[3]);
    let w2 = w
        .view()
        .into_shape_with_order((co, ci * k * k))
        .expect("weight reshape");

    let mut dw2 = Array2::<T>::zeros((co, ci * k * k));
    let mut db = Array1::<T>::zeros(co);
    let mut dx = if need_dx {
        Some(Array4::<T>::zeros((n, ci, h, wd)))
    } else {
        None
    };

    for ni in 0..n {
        let sample = x4.index_axis(Axis(0), ni);
        let padded = pad_sample(&sample, pad, pad_mode);
        let col = im2col(&padded, k, stride, oh, ow);

        // Flatten this sample's output gradient to (CO, OH*OW).
        let mut g2 = Array2::<T>::zeros((co, oh * ow));
        for coi in 0..co {
            let plane = g4.index_axis(Axis(0), ni);
            let plane = plane.index_axis(Axis(0), coi);
            let mut row = g2.row_mut(coi);
            let mut acc = T::zero();
            for yy in 0..oh {
                for xx in 0..ow {
                    let g = plane[(yy, xx)];
                    row[yy * ow + xx] = g;
                    acc += g;
                }
            }
            db[coi] += acc;
        }

        dw2 += &g2.dot(&col.t());

        if let Some(dx) = dx.as_mut() {
            let dcol = w2.t().dot(&g2); // (CI*K*K, OH*OW)
            let mut dpadded = ndarray::Array3::<T>::zeros((ci, h + 2 * pad, wd + 2 * pad));
            col2im_add(&dcol, ci, k, stride, oh, ow, &mut dpadded);
            let dsample = unpad_sample_grad(&dpadded, pad, pad_mode, h, wd);
            dx.index_axis_mut(Axis(0), ni).assign(&dsample);
        }
    }

    let dw = dw2
        .into_shape_with_order((co, ci, k, k))
        .expect("dw reshape")
        .into_dyn();
    (dx.map(|a| a.into_dyn()), dw, db.into_dyn())
}
