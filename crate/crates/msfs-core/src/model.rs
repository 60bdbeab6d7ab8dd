//! The pyramid generator: a coarse-to-fine cascade of weight-shared
//! sub-networks conditioned on a time ratio.
//!
//! Level 1 (coarsest) sees the two input frames plus a constant ratio plane
//! (7 channels). Every finer level additionally sees the upsampled prediction
//! from the level below (10 channels). All levels share one trunk — the
//! residual blocks, head and upsampler — so the parameter count does not
//! depend on the number of pyramid levels; only the two input convolutions
//! (coarsest vs. finer) are distinct.

use crate::error::{Error, Result};
use crate::frame::{Frame, TimeRatio};
use crate::tape::{PadMode, Scalar, Tape, Var};
use ndarray::{Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// How the per-level head turns trunk features into an image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadMode {
    /// The head convolution emits the prediction directly.
    Direct,
    /// The head emits a correction added to the upsampled coarser prediction
    /// (the coarsest level, having no predecessor, still predicts directly).
    Residual,
}

/// Architecture hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeneratorConfig {
    /// Number of pyramid levels S (>= 2).
    pub pyramid_levels: usize,
    /// Residual blocks per sub-network D (>= 1).
    pub blocks_per_subnet: usize,
    /// Trunk width (default 64).
    pub filters: usize,
    /// Convolution kernel size, odd (default 5).
    pub kernel: usize,
    pub head_mode: HeadMode,
}

impl GeneratorConfig {
    pub fn new(pyramid_levels: usize, blocks_per_subnet: usize) -> Result<Self> {
        let cfg = Self {
            pyramid_levels,
            blocks_per_subnet,
            filters: 64,
            kernel: 5,
            head_mode: HeadMode::Direct,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pyramid_levels < 2 {
            return Err(Error::Config(format!(
                "pyramid_levels must be >= 2, got {}",
                self.pyramid_levels
            )));
        }
        if self.blocks_per_subnet < 1 {
            return Err(Error::Config("blocks_per_subnet must be >= 1".into()));
        }
        if self.filters < 1 {
            return Err(Error::Config("filters must be >= 1".into()));
        }
        if self.kernel % 2 == 0 || self.kernel == 0 {
            return Err(Error::Config(format!("kernel must be odd, got {}", self.kernel)));
        }
        Ok(())
    }

    /// Input dims must be multiples of this for the pyramid to halve cleanly.
    pub fn alignment(&self) -> usize {
        1 << (self.pyramid_levels - 1)
    }
}

/// One convolution's weights `(out, in, k, k)` and bias `(out,)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2dParams<T: Scalar> {
    pub weight: ArrayD<T>,
    pub bias: ArrayD<T>,
}

impl<T: Scalar> Conv2dParams<T> {
    pub fn zeros(co: usize, ci: usize, k: usize) -> Self {
        Self {
            weight: ArrayD::zeros(IxDyn(&[co, ci, k, k])),
            bias: ArrayD::zeros(IxDyn(&[co])),
        }
    }

    /// Xavier-uniform weights, zero bias.
    pub fn xavier(co: usize, ci: usize, k: usize, rng: &mut ChaCha20Rng) -> Self {
        let fan_in = (ci * k * k) as f64;
        let fan_out = (co * k * k) as f64;
        let bound = (6.0 / (fan_in + fan_out)).sqrt();
        let weight = ArrayD::from_shape_simple_fn(IxDyn(&[co, ci, k, k]), || {
            T::from_f64(rng.gen_range(-bound..bound))
        });
        Self {
            weight,
            bias: ArrayD::zeros(IxDyn(&[co])),
        }
    }

    pub fn count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    fn cast<U: Scalar>(&self) -> Conv2dParams<U> {
        Conv2dParams {
            weight: self.weight.mapv(|v| U::from_f64(v.to_f64())),
            bias: self.bias.mapv(|v| U::from_f64(v.to_f64())),
        }
    }
}

/// One residual block: x + conv2(LeakyReLU(conv1(x))).
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlockParams<T: Scalar> {
    pub conv1: Conv2dParams<T>,
    pub conv2: Conv2dParams<T>,
}

impl<T: Scalar> ResidualBlockParams<T> {
    pub fn count(&self) -> usize {
        self.conv1.count() + self.conv2.count()
    }
}

/// Channels feeding the coarsest sub-network: two frames + ratio plane.
pub const COARSEST_IN_CHANNELS: usize = 2 * 3 + 1;
/// Channels feeding finer sub-networks: two frames + upsampled prediction + ratio plane.
pub const SHARED_IN_CHANNELS: usize = 3 * 3 + 1;
/// Negative slope of every LeakyReLU in the generator.
pub const LEAKY_SLOPE: f64 = 0.2;

/// All trainable tensors of the generator, in a fixed enumeration order.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams<T: Scalar> {
    pub config: GeneratorConfig,
    /// Input adapter of the coarsest sub-network (7 -> filters).
    pub coarsest_in: Conv2dParams<T>,
    /// Input adapter shared by every finer sub-network (10 -> filters).
    pub shared_in: Conv2dParams<T>,
    /// Shared trunk: D residual blocks used by every level.
    pub blocks: Vec<ResidualBlockParams<T>>,
    /// Shared head (filters -> 3).
    pub head: Conv2dParams<T>,
    /// Shared upsampler convolution (3 -> 12), followed by pixel shuffle.
    pub upsampler: Conv2dParams<T>,
}

impl<T: Scalar> GeneratorParams<T> {
    /// Xavier initialization with a recorded seed. In direct head mode the
    /// head bias starts at 0.5 so initial predictions sit mid-range instead
    /// of on the clamp boundary.
    pub fn init(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let f = config.filters;
        let k = config.kernel;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let coarsest_in = Conv2dParams::xavier(f, COARSEST_IN_CHANNELS, k, &mut rng);
        let shared_in = Conv2dParams::xavier(f, SHARED_IN_CHANNELS, k, &mut rng);
        let blocks = (0..config.blocks_per_subnet)
            .map(|_| ResidualBlockParams {
                conv1: Conv2dParams::xavier(f, f, k, &mut rng),
                conv2: Conv2dParams::xavier(f, f, k, &mut rng),
            })
            .collect();
        let mut head = Conv2dParams::xavier(3, f, k, &mut rng);
        if config.head_mode == HeadMode::Direct {
            head.bias.fill(T::from_f64(0.5));
        }
        let upsampler = Conv2dParams::xavier(12, 3, k, &mut rng);
        Ok(Self {
            config,
            coarsest_in,
            shared_in,
            blocks,
            head,
            upsampler,
        })
    }

    pub fn zeros(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let f = config.filters;
        let k = config.kernel;
        Ok(Self {
            config,
            coarsest_in: Conv2dParams::zeros(f, COARSEST_IN_CHANNELS, k),
            shared_in: Conv2dParams::zeros(f, SHARED_IN_CHANNELS, k),
            blocks: (0..config.blocks_per_subnet)
                .map(|_| ResidualBlockParams {
                    conv1: Conv2dParams::zeros(f, f, k),
                    conv2: Conv2dParams::zeros(f, f, k),
                })
                .collect(),
            head: Conv2dParams::zeros(3, f, k),
            upsampler: Conv2dParams::zeros(12, 3, k),
        })
    }

    /// Named tensors in enumeration order (the checkpoint layout).
    pub fn named_tensors(&self) -> Vec<(String, &ArrayD<T>)> {
        let mut out = vec![
            ("coarsest_in.weight".to_string(), &self.coarsest_in.weight),
            ("coarsest_in.bias".to_string(), &self.coarsest_in.bias),
            ("shared_in.weight".to_string(), &self.shared_in.weight),
            ("shared_in.bias".to_string(), &self.shared_in.bias),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.conv1.weight"), &b.conv1.weight));
            out.push((format!("block{i}.conv1.bias"), &b.conv1.bias));
            out.push((format!("block{i}.conv2.weight"), &b.conv2.weight));
            out.push((format!("block{i}.conv2.bias"), &b.conv2.bias));
        }
        out.push(("head.weight".to_string(), &self.head.weight));
        out.push(("head.bias".to_string(), &self.head.bias));
        out.push(("upsampler.weight".to_string(), &self.upsampler.weight));
        out.push(("upsampler.bias".to_string(), &self.upsampler.bias));
        out
    }

    /// Mutable tensors in the same enumeration order as `named_tensors`.
    pub fn tensors_mut(&mut self) -> Vec<&mut ArrayD<T>> {
        let mut out = vec![
            &mut self.coarsest_in.weight,
            &mut self.coarsest_in.bias,
            &mut self.shared_in.weight,
            &mut self.shared_in.bias,
        ];
        for b in &mut self.blocks {
            out.push(&mut b.conv1.weight);
            out.push(&mut b.conv1.bias);
            out.push(&mut b.conv2.weight);
            out.push(&mut b.conv2.bias);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out.push(&mut self.upsampler.weight);
        out.push(&mut self.upsampler.bias);
        out
    }

    /// Total parameter count by enumerating the actual tensors.
    pub fn actual_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Convert between scalar types (f64 gradcheck <-> f32 training).
    pub fn cast<U: Scalar>(&self) -> GeneratorParams<U> {
        GeneratorParams {
            config: self.config,
            coarsest_in: self.coarsest_in.cast(),
            shared_in: self.shared_in.cast(),
            blocks: self
                .blocks
                .iter()
                .map(|b| ResidualBlockParams {
                    conv1: b.conv1.cast(),
                    conv2: b.conv2.cast(),
                })
                .collect(),
            head: self.head.cast(),
            upsampler: self.upsampler.cast(),
        }
    }

    /// Registers every tensor on a tape, in enumeration order.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> GeneratorVars {
        let vars = self
            .named_tensors()
            .iter()
            .map(|(_, t)| tape.leaf((*t).clone(), trainable))
            .collect();
        GeneratorVars {
            vars,
            blocks: self.blocks.len(),
        }
    }
}

/// Tape handles for a bound generator, indexed by the checkpoint layout.
#[derive(Clone, Debug)]
pub struct GeneratorVars {
    vars: Vec<Var>,
    blocks: usize,
}

impl GeneratorVars {
    pub fn all(&self) -> &[Var] {
        &self.vars
    }

    fn pair(&self, i: usize) -> (Var, Var) {
        (self.vars[i], self.vars[i + 1])
    }

    pub fn coarsest_in(&self) -> (Var, Var) {
        self.pair(0)
    }

    pub fn shared_in(&self) -> (Var, Var) {
        self.pair(2)
    }

    pub fn block(&self, i: usize) -> ((Var, Var), (Var, Var)) {
        let base = 4 + 4 * i;
        (self.pair(base), self.pair(base + 2))
    }

    pub fn head(&self) -> (Var, Var) {
        self.pair(4 + 4 * self.blocks)
    }

    pub fn upsampler(&self) -> (Var, Var) {
        self.pair(6 + 4 * self.blocks)
    }
}

/// Breakdown of the closed-form parameter count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamBreakdown {
    pub coarsest_in: usize,
    pub shared_in: usize,
    pub per_block: usize,
    pub blocks_total: usize,
    pub head: usize,
    pub upsampler: usize,
    pub discriminator: usize,
    pub total: usize,
}

fn conv_count(co: usize, ci: usize, k: usize) -> usize {
    co * ci * k * k + co
}

/// Exact parameter count from the architecture alone. Independent of the
/// number of pyramid levels: the trunk is shared across every level.
pub fn count_parameters(cfg: &GeneratorConfig, include_discriminator: bool) -> ParamBreakdown {
    let f = cfg.filters;
    let k = cfg.kernel;
    let coarsest_in = conv_count(f, COARSEST_IN_CHANNELS, k);
    let shared_in = conv_count(f, SHARED_IN_CHANNELS, k);
    let per_block = 2 * conv_count(f, f, k);
    let blocks_total = cfg.blocks_per_subnet * per_block;
    let head = conv_count(3, f, k);
    let upsampler = conv_count(12, 3, k);
    let discriminator = if include_discriminator {
        crate::discriminator::DiscriminatorConfig::default().count_parameters()
    } else {
        0
    };
    ParamBreakdown {
        coarsest_in,
        shared_in,
        per_block,
        blocks_total,
        head,
        upsampler,
        discriminator,
        total: coarsest_in + shared_in + blocks_total + head + upsampler + discriminator,
    }
}

/// A constant plane of the given ratio value.
pub fn make_ratio_plane(r: TimeRatio, h: usize, w: usize) -> Result<Array2<f64>> {
    if h == 0 || w == 0 {
        return Err(Error::Shape(format!("ratio plane needs h, w >= 1, got {h}x{w}")));
    }
    Ok(Array2::from_elem((h, w), r.value()))
}

/// Builds the S-level pyramid of a frame by repeated 2x2 mean pooling.
/// Returned coarse to fine; the last level is the input, bit-exact.
pub fn downsample_pyramid(x: &Frame, levels: usize) -> Result<Vec<Frame>> {
    if levels < 1 {
        return Err(Error::Config("pyramid needs at least one level".into()));
    }
    let align = 1usize << (levels - 1);
    if x.height() % align != 0 || x.width() % align != 0 {
        return Err(Error::Shape(format!(
            "frame {}x{} is not a multiple of 2^(S-1) = {align}; mirror-pad first",
            x.height(),
            x.width()
        )));
    }
    let mut out = vec![x.clone()];
    for _ in 1..levels {
        let prev = out.last().unwrap().data();
        let (c, h, w) = (3, prev.shape()[1], prev.shape()[2]);
        let mut next = ndarray::Array3::<f64>::zeros((c, h / 2, w / 2));
        for ci in 0..c {
            for y in 0..h / 2 {
                for xx in 0..w / 2 {
                    next[(ci, y, xx)] = 0.25
                        * (prev[(ci, 2 * y, 2 * xx)]
                            + prev[(ci, 2 * y, 2 * xx + 1)]
                            + prev[(ci, 2 * y + 1, 2 * xx)]
                            + prev[(ci, 2 * y + 1, 2 * xx + 1)]);
                }
            }
        }
        out.push(Frame::new_clamped(next)?);
    }
    out.reverse();
    Ok(out)
}

fn conv_same<T: Scalar>(tape: &mut Tape<T>, x: Var, (w, b): (Var, Var), k: usize) -> Var {
    tape.conv2d(x, w, b, 1, k / 2, PadMode::Reflect)
}

fn residual_block_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    block: ((Var, Var), (Var, Var)),
    k: usize,
) -> Var {
    let h = conv_same(tape, x, block.0, k);
    let h = tape.leaky_relu(h, T::from_f64(LEAKY_SLOPE));
    let h = conv_same(tape, h, block.1, k);
    tape.add(x, h)
}

fn subnet_trunk<T: Scalar>(tape: &mut Tape<T>, feat: Var, vars: &GeneratorVars, cfg: &GeneratorConfig) -> Var {
    let mut h = feat;
    for i in 0..cfg.blocks_per_subnet {
        h = residual_block_on_tape(tape, h, vars.block(i), cfg.kernel);
    }
    conv_same(tape, h, vars.head(), cfg.kernel)
}

fn ratio_plane_const<T: Scalar>(tape: &mut Tape<T>, ratios: &[T], h: usize, w: usize) -> Var {
    let n = ratios.len();
    let mut plane = ArrayD::<T>::zeros(IxDyn(&[n, 1, h, w]));
    for (i, r) in ratios.iter().enumerate() {
        plane
            .index_axis_mut(ndarray::Axis(0), i)
            .fill(*r);
    }
    tape.constant(plane)
}

/// On-tape pixel-shuffle upsampler: 3 -> 12 channels, then 2x shuffle.
pub fn upsample2x_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    y: Var,
    vars: &GeneratorVars,
    cfg: &GeneratorConfig,
) -> Var {
    let c = conv_same(tape, y, vars.upsampler(), cfg.kernel);
    tape.pixel_shuffle2(c)
}

/// Full coarse-to-fine synthesis on a tape. `x1`, `x2` are `(N, 3, H, W)`
/// nodes (constants or earlier predictions); `ratios` holds one ratio per
/// batch element. Returns every level's clamped prediction, coarse to fine.
pub fn forward_batch<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &GeneratorVars,
    cfg: &GeneratorConfig,
    x1: Var,
    x2: Var,
    ratios: &[T],
) -> Result<Vec<Var>> {
    let shape = tape.value(x1).shape().to_vec();
    if shape != tape.value(x2).shape() {
        return Err(Error::Shape(format!(
            "input pair shapes differ: {:?} vs {:?}",
            shape,
            tape.value(x2).shape()
        )));
    }
    if shape.len() != 4 || shape[1] != 3 {
        return Err(Error::Shape(format!("expected (N,3,H,W), got {shape:?}")));
    }
    if shape[0] != ratios.len() {
        return Err(Error::Shape(format!(
            "batch {} vs {} ratios",
            shape[0],
            ratios.len()
        )));
    }
    let (h, w) = (shape[2], shape[3]);
    let s = cfg.pyramid_levels;
    let align = cfg.alignment();
    if h % align != 0 || w % align != 0 {
        return Err(Error::Shape(format!(
            "input {h}x{w} not a multiple of 2^(S-1) = {align}; mirror-pad first"
        )));
    }

    // Pyramids, fine to coarse, then reversed.
    let mut p1 = vec![x1];
    let mut p2 = vec![x2];
    for _ in 1..s {
        let d1 = *p1.last().unwrap();
        let d2 = *p2.last().unwrap();
        p1.push(tape.avg_pool2(d1));
        p2.push(tape.avg_pool2(d2));
    }
    p1.reverse();
    p2.reverse();

    let k = cfg.kernel;
    let mut predictions = Vec::with_capacity(s);
    let mut prev: Option<Var> = None;
    for level in 0..s {
        let (lh, lw) = {
            let sh = tape.value(p1[level]).shape();
            (sh[2], sh[3])
        };
        let rplane = ratio_plane_const(tape, ratios, lh, lw);
        let y = match prev {
            None => {
                let cat = tape.concat_channels(&[p1[level], p2[level], rplane]);
                let feat = conv_same(tape, cat, vars.coarsest_in(), k);
                subnet_trunk(tape, feat, vars, cfg)
            }
            Some(y_coarse) => {
                let y_up = upsample2x_on_tape(tape, y_coarse, vars, cfg);
                let cat = tape.concat_channels(&[p1[level], p2[level], y_up, rplane]);
                let feat = conv_same(tape, cat, vars.shared_in(), k);
                let out = subnet_trunk(tape, feat, vars, cfg);
                match cfg.head_mode {
                    HeadMode::Direct => out,
                    HeadMode::Residual => tape.add(y_up, out),
                }
            }
        };
        let y = tape.clamp01(y);
        predictions.push(y);
        prev = Some(y);
    }
    Ok(predictions)
}

fn frame_pair_tensor<T: Scalar>(x: &Frame) -> ArrayD<T> {
    x.to_tensor::<T>()
}

/// Synthesizes the frame at time ratio `r` from an aligned input pair.
/// Inference-only convenience over `forward_batch` (no gradients recorded).
pub fn synthesize<T: Scalar>(
    params: &GeneratorParams<T>,
    x1: &Frame,
    x2: &Frame,
    r: TimeRatio,
) -> Result<Frame> {
    if !x1.same_shape(x2) {
        return Err(Error::Shape(format!(
            "input pair {}x{} vs {}x{}",
            x1.height(),
            x1.width(),
            x2.height(),
            x2.width()
        )));
    }
    let mut tape = Tape::<T>::new();
    let vars = params.bind(&mut tape, false);
    let a = tape.constant(frame_pair_tensor::<T>(x1));
    let b = tape.constant(frame_pair_tensor::<T>(x2));
    let preds = forward_batch(&mut tape, &vars, &params.config, a, b, &[T::from_f64(r.value())])?;
    Frame::from_tensor(tape.value(*preds.last().unwrap()))
}

/// Coarsest-level prediction from an input pair (7-channel conditioning).
pub fn coarsest_forward<T: Scalar>(
    params: &GeneratorParams<T>,
    x1: &Frame,
    x2: &Frame,
    r: TimeRatio,
) -> Result<Frame> {
    if !x1.same_shape(x2) {
        return Err(Error::Shape("coarsest_forward: input sizes differ".into()));
    }
    let mut tape = Tape::<T>::new();
    let vars = params.bind(&mut tape, false);
    let a = tape.constant(frame_pair_tensor::<T>(x1));
    let b = tape.constant(frame_pair_tensor::<T>(x2));
    let rplane = ratio_plane_const(&mut tape, &[T::from_f64(r.value())], x1.height(), x1.width());
    let cat = tape.concat_channels(&[a, b, rplane]);
    let feat = conv_same(&mut tape, cat, vars.coarsest_in(), params.config.kernel);
    let out = subnet_trunk(&mut tape, feat, &vars, &params.config);
    let out = tape.clamp01(out);
    Frame::from_tensor(tape.value(out))
}

/// One finer-level prediction given the upsampled coarser output
/// (10-channel conditioning).
pub fn subnet_forward<T: Scalar>(
    params: &GeneratorParams<T>,
    x1: &Frame,
    x2: &Frame,
    y_prev_up: &Frame,
    r: TimeRatio,
) -> Result<Frame> {
    if !x1.same_shape(x2) || !x1.same_shape(y_prev_up) {
        return Err(Error::Shape("subnet_forward: input sizes differ".into()));
    }
    let mut tape = Tape::<T>::new();
    let vars = params.bind(&mut tape, false);
    let a = tape.constant(frame_pair_tensor::<T>(x1));
    let b = tape.constant(frame_pair_tensor::<T>(x2));
    let up = tape.constant(frame_pair_tensor::<T>(y_prev_up));
    let rplane = ratio_plane_const(&mut tape, &[T::from_f64(r.value())], x1.height(), x1.width());
    let cat = tape.concat_channels(&[a, b, up, rplane]);
    let feat = conv_same(&mut tape, cat, vars.shared_in(), params.config.kernel);
    let out = subnet_trunk(&mut tape, feat, &vars, &params.config);
    let out = match params.config.head_mode {
        HeadMode::Direct => out,
        HeadMode::Residual => tape.add(up, out),
    };
    let out = tape.clamp01(out);
    Frame::from_tensor(tape.value(out))
}

/// Standalone residual block application on a feature map `(filters, H, W)`.
pub fn residual_block<T: Scalar>(
    x: &ArrayD<T>,
    block: &ResidualBlockParams<T>,
) -> Result<ArrayD<T>> {
    let f = block.conv1.in_channels();
    let shape = x.shape().to_vec();
    let (batched, c) = match shape.as_slice() {
        [_, c, _, _] => (true, *c),
        [c, _, _] => (false, *c),
        _ => return Err(Error::Shape(format!("expected 3- or 4-d feature map, got {shape:?}"))),
    };
    if c != f {
        return Err(Error::Shape(format!("residual block expects {f} channels, got {c}")));
    }
    let x4 = if batched {
        x.clone()
    } else {
        x.clone().insert_axis(ndarray::Axis(0))
    };
    let mut tape = Tape::<T>::new();
    let xv = tape.constant(x4);
    let w1 = tape.constant(block.conv1.weight.clone());
    let b1 = tape.constant(block.conv1.bias.clone());
    let w2 = tape.constant(block.conv2.weight.clone());
    let b2 = tape.constant(block.conv2.bias.clone());
    let k = block.conv1.kernel();
    let y = residual_block_on_tape(&mut tape, xv, ((w1, b1), (w2, b2)), k);
    let out = tape.value(y).clone();
    Ok(if batched {
        out
    } else {
        out.remove_axis(ndarray::Axis(0))
    })
}

/// Standalone 2x pixel-shuffle upsampling of a 3-channel frame. Values are
/// clamped into range on output (the in-cascade path stays unclamped).
pub fn upsample2x<T: Scalar>(y: &Frame, upsampler: &Conv2dParams<T>) -> Result<Frame> {
    if upsampler.in_channels() != 3 || upsampler.out_channels() != 12 {
        return Err(Error::Shape(format!(
            "upsampler must map 3 -> 12 channels, got {} -> {}",
            upsampler.in_channels(),
            upsampler.out_channels()
        )));
    }
    let mut tape = Tape::<T>::new();
    let yv = tape.constant(y.to_tensor::<T>());
    let w = tape.constant(upsampler.weight.clone());
    let b = tape.constant(upsampler.bias.clone());
    let k = upsampler.kernel();
    let c = tape.conv2d(yv, w, b, 1, k / 2, PadMode::Reflect);
    let s = tape.pixel_shuffle2(c);
    Frame::from_tensor(tape.value(s))
}
