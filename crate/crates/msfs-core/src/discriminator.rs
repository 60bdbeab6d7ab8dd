//! The adversarial critic: a small strided conv stack ending in one logit
//! per image (or a patch grid reduced by its mean).

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::model::Conv2dParams;
use crate::tape::{PadMode, Scalar, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Critic architecture. Channel widths double per layer from `base_filters`,
/// capped at 512; the final layer maps to a single channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    pub layers: usize,
    pub base_filters: usize,
    pub kernel: usize,
    /// LeakyReLU negative slope.
    pub slope: f64,
    /// When true the adversarial loss treats each cell of the final logit
    /// grid as a decision; when false the grid is averaged into one logit
    /// per image first. The reported forward logit is the grid mean either way.
    pub patch_grid: bool,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            layers: 5,
            base_filters: 64,
            kernel: 5,
            slope: 0.2,
            patch_grid: false,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 {
            return Err(Error::Config("discriminator needs at least one layer".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config("discriminator kernel must be odd".into()));
        }
        Ok(())
    }

    /// Smallest input the stack accepts (one pixel left after all strides).
    pub fn min_input(&self) -> usize {
        1 << self.layers
    }

    /// (in, out) channels of layer `i`.
    fn layer_channels(&self, i: usize) -> (usize, usize) {
        let width = |j: usize| (self.base_filters << j).min(512);
        let ci = if i == 0 { 3 } else { width(i - 1) };
        let co = if i + 1 == self.layers { 1 } else { width(i) };
        (ci, co)
    }

    pub fn count_parameters(&self) -> usize {
        (0..self.layers)
            .map(|i| {
                let (ci, co) = self.layer_channels(i);
                co * ci * self.kernel * self.kernel + co
            })
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorParams<T: Scalar> {
    pub config: DiscriminatorConfig,
    pub convs: Vec<Conv2dParams<T>>,
}

impl<T: Scalar> DiscriminatorParams<T> {
    pub fn init(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let convs = (0..config.layers)
            .map(|i| {
                let (ci, co) = config.layer_channels(i);
                Conv2dParams::xavier(co, ci, config.kernel, &mut rng)
            })
            .collect();
        Ok(Self { config, convs })
    }

    pub fn zeros(config: DiscriminatorConfig) -> Result<Self> {
        config.validate()?;
        let convs = (0..config.layers)
            .map(|i| {
                let (ci, co) = config.layer_channels(i);
                Conv2dParams::zeros(co, ci, config.kernel)
            })
            .collect();
        Ok(Self { config, convs })
    }

    pub fn named_tensors(&self) -> Vec<(String, &ndarray::ArrayD<T>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("disc{i}.weight"), &c.weight));
            out.push((format!("disc{i}.bias"), &c.bias));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut ndarray::ArrayD<T>> {
        let mut out = Vec::new();
        for c in &mut self.convs {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out
    }

    pub fn actual_count(&self) -> usize {
        self.convs.iter().map(|c| c.count()).sum()
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> DiscriminatorVars {
        DiscriminatorVars {
            convs: self
                .convs
                .iter()
                .map(|c| {
                    (
                        tape.leaf(c.weight.clone(), trainable),
                        tape.leaf(c.bias.clone(), trainable),
                    )
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DiscriminatorVars {
    convs: Vec<(Var, Var)>,
}

impl DiscriminatorVars {
    /// Leaf nodes in the same order as `tensors_mut`.
    pub fn all(&self) -> Vec<Var> {
        self.convs.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

/// Runs a `(N, 3, H, W)` node through the critic. Output shape depends on
/// `patch_grid`: `(N, 1, 1, 1)` per-image logits when false, the raw
/// `(N, 1, h, w)` grid when true.
pub fn critic_logits<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &DiscriminatorVars,
    cfg: &DiscriminatorConfig,
    img: Var,
) -> Result<Var> {
    let shape = tape.value(img).shape().to_vec();
    if shape.len() != 4 || shape[1] != 3 {
        return Err(Error::Shape(format!("critic expects (N,3,H,W), got {shape:?}")));
    }
    let min = cfg.min_input();
    if shape[2] < min || shape[3] < min {
        return Err(Error::Shape(format!(
            "critic input {}x{} below minimum receptive size {min}",
            shape[2], shape[3]
        )));
    }
    let slope = T::from_f64(cfg.slope);
    let mut h = img;
    for (i, (w, b)) in vars.convs.iter().enumerate() {
        h = tape.conv2d(h, *w, *b, 2, cfg.kernel / 2, PadMode::Zero);
        if i + 1 < cfg.layers {
            h = tape.leaky_relu(h, slope);
        }
    }
    if cfg.patch_grid {
        Ok(h)
    } else {
        Ok(tape.mean_hw(h))
    }
}

/// Scalar logit for one frame: mean of the final logit map.
pub fn discriminator_forward<T: Scalar>(
    params: &DiscriminatorParams<T>,
    img: &Frame,
) -> Result<f64> {
    let mut tape = Tape::<T>::new();
    let vars = params.bind(&mut tape, false);
    let x = tape.constant(img.to_tensor::<T>());
    let logits = critic_logits(&mut tape, &vars, &params.config, x)?;
    let mean = tape.global_mean(logits);
    Ok(tape.scalar(mean).to_f64())
}
