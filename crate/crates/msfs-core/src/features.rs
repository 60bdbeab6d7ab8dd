//! Frozen feature extractor for the perceptual loss.
//!
//! A three-stage conv stack (3 -> 16 -> 32 -> 64, the deeper two strided)
//! whose weights are never trained. The default mode draws them from a seeded
//! RNG so the whole suite runs offline; a weight file in the standard archive
//! format can be substituted when real pretrained features are available.

use crate::error::{Error, Result};
use crate::model::Conv2dParams;
use crate::tape::{PadMode, Scalar, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::path::PathBuf;

/// Which stage's activations the feature loss compares.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerTap {
    Shallow,
    Mid,
    Deep,
}

/// Where the frozen weights come from.
#[derive(Clone, Debug, PartialEq)]
pub enum FeatureMode {
    /// Seeded random frozen weights (offline default).
    FixedRandom { seed: u64 },
    /// Named-tensor archive with keys `feat0..feat2` `.weight`/`.bias`.
    PretrainedFile(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractorSpec {
    pub mode: FeatureMode,
    pub layer_tap: LayerTap,
}

impl Default for FeatureExtractorSpec {
    fn default() -> Self {
        Self {
            mode: FeatureMode::FixedRandom { seed: 97 },
            layer_tap: LayerTap::Mid,
        }
    }
}

/// Stage widths and strides of the stack.
const STAGES: [(usize, usize, usize); 3] = [(3, 16, 1), (16, 32, 2), (32, 64, 2)];
const KERNEL: usize = 3;
const SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor<T: Scalar> {
    pub spec: FeatureExtractorSpec,
    pub convs: Vec<Conv2dParams<T>>,
}

impl<T: Scalar> FeatureExtractor<T> {
    pub fn new(spec: FeatureExtractorSpec) -> Result<Self> {
        let convs = match &spec.mode {
            FeatureMode::FixedRandom { seed } => {
                let mut rng = ChaCha20Rng::seed_from_u64(*seed);
                STAGES
                    .iter()
                    .map(|&(ci, co, _)| Conv2dParams::xavier(co, ci, KERNEL, &mut rng))
                    .collect()
            }
            FeatureMode::PretrainedFile(path) => {
                let named = crate::checkpoint::read_tensor_archive::<T>(path)?;
                let mut convs = Vec::with_capacity(STAGES.len());
                for (i, &(ci, co, _)) in STAGES.iter().enumerate() {
                    let w = named
                        .get(&format!("feat{i}.weight"))
                        .ok_or_else(|| Error::Load(format!("missing tensor feat{i}.weight")))?;
                    let b = named
                        .get(&format!("feat{i}.bias"))
                        .ok_or_else(|| Error::Load(format!("missing tensor feat{i}.bias")))?;
                    if w.shape() != [co, ci, KERNEL, KERNEL] || b.shape() != [co] {
                        return Err(Error::Load(format!(
                            "feat{i} has shape {:?}/{:?}, expected {:?}/[{co}]",
                            w.shape(),
                            b.shape(),
                            [co, ci, KERNEL, KERNEL]
                        )));
                    }
                    convs.push(Conv2dParams {
                        weight: w.clone(),
                        bias: b.clone(),
                    });
                }
                convs
            }
        };
        Ok(Self { spec, convs })
    }

    pub fn zeros(spec: FeatureExtractorSpec) -> Self {
        Self {
            spec,
            convs: STAGES
                .iter()
                .map(|&(ci, co, _)| Conv2dParams::zeros(co, ci, KERNEL))
                .collect(),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &ndarray::ArrayD<T>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("feat{i}.weight"), &c.weight));
            out.push((format!("feat{i}.bias"), &c.bias));
        }
        out
    }

    /// Binds the frozen weights on a tape (never trainable).
    pub fn bind(&self, tape: &mut Tape<T>) -> FeatureVars {
        FeatureVars {
            convs: self
                .convs
                .iter()
                .map(|c| {
                    (
                        tape.leaf(c.weight.clone(), false),
                        tape.leaf(c.bias.clone(), false),
                    )
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FeatureVars {
    convs: Vec<(Var, Var)>,
}

/// Embeds a `(N, 3, H, W)` node up to the configured tap.
pub fn embed<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &FeatureVars,
    tap: LayerTap,
    img: Var,
) -> Var {
    let depth = match tap {
        LayerTap::Shallow => 1,
        LayerTap::Mid => 2,
        LayerTap::Deep => 3,
    };
    let slope = T::from_f64(SLOPE);
    let mut h = img;
    for i in 0..depth {
        let (w, b) = vars.convs[i];
        let stride = STAGES[i].2;
        h = tape.conv2d(h, w, b, stride, KERNEL / 2, PadMode::Zero);
        h = tape.leaky_relu(h, slope);
    }
    h
}
