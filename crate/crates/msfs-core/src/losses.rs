//! Training objectives: pixel, perceptual, adversarial, transitive
//! consistency (both variants), and the temporal-TV ablation terms.
//!
//! Every loss exists twice: a pure `f64` function over frames/arrays used by
//! oracles and reporting, and an on-tape builder used by training. Both
//! compute the same quantity; gradient tests cover the tape route.

use crate::error::{Error, Result};
use crate::features::{embed, FeatureExtractor, LayerTap};
use crate::frame::{Frame, TimeRatio};
use crate::model::{forward_batch, GeneratorConfig, GeneratorVars};
use crate::tape::{Scalar, Tape, Var};
use ndarray::Array3;

/// Weights of the combined objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_feat: f64,
    pub lambda_gan: f64,
    pub lambda_tran: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_feat: 2e-5,
            lambda_gan: 5e-2,
            lambda_tran: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_feat < 0.0 || self.lambda_gan < 0.0 || self.lambda_tran < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Which consistency term trains the model. `Off` raises the pixel weight to
/// 1.4; `Tv`/`WeightedTv` replace the transitive term with the TV penalties.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransitiveVariant {
    Predicted,
    Observed,
    Off,
    Tv,
    WeightedTv,
}

impl TransitiveVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "predicted" => Ok(Self::Predicted),
            "observed" => Ok(Self::Observed),
            "off" => Ok(Self::Off),
            "tv" => Ok(Self::Tv),
            "weighted_tv" => Ok(Self::WeightedTv),
            _ => Err(Error::Config(format!(
                "unknown transitive variant '{s}' (expected predicted|observed|off|tv|weighted_tv)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Predicted => "predicted",
            Self::Observed => "observed",
            Self::Off => "off",
            Self::Tv => "tv",
            Self::WeightedTv => "weighted_tv",
        }
    }

    /// Pixel-loss multiplier: 1.4 when the consistency term is off.
    pub fn pixel_weight(&self) -> f64 {
        if *self == Self::Off {
            1.4
        } else {
            1.0
        }
    }
}

fn mean_abs_diff(a: &Array3<f64>, b: &Array3<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "loss inputs differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let sum: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum();
    Ok(sum / a.len() as f64)
}

/// Mean absolute difference over all pixels and channels.
pub fn pixel_loss(y: &Frame, target: &Frame) -> Result<f64> {
    mean_abs_diff(y.data(), target.data())
}

/// RMS distance between frozen embeddings of the two frames.
pub fn feature_loss(y: &Frame, target: &Frame, fx: &FeatureExtractor<f64>) -> Result<f64> {
    if !y.same_shape(target) {
        return Err(Error::Shape("feature_loss: shape mismatch".into()));
    }
    let mut tape = Tape::<f64>::new();
    let vars = fx.bind(&mut tape);
    let a = tape.constant(y.to_tensor::<f64>());
    let b = tape.constant(target.to_tensor::<f64>());
    let ea = embed(&mut tape, &vars, fx.spec.layer_tap, a);
    let eb = embed(&mut tape, &vars, fx.spec.layer_tap, b);
    let l = tape.rms_diff(ea, eb);
    Ok(tape.scalar(l))
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Binary-cross-entropy adversarial pair from raw logits:
/// `loss_D = -[ln sigma(d_real) + ln(1 - sigma(d_fake))]`, and the
/// non-saturating generator term `loss_G = -ln sigma(d_fake)`.
pub fn gan_losses(d_real: f64, d_fake: f64) -> (f64, f64) {
    let loss_d = softplus(-d_real) + softplus(d_fake);
    let loss_g = softplus(-d_fake);
    (loss_d, loss_g)
}

/// The literal saturating generator term `ln(1 - sigma(d_fake))`, minimized.
pub fn saturating_generator_loss(d_fake: f64) -> f64 {
    -softplus(d_fake)
}

/// Ratios used by the consistency passes for a triplet `(t1, t2, tp)`:
/// the synthesis ratio, the ratio mapping `(x1, y)` onto `x2`, and the
/// ratio mapping `(y, x2)` onto `x1`.
pub fn transitive_ratios(t1: f64, t2: f64, tp: f64) -> Result<(f64, f64, f64)> {
    if !(t1 < t2) {
        return Err(Error::InvalidTriplet(format!("need t1 < t2, got {t1} >= {t2}")));
    }
    if tp == t1 || tp == t2 {
        return Err(Error::InvalidTriplet(format!(
            "tp must differ from both anchors, got t=({t1}, {t2}, {tp})"
        )));
    }
    let main = (tp - t1) / (t2 - t1);
    let fwd = (t2 - t1) / (tp - t1);
    let bwd = (t1 - tp) / (t2 - tp);
    Ok((main, fwd, bwd))
}

/// Transitive-consistency loss over raw channel arrays. `g` is the synthesis
/// map; the predicted variant first synthesizes the middle frame, the
/// observed variant substitutes the recorded one.
#[allow(clippy::too_many_arguments)]
pub fn transitive_loss(
    g: &mut dyn FnMut(&Array3<f64>, &Array3<f64>, TimeRatio) -> Result<Array3<f64>>,
    x1: &Array3<f64>,
    x2: &Array3<f64>,
    xp: &Array3<f64>,
    t1: f64,
    t2: f64,
    tp: f64,
    variant: TransitiveVariant,
) -> Result<f64> {
    let (r_main, r_fwd, r_bwd) = transitive_ratios(t1, t2, tp)?;
    let mid = match variant {
        TransitiveVariant::Predicted => g(x1, x2, TimeRatio::new(r_main)?)?,
        TransitiveVariant::Observed => xp.clone(),
        _ => {
            return Err(Error::Config(format!(
                "transitive_loss computes the {} arm via TV/pixel terms, not here",
                variant.name()
            )))
        }
    };
    let to_x2 = g(x1, &mid, TimeRatio::new(r_fwd)?)?;
    let to_x1 = g(&mid, x2, TimeRatio::new(r_bwd)?)?;
    Ok(mean_abs_diff(&to_x2, x2)? + mean_abs_diff(&to_x1, x1)?)
}

/// TV weights `(w1, w2)` for prediction time `tp` between (or beyond) the
/// anchors; they always sum to 2 and are equal at the midpoint.
pub fn tv_weights(t1: f64, t2: f64, tp: f64) -> (f64, f64) {
    let d1 = (t1 - tp).abs();
    let d2 = (t2 - tp).abs();
    let denom = d1 + d2;
    (2.0 * d2 / denom, 2.0 * d1 / denom)
}

/// Temporal total-variation penalty: distance of the prediction to each
/// input, optionally weighted by temporal proximity.
#[allow(clippy::too_many_arguments)]
pub fn temporal_tv_loss(
    y: &Frame,
    x1: &Frame,
    x2: &Frame,
    t1: f64,
    t2: f64,
    tp: f64,
    weighted: bool,
) -> Result<f64> {
    if !(t1 < t2) {
        return Err(Error::InvalidTriplet(format!("need t1 < t2, got {t1} >= {t2}")));
    }
    let (w1, w2) = if weighted {
        tv_weights(t1, t2, tp)
    } else {
        (1.0, 1.0)
    };
    Ok(w1 * mean_abs_diff(y.data(), x1.data())? + w2 * mean_abs_diff(y.data(), x2.data())?)
}

/// Weighted sum of the four loss components.
pub fn total_objective(l_pix: f64, l_feat: f64, l_gan_g: f64, l_tran: f64, w: &LossWeights) -> f64 {
    l_pix + w.lambda_feat * l_feat + w.lambda_gan * l_gan_g + w.lambda_tran * l_tran
}

// ---- on-tape builders ----

/// `mean |y - target|` as a node.
pub fn pixel_loss_on_tape<T: Scalar>(tape: &mut Tape<T>, y: Var, target: Var) -> Var {
    tape.l1_mean(y, target)
}

/// RMS feature distance as a node; the extractor weights stay frozen.
pub fn feature_loss_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    fvars: &crate::features::FeatureVars,
    tap: LayerTap,
    y: Var,
    target: Var,
) -> Var {
    let ey = embed(tape, fvars, tap, y);
    let et = embed(tape, fvars, tap, target);
    tape.rms_diff(ey, et)
}

/// Discriminator objective from two logit nodes (any shape; reduced by mean).
pub fn gan_loss_d_on_tape<T: Scalar>(tape: &mut Tape<T>, d_real: Var, d_fake: Var) -> Var {
    // softplus(-x) = softplus(x) - x, applied under the mean reduction.
    let neg_real = {
        let sp = tape.softplus(d_real);
        let m_sp = tape.global_mean(sp);
        let m_x = tape.global_mean(d_real);
        tape.weighted_sum(&[(m_sp, T::one()), (m_x, -T::one())])
    };
    let fake_term = {
        let sp = tape.softplus(d_fake);
        tape.global_mean(sp)
    };
    tape.weighted_sum(&[(neg_real, T::one()), (fake_term, T::one())])
}

/// Generator adversarial term from the fake logits.
pub fn gan_loss_g_on_tape<T: Scalar>(tape: &mut Tape<T>, d_fake: Var, saturating: bool) -> Var {
    let sp = tape.softplus(d_fake);
    let m_sp = tape.global_mean(sp);
    if saturating {
        // ln(1 - sigma(x)) = -softplus(x)
        tape.weighted_sum(&[(m_sp, -T::one())])
    } else {
        // -ln sigma(x) = softplus(-x) = softplus(x) - x
        let m_x = tape.global_mean(d_fake);
        tape.weighted_sum(&[(m_sp, T::one()), (m_x, -T::one())])
    }
}

/// Both consistency passes on-tape. `mid` is the predicted middle node
/// (gradients flow through it) or an observed-frame constant. The per-sample
/// ratio slices come from `transitive_ratios`.
#[allow(clippy::too_many_arguments)]
pub fn transitive_loss_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    gvars: &GeneratorVars,
    gcfg: &GeneratorConfig,
    x1: Var,
    x2: Var,
    mid: Var,
    ratios_fwd: &[T],
    ratios_bwd: &[T],
) -> Result<Var> {
    let to_x2 = *forward_batch(tape, gvars, gcfg, x1, mid, ratios_fwd)?
        .last()
        .unwrap();
    let to_x1 = *forward_batch(tape, gvars, gcfg, mid, x2, ratios_bwd)?
        .last()
        .unwrap();
    let a = tape.l1_mean(to_x2, x2);
    let b = tape.l1_mean(to_x1, x1);
    Ok(tape.weighted_sum(&[(a, T::one()), (b, T::one())]))
}

/// TV penalty as a node with precomputed scalar weights.
pub fn tv_loss_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    y: Var,
    x1: Var,
    x2: Var,
    w1: f64,
    w2: f64,
) -> Var {
    let a = tape.l1_mean(y, x1);
    let b = tape.l1_mean(y, x2);
    tape.weighted_sum(&[(a, T::from_f64(w1)), (b, T::from_f64(w2))])
}

/// Combines component nodes with the configured weights (and an extra pixel
/// multiplier for the transitive-off arm).
pub fn total_objective_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    l_pix: Var,
    l_feat: Option<Var>,
    l_gan_g: Option<Var>,
    l_tran: Option<Var>,
    w: &LossWeights,
    pixel_weight: f64,
) -> Var {
    let mut terms = vec![(l_pix, T::from_f64(pixel_weight))];
    if let Some(f) = l_feat {
        terms.push((f, T::from_f64(w.lambda_feat)));
    }
    if let Some(g) = l_gan_g {
        terms.push((g, T::from_f64(w.lambda_gan)));
    }
    if let Some(t) = l_tran {
        terms.push((t, T::from_f64(w.lambda_tran)));
    }
    tape.weighted_sum(&terms)
}
