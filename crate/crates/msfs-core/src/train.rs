//! Two-phase optimization: generator pretraining on the reconstruction
//! objective, then adversarial training with a paired critic. Emits per-epoch
//! metric curves and versioned checkpoints that resume bit-exactly.

use std::path::Path;

use ndarray::{Array4, ArrayD, Ix4, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::checkpoint::{read_tensor_archive_with_meta, write_tensor_archive};
use crate::data::{sample_training_triplet, split_corpus, AugmentSpec, VideoSequence};
use crate::discriminator::{critic_logits, DiscriminatorConfig, DiscriminatorParams};
use crate::error::{Error, Result};
use crate::eval::{evaluate_dataset, Predictor};
use crate::features::{FeatureExtractor, FeatureExtractorSpec, FeatureMode, LayerTap};
use crate::frame::Frame;
use crate::losses::{
    feature_loss_on_tape, gan_loss_d_on_tape, gan_loss_g_on_tape, pixel_loss_on_tape,
    total_objective_on_tape, transitive_loss_on_tape, transitive_ratios, tv_loss_on_tape,
    tv_weights, LossWeights, TransitiveVariant,
};
use crate::metrics::{psnr, ssim};
use crate::model::{forward_batch, GeneratorConfig, GeneratorParams, HeadMode};
use crate::tape::{Tape, Var};

/// Upper bound on the activation memory a single optimization step may
/// request; `TrainConfig::validate` rejects configurations above it.
pub const MEMORY_BUDGET_BYTES: u64 = 8 << 30;

/// Hyperparameters for both phases plus the data-pipeline knobs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub lr0: f64,
    pub batch: usize,
    pub patch: usize,
    pub iters_per_epoch: usize,
    pub epochs_pretrain: usize,
    pub epochs_adv: usize,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub transitive_variant: TransitiveVariant,
    pub seed: u64,
    /// Largest frame spacing when sampling triplets.
    pub max_gap: usize,
    /// Fraction of corpus videos held out for validation.
    pub val_fraction: f64,
    /// Epochs between validation rows in the curve.
    pub eval_every: usize,
    /// Additive Gaussian noise during augmentation.
    pub noise_sigma: f64,
    /// Smooth-patch rejection threshold.
    pub variance_threshold: f64,
    /// Random flips and quarter turns during augmentation.
    pub augment_geom: bool,
    pub weights: LossWeights,
    pub feature_spec: FeatureExtractorSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            lr0: 1e-4,
            batch: 8,
            patch: 128,
            iters_per_epoch: 200,
            epochs_pretrain: 10,
            epochs_adv: 10,
            decay_factor: 0.5,
            decay_every: 50,
            transitive_variant: TransitiveVariant::Predicted,
            seed: 7,
            max_gap: 3,
            val_fraction: 0.1,
            eval_every: 1,
            noise_sigma: 0.1,
            variance_threshold: 0.005,
            augment_geom: true,
            weights: LossWeights::default(),
            feature_spec: FeatureExtractorSpec::default(),
        }
    }
}

impl TrainConfig {
    /// Rough activation footprint of one optimization step: every node value
    /// and gradient across all pyramid levels, times the number of generator
    /// passes the transitive variant requires.
    pub fn activation_bytes(&self, gcfg: &GeneratorConfig) -> u64 {
        let passes: u64 = match self.transitive_variant {
            TransitiveVariant::Predicted | TransitiveVariant::Observed => 3,
            _ => 1,
        };
        let per_pixel_tensors = (4 * gcfg.blocks_per_subnet + 10) as u64;
        let spatial = (self.patch as u64 * self.patch as u64) * 4 / 3;
        self.batch as u64 * spatial * gcfg.filters as u64 * per_pixel_tensors * 2 * passes * 4
    }

    pub fn validate(&self, gcfg: &GeneratorConfig, dcfg: &DiscriminatorConfig) -> Result<()> {
        gcfg.validate()?;
        dcfg.validate()?;
        self.weights.validate()?;
        let positive = [
            ("lr0", self.lr0),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("decay_factor", self.decay_factor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::Config("beta1/beta2 must be < 1".into()));
        }
        if self.batch == 0 || self.iters_per_epoch == 0 || self.decay_every == 0 {
            return Err(Error::Config(
                "batch, iters_per_epoch, decay_every must be >= 1".into(),
            ));
        }
        if self.max_gap == 0 {
            return Err(Error::Config("max_gap must be >= 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction must be in [0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.patch < 16 {
            return Err(Error::Config(format!("patch must be >= 16, got {}", self.patch)));
        }
        if self.patch % gcfg.alignment() != 0 {
            return Err(Error::Config(format!(
                "patch {} must be a multiple of the pyramid alignment {}",
                self.patch,
                gcfg.alignment()
            )));
        }
        if self.epochs_adv > 0 && self.patch < dcfg.min_input() {
            return Err(Error::Config(format!(
                "patch {} below critic receptive minimum {}",
                self.patch,
                dcfg.min_input()
            )));
        }
        let need = self.activation_bytes(gcfg);
        if need > MEMORY_BUDGET_BYTES {
            return Err(Error::Config(format!(
                "batch {} x patch {} needs ~{} MB, budget is {} MB",
                self.batch,
                self.patch,
                need >> 20,
                MEMORY_BUDGET_BYTES >> 20
            )));
        }
        Ok(())
    }
}

/// Learning rate for the given phase and 0-based epoch: constant during
/// pretraining, stepwise decay during the adversarial phase.
pub fn learning_rate(cfg: &TrainConfig, adversarial: bool, epoch: usize) -> f64 {
    if adversarial {
        cfg.lr0 * cfg.decay_factor.powi((epoch / cfg.decay_every) as i32)
    } else {
        cfg.lr0
    }
}

/// First/second-moment adaptive optimizer state for one parameter list.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<ArrayD<f32>>,
    pub v: Vec<ArrayD<f32>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, tensors: &[(String, &ArrayD<f32>)]) -> Self {
        let zeros: Vec<ArrayD<f32>> = tensors
            .iter()
            .map(|(_, t)| ArrayD::zeros(IxDyn(t.shape())))
            .collect();
        Self {
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update. Fresh state with zero gradients leaves parameters
    /// unchanged (the update is exactly zero).
    pub fn apply(&mut self, lr: f64, params: &mut [&mut ArrayD<f32>], grads: &[ArrayD<f32>]) {
        assert_eq!(params.len(), grads.len(), "one gradient per tensor");
        assert_eq!(params.len(), self.m.len(), "optimizer state matches params");
        self.step += 1;
        let b1 = self.beta1 as f32;
        let b2 = self.beta2 as f32;
        let bc1 = (1.0 - self.beta1.powi(self.step as i32)) as f32;
        let bc2 = (1.0 - self.beta2.powi(self.step as i32)) as f32;
        let lr = lr as f32;
        let eps = self.eps as f32;
        for i in 0..params.len() {
            let (m, v, g, p) = (&mut self.m[i], &mut self.v[i], &grads[i], &mut *params[i]);
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Adversarial,
}

/// Full optimization state: everything needed to continue training exactly
/// where it stopped.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub generator: GeneratorParams<f32>,
    pub discriminator: DiscriminatorParams<f32>,
    pub features: FeatureExtractor<f32>,
    pub adam_g: Adam,
    pub adam_d: Adam,
    pub phase: Phase,
    /// Completed epochs within the current phase.
    pub epoch: usize,
    /// Pretrain epochs completed before the adversarial phase began.
    pub pretrain_epochs_done: usize,
    /// Data-sampling stream.
    pub rng: ChaCha20Rng,
}

impl Checkpoint {
    pub fn init(gcfg: GeneratorConfig, cfg: TrainConfig) -> Result<Self> {
        Self::init_with_discriminator(gcfg, DiscriminatorConfig::default(), cfg)
    }

    pub fn init_with_discriminator(
        gcfg: GeneratorConfig,
        dcfg: DiscriminatorConfig,
        cfg: TrainConfig,
    ) -> Result<Self> {
        cfg.validate(&gcfg, &dcfg)?;
        let generator = GeneratorParams::<f32>::init(gcfg, cfg.seed)?;
        let discriminator = DiscriminatorParams::<f32>::init(dcfg, cfg.seed.wrapping_add(1))?;
        let features = FeatureExtractor::<f32>::new(cfg.feature_spec.clone())?;
        let adam_g = Adam::new(cfg.beta1, cfg.beta2, &generator.named_tensors());
        let adam_d = Adam::new(cfg.beta1, cfg.beta2, &discriminator.named_tensors());
        let rng = ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_add(2));
        Ok(Self {
            config: cfg,
            generator,
            discriminator,
            features,
            adam_g,
            adam_d,
            phase: Phase::Pretrain,
            epoch: 0,
            pretrain_epochs_done: 0,
            rng,
        })
    }

    /// Epoch number across both phases, for curve rows.
    pub fn global_epoch(&self) -> usize {
        match self.phase {
            Phase::Pretrain => self.epoch,
            Phase::Adversarial => self.pretrain_epochs_done + self.epoch,
        }
    }
}

/// One row of the loss/metric curve.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub epoch: usize,
    pub split: &'static str,
    pub psnr: f64,
    pub ssim: f64,
    pub loss_total: f64,
    pub loss_pix: f64,
    pub loss_feat: f64,
    pub loss_gan: f64,
    pub loss_tran: f64,
}

pub fn curves_to_csv(points: &[CurvePoint]) -> String {
    let mut out =
        String::from("epoch,split,psnr,ssim,loss_total,loss_pix,loss_feat,loss_gan,loss_tran\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.8},{:.8},{:.8},{:.8},{:.8}\n",
            p.epoch,
            p.split,
            p.psnr,
            p.ssim,
            p.loss_total,
            p.loss_pix,
            p.loss_feat,
            p.loss_gan,
            p.loss_tran
        ));
    }
    out
}

pub fn write_curves(path: &Path, points: &[CurvePoint]) -> Result<()> {
    std::fs::write(path, curves_to_csv(points))?;
    Ok(())
}

// ---- batch assembly ----

struct Batch {
    x1: ArrayD<f32>,
    xp: ArrayD<f32>,
    x2: ArrayD<f32>,
    r_main: Vec<f32>,
    r_fwd: Vec<f32>,
    r_bwd: Vec<f32>,
    tv: Vec<(f64, f64)>,
}

fn fill_sample(dst: &mut Array4<f32>, i: usize, f: &Frame) {
    let d = f.data();
    for c in 0..3 {
        for y in 0..f.height() {
            for x in 0..f.width() {
                dst[(i, c, y, x)] = d[(c, y, x)] as f32;
            }
        }
    }
}

fn batch_from_triplets(
    triplets: &[crate::data::TripletSample],
    patch: usize,
) -> Result<Batch> {
    let b = triplets.len();
    let mut x1 = Array4::<f32>::zeros((b, 3, patch, patch));
    let mut xp = x1.clone();
    let mut x2 = x1.clone();
    let mut r_main = Vec::with_capacity(b);
    let mut r_fwd = Vec::with_capacity(b);
    let mut r_bwd = Vec::with_capacity(b);
    let mut tv = Vec::with_capacity(b);
    for (i, t) in triplets.iter().enumerate() {
        if t.x1.height() != patch || t.x1.width() != patch {
            return Err(Error::Shape(format!(
                "triplet patch {}x{} does not match configured patch {patch}",
                t.x1.height(),
                t.x1.width()
            )));
        }
        fill_sample(&mut x1, i, &t.x1);
        fill_sample(&mut xp, i, &t.xp);
        fill_sample(&mut x2, i, &t.x2);
        let (main, fwd, bwd) = transitive_ratios(t.t1 as f64, t.t2 as f64, t.tp as f64)?;
        r_main.push(main as f32);
        r_fwd.push(fwd as f32);
        r_bwd.push(bwd as f32);
        tv.push(tv_weights(t.t1 as f64, t.t2 as f64, t.tp as f64));
    }
    Ok(Batch {
        x1: x1.into_dyn(),
        xp: xp.into_dyn(),
        x2: x2.into_dyn(),
        r_main,
        r_fwd,
        r_bwd,
        tv,
    })
}

fn draw_batch(
    train: &[VideoSequence],
    cfg: &TrainConfig,
    spec: &AugmentSpec,
    rng: &mut ChaCha20Rng,
) -> Result<Batch> {
    let mut triplets = Vec::with_capacity(cfg.batch);
    for _ in 0..cfg.batch {
        let video = &train[rng.gen_range(0..train.len())];
        triplets.push(sample_training_triplet(
            video,
            cfg.max_gap,
            spec,
            cfg.variance_threshold,
            rng,
        )?);
    }
    batch_from_triplets(&triplets, cfg.patch)
}

/// Deterministic validation mini-batch: the first triplet of each held-out
/// video, center-cropped, no augmentation.
fn validation_batch(val: &[VideoSequence], cfg: &TrainConfig) -> Result<Option<Batch>> {
    let mut triplets = Vec::new();
    for v in val {
        if v.len() < 3 || v.frames[0].height() < cfg.patch || v.frames[0].width() < cfg.patch {
            continue;
        }
        let y0 = (v.frames[0].height() - cfg.patch) / 2;
        let x0 = (v.frames[0].width() - cfg.patch) / 2;
        let center = |f: &Frame| {
            Frame::new(
                f.data()
                    .slice(ndarray::s![.., y0..y0 + cfg.patch, x0..x0 + cfg.patch])
                    .to_owned(),
            )
            .expect("crop preserves range")
        };
        triplets.push(crate::data::TripletSample {
            x1: center(&v.frames[0]),
            xp: center(&v.frames[1]),
            x2: center(&v.frames[2]),
            t1: v.timestamps[0],
            tp: v.timestamps[1],
            t2: v.timestamps[2],
        });
        if triplets.len() == cfg.batch {
            break;
        }
    }
    if triplets.is_empty() {
        return Ok(None);
    }
    Ok(Some(batch_from_triplets(&triplets, cfg.patch)?))
}

// ---- objective graph ----

struct ObjectiveNodes {
    total: Var,
    pix: Var,
    feat: Var,
    gan: Option<Var>,
    tran: Option<Var>,
    output: Var,
}

#[derive(Clone, Copy, Debug, Default)]
struct LossValues {
    total: f64,
    pix: f64,
    feat: f64,
    gan: f64,
    tran: f64,
}

fn read_losses(tape: &Tape<f32>, nodes: &ObjectiveNodes) -> LossValues {
    let get = |v: Var| tape.scalar(v) as f64;
    LossValues {
        total: get(nodes.total),
        pix: get(nodes.pix),
        feat: get(nodes.feat),
        gan: nodes.gan.map(get).unwrap_or(f64::NAN),
        tran: nodes.tran.map(get).unwrap_or(f64::NAN),
    }
}

#[allow(clippy::too_many_arguments)]
fn build_objective(
    tape: &mut Tape<f32>,
    gvars: &crate::model::GeneratorVars,
    gcfg: &GeneratorConfig,
    fvars: &crate::features::FeatureVars,
    tap: LayerTap,
    critic: Option<(&crate::discriminator::DiscriminatorVars, &DiscriminatorConfig)>,
    batch: &Batch,
    variant: TransitiveVariant,
    weights: &LossWeights,
) -> Result<ObjectiveNodes> {
    let x1 = tape.constant(batch.x1.clone());
    let x2 = tape.constant(batch.x2.clone());
    let xp = tape.constant(batch.xp.clone());
    let levels = forward_batch(tape, gvars, gcfg, x1, x2, &batch.r_main)?;
    let output = *levels.last().expect("at least one level");
    let pix = pixel_loss_on_tape(tape, output, xp);
    let feat = feature_loss_on_tape(tape, fvars, tap, output, xp);
    let gan = match critic {
        Some((dvars, dcfg)) => {
            let d_fake = critic_logits(tape, dvars, dcfg, output)?;
            Some(gan_loss_g_on_tape(tape, d_fake, false))
        }
        None => None,
    };
    let tran = match variant {
        TransitiveVariant::Predicted => Some(transitive_loss_on_tape(
            tape,
            gvars,
            gcfg,
            x1,
            x2,
            output,
            &batch.r_fwd,
            &batch.r_bwd,
        )?),
        TransitiveVariant::Observed => Some(transitive_loss_on_tape(
            tape,
            gvars,
            gcfg,
            x1,
            x2,
            xp,
            &batch.r_fwd,
            &batch.r_bwd,
        )?),
        TransitiveVariant::Off => None,
        TransitiveVariant::Tv => Some(tv_loss_on_tape(tape, output, x1, x2, 1.0, 1.0)),
        TransitiveVariant::WeightedTv => {
            // |w (y - x)| = w |y - x| for w >= 0, so per-sample weights fold
            // into the operands before the mean.
            let w1: Vec<f32> = batch.tv.iter().map(|w| w.0 as f32).collect();
            let w2: Vec<f32> = batch.tv.iter().map(|w| w.1 as f32).collect();
            let ya = tape.scale_samples(output, &w1);
            let xa = tape.scale_samples(x1, &w1);
            let a = tape.l1_mean(ya, xa);
            let yb = tape.scale_samples(output, &w2);
            let xb = tape.scale_samples(x2, &w2);
            let b = tape.l1_mean(yb, xb);
            Some(tape.weighted_sum(&[(a, 1.0), (b, 1.0)]))
        }
    };
    let total = total_objective_on_tape(tape, pix, Some(feat), gan, tran, weights, variant.pixel_weight());
    Ok(ObjectiveNodes {
        total,
        pix,
        feat,
        gan,
        tran,
        output,
    })
}

fn collect_grads(tape: &Tape<f32>, vars: &[Var]) -> Vec<ArrayD<f32>> {
    vars.iter()
        .map(|v| match tape.grad(*v) {
            Some(g) => g.clone(),
            None => ArrayD::zeros(IxDyn(tape.value(*v).shape())),
        })
        .collect()
}

/// Mean PSNR/SSIM of a batch of outputs against targets.
fn batch_metrics(out: &ArrayD<f32>, target: &ArrayD<f32>) -> Result<(f64, f64)> {
    let o = out.view().into_dimensionality::<Ix4>().expect("4-d batch");
    let t = target.view().into_dimensionality::<Ix4>().expect("4-d batch");
    let (b, _, h, w) = (o.shape()[0], o.shape()[1], o.shape()[2], o.shape()[3]);
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    for i in 0..b {
        let mut fo = ndarray::Array3::<f64>::zeros((3, h, w));
        let mut ft = fo.clone();
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    fo[(c, y, x)] = o[(i, c, y, x)] as f64;
                    ft[(c, y, x)] = t[(i, c, y, x)] as f64;
                }
            }
        }
        let fo = Frame::new_clamped(fo)?;
        let ft = Frame::new_clamped(ft)?;
        psnr_sum += psnr(&fo, &ft)?.db();
        ssim_sum += ssim(&fo, &ft)?;
    }
    Ok((psnr_sum / b as f64, ssim_sum / b as f64))
}

// ---- optimization steps ----

struct StepStats {
    losses: LossValues,
    psnr: f64,
    ssim: f64,
}

fn generator_step(ckpt: &mut Checkpoint, batch: &Batch, lr: f64, with_gan: bool) -> Result<StepStats> {
    let gcfg = ckpt.generator.config.clone();
    let dcfg = ckpt.discriminator.config.clone();
    let tap = ckpt.features.spec.layer_tap;
    let variant = ckpt.config.transitive_variant;
    let weights = ckpt.config.weights.clone();

    let mut tape = Tape::<f32>::new();
    let gvars = ckpt.generator.bind(&mut tape, true);
    let fvars = ckpt.features.bind(&mut tape);
    let dvars = ckpt.discriminator.bind(&mut tape, false);
    let critic = with_gan.then_some((&dvars, &dcfg));
    let nodes = build_objective(&mut tape, &gvars, &gcfg, &fvars, tap, critic, batch, variant, &weights)?;
    let losses = read_losses(&tape, &nodes);
    let (p, s) = batch_metrics(tape.value(nodes.output), &batch.xp)?;
    tape.backward(nodes.total);
    let var_list = gvars.all().to_vec();
    let grads = collect_grads(&tape, &var_list);
    drop(tape);
    let mut tensors = ckpt.generator.tensors_mut();
    ckpt.adam_g.apply(lr, &mut tensors, &grads);
    Ok(StepStats { losses, psnr: p, ssim: s })
}

fn discriminator_step(ckpt: &mut Checkpoint, batch: &Batch, lr: f64) -> Result<f64> {
    let gcfg = ckpt.generator.config.clone();
    let dcfg = ckpt.discriminator.config.clone();
    let mut tape = Tape::<f32>::new();
    let gvars = ckpt.generator.bind(&mut tape, false);
    let dvars = ckpt.discriminator.bind(&mut tape, true);
    let x1 = tape.constant(batch.x1.clone());
    let x2 = tape.constant(batch.x2.clone());
    let xp = tape.constant(batch.xp.clone());
    let levels = forward_batch(&mut tape, &gvars, &gcfg, x1, x2, &batch.r_main)?;
    let fake = *levels.last().expect("at least one level");
    let d_real = critic_logits(&mut tape, &dvars, &dcfg, xp)?;
    let d_fake = critic_logits(&mut tape, &dvars, &dcfg, fake)?;
    let loss = gan_loss_d_on_tape(&mut tape, d_real, d_fake);
    let value = tape.scalar(loss) as f64;
    tape.backward(loss);
    let var_list = dvars.all();
    let grads = collect_grads(&tape, &var_list);
    drop(tape);
    let mut tensors = ckpt.discriminator.tensors_mut();
    ckpt.adam_d.apply(lr, &mut tensors, &grads);
    Ok(value)
}

/// Loss components on the deterministic validation batch (no update).
fn validation_losses(ckpt: &Checkpoint, batch: &Batch, with_gan: bool) -> Result<LossValues> {
    let gcfg = ckpt.generator.config.clone();
    let dcfg = ckpt.discriminator.config.clone();
    let mut tape = Tape::<f32>::new();
    let gvars = ckpt.generator.bind(&mut tape, false);
    let fvars = ckpt.features.bind(&mut tape);
    let dvars = ckpt.discriminator.bind(&mut tape, false);
    let critic = with_gan.then_some((&dvars, &dcfg));
    let nodes = build_objective(
        &mut tape,
        &gvars,
        &gcfg,
        &fvars,
        ckpt.features.spec.layer_tap,
        critic,
        batch,
        ckpt.config.transitive_variant,
        &ckpt.config.weights,
    )?;
    Ok(read_losses(&tape, &nodes))
}

// ---- epoch loops ----

fn augment_spec(cfg: &TrainConfig) -> AugmentSpec {
    AugmentSpec {
        rotate: cfg.augment_geom,
        flip: cfg.augment_geom,
        crop: cfg.patch,
        noise_sigma: cfg.noise_sigma,
    }
}

/// The train/validation split a run with this config uses. Exposed so
/// baselines can be measured on exactly the held-out videos.
pub fn holdout_split(
    corpus: &[VideoSequence],
    cfg: &TrainConfig,
) -> (Vec<VideoSequence>, Vec<VideoSequence>) {
    split_corpus(corpus.to_vec(), cfg.val_fraction, cfg.seed.wrapping_add(3))
}

fn run_epochs(
    ckpt: &mut Checkpoint,
    corpus: &[VideoSequence],
    adversarial: bool,
) -> Result<Vec<CurvePoint>> {
    if corpus.is_empty() {
        return Err(Error::Config("corpus is empty".into()));
    }
    let cfg = ckpt.config.clone();
    let (train, val) = holdout_split(corpus, &cfg);
    if train.is_empty() {
        return Err(Error::Config("no training videos after the validation split".into()));
    }
    let spec = augment_spec(&cfg);
    let val_batch = validation_batch(&val, &cfg)?;
    let target = if adversarial { cfg.epochs_adv } else { cfg.epochs_pretrain };
    let mut curves = Vec::new();
    while ckpt.epoch < target {
        let lr = learning_rate(&cfg, adversarial, ckpt.epoch);
        let mut sums = LossValues::default();
        let mut psnr_sum = 0.0;
        let mut ssim_sum = 0.0;
        let mut gan_sum = 0.0;
        let mut tran_sum = 0.0;
        for iter in 0..cfg.iters_per_epoch {
            let batch = draw_batch(&train, &cfg, &spec, &mut ckpt.rng)?;
            if adversarial {
                let d_loss = discriminator_step(ckpt, &batch, lr)?;
                if !d_loss.is_finite() {
                    return Err(Error::Divergence(format!(
                        "critic loss {d_loss} at epoch {} iter {iter}",
                        ckpt.global_epoch() + 1
                    )));
                }
            }
            let stats = generator_step(ckpt, &batch, lr, adversarial)?;
            if !stats.losses.total.is_finite() {
                return Err(Error::Divergence(format!(
                    "objective {} at epoch {} iter {iter}",
                    stats.losses.total,
                    ckpt.global_epoch() + 1
                )));
            }
            sums.total += stats.losses.total;
            sums.pix += stats.losses.pix;
            sums.feat += stats.losses.feat;
            gan_sum += stats.losses.gan;
            tran_sum += stats.losses.tran;
            psnr_sum += stats.psnr;
            ssim_sum += stats.ssim;
        }
        ckpt.epoch += 1;
        let n = cfg.iters_per_epoch as f64;
        let epoch = ckpt.global_epoch();
        curves.push(CurvePoint {
            epoch,
            split: "train",
            psnr: psnr_sum / n,
            ssim: ssim_sum / n,
            loss_total: sums.total / n,
            loss_pix: sums.pix / n,
            loss_feat: sums.feat / n,
            loss_gan: gan_sum / n,
            loss_tran: tran_sum / n,
        });
        let due = ckpt.epoch % cfg.eval_every == 0 || ckpt.epoch == target;
        if due && !val.is_empty() {
            let predictor = Predictor::Model(ckpt.generator.clone());
            let (vp, vs) = evaluate_dataset(&predictor, &val, 1, 0.5)?;
            let vl = match &val_batch {
                Some(b) => validation_losses(ckpt, b, adversarial)?,
                None => LossValues {
                    total: f64::NAN,
                    pix: f64::NAN,
                    feat: f64::NAN,
                    gan: f64::NAN,
                    tran: f64::NAN,
                },
            };
            curves.push(CurvePoint {
                epoch,
                split: "val",
                psnr: vp,
                ssim: vs,
                loss_total: vl.total,
                loss_pix: vl.pix,
                loss_feat: vl.feat,
                loss_gan: vl.gan,
                loss_tran: vl.tran,
            });
        }
    }
    Ok(curves)
}

/// Phase one: optimizes the reconstruction objective (no adversarial term)
/// until the configured pretrain epoch count. Resumes from the checkpoint's
/// current epoch.
pub fn pretrain_generator(ckpt: &mut Checkpoint, corpus: &[VideoSequence]) -> Result<Vec<CurvePoint>> {
    if ckpt.phase != Phase::Pretrain {
        return Err(Error::Config("checkpoint is already past the pretrain phase".into()));
    }
    run_epochs(ckpt, corpus, false)
}

/// Phase two: alternates one critic step and one generator step per
/// iteration on the full objective, with stepwise learning-rate decay.
pub fn adversarial_train(ckpt: &mut Checkpoint, corpus: &[VideoSequence]) -> Result<Vec<CurvePoint>> {
    if ckpt.phase == Phase::Pretrain {
        if ckpt.config.patch < ckpt.discriminator.config.min_input() {
            return Err(Error::Config(format!(
                "patch {} below critic receptive minimum {}",
                ckpt.config.patch,
                ckpt.discriminator.config.min_input()
            )));
        }
        ckpt.pretrain_epochs_done = ckpt.epoch;
        ckpt.phase = Phase::Adversarial;
        ckpt.epoch = 0;
    }
    run_epochs(ckpt, corpus, true)
}

/// Both phases from scratch; the returned curve covers the whole run.
pub fn train_full(
    corpus: &[VideoSequence],
    gcfg: GeneratorConfig,
    cfg: TrainConfig,
) -> Result<(Checkpoint, Vec<CurvePoint>)> {
    train_full_with(corpus, gcfg, DiscriminatorConfig::default(), cfg)
}

/// `train_full` with an explicit critic architecture.
pub fn train_full_with(
    corpus: &[VideoSequence],
    gcfg: GeneratorConfig,
    dcfg: DiscriminatorConfig,
    cfg: TrainConfig,
) -> Result<(Checkpoint, Vec<CurvePoint>)> {
    let mut ckpt = Checkpoint::init_with_discriminator(gcfg, dcfg, cfg)?;
    let mut curves = pretrain_generator(&mut ckpt, corpus)?;
    if ckpt.config.epochs_adv > 0 {
        curves.extend(adversarial_train(&mut ckpt, corpus)?);
    }
    Ok((ckpt, curves))
}

// ---- checkpoint serialization ----

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn head_mode_name(m: HeadMode) -> &'static str {
    match m {
        HeadMode::Direct => "direct",
        HeadMode::Residual => "residual",
    }
}

fn parse_head_mode(s: &str) -> Result<HeadMode> {
    match s {
        "direct" => Ok(HeadMode::Direct),
        "residual" => Ok(HeadMode::Residual),
        _ => Err(Error::Load(format!("unknown head mode '{s}'"))),
    }
}

fn tap_name(t: LayerTap) -> &'static str {
    match t {
        LayerTap::Shallow => "shallow",
        LayerTap::Mid => "mid",
        LayerTap::Deep => "deep",
    }
}

fn parse_tap(s: &str) -> Result<LayerTap> {
    match s {
        "shallow" => Ok(LayerTap::Shallow),
        "mid" => Ok(LayerTap::Mid),
        "deep" => Ok(LayerTap::Deep),
        _ => Err(Error::Load(format!("unknown feature tap '{s}'"))),
    }
}

fn feature_mode_string(m: &FeatureMode) -> String {
    match m {
        FeatureMode::FixedRandom { seed } => format!("random:{seed}"),
        FeatureMode::PretrainedFile(p) => format!("file:{}", p.display()),
    }
}

fn parse_feature_mode(s: &str) -> Result<FeatureMode> {
    if let Some(seed) = s.strip_prefix("random:") {
        return Ok(FeatureMode::FixedRandom {
            seed: seed
                .parse()
                .map_err(|e| Error::Load(format!("bad feature seed: {e}")))?,
        });
    }
    if let Some(path) = s.strip_prefix("file:") {
        return Ok(FeatureMode::PretrainedFile(path.into()));
    }
    Err(Error::Load(format!("unknown feature mode '{s}'")))
}

fn meta_string(ckpt: &Checkpoint) -> String {
    let c = &ckpt.config;
    let g = &ckpt.generator.config;
    let d = &ckpt.discriminator.config;
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        s.push_str(k);
        s.push_str(" = ");
        s.push_str(&v);
        s.push('\n');
    };
    kv("phase", match ckpt.phase {
        Phase::Pretrain => "pretrain".into(),
        Phase::Adversarial => "adversarial".into(),
    });
    kv("epoch", ckpt.epoch.to_string());
    kv("pretrain_epochs_done", ckpt.pretrain_epochs_done.to_string());
    kv("adam_g_step", ckpt.adam_g.step.to_string());
    kv("adam_d_step", ckpt.adam_d.step.to_string());
    let seed_hex: String = ckpt.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
    kv("rng_seed", seed_hex);
    kv("rng_word_pos", ckpt.rng.get_word_pos().to_string());
    kv("rng_stream", ckpt.rng.get_stream().to_string());
    kv("gen.pyramid_levels", g.pyramid_levels.to_string());
    kv("gen.blocks_per_subnet", g.blocks_per_subnet.to_string());
    kv("gen.filters", g.filters.to_string());
    kv("gen.kernel", g.kernel.to_string());
    kv("gen.head_mode", head_mode_name(g.head_mode).into());
    kv("disc.layers", d.layers.to_string());
    kv("disc.base_filters", d.base_filters.to_string());
    kv("disc.kernel", d.kernel.to_string());
    kv("disc.slope", fmt_f64(d.slope));
    kv("disc.patch_grid", d.patch_grid.to_string());
    kv("cfg.beta1", fmt_f64(c.beta1));
    kv("cfg.beta2", fmt_f64(c.beta2));
    kv("cfg.lr0", fmt_f64(c.lr0));
    kv("cfg.batch", c.batch.to_string());
    kv("cfg.patch", c.patch.to_string());
    kv("cfg.iters_per_epoch", c.iters_per_epoch.to_string());
    kv("cfg.epochs_pretrain", c.epochs_pretrain.to_string());
    kv("cfg.epochs_adv", c.epochs_adv.to_string());
    kv("cfg.decay_factor", fmt_f64(c.decay_factor));
    kv("cfg.decay_every", c.decay_every.to_string());
    kv("cfg.transitive_variant", c.transitive_variant.name().into());
    kv("cfg.seed", c.seed.to_string());
    kv("cfg.max_gap", c.max_gap.to_string());
    kv("cfg.val_fraction", fmt_f64(c.val_fraction));
    kv("cfg.eval_every", c.eval_every.to_string());
    kv("cfg.noise_sigma", fmt_f64(c.noise_sigma));
    kv("cfg.variance_threshold", fmt_f64(c.variance_threshold));
    kv("cfg.augment_geom", c.augment_geom.to_string());
    kv("cfg.lambda_feat", fmt_f64(c.weights.lambda_feat));
    kv("cfg.lambda_gan", fmt_f64(c.weights.lambda_gan));
    kv("cfg.lambda_tran", fmt_f64(c.weights.lambda_tran));
    kv("cfg.feature_mode", feature_mode_string(&c.feature_spec.mode));
    kv("cfg.feature_tap", tap_name(c.feature_spec.layer_tap).into());
    s
}

fn meta_map(meta: &str) -> Result<std::collections::BTreeMap<String, String>> {
    let mut map = std::collections::BTreeMap::new();
    for line in meta.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| Error::Load(format!("malformed metadata line '{line}'")))?;
        map.insert(k.to_string(), v.to_string());
    }
    Ok(map)
}

fn meta_get<'a>(map: &'a std::collections::BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    map.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Load(format!("missing metadata key '{key}'")))
}

fn parse_as<T: std::str::FromStr>(map: &std::collections::BTreeMap<String, String>, key: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    meta_get(map, key)?
        .parse()
        .map_err(|e| Error::Load(format!("bad value for '{key}': {e}")))
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let meta = meta_string(ckpt);
    let mut tensors: Vec<(String, &ArrayD<f32>)> = Vec::new();
    for (n, t) in ckpt.generator.named_tensors() {
        tensors.push((format!("g.{n}"), t));
    }
    for (n, t) in ckpt.discriminator.named_tensors() {
        tensors.push((format!("d.{n}"), t));
    }
    for (n, t) in ckpt.features.named_tensors() {
        tensors.push((format!("f.{n}"), t));
    }
    for (i, t) in ckpt.adam_g.m.iter().enumerate() {
        tensors.push((format!("adam_g.m.{i:03}"), t));
    }
    for (i, t) in ckpt.adam_g.v.iter().enumerate() {
        tensors.push((format!("adam_g.v.{i:03}"), t));
    }
    for (i, t) in ckpt.adam_d.m.iter().enumerate() {
        tensors.push((format!("adam_d.m.{i:03}"), t));
    }
    for (i, t) in ckpt.adam_d.v.iter().enumerate() {
        tensors.push((format!("adam_d.v.{i:03}"), t));
    }
    write_tensor_archive(path, &meta, &tensors)
}

fn take_tensor(
    map: &mut std::collections::BTreeMap<String, ArrayD<f32>>,
    key: &str,
    shape: &[usize],
) -> Result<ArrayD<f32>> {
    let t = map
        .remove(key)
        .ok_or_else(|| Error::Load(format!("missing tensor '{key}'")))?;
    if t.shape() != shape {
        return Err(Error::Load(format!(
            "tensor '{key}' has shape {:?}, expected {shape:?}",
            t.shape()
        )));
    }
    Ok(t)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let (meta, mut tensors) = read_tensor_archive_with_meta::<f32>(path)?;
    let map = meta_map(&meta)?;

    let gcfg = GeneratorConfig {
        pyramid_levels: parse_as(&map, "gen.pyramid_levels")?,
        blocks_per_subnet: parse_as(&map, "gen.blocks_per_subnet")?,
        filters: parse_as(&map, "gen.filters")?,
        kernel: parse_as(&map, "gen.kernel")?,
        head_mode: parse_head_mode(meta_get(&map, "gen.head_mode")?)?,
    };
    let dcfg = DiscriminatorConfig {
        layers: parse_as(&map, "disc.layers")?,
        base_filters: parse_as(&map, "disc.base_filters")?,
        kernel: parse_as(&map, "disc.kernel")?,
        slope: parse_as(&map, "disc.slope")?,
        patch_grid: parse_as(&map, "disc.patch_grid")?,
    };
    let cfg = TrainConfig {
        beta1: parse_as(&map, "cfg.beta1")?,
        beta2: parse_as(&map, "cfg.beta2")?,
        lr0: parse_as(&map, "cfg.lr0")?,
        batch: parse_as(&map, "cfg.batch")?,
        patch: parse_as(&map, "cfg.patch")?,
        iters_per_epoch: parse_as(&map, "cfg.iters_per_epoch")?,
        epochs_pretrain: parse_as(&map, "cfg.epochs_pretrain")?,
        epochs_adv: parse_as(&map, "cfg.epochs_adv")?,
        decay_factor: parse_as(&map, "cfg.decay_factor")?,
        decay_every: parse_as(&map, "cfg.decay_every")?,
        transitive_variant: TransitiveVariant::parse(meta_get(&map, "cfg.transitive_variant")?)?,
        seed: parse_as(&map, "cfg.seed")?,
        max_gap: parse_as(&map, "cfg.max_gap")?,
        val_fraction: parse_as(&map, "cfg.val_fraction")?,
        eval_every: parse_as(&map, "cfg.eval_every")?,
        noise_sigma: parse_as(&map, "cfg.noise_sigma")?,
        variance_threshold: parse_as(&map, "cfg.variance_threshold")?,
        augment_geom: parse_as(&map, "cfg.augment_geom")?,
        weights: LossWeights {
            lambda_feat: parse_as(&map, "cfg.lambda_feat")?,
            lambda_gan: parse_as(&map, "cfg.lambda_gan")?,
            lambda_tran: parse_as(&map, "cfg.lambda_tran")?,
        },
        feature_spec: FeatureExtractorSpec {
            mode: parse_feature_mode(meta_get(&map, "cfg.feature_mode")?)?,
            layer_tap: parse_tap(meta_get(&map, "cfg.feature_tap")?)?,
        },
    };

    let mut generator = GeneratorParams::<f32>::zeros(gcfg)?;
    for (name, slot) in generator
        .named_tensors()
        .iter()
        .map(|(n, _)| n.clone())
        .collect::<Vec<_>>()
        .into_iter()
        .zip(generator.tensors_mut())
    {
        *slot = take_tensor(&mut tensors, &format!("g.{name}"), slot.shape())?;
    }
    let mut discriminator = DiscriminatorParams::<f32>::zeros(dcfg)?;
    for (name, slot) in discriminator
        .named_tensors()
        .iter()
        .map(|(n, _)| n.clone())
        .collect::<Vec<_>>()
        .into_iter()
        .zip(discriminator.tensors_mut())
    {
        *slot = take_tensor(&mut tensors, &format!("d.{name}"), slot.shape())?;
    }
    let mut features = FeatureExtractor::<f32>::zeros(cfg.feature_spec.clone());
    for i in 0..features.convs.len() {
        let wshape = features.convs[i].weight.shape().to_vec();
        let bshape = features.convs[i].bias.shape().to_vec();
        features.convs[i].weight = take_tensor(&mut tensors, &format!("f.feat{i}.weight"), &wshape)?;
        features.convs[i].bias = take_tensor(&mut tensors, &format!("f.feat{i}.bias"), &bshape)?;
    }

    let mut adam_g = Adam::new(cfg.beta1, cfg.beta2, &generator.named_tensors());
    adam_g.step = parse_as(&map, "adam_g_step")?;
    for i in 0..adam_g.m.len() {
        let shape = adam_g.m[i].shape().to_vec();
        adam_g.m[i] = take_tensor(&mut tensors, &format!("adam_g.m.{i:03}"), &shape)?;
        adam_g.v[i] = take_tensor(&mut tensors, &format!("adam_g.v.{i:03}"), &shape)?;
    }
    let mut adam_d = Adam::new(cfg.beta1, cfg.beta2, &discriminator.named_tensors());
    adam_d.step = parse_as(&map, "adam_d_step")?;
    for i in 0..adam_d.m.len() {
        let shape = adam_d.m[i].shape().to_vec();
        adam_d.m[i] = take_tensor(&mut tensors, &format!("adam_d.m.{i:03}"), &shape)?;
        adam_d.v[i] = take_tensor(&mut tensors, &format!("adam_d.v.{i:03}"), &shape)?;
    }
    if let Some((extra, _)) = tensors.iter().next() {
        return Err(Error::Load(format!("unexpected tensor '{extra}'")));
    }

    let seed_hex = meta_get(&map, "rng_seed")?;
    if seed_hex.len() != 64 {
        return Err(Error::Load("rng seed must be 32 hex bytes".into()));
    }
    let mut seed = [0u8; 32];
    for (i, b) in seed.iter_mut().enumerate() {
        *b = u8::from_str_radix(&seed_hex[2 * i..2 * i + 2], 16)
            .map_err(|e| Error::Load(format!("bad rng seed: {e}")))?;
    }
    let mut rng = ChaCha20Rng::from_seed(seed);
    rng.set_stream(parse_as(&map, "rng_stream")?);
    rng.set_word_pos(parse_as::<u128>(&map, "rng_word_pos")?);

    let phase = match meta_get(&map, "phase")? {
        "pretrain" => Phase::Pretrain,
        "adversarial" => Phase::Adversarial,
        other => return Err(Error::Load(format!("unknown phase '{other}'"))),
    };

    Ok(Checkpoint {
        config: cfg,
        generator,
        discriminator,
        features,
        adam_g,
        adam_d,
        phase,
        epoch: parse_as(&map, "epoch")?,
        pretrain_epochs_done: parse_as(&map, "pretrain_epochs_done")?,
        rng,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic_video;
    use tempfile::tempdir;

    fn tiny_gcfg() -> GeneratorConfig {
        GeneratorConfig {
            pyramid_levels: 2,
            blocks_per_subnet: 1,
            filters: 4,
            kernel: 3,
            head_mode: HeadMode::Direct,
        }
    }

    fn tiny_dcfg() -> DiscriminatorConfig {
        DiscriminatorConfig {
            layers: 3,
            base_filters: 4,
            kernel: 3,
            slope: 0.2,
            patch_grid: false,
        }
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            batch: 2,
            patch: 16,
            iters_per_epoch: 2,
            epochs_pretrain: 2,
            epochs_adv: 1,
            max_gap: 2,
            noise_sigma: 0.0,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    fn tiny_corpus() -> Vec<VideoSequence> {
        (0..4)
            .map(|i| generate_synthetic_video(6, 16, (1, 1), 200 + i).unwrap())
            .collect()
    }

    #[test]
    fn adam_zero_grad_is_identity() {
        let mut p = ArrayD::from_shape_vec(IxDyn(&[2, 2]), vec![1.0f32, -2.0, 0.5, 3.0]).unwrap();
        let before = p.clone();
        let named = vec![("p".to_string(), &p as &ArrayD<f32>)];
        let mut adam = Adam::new(0.9, 0.999, &named);
        let g = ArrayD::zeros(IxDyn(&[2, 2]));
        adam.apply(1e-2, &mut [&mut p], &[g]);
        assert_eq!(p, before);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut p = ArrayD::from_shape_vec(IxDyn(&[2]), vec![1.0f32, -1.0]).unwrap();
        let named = vec![("p".to_string(), &p as &ArrayD<f32>)];
        let mut adam = Adam::new(0.9, 0.999, &named);
        let g = ArrayD::from_shape_vec(IxDyn(&[2]), vec![1.0f32, -1.0]).unwrap();
        adam.apply(1e-2, &mut [&mut p], &[g.clone()]);
        assert!(p[[0]] < 1.0);
        assert!(p[[1]] > -1.0);
        // First step size is ~lr regardless of gradient magnitude.
        assert!((p[[0]] - (1.0 - 1e-2)).abs() < 1e-4);
    }

    #[test]
    fn learning_rate_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(learning_rate(&cfg, false, 0), 1e-4);
        assert_eq!(learning_rate(&cfg, true, 0), 1e-4);
        assert_eq!(learning_rate(&cfg, true, 49), 1e-4);
        assert_eq!(learning_rate(&cfg, true, 50), 5e-5);
        assert_eq!(learning_rate(&cfg, true, 100), 2.5e-5);
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let g = tiny_gcfg();
        let d = tiny_dcfg();
        assert!(tiny_cfg().validate(&g, &d).is_ok());
        let mut c = tiny_cfg();
        c.patch = 17; // not a multiple of alignment 2
        assert!(c.validate(&g, &d).is_err());
        let mut c = tiny_cfg();
        c.batch = 0;
        assert!(c.validate(&g, &d).is_err());
        let mut c = tiny_cfg();
        c.val_fraction = 1.0;
        assert!(c.validate(&g, &d).is_err());
        let mut c = tiny_cfg();
        c.batch = 512;
        c.patch = 512;
        assert!(matches!(
            c.validate(&GeneratorConfig::new(4, 9).unwrap(), &DiscriminatorConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn fixed_seed_reproduces_curves() {
        let corpus = tiny_corpus();
        let cfg = tiny_cfg();
        let (_, a) = train_full_with(&corpus, tiny_gcfg(), tiny_dcfg(), cfg.clone()).unwrap();
        let (_, b) = train_full_with(&corpus, tiny_gcfg(), tiny_dcfg(), cfg).unwrap();
        // CSV comparison: NaN placeholders (absent components) compare equal
        // as text, while f64 NaN != NaN.
        assert_eq!(curves_to_csv(&a), curves_to_csv(&b));
        assert!(!a.is_empty());
    }

    #[test]
    fn curve_rows_and_csv_structure() {
        let corpus = tiny_corpus();
        let mut cfg = tiny_cfg();
        cfg.epochs_adv = 1;
        let (ckpt, curves) = train_full_with(&corpus, tiny_gcfg(), tiny_dcfg(), cfg).unwrap();
        // 3 epochs total, train + val rows each.
        assert_eq!(curves.len(), 6);
        assert_eq!(ckpt.global_epoch(), 3);
        let epochs: Vec<usize> = curves.iter().map(|c| c.epoch).collect();
        assert_eq!(epochs, vec![1, 1, 2, 2, 3, 3]);
        // Pretrain rows have no adversarial component; adversarial rows do.
        assert!(curves[0].loss_gan.is_nan());
        assert!(curves[4].loss_gan.is_finite());
        assert!(curves[0].loss_tran.is_finite());
        let csv = curves_to_csv(&curves);
        assert!(csv.starts_with("epoch,split,psnr,ssim,loss_total,loss_pix,loss_feat,loss_gan,loss_tran"));
        assert_eq!(csv.lines().count(), 7);
        assert_eq!(csv.matches(",train,").count(), 3);
        assert_eq!(csv.matches(",val,").count(), 3);
    }

    #[test]
    fn single_triplet_overfit_drives_pixel_loss_down() {
        // One 3-frame video, no augmentation randomness beyond the (unique)
        // triplet draw: the generator memorizes the mapping.
        let corpus = vec![generate_synthetic_video(3, 16, (2, 1), 42).unwrap()];
        let cfg = TrainConfig {
            batch: 1,
            patch: 16,
            iters_per_epoch: 500,
            epochs_pretrain: 1,
            epochs_adv: 0,
            lr0: 2e-3,
            noise_sigma: 0.0,
            augment_geom: false,
            transitive_variant: TransitiveVariant::Off,
            seed: 5,
            ..TrainConfig::default()
        };
        let gcfg = GeneratorConfig {
            filters: 16,
            ..tiny_gcfg()
        };
        let mut ckpt = Checkpoint::init_with_discriminator(gcfg, tiny_dcfg(), cfg).unwrap();
        let (train, _) = split_corpus(tiny_corpus_of(&corpus), 0.0, 0);
        let spec = augment_spec(&ckpt.config);
        let mut losses = Vec::new();
        for _ in 0..500 {
            let batch = draw_batch(&train, &ckpt.config.clone(), &spec, &mut ckpt.rng).unwrap();
            let stats = generator_step(&mut ckpt, &batch, 1e-3, false).unwrap();
            losses.push(stats.losses.pix);
        }
        let last = *losses.last().unwrap();
        assert!(last < 0.02, "final pixel loss {last}");
        // Median 50-step window delta is non-increasing.
        let windows: Vec<f64> = losses.chunks(50).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
        let mut deltas: Vec<f64> = windows.windows(2).map(|w| w[1] - w[0]).collect();
        deltas.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = deltas[deltas.len() / 2];
        assert!(median <= 0.0, "median window delta {median}");
    }

    fn tiny_corpus_of(v: &[VideoSequence]) -> Vec<VideoSequence> {
        v.to_vec()
    }

    #[test]
    fn zero_gan_weight_matches_continued_pretraining() {
        let corpus = tiny_corpus();
        // Run A: 2 pretrain epochs, no adversarial phase.
        let mut cfg_a = tiny_cfg();
        cfg_a.epochs_pretrain = 2;
        cfg_a.epochs_adv = 0;
        let (_, curves_a) = train_full_with(&corpus, tiny_gcfg(), tiny_dcfg(), cfg_a).unwrap();
        // Run B: 1 pretrain epoch, then 1 adversarial epoch with zero
        // adversarial weight. The generator objective degenerates to the
        // pretrain objective, so the generator-side curves coincide.
        let mut cfg_b = tiny_cfg();
        cfg_b.epochs_pretrain = 1;
        cfg_b.epochs_adv = 1;
        cfg_b.weights.lambda_gan = 0.0;
        let mut ckpt = Checkpoint::init_with_discriminator(tiny_gcfg(), tiny_dcfg(), cfg_b).unwrap();
        let mut curves_b = pretrain_generator(&mut ckpt, &corpus).unwrap();
        curves_b.extend(adversarial_train(&mut ckpt, &corpus).unwrap());
        let train_rows = |c: &[CurvePoint]| -> Vec<(usize, f64, f64, f64)> {
            c.iter()
                .filter(|p| p.split == "train")
                .map(|p| (p.epoch, p.loss_pix, p.loss_total, p.psnr))
                .collect()
        };
        assert_eq!(train_rows(&curves_a), train_rows(&curves_b));
    }

    #[test]
    fn critic_separates_real_from_fake() {
        // Frozen random generator, critic-only updates: the discriminator
        // objective falls below its 2 ln 2 starting point.
        let corpus = tiny_corpus();
        let cfg = tiny_cfg();
        let mut ckpt = Checkpoint::init_with_discriminator(tiny_gcfg(), tiny_dcfg(), cfg).unwrap();
        let (train, _) = split_corpus(corpus, 0.1, 3);
        let spec = augment_spec(&ckpt.config);
        let mut first = 0.0;
        let mut last = 0.0;
        for i in 0..200 {
            let batch = draw_batch(&train, &ckpt.config.clone(), &spec, &mut ckpt.rng).unwrap();
            let loss = discriminator_step(&mut ckpt, &batch, 1e-3).unwrap();
            if i == 0 {
                first = loss;
            }
            last = loss;
        }
        let two_ln2 = 2.0 * std::f64::consts::LN_2;
        assert!((first - two_ln2).abs() < 0.2, "initial critic loss {first}");
        assert!(last < two_ln2, "critic loss after 200 steps: {last}");
    }

    #[test]
    fn divergence_guard_fires_on_poisoned_params() {
        // The critic's logits are unclamped, so a non-finite critic weight
        // surfaces as a non-finite loss on the first adversarial iteration.
        let corpus = tiny_corpus();
        let mut cfg = tiny_cfg();
        cfg.epochs_pretrain = 0;
        let mut ckpt = Checkpoint::init_with_discriminator(tiny_gcfg(), tiny_dcfg(), cfg).unwrap();
        ckpt.discriminator.convs[0].weight[[0, 0, 0, 0]] = f32::NAN;
        match adversarial_train(&mut ckpt, &corpus) {
            Err(Error::Divergence(_)) => {}
            other => panic!("expected divergence error, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_byte_identical() {
        let corpus = tiny_corpus();
        let cfg = tiny_cfg();
        let mut ckpt = Checkpoint::init_with_discriminator(tiny_gcfg(), tiny_dcfg(), cfg).unwrap();
        pretrain_generator(&mut ckpt, &corpus).unwrap();
        let dir = tempdir().unwrap();
        let p1 = dir.path().join("a.msfs");
        let p2 = dir.path().join("b.msfs");
        save_checkpoint(&ckpt, &p1).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        save_checkpoint(&loaded, &p2).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn truncated_checkpoint_fails_to_load() {
        let cfg = tiny_cfg();
        let ckpt = Checkpoint::init_with_discriminator(tiny_gcfg(), tiny_dcfg(), cfg).unwrap();
        let dir = tempdir().unwrap();
        let p = dir.path().join("c.msfs");
        save_checkpoint(&ckpt, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Load(_))));
    }

    #[test]
    fn resume_reproduces_unbroken_run() {
        let corpus = tiny_corpus();
        // Unbroken: 2 pretrain epochs.
        let mut cfg = tiny_cfg();
        cfg.epochs_pretrain = 2;
        cfg.epochs_adv = 0;
        let mut full = Checkpoint::init_with_discriminator(tiny_gcfg(), tiny_dcfg(), cfg.clone()).unwrap();
        let curves_full = pretrain_generator(&mut full, &corpus).unwrap();
        // Broken: 1 epoch, save, load, continue to 2.
        let mut cfg1 = cfg.clone();
        cfg1.epochs_pretrain = 1;
        let mut half = Checkpoint::init_with_discriminator(tiny_gcfg(), tiny_dcfg(), cfg1).unwrap();
        let mut curves_resumed = pretrain_generator(&mut half, &corpus).unwrap();
        let dir = tempdir().unwrap();
        let p = dir.path().join("resume.msfs");
        save_checkpoint(&half, &p).unwrap();
        let mut resumed = load_checkpoint(&p).unwrap();
        resumed.config.epochs_pretrain = 2;
        curves_resumed.extend(pretrain_generator(&mut resumed, &corpus).unwrap());
        assert_eq!(curves_to_csv(&curves_full), curves_to_csv(&curves_resumed));
        // Parameters agree bitwise.
        for ((_, a), (_, b)) in full
            .generator
            .named_tensors()
            .iter()
            .zip(resumed.generator.named_tensors())
        {
            let av: Vec<u32> = a.iter().map(|v| v.to_bits()).collect();
            let bv: Vec<u32> = b.iter().map(|v| v.to_bits()).collect();
            assert_eq!(av, bv);
        }
    }

    #[test]
    fn all_variants_run_from_one_switch() {
        let corpus = tiny_corpus();
        for variant in [
            TransitiveVariant::Predicted,
            TransitiveVariant::Observed,
            TransitiveVariant::Off,
            TransitiveVariant::Tv,
            TransitiveVariant::WeightedTv,
        ] {
            let mut cfg = tiny_cfg();
            cfg.epochs_pretrain = 1;
            cfg.epochs_adv = 0;
            cfg.iters_per_epoch = 1;
            cfg.transitive_variant = variant;
            let (ckpt, curves) = train_full_with(&corpus, tiny_gcfg(), tiny_dcfg(), cfg).unwrap();
            assert_eq!(ckpt.global_epoch(), 1);
            let train_row = curves.iter().find(|p| p.split == "train").unwrap();
            if variant == TransitiveVariant::Off {
                assert!(train_row.loss_tran.is_nan());
            } else {
                assert!(train_row.loss_tran.is_finite());
            }
        }
    }

    #[test]
    fn weighted_tv_batch_matches_scalar_form() {
        // One-sample batch: the on-tape weighted TV equals the scalar oracle.
        let corpus = vec![generate_synthetic_video(5, 16, (1, 0), 77).unwrap()];
        let v = &corpus[0];
        let t = crate::data::TripletSample {
            x1: v.frames[0].clone(),
            xp: v.frames[1].clone(),
            x2: v.frames[3].clone(),
            t1: 0,
            tp: 1,
            t2: 3,
        };
        let batch = batch_from_triplets(&[t.clone()], 16).unwrap();
        let cfg = TrainConfig {
            transitive_variant: TransitiveVariant::WeightedTv,
            batch: 1,
            patch: 16,
            ..tiny_cfg()
        };
        let ckpt = Checkpoint::init_with_discriminator(tiny_gcfg(), tiny_dcfg(), cfg).unwrap();
        let vals = validation_losses(&ckpt, &batch, false).unwrap();
        // Scalar oracle on the generator's own output.
        // The main forward uses ratio (tp - t1) / (t2 - t1) = 1/3, computed
        // through the same f32 conversion as the batch path.
        let y = crate::eval::synthesize_padded(
            &ckpt.generator,
            &t.x1,
            &t.x2,
            crate::frame::TimeRatio::new((1.0f64 / 3.0) as f32 as f64).unwrap(),
        )
        .unwrap();
        let expect =
            crate::losses::temporal_tv_loss(&y, &t.x1, &t.x2, 0.0, 3.0, 1.0, true).unwrap();
        assert!(
            (vals.tran - expect).abs() < 1e-5,
            "tape {} vs scalar {expect}",
            vals.tran
        );
    }
}
