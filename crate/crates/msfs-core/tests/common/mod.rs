//! Shared scaffolding for loss gradient checks: a miniature generator with a
//! frozen critic and feature stack on fixed random 4x4x3 inputs, compared
//! against central finite differences in double precision.

use msfs_core::discriminator::{critic_logits, DiscriminatorConfig, DiscriminatorParams};
use msfs_core::features::{FeatureExtractor, LayerTap};
use msfs_core::losses::{
    feature_loss_on_tape, gan_loss_g_on_tape, pixel_loss_on_tape, transitive_loss_on_tape,
    transitive_ratios, tv_loss_on_tape,
};
use msfs_core::model::{forward_batch, GeneratorConfig, GeneratorParams, GeneratorVars};
use msfs_core::tape::{Tape, Var};
use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Largest tolerated relative disagreement.
pub const REL_TOL: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Pixel,
    Feature,
    GanGenerator,
    TransitivePredicted,
    TransitiveObserved,
    Tv,
    WeightedTv,
}

// Consumed by the acceptance target; the per-loss target names kinds directly.
#[allow(dead_code)]
pub const ALL_KINDS: [LossKind; 7] = [
    LossKind::Pixel,
    LossKind::Feature,
    LossKind::GanGenerator,
    LossKind::TransitivePredicted,
    LossKind::TransitiveObserved,
    LossKind::Tv,
    LossKind::WeightedTv,
];

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Pixel => "pixel",
            LossKind::Feature => "feature",
            LossKind::GanGenerator => "gan-generator",
            LossKind::TransitivePredicted => "transitive-predicted",
            LossKind::TransitiveObserved => "transitive-observed",
            LossKind::Tv => "tv",
            LossKind::WeightedTv => "weighted-tv",
        }
    }
}

pub struct Scaffold {
    pub gcfg: GeneratorConfig,
    pub params: GeneratorParams<f64>,
    dcfg: DiscriminatorConfig,
    critic: DiscriminatorParams<f64>,
    features: FeatureExtractor<f64>,
    x1: ArrayD<f64>,
    x2: ArrayD<f64>,
    xp: ArrayD<f64>,
    target: ArrayD<f64>,
    r_main: f64,
    r_fwd: f64,
    r_bwd: f64,
}

fn random_image(rng: &mut ChaCha20Rng) -> ArrayD<f64> {
    ArrayD::from_shape_fn(IxDyn(&[1, 3, 4, 4]), |_| rng.gen::<f64>())
}

impl Scaffold {
    pub fn new(seed: u64) -> Self {
        let mut gcfg = GeneratorConfig::new(2, 1).unwrap();
        gcfg.filters = 3;
        gcfg.kernel = 3;
        let params = GeneratorParams::<f64>::init(gcfg.clone(), seed).unwrap();
        // Two strided layers keep the critic's smallest input at 4 pixels.
        let dcfg = DiscriminatorConfig {
            layers: 2,
            base_filters: 3,
            kernel: 3,
            ..DiscriminatorConfig::default()
        };
        let critic = DiscriminatorParams::<f64>::init(dcfg.clone(), seed ^ 1).unwrap();
        let features = FeatureExtractor::<f64>::new(Default::default()).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 2);
        let x1 = random_image(&mut rng);
        let x2 = random_image(&mut rng);
        let xp = random_image(&mut rng);
        let target = random_image(&mut rng);
        // Triplet (t1, tp, t2) = (0, 1, 3): an uneven split exercises all
        // three ratio roles away from symmetric special cases.
        let (r_main, r_fwd, r_bwd) = transitive_ratios(0.0, 3.0, 1.0).unwrap();
        Self {
            gcfg,
            params,
            dcfg,
            critic,
            features,
            x1,
            x2,
            xp,
            target,
            r_main,
            r_fwd,
            r_bwd,
        }
    }

    fn loss_node(&self, kind: LossKind, tape: &mut Tape<f64>, gvars: &GeneratorVars) -> Var {
        let x1 = tape.constant(self.x1.clone());
        let x2 = tape.constant(self.x2.clone());
        let target = tape.constant(self.target.clone());
        let out = *forward_batch(tape, gvars, &self.gcfg, x1, x2, &[self.r_main])
            .unwrap()
            .last()
            .unwrap();
        match kind {
            LossKind::Pixel => pixel_loss_on_tape(tape, out, target),
            LossKind::Feature => {
                let fvars = self.features.bind(tape);
                feature_loss_on_tape(tape, &fvars, LayerTap::Mid, out, target)
            }
            LossKind::GanGenerator => {
                let dvars = self.critic.bind(tape, false);
                let logits = critic_logits(tape, &dvars, &self.dcfg, out).unwrap();
                gan_loss_g_on_tape(tape, logits, false)
            }
            LossKind::TransitivePredicted => transitive_loss_on_tape(
                tape,
                gvars,
                &self.gcfg,
                x1,
                x2,
                out,
                &[self.r_fwd],
                &[self.r_bwd],
            )
            .unwrap(),
            LossKind::TransitiveObserved => {
                let xp = tape.constant(self.xp.clone());
                transitive_loss_on_tape(
                    tape,
                    gvars,
                    &self.gcfg,
                    x1,
                    x2,
                    xp,
                    &[self.r_fwd],
                    &[self.r_bwd],
                )
                .unwrap()
            }
            LossKind::Tv => tv_loss_on_tape(tape, out, x1, x2, 1.0, 1.0),
            LossKind::WeightedTv => tv_loss_on_tape(tape, out, x1, x2, 0.5, 1.5),
        }
    }

    fn loss_value(&self, kind: LossKind, params: &GeneratorParams<f64>) -> f64 {
        let mut tape = Tape::new();
        let gvars = params.bind(&mut tape, false);
        let node = self.loss_node(kind, &mut tape, &gvars);
        tape.scalar(node)
    }

    fn analytic_grads(&self, kind: LossKind) -> Vec<ArrayD<f64>> {
        let mut tape = Tape::new();
        let gvars = self.params.bind(&mut tape, true);
        let node = self.loss_node(kind, &mut tape, &gvars);
        tape.backward(node);
        gvars
            .all()
            .iter()
            .map(|&v| match tape.grad(v) {
                Some(g) => g.clone(),
                None => ArrayD::zeros(IxDyn(tape.value(v).shape())),
            })
            .collect()
    }

    /// Worst relative disagreement between the analytic gradient and central
    /// differences over every generator parameter. The denominator floors at
    /// 1e-5 so that near-zero gradients compare by absolute error instead of
    /// amplifying finite-difference noise.
    pub fn max_relative_error(&self, kind: LossKind) -> f64 {
        let analytic = self.analytic_grads(kind);
        let mut params = self.params.clone();
        let mut worst = 0.0f64;
        for (ti, grads) in analytic.iter().enumerate() {
            let g = grads.as_slice().expect("standard layout");
            for (i, &a) in g.iter().enumerate() {
                let original = params.tensors_mut()[ti].as_slice_mut().unwrap()[i];
                params.tensors_mut()[ti].as_slice_mut().unwrap()[i] = original + FD_STEP;
                let plus = self.loss_value(kind, &params);
                params.tensors_mut()[ti].as_slice_mut().unwrap()[i] = original - FD_STEP;
                let minus = self.loss_value(kind, &params);
                params.tensors_mut()[ti].as_slice_mut().unwrap()[i] = original;
                let fd = (plus - minus) / (2.0 * FD_STEP);
                let denom = a.abs().max(fd.abs()).max(1e-5);
                worst = worst.max((a - fd).abs() / denom);
            }
        }
        worst
    }

    /// Same comparison for the critic objective with respect to the critic's
    /// own parameters (the generator side stays frozen).
    pub fn critic_max_relative_error(&self) -> f64 {
        let critic_loss = |critic: &DiscriminatorParams<f64>, train: bool| -> (f64, Vec<ArrayD<f64>>) {
            let mut tape = Tape::new();
            let gvars = self.params.bind(&mut tape, false);
            let x1 = tape.constant(self.x1.clone());
            let x2 = tape.constant(self.x2.clone());
            let real = tape.constant(self.target.clone());
            let fake = *forward_batch(&mut tape, &gvars, &self.gcfg, x1, x2, &[self.r_main])
                .unwrap()
                .last()
                .unwrap();
            let dvars = critic.bind(&mut tape, train);
            let d_real = critic_logits(&mut tape, &dvars, &self.dcfg, real).unwrap();
            let d_fake = critic_logits(&mut tape, &dvars, &self.dcfg, fake).unwrap();
            let node = msfs_core::losses::gan_loss_d_on_tape(&mut tape, d_real, d_fake);
            let value = tape.scalar(node);
            let grads = if train {
                tape.backward(node);
                dvars
                    .all()
                    .iter()
                    .map(|&v| match tape.grad(v) {
                        Some(g) => g.clone(),
                        None => ArrayD::zeros(IxDyn(tape.value(v).shape())),
                    })
                    .collect()
            } else {
                Vec::new()
            };
            (value, grads)
        };

        let (_, analytic) = critic_loss(&self.critic, true);
        let mut critic = self.critic.clone();
        let mut worst = 0.0f64;
        for (ti, grads) in analytic.iter().enumerate() {
            let g = grads.as_slice().expect("standard layout");
            for (i, &a) in g.iter().enumerate() {
                let original = critic.tensors_mut()[ti].as_slice_mut().unwrap()[i];
                critic.tensors_mut()[ti].as_slice_mut().unwrap()[i] = original + FD_STEP;
                let (plus, _) = critic_loss(&critic, false);
                critic.tensors_mut()[ti].as_slice_mut().unwrap()[i] = original - FD_STEP;
                let (minus, _) = critic_loss(&critic, false);
                critic.tensors_mut()[ti].as_slice_mut().unwrap()[i] = original;
                let fd = (plus - minus) / (2.0 * FD_STEP);
                let denom = a.abs().max(fd.abs()).max(1e-5);
                worst = worst.max((a - fd).abs() / denom);
            }
        }
        worst
    }
}
