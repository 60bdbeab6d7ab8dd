//! The four subcommands: corpus generation, training, synthesis, evaluation.
//!
//! Each command runs in two phases. The *prepare* phase merges and validates
//! configuration and loads inputs; any failure there is a validation error
//! (exit code 2). The *execute* phase does the actual work; failures there
//! are classified by cause — training divergence and I/O failures abort the
//! run (exit code 3), while infeasible requests discovered late (for example
//! an evaluation interval no video can supply) are still validation errors.

use anyhow::{anyhow, bail, Context, Result};
use msfs_core::data::{generate_corpus, load_corpus, save_corpus};
use msfs_core::discriminator::DiscriminatorConfig;
use msfs_core::error::Error as CoreError;
use msfs_core::eval::{
    depth_sweep, evaluate_dataset, interpolate_sequence, MetricsReport, Predictor, ReportRow,
};
use msfs_core::frame::{Frame, TimeRatio};
use msfs_core::losses::{LossWeights, TransitiveVariant};
use msfs_core::model::GeneratorConfig;
use msfs_core::train::{
    adversarial_train, load_checkpoint, pretrain_generator, save_checkpoint, write_curves,
    Checkpoint, CurvePoint, TrainConfig,
};
use std::path::{Path, PathBuf};

use crate::layering::{resolve_out_dir, write_echo, Layered};
use crate::{DatagenArgs, EvalArgs, SynthArgs, TrainArgs};

/// Command failure with its exit-code class.
pub enum CmdError {
    /// Bad flags, config, or inputs — exit code 2.
    Validation(anyhow::Error),
    /// The run started and aborted — exit code 3.
    Runtime(anyhow::Error),
}

impl CmdError {
    pub fn code(&self) -> u8 {
        match self {
            CmdError::Validation(_) => 2,
            CmdError::Runtime(_) => 3,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            CmdError::Validation(e) | CmdError::Runtime(e) => e,
        }
    }
}

fn validation(e: anyhow::Error) -> CmdError {
    CmdError::Validation(e)
}

/// Classifies an execute-phase failure. Divergence and I/O faults abort the
/// run; every other library error signals an infeasible request.
fn classify_runtime(e: anyhow::Error) -> CmdError {
    let is_abort = e.chain().any(|cause| {
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            matches!(core, CoreError::Divergence(_) | CoreError::Io(_))
        } else {
            cause.downcast_ref::<std::io::Error>().is_some()
        }
    });
    if is_abort || e.chain().all(|c| c.downcast_ref::<CoreError>().is_none()) {
        CmdError::Runtime(e)
    } else {
        CmdError::Validation(e)
    }
}

type CmdResult = std::result::Result<(), CmdError>;

// ---- datagen ----

const DATAGEN_KEYS: &[(&str, &str)] = &[
    ("videos", "32"),
    ("frames", "24"),
    ("size", "64"),
    ("seed", "7"),
    ("out", ""),
];

pub fn cmd_datagen(args: DatagenArgs) -> CmdResult {
    let (mut layered, corpus, out) = (|| -> Result<_> {
        let layered = Layered::build(
            DATAGEN_KEYS,
            args.config.as_deref(),
            &[
                ("videos", args.videos),
                ("frames", args.frames),
                ("size", args.size),
                ("seed", args.seed),
                ("out", args.out),
            ],
        )?;
        let videos = layered.usize("videos")?;
        let frames = layered.usize("frames")?;
        let size = layered.usize("size")?;
        let seed = layered.u64("seed")?;
        if size % 8 != 0 {
            bail!("size must be a multiple of 8, got {size}");
        }
        let corpus = generate_corpus(videos, frames, size, seed)?;
        let out = resolve_out_dir(&layered.string("out"), "datagen")?;
        Ok((layered, corpus, out))
    })()
    .map_err(validation)?;

    (|| -> Result<()> {
        save_corpus(&out, &corpus)?;
        layered.set("out", out.display().to_string());
        write_echo(&out, &layered)?;
        println!(
            "wrote {} videos x {} frames to {}",
            corpus.len(),
            corpus[0].len(),
            out.display()
        );
        Ok(())
    })()
    .map_err(classify_runtime)
}

// ---- train ----

const TRAIN_KEYS: &[(&str, &str)] = &[
    ("corpus", ""),
    ("out", ""),
    ("levels", "4"),
    ("blocks", "5"),
    ("filters", "64"),
    ("kernel", "5"),
    ("d_layers", "5"),
    ("d_filters", "64"),
    ("d_kernel", "5"),
    ("batch", "8"),
    ("patch", "128"),
    ("iters_per_epoch", "200"),
    ("epochs_pretrain", "10"),
    ("epochs_adv", "10"),
    ("lr", "0.0001"),
    ("decay_factor", "0.5"),
    ("decay_every", "50"),
    ("variant", "predicted"),
    ("adversarial", "true"),
    ("seed", "7"),
    ("max_gap", "3"),
    ("val_fraction", "0.1"),
    ("eval_every", "1"),
    ("noise_sigma", "0.1"),
    ("variance_threshold", "0.005"),
    ("augment", "true"),
    ("lambda_feat", "0.00002"),
    ("lambda_gan", "0.05"),
    ("lambda_tran", "0.2"),
];

struct TrainPlan {
    corpus: Vec<msfs_core::data::VideoSequence>,
    gcfg: GeneratorConfig,
    dcfg: DiscriminatorConfig,
    cfg: TrainConfig,
    out: PathBuf,
}

fn prepare_train(args: TrainArgs) -> Result<TrainPlan> {
    let mut layered = Layered::build(
        TRAIN_KEYS,
        args.config.as_deref(),
        &[
            ("corpus", args.corpus),
            ("out", args.out),
            ("levels", args.levels),
            ("blocks", args.blocks),
            ("filters", args.filters),
            ("kernel", args.kernel),
            ("d_layers", args.d_layers),
            ("d_filters", args.d_filters),
            ("d_kernel", args.d_kernel),
            ("batch", args.batch),
            ("patch", args.patch),
            ("iters_per_epoch", args.iters_per_epoch),
            ("epochs_pretrain", args.epochs_pretrain),
            ("epochs_adv", args.epochs_adv),
            ("lr", args.lr),
            ("decay_factor", args.decay_factor),
            ("decay_every", args.decay_every),
            ("variant", args.variant),
            ("adversarial", args.adversarial),
            ("seed", args.seed),
            ("max_gap", args.max_gap),
            ("val_fraction", args.val_fraction),
            ("eval_every", args.eval_every),
            ("noise_sigma", args.noise_sigma),
            ("variance_threshold", args.variance_threshold),
            ("augment", args.augment),
            ("lambda_feat", args.lambda_feat),
            ("lambda_gan", args.lambda_gan),
            ("lambda_tran", args.lambda_tran),
        ],
    )?;

    let corpus_dir = layered.string("corpus");
    if corpus_dir.is_empty() {
        bail!("--corpus is required (or set `corpus` in the config file)");
    }
    let corpus = load_corpus(Path::new(&corpus_dir))
        .with_context(|| format!("cannot load corpus from {corpus_dir}"))?;

    let mut gcfg = GeneratorConfig::new(layered.usize("levels")?, layered.usize("blocks")?)?;
    gcfg.filters = layered.usize("filters")?;
    gcfg.kernel = layered.usize("kernel")?;
    gcfg.validate()?;

    let dcfg = DiscriminatorConfig {
        layers: layered.usize("d_layers")?,
        base_filters: layered.usize("d_filters")?,
        kernel: layered.usize("d_kernel")?,
        ..DiscriminatorConfig::default()
    };

    let adversarial = layered.bool("adversarial")?;
    let epochs_adv = if adversarial {
        layered.usize("epochs_adv")?
    } else {
        0
    };
    let cfg = TrainConfig {
        lr0: layered.f64("lr")?,
        batch: layered.usize("batch")?,
        patch: layered.usize("patch")?,
        iters_per_epoch: layered.usize("iters_per_epoch")?,
        epochs_pretrain: layered.usize("epochs_pretrain")?,
        epochs_adv,
        decay_factor: layered.f64("decay_factor")?,
        decay_every: layered.usize("decay_every")?,
        transitive_variant: TransitiveVariant::parse(&layered.string("variant"))?,
        seed: layered.u64("seed")?,
        max_gap: layered.usize("max_gap")?,
        val_fraction: layered.f64("val_fraction")?,
        eval_every: layered.usize("eval_every")?,
        noise_sigma: layered.f64("noise_sigma")?,
        variance_threshold: layered.f64("variance_threshold")?,
        augment_geom: layered.bool("augment")?,
        weights: LossWeights {
            lambda_feat: layered.f64("lambda_feat")?,
            lambda_gan: layered.f64("lambda_gan")?,
            lambda_tran: layered.f64("lambda_tran")?,
        },
        ..TrainConfig::default()
    };
    cfg.validate(&gcfg, &dcfg)?;

    let out = resolve_out_dir(&layered.string("out"), "train")?;
    layered.set("out", out.display().to_string());
    write_echo(&out, &layered)?;

    Ok(TrainPlan {
        corpus,
        gcfg,
        dcfg,
        cfg,
        out,
    })
}

fn fmt_component(v: f64) -> String {
    if v.is_nan() {
        "-".to_string()
    } else {
        format!("{v:.5}")
    }
}

fn print_curve_rows(rows: &[CurvePoint], phase: &str) {
    for p in rows {
        println!(
            "[{phase}] epoch {:>3} {:<5} psnr {:>7.3} dB  ssim {:.4}  loss {}  pix {}  feat {}  gan {}  tran {}",
            p.epoch,
            p.split,
            p.psnr,
            p.ssim,
            fmt_component(p.loss_total),
            fmt_component(p.loss_pix),
            fmt_component(p.loss_feat),
            fmt_component(p.loss_gan),
            fmt_component(p.loss_tran),
        );
    }
}

fn execute_train(plan: TrainPlan) -> Result<()> {
    let TrainPlan {
        corpus,
        gcfg,
        dcfg,
        cfg,
        out,
    } = plan;
    let epochs_pretrain = cfg.epochs_pretrain;
    let epochs_adv = cfg.epochs_adv;
    let mut ckpt = Checkpoint::init_with_discriminator(gcfg, dcfg, cfg)?;
    let ckpt_path = out.join("checkpoint.msfs");
    let curves_path = out.join("curves.csv");
    let mut curves: Vec<CurvePoint> = Vec::new();

    // Epoch-by-epoch driving keeps the console live and the checkpoint on
    // disk current; the result is bit-identical to one uninterrupted run.
    for epoch in 1..=epochs_pretrain {
        ckpt.config.epochs_pretrain = epoch;
        let rows = pretrain_generator(&mut ckpt, &corpus)?;
        print_curve_rows(&rows, "pretrain");
        curves.extend(rows);
        write_curves(&curves_path, &curves)?;
        save_checkpoint(&ckpt, &ckpt_path)?;
    }
    for epoch in 1..=epochs_adv {
        ckpt.config.epochs_adv = epoch;
        let rows = adversarial_train(&mut ckpt, &corpus)?;
        print_curve_rows(&rows, "adversarial");
        curves.extend(rows);
        write_curves(&curves_path, &curves)?;
        save_checkpoint(&ckpt, &ckpt_path)?;
    }
    if curves.is_empty() {
        // Zero-epoch run: still leave a valid checkpoint and curve file.
        write_curves(&curves_path, &curves)?;
        save_checkpoint(&ckpt, &ckpt_path)?;
    }

    if let Some(last_val) = curves.iter().rev().find(|p| p.split == "val") {
        println!(
            "final validation: psnr {:.3} dB  ssim {:.4}",
            last_val.psnr, last_val.ssim
        );
    }
    println!("checkpoint: {}", ckpt_path.display());
    println!("curves:     {}", curves_path.display());
    Ok(())
}

pub fn cmd_train(args: TrainArgs) -> CmdResult {
    let plan = prepare_train(args).map_err(validation)?;
    execute_train(plan).map_err(classify_runtime)
}

// ---- synth ----

const SYNTH_KEYS: &[(&str, &str)] = &[
    ("checkpoint", ""),
    ("first", ""),
    ("second", ""),
    ("ratios", "0.5"),
    ("levels", ""),
    ("out", ""),
];

struct SynthPlan {
    params: msfs_core::model::GeneratorParams<f32>,
    x1: Frame,
    x2: Frame,
    ratios: Vec<f64>,
    out: PathBuf,
}

fn prepare_synth(args: SynthArgs) -> Result<SynthPlan> {
    let mut layered = Layered::build(
        SYNTH_KEYS,
        args.config.as_deref(),
        &[
            ("checkpoint", args.checkpoint),
            ("first", args.first),
            ("second", args.second),
            ("ratios", args.ratios),
            ("levels", args.levels),
            ("out", args.out),
        ],
    )?;

    let ckpt_path = layered.string("checkpoint");
    if ckpt_path.is_empty() {
        bail!("--checkpoint is required");
    }
    let ckpt = load_checkpoint(Path::new(&ckpt_path))
        .with_context(|| format!("cannot load checkpoint {ckpt_path}"))?;
    let mut params = ckpt.generator;

    let first = layered.string("first");
    let second = layered.string("second");
    if first.is_empty() || second.is_empty() {
        bail!("--first and --second input images are required");
    }
    let x1 = Frame::load_png(Path::new(&first))
        .with_context(|| format!("cannot load {first}"))?;
    let x2 = Frame::load_png(Path::new(&second))
        .with_context(|| format!("cannot load {second}"))?;
    if !x1.same_shape(&x2) {
        bail!(
            "input images must share one size, got {}x{} vs {}x{}",
            x1.height(),
            x1.width(),
            x2.height(),
            x2.width()
        );
    }

    let ratios = layered.list_f64("ratios")?;
    if ratios.is_empty() {
        bail!("ratios: at least one time ratio is required");
    }
    for &r in &ratios {
        TimeRatio::new(r).map_err(|e| anyhow!(e))?;
    }

    let levels = layered.string("levels");
    if !levels.is_empty() {
        params.config.pyramid_levels = layered.usize("levels")?;
        params.config.validate()?;
    }

    let out = resolve_out_dir(&layered.string("out"), "synth")?;
    layered.set("out", out.display().to_string());
    write_echo(&out, &layered)?;

    Ok(SynthPlan {
        params,
        x1,
        x2,
        ratios,
        out,
    })
}

fn execute_synth(plan: SynthPlan) -> Result<()> {
    let frames = interpolate_sequence(&plan.params, &plan.x1, &plan.x2, &plan.ratios)?;
    for (r, frame) in plan.ratios.iter().zip(&frames) {
        let path = plan.out.join(format!("frame_r{r}.png"));
        frame.save_png(&path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub fn cmd_synth(args: SynthArgs) -> CmdResult {
    let plan = prepare_synth(args).map_err(validation)?;
    execute_synth(plan).map_err(classify_runtime)
}

// ---- eval ----

const EVAL_KEYS: &[(&str, &str)] = &[
    ("checkpoint", ""),
    ("corpus", ""),
    ("dataset", ""),
    ("intervals", "1,2,3"),
    ("levels", ""),
    ("ratio", "0.5"),
    ("oracle", ""),
    ("out", ""),
];

struct EvalPlan {
    corpus: Vec<msfs_core::data::VideoSequence>,
    dataset: String,
    intervals: Vec<usize>,
    levels: Vec<usize>,
    ratio: f64,
    model: Option<msfs_core::model::GeneratorParams<f32>>,
    oracle: Option<Predictor>,
    out: PathBuf,
}

fn prepare_eval(args: EvalArgs) -> Result<EvalPlan> {
    let mut layered = Layered::build(
        EVAL_KEYS,
        args.config.as_deref(),
        &[
            ("checkpoint", args.checkpoint),
            ("corpus", args.corpus),
            ("dataset", args.dataset),
            ("intervals", args.intervals),
            ("levels", args.levels),
            ("ratio", args.ratio),
            ("oracle", args.oracle),
            ("out", args.out),
        ],
    )?;

    let corpus_dir = layered.string("corpus");
    if corpus_dir.is_empty() {
        bail!("--corpus is required");
    }
    let corpus = load_corpus(Path::new(&corpus_dir))
        .with_context(|| format!("cannot load corpus from {corpus_dir}"))?;
    let dataset = if layered.string("dataset").is_empty() {
        Path::new(&corpus_dir)
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "corpus".to_string())
    } else {
        layered.string("dataset")
    };

    let intervals = layered.list_usize("intervals")?;
    if intervals.is_empty() {
        bail!("intervals: at least one interval is required");
    }
    if intervals.iter().any(|&k| k == 0) {
        bail!("intervals must be >= 1");
    }
    let ratio = layered.f64("ratio")?;
    TimeRatio::new(ratio).map_err(|e| anyhow!(e))?;

    let oracle_name = layered.string("oracle");
    let (model, oracle, levels) = if oracle_name.is_empty() {
        let ckpt_path = layered.string("checkpoint");
        if ckpt_path.is_empty() {
            bail!("--checkpoint is required unless --oracle selects a baseline");
        }
        let ckpt = load_checkpoint(Path::new(&ckpt_path))
            .with_context(|| format!("cannot load checkpoint {ckpt_path}"))?;
        let mut levels = layered.list_usize("levels")?;
        if levels.is_empty() {
            levels = vec![ckpt.generator.config.pyramid_levels];
        }
        let mut probe = ckpt.generator.config.clone();
        for &s in &levels {
            probe.pyramid_levels = s;
            probe.validate()?;
        }
        (Some(ckpt.generator), None, levels)
    } else {
        let pred = Predictor::parse_oracle(&oracle_name)?;
        if !layered.string("levels").is_empty() {
            bail!("levels apply only to model evaluation, not to --oracle baselines");
        }
        (None, Some(pred), Vec::new())
    };

    let out = resolve_out_dir(&layered.string("out"), "eval")?;
    layered.set("out", out.display().to_string());
    write_echo(&out, &layered)?;

    Ok(EvalPlan {
        corpus,
        dataset,
        intervals,
        levels,
        ratio,
        model,
        oracle,
        out,
    })
}

fn execute_eval(plan: EvalPlan) -> Result<()> {
    let report = if let Some(oracle) = &plan.oracle {
        let mut report = MetricsReport::default();
        for &k in &plan.intervals {
            let (psnr_db, ssim) = evaluate_dataset(oracle, &plan.corpus, k, plan.ratio)?;
            report.rows.push(ReportRow {
                dataset: plan.dataset.clone(),
                interval: k,
                ratio: plan.ratio,
                // Baselines have no pyramid; level 0 marks "not applicable".
                pyramid_levels: 0,
                psnr_db,
                ssim,
            });
        }
        report
    } else {
        let params = plan.model.as_ref().expect("model mode");
        if plan.ratio == 0.5 {
            depth_sweep(
                params,
                &plan.dataset,
                &plan.corpus,
                &plan.levels,
                &plan.intervals,
            )?
        } else {
            let mut report = MetricsReport::default();
            for &s in &plan.levels {
                let mut p = params.clone();
                p.config.pyramid_levels = s;
                let predictor = Predictor::Model(p);
                for &k in &plan.intervals {
                    let (psnr_db, ssim) =
                        evaluate_dataset(&predictor, &plan.corpus, k, plan.ratio)?;
                    report.rows.push(ReportRow {
                        dataset: plan.dataset.clone(),
                        interval: k,
                        ratio: plan.ratio,
                        pyramid_levels: s,
                        psnr_db,
                        ssim,
                    });
                }
            }
            report
        }
    };

    let csv_path = plan.out.join("report.csv");
    report.write_csv(&csv_path)?;
    print!("{}", report.to_table());
    println!("report: {}", csv_path.display());
    Ok(())
}

pub fn cmd_eval(args: EvalArgs) -> CmdResult {
    let plan = prepare_eval(args).map_err(validation)?;
    execute_eval(plan).map_err(classify_runtime)
}
