//! Desk-scale training calibration: trains a small recipe on the synthetic
//! corpus and prints held-out midpoint PSNR against the frame-averaging
//! baseline after every epoch.
//!
//! Usage: smoke [filters] [patch] [epochs] [iters] [lr] [sigma] [variant] [max_gap]

use std::time::Instant;

use msfs_core::data::generate_corpus;
use msfs_core::eval::{evaluate_dataset, Predictor};
use msfs_core::losses::TransitiveVariant;
use msfs_core::model::GeneratorConfig;
use msfs_core::train::{holdout_split, pretrain_generator, Checkpoint, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let get = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let filters: usize = get(1, "32").parse().unwrap();
    let patch: usize = get(2, "32").parse().unwrap();
    let epochs: usize = get(3, "20").parse().unwrap();
    let iters: usize = get(4, "200").parse().unwrap();
    let lr: f64 = get(5, "1e-4").parse().unwrap();
    let sigma: f64 = get(6, "0.1").parse().unwrap();
    let variant = TransitiveVariant::parse(&get(7, "observed")).unwrap();
    let max_gap: usize = get(8, "3").parse().unwrap();

    let corpus = generate_corpus(32, 24, 64, 7).unwrap();
    let gcfg = GeneratorConfig {
        filters,
        ..GeneratorConfig::new(4, 5).unwrap()
    };
    let cfg = TrainConfig {
        patch,
        iters_per_epoch: iters,
        epochs_pretrain: 0, // raised incrementally below
        epochs_adv: 0,
        lr0: lr,
        noise_sigma: sigma,
        transitive_variant: variant,
        max_gap,
        seed: 7,
        ..TrainConfig::default()
    };
    let (_, val) = holdout_split(&corpus, &cfg);
    let (avg_psnr, avg_ssim) = evaluate_dataset(&Predictor::Average, &val, 1, 0.5).unwrap();
    println!(
        "baseline frame-averaging: psnr {avg_psnr:.3} dB ssim {avg_ssim:.4} ({} held-out videos)",
        val.len()
    );
    println!(
        "recipe: filters={filters} patch={patch} iters={iters} lr={lr} sigma={sigma} variant={} max_gap={max_gap}",
        variant.name()
    );

    let mut ckpt = Checkpoint::init(gcfg, cfg).unwrap();
    let t0 = Instant::now();
    for e in 1..=epochs {
        ckpt.config.epochs_pretrain = e;
        let curves = pretrain_generator(&mut ckpt, &corpus).unwrap();
        for p in curves.iter().filter(|p| p.split == "val") {
            println!(
                "epoch {:>3}  [{:>6.0}s]  val psnr {:.3} dB (margin {:+.3})  ssim {:.4}  train pix {:.4}",
                p.epoch,
                t0.elapsed().as_secs_f64(),
                p.psnr,
                p.psnr - avg_psnr,
                p.ssim,
                curves.iter().find(|q| q.split == "train" && q.epoch == p.epoch).map(|q| q.loss_pix).unwrap_or(f64::NAN),
            );
        }
    }
}
