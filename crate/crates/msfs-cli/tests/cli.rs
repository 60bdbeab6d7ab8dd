//! End-to-end tests of the `msfs` binary: artifact layout, determinism,
//! config layering precedence, exit codes, and the full
//! datagen → train → synth → eval pipeline at miniature scale.

use std::path::Path;
use std::process::{Command, Output};

/// The binary under test, with any ambient MSFS_* overrides stripped so
/// tests control layering themselves.
fn msfs() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_msfs"));
    for (key, _) in std::env::vars() {
        if key.starts_with("MSFS_") {
            cmd.env_remove(&key);
        }
    }
    cmd
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn msfs");
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_code(cmd: &mut Command, expected: i32) -> Output {
    let out = cmd.output().expect("spawn msfs");
    assert_eq!(
        out.status.code(),
        Some(expected),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Recursively reads every file under `dir` keyed by relative path.
fn snapshot(dir: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut map = std::collections::BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                map.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    map
}

fn tiny_corpus(dir: &Path) {
    run_ok(msfs().args([
        "datagen",
        "--videos",
        "3",
        "--frames",
        "6",
        "--size",
        "32",
        "--seed",
        "5",
        "--out",
        dir.to_str().unwrap(),
    ]));
}

/// Shared flags for a seconds-scale training run.
fn tiny_train_args(corpus: &Path, out: &Path) -> Vec<String> {
    [
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--levels",
        "2",
        "--blocks",
        "1",
        "--filters",
        "4",
        "--kernel",
        "3",
        "--d-layers",
        "3",
        "--d-filters",
        "4",
        "--d-kernel",
        "3",
        "--batch",
        "2",
        "--patch",
        "16",
        "--iters-per-epoch",
        "2",
        "--epochs-pretrain",
        "1",
        "--epochs-adv",
        "1",
        "--seed",
        "11",
        "--noise-sigma",
        "0",
        "--max-gap",
        "2",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[test]
fn datagen_layout_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    tiny_corpus(&a);
    tiny_corpus(&b);

    for i in 0..3 {
        let video = a.join(format!("video_{i:03}"));
        assert!(video.is_dir(), "missing {}", video.display());
        let pngs = std::fs::read_dir(&video)
            .unwrap()
            .filter(|e| {
                e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png")
            })
            .count();
        assert_eq!(pngs, 6);
        assert!(video.join("metadata.txt").is_file());
    }
    assert!(a.join("config.txt").is_file());

    let snap_a = snapshot(&a);
    let snap_b = snapshot(&b);
    // config.txt echoes the differing --out values; all corpus bytes match.
    let strip = |m: &std::collections::BTreeMap<String, Vec<u8>>| {
        m.iter()
            .filter(|(k, _)| *k != "config.txt")
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&snap_a), strip(&snap_b));
}

#[test]
fn datagen_rejects_size_not_multiple_of_eight() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_code(
        msfs().args([
            "datagen",
            "--size",
            "60",
            "--out",
            tmp.path().join("x").to_str().unwrap(),
        ]),
        2,
    );
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("multiple of 8"), "{err}");
}

#[test]
fn config_precedence_flags_env_file_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "seed = 1\nvideos = 1\nframes = 3\nsize = 16\n").unwrap();
    let seed_of = |dir: &Path| {
        let echo = std::fs::read_to_string(dir.join("config.txt")).unwrap();
        echo.lines()
            .find(|l| l.starts_with("seed ="))
            .unwrap()
            .to_string()
    };

    let d1 = tmp.path().join("file_only");
    run_ok(msfs().args([
        "datagen",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        d1.to_str().unwrap(),
    ]));
    assert_eq!(seed_of(&d1), "seed = 1");

    let d2 = tmp.path().join("env_beats_file");
    run_ok(
        msfs()
            .args([
                "datagen",
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                d2.to_str().unwrap(),
            ])
            .env("MSFS_SEED", "2"),
    );
    assert_eq!(seed_of(&d2), "seed = 2");

    let d3 = tmp.path().join("flag_beats_env");
    run_ok(
        msfs()
            .args([
                "datagen",
                "--config",
                cfg.to_str().unwrap(),
                "--seed",
                "3",
                "--out",
                d3.to_str().unwrap(),
            ])
            .env("MSFS_SEED", "2"),
    );
    assert_eq!(seed_of(&d3), "seed = 3");

    let d4 = tmp.path().join("defaults");
    run_ok(msfs().args([
        "datagen",
        "--videos",
        "1",
        "--frames",
        "3",
        "--size",
        "16",
        "--out",
        d4.to_str().unwrap(),
    ]));
    assert_eq!(seed_of(&d4), "seed = 7");
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "bogus = 1\n").unwrap();
    let out = run_code(
        msfs().args([
            "datagen",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            tmp.path().join("x").to_str().unwrap(),
        ]),
        2,
    );
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("unknown key") && err.contains("bogus"), "{err}");
}

#[test]
fn train_rejects_missing_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    run_code(
        msfs().args([
            "train",
            "--corpus",
            tmp.path().join("nope").to_str().unwrap(),
            "--out",
            tmp.path().join("run").to_str().unwrap(),
        ]),
        2,
    );
    run_code(msfs().args(["train"]), 2);
}

#[test]
fn pipeline_train_synth_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    tiny_corpus(&corpus);

    // Train with one pretrain and one adversarial epoch.
    let run = tmp.path().join("run");
    run_ok(msfs().args(tiny_train_args(&corpus, &run)));
    let ckpt = run.join("checkpoint.msfs");
    assert!(ckpt.is_file());
    assert!(run.join("config.txt").is_file());
    let curves = std::fs::read_to_string(run.join("curves.csv")).unwrap();
    let mut lines = curves.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch,split,psnr,ssim,loss_total,loss_pix,loss_feat,loss_gan,loss_tran"
    );
    assert!(lines.count() >= 2, "expected train and val rows:\n{curves}");

    // Synthesis at three ratios.
    let synth = tmp.path().join("synth");
    run_ok(msfs().args([
        "synth",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--first",
        corpus.join("video_000/frame_0000.png").to_str().unwrap(),
        "--second",
        corpus.join("video_000/frame_0002.png").to_str().unwrap(),
        "--ratios",
        "0.25,0.5,0.75",
        "--out",
        synth.to_str().unwrap(),
    ]));
    for r in ["0.25", "0.5", "0.75"] {
        assert!(synth.join(format!("frame_r{r}.png")).is_file());
    }

    // Extrapolation at a non-training pyramid depth.
    let synth2 = tmp.path().join("synth_extra");
    run_ok(msfs().args([
        "synth",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--first",
        corpus.join("video_000/frame_0000.png").to_str().unwrap(),
        "--second",
        corpus.join("video_000/frame_0002.png").to_str().unwrap(),
        "--ratios",
        "1.5",
        "--levels",
        "3",
        "--out",
        synth2.to_str().unwrap(),
    ]));
    assert!(synth2.join("frame_r1.5.png").is_file());

    // Depth-sweep evaluation is deterministic across invocations.
    let eval_once = |dir: &Path| {
        run_ok(msfs().args([
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--corpus",
            corpus.to_str().unwrap(),
            "--intervals",
            "1,2",
            "--levels",
            "2,3",
            "--out",
            dir.to_str().unwrap(),
        ]));
        std::fs::read_to_string(dir.join("report.csv")).unwrap()
    };
    let r1 = eval_once(&tmp.path().join("eval1"));
    let r2 = eval_once(&tmp.path().join("eval2"));
    assert_eq!(r1, r2);
    let mut rows = r1.lines();
    assert_eq!(
        rows.next().unwrap(),
        "dataset,interval,ratio,pyramid_levels,psnr_db,ssim"
    );
    assert_eq!(rows.count(), 4, "2 levels x 2 intervals:\n{r1}");
}

#[test]
fn synth_rejects_mismatched_input_sizes() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    tiny_corpus(&corpus);
    let small = tmp.path().join("small");
    run_ok(msfs().args([
        "datagen",
        "--videos",
        "1",
        "--frames",
        "3",
        "--size",
        "16",
        "--seed",
        "5",
        "--out",
        small.to_str().unwrap(),
    ]));

    let run = tmp.path().join("run");
    let mut args = tiny_train_args(&corpus, &run);
    args.extend(["--adversarial".into(), "false".into()]);
    run_ok(msfs().args(&args));

    let out = run_code(
        msfs().args([
            "synth",
            "--checkpoint",
            run.join("checkpoint.msfs").to_str().unwrap(),
            "--first",
            corpus.join("video_000/frame_0000.png").to_str().unwrap(),
            "--second",
            small.join("video_000/frame_0001.png").to_str().unwrap(),
            "--out",
            tmp.path().join("x").to_str().unwrap(),
        ]),
        2,
    );
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("share one size"), "{err}");
}

#[test]
fn generator_only_arm_emits_no_critic_column() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    tiny_corpus(&corpus);

    let run = tmp.path().join("run");
    // --epochs-adv 1 stays in the flag set; --adversarial false must win.
    let mut args = tiny_train_args(&corpus, &run);
    args.extend([
        "--adversarial".into(),
        "false".into(),
        "--variant".into(),
        "observed".into(),
    ]);
    run_ok(msfs().args(&args));

    let echo = std::fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(echo.contains("adversarial = false"), "{echo}");
    assert!(echo.contains("variant = observed"), "{echo}");

    let curves = std::fs::read_to_string(run.join("curves.csv")).unwrap();
    for line in curves.lines().skip(1) {
        let gan = line.split(',').nth(7).unwrap();
        assert_eq!(gan, "NaN", "generator-only run must not have critic loss: {line}");
    }
}

#[test]
fn identity_oracle_on_static_corpus_scores_perfect_ssim() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("static");
    let videos: Vec<_> = (0..2)
        .map(|i| {
            msfs_core::data::generate_synthetic_video(5, 32, (0, 0), 40 + i).unwrap()
        })
        .collect();
    msfs_core::data::save_corpus(&corpus, &videos).unwrap();

    let eval = tmp.path().join("eval");
    run_ok(msfs().args([
        "eval",
        "--oracle",
        "identity",
        "--corpus",
        corpus.to_str().unwrap(),
        "--intervals",
        "1",
        "--out",
        eval.to_str().unwrap(),
    ]));
    let report = std::fs::read_to_string(eval.join("report.csv")).unwrap();
    let row = report.lines().nth(1).unwrap();
    let ssim: f64 = row.split(',').nth(5).unwrap().parse().unwrap();
    assert_eq!(ssim, 1.0, "{report}");
}

#[test]
fn eval_rejects_levels_with_oracle_and_unknown_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    tiny_corpus(&corpus);
    run_code(
        msfs().args([
            "eval",
            "--oracle",
            "average",
            "--levels",
            "3,4",
            "--corpus",
            corpus.to_str().unwrap(),
            "--out",
            tmp.path().join("a").to_str().unwrap(),
        ]),
        2,
    );
    run_code(
        msfs().args([
            "eval",
            "--oracle",
            "wizard",
            "--corpus",
            corpus.to_str().unwrap(),
            "--out",
            tmp.path().join("b").to_str().unwrap(),
        ]),
        2,
    );
}

#[test]
fn midrun_write_failure_aborts_with_code_3() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    tiny_corpus(&corpus);

    // Occupy the curve-file path with a directory so the first post-epoch
    // write fails after training has genuinely started.
    let run = tmp.path().join("run");
    std::fs::create_dir_all(run.join("curves.csv")).unwrap();
    let mut args = tiny_train_args(&corpus, &run);
    args.extend(["--adversarial".into(), "false".into()]);
    run_code(msfs().args(&args), 3);
}
