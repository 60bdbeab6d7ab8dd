//! Data pipeline: video sequences, triplet sampling with random intervals,
//! smooth-patch rejection, augmentation, and the synthetic moving-square
//! corpus with exact ground-truth motion.

use crate::error::{Error, Result};
use crate::frame::{Frame, TimeRatio};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use std::path::Path;

/// Ground-truth motion of a synthetic video.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoMeta {
    pub fps: u32,
    /// Constant per-frame translation of the square, pixels/frame.
    pub velocity: (i64, i64),
    pub square_side: usize,
    /// Wrapped top-left corner of the square at every frame.
    pub positions: Vec<(i64, i64)>,
}

/// An ordered run of frames with integer timestamps (frame indices).
#[derive(Clone, Debug)]
pub struct VideoSequence {
    pub frames: Vec<Frame>,
    pub timestamps: Vec<i64>,
    pub meta: Option<VideoMeta>,
}

impl VideoSequence {
    pub fn new(frames: Vec<Frame>, timestamps: Vec<i64>) -> Result<Self> {
        if frames.len() != timestamps.len() {
            return Err(Error::Config(format!(
                "{} frames but {} timestamps",
                frames.len(),
                timestamps.len()
            )));
        }
        if !timestamps.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("timestamps must strictly increase".into()));
        }
        if let Some(first) = frames.first() {
            if !frames.iter().all(|f| f.same_shape(first)) {
                return Err(Error::Shape("video frames must share dimensions".into()));
            }
        }
        Ok(Self {
            frames,
            timestamps,
            meta: None,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Three frames with their timestamps; always ordered t1 < tp < t2.
#[derive(Clone, Debug)]
pub struct TripletSample {
    pub x1: Frame,
    pub xp: Frame,
    pub x2: Frame,
    pub t1: i64,
    pub tp: i64,
    pub t2: i64,
}

/// `(t_target - t_a) / (t_b - t_a)`.
pub fn compute_ratio(t_a: f64, t_b: f64, t_target: f64) -> Result<TimeRatio> {
    if t_a == t_b {
        return Err(Error::DegenerateAnchors(t_a));
    }
    TimeRatio::new((t_target - t_a) / (t_b - t_a))
}

/// Draws a triplet `(i, i+g1, i+g1+g2)` with gaps in `[1, max_gap]` (capped
/// by video length) and a uniform start index.
pub fn sample_triplet(
    video: &VideoSequence,
    max_gap: usize,
    rng: &mut ChaCha20Rng,
) -> Result<TripletSample> {
    let n = video.len();
    if n < 3 {
        return Err(Error::InsufficientFrames { got: n, need: 3 });
    }
    if max_gap == 0 {
        return Err(Error::Config("max_gap must be >= 1".into()));
    }
    let m1 = max_gap.min(n - 2);
    let g1 = rng.gen_range(1..=m1);
    let m2 = max_gap.min(n - 1 - g1);
    let g2 = rng.gen_range(1..=m2);
    let start = rng.gen_range(0..=(n - 1 - g1 - g2));
    let (i, j, k) = (start, start + g1, start + g1 + g2);
    Ok(TripletSample {
        x1: video.frames[i].clone(),
        xp: video.frames[j].clone(),
        x2: video.frames[k].clone(),
        t1: video.timestamps[i],
        tp: video.timestamps[j],
        t2: video.timestamps[k],
    })
}

/// Population variance of the channel-mean image; patches below threshold
/// count as smooth and are rejected.
pub fn patch_variance_ok(patch: &Frame, threshold: f64) -> bool {
    let gray = patch.channel_mean();
    let n = gray.len() as f64;
    let mean = gray.sum() / n;
    let var = gray.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var >= threshold
}

/// Augmentation policy. Geometric draws (rotation, flips, crop window) are
/// made once per triplet and applied to all three frames; noise is drawn
/// independently per frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentSpec {
    pub rotate: bool,
    pub flip: bool,
    /// Square crop side; 0 disables cropping.
    pub crop: usize,
    pub noise_sigma: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            rotate: true,
            flip: true,
            crop: 128,
            noise_sigma: 0.1,
        }
    }
}

fn rot90(f: &Frame) -> Frame {
    let d = f.data();
    let (h, w) = (f.height(), f.width());
    let out = Array3::from_shape_fn((3, w, h), |(c, y, x)| d[(c, h - 1 - x, y)]);
    Frame::new(out).expect("rotation preserves validity")
}

fn flip_h(f: &Frame) -> Frame {
    let d = f.data();
    let w = f.width();
    let out = Array3::from_shape_fn((3, f.height(), w), |(c, y, x)| d[(c, y, w - 1 - x)]);
    Frame::new(out).expect("flip preserves validity")
}

fn flip_v(f: &Frame) -> Frame {
    let d = f.data();
    let h = f.height();
    let out = Array3::from_shape_fn((3, h, f.width()), |(c, y, x)| d[(c, h - 1 - y, x)]);
    Frame::new(out).expect("flip preserves validity")
}

fn crop(f: &Frame, y0: usize, x0: usize, side: usize) -> Frame {
    let view = f
        .data()
        .slice(ndarray::s![.., y0..y0 + side, x0..x0 + side])
        .to_owned();
    Frame::new(view).expect("crop preserves validity")
}

/// One geometric draw shared by the triplet, then per-frame noise, then
/// clamping back into range.
pub fn augment(
    triplet: &TripletSample,
    spec: &AugmentSpec,
    rng: &mut ChaCha20Rng,
) -> Result<TripletSample> {
    let quarter_turns = if spec.rotate { rng.gen_range(0..4u8) } else { 0 };
    let do_h = spec.flip && rng.gen_bool(0.5);
    let do_v = spec.flip && rng.gen_bool(0.5);

    let geo = |f: &Frame| {
        let mut g = f.clone();
        for _ in 0..quarter_turns {
            g = rot90(&g);
        }
        if do_h {
            g = flip_h(&g);
        }
        if do_v {
            g = flip_v(&g);
        }
        g
    };
    let mut x1 = geo(&triplet.x1);
    let mut xp = geo(&triplet.xp);
    let mut x2 = geo(&triplet.x2);

    if spec.crop > 0 {
        if spec.crop > x1.height() || spec.crop > x1.width() {
            return Err(Error::Shape(format!(
                "crop {} exceeds frame {}x{}",
                spec.crop,
                x1.height(),
                x1.width()
            )));
        }
        let y0 = rng.gen_range(0..=(x1.height() - spec.crop));
        let x0 = rng.gen_range(0..=(x1.width() - spec.crop));
        x1 = crop(&x1, y0, x0, spec.crop);
        xp = crop(&xp, y0, x0, spec.crop);
        x2 = crop(&x2, y0, x0, spec.crop);
    }

    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| Error::Config(format!("bad noise sigma: {e}")))?;
        for f in [&mut x1, &mut xp, &mut x2] {
            for v in f.data_mut().iter_mut() {
                *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
            }
        }
    }

    Ok(TripletSample {
        x1,
        xp,
        x2,
        t1: triplet.t1,
        tp: triplet.tp,
        t2: triplet.t2,
    })
}

/// Samples a triplet, augments it, and retries until every patch of the
/// triplet passes the variance filter (bounded retries; the last draw is
/// returned if the corpus is uniformly smooth).
pub fn sample_training_triplet(
    video: &VideoSequence,
    max_gap: usize,
    spec: &AugmentSpec,
    variance_threshold: f64,
    rng: &mut ChaCha20Rng,
) -> Result<TripletSample> {
    const MAX_TRIES: usize = 50;
    let mut last = None;
    for _ in 0..MAX_TRIES {
        let raw = sample_triplet(video, max_gap, rng)?;
        let aug = augment(&raw, spec, rng)?;
        let ok = patch_variance_ok(&aug.x1, variance_threshold)
            && patch_variance_ok(&aug.xp, variance_threshold)
            && patch_variance_ok(&aug.x2, variance_threshold);
        if ok {
            return Ok(aug);
        }
        last = Some(aug);
    }
    Ok(last.expect("at least one draw"))
}

// ---- synthetic corpus ----

/// Smoothly varying background field in [-1, 1]: bilinear interpolation of a
/// seeded coarse grid with 8-pixel cells.
fn value_noise(size: usize, rng: &mut ChaCha20Rng) -> ndarray::Array2<f64> {
    let cells = size / 8 + 2;
    let grid = ndarray::Array2::from_shape_fn((cells, cells), |_| rng.gen_range(-1.0..1.0));
    ndarray::Array2::from_shape_fn((size, size), |(y, x)| {
        let fy = y as f64 / 8.0;
        let fx = x as f64 / 8.0;
        let (gy, gx) = (fy.floor() as usize, fx.floor() as usize);
        let (ty, tx) = (fy - gy as f64, fx - gx as f64);
        let v00 = grid[(gy, gx)];
        let v01 = grid[(gy, gx + 1)];
        let v10 = grid[(gy + 1, gx)];
        let v11 = grid[(gy + 1, gx + 1)];
        v00 * (1.0 - ty) * (1.0 - tx) + v01 * (1.0 - ty) * tx + v10 * ty * (1.0 - tx) + v11 * ty * tx
    })
}

/// A textured square translating at constant integer velocity over a static
/// textured background, wrapping toroidally. Per-frame positions land in the
/// metadata, so tests can measure motion against exact ground truth.
pub fn generate_synthetic_video(
    n_frames: usize,
    size: usize,
    velocity: (i64, i64),
    seed: u64,
) -> Result<VideoSequence> {
    if size % 8 != 0 || size == 0 {
        return Err(Error::Config(format!("size must be a positive multiple of 8, got {size}")));
    }
    if n_frames == 0 {
        return Err(Error::Config("n_frames must be >= 1".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    // Static background: mid-grey plus smooth noise plus a slight channel tint.
    let field = value_noise(size, &mut rng);
    let tints: [f64; 3] = [
        rng.gen_range(-0.05..0.05),
        rng.gen_range(-0.05..0.05),
        rng.gen_range(-0.05..0.05),
    ];
    let background = Array3::from_shape_fn((3, size, size), |(c, y, x)| {
        (0.3 + 0.25 * field[(y, x)] + tints[c]).clamp(0.0, 1.0)
    });

    // Square texture rides along with the square.
    let side = 3 * size / 8;
    let texture = Array3::from_shape_fn((3, side, side), |_| {
        (0.7f64 + rng.gen_range(-0.25..0.25)).clamp(0.0, 1.0)
    });

    let y_start = rng.gen_range(0..size as i64);
    let x_start = rng.gen_range(0..size as i64);

    let wrap = |v: i64| v.rem_euclid(size as i64);
    let mut frames = Vec::with_capacity(n_frames);
    let mut positions = Vec::with_capacity(n_frames);
    for t in 0..n_frames as i64 {
        let y0 = wrap(y_start + velocity.1 * t);
        let x0 = wrap(x_start + velocity.0 * t);
        positions.push((y0, x0));
        let mut img = background.clone();
        for dy in 0..side {
            let yy = wrap(y0 + dy as i64) as usize;
            for dx in 0..side {
                let xx = wrap(x0 + dx as i64) as usize;
                for c in 0..3 {
                    img[(c, yy, xx)] = texture[(c, dy, dx)];
                }
            }
        }
        frames.push(Frame::new(img)?);
    }
    let timestamps = (0..n_frames as i64).collect();
    let mut video = VideoSequence::new(frames, timestamps)?;
    video.meta = Some(VideoMeta {
        fps: 24,
        velocity,
        square_side: side,
        positions,
    });
    Ok(video)
}

// ---- corpus on disk ----

fn meta_to_text(meta: &VideoMeta) -> String {
    let positions: Vec<String> = meta
        .positions
        .iter()
        .map(|(y, x)| format!("{y}:{x}"))
        .collect();
    format!(
        "fps = {}\nvelocity = {},{}\nsquare_side = {}\npositions = {}\n",
        meta.fps,
        meta.velocity.0,
        meta.velocity.1,
        meta.square_side,
        positions.join(";")
    )
}

fn meta_from_text(text: &str) -> Result<VideoMeta> {
    let mut fps = 24u32;
    let mut velocity = (0i64, 0i64);
    let mut square_side = 0usize;
    let mut positions = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Load(format!("bad metadata line: {line}")))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "fps" => fps = value.parse().map_err(|_| Error::Load(format!("bad fps: {value}")))?,
            "velocity" => {
                let (vx, vy) = value
                    .split_once(',')
                    .ok_or_else(|| Error::Load(format!("bad velocity: {value}")))?;
                velocity = (
                    vx.trim().parse().map_err(|_| Error::Load(format!("bad velocity: {value}")))?,
                    vy.trim().parse().map_err(|_| Error::Load(format!("bad velocity: {value}")))?,
                );
            }
            "square_side" => {
                square_side = value
                    .parse()
                    .map_err(|_| Error::Load(format!("bad square_side: {value}")))?
            }
            "positions" => {
                for pair in value.split(';').filter(|p| !p.is_empty()) {
                    let (y, x) = pair
                        .split_once(':')
                        .ok_or_else(|| Error::Load(format!("bad position: {pair}")))?;
                    positions.push((
                        y.parse().map_err(|_| Error::Load(format!("bad position: {pair}")))?,
                        x.parse().map_err(|_| Error::Load(format!("bad position: {pair}")))?,
                    ));
                }
            }
            _ => return Err(Error::Load(format!("unknown metadata key: {key}"))),
        }
    }
    Ok(VideoMeta {
        fps,
        velocity,
        square_side,
        positions,
    })
}

/// A corpus of moving-square videos with per-video velocities and textures,
/// all derived from one master seed. Velocity components are drawn from
/// [-2, 2] with the static (0, 0) case redrawn, so every video has motion.
pub fn generate_corpus(
    n_videos: usize,
    n_frames: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<VideoSequence>> {
    if n_videos == 0 {
        return Err(Error::Config("n_videos must be >= 1".into()));
    }
    let mut master = ChaCha20Rng::seed_from_u64(seed);
    let mut videos = Vec::with_capacity(n_videos);
    for _ in 0..n_videos {
        let velocity = loop {
            let v = (master.gen_range(-2i64..=2), master.gen_range(-2i64..=2));
            if v != (0, 0) {
                break v;
            }
        };
        let video_seed = master.gen::<u64>();
        videos.push(generate_synthetic_video(n_frames, size, velocity, video_seed)?);
    }
    Ok(videos)
}

/// Writes one video as zero-padded PNG frames plus `metadata.txt`.
pub fn save_video(dir: &Path, video: &VideoSequence) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, frame) in video.frames.iter().enumerate() {
        frame.save_png(&dir.join(format!("frame_{i:04}.png")))?;
    }
    if let Some(meta) = &video.meta {
        std::fs::write(dir.join("metadata.txt"), meta_to_text(meta))?;
    }
    Ok(())
}

/// Reads a video directory written by `save_video`; timestamps are the frame
/// indices in filename order.
pub fn load_video(dir: &Path) -> Result<VideoSequence> {
    let mut frame_paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    frame_paths.sort();
    if frame_paths.is_empty() {
        return Err(Error::Load(format!("no frames in {}", dir.display())));
    }
    let frames: Result<Vec<Frame>> = frame_paths.iter().map(|p| Frame::load_png(p)).collect();
    let frames = frames?;
    let timestamps = (0..frames.len() as i64).collect();
    let mut video = VideoSequence::new(frames, timestamps)?;
    let meta_path = dir.join("metadata.txt");
    if meta_path.exists() {
        video.meta = Some(meta_from_text(&std::fs::read_to_string(meta_path)?)?);
    }
    Ok(video)
}

/// Writes a corpus as `video_000`, `video_001`, ... under `root`.
pub fn save_corpus(root: &Path, videos: &[VideoSequence]) -> Result<()> {
    std::fs::create_dir_all(root)?;
    for (i, v) in videos.iter().enumerate() {
        save_video(&root.join(format!("video_{i:03}")), v)?;
    }
    Ok(())
}

/// Loads every `video_*` directory under `root`, sorted by name.
pub fn load_corpus(root: &Path) -> Result<Vec<VideoSequence>> {
    let mut dirs: Vec<_> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Load(format!("no video directories in {}", root.display())));
    }
    dirs.iter().map(|d| load_video(d)).collect()
}

/// Deterministic holdout split: roughly `holdout_fraction` of videos become
/// the validation set (at least one, corpus permitting).
pub fn split_corpus(
    videos: Vec<VideoSequence>,
    holdout_fraction: f64,
    seed: u64,
) -> (Vec<VideoSequence>, Vec<VideoSequence>) {
    let n = videos.len();
    if n < 2 {
        return (videos, Vec::new());
    }
    let n_hold = ((n as f64 * holdout_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    // Fisher-Yates on the index list.
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let hold: std::collections::HashSet<usize> = order[..n_hold].iter().copied().collect();
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, v) in videos.into_iter().enumerate() {
        if hold.contains(&i) {
            val.push(v);
        } else {
            train.push(v);
        }
    }
    (train, val)
}
